#include "tsm/layers.hpp"

#include <string>

#include "tsm/nn_ops.hpp"

namespace tsm {

namespace {
[[noreturn]] void unknown_kind(LayerKind k) {
  throw InvalidSpec("unknown layer kind " + std::to_string(static_cast<int>(k)));
}
}  // namespace

FeatureShape output_shape_of(const LayerDesc& layer, const FeatureShape& input) {
  switch (layer.kind) {
    case LayerKind::Conv: {
      const auto& c = layer.conv;
      if (input.c != c.in_channels) {
        throw InvalidShape("conv expects " + std::to_string(c.in_channels) + " channels, got " +
                           std::to_string(input.c));
      }
      return {c.out_channels, conv_output_extent(input.h, c.kernel, c.stride, c.padding),
              conv_output_extent(input.w, c.kernel, c.stride, c.padding)};
    }
    case LayerKind::Linear: {
      const std::size_t features = input.c * input.h * input.w;
      if (features != layer.linear.in_features) {
        throw InvalidShape("linear expects " + std::to_string(layer.linear.in_features) + " features, got " +
                           std::to_string(features));
      }
      return {layer.linear.out_features, 1, 1};
    }
    case LayerKind::Shift:
      layer.shift.validate_for(input.c);
      return input;
    case LayerKind::Relu:
    case LayerKind::Add:
      return input;
    case LayerKind::Pool:
      return {input.c, 1, 1};
  }
  unknown_kind(layer.kind);
}

std::uint64_t macs_of(const LayerDesc& layer, const FeatureShape& input) {
  switch (layer.kind) {
    case LayerKind::Conv: {
      const auto out = output_shape_of(layer, input);
      const auto& c = layer.conv;
      return std::uint64_t{c.out_channels} * c.in_channels * c.kernel * c.kernel * out.h * out.w;
    }
    case LayerKind::Linear:
      output_shape_of(layer, input);
      return std::uint64_t{layer.linear.out_features} * layer.linear.in_features;
    case LayerKind::Shift:
      layer.shift.validate_for(input.c);
      return 0;
    case LayerKind::Relu:
    case LayerKind::Pool:
    case LayerKind::Add:
      return 0;
  }
  unknown_kind(layer.kind);
}

std::uint64_t params_of(const LayerDesc& layer) {
  switch (layer.kind) {
    case LayerKind::Conv: {
      const auto& c = layer.conv;
      return std::uint64_t{c.out_channels} * c.in_channels * c.kernel * c.kernel + c.out_channels;
    }
    case LayerKind::Linear:
      return std::uint64_t{layer.linear.out_features} * layer.linear.in_features + layer.linear.out_features;
    case LayerKind::Shift:
    case LayerKind::Relu:
    case LayerKind::Pool:
    case LayerKind::Add:
      return 0;
  }
  unknown_kind(layer.kind);
}

}  // namespace tsm
