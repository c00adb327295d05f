#pragma once

#include <cstddef>
#include <cstdint>

#include "tsm/shift.hpp"

namespace tsm {

// Shape-only descriptions of layers; weights live elsewhere.
struct ConvDesc {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  friend bool operator==(const ConvDesc&, const ConvDesc&) = default;
};

struct LinearDesc {
  std::size_t in_features = 1;
  std::size_t out_features = 1;
  friend bool operator==(const LinearDesc&, const LinearDesc&) = default;
};

// Per-frame feature map shape.
struct FeatureShape {
  std::size_t c = 1, h = 1, w = 1;
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

enum class LayerKind : std::uint8_t { Conv, Linear, Shift, Relu, Pool, Add };

struct LayerDesc {
  LayerKind kind = LayerKind::Relu;
  ConvDesc conv{};
  LinearDesc linear{};
  ShiftSpec shift{};

  static LayerDesc of(const ConvDesc& c) { return {LayerKind::Conv, c, {}, {}}; }
  static LayerDesc of(const LinearDesc& l) { return {LayerKind::Linear, {}, l, {}}; }
  static LayerDesc of(const ShiftSpec& s) { return {LayerKind::Shift, {}, {}, s}; }
  static LayerDesc relu() { return {LayerKind::Relu, {}, {}, {}}; }
  static LayerDesc pool() { return {LayerKind::Pool, {}, {}, {}}; }
  static LayerDesc residual_add() { return {LayerKind::Add, {}, {}, {}}; }
};

// Output shape of one frame through the layer; throws InvalidShape on mismatch.
FeatureShape output_shape_of(const LayerDesc& layer, const FeatureShape& input);

// Multiply-accumulates per frame: conv C_out*C_in*K^2*H_out*W_out, linear out*in,
// everything else 0. Throws InvalidSpec for an unknown kind.
std::uint64_t macs_of(const LayerDesc& layer, const FeatureShape& input);

// Learnable parameters: conv C_out*C_in*K^2 + C_out, linear out*in + out, others 0.
std::uint64_t params_of(const LayerDesc& layer);

}  // namespace tsm
