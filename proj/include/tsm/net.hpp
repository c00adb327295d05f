#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsm/layers.hpp"
#include "tsm/nn_ops.hpp"
#include "tsm/shift.hpp"
#include "tsm/tensor.hpp"

namespace tsm {

// Where a block applies its temporal shift:
//   None:     y = F(x)
//   InPlace:  y = F(shift(x))
//   Residual: y = skip(x) + F(shift(x))
// with F = relu(conv2(relu(conv1(.)))) applied frame by frame, and the shift
// placed before conv1.
enum class Placement : std::uint8_t { None, InPlace, Residual };

std::string to_string(Placement p);

struct BlockSpec {
  ConvDesc conv1{};
  ConvDesc conv2{};
  Placement placement = Placement::None;
  ShiftSpec shift{};
  // Projection for the skip path when the branch changes the shape. Its
  // weights are part of the network whenever present; only Residual uses it.
  std::optional<ConvDesc> downsample;

  bool has_shift() const noexcept { return placement != Placement::None; }
  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct NetworkSpec {
  FeatureShape input{};
  std::size_t frames = 1;
  ConvDesc stem{};
  std::vector<BlockSpec> blocks;
  std::size_t num_classes = 2;

  // Throws InvalidSpec unless consecutive shapes compose and every block is well formed.
  void validate() const;
  // Input feature shape of each block (after the stem and all earlier blocks).
  std::vector<FeatureShape> block_input_shapes() const;
  FeatureShape trunk_output_shape() const;
  std::size_t shift_block_count() const;

  // Copy with every placement replaced.
  NetworkSpec with_placement(Placement p) const;
  // Copy with every shift converted to its unidirectional form.
  NetworkSpec unidirectional() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

template <typename Scalar>
using BasicWeightStore = std::map<std::string, BasicTensor<Scalar>>;
using WeightStore = BasicWeightStore<float>;

struct ParamSlot {
  std::string name;
  Extents extents;
  std::size_t fan_in;
};

// Names and shapes of every parameter tensor, in a fixed order:
// stem.{weight,bias}, blocks.<i>.{conv1,conv2,downsample}.{weight,bias}, head.{weight,bias}.
std::vector<ParamSlot> parameter_layout(const NetworkSpec& spec);

// Throws InvalidSpec when a parameter is missing, misshapen, or unexpected.
template <typename Scalar>
void check_weights(const NetworkSpec& spec, const BasicWeightStore<Scalar>& w);

// Uniform in +-sqrt(1/fan_in), deterministic for a given seed.
WeightStore init_weights(const NetworkSpec& spec, std::uint64_t seed);

template <typename To, typename From>
BasicWeightStore<To> weights_cast(const BasicWeightStore<From>& w) {
  BasicWeightStore<To> out;
  for (const auto& [name, t] : w) out.emplace(name, tensor_cast<To>(t));
  return out;
}

template <typename Scalar>
struct BlockParams {
  BasicConv2dParams<Scalar> conv1;
  BasicConv2dParams<Scalar> conv2;
  std::optional<BasicConv2dParams<Scalar>> downsample;
};

template <typename Scalar>
BasicConv2dParams<Scalar> conv_params(const BasicWeightStore<Scalar>& w, const std::string& prefix,
                                      const ConvDesc& d);
template <typename Scalar>
BlockParams<Scalar> block_params(const BasicWeightStore<Scalar>& w, const BlockSpec& b, std::size_t index);
template <typename Scalar>
BasicLinearParams<Scalar> head_params(const BasicWeightStore<Scalar>& w);

// Frame-wise pieces shared by the offline and streaming paths. Inputs are
// (N,C,H,W) frame batches.
template <typename Scalar>
BasicTensor<Scalar> stem_forward(const BasicTensor<Scalar>& frames, const NetworkSpec& spec,
                                 const BasicWeightStore<Scalar>& w);
// `x` is the block input, `shifted` the temporally shifted input (ignored for
// placement None).
template <typename Scalar>
BasicTensor<Scalar> block_body(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& shifted, const BlockSpec& b,
                               const BlockParams<Scalar>& p);
// Global average pool and linear head: (N,C,H,W) -> (N, classes).
template <typename Scalar>
BasicTensor<Scalar> head_forward(const BasicTensor<Scalar>& frames, const BasicWeightStore<Scalar>& w);

struct ForwardOptions {
  // Skip the shift operator entirely while keeping the block topology; the
  // shift-free reference for a TSM network.
  bool bypass_shifts = false;
};

// One block over an (N,T,C,H,W) activation with the offline shift.
template <typename Scalar>
BasicTensor<Scalar> block_forward(const BasicTensor<Scalar>& x, const BlockSpec& b, const BasicWeightStore<Scalar>& w,
                                  std::size_t index, ForwardOptions options = {});

// Per-frame logits (N, T, classes), tagged (N,T,C).
template <typename Scalar>
BasicTensor<Scalar> forward_offline(const BasicTensor<Scalar>& clip, const NetworkSpec& spec,
                                    const BasicWeightStore<Scalar>& w, ForwardOptions options = {});

// Mean over T: (N,T,K) -> (N,K).
template <typename Scalar>
BasicTensor<Scalar> consensus_average(const BasicTensor<Scalar>& logits);

template <typename Scalar>
struct LossAndGradients {
  double loss = 0.0;                // mean cross-entropy over the batch
  BasicTensor<Scalar> consensus;    // (N, K)
  BasicWeightStore<Scalar> grads;   // same keys as the weights
};

// Cross-entropy of consensus-averaged logits and its gradient w.r.t. every
// parameter. The shift is back-propagated through its adjoint.
template <typename Scalar>
LossAndGradients<Scalar> loss_and_gradients(const BasicTensor<Scalar>& clips, std::span<const std::size_t> labels,
                                            const NetworkSpec& spec, const BasicWeightStore<Scalar>& w);

struct NetworkCost {
  std::uint64_t macs_per_frame = 0;
  std::uint64_t params = 0;
  friend bool operator==(const NetworkCost&, const NetworkCost&) = default;
};

// Every layer in execution order with the feature shape it consumes.
std::vector<std::pair<LayerDesc, FeatureShape>> enumerate_layers(const NetworkSpec& spec);
NetworkCost count_network(const NetworkSpec& spec);

// Weight file layout (little-endian): "TSMW" | u8 version (1) | u32 count | per
// entry: u16 name length, UTF-8 name, u8 rank, rank x u64 extent, f32 data.
std::vector<std::uint8_t> encode_weights(const WeightStore& w);
WeightStore decode_weights(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");
void save_weights(const WeightStore& w, const std::filesystem::path& path);
WeightStore load_weights(const std::filesystem::path& path);

// JSON model description. Syntax errors and unknown keys raise FormatError,
// inconsistent shapes raise InvalidSpec.
NetworkSpec parse_spec(const std::string& json_text, const std::string& source = "<memory>");
std::string spec_to_json(const NetworkSpec& spec);
NetworkSpec load_spec(const std::filesystem::path& path);
void save_spec(const NetworkSpec& spec, const std::filesystem::path& path);

}  // namespace tsm
