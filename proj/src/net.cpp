#include "tsm/net.hpp"

#include <cmath>
#include <random>

#include "tsm/shift_kernel.hpp"

namespace tsm {

std::string to_string(Placement p) {
  switch (p) {
    case Placement::None: return "none";
    case Placement::InPlace: return "inplace";
    case Placement::Residual: return "residual";
  }
  return "?";
}

namespace {

FeatureShape conv_out(const ConvDesc& d, const FeatureShape& in, const std::string& where) {
  if (d.in_channels == 0 || d.out_channels == 0 || d.kernel == 0 || d.stride == 0) {
    throw InvalidSpec(where + ": conv extents must be positive");
  }
  if (d.in_channels != in.c) {
    throw InvalidSpec(where + ": expects " + std::to_string(d.in_channels) + " input channels but receives " +
                      std::to_string(in.c));
  }
  try {
    return output_shape_of(LayerDesc::of(d), in);
  } catch (const InvalidShape& e) {
    throw InvalidSpec(where + ": " + e.what());
  }
}

std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i); }

}  // namespace

void NetworkSpec::validate() const { block_input_shapes(); }

std::vector<FeatureShape> NetworkSpec::block_input_shapes() const {
  if (num_classes < 2) throw InvalidSpec("num_classes must be at least 2");
  if (input.c == 0 || input.h == 0 || input.w == 0 || frames == 0) {
    throw InvalidSpec("input shape and frame count must be positive");
  }
  std::vector<FeatureShape> shapes;
  FeatureShape cur = conv_out(stem, input, "stem");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string where = block_prefix(i);
    shapes.push_back(cur);
    if (b.has_shift()) {
      try {
        b.shift.validate_for(cur.c);
      } catch (const InvalidSpec& e) {
        throw InvalidSpec(where + ": " + e.what());
      }
    }
    const FeatureShape mid = conv_out(b.conv1, cur, where + ".conv1");
    const FeatureShape out = conv_out(b.conv2, mid, where + ".conv2");
    if (b.downsample) {
      if (conv_out(*b.downsample, cur, where + ".downsample") != out) {
        throw InvalidSpec(where + ": downsample output does not match the branch output");
      }
    } else if (b.placement == Placement::Residual && out != cur) {
      throw InvalidSpec(where + ": residual placement changes the shape and has no downsample");
    }
    cur = out;
  }
  return shapes;
}

FeatureShape NetworkSpec::trunk_output_shape() const {
  const auto shapes = block_input_shapes();
  if (blocks.empty()) return conv_out(stem, input, "stem");
  const auto& b = blocks.back();
  return conv_out(b.conv2, conv_out(b.conv1, shapes.back(), "conv1"), "conv2");
}

std::size_t NetworkSpec::shift_block_count() const {
  std::size_t k = 0;
  for (const auto& b : blocks) k += b.has_shift() ? 1 : 0;
  return k;
}

NetworkSpec NetworkSpec::with_placement(Placement p) const {
  NetworkSpec s = *this;
  for (auto& b : s.blocks) b.placement = p;
  return s;
}

NetworkSpec NetworkSpec::unidirectional() const {
  NetworkSpec s = *this;
  for (auto& b : s.blocks) b.shift = b.shift.as_unidirectional();
  return s;
}

std::vector<ParamSlot> parameter_layout(const NetworkSpec& spec) {
  const FeatureShape trunk = spec.trunk_output_shape();
  std::vector<ParamSlot> slots;
  auto conv = [&](const std::string& prefix, const ConvDesc& d) {
    const std::size_t fan_in = d.in_channels * d.kernel * d.kernel;
    slots.push_back({prefix + ".weight", {d.out_channels, d.in_channels, d.kernel, d.kernel}, fan_in});
    slots.push_back({prefix + ".bias", {d.out_channels}, fan_in});
  };
  conv("stem", spec.stem);
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const auto& b = spec.blocks[i];
    conv(block_prefix(i) + ".conv1", b.conv1);
    conv(block_prefix(i) + ".conv2", b.conv2);
    if (b.downsample) conv(block_prefix(i) + ".downsample", *b.downsample);
  }
  slots.push_back({"head.weight", {spec.num_classes, trunk.c}, trunk.c});
  slots.push_back({"head.bias", {spec.num_classes}, trunk.c});
  return slots;
}

namespace {
AxisLabels param_labels(std::size_t rank) {
  switch (rank) {
    case 1: return kVectorAxes;
    case 2: return kMatrixAxes;
    default: return kFrameAxes;
  }
}
}  // namespace

template <typename Scalar>
void check_weights(const NetworkSpec& spec, const BasicWeightStore<Scalar>& w) {
  const auto slots = parameter_layout(spec);
  for (const auto& slot : slots) {
    const auto it = w.find(slot.name);
    if (it == w.end()) throw InvalidSpec("weight '" + slot.name + "' is missing");
    if (it->second.extents() != slot.extents) {
      throw InvalidSpec("weight '" + slot.name + "' has shape " + describe(it->second.extents(), {}) + ", expected " +
                        describe(slot.extents, {}));
    }
  }
  if (w.size() != slots.size()) {
    for (const auto& [name, t] : w) {
      bool known = false;
      for (const auto& slot : slots) known = known || slot.name == name;
      if (!known) throw InvalidSpec("weight '" + name + "' is not part of the network");
    }
  }
}

WeightStore init_weights(const NetworkSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  WeightStore w;
  for (const auto& slot : parameter_layout(spec)) {
    const double bound = std::sqrt(1.0 / static_cast<double>(slot.fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto t = Tensor::zeros(slot.extents, param_labels(slot.extents.size()));
    for (float& v : t.data()) v = static_cast<float>(dist(rng));
    w.emplace(slot.name, std::move(t));
  }
  return w;
}

template <typename Scalar>
BasicConv2dParams<Scalar> conv_params(const BasicWeightStore<Scalar>& w, const std::string& prefix,
                                      const ConvDesc& d) {
  const auto wi = w.find(prefix + ".weight");
  const auto bi = w.find(prefix + ".bias");
  if (wi == w.end() || bi == w.end()) throw InvalidSpec("weights for '" + prefix + "' are missing");
  return {wi->second, bi->second, d.stride, d.padding};
}

template <typename Scalar>
BlockParams<Scalar> block_params(const BasicWeightStore<Scalar>& w, const BlockSpec& b, std::size_t index) {
  const std::string prefix = block_prefix(index);
  BlockParams<Scalar> p{conv_params(w, prefix + ".conv1", b.conv1), conv_params(w, prefix + ".conv2", b.conv2),
                        std::nullopt};
  if (b.downsample) p.downsample = conv_params(w, prefix + ".downsample", *b.downsample);
  return p;
}

template <typename Scalar>
BasicLinearParams<Scalar> head_params(const BasicWeightStore<Scalar>& w) {
  const auto wi = w.find("head.weight");
  const auto bi = w.find("head.bias");
  if (wi == w.end() || bi == w.end()) throw InvalidSpec("head weights are missing");
  return {wi->second, bi->second};
}

template <typename Scalar>
BasicTensor<Scalar> stem_forward(const BasicTensor<Scalar>& frames, const NetworkSpec& spec,
                                 const BasicWeightStore<Scalar>& w) {
  return relu_forward(conv2d_forward(frames, conv_params(w, "stem", spec.stem)));
}

template <typename Scalar>
BasicTensor<Scalar> block_body(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& shifted, const BlockSpec& b,
                               const BlockParams<Scalar>& p) {
  const auto& branch_in = b.placement == Placement::None ? x : shifted;
  auto f = relu_forward(conv2d_forward(relu_forward(conv2d_forward(branch_in, p.conv1)), p.conv2));
  if (b.placement != Placement::Residual) return f;
  if (p.downsample) return add(conv2d_forward(x, *p.downsample), f);
  return add(x, f);
}

template <typename Scalar>
BasicTensor<Scalar> head_forward(const BasicTensor<Scalar>& frames, const BasicWeightStore<Scalar>& w) {
  return linear_forward(global_avg_pool_forward(frames), head_params(w));
}

namespace {

// Shifts an (N*T, C, H, W) frame batch as the (N,T,C,H,W) activation it views.
template <typename Scalar>
BasicTensor<Scalar> shift_frames(const BasicTensor<Scalar>& frames, std::size_t n, std::size_t t,
                                 const ShiftPlan& plan) {
  const auto fs = frame_shape(frames);
  const ActivationShape s{n, t, fs.c, fs.h, fs.w};
  plan.validate_for(s.c);
  auto out = make_frame<Scalar>(fs);
  kernel::shift_into<Scalar>(frames.data(), out.data(), s, plan);
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> block_frames(const BasicTensor<Scalar>& h, std::size_t n, std::size_t t, const BlockSpec& b,
                                 const BlockParams<Scalar>& p, ForwardOptions options) {
  if (!b.has_shift() || options.bypass_shifts) return block_body(h, h, b, p);
  b.shift.validate_for(frame_shape(h).c);
  const auto shifted = shift_frames(h, n, t, ShiftPlan::from(b.shift));
  return block_body(h, shifted, b, p);
}

template <typename Scalar>
ActivationShape check_clip(const BasicTensor<Scalar>& clip, const NetworkSpec& spec) {
  const auto s = activation_shape(clip);
  if (s.c != spec.input.c || s.h != spec.input.h || s.w != spec.input.w || s.t != spec.frames) {
    throw InvalidShape("clip " + describe(clip.extents(), clip.labels()) + " does not match network input (T=" +
                       std::to_string(spec.frames) + ", C=" + std::to_string(spec.input.c) + ", H=" +
                       std::to_string(spec.input.h) + ", W=" + std::to_string(spec.input.w) + ")");
  }
  return s;
}

}  // namespace

template <typename Scalar>
BasicTensor<Scalar> block_forward(const BasicTensor<Scalar>& x, const BlockSpec& b, const BasicWeightStore<Scalar>& w,
                                  std::size_t index, ForwardOptions options) {
  const auto s = activation_shape(x);
  auto y = block_frames(as_frames(x), s.n, s.t, b, block_params(w, b, index), options);
  return as_activation(std::move(y), s.n, s.t);
}

template <typename Scalar>
BasicTensor<Scalar> forward_offline(const BasicTensor<Scalar>& clip, const NetworkSpec& spec,
                                    const BasicWeightStore<Scalar>& w, ForwardOptions options) {
  spec.validate();
  check_weights(spec, w);
  const auto s = check_clip(clip, spec);
  auto h = stem_forward(as_frames(clip), spec, w);
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    h = block_frames(h, s.n, s.t, spec.blocks[i], block_params(w, spec.blocks[i], i), options);
  }
  auto logits = head_forward(h, w);
  return std::move(logits).reshaped({s.n, s.t, spec.num_classes}, {Axis::N, Axis::T, Axis::C});
}

template <typename Scalar>
BasicTensor<Scalar> consensus_average(const BasicTensor<Scalar>& logits) {
  if (logits.rank() != 3) {
    throw InvalidShape("consensus expects (N,T,K) logits, got " + describe(logits.extents(), logits.labels()));
  }
  const std::size_t n = logits.extent(0), t = logits.extent(1), k = logits.extent(2);
  auto out = BasicTensor<Scalar>::zeros({n, k}, kMatrixAxes);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t f = 0; f < t; ++f) acc += static_cast<double>(logits[(b * t + f) * k + c]);
      out[b * k + c] = static_cast<Scalar>(acc / static_cast<double>(t));
    }
  }
  return out;
}

namespace {

template <typename Scalar>
struct BlockTape {
  BasicTensor<Scalar> x;        // block input
  BasicTensor<Scalar> shifted;  // branch input when it differs from x
  BasicTensor<Scalar> a1, h1, a2;
  bool has_shifted = false;
  const BasicTensor<Scalar>& branch_in() const { return has_shifted ? shifted : x; }
};

template <typename Scalar>
void accumulate(BasicWeightStore<Scalar>& grads, const std::string& prefix, ParamGrads<Scalar>&& g) {
  grads.at(prefix + ".weight") = std::move(g.grad_w);
  grads.at(prefix + ".bias") = std::move(g.grad_b);
}

}  // namespace

template <typename Scalar>
LossAndGradients<Scalar> loss_and_gradients(const BasicTensor<Scalar>& clips, std::span<const std::size_t> labels,
                                            const NetworkSpec& spec, const BasicWeightStore<Scalar>& w) {
  spec.validate();
  check_weights(spec, w);
  const auto s = check_clip(clips, spec);
  if (labels.size() != s.n) throw InvalidShape("one label per clip is required");
  const std::size_t k = spec.num_classes;

  // Forward with a tape of every intermediate the backward pass needs.
  const auto frames = as_frames(clips);
  const auto stem_p = conv_params(w, "stem", spec.stem);
  const auto stem_pre = conv2d_forward(frames, stem_p);
  auto h = relu_forward(stem_pre);
  std::vector<BlockTape<Scalar>> tape;
  std::vector<BlockParams<Scalar>> params;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const auto& b = spec.blocks[i];
    params.push_back(block_params(w, b, i));
    const auto& p = params.back();
    BlockTape<Scalar> bt;
    bt.x = std::move(h);
    if (b.has_shift()) {
      bt.shifted = shift_frames(bt.x, s.n, s.t, ShiftPlan::from(b.shift));
      bt.has_shifted = true;
    }
    bt.a1 = conv2d_forward(bt.branch_in(), p.conv1);
    bt.h1 = relu_forward(bt.a1);
    bt.a2 = conv2d_forward(bt.h1, p.conv2);
    auto f = relu_forward(bt.a2);
    if (b.placement == Placement::Residual) {
      h = p.downsample ? add(conv2d_forward(bt.x, *p.downsample), f) : add(bt.x, f);
    } else {
      h = std::move(f);
    }
    tape.push_back(std::move(bt));
  }
  const auto pooled = global_avg_pool_forward(h);
  const auto head_p = head_params(w);
  const auto logits = linear_forward(pooled, head_p);
  const auto consensus =
      consensus_average(logits.reshaped({s.n, s.t, k}, {Axis::N, Axis::T, Axis::C}));

  LossAndGradients<Scalar> r;
  r.consensus = consensus;
  for (const auto& [name, t] : w) r.grads.emplace(name, BasicTensor<Scalar>::zeros(t.extents(), t.labels()));

  auto grad_logits = BasicTensor<Scalar>::zeros(logits.extents(), logits.labels());
  const double inv_batch = 1.0 / static_cast<double>(s.n);
  const double inv_frames = 1.0 / static_cast<double>(s.t);
  for (std::size_t n = 0; n < s.n; ++n) {
    const auto ce = softmax_cross_entropy<Scalar>(consensus.data().subspan(n * k, k), labels[n]);
    r.loss += static_cast<double>(ce.loss) * inv_batch;
    for (std::size_t t = 0; t < s.t; ++t) {
      for (std::size_t c = 0; c < k; ++c) {
        grad_logits[(n * s.t + t) * k + c] =
            static_cast<Scalar>(static_cast<double>(ce.grad_logits[c]) * inv_batch * inv_frames);
      }
    }
  }

  auto head_g = linear_backward(pooled, head_p, grad_logits);
  accumulate(r.grads, "head", std::move(head_g));
  auto grad_h = global_avg_pool_backward(head_g.grad_x, frame_shape(h));

  for (std::size_t i = spec.blocks.size(); i-- > 0;) {
    const auto& b = spec.blocks[i];
    const auto& p = params[i];
    const auto& bt = tape[i];
    const std::string prefix = block_prefix(i);

    auto g_a2 = relu_backward(bt.a2, grad_h);
    auto c2 = conv2d_backward(bt.h1, p.conv2, g_a2);
    auto g_a1 = relu_backward(bt.a1, c2.grad_x);
    accumulate(r.grads, prefix + ".conv2", std::move(c2));
    auto c1 = conv2d_backward(bt.branch_in(), p.conv1, g_a1);
    BasicTensor<Scalar> g_x =
        bt.has_shifted ? shift_frames(c1.grad_x, s.n, s.t, ShiftPlan::from(b.shift).reversed()) : std::move(c1.grad_x);
    accumulate(r.grads, prefix + ".conv1", std::move(c1));
    if (b.placement == Placement::Residual) {
      if (p.downsample) {
        auto ds = conv2d_backward(bt.x, *p.downsample, grad_h);
        g_x = add(g_x, ds.grad_x);
        accumulate(r.grads, prefix + ".downsample", std::move(ds));
      } else {
        g_x = add(g_x, grad_h);
      }
    }
    grad_h = std::move(g_x);
  }

  auto stem_g = conv2d_backward(frames, stem_p, relu_backward(stem_pre, grad_h));
  accumulate(r.grads, "stem", std::move(stem_g));
  return r;
}

std::vector<std::pair<LayerDesc, FeatureShape>> enumerate_layers(const NetworkSpec& spec) {
  const auto shapes = spec.block_input_shapes();
  std::vector<std::pair<LayerDesc, FeatureShape>> layers;
  auto push = [&](const LayerDesc& d, const FeatureShape& in) {
    layers.emplace_back(d, in);
    return output_shape_of(d, in);
  };
  FeatureShape cur = push(LayerDesc::of(spec.stem), spec.input);
  cur = push(LayerDesc::relu(), cur);
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const auto& b = spec.blocks[i];
    const FeatureShape in = cur;
    if (b.has_shift()) push(LayerDesc::of(b.shift), in);
    cur = push(LayerDesc::of(b.conv1), in);
    cur = push(LayerDesc::relu(), cur);
    cur = push(LayerDesc::of(b.conv2), cur);
    cur = push(LayerDesc::relu(), cur);
    if (b.downsample) push(LayerDesc::of(*b.downsample), in);
    if (b.placement == Placement::Residual) push(LayerDesc::residual_add(), cur);
  }
  cur = push(LayerDesc::pool(), cur);
  push(LayerDesc::of(LinearDesc{cur.c, spec.num_classes}), cur);
  return layers;
}

NetworkCost count_network(const NetworkSpec& spec) {
  NetworkCost cost;
  for (const auto& [layer, in] : enumerate_layers(spec)) {
    cost.macs_per_frame += macs_of(layer, in);
    cost.params += params_of(layer);
  }
  return cost;
}

#define TSM_INSTANTIATE_NET(S)                                                                                  \
  template void check_weights(const NetworkSpec&, const BasicWeightStore<S>&);                                  \
  template BasicConv2dParams<S> conv_params(const BasicWeightStore<S>&, const std::string&, const ConvDesc&);   \
  template BlockParams<S> block_params(const BasicWeightStore<S>&, const BlockSpec&, std::size_t);              \
  template BasicLinearParams<S> head_params(const BasicWeightStore<S>&);                                        \
  template BasicTensor<S> stem_forward(const BasicTensor<S>&, const NetworkSpec&, const BasicWeightStore<S>&);  \
  template BasicTensor<S> block_body(const BasicTensor<S>&, const BasicTensor<S>&, const BlockSpec&,            \
                                     const BlockParams<S>&);                                                    \
  template BasicTensor<S> head_forward(const BasicTensor<S>&, const BasicWeightStore<S>&);                      \
  template BasicTensor<S> block_forward(const BasicTensor<S>&, const BlockSpec&, const BasicWeightStore<S>&,    \
                                        std::size_t, ForwardOptions);                                           \
  template BasicTensor<S> forward_offline(const BasicTensor<S>&, const NetworkSpec&, const BasicWeightStore<S>&, \
                                          ForwardOptions);                                                      \
  template BasicTensor<S> consensus_average(const BasicTensor<S>&);                                             \
  template LossAndGradients<S> loss_and_gradients(const BasicTensor<S>&, std::span<const std::size_t>,          \
                                                  const NetworkSpec&, const BasicWeightStore<S>&);

TSM_INSTANTIATE_NET(float)
TSM_INSTANTIATE_NET(double)

#undef TSM_INSTANTIATE_NET

}  // namespace tsm
