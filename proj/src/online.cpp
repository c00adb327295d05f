#include "tsm/online.hpp"

namespace tsm {

std::size_t StreamState::cache_bytes() const {
  std::size_t b = 0;
  for (const auto& c : caches) b += c.bytes();
  return b;
}

std::size_t StreamState::state_bytes() const {
  return cache_bytes() + running_sum.size() * sizeof(double) + history.size() * sizeof(float) + sizeof(frames_seen);
}

std::size_t expected_cache_bytes(const NetworkSpec& spec, std::size_t batch) {
  const auto shapes = spec.block_input_shapes();
  std::size_t bytes = 0;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    if (!spec.blocks[i].has_shift()) continue;
    bytes += spec.blocks[i].shift.n_fwd * batch * shapes[i].h * shapes[i].w * sizeof(float);
  }
  return bytes;
}

StreamState stream_init(const NetworkSpec& spec, const StreamOptions& options) {
  if (options.batch == 0) throw InvalidShape("stream batch must be positive");
  StreamState st;
  st.spec = spec;
  st.batch = options.batch;
  st.window = options.window;
  for (std::size_t i = 0; i < st.spec.blocks.size(); ++i) {
    auto& b = st.spec.blocks[i];
    if (!b.has_shift() || b.shift.mode == ShiftMode::Unidirectional) continue;
    if (!options.convert_bidirectional) {
      throw InvalidSpec("blocks." + std::to_string(i) +
                        " uses a bidirectional shift, which needs future frames; enable conversion to stream it");
    }
    if (b.shift.n_bwd != 0 || b.shift.padding != Padding::Zero) {
      st.warnings.push_back("blocks." + std::to_string(i) + ": dropped " + std::to_string(b.shift.n_bwd) +
                            " backward-shifted channels for streaming");
    }
    b.shift = b.shift.as_unidirectional();
  }
  const auto shapes = st.spec.block_input_shapes();
  for (std::size_t i = 0; i < st.spec.blocks.size(); ++i) {
    if (!st.spec.blocks[i].has_shift()) continue;
    st.caches.emplace_back(st.batch, st.spec.blocks[i].shift.n_fwd, shapes[i].h, shapes[i].w);
  }
  st.running_sum.assign(st.batch * st.spec.num_classes, 0.0);
  st.history.assign(st.window * st.batch * st.spec.num_classes, 0.0f);
  return st;
}

StepResult stream_step(const Tensor& frame, const WeightStore& w, StreamState& state) {
  const auto& spec = state.spec;
  const auto fs = frame_shape(frame);
  if (fs.n != state.batch || fs.c != spec.input.c || fs.h != spec.input.h || fs.w != spec.input.w) {
    throw InvalidShape("frame " + describe(frame.extents(), frame.labels()) + " does not match stream input (N=" +
                       std::to_string(state.batch) + ", C=" + std::to_string(spec.input.c) + ", H=" +
                       std::to_string(spec.input.h) + ", W=" + std::to_string(spec.input.w) + ")");
  }
  check_weights(spec, w);

  auto h = stem_forward(frame, spec, w);
  std::size_t cache = 0;
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const auto& b = spec.blocks[i];
    const auto p = block_params(w, b, i);
    if (b.has_shift()) {
      const auto shifted = shift_online_step(h, b.shift, state.caches.at(cache++));
      h = block_body(h, shifted, b, p);
    } else {
      h = block_body(h, h, b, p);
    }
  }
  StepResult r{head_forward(h, w), Tensor::zeros({state.batch, spec.num_classes}, kMatrixAxes)};

  const std::size_t k = spec.num_classes;
  const std::size_t row = state.batch * k;
  if (state.window > 0 && state.frames_seen >= state.window) {
    // Oldest entry leaves the window.
    const auto slot = state.frames_seen % state.window;
    for (std::size_t i = 0; i < row; ++i) state.running_sum[i] -= state.history[slot * row + i];
  }
  for (std::size_t i = 0; i < row; ++i) state.running_sum[i] += r.logits[i];
  if (state.window > 0) {
    const auto slot = state.frames_seen % state.window;
    std::copy(r.logits.data().begin(), r.logits.data().end(), state.history.begin() + static_cast<std::ptrdiff_t>(slot * row));
  }
  ++state.frames_seen;
  const std::size_t denom = state.window > 0 ? std::min(state.frames_seen, state.window) : state.frames_seen;
  for (std::size_t i = 0; i < row; ++i) {
    r.consensus[i] = static_cast<float>(state.running_sum[i] / static_cast<double>(denom));
  }
  return r;
}

void stream_reset(StreamState& state) {
  for (auto& c : state.caches) c.reset();
  std::fill(state.running_sum.begin(), state.running_sum.end(), 0.0);
  std::fill(state.history.begin(), state.history.end(), 0.0f);
  state.frames_seen = 0;
}

}  // namespace tsm
