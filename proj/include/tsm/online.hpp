#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tsm/net.hpp"
#include "tsm/shift.hpp"

namespace tsm {

struct StreamOptions {
  std::size_t batch = 1;
  // Convert bidirectional shifts by keeping n_fwd and dropping n_bwd. When
  // false, a bidirectional shift makes stream_init throw InvalidSpec.
  bool convert_bidirectional = false;
  // Running consensus over the last `window` frames; 0 averages every frame seen.
  std::size_t window = 0;
};

// Per-stream state: one cache per shift-bearing block plus the running consensus.
struct StreamState {
  NetworkSpec spec;                // unidirectional form of the network being streamed
  std::vector<ShiftCache> caches;  // in block order, shift-bearing blocks only
  std::vector<double> running_sum; // (N, K)
  std::size_t frames_seen = 0;
  std::size_t batch = 1;
  std::size_t window = 0;
  std::vector<float> history;      // ring of the last `window` per-frame logits
  std::vector<std::string> warnings;

  std::size_t cache_bytes() const;
  // Bytes held by the state; constant over the life of a stream.
  std::size_t state_bytes() const;
};

StreamState stream_init(const NetworkSpec& spec, const StreamOptions& options = {});

struct StepResult {
  Tensor logits;     // (N, K) for this frame
  Tensor consensus;  // (N, K) running mean
};

// Runs the network on one (N,C,H,W) frame.
StepResult stream_step(const Tensor& frame, const WeightStore& w, StreamState& state);

void stream_reset(StreamState& state);

// Sum over shift layers of n_fwd * N * H * W * 4 bytes.
std::size_t expected_cache_bytes(const NetworkSpec& spec, std::size_t batch);

}  // namespace tsm
