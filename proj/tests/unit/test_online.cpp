#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "tsm/error.hpp"
#include "tsm/online.hpp"

using namespace tsm;

namespace {

NetworkSpec stream_spec(std::size_t shift_blocks, std::size_t frames) {
  NetworkSpec s;
  s.input = {1, 4, 5};
  s.frames = frames;
  s.stem = {1, 4, 3, 1, 1};
  for (std::size_t i = 0; i < 3; ++i) {
    BlockSpec b;
    b.conv1 = {4, 4, 3, 1, 1};
    b.conv2 = {4, 4, 3, 1, 1};
    b.placement = i < shift_blocks ? Placement::Residual : Placement::None;
    b.shift = ShiftSpec{1, 0, Padding::Zero, ShiftMode::Unidirectional};
    s.blocks.push_back(b);
  }
  s.validate();
  return s;
}

Tensor frame_of(const Tensor& clip, std::size_t t) {
  const auto s = activation_shape(clip);
  auto f = make_frame<float>({s.n, s.c, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    const auto src = slice_frame(clip, n, t);
    std::copy(src.data().begin(), src.data().end(), f.data().begin() + static_cast<std::ptrdiff_t>(n * s.frame_size()));
  }
  return f;
}

// Streams every frame and returns (N,T,K) logits plus the last consensus.
std::pair<Tensor, Tensor> run_stream(const Tensor& clip, const WeightStore& w, StreamState& st) {
  const auto s = activation_shape(clip);
  const std::size_t k = st.spec.num_classes;
  auto logits = Tensor::zeros({s.n, s.t, k}, {Axis::N, Axis::T, Axis::C});
  Tensor consensus;
  for (std::size_t t = 0; t < s.t; ++t) {
    auto r = stream_step(frame_of(clip, t), w, st);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < k; ++c) logits[(n * s.t + t) * k + c] = r.logits[n * k + c];
    consensus = r.consensus;
  }
  return {logits, consensus};
}

}  // namespace

TEST_SUITE("online") {

TEST_CASE("init") {
  const auto st = stream_init(stream_spec(3, 4));
  CHECK(st.caches.size() == 3);
  for (const auto& c : st.caches) {
    CHECK(c.frame_counter() == 0);
    for (float v : c.slab()) CHECK(v == 0.0f);
  }
  CHECK(st.frames_seen == 0);
  CHECK(stream_init(stream_spec(0, 4)).caches.empty());

  auto bi = stream_spec(2, 4);
  bi.blocks[0].shift = ShiftSpec{1, 1};
  CHECK_THROWS_AS(stream_init(bi), InvalidSpec);
  const auto converted = stream_init(bi, {.convert_bidirectional = true});
  CHECK(converted.spec.blocks[0].shift == ShiftSpec{1, 0, Padding::Zero, ShiftMode::Unidirectional});
  CHECK(converted.warnings.size() == 1);
}

TEST_CASE("first frame equals offline inference on a clip starting with it") {
  std::mt19937_64 rng(1);
  const auto spec = stream_spec(3, 1);
  const auto w = init_weights(spec, 2);
  const auto clip = oracle::random_activation<float>({2, 1, 1, 4, 5}, rng);
  auto st = stream_init(spec, {.batch = 2});
  const auto r = stream_step(frame_of(clip, 0), w, st);
  const auto off = forward_offline(clip, spec, w);
  CHECK(max_abs_diff(r.logits, off.reshaped({2, spec.num_classes}, kMatrixAxes)) == 0.0);
  CHECK(bit_equal(r.consensus, r.logits));
}

TEST_CASE("streaming equals offline unidirectional inference") {
  std::mt19937_64 rng(2);
  for (std::size_t t : {1u, 2u, 4u, 8u}) {
    for (int i = 0; i < 5; ++i) {
      const auto spec = oracle::random_network(rng, t, 1, 4, true);
      const auto w = init_weights(spec, rng());
      const std::size_t n = oracle::pick(rng, 1, 2);
      const auto clip = oracle::random_activation<float>({n, t, spec.input.c, spec.input.h, spec.input.w}, rng);
      auto st = stream_init(spec, {.batch = n});
      const auto [logits, consensus] = run_stream(clip, w, st);
      const auto off = forward_offline(clip, spec, w);
      CHECK(max_abs_diff(logits, off) <= 1e-5);
      CHECK(max_abs_diff(consensus, consensus_average(logits)) <= 1e-6);
    }
  }
}

TEST_CASE("bidirectional conversion streams the unidirectional network") {
  std::mt19937_64 rng(3);
  auto spec = stream_spec(3, 5);
  for (auto& b : spec.blocks) b.shift = ShiftSpec{1, 1};
  const auto w = init_weights(spec, 4);
  const auto clip = oracle::random_activation<float>({1, 5, 1, 4, 5}, rng);
  auto st = stream_init(spec, {.convert_bidirectional = true});
  const auto logits = run_stream(clip, w, st).first;
  CHECK(max_abs_diff(logits, forward_offline(clip, spec.unidirectional(), w)) <= 1e-5);
}

TEST_CASE("reset") {
  std::mt19937_64 rng(4);
  const auto spec = stream_spec(2, 4);
  const auto w = init_weights(spec, 5);
  const auto a = oracle::random_activation<float>({1, 4, 1, 4, 5}, rng);
  const auto b = oracle::random_activation<float>({1, 4, 1, 4, 5}, rng);

  auto fresh = stream_init(spec);
  const auto before = fresh.state_bytes();
  stream_reset(fresh);
  CHECK(fresh.frames_seen == 0);
  CHECK(fresh.state_bytes() == before);

  auto st = stream_init(spec);
  const auto first = run_stream(a, w, st);
  stream_reset(st);
  const auto replay = run_stream(a, w, st);
  CHECK(bit_equal(first.first, replay.first));
  CHECK(bit_equal(first.second, replay.second));

  // Interleaving two streams through one state contaminates both.
  auto shared = stream_init(spec);
  auto mixed = Tensor::zeros({1, 4, spec.num_classes}, {Axis::N, Axis::T, Axis::C});
  for (std::size_t t = 0; t < 4; ++t) {
    const auto r = stream_step(frame_of(a, t), w, shared);
    stream_step(frame_of(b, t), w, shared);
    for (std::size_t c = 0; c < spec.num_classes; ++c) mixed[t * spec.num_classes + c] = r.logits[c];
  }
  CHECK_FALSE(bit_equal(mixed, first.first));
}

TEST_CASE("state size is fixed and caches are sized exactly") {
  std::mt19937_64 rng(5);
  const auto spec = stream_spec(3, 6);
  const auto w = init_weights(spec, 6);
  auto st = stream_init(spec, {.batch = 2});
  CHECK(st.cache_bytes() == expected_cache_bytes(spec, 2));
  CHECK(st.cache_bytes() == 3 * 1 * 2 * 4 * 5 * sizeof(float));
  const auto bytes = st.state_bytes();
  const auto clip = oracle::random_activation<float>({2, 6, 1, 4, 5}, rng);
  for (std::size_t t = 0; t < 6; ++t) {
    stream_step(frame_of(clip, t), w, st);
    CHECK(st.state_bytes() == bytes);
  }
}

TEST_CASE("windowed consensus") {
  std::mt19937_64 rng(6);
  const auto spec = stream_spec(1, 6);
  const auto w = init_weights(spec, 7);
  const auto clip = oracle::random_activation<float>({1, 6, 1, 4, 5}, rng);
  auto st = stream_init(spec, {.window = 2});
  std::vector<Tensor> logits;
  for (std::size_t t = 0; t < 6; ++t) {
    const auto r = stream_step(frame_of(clip, t), w, st);
    logits.push_back(r.logits);
    if (t == 0) continue;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      const double want = (static_cast<double>(logits[t][c]) + logits[t - 1][c]) / 2;
      CHECK(r.consensus[c] == doctest::Approx(want).epsilon(1e-6));
    }
  }
}

TEST_CASE("stream errors") {
  const auto spec = stream_spec(1, 2);
  const auto w = init_weights(spec, 8);
  auto st = stream_init(spec);
  CHECK_THROWS_AS(stream_step(make_frame<float>({1, 1, 4, 4}), w, st), InvalidShape);
  CHECK_THROWS_AS(stream_step(make_frame<float>({2, 1, 4, 5}), w, st), InvalidShape);
  CHECK_THROWS_AS(stream_init(spec, {.batch = 0}), InvalidShape);
}

TEST_CASE("per-frame compute equals the shift-free network") {
  const auto spec = stream_spec(3, 4);
  CHECK(count_network(spec).macs_per_frame == count_network(spec.with_placement(Placement::None)).macs_per_frame);
}

}  // TEST_SUITE
