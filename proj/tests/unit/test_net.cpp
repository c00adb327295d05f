#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "tsm/error.hpp"
#include "tsm/net.hpp"

using namespace tsm;

namespace {

NetworkSpec small_spec(Placement p, ShiftSpec shift = ShiftSpec{1, 1}, std::size_t frames = 4) {
  NetworkSpec s;
  s.input = {2, 5, 4};
  s.frames = frames;
  s.stem = {2, 4, 3, 1, 1};
  for (int i = 0; i < 2; ++i) {
    BlockSpec b;
    b.conv1 = {4, 4, 3, 1, 1};
    b.conv2 = {4, 4, 3, 1, 1};
    b.placement = p;
    b.shift = shift;
    s.blocks.push_back(b);
  }
  s.num_classes = 3;
  s.validate();
  return s;
}

Tensor random_clip(const NetworkSpec& s, std::size_t n, std::mt19937_64& rng) {
  return oracle::random_activation<float>({n, s.frames, s.input.c, s.input.h, s.input.w}, rng);
}

Tensor frame_logits(const Tensor& logits, std::size_t t) {
  const std::size_t n = logits.extent(0), tt = logits.extent(1), k = logits.extent(2);
  auto out = Tensor::zeros({n, k}, kMatrixAxes);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) out[i * k + c] = logits[(i * tt + t) * k + c];
  return out;
}

}  // namespace

TEST_SUITE("net") {

TEST_CASE("spec validation") {
  auto s = small_spec(Placement::Residual);
  s.blocks[1].conv1.in_channels = 3;
  CHECK_THROWS_AS(s.validate(), InvalidSpec);

  s = small_spec(Placement::Residual);
  s.blocks[0].conv2.out_channels = 6;
  s.blocks[1].conv1.in_channels = 6;
  s.blocks[1].shift = ShiftSpec{1, 1};
  CHECK_THROWS_AS(s.validate(), InvalidSpec);  // residual shape change without downsample
  s.blocks[0].downsample = ConvDesc{4, 6, 1, 1, 0};
  CHECK_THROWS_AS(s.validate(), InvalidSpec);  // block 1 maps 6 channels back to 4
  s.blocks[1].downsample = ConvDesc{6, 4, 1, 1, 0};
  CHECK_NOTHROW(s.validate());

  CHECK_THROWS_AS(small_spec(Placement::InPlace, ShiftSpec{3, 2}), InvalidSpec);  // shift wider than the input

  s = small_spec(Placement::None);
  s.num_classes = 1;
  CHECK_THROWS_AS(s.validate(), InvalidSpec);
}

TEST_CASE("residual block with an identity shift is skip plus branch") {
  std::mt19937_64 rng(1);
  const auto spec = small_spec(Placement::Residual, ShiftSpec{});
  const auto w = init_weights(spec, 7);
  const auto x = oracle::random_activation<float>({2, 4, 4, 5, 4}, rng);
  const auto plain = block_forward(x, [&] { auto b = spec.blocks[0]; b.placement = Placement::None; return b; }(), w, 0);
  CHECK(bit_equal(block_forward(x, spec.blocks[0], w, 0), add(x, plain)));
}

TEST_CASE("residual block with a zero branch preserves the input") {
  std::mt19937_64 rng(2);
  const auto spec = small_spec(Placement::Residual);
  auto w = init_weights(spec, 7);
  for (const char* name : {"blocks.0.conv1.weight", "blocks.0.conv1.bias", "blocks.0.conv2.weight", "blocks.0.conv2.bias"}) {
    for (auto& v : w.at(name).data()) v = 0.0f;
  }
  const auto x = oracle::random_activation<float>({1, 4, 4, 5, 4}, rng);
  CHECK(bit_equal(block_forward(x, spec.blocks[0], w, 0), x));
}

TEST_CASE("block matches a hand-composed pipeline") {
  std::mt19937_64 rng(3);
  for (auto placement : {Placement::None, Placement::InPlace, Placement::Residual}) {
    const auto spec = small_spec(placement);
    const auto w = init_weights(spec, 11);
    const auto x = oracle::random_activation<float>({2, 4, 4, 5, 4}, rng);
    const auto b = spec.blocks[0];
    const Conv2dParams c1{w.at("blocks.0.conv1.weight"), w.at("blocks.0.conv1.bias"), 1, 1};
    const Conv2dParams c2{w.at("blocks.0.conv2.weight"), w.at("blocks.0.conv2.bias"), 1, 1};
    const auto in = placement == Placement::None ? x : shift_offline(x, b.shift);
    const auto f = relu_forward(conv2d_forward(relu_forward(conv2d_forward(as_frames(in), c1)), c2));
    auto want = as_activation(f, 2, 4);
    if (placement == Placement::Residual) want = add(x, want);
    CHECK(bit_equal(block_forward(x, b, w, 0), want));
  }
}

TEST_CASE("single-frame clip") {
  std::mt19937_64 rng(4);
  const auto spec = small_spec(Placement::Residual, ShiftSpec{1, 1}, 1);
  const auto w = init_weights(spec, 3);
  const auto clip = random_clip(spec, 2, rng);
  const auto a = forward_offline(clip, spec, w);
  CHECK(a.extents() == Extents{2, 1, 3});
  for (float v : a.data()) CHECK(std::isfinite(v));
  CHECK(bit_equal(a, forward_offline(clip, spec, w)));
  // With T=1 every shifted channel reads padding, so the shifted stream equals a zeroed-channel input.
  CHECK_THROWS_AS(forward_offline(random_clip(small_spec(Placement::None), 1, rng), spec, w), InvalidShape);
}

TEST_CASE("shift-free network treats frames independently") {
  std::mt19937_64 rng(5);
  const auto spec = small_spec(Placement::None);
  const auto w = init_weights(spec, 5);
  auto clip = random_clip(spec, 1, rng);
  const auto base = forward_offline(clip, spec, w);
  for (std::size_t t = 0; t < 4; ++t) {
    auto p = clip;
    for (std::size_t i = 0; i < spec.input.c * spec.input.h * spec.input.w; ++i) {
      p[t * spec.input.c * spec.input.h * spec.input.w + i] += 0.5f;
    }
    const auto out = forward_offline(p, spec, w);
    for (std::size_t u = 0; u < 4; ++u) {
      if (u != t) CHECK(bit_equal(frame_logits(out, u), frame_logits(base, u)));
    }
  }
}

TEST_CASE("shifted network mixes frames within its receptive field") {
  std::mt19937_64 rng(6);
  for (auto placement : {Placement::InPlace, Placement::Residual}) {
    // Two shift layers: frame t sees frames t-2 .. t+2.
    const auto spec = small_spec(placement, ShiftSpec{1, 1}, 6);
    const auto w = init_weights(spec, 6);
    auto clip = random_clip(spec, 1, rng);
    const auto base = forward_offline(clip, spec, w);
    const std::size_t frame = spec.input.c * spec.input.h * spec.input.w;
    for (std::size_t t = 0; t < 6; ++t) {
      auto p = clip;
      for (std::size_t i = 0; i < frame; ++i) p[t * frame + i] += 1.0f;
      const auto out = forward_offline(p, spec, w);
      bool other_changed = false;
      for (std::size_t u = 0; u < 6; ++u) {
        const bool same = bit_equal(frame_logits(out, u), frame_logits(base, u));
        const std::size_t dist = u > t ? u - t : t - u;
        if (dist > 2) CHECK(same);
        if (u != t && !same) other_changed = true;
      }
      CHECK(other_changed);
    }
  }
}

TEST_CASE("zero-width shifts match the shift-free network") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10; ++i) {
    auto spec = oracle::random_network(rng, oracle::pick(rng, 1, 5));
    for (auto& b : spec.blocks) b.shift = ShiftSpec{};
    const auto w = init_weights(spec, static_cast<std::uint64_t>(i));
    const auto clip = random_clip(spec, 2, rng);
    CHECK(bit_equal(forward_offline(clip, spec, w), forward_offline(clip, spec, w, {.bypass_shifts = true})));
  }
}

TEST_CASE("consensus") {
  const auto l = Tensor::from_data({1, 2, 2}, {Axis::N, Axis::T, Axis::C}, {1, 3, 3, 1});
  const auto c = consensus_average(l);
  CHECK(c.extents() == Extents{1, 2});
  CHECK(c[0] == 2.0f);
  CHECK(c[1] == 2.0f);

  std::mt19937_64 rng(8);
  auto one = Tensor::zeros({3, 1, 4}, {Axis::N, Axis::T, Axis::C});
  oracle::fill_uniform(one, rng);
  CHECK(bit_equal(consensus_average(one), one.reshaped({3, 4}, kMatrixAxes)));

  auto many = Tensor::zeros({2, 5, 3}, {Axis::N, Axis::T, Axis::C});
  oracle::fill_uniform(many, rng);
  auto rev = many;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t k = 0; k < 3; ++k) rev[(n * 5 + t) * 3 + k] = many[(n * 5 + 4 - t) * 3 + k];
  CHECK(bit_equal(consensus_average(rev), consensus_average(many)));
}

TEST_CASE("weights") {
  const auto spec = small_spec(Placement::Residual);
  const auto w = init_weights(spec, 9);
  CHECK(w == init_weights(spec, 9));
  CHECK_FALSE(w == init_weights(spec, 10));
  for (const auto& slot : parameter_layout(spec)) {
    const double bound = std::sqrt(1.0 / static_cast<double>(slot.fan_in));
    for (float v : w.at(slot.name).data()) CHECK(std::abs(v) <= bound);
  }
  CHECK(w.count("stem.weight") == 1);
  CHECK(w.count("blocks.1.conv2.bias") == 1);
  CHECK(w.count("head.weight") == 1);

  const auto bytes = encode_weights(w);
  const auto back = decode_weights(bytes);
  CHECK(back.size() == w.size());
  for (const auto& [name, t] : w) {
    CHECK(bit_equal(back.at(name), t));
    CHECK(back.at(name).labels() == t.labels());
  }
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(decode_weights(std::span(bytes).first(cut)), FormatError);
  }
  auto bad = bytes;
  bad[4] = 7;
  CHECK_THROWS_AS(decode_weights(bad), FormatError);

  auto missing = w;
  missing.erase("blocks.0.conv1.bias");
  CHECK_THROWS_AS(check_weights(spec, missing), InvalidSpec);
  std::mt19937_64 rng(9);
  CHECK_THROWS_AS(forward_offline(random_clip(spec, 1, rng), spec, missing), InvalidSpec);
  auto extra = w;
  extra.emplace("blocks.7.conv1.weight", Tensor::zeros({1}, kVectorAxes));
  CHECK_THROWS_AS(check_weights(spec, extra), InvalidSpec);
  auto misshapen = w;
  misshapen.at("head.bias") = Tensor::zeros({4}, kVectorAxes);
  CHECK_THROWS_AS(check_weights(spec, misshapen), InvalidSpec);
}

TEST_CASE("spec JSON") {
  const std::string text = R"({
    "input": {"c": 2, "h": 5, "w": 4, "t": 4},
    "stem": {"in": 2, "out": 4, "kernel": 3, "stride": 1, "padding": 1},
    "blocks": [
      {"conv1": {"out": 4}, "conv2": {"out": 6}, "placement": "residual",
       "shift": {"n_fwd": 1, "n_bwd": 1, "padding": "zero", "mode": "bi"},
       "downsample": {"out": 6}},
      {"conv1": {"out": 6}, "conv2": {"out": 6}, "placement": "inplace",
       "shift": {"n_fwd": 2, "n_bwd": 0, "padding": "zero", "mode": "uni"}}
    ],
    "head": {"classes": 3}
  })";
  const auto spec = parse_spec(text);
  CHECK(spec.frames == 4);
  CHECK(spec.blocks.size() == 2);
  CHECK(spec.blocks[0].placement == Placement::Residual);
  CHECK(spec.blocks[0].downsample->kernel == 1);
  CHECK(spec.blocks[0].downsample->in_channels == 4);
  CHECK(spec.blocks[1].shift.mode == ShiftMode::Unidirectional);
  CHECK(spec.num_classes == 3);

  const auto again = parse_spec(spec_to_json(spec));
  CHECK(spec_to_json(again) == spec_to_json(spec));

  CHECK_THROWS_AS(parse_spec("{"), FormatError);
  CHECK_THROWS_AS(parse_spec(R"({"input": {"c": 1, "h": 4, "w": 4}, "stem": {"out": 2}, "blocks": [],
                                "head": {"classes": 2}, "extra": 1})"),
                  FormatError);
  CHECK_THROWS_AS(parse_spec(R"({"input": {"c": 1, "h": 4, "w": 4}, "stem": {"out": 2},
                                "blocks": [{"conv1": {"out": 2}, "conv2": {"out": 2}, "placement": "sideways"}],
                                "head": {"classes": 2}})"),
                  FormatError);
  CHECK_THROWS_AS(parse_spec(R"({"input": {"c": 1, "h": 4, "w": 4}, "stem": {"out": "two"}, "blocks": [],
                                "head": {"classes": 2}})"),
                  FormatError);
  CHECK_THROWS_AS(parse_spec(R"({"input": {"c": 1, "h": 4, "w": 4}, "stem": {"in": 3, "out": 2}, "blocks": [],
                                "head": {"classes": 2}})"),
                  InvalidSpec);
  CHECK_THROWS_AS(parse_spec(R"({"input": {"c": 1, "h": 4, "w": 4}, "stem": {"out": 2},
                                "blocks": [{"conv1": {"out": 2}, "conv2": {"out": 2}, "placement": "inplace",
                                            "shift": {"n_fwd": 1, "n_bwd": 1, "mode": "uni"}}],
                                "head": {"classes": 2}})"),
                  InvalidSpec);
}

TEST_CASE("cost accounting") {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 20; ++i) {
    auto spec = oracle::random_network(rng, 4);
    // Give every shape-changing block a projection so all placements are valid.
    for (auto& b : spec.blocks) {
      if (!b.downsample && b.conv1.in_channels != b.conv2.out_channels) {
        b.downsample = ConvDesc{b.conv1.in_channels, b.conv2.out_channels, 1, 1, 0};
      }
    }
    const auto a = count_network(spec.with_placement(Placement::None));
    CHECK(a == count_network(spec.with_placement(Placement::Residual)));
    CHECK(a == count_network(spec.with_placement(Placement::InPlace)));
  }

  auto spec = small_spec(Placement::Residual);
  auto bare = spec;
  bare.blocks.clear();
  // stem 3x3 2->4 on 5x4, head 4->3.
  CHECK(count_network(bare).macs_per_frame == 4 * 2 * 9 * 20 + 12);
  CHECK(count_network(bare).params == (4 * 2 * 9 + 4) + (3 * 4 + 3));

  auto doubled = spec;
  doubled.blocks.insert(doubled.blocks.end(), spec.blocks.begin(), spec.blocks.end());
  const auto base = count_network(bare), one = count_network(spec), two = count_network(doubled);
  CHECK(two.macs_per_frame - base.macs_per_frame == 2 * (one.macs_per_frame - base.macs_per_frame));
  CHECK(two.params - base.params == 2 * (one.params - base.params));

  std::uint64_t macs = 0;
  for (const auto& [layer, shape] : enumerate_layers(spec)) macs += macs_of(layer, shape);
  CHECK(macs == one.macs_per_frame);
}

TEST_CASE("toy-model gradients match finite differences") {
  std::mt19937_64 rng(12);
  for (auto placement : {Placement::None, Placement::InPlace, Placement::Residual}) {
    auto spec = small_spec(placement, ShiftSpec{1, 1, Padding::Zero}, 3);
    spec.input = {1, 4, 4};
    spec.stem = {1, 4, 3, 1, 1};
    spec.num_classes = 2;
    if (placement == Placement::Residual) {
      spec.blocks[1].conv2.out_channels = 5;
      spec.blocks[1].downsample = ConvDesc{4, 5, 1, 1, 0};
    }
    spec.validate();
    auto w = weights_cast<double>(init_weights(spec, 21));
    const auto clips = oracle::random_activation<double>({2, 3, 1, 4, 4}, rng);
    const std::vector<std::size_t> labels{0, 1};
    const auto lg = loss_and_gradients(clips, labels, spec, w);
    for (auto& [name, t] : w) {
      // A 1e-4 stencil straddles ReLU kinks somewhere in a network this size;
      // 1e-6 keeps it on one side while double rounding stays near 1e-10.
      const auto fd = oracle::finite_diff(t, [&] { return loss_and_gradients(clips, labels, spec, w).loss; }, 1e-6);
      INFO(to_string(placement) << " " << name);
      CHECK(oracle::rel_error(lg.grads.at(name).data(), fd) <= 1e-4);
    }
  }
}

}  // TEST_SUITE
