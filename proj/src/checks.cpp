#include "tsm/checks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tsm::checks {

namespace {

template <typename Scalar>
BasicTensor<Scalar> random_tensor(const ActivationShape& s, std::mt19937_64& rng) {
  auto x = make_activation<Scalar>(s);
  std::uniform_real_distribution<Scalar> dist(-1, 1);
  for (auto& v : x.data()) v = dist(rng);
  return x;
}

std::string describe_case(std::size_t i, const ShiftCase& c) {
  std::ostringstream os;
  os << "case " << i << ": N=" << c.shape.n << " T=" << c.shape.t << " C=" << c.shape.c << " H=" << c.shape.h
     << " W=" << c.shape.w << " n_fwd=" << c.spec.n_fwd << " n_bwd=" << c.spec.n_bwd << " padding="
     << to_string(c.spec.padding) << " mode=" << to_string(c.spec.mode);
  return os.str();
}

CheckResult named(std::string name) {
  CheckResult r;
  r.name = std::move(name);
  return r;
}

void fail(CheckResult& r, const std::string& what) {
  if (r.passed) r.detail = what;
  r.passed = false;
}

}  // namespace

ShiftCase random_shift_case(std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  ShiftCase c;
  c.shape = {pick(1, 3), pick(1, 6), pick(1, 12), pick(1, 5), pick(1, 5)};
  c.spec.mode = pick(0, 1) ? ShiftMode::Unidirectional : ShiftMode::Bidirectional;
  c.spec.padding = c.spec.mode == ShiftMode::Bidirectional && pick(0, 1) ? Padding::Circular : Padding::Zero;
  c.spec.n_fwd = pick(0, c.shape.c);
  c.spec.n_bwd = c.spec.mode == ShiftMode::Bidirectional ? pick(0, c.shape.c - c.spec.n_fwd) : 0;
  return c;
}

std::vector<CheckResult> run_shift_checks(std::uint64_t seed, std::size_t cases, bool inject_fault) {
  std::mt19937_64 rng(seed);
  CheckResult oracle = named("offline-vs-reference");
  CheckResult inplace = named("inplace-vs-offline");
  CheckResult adjoint = named("adjoint-identity");
  CheckResult identity = named("zero-spec-identity");
  CheckResult reversal = named("time-reversal");
  CheckResult online = named("online-vs-offline");

  for (std::size_t i = 0; i < cases; ++i) {
    const auto c = random_shift_case(rng);
    const auto x = random_tensor<float>(c.shape, rng);

    auto fast = shift_offline(x, c.spec);
    if (inject_fault) fast[fast.size() / 2] += 1.0f;
    if (!bit_equal(fast, shift_offline_naive(x, c.spec))) fail(oracle, describe_case(i, c));
    ++oracle.cases;

    auto y = x;
    shift_inplace(y, c.spec);
    if (!bit_equal(y, fast)) fail(inplace, describe_case(i, c));
    ++inplace.cases;

    const auto x64 = random_tensor<double>(c.shape, rng);
    const auto g64 = random_tensor<double>(c.shape, rng);
    const double lhs = dot(shift_offline(x64, c.spec), g64);
    const double rhs = dot(x64, shift_adjoint(g64, c.spec));
    if (!(std::abs(lhs - rhs) <= 1e-10)) fail(adjoint, describe_case(i, c));
    ++adjoint.cases;

    if (!bit_equal(shift_offline(x, ShiftSpec{0, 0, c.spec.padding, c.spec.mode}), x)) {
      fail(identity, describe_case(i, c));
    }
    ++identity.cases;

    // The symmetry needs equal groups and zero padding.
    const std::size_t half = std::min(c.spec.n_fwd, c.shape.c / 2);
    const ShiftSpec sym{half, half, Padding::Zero, ShiftMode::Bidirectional};
    const auto swapped = reverse_time(shift_offline(reverse_time(x), sym));
    if (!bit_equal(swapped, shift_offline(x, ShiftPlan::from(sym).reversed()))) fail(reversal, describe_case(i, c));
    ++reversal.cases;

    const auto uni = ShiftSpec{c.spec.n_fwd, 0, Padding::Zero, ShiftMode::Unidirectional};
    ShiftCache cache(c.shape.n, uni.n_fwd, c.shape.h, c.shape.w);
    std::vector<Tensor> streamed;
    for (std::size_t t = 0; t < c.shape.t; ++t) {
      auto frame = make_frame<float>({c.shape.n, c.shape.c, c.shape.h, c.shape.w});
      for (std::size_t n = 0; n < c.shape.n; ++n) {
        const auto src = slice_frame(x, n, t);
        std::copy(src.data().begin(), src.data().end(),
                  frame.data().begin() + static_cast<std::ptrdiff_t>(n * c.shape.frame_size()));
      }
      streamed.push_back(shift_online_step(frame, uni, cache));
    }
    const bool same = bit_equal(stack_frames(streamed), shift_offline(x, uni));
    if (!same) fail(online, describe_case(i, c));
    ++online.cases;
  }
  return {oracle, inplace, adjoint, identity, reversal, online};
}

}  // namespace tsm::checks
