#include "tsm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>

#include "tsm/shift_kernel.hpp"

namespace tsm::bench {

namespace {

using Clock = std::chrono::steady_clock;

// Written after every timed pass so the optimizer keeps the work.
volatile float g_sink = 0.0f;

template <typename F>
std::vector<double> time_reps(std::size_t reps, F&& pass) {
  for (std::size_t i = 0; i < kWarmup; ++i) pass();
  std::vector<double> samples;
  samples.reserve(reps);
  for (std::size_t i = 0; i < reps; ++i) {
    const auto start = Clock::now();
    pass();
    const auto stop = Clock::now();
    samples.push_back(std::chrono::duration<double, std::nano>(stop - start).count());
  }
  return samples;
}

double overhead(double median, double baseline) {
  return baseline > 0 ? 100.0 * (median - baseline) / baseline : 0.0;
}

}  // namespace

std::string Fraction::label() const {
  if (num == 0) return "0";
  if (num == den) return "1";
  return std::to_string(num) + "/" + std::to_string(den);
}

Fraction parse_fraction(const std::string& text) {
  try {
    std::size_t pos = 0;
    if (const auto slash = text.find('/'); slash != std::string::npos) {
      const std::string a = text.substr(0, slash), b = text.substr(slash + 1);
      const long long num = std::stoll(a, &pos);
      if (pos != a.size()) throw InvalidSpec("");
      const long long den = std::stoll(b, &pos);
      if (pos != b.size() || num < 0 || den <= 0 || num > den) throw InvalidSpec("");
      return {static_cast<std::size_t>(num), static_cast<std::size_t>(den)};
    }
    const double v = std::stod(text, &pos);
    if (pos != text.size() || !(v >= 0.0 && v <= 1.0)) throw InvalidSpec("");
    if (v == 0.0) return {0, 1};
    if (v == 1.0) return {1, 1};
    return {static_cast<std::size_t>(std::llround(v * 1e6)), 1000000};
  } catch (const std::logic_error&) {
  } catch (const InvalidSpec&) {
  }
  throw InvalidSpec("invalid shift fraction \"" + text + "\" (expected p/q or a decimal in [0, 1])");
}

Summary summarize(std::vector<double> samples) {
  if (samples.empty()) return {0, 0, 0};
  std::sort(samples.begin(), samples.end());
  auto rank = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size())));
    return samples[std::clamp<std::size_t>(idx, 1, samples.size()) - 1];
  };
  const std::size_t n = samples.size();
  const double median = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  return {median, rank(0.10), rank(0.90)};
}

CostReport bench_shift(const ActivationShape& shape, const std::vector<Fraction>& fractions, std::size_t reps,
                       std::uint64_t seed) {
  if (reps < kMinReps) throw InvalidSpec("at least " + std::to_string(kMinReps) + " repetitions are required");
  std::vector<ShiftSpec> specs;
  for (const auto& f : fractions) specs.push_back(ShiftSpec::total_fraction(shape.c, f.num, f.den));

  auto x = make_activation<float>(shape);
  auto out = make_activation<float>(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  for (float& v : x.data()) v = dist(rng);

  // Configurations are timed round-robin, one pass each per repetition, so
  // slow drift (clock scaling, other load) lands on all of them alike.
  std::vector<ShiftPlan> plans{ShiftPlan::from(ShiftSpec{})};
  for (const auto& spec : specs) plans.push_back(ShiftPlan::from(spec));
  auto pass = [&](const ShiftPlan& plan) {
    kernel::shift_into<float>(x.data(), out.data(), shape, plan);
    g_sink = out[out.size() - 1];
  };
  for (std::size_t i = 0; i < kWarmup; ++i) {
    for (const auto& plan : plans) pass(plan);
  }
  std::vector<std::vector<double>> samples(plans.size());
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t i = 0; i < plans.size(); ++i) {
      const auto start = Clock::now();
      pass(plans[i]);
      samples[i].push_back(std::chrono::duration<double, std::nano>(Clock::now() - start).count());
    }
  }
  const Summary baseline = summarize(samples[0]);

  CostReport report;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const auto s = summarize(samples[i + 1]);
    report.rows.push_back({"shift " + fractions[i].label(), shape, specs[i].n_fwd, specs[i].n_bwd,
                           bytes_moved(specs[i], shape), s.median_ns, s.p10_ns, s.p90_ns, reps, baseline.median_ns,
                           overhead(s.median_ns, baseline.median_ns), 0});
  }
  return report;
}

CostReport bench_network(const NetworkSpec& spec, std::size_t reps, std::uint64_t seed, std::size_t batch) {
  if (reps < kMinReps) throw InvalidSpec("at least " + std::to_string(kMinReps) + " repetitions are required");
  spec.validate();
  const auto w = init_weights(spec, seed);
  const ActivationShape shape{batch, spec.frames, spec.input.c, spec.input.h, spec.input.w};
  auto clip = make_activation<float>(shape);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  for (float& v : clip.data()) v = dist(rng);

  auto run = [&](ForwardOptions opts) {
    return summarize(time_reps(reps, [&] {
      const auto logits = forward_offline(clip, spec, w, opts);
      g_sink = logits[0];
    }));
  };
  const Summary plain = run({.bypass_shifts = true});
  const Summary shifted = run({.bypass_shifts = false});

  const auto cost = count_network(spec);
  std::uint64_t moved = 0;
  std::size_t n_fwd = 0, n_bwd = 0;
  const auto shapes = spec.block_input_shapes();
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const auto& b = spec.blocks[i];
    if (!b.has_shift()) continue;
    n_fwd += b.shift.n_fwd;
    n_bwd += b.shift.n_bwd;
    moved += bytes_moved(b.shift, {batch, spec.frames, shapes[i].c, shapes[i].h, shapes[i].w});
  }

  CostReport report;
  report.rows.push_back({"net shift-free", shape, 0, 0, 0, plain.median_ns, plain.p10_ns, plain.p90_ns, reps,
                         plain.median_ns, 0.0, count_network(spec.with_placement(Placement::None)).macs_per_frame});
  report.rows.push_back({"net tsm", shape, n_fwd, n_bwd, moved, shifted.median_ns, shifted.p10_ns, shifted.p90_ns,
                         reps, plain.median_ns, overhead(shifted.median_ns, plain.median_ns), cost.macs_per_frame});
  return report;
}

void write_csv(std::ostream& out, const CostReport& report) {
  out << kCsvHeader << '\n';
  for (const auto& r : report.rows) {
    out << r.label << ',' << r.shape.n << ',' << r.shape.c << ',' << r.shape.t << ',' << r.shape.h << ','
        << r.shape.w << ',' << r.n_fwd << ',' << r.n_bwd << ',' << r.bytes_moved << ',' << r.median_ns << ','
        << r.p10_ns << ',' << r.p90_ns << ',' << r.reps << ',' << r.baseline_ns << ',' << r.overhead_pct << '\n';
  }
}

}  // namespace tsm::bench
