#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tsm/net.hpp"
#include "tsm/shift.hpp"

namespace tsm::bench {

struct Fraction {
  std::size_t num = 0;
  std::size_t den = 1;
  std::string label() const;
};

// Parses "1/8", "0", "1" or a decimal such as "0.25" (converted to a /1000000 fraction).
Fraction parse_fraction(const std::string& text);

struct CostRow {
  std::string label;
  ActivationShape shape{};
  std::size_t n_fwd = 0;
  std::size_t n_bwd = 0;
  std::uint64_t bytes_moved = 0;
  double median_ns = 0;
  double p10_ns = 0;
  double p90_ns = 0;
  std::size_t reps = 0;
  double baseline_ns = 0;
  double overhead_pct = 0;
  std::uint64_t macs_per_frame = 0;  // network rows only
};

struct CostReport {
  std::vector<CostRow> rows;
};

inline constexpr std::size_t kMinReps = 20;
inline constexpr std::size_t kWarmup = 3;
inline constexpr const char* kCsvHeader =
    "label,n,c,t,h,w,n_fwd,n_bwd,bytes_moved,median_ns,p10_ns,p90_ns,reps,baseline_ns,overhead_pct";

struct Summary {
  double median_ns, p10_ns, p90_ns;
};

// Nearest-rank percentiles of a sample.
Summary summarize(std::vector<double> samples_ns);

// Times the offline shift (copy, then rewrite the shifted slabs) between two
// pre-allocated activations for every fraction, a total shifted proportion
// split evenly between directions. The baseline is the zero-fraction pass over
// the same buffers, which is a plain copy.
CostReport bench_shift(const ActivationShape& shape, const std::vector<Fraction>& fractions, std::size_t reps,
                       std::uint64_t seed = 0);

// Times forward_offline with shifts applied against the same network with the
// shift operator bypassed (same weights, same topology).
CostReport bench_network(const NetworkSpec& spec, std::size_t reps, std::uint64_t seed = 0,
                         std::size_t batch = 1);

void write_csv(std::ostream& out, const CostReport& report);

}  // namespace tsm::bench
