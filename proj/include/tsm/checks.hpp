#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tsm/shift.hpp"

namespace tsm::checks {

struct ShiftCase {
  ActivationShape shape;
  ShiftSpec spec;
};

// Small random shape plus a spec that is valid for its channel count.
ShiftCase random_shift_case(std::mt19937_64& rng);

struct CheckResult {
  std::string name;
  bool passed = true;
  std::size_t cases = 0;
  std::string detail;  // first failing case, empty on success
};

// Property suite over `cases` random cases per property: slab shift vs the
// element-wise reference, in-place vs out-of-place, adjoint inner-product
// identity, zero-spec identity, time-reversal symmetry and streaming vs
// offline. `inject_fault` corrupts one element of the slab shift output and
// exists so tests can confirm a broken kernel is caught.
std::vector<CheckResult> run_shift_checks(std::uint64_t seed, std::size_t cases, bool inject_fault = false);

}  // namespace tsm::checks
