#pragma once

// Shift kernels over raw buffers. They only copy and value-initialize elements,
// never compute with them, so they also instantiate for instrumented scalar types.

#include <algorithm>
#include <span>
#include <vector>

#include "tsm/shift.hpp"

namespace tsm::kernel {

// Writes the shifted activation into `out`. `out` must not alias `in`.
template <typename Scalar>
void shift_into(std::span<const Scalar> in, std::span<Scalar> out, const ActivationShape& s,
                const ShiftPlan& plan) {
  const std::size_t fs = s.frame_size();
  const std::size_t hw = s.plane();
  std::copy(in.begin(), in.end(), out.begin());
  for (const auto& g : plan.groups) {
    const std::size_t len = g.channels.size() * hw;
    if (len == 0) continue;
    const std::size_t off = g.channels.begin * hw;
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t clip = n * s.t * fs;
      for (std::size_t t = 0; t < s.t; ++t) {
        // Source frame for output frame t.
        const bool fwd = g.direction == Direction::Forward;
        const bool at_edge = fwd ? t == 0 : t + 1 == s.t;
        auto dst = out.subspan(clip + t * fs + off, len);
        if (at_edge && plan.padding == Padding::Zero) {
          std::fill(dst.begin(), dst.end(), Scalar{});
          continue;
        }
        std::size_t src_t;
        if (fwd) {
          src_t = at_edge ? s.t - 1 : t - 1;
        } else {
          src_t = at_edge ? 0 : t + 1;
        }
        const auto src = in.subspan(clip + src_t * fs + off, len);
        std::copy(src.begin(), src.end(), dst.begin());
      }
    }
  }
}

// In-buffer variant: walks frames against the shift direction so every slab is
// read before it is overwritten. Circular padding keeps one slab aside.
template <typename Scalar>
void shift_in_buffer(std::span<Scalar> x, const ActivationShape& s, const ShiftPlan& plan) {
  const std::size_t fs = s.frame_size();
  const std::size_t hw = s.plane();
  std::vector<Scalar> wrap;
  for (const auto& g : plan.groups) {
    const std::size_t len = g.channels.size() * hw;
    if (len == 0) continue;
    const std::size_t off = g.channels.begin * hw;
    auto slab = [&](std::size_t clip, std::size_t t) { return x.subspan(clip + t * fs + off, len); };
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t clip = n * s.t * fs;
      const std::size_t last = s.t - 1;
      const bool fwd = g.direction == Direction::Forward;
      // Slab that falls off the clip edge; it re-enters at the other end when circular.
      const std::size_t leaving = fwd ? last : 0;
      const std::size_t entering = fwd ? 0 : last;
      if (plan.padding == Padding::Circular) {
        const auto l = slab(clip, leaving);
        wrap.assign(l.begin(), l.end());
      }
      for (std::size_t k = 0; k < last; ++k) {
        const std::size_t dst_t = fwd ? last - k : k;
        const std::size_t src_t = fwd ? dst_t - 1 : dst_t + 1;
        const auto src = slab(clip, src_t);
        std::copy(src.begin(), src.end(), slab(clip, dst_t).begin());
      }
      auto dst = slab(clip, entering);
      if (plan.padding == Padding::Circular) {
        std::copy(wrap.begin(), wrap.end(), dst.begin());
      } else {
        std::fill(dst.begin(), dst.end(), Scalar{});
      }
    }
  }
}

}  // namespace tsm::kernel
