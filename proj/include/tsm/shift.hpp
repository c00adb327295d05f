#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tsm/tensor.hpp"

namespace tsm {

enum class Padding : std::uint8_t { Zero, Circular };
enum class ShiftMode : std::uint8_t { Bidirectional, Unidirectional };

// Forward: out[t] = x[t-1]. Backward: out[t] = x[t+1].
enum class Direction : std::int8_t { Forward = 1, Backward = -1 };

// Channel partition of a temporal shift. The forward group occupies channels
// [0, n_fwd), the backward group [n_fwd, n_fwd + n_bwd), the rest is untouched.
// The shift step is always one frame.
struct ShiftSpec {
  std::size_t n_fwd = 0;
  std::size_t n_bwd = 0;
  Padding padding = Padding::Zero;
  ShiftMode mode = ShiftMode::Bidirectional;

  // Throws InvalidSpec when the mode constraints are violated.
  void validate() const;
  // Additionally checks that both groups fit inside `channels`.
  void validate_for(std::size_t channels) const;

  std::size_t shifted_channels() const noexcept { return n_fwd + n_bwd; }
  bool is_identity() const noexcept { return n_fwd == 0 && n_bwd == 0; }

  // floor(channels * num / den) channels in each direction. The default 1/8 per
  // direction is a configuration choice, not a hard requirement.
  static ShiftSpec per_direction(std::size_t channels, std::size_t num = 1, std::size_t den = 8,
                                 ShiftMode mode = ShiftMode::Bidirectional, Padding padding = Padding::Zero);

  // A total shifted proportion num/den split evenly: floor(channels * num / (2 den))
  // per direction (unidirectional: the whole proportion goes forward). Remainders stay untouched.
  static ShiftSpec total_fraction(std::size_t channels, std::size_t num, std::size_t den,
                                  ShiftMode mode = ShiftMode::Bidirectional, Padding padding = Padding::Zero);

  // Same partition with n_bwd dropped, usable for streaming.
  ShiftSpec as_unidirectional() const;

  friend bool operator==(const ShiftSpec&, const ShiftSpec&) = default;
};

std::string to_string(Padding p);
std::string to_string(ShiftMode m);

struct ChannelRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const ChannelRange&, const ChannelRange&) = default;
};

struct ChannelPartition {
  ChannelRange forward;
  ChannelRange backward;
  ChannelRange untouched;
};

ChannelPartition partition(const ShiftSpec& spec, std::size_t channels);

// General form of a shift: disjoint channel ranges, each moved one frame in its
// own direction. Used for the adjoint and for direction-swapped shifts, which
// keep the channel indices of a ShiftSpec but flip the directions.
struct ShiftPlan {
  struct Group {
    ChannelRange channels;
    Direction direction;
  };
  std::vector<Group> groups;
  Padding padding = Padding::Zero;

  static ShiftPlan from(const ShiftSpec& spec);
  ShiftPlan reversed() const;
  std::size_t shifted_channels() const noexcept;
  void validate_for(std::size_t channels) const;
};

// Out-of-place shift over an (N,T,C,H,W) activation. Each shifted group is moved
// as a contiguous C_group x H x W slab between adjacent frame blocks.
template <typename Scalar>
BasicTensor<Scalar> shift_offline(const BasicTensor<Scalar>& x, const ShiftSpec& spec);
template <typename Scalar>
BasicTensor<Scalar> shift_offline(const BasicTensor<Scalar>& x, const ShiftPlan& plan);

// Reference implementation: one loop per element, no slab copies.
template <typename Scalar>
BasicTensor<Scalar> shift_offline_naive(const BasicTensor<Scalar>& x, const ShiftSpec& spec);

// Same result as shift_offline, computed inside `x`. Only the shifted groups are
// touched, so the traffic is what bytes_moved reports.
template <typename Scalar>
void shift_inplace(BasicTensor<Scalar>& x, const ShiftSpec& spec);

// Transpose of shift_offline: every group moves in the opposite direction.
template <typename Scalar>
BasicTensor<Scalar> shift_adjoint(const BasicTensor<Scalar>& g, const ShiftSpec& spec);

// Holds the forward-group channels of the previous frame of one stream.
template <typename Scalar>
class BasicShiftCache {
 public:
  BasicShiftCache() = default;
  BasicShiftCache(std::size_t n, std::size_t channels, std::size_t h, std::size_t w)
      : n_(n), channels_(channels), h_(h), w_(w), slab_(n * channels * h * w, Scalar{}) {}

  std::size_t batch() const noexcept { return n_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  std::size_t frame_counter() const noexcept { return frame_counter_; }
  std::size_t bytes() const noexcept { return slab_.size() * sizeof(Scalar); }

  std::span<Scalar> slab() noexcept { return slab_; }
  std::span<const Scalar> slab() const noexcept { return slab_; }

  void reset() {
    std::fill(slab_.begin(), slab_.end(), Scalar{});
    frame_counter_ = 0;
  }
  void advance() noexcept { ++frame_counter_; }

 private:
  std::size_t n_ = 0, channels_ = 0, h_ = 0, w_ = 0;
  std::vector<Scalar> slab_;
  std::size_t frame_counter_ = 0;
};

using ShiftCache = BasicShiftCache<float>;

// One streaming step: the forward-group channels of `frame` are replaced by the
// cached channels of the previous frame, and the cache takes this frame's.
template <typename Scalar>
BasicTensor<Scalar> shift_online_step(const BasicTensor<Scalar>& frame, const ShiftSpec& spec,
                                      BasicShiftCache<Scalar>& cache);

// Bytes read plus bytes written by shift_inplace for one pass:
// 2 * (n_fwd + n_bwd) * N * T * H * W * 4. Untouched channels cost nothing.
std::uint64_t bytes_moved(const ShiftSpec& spec, const ActivationShape& shape);

}  // namespace tsm
