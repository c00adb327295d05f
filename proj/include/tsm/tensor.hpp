#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tsm/error.hpp"

namespace tsm {

// Axis tags. The numeric values are the on-disk codes of the tensor file format.
enum class Axis : std::uint8_t { N = 0, T = 1, C = 2, H = 3, W = 4 };

using Extents = std::vector<std::size_t>;
using AxisLabels = std::vector<Axis>;

inline const AxisLabels kActivationAxes{Axis::N, Axis::T, Axis::C, Axis::H, Axis::W};
inline const AxisLabels kFrameAxes{Axis::N, Axis::C, Axis::H, Axis::W};

char axis_name(Axis a);
std::string describe(const Extents& extents, const AxisLabels& labels);

// Dense row-major tensor. Every extent is at least 1 and the buffer length is
// always the product of the extents.
template <typename Scalar>
class BasicTensor {
 public:
  using value_type = Scalar;

  BasicTensor() = default;

  static BasicTensor zeros(Extents extents, AxisLabels labels) {
    BasicTensor t;
    t.init_shape(std::move(extents), std::move(labels));
    t.data_.assign(element_count(t.extents_), Scalar{});
    return t;
  }

  static BasicTensor from_data(Extents extents, AxisLabels labels, std::vector<Scalar> data) {
    BasicTensor t;
    t.init_shape(std::move(extents), std::move(labels));
    if (data.size() != element_count(t.extents_)) {
      throw InvalidShape("buffer of " + std::to_string(data.size()) + " elements does not fill " +
                         describe(t.extents_, t.labels_));
    }
    t.data_ = std::move(data);
    return t;
  }

  const Extents& extents() const noexcept { return extents_; }
  const AxisLabels& labels() const noexcept { return labels_; }
  std::size_t rank() const noexcept { return extents_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return extents_.at(axis); }

  std::span<Scalar> data() noexcept { return data_; }
  std::span<const Scalar> data() const noexcept { return data_; }
  std::vector<Scalar>& buffer() noexcept { return data_; }
  const std::vector<Scalar>& buffer() const noexcept { return data_; }

  Scalar& operator[](std::size_t i) noexcept { return data_[i]; }
  const Scalar& operator[](std::size_t i) const noexcept { return data_[i]; }

  Scalar& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const Scalar& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  bool has_labels(const AxisLabels& expected) const noexcept { return labels_ == expected; }

  // Reinterprets the buffer under a new shape with the same element count.
  BasicTensor reshaped(Extents extents, AxisLabels labels) && {
    BasicTensor t;
    t.init_shape(std::move(extents), std::move(labels));
    if (element_count(t.extents_) != data_.size()) {
      throw InvalidShape("cannot reshape " + describe(extents_, labels_) + " to " +
                         describe(t.extents_, t.labels_));
    }
    t.data_ = std::move(data_);
    return t;
  }

  BasicTensor reshaped(Extents extents, AxisLabels labels) const& {
    return BasicTensor(*this).reshaped(std::move(extents), std::move(labels));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  static std::size_t element_count(const Extents& e) {
    return std::accumulate(e.begin(), e.end(), std::size_t{1}, std::multiplies<>());
  }

  void init_shape(Extents extents, AxisLabels labels) {
    if (extents.size() != labels.size()) {
      throw InvalidShape("rank " + std::to_string(extents.size()) + " does not match " +
                         std::to_string(labels.size()) + " axis labels");
    }
    for (std::size_t e : extents) {
      if (e == 0) throw InvalidShape("zero extent in " + describe(extents, labels));
    }
    extents_ = std::move(extents);
    labels_ = std::move(labels);
  }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != extents_.size()) throw IndexError("index rank mismatch");
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= extents_[axis]) {
        throw IndexError("index " + std::to_string(i) + " out of range on axis " +
                         std::string(1, axis_name(labels_[axis])));
      }
      off = off * extents_[axis] + i;
      ++axis;
    }
    return off;
  }

  Extents extents_;
  AxisLabels labels_;
  std::vector<Scalar> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename Scalar>
BasicTensor<Scalar> zeros(Extents extents, AxisLabels labels) {
  return BasicTensor<Scalar>::zeros(std::move(extents), std::move(labels));
}

inline Tensor zeros(Extents extents, AxisLabels labels) {
  return Tensor::zeros(std::move(extents), std::move(labels));
}

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& x) {
  std::vector<To> data(x.data().begin(), x.data().end());
  return BasicTensor<To>::from_data(x.extents(), x.labels(), std::move(data));
}

// Activation: (N,T,C,H,W), frames-major. FrameTensor: (N,C,H,W).
struct ActivationShape {
  std::size_t n, t, c, h, w;
  std::size_t frame_size() const noexcept { return c * h * w; }
  std::size_t plane() const noexcept { return h * w; }
  friend bool operator==(const ActivationShape&, const ActivationShape&) = default;
};

struct FrameShape {
  std::size_t n, c, h, w;
  std::size_t frame_size() const noexcept { return c * h * w; }
  std::size_t plane() const noexcept { return h * w; }
  friend bool operator==(const FrameShape&, const FrameShape&) = default;
};

template <typename Scalar>
ActivationShape activation_shape(const BasicTensor<Scalar>& x) {
  if (!x.has_labels(kActivationAxes)) {
    throw InvalidShape("expected an (N,T,C,H,W) activation, got " + describe(x.extents(), x.labels()));
  }
  const auto& e = x.extents();
  return {e[0], e[1], e[2], e[3], e[4]};
}

template <typename Scalar>
FrameShape frame_shape(const BasicTensor<Scalar>& x) {
  if (!x.has_labels(kFrameAxes)) {
    throw InvalidShape("expected an (N,C,H,W) frame tensor, got " + describe(x.extents(), x.labels()));
  }
  const auto& e = x.extents();
  return {e[0], e[1], e[2], e[3]};
}

template <typename Scalar>
BasicTensor<Scalar> make_activation(const ActivationShape& s) {
  return BasicTensor<Scalar>::zeros({s.n, s.t, s.c, s.h, s.w}, kActivationAxes);
}

template <typename Scalar>
BasicTensor<Scalar> make_frame(const FrameShape& s) {
  return BasicTensor<Scalar>::zeros({s.n, s.c, s.h, s.w}, kFrameAxes);
}

// Views an activation as a batch of N*T frames; zero-copy on rvalues.
template <typename Scalar>
BasicTensor<Scalar> as_frames(BasicTensor<Scalar> x) {
  const auto s = activation_shape(x);
  return std::move(x).reshaped({s.n * s.t, s.c, s.h, s.w}, kFrameAxes);
}

template <typename Scalar>
BasicTensor<Scalar> as_activation(BasicTensor<Scalar> frames, std::size_t n, std::size_t t) {
  const auto s = frame_shape(frames);
  if (n * t != s.n) {
    throw InvalidShape("frame batch " + std::to_string(s.n) + " is not " + std::to_string(n) + "x" +
                       std::to_string(t));
  }
  return std::move(frames).reshaped({n, t, s.c, s.h, s.w}, kActivationAxes);
}

template <typename Scalar>
BasicTensor<Scalar> slice_frame(const BasicTensor<Scalar>& x, std::size_t n, std::size_t t) {
  const auto s = activation_shape(x);
  if (n >= s.n || t >= s.t) {
    throw IndexError("frame (" + std::to_string(n) + "," + std::to_string(t) + ") outside " +
                     describe(x.extents(), x.labels()));
  }
  auto out = make_frame<Scalar>({1, s.c, s.h, s.w});
  const auto src = x.data().subspan((n * s.t + t) * s.frame_size(), s.frame_size());
  std::copy(src.begin(), src.end(), out.data().begin());
  return out;
}

// Stacks T frame tensors of identical (N,C,H,W) shape into an (N,T,C,H,W) activation.
template <typename Scalar>
BasicTensor<Scalar> stack_frames(std::span<const BasicTensor<Scalar>> frames) {
  if (frames.empty()) throw InvalidShape("stack_frames needs at least one frame");
  const auto s = frame_shape(frames.front());
  for (const auto& f : frames) {
    if (frame_shape(f) != s) {
      throw InvalidShape("frame shape " + describe(f.extents(), f.labels()) + " differs from " +
                         describe(frames.front().extents(), frames.front().labels()));
    }
  }
  const std::size_t t_count = frames.size();
  auto out = make_activation<Scalar>({s.n, t_count, s.c, s.h, s.w});
  const std::size_t fs = s.frame_size();
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t n = 0; n < s.n; ++n) {
      const auto src = frames[t].data().subspan(n * fs, fs);
      std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>((n * t_count + t) * fs));
    }
  }
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> stack_frames(const std::vector<BasicTensor<Scalar>>& frames) {
  return stack_frames(std::span<const BasicTensor<Scalar>>(frames));
}

template <typename Scalar>
BasicTensor<Scalar> reverse_time(const BasicTensor<Scalar>& x) {
  const auto s = activation_shape(x);
  auto out = make_activation<Scalar>(s);
  const std::size_t fs = s.frame_size();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t t = 0; t < s.t; ++t) {
      const auto src = x.data().subspan((n * s.t + (s.t - 1 - t)) * fs, fs);
      std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>((n * s.t + t) * fs));
    }
  }
  return out;
}

template <typename A, typename B>
void require_same_extents(const BasicTensor<A>& x, const BasicTensor<B>& y) {
  if (x.extents() != y.extents()) {
    throw InvalidShape("extent mismatch: " + describe(x.extents(), x.labels()) + " vs " +
                       describe(y.extents(), y.labels()));
  }
}

// Bit-level equality: distinguishes -0.0 from 0.0 and treats identical NaN payloads as equal.
template <typename Scalar>
bool bit_equal(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& y) {
  if (x.extents() != y.extents() || x.labels() != y.labels()) return false;
  return x.size() == 0 || std::memcmp(x.data().data(), y.data().data(), x.size() * sizeof(Scalar)) == 0;
}

// 64-bit accumulation regardless of element type.
template <typename Scalar>
double dot(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& y) {
  require_same_extents(x, y);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  return acc;
}

template <typename Scalar>
double max_abs_diff(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& y) {
  require_same_extents(x, y);
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(static_cast<double>(x[i]) - static_cast<double>(y[i]));
    if (std::isnan(d)) return d;
    m = std::max(m, d);
  }
  return m;
}

}  // namespace tsm
