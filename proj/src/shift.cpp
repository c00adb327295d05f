#include "tsm/shift.hpp"

#include "tsm/shift_kernel.hpp"

namespace tsm {

void ShiftSpec::validate() const {
  if (mode == ShiftMode::Unidirectional) {
    if (n_bwd != 0) {
      throw InvalidSpec("unidirectional shift cannot move channels backward (n_bwd=" + std::to_string(n_bwd) +
                        "): future frames are unavailable online");
    }
    if (padding != Padding::Zero) throw InvalidSpec("unidirectional shift requires zero padding");
  }
}

void ShiftSpec::validate_for(std::size_t channels) const {
  validate();
  if (n_fwd + n_bwd > channels) {
    throw InvalidSpec("shift groups n_fwd=" + std::to_string(n_fwd) + " + n_bwd=" + std::to_string(n_bwd) +
                      " exceed " + std::to_string(channels) + " channels");
  }
}

ShiftSpec ShiftSpec::per_direction(std::size_t channels, std::size_t num, std::size_t den, ShiftMode mode,
                                   Padding padding) {
  if (den == 0 || num > den) throw InvalidSpec("shift proportion must lie in [0, 1]");
  const std::size_t k = channels * num / den;
  ShiftSpec s{k, mode == ShiftMode::Bidirectional ? k : 0, padding, mode};
  s.validate_for(channels);
  return s;
}

ShiftSpec ShiftSpec::total_fraction(std::size_t channels, std::size_t num, std::size_t den, ShiftMode mode,
                                    Padding padding) {
  if (den == 0 || num > den) throw InvalidSpec("shift proportion must lie in [0, 1]");
  ShiftSpec s{0, 0, padding, mode};
  if (mode == ShiftMode::Bidirectional) {
    s.n_fwd = s.n_bwd = channels * num / (2 * den);
  } else {
    s.n_fwd = channels * num / den;
  }
  s.validate_for(channels);
  return s;
}

ShiftSpec ShiftSpec::as_unidirectional() const {
  return ShiftSpec{n_fwd, 0, Padding::Zero, ShiftMode::Unidirectional};
}

std::string to_string(Padding p) { return p == Padding::Zero ? "zero" : "circular"; }
std::string to_string(ShiftMode m) { return m == ShiftMode::Bidirectional ? "bi" : "uni"; }

ChannelPartition partition(const ShiftSpec& spec, std::size_t channels) {
  spec.validate_for(channels);
  const std::size_t b = spec.n_fwd;
  const std::size_t u = spec.n_fwd + spec.n_bwd;
  return {{0, b}, {b, u}, {u, channels}};
}

ShiftPlan ShiftPlan::from(const ShiftSpec& spec) {
  spec.validate();
  ShiftPlan plan;
  plan.padding = spec.padding;
  if (spec.n_fwd) plan.groups.push_back({{0, spec.n_fwd}, Direction::Forward});
  if (spec.n_bwd) plan.groups.push_back({{spec.n_fwd, spec.n_fwd + spec.n_bwd}, Direction::Backward});
  return plan;
}

ShiftPlan ShiftPlan::reversed() const {
  ShiftPlan r = *this;
  for (auto& g : r.groups) {
    g.direction = g.direction == Direction::Forward ? Direction::Backward : Direction::Forward;
  }
  return r;
}

std::size_t ShiftPlan::shifted_channels() const noexcept {
  std::size_t k = 0;
  for (const auto& g : groups) k += g.channels.size();
  return k;
}

void ShiftPlan::validate_for(std::size_t channels) const {
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i].channels;
    if (g.begin > g.end || g.end > channels) throw InvalidSpec("shift group outside channel range");
    for (std::size_t j = 0; j < i; ++j) {
      const auto& o = groups[j].channels;
      if (g.begin < o.end && o.begin < g.end) throw InvalidSpec("shift groups overlap");
    }
  }
}

template <typename Scalar>
BasicTensor<Scalar> shift_offline(const BasicTensor<Scalar>& x, const ShiftPlan& plan) {
  const auto s = activation_shape(x);
  plan.validate_for(s.c);
  auto out = make_activation<Scalar>(s);
  kernel::shift_into<Scalar>(x.data(), out.data(), s, plan);
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> shift_offline(const BasicTensor<Scalar>& x, const ShiftSpec& spec) {
  const auto s = activation_shape(x);
  spec.validate_for(s.c);
  return shift_offline(x, ShiftPlan::from(spec));
}

template <typename Scalar>
BasicTensor<Scalar> shift_offline_naive(const BasicTensor<Scalar>& x, const ShiftSpec& spec) {
  const auto s = activation_shape(x);
  spec.validate_for(s.c);
  auto out = make_activation<Scalar>(s);
  const long long frames = static_cast<long long>(s.t);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t t = 0; t < s.t; ++t) {
      for (std::size_t c = 0; c < s.c; ++c) {
        long long src = static_cast<long long>(t);
        if (c < spec.n_fwd) {
          src -= 1;
        } else if (c < spec.n_fwd + spec.n_bwd) {
          src += 1;
        }
        bool zero = false;
        if (src < 0 || src >= frames) {
          if (spec.padding == Padding::Zero) {
            zero = true;
          } else {
            src = (src + frames) % frames;
          }
        }
        for (std::size_t h = 0; h < s.h; ++h) {
          for (std::size_t w = 0; w < s.w; ++w) {
            out.at({n, t, c, h, w}) = zero ? Scalar{} : x.at({n, static_cast<std::size_t>(src), c, h, w});
          }
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
void shift_inplace(BasicTensor<Scalar>& x, const ShiftSpec& spec) {
  const auto s = activation_shape(x);
  spec.validate_for(s.c);
  kernel::shift_in_buffer<Scalar>(x.data(), s, ShiftPlan::from(spec));
}

template <typename Scalar>
BasicTensor<Scalar> shift_adjoint(const BasicTensor<Scalar>& g, const ShiftSpec& spec) {
  const auto s = activation_shape(g);
  spec.validate_for(s.c);
  return shift_offline(g, ShiftPlan::from(spec).reversed());
}

template <typename Scalar>
BasicTensor<Scalar> shift_online_step(const BasicTensor<Scalar>& frame, const ShiftSpec& spec,
                                      BasicShiftCache<Scalar>& cache) {
  if (spec.mode != ShiftMode::Unidirectional) {
    throw InvalidSpec("online shift requires a unidirectional spec");
  }
  const auto s = frame_shape(frame);
  spec.validate_for(s.c);
  if (cache.batch() != s.n || cache.channels() != spec.n_fwd || cache.height() != s.h || cache.width() != s.w) {
    throw CacheMismatch("cache (" + std::to_string(cache.batch()) + "," + std::to_string(cache.channels()) + "," +
                        std::to_string(cache.height()) + "," + std::to_string(cache.width()) +
                        ") does not fit frame " + describe(frame.extents(), frame.labels()) + " with n_fwd=" +
                        std::to_string(spec.n_fwd));
  }
  BasicTensor<Scalar> out = frame;
  const std::size_t len = spec.n_fwd * s.plane();
  auto slab = cache.slab();
  for (std::size_t n = 0; n < s.n; ++n) {
    auto cached = slab.subspan(n * len, len);
    auto dst = out.data().subspan(n * s.frame_size(), len);
    const auto src = frame.data().subspan(n * s.frame_size(), len);
    std::copy(cached.begin(), cached.end(), dst.begin());
    std::copy(src.begin(), src.end(), cached.begin());
  }
  cache.advance();
  return out;
}

std::uint64_t bytes_moved(const ShiftSpec& spec, const ActivationShape& shape) {
  spec.validate_for(shape.c);
  return 2ull * spec.shifted_channels() * shape.n * shape.t * shape.h * shape.w * sizeof(float);
}

#define TSM_INSTANTIATE_SHIFT(S)                                                                      \
  template BasicTensor<S> shift_offline(const BasicTensor<S>&, const ShiftSpec&);                     \
  template BasicTensor<S> shift_offline(const BasicTensor<S>&, const ShiftPlan&);                     \
  template BasicTensor<S> shift_offline_naive(const BasicTensor<S>&, const ShiftSpec&);               \
  template void shift_inplace(BasicTensor<S>&, const ShiftSpec&);                                     \
  template BasicTensor<S> shift_adjoint(const BasicTensor<S>&, const ShiftSpec&);                     \
  template BasicTensor<S> shift_online_step(const BasicTensor<S>&, const ShiftSpec&, BasicShiftCache<S>&);

TSM_INSTANTIATE_SHIFT(float)
TSM_INSTANTIATE_SHIFT(double)

#undef TSM_INSTANTIATE_SHIFT

}  // namespace tsm
