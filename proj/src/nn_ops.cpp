#include "tsm/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tsm {

template <typename Scalar>
void BasicConv2dParams<Scalar>::validate() const {
  if (weights.rank() != 4 || weights.extent(2) != weights.extent(3)) {
    throw InvalidShape("conv weights must be (C_out, C_in, K, K), got " + describe(weights.extents(), weights.labels()));
  }
  if (bias.rank() != 1 || bias.extent(0) != weights.extent(0)) {
    throw InvalidShape("conv bias must have C_out=" + std::to_string(weights.extent(0)) + " entries");
  }
  if (stride == 0) throw InvalidShape("conv stride must be positive");
}

template <typename Scalar>
void BasicLinearParams<Scalar>::validate() const {
  if (weights.rank() != 2) throw InvalidShape("linear weights must be (out, in)");
  if (bias.rank() != 1 || bias.extent(0) != weights.extent(0)) {
    throw InvalidShape("linear bias must have " + std::to_string(weights.extent(0)) + " entries");
  }
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw InvalidShape("conv stride must be positive");
  if (in + 2 * padding < kernel) {
    throw InvalidShape("kernel " + std::to_string(kernel) + " larger than padded input " +
                       std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace {

// Output positions o in [lo, hi) whose input coordinate o*stride + k - pad lies in [0, in).
struct ValidRange {
  std::size_t lo, hi;
};

ValidRange valid_outputs(std::size_t out, std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  std::size_t lo = 0;
  if (k < pad) lo = (pad - k + stride - 1) / stride;
  // o*stride + k - pad <= in - 1  <=>  o <= (in - 1 + pad - k) / stride
  if (in - 1 + pad < k) return {0, 0};
  const std::size_t hi = std::min(out, (in - 1 + pad - k) / stride + 1);
  return {std::min(lo, hi), hi};
}

struct ConvGeometry {
  FrameShape in;
  std::size_t c_out, k, stride, pad, h_out, w_out;
};

template <typename Scalar>
ConvGeometry conv_geometry(const BasicTensor<Scalar>& x, const BasicConv2dParams<Scalar>& p) {
  p.validate();
  const auto s = frame_shape(x);
  if (s.c != p.in_channels()) {
    throw InvalidShape("conv expects " + std::to_string(p.in_channels()) + " input channels, got " +
                       std::to_string(s.c));
  }
  const std::size_t k = p.kernel();
  return {s,
          p.out_channels(),
          k,
          p.stride,
          p.padding,
          conv_output_extent(s.h, k, p.stride, p.padding),
          conv_output_extent(s.w, k, p.stride, p.padding)};
}

}  // namespace

namespace {

// Patch matrix of one image: row r = (kh * K + kw) * C_in + ci, column = output
// pixel. Padded taps hold zero. The row order puts c_in fastest, matching the
// documented accumulation order.
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* patch) {
  const std::size_t out_plane = g.h_out * g.w_out;
  for (std::size_t kh = 0; kh < g.k; ++kh) {
    const auto rows = valid_outputs(g.h_out, g.in.h, kh, g.stride, g.pad);
    for (std::size_t kw = 0; kw < g.k; ++kw) {
      const auto cols = valid_outputs(g.w_out, g.in.w, kw, g.stride, g.pad);
      for (std::size_t ci = 0; ci < g.in.c; ++ci) {
        Scalar* dst = patch + ((kh * g.k + kw) * g.in.c + ci) * out_plane;
        std::fill(dst, dst + out_plane, Scalar{});
        if (cols.lo == cols.hi) continue;
        const Scalar* xc = x + ci * g.in.plane();
        for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
          const Scalar* xr = xc + (oh * g.stride + kh - g.pad) * g.in.w;
          Scalar* drow = dst + oh * g.w_out;
          if (g.stride == 1) {
            std::copy(xr + cols.lo + kw - g.pad, xr + cols.hi + kw - g.pad, drow + cols.lo);
            continue;
          }
          for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) drow[ow] = xr[ow * g.stride + kw - g.pad];
        }
      }
    }
  }
}

// Scatter-add of a patch-matrix gradient back onto the image gradient.
template <typename Scalar>
void col2im_add(const Scalar* patch, const ConvGeometry& g, Scalar* gx) {
  const std::size_t out_plane = g.h_out * g.w_out;
  for (std::size_t kh = 0; kh < g.k; ++kh) {
    const auto rows = valid_outputs(g.h_out, g.in.h, kh, g.stride, g.pad);
    for (std::size_t kw = 0; kw < g.k; ++kw) {
      const auto cols = valid_outputs(g.w_out, g.in.w, kw, g.stride, g.pad);
      if (cols.lo == cols.hi) continue;
      for (std::size_t ci = 0; ci < g.in.c; ++ci) {
        const Scalar* src = patch + ((kh * g.k + kw) * g.in.c + ci) * out_plane;
        Scalar* gc = gx + ci * g.in.plane();
        for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
          Scalar* gr = gc + (oh * g.stride + kh - g.pad) * g.in.w;
          const Scalar* srow = src + oh * g.w_out;
          if (g.stride == 1) {
            Scalar* gs = gr + kw - g.pad;
            for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) gs[ow] += srow[ow];
            continue;
          }
          for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) gr[ow * g.stride + kw - g.pad] += srow[ow];
        }
      }
    }
  }
}

// Fixed-order dot product with eight interleaved partial sums.
template <typename Scalar>
inline Scalar blocked_dot(const Scalar* a, const Scalar* b, std::size_t len) {
  constexpr std::size_t kLanes = 8;
  Scalar lanes[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= len; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) lanes[j] += a[i + j] * b[i + j];
  }
  for (std::size_t j = 0; i < len; ++i, ++j) lanes[j] += a[i] * b[i];
  Scalar sum{};
  for (Scalar v : lanes) sum += v;
  return sum;
}

// out[j] += sum_r coef[r] * rows[r][j], added strictly in ascending r. Eight
// rows are folded per pass so out[j] stays in a register between additions.
template <typename Scalar>
inline void accumulate_rows(Scalar* out, const Scalar* coef, const Scalar* rows, std::size_t count, std::size_t len) {
  std::size_t r = 0;
  for (; r + 8 <= count; r += 8) {
    const Scalar* p = rows + r * len;
    const Scalar c0 = coef[r], c1 = coef[r + 1], c2 = coef[r + 2], c3 = coef[r + 3];
    const Scalar c4 = coef[r + 4], c5 = coef[r + 5], c6 = coef[r + 6], c7 = coef[r + 7];
    for (std::size_t j = 0; j < len; ++j) {
      Scalar a = out[j];
      a += c0 * p[j];
      a += c1 * p[len + j];
      a += c2 * p[2 * len + j];
      a += c3 * p[3 * len + j];
      a += c4 * p[4 * len + j];
      a += c5 * p[5 * len + j];
      a += c6 * p[6 * len + j];
      a += c7 * p[7 * len + j];
      out[j] = a;
    }
  }
  for (; r < count; ++r) {
    const Scalar c = coef[r];
    const Scalar* p = rows + r * len;
    for (std::size_t j = 0; j < len; ++j) out[j] += c * p[j];
  }
}

// The float kernels get an AVX2 clone picked at load time. Both clones run
// the same scalar operations in the same order (no FMA contraction in ISO C++
// mode), so results are identical on every machine.
#if defined(__x86_64__) && defined(__GNUC__) && defined(__linux__)
#define TSM_CLONES __attribute__((target_clones("avx2", "default")))
#else
#define TSM_CLONES
#endif

TSM_CLONES float blocked_dot(const float* a, const float* b, std::size_t len) {
  return blocked_dot<float>(a, b, len);
}

TSM_CLONES void accumulate_rows(float* out, const float* coef, const float* rows, std::size_t count,
                                std::size_t len) {
  accumulate_rows<float>(out, coef, rows, count, len);
}

#undef TSM_CLONES

}  // namespace

template <typename Scalar>
BasicTensor<Scalar> conv2d_forward(const BasicTensor<Scalar>& x, const BasicConv2dParams<Scalar>& p) {
  const auto g = conv_geometry(x, p);
  auto out = make_frame<Scalar>({g.in.n, g.c_out, g.h_out, g.w_out});
  const std::size_t out_plane = g.h_out * g.w_out;
  const std::size_t taps = g.in.c * g.k * g.k;
  // Weights re-ordered to the patch row order: wt[co][(kh * K + kw) * C_in + ci].
  std::vector<Scalar> wt(g.c_out * taps);
  for (std::size_t co = 0; co < g.c_out; ++co) {
    for (std::size_t ci = 0; ci < g.in.c; ++ci) {
      for (std::size_t t = 0; t < g.k * g.k; ++t) {
        wt[co * taps + t * g.in.c + ci] = p.weights[(co * g.in.c + ci) * g.k * g.k + t];
      }
    }
  }
  std::vector<Scalar> patch(taps * out_plane);
  for (std::size_t n = 0; n < g.in.n; ++n) {
    im2col(x.data().data() + n * g.in.c * g.in.plane(), g, patch.data());
    Scalar* on = out.data().data() + n * g.c_out * out_plane;
    for (std::size_t co = 0; co < g.c_out; ++co) {
      Scalar* o = on + co * out_plane;
      std::fill(o, o + out_plane, p.bias[co]);
      accumulate_rows(o, wt.data() + co * taps, patch.data(), taps, out_plane);
    }
  }
  return out;
}

template <typename Scalar>
ParamGrads<Scalar> conv2d_backward(const BasicTensor<Scalar>& x, const BasicConv2dParams<Scalar>& p,
                                   const BasicTensor<Scalar>& grad_out) {
  const auto g = conv_geometry(x, p);
  const FrameShape expected{g.in.n, g.c_out, g.h_out, g.w_out};
  if (frame_shape(grad_out) != expected) {
    throw InvalidShape("conv grad_out " + describe(grad_out.extents(), grad_out.labels()) +
                       " does not match forward output");
  }
  ParamGrads<Scalar> r{BasicTensor<Scalar>::zeros(x.extents(), x.labels()),
                       BasicTensor<Scalar>::zeros(p.weights.extents(), p.weights.labels()),
                       BasicTensor<Scalar>::zeros(p.bias.extents(), p.bias.labels())};
  const std::size_t out_plane = g.h_out * g.w_out;
  const std::size_t kk = g.k * g.k;
  const std::size_t taps = g.in.c * kk;
  // Transposed weights: wt[row][co] with row in patch order.
  std::vector<Scalar> wt(taps * g.c_out);
  for (std::size_t co = 0; co < g.c_out; ++co) {
    for (std::size_t ci = 0; ci < g.in.c; ++ci) {
      for (std::size_t t = 0; t < kk; ++t) wt[(t * g.in.c + ci) * g.c_out + co] = p.weights[(co * g.in.c + ci) * kk + t];
    }
  }
  std::vector<Scalar> patch(taps * out_plane);
  std::vector<Scalar> grad_patch(taps * out_plane);
  for (std::size_t n = 0; n < g.in.n; ++n) {
    im2col(x.data().data() + n * g.in.c * g.in.plane(), g, patch.data());
    const Scalar* gn = grad_out.data().data() + n * g.c_out * out_plane;
    for (std::size_t co = 0; co < g.c_out; ++co) {
      const Scalar* go = gn + co * out_plane;
      Scalar bsum{};
      for (std::size_t j = 0; j < out_plane; ++j) bsum += go[j];
      r.grad_b[co] += bsum;
      for (std::size_t ci = 0; ci < g.in.c; ++ci) {
        for (std::size_t t = 0; t < kk; ++t) {
          r.grad_w[(co * g.in.c + ci) * kk + t] += blocked_dot(go, patch.data() + (t * g.in.c + ci) * out_plane, out_plane);
        }
      }
    }
    for (std::size_t row = 0; row < taps; ++row) {
      Scalar* gp = grad_patch.data() + row * out_plane;
      std::fill(gp, gp + out_plane, Scalar{});
      accumulate_rows(gp, wt.data() + row * g.c_out, gn, g.c_out, out_plane);
    }
    col2im_add(grad_patch.data(), g, r.grad_x.data().data() + n * g.in.c * g.in.plane());
  }
  return r;
}

template <typename Scalar>
BasicTensor<Scalar> relu_forward(const BasicTensor<Scalar>& x) {
  BasicTensor<Scalar> out = x;
  for (Scalar& v : out.data()) v = v > Scalar{0} ? v : Scalar{0};
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> relu_backward(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& grad_out) {
  require_same_extents(x, grad_out);
  BasicTensor<Scalar> out = grad_out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(x[i] > Scalar{0})) out[i] = Scalar{0};
  }
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> global_avg_pool_forward(const BasicTensor<Scalar>& x) {
  const auto s = frame_shape(x);
  auto out = BasicTensor<Scalar>::zeros({s.n, s.c}, kMatrixAxes);
  const std::size_t hw = s.plane();
  for (std::size_t i = 0; i < s.n * s.c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < hw; ++j) acc += static_cast<double>(x[i * hw + j]);
    out[i] = static_cast<Scalar>(acc / static_cast<double>(hw));
  }
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> global_avg_pool_backward(const BasicTensor<Scalar>& grad_out, const FrameShape& input) {
  if (grad_out.extents() != Extents{input.n, input.c}) {
    throw InvalidShape("pool grad_out " + describe(grad_out.extents(), grad_out.labels()) + " does not match input");
  }
  auto out = make_frame<Scalar>(input);
  const std::size_t hw = input.plane();
  const Scalar scale = Scalar{1} / static_cast<Scalar>(hw);
  for (std::size_t i = 0; i < input.n * input.c; ++i) {
    std::fill_n(out.data().begin() + static_cast<std::ptrdiff_t>(i * hw), hw, grad_out[i] * scale);
  }
  return out;
}

namespace {

template <typename Scalar>
std::size_t linear_batch(const BasicTensor<Scalar>& x, const BasicLinearParams<Scalar>& p) {
  p.validate();
  if (x.rank() != 2 || x.extent(1) != p.in_features()) {
    throw InvalidShape("linear expects (N, " + std::to_string(p.in_features()) + "), got " +
                       describe(x.extents(), x.labels()));
  }
  return x.extent(0);
}

}  // namespace

template <typename Scalar>
BasicTensor<Scalar> linear_forward(const BasicTensor<Scalar>& x, const BasicLinearParams<Scalar>& p) {
  const std::size_t n = linear_batch(x, p);
  const std::size_t in = p.in_features();
  const std::size_t outf = p.out_features();
  auto out = BasicTensor<Scalar>::zeros({n, outf}, kMatrixAxes);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < outf; ++o) {
      Scalar acc = p.bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += p.weights[o * in + i] * x[b * in + i];
      out[b * outf + o] = acc;
    }
  }
  return out;
}

template <typename Scalar>
ParamGrads<Scalar> linear_backward(const BasicTensor<Scalar>& x, const BasicLinearParams<Scalar>& p,
                                   const BasicTensor<Scalar>& grad_out) {
  const std::size_t n = linear_batch(x, p);
  const std::size_t in = p.in_features();
  const std::size_t outf = p.out_features();
  if (grad_out.extents() != Extents{n, outf}) {
    throw InvalidShape("linear grad_out " + describe(grad_out.extents(), grad_out.labels()) +
                       " does not match forward output");
  }
  ParamGrads<Scalar> r{BasicTensor<Scalar>::zeros(x.extents(), x.labels()),
                       BasicTensor<Scalar>::zeros(p.weights.extents(), p.weights.labels()),
                       BasicTensor<Scalar>::zeros(p.bias.extents(), p.bias.labels())};
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < outf; ++o) {
      const Scalar g = grad_out[b * outf + o];
      r.grad_b[o] += g;
      for (std::size_t i = 0; i < in; ++i) {
        r.grad_w[o * in + i] += g * x[b * in + i];
        r.grad_x[b * in + i] += g * p.weights[o * in + i];
      }
    }
  }
  return r;
}

template <typename Scalar>
LossAndGrad<Scalar> softmax_cross_entropy(std::span<const Scalar> logits, std::size_t label) {
  if (logits.empty()) throw InvalidShape("softmax over zero classes");
  if (label >= logits.size()) {
    throw IndexError("label " + std::to_string(label) + " outside " + std::to_string(logits.size()) + " classes");
  }
  const double m = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
  double z = 0.0;
  for (Scalar v : logits) z += std::exp(static_cast<double>(v) - m);
  const double log_z = std::log(z);
  LossAndGrad<Scalar> r{static_cast<Scalar>(log_z - (static_cast<double>(logits[label]) - m)), {}};
  r.grad_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double prob = std::exp(static_cast<double>(logits[i]) - m - log_z);
    r.grad_logits[i] = static_cast<Scalar>(prob - (i == label ? 1.0 : 0.0));
  }
  return r;
}

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_extents(a, b);
  BasicTensor<Scalar> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

#define TSM_INSTANTIATE_NN(S)                                                                                 \
  template struct BasicConv2dParams<S>;                                                                       \
  template struct BasicLinearParams<S>;                                                                       \
  template BasicTensor<S> conv2d_forward(const BasicTensor<S>&, const BasicConv2dParams<S>&);                 \
  template ParamGrads<S> conv2d_backward(const BasicTensor<S>&, const BasicConv2dParams<S>&,                  \
                                         const BasicTensor<S>&);                                              \
  template BasicTensor<S> relu_forward(const BasicTensor<S>&);                                                \
  template BasicTensor<S> relu_backward(const BasicTensor<S>&, const BasicTensor<S>&);                        \
  template BasicTensor<S> global_avg_pool_forward(const BasicTensor<S>&);                                     \
  template BasicTensor<S> global_avg_pool_backward(const BasicTensor<S>&, const FrameShape&);                 \
  template BasicTensor<S> linear_forward(const BasicTensor<S>&, const BasicLinearParams<S>&);                 \
  template ParamGrads<S> linear_backward(const BasicTensor<S>&, const BasicLinearParams<S>&,                  \
                                         const BasicTensor<S>&);                                              \
  template LossAndGrad<S> softmax_cross_entropy(std::span<const S>, std::size_t);                             \
  template BasicTensor<S> add(const BasicTensor<S>&, const BasicTensor<S>&);

TSM_INSTANTIATE_NN(float)
TSM_INSTANTIATE_NN(double)

#undef TSM_INSTANTIATE_NN

}  // namespace tsm
