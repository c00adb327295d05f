#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tsm/tensor.hpp"

namespace tsm {

// Labels used for parameter and feature tensors: a conv kernel (C_out, C_in, K, K)
// is tagged (N,C,H,W), a linear matrix (out, in) and a feature batch (N, F) are
// tagged (N,C), and bias vectors (C).
inline const AxisLabels kMatrixAxes{Axis::N, Axis::C};
inline const AxisLabels kVectorAxes{Axis::C};

template <typename Scalar>
struct BasicConv2dParams {
  BasicTensor<Scalar> weights;  // (C_out, C_in, K, K)
  BasicTensor<Scalar> bias;     // (C_out)
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return weights.extent(0); }
  std::size_t in_channels() const { return weights.extent(1); }
  std::size_t kernel() const { return weights.extent(2); }
  void validate() const;
};

template <typename Scalar>
struct BasicLinearParams {
  BasicTensor<Scalar> weights;  // (out_features, in_features)
  BasicTensor<Scalar> bias;     // (out_features)

  std::size_t out_features() const { return weights.extent(0); }
  std::size_t in_features() const { return weights.extent(1); }
  void validate() const;
};

using Conv2dParams = BasicConv2dParams<float>;
using LinearParams = BasicLinearParams<float>;

template <typename Scalar>
struct ParamGrads {
  BasicTensor<Scalar> grad_x;
  BasicTensor<Scalar> grad_w;
  BasicTensor<Scalar> grad_b;
};

// floor((in + 2 pad - k) / stride) + 1; throws InvalidShape when not positive.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

// Cross-correlation with bias over an (N,C,H,W) batch. Every output element is
// accumulated as bias first, then over (kh, kw, c_in) with c_in varying fastest,
// so results are reproducible bit for bit for a given input.
template <typename Scalar>
BasicTensor<Scalar> conv2d_forward(const BasicTensor<Scalar>& x, const BasicConv2dParams<Scalar>& p);

template <typename Scalar>
ParamGrads<Scalar> conv2d_backward(const BasicTensor<Scalar>& x, const BasicConv2dParams<Scalar>& p,
                                   const BasicTensor<Scalar>& grad_out);

template <typename Scalar>
BasicTensor<Scalar> relu_forward(const BasicTensor<Scalar>& x);

// `x` is the relu input; the gradient passes where x > 0.
template <typename Scalar>
BasicTensor<Scalar> relu_backward(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& grad_out);

// (N,C,H,W) -> (N,C) spatial mean.
template <typename Scalar>
BasicTensor<Scalar> global_avg_pool_forward(const BasicTensor<Scalar>& x);

template <typename Scalar>
BasicTensor<Scalar> global_avg_pool_backward(const BasicTensor<Scalar>& grad_out, const FrameShape& input);

// (N, in) -> (N, out).
template <typename Scalar>
BasicTensor<Scalar> linear_forward(const BasicTensor<Scalar>& x, const BasicLinearParams<Scalar>& p);

template <typename Scalar>
ParamGrads<Scalar> linear_backward(const BasicTensor<Scalar>& x, const BasicLinearParams<Scalar>& p,
                                   const BasicTensor<Scalar>& grad_out);

template <typename Scalar>
struct LossAndGrad {
  Scalar loss;
  std::vector<Scalar> grad_logits;
};

// Softmax with max subtraction followed by negative log-likelihood of `label`.
template <typename Scalar>
LossAndGrad<Scalar> softmax_cross_entropy(std::span<const Scalar> logits, std::size_t label);

// Element-wise a + b.
template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);

}  // namespace tsm
