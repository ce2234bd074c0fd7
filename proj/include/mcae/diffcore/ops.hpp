#pragma once

#include <span>
#include <utility>
#include <vector>

#include "mcae/diffcore/tape.hpp"

namespace mcae::diffcore {

// Elementwise arithmetic. Operands of binary ops must have equal shapes.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> x, T c);
template <typename T> Var<T> add_scalar(Var<T> x, T c);

// `b` is broadcast over the leading axes of `x`; its shape must equal the
// trailing axes of `x`.
template <typename T> Var<T> add_bias(Var<T> x, Var<T> b);

// Multiplies every trailing block of `x` by the matching entry of `w`, where
// w.shape is a prefix of x.shape.
template <typename T> Var<T> mul_prefix(Var<T> x, Var<T> w);

template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> tanh(Var<T> x);
template <typename T> Var<T> leaky_relu(Var<T> x, T slope);
template <typename T> Var<T> exp(Var<T> x);
template <typename T> Var<T> log(Var<T> x);
template <typename T> Var<T> square(Var<T> x);
template <typename T> Var<T> sin(Var<T> x);
template <typename T> Var<T> cos(Var<T> x);
// max(-t, min(x, t)); gradient 1 on [-t, t] (boundary included), 0 outside.
template <typename T> Var<T> clamp(Var<T> x, T t);

// Matrix product over the trailing axis of `a` (leading axes are flattened
// into rows) and a rank-2 `b`. Transposes are applied to the 2-D views.
template <typename T> Var<T> matmul(Var<T> a, Var<T> b, bool transpose_a = false, bool transpose_b = false);

// y = x W^T + b for W stored as out x in; x's trailing axis is `in`.
template <typename T> Var<T> affine(Var<T> x, Var<T> w, Var<T> b);

// Independent affine maps per group: x is B x G x in, w is G x out x in,
// b is G x out; y[b, g] = w[g] x[b, g] + b[g].
template <typename T> Var<T> grouped_affine(Var<T> x, Var<T> w, Var<T> b);

template <typename T> Var<T> reshape(Var<T> x, Shape shape);
template <typename T> Var<T> slice(Var<T> x, int axis, int start, int length);
template <typename T> Var<T> concat(const std::vector<Var<T>>& xs, int axis);

template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
template <typename T> Var<T> sum_squares(Var<T> x);
// Sum over the trailing axis.
template <typename T> Var<T> sum_last(Var<T> x);

// Each row (trailing axis) divided by max(||row||, eps).
template <typename T> Var<T> row_normalize(Var<T> x, T eps = T(1e-8));
// Per-row cosine similarity of two equally shaped arrays.
template <typename T> Var<T> cosine_similarity(Var<T> a, Var<T> b, T eps = T(1e-8));

// Batched cross-correlation. input: N x C_in x L_in (or C_in x L_in),
// kernel: C_out x C_in x k, bias: C_out. Zero padding.
template <typename T> Var<T> conv1d(Var<T> input, Var<T> kernel, Var<T> bias, int stride, int padding);

inline int conv1d_out_length(int length, int kernel, int stride, int padding) {
  return (length + 2 * padding - kernel) / stride + 1;
}

// Buffers owned by the caller; updated in place when training.
template <typename T>
struct BatchNormState {
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

// Normalizes an N x C x L array per channel over (N, L). Training mode uses
// the batch statistics and updates the running ones.
template <typename T>
Var<T> batch_norm1d(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T> state, bool training);

template <typename T>
struct LstmWeights {
  Var<T> w_input;   // 4H x in, gate order i, f, g, o
  Var<T> w_hidden;  // 4H x H
  Var<T> b_input;   // 4H
  Var<T> b_hidden;  // 4H
};

// One LSTM step on a batch: x is B x in, h and c are B x H.
template <typename T>
std::pair<Var<T>, Var<T>> lstm_step(Var<T> x, Var<T> h, Var<T> c, const LstmWeights<T>& w);

// Same as lstm_step with the input projection x W_i^T + b_i precomputed.
template <typename T>
std::pair<Var<T>, Var<T>> lstm_step_projected(Var<T> x_proj, Var<T> h, Var<T> c, const LstmWeights<T>& w);

// Mean over rows of -log softmax(logits)[label].
template <typename T> Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);

// Rowwise contrastive term over a B x B logit matrix:
//   mean_i ( -z_ii + log sum_{j != i} exp(z_ij) ).
// With include_positive the j = i term joins the denominator.
template <typename T> Var<T> contrastive_rows(Var<T> logits, bool include_positive = false);

template <typename T> inline Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> inline Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> inline Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

}  // namespace mcae::diffcore
