#include "mcae/diffcore/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace mcae::diffcore {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
MatMap<T> as_mat(Tensor<T>& t, int rows, int cols) {
  return MatMap<T>(t.data.data(), rows, cols);
}
template <typename T>
ConstMatMap<T> as_mat(const Tensor<T>& t, int rows, int cols) {
  return ConstMatMap<T>(t.data.data(), rows, cols);
}

// Message arguments are only built when the check fails.
#define MCAE_REQUIRE(ok, what)          \
  do {                                  \
    if (!(ok)) throw ConfigError(what); \
  } while (0)

void require_same(const Shape& a, const Shape& b, const char* op) {
  MCAE_REQUIRE(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
void accumulate(Tape<T>& tape, Var<T> v, const Tensor<T>& g) {
  if (Tensor<T>* slot = tape.grad_slot(v)) {
    for (std::size_t i = 0; i < g.size(); ++i) slot->data[i] += g.data[i];
  }
}

// Elementwise unary op given f(x) and f'(x, y=f(x)).
template <typename T, typename F, typename D>
Var<T> unary(Var<T> x, F f, D df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape, std::vector<T>(xv.size()));
  for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = f(xv.data[i]);
  return x.tape->push(std::move(out), {x}, [x, df](Tape<T>& tape, const Tensor<T>& y, const Tensor<T>& gy) {
    Tensor<T>* gx = tape.grad_slot(x);
    if (!gx) return;
    const Tensor<T>& xv = tape.value(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx->data[i] += gy.data[i] * df(xv.data[i], y.data[i]);
  });
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
    accumulate(tape, a, g);
    accumulate(tape, b, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
    accumulate(tape, a, g);
    if (Tensor<T>* gb = tape.grad_slot(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb->data[i] -= g.data[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    if (Tensor<T>* ga = tape.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] * bv.data[i];
    }
    if (Tensor<T>* gb = tape.grad_slot(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb->data[i] += g.data[i] * av.data[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T c) {
  return unary(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T c) {
  return unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  const Shape& xs = x.shape();
  const Shape& bs = b.shape();
  MCAE_REQUIRE(bs.size() <= xs.size() && std::equal(bs.begin(), bs.end(), xs.end() - bs.size()),
          "add_bias: bias shape " + shape_str(bs) + " is not a suffix of " + shape_str(xs));
  const std::size_t inner = b.size();
  const std::size_t outer = x.size() / inner;
  Tensor<T> out = x.value();
  const auto& bv = b.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out.data[o * inner + i] += bv.data[i];
  return x.tape->push(std::move(out), {x, b},
                      [x, b, inner, outer](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                        accumulate(tape, x, g);
                        if (Tensor<T>* gb = tape.grad_slot(b)) {
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t i = 0; i < inner; ++i) gb->data[i] += g.data[o * inner + i];
                        }
                      });
}

template <typename T>
Var<T> mul_prefix(Var<T> x, Var<T> w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  MCAE_REQUIRE(ws.size() <= xs.size() && std::equal(ws.begin(), ws.end(), xs.begin()),
          "mul_prefix: weight shape " + shape_str(ws) + " is not a prefix of " + shape_str(xs));
  const std::size_t outer = w.size();
  const std::size_t inner = x.size() / outer;
  Tensor<T> out = x.value();
  const auto& wv = w.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out.data[o * inner + i] *= wv.data[o];
  return x.tape->push(std::move(out), {x, w},
                      [x, w, inner, outer](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                        const auto& xv = tape.value(x);
                        const auto& wv = tape.value(w);
                        if (Tensor<T>* gx = tape.grad_slot(x)) {
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t i = 0; i < inner; ++i)
                              gx->data[o * inner + i] += g.data[o * inner + i] * wv.data[o];
                        }
                        if (Tensor<T>* gw = tape.grad_slot(w)) {
                          for (std::size_t o = 0; o < outer; ++o) {
                            T acc = 0;
                            for (std::size_t i = 0; i < inner; ++i)
                              acc += g.data[o * inner + i] * xv.data[o * inner + i];
                            gw->data[o] += acc;
                          }
                        }
                      });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary(
      x,
      [](T v) {
        // Split by sign to avoid overflow in exp.
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  if (x.tape->tracking_branches())
    for (T v : x.value().data) x.tape->record_branch(v > 0 ? 1 : 2);
  return unary(
      x, [slope](T v) { return v > 0 ? v : slope * v; }, [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> x) {
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> square(Var<T> x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> sin(Var<T> x) {
  return unary(x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <typename T>
Var<T> cos(Var<T> x) {
  return unary(x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

template <typename T>
Var<T> clamp(Var<T> x, T t) {
  if (x.tape->tracking_branches())
    for (T v : x.value().data) x.tape->record_branch(v < -t ? 3 : (v > t ? 4 : 5));
  return unary(
      x, [t](T v) { return std::max(-t, std::min(v, t)); },
      [t](T v, T) { return (v >= -t && v <= t) ? T(1) : T(0); });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_a, bool transpose_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  MCAE_REQUIRE(as.size() >= 2 || (as.size() == 1 && !transpose_a), "matmul: lhs must have rank >= 1");
  MCAE_REQUIRE(bs.size() == 2, "matmul: rhs must be rank 2, got " + shape_str(bs));
  const int a_cols_raw = as.back();
  const int a_rows_raw = static_cast<int>(a.size()) / a_cols_raw;
  MCAE_REQUIRE(!transpose_a || as.size() == 2, "matmul: transposed lhs must be rank 2");
  const int m = transpose_a ? a_cols_raw : a_rows_raw;
  const int k = transpose_a ? a_rows_raw : a_cols_raw;
  const int kb = transpose_b ? bs[1] : bs[0];
  const int n = transpose_b ? bs[0] : bs[1];
  MCAE_REQUIRE(k == kb, "matmul: inner dimensions disagree " + shape_str(as) + " x " + shape_str(bs));

  Shape out_shape;
  if (transpose_a) {
    out_shape = {m, n};
  } else {
    out_shape.assign(as.begin(), as.end() - 1);
    out_shape.push_back(n);
  }
  Tensor<T> out(out_shape);
  {
    auto A = as_mat(a.value(), a_rows_raw, a_cols_raw);
    auto B = as_mat(b.value(), bs[0], bs[1]);
    auto C = as_mat(out, m, n);
    if (!transpose_a && !transpose_b) C.noalias() = A * B;
    else if (!transpose_a && transpose_b) C.noalias() = A * B.transpose();
    else if (transpose_a && !transpose_b) C.noalias() = A.transpose() * B;
    else C.noalias() = A.transpose() * B.transpose();
  }
  return a.tape->push(
      std::move(out), {a, b},
      [=](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
        auto A = as_mat(tape.value(a), a_rows_raw, a_cols_raw);
        auto B = as_mat(tape.value(b), bs[0], bs[1]);
        auto G = as_mat(g, m, n);
        if (Tensor<T>* ga = tape.grad_slot(a)) {
          auto GA = as_mat(*ga, a_rows_raw, a_cols_raw);
          // C = op(A) op(B)
          if (!transpose_a && !transpose_b) GA.noalias() += G * B.transpose();
          else if (!transpose_a && transpose_b) GA.noalias() += G * B;
          else if (transpose_a && !transpose_b) GA.noalias() += B * G.transpose();
          else GA.noalias() += B.transpose() * G.transpose();
        }
        if (Tensor<T>* gb = tape.grad_slot(b)) {
          auto GB = as_mat(*gb, bs[0], bs[1]);
          if (!transpose_a && !transpose_b) GB.noalias() += A.transpose() * G;
          else if (!transpose_a && transpose_b) GB.noalias() += G.transpose() * A;
          else if (transpose_a && !transpose_b) GB.noalias() += A * G;
          else GB.noalias() += G.transpose() * A.transpose();
        }
      });
}

template <typename T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> b) {
  const Shape& ws = w.shape();
  MCAE_REQUIRE(ws.size() == 2, "affine: weight must be rank 2 (out x in)");
  MCAE_REQUIRE(b.shape() == Shape{ws[0]}, "affine: bias shape " + shape_str(b.shape()) + " for weight " + shape_str(ws));
  MCAE_REQUIRE(x.shape().back() == ws[1], "affine: input " + shape_str(x.shape()) + " vs weight " + shape_str(ws));
  return add_bias(matmul(x, w, false, true), b);
}

template <typename T>
Var<T> grouped_affine(Var<T> x, Var<T> w, Var<T> b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  MCAE_REQUIRE(xs.size() == 3 && ws.size() == 3, "grouped_affine: expects B x G x in and G x out x in");
  const int batch = xs[0], groups = xs[1], in = xs[2], out = ws[1];
  MCAE_REQUIRE(ws[0] == groups && ws[2] == in, "grouped_affine: weight " + shape_str(ws) + " for input " + shape_str(xs));
  MCAE_REQUIRE(b.shape() == (Shape{groups, out}), "grouped_affine: bias must be G x out");
  using Strided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
  using StridedOut = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
  // Group g of x is a B x in matrix with row stride G * in.
  Tensor<T> y(Shape{batch, groups, out});
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  for (int g = 0; g < groups; ++g) {
    Strided xg(xv.data.data() + static_cast<std::size_t>(g) * in, batch, in, Eigen::OuterStride<>(groups * in));
    ConstMatMap<T> wg(wv.data.data() + static_cast<std::size_t>(g) * out * in, out, in);
    StridedOut yg(y.data.data() + static_cast<std::size_t>(g) * out, batch, out, Eigen::OuterStride<>(groups * out));
    yg.noalias() = xg * wg.transpose();
    yg.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.data.data() + g * out, out);
  }
  return x.tape->push(std::move(y), {x, w, b}, [=](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& gy) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(w);
    Tensor<T>* gx = tape.grad_slot(x);
    Tensor<T>* gw = tape.grad_slot(w);
    Tensor<T>* gb = tape.grad_slot(b);
    for (int g = 0; g < groups; ++g) {
      Strided gg(gy.data.data() + static_cast<std::size_t>(g) * out, batch, out, Eigen::OuterStride<>(groups * out));
      if (gb) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb->data.data() + g * out, out) += gg.colwise().sum();
      }
      if (gw) {
        Strided xg(xv.data.data() + static_cast<std::size_t>(g) * in, batch, in, Eigen::OuterStride<>(groups * in));
        MatMap<T>(gw->data.data() + static_cast<std::size_t>(g) * out * in, out, in).noalias() += gg.transpose() * xg;
      }
      if (gx) {
        ConstMatMap<T> wg(wv.data.data() + static_cast<std::size_t>(g) * out * in, out, in);
        StridedOut(gx->data.data() + static_cast<std::size_t>(g) * in, batch, in, Eigen::OuterStride<>(groups * in))
            .noalias() += gg * wg;
      }
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  MCAE_REQUIRE(shape_size(shape) == x.size(), "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<T> out(std::move(shape), x.value().data);
  return x.tape->push(std::move(out), {x},
                      [x](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) { accumulate(tape, x, g); });
}

template <typename T>
Var<T> slice(Var<T> x, int axis, int start, int length) {
  const Shape& xs = x.shape();
  if (axis < 0) axis += static_cast<int>(xs.size());
  MCAE_REQUIRE(axis >= 0 && axis < static_cast<int>(xs.size()), "slice: axis out of range");
  MCAE_REQUIRE(start >= 0 && length > 0 && start + length <= xs[axis],
          "slice: range [" + std::to_string(start) + ", +" + std::to_string(length) + ") outside " + shape_str(xs));
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t extent = xs[axis];
  Shape os = xs;
  os[axis] = length;
  Tensor<T> out(os);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data.begin() + (o * extent + start) * inner, length * inner,
                out.data.begin() + o * length * inner);
  return x.tape->push(std::move(out), {x},
                      [=](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                        Tensor<T>* gx = tape.grad_slot(x);
                        if (!gx) return;
                        for (std::size_t o = 0; o < outer; ++o) {
                          T* dst = gx->data.data() + (o * extent + start) * inner;
                          const T* src = g.data.data() + o * length * inner;
                          for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
                        }
                      });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  MCAE_REQUIRE(!xs.empty(), "concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis < 0) axis += static_cast<int>(s0.size());
  MCAE_REQUIRE(axis >= 0 && axis < static_cast<int>(s0.size()), "concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<int> extents;
  int total = 0;
  for (const auto& v : xs) {
    Shape s = v.shape();
    MCAE_REQUIRE(s.size() == s0.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis) MCAE_REQUIRE(s[i] == s0[i], "concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    }
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  Tensor<T> out(os);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = o * total * inner;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const auto& v = xs[k].value();
      const std::size_t chunk = extents[k] * inner;
      std::copy_n(v.data.begin() + o * chunk, chunk, out.data.begin() + offset);
      offset += chunk;
    }
  }
  return xs[0].tape->push(std::move(out), xs,
                          [=](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                            for (std::size_t o = 0; o < outer; ++o) {
                              std::size_t offset = o * total * inner;
                              for (std::size_t k = 0; k < xs.size(); ++k) {
                                const std::size_t chunk = extents[k] * inner;
                                if (Tensor<T>* gx = tape.grad_slot(xs[k])) {
                                  T* dst = gx->data.data() + o * chunk;
                                  for (std::size_t i = 0; i < chunk; ++i) dst[i] += g.data[offset + i];
                                }
                                offset += chunk;
                              }
                            }
                          });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T acc = 0;
  for (T v : x.value().data) acc += v;
  return x.tape->push(Tensor<T>::scalar(acc), {x}, [x](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
    if (Tensor<T>* gx = tape.grad_slot(x))
      for (auto& v : gx->data) v += g.data[0];
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Var<T> sum_squares(Var<T> x) {
  T acc = 0;
  for (T v : x.value().data) acc += v * v;
  return x.tape->push(Tensor<T>::scalar(acc), {x}, [x](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
    if (Tensor<T>* gx = tape.grad_slot(x)) {
      const auto& xv = tape.value(x);
      for (std::size_t i = 0; i < xv.size(); ++i) gx->data[i] += T(2) * xv.data[i] * g.data[0];
    }
  });
}

template <typename T>
Var<T> sum_last(Var<T> x) {
  const Shape& xs = x.shape();
  MCAE_REQUIRE(!xs.empty(), "sum_last: rank-0 input");
  const std::size_t inner = xs.back();
  const std::size_t outer = x.size() / inner;
  Shape os(xs.begin(), xs.end() - 1);
  Tensor<T> out(os);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    T acc = 0;
    for (std::size_t i = 0; i < inner; ++i) acc += xv.data[o * inner + i];
    out.data[o] = acc;
  }
  return x.tape->push(std::move(out), {x}, [=](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
    if (Tensor<T>* gx = tape.grad_slot(x))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) gx->data[o * inner + i] += g.data[o];
  });
}

template <typename T>
Var<T> row_normalize(Var<T> x, T eps) {
  const Shape& xs = x.shape();
  const std::size_t inner = xs.back();
  const std::size_t outer = x.size() / inner;
  const auto& xv = x.value();
  Tensor<T> out(xs);
  std::vector<T> norms(outer);
  for (std::size_t o = 0; o < outer; ++o) {
    T ss = 0;
    for (std::size_t i = 0; i < inner; ++i) ss += xv.data[o * inner + i] * xv.data[o * inner + i];
    norms[o] = std::sqrt(ss);
    const T d = std::max(norms[o], eps);
    for (std::size_t i = 0; i < inner; ++i) out.data[o * inner + i] = xv.data[o * inner + i] / d;
  }
  return x.tape->push(std::move(out), {x}, [=](Tape<T>& tape, const Tensor<T>& y, const Tensor<T>& g) {
    Tensor<T>* gx = tape.grad_slot(x);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o) {
      const T* yr = y.data.data() + o * inner;
      const T* gr = g.data.data() + o * inner;
      T* dr = gx->data.data() + o * inner;
      if (norms[o] > eps) {
        // d(x/|x|) = (g - y (y.g)) / |x|
        T yg = 0;
        for (std::size_t i = 0; i < inner; ++i) yg += yr[i] * gr[i];
        for (std::size_t i = 0; i < inner; ++i) dr[i] += (gr[i] - yr[i] * yg) / norms[o];
      } else {
        for (std::size_t i = 0; i < inner; ++i) dr[i] += gr[i] / eps;
      }
    }
  });
}

template <typename T>
Var<T> cosine_similarity(Var<T> a, Var<T> b, T eps) {
  require_same(a.shape(), b.shape(), "cosine_similarity");
  return sum_last(mul(row_normalize(a, eps), row_normalize(b, eps)));
}

template <typename T>
Var<T> conv1d(Var<T> input, Var<T> kernel, Var<T> bias, int stride, int padding) {
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  MCAE_REQUIRE(is.size() == 2 || is.size() == 3, "conv1d: input must be N x C x L or C x L, got " + shape_str(is));
  MCAE_REQUIRE(ks.size() == 3, "conv1d: kernel must be C_out x C_in x k, got " + shape_str(ks));
  MCAE_REQUIRE(stride >= 1 && padding >= 0, "conv1d: stride must be >= 1 and padding >= 0");
  const bool batched = is.size() == 3;
  const int n = batched ? is[0] : 1;
  const int cin = is[is.size() - 2];
  const int lin = is.back();
  const int cout = ks[0];
  const int k = ks[2];
  MCAE_REQUIRE(ks[1] == cin, "conv1d: kernel expects " + std::to_string(ks[1]) + " input channels, got " + std::to_string(cin));
  MCAE_REQUIRE(bias.shape() == Shape{cout}, "conv1d: bias shape " + shape_str(bias.shape()));
  MCAE_REQUIRE(lin + 2 * padding >= k, "conv1d: input length too short for kernel");
  const int lout = conv1d_out_length(lin, k, stride, padding);
  const int ck = cin * k;

  // im2col: (n * lout) x (cin * k)
  auto cols = std::make_shared<Tensor<T>>(Shape{n * lout, ck});
  const auto& xv = input.value();
  for (int b = 0; b < n; ++b)
    for (int t = 0; t < lout; ++t) {
      T* row = cols->data.data() + static_cast<std::size_t>(b * lout + t) * ck;
      for (int c = 0; c < cin; ++c)
        for (int j = 0; j < k; ++j) {
          const int src = t * stride - padding + j;
          row[c * k + j] = (src >= 0 && src < lin) ? xv.data[(static_cast<std::size_t>(b) * cin + c) * lin + src] : T(0);
        }
    }
  RowMat<T> prod = as_mat(*cols, n * lout, ck) * as_mat(kernel.value(), cout, ck).transpose();
  Shape os = batched ? Shape{n, cout, lout} : Shape{cout, lout};
  Tensor<T> out(os);
  const auto& bv = bias.value();
  for (int b = 0; b < n; ++b)
    for (int co = 0; co < cout; ++co)
      for (int t = 0; t < lout; ++t)
        out.data[(static_cast<std::size_t>(b) * cout + co) * lout + t] = prod(b * lout + t, co) + bv.data[co];

  return input.tape->push(
      std::move(out), {input, kernel, bias}, [=](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
        RowMat<T> G(n * lout, cout);
        for (int b = 0; b < n; ++b)
          for (int co = 0; co < cout; ++co)
            for (int t = 0; t < lout; ++t) G(b * lout + t, co) = g.data[(static_cast<std::size_t>(b) * cout + co) * lout + t];
        if (Tensor<T>* gb = tape.grad_slot(bias)) {
          for (int co = 0; co < cout; ++co) gb->data[co] += G.col(co).sum();
        }
        if (Tensor<T>* gk = tape.grad_slot(kernel)) {
          as_mat(*gk, cout, ck).noalias() += G.transpose() * as_mat(*cols, n * lout, ck);
        }
        if (Tensor<T>* gx = tape.grad_slot(input)) {
          RowMat<T> dcols = G * as_mat(tape.value(kernel), cout, ck);
          for (int b = 0; b < n; ++b)
            for (int t = 0; t < lout; ++t)
              for (int c = 0; c < cin; ++c)
                for (int j = 0; j < k; ++j) {
                  const int src = t * stride - padding + j;
                  if (src >= 0 && src < lin)
                    gx->data[(static_cast<std::size_t>(b) * cin + c) * lin + src] += dcols(b * lout + t, c * k + j);
                }
        }
      });
}

template <typename T>
Var<T> batch_norm1d(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T> state, bool training) {
  const Shape& xs = x.shape();
  MCAE_REQUIRE(xs.size() == 3, "batch_norm1d: input must be N x C x L, got " + shape_str(xs));
  const int n = xs[0], c = xs[1], l = xs[2];
  MCAE_REQUIRE(gamma.shape() == Shape{c} && beta.shape() == Shape{c}, "batch_norm1d: affine parameters must have C entries");
  MCAE_REQUIRE(state.running_mean && state.running_var, "batch_norm1d: missing running statistics");
  const std::size_t count = static_cast<std::size_t>(n) * l;
  const auto& xv = x.value();
  std::vector<T> mu(c), inv_std(c);
  if (training) {
    MCAE_REQUIRE(count > 1, "batch_norm1d: training mode needs more than one value per channel");
    for (int ch = 0; ch < c; ++ch) {
      T s = 0;
      for (int b = 0; b < n; ++b)
        for (int t = 0; t < l; ++t) s += xv.data[(static_cast<std::size_t>(b) * c + ch) * l + t];
      const T m = s / static_cast<T>(count);
      T ss = 0;
      for (int b = 0; b < n; ++b)
        for (int t = 0; t < l; ++t) {
          const T d = xv.data[(static_cast<std::size_t>(b) * c + ch) * l + t] - m;
          ss += d * d;
        }
      const T var = ss / static_cast<T>(count);
      mu[ch] = m;
      inv_std[ch] = T(1) / std::sqrt(var + state.eps);
      const T unbiased = ss / static_cast<T>(count - 1);
      T& rm = state.running_mean->data[ch];
      T& rv = state.running_var->data[ch];
      rm = (T(1) - state.momentum) * rm + state.momentum * m;
      rv = (T(1) - state.momentum) * rv + state.momentum * unbiased;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean->data[ch];
      inv_std[ch] = T(1) / std::sqrt(state.running_var->data[ch] + state.eps);
    }
  }
  auto xhat = std::make_shared<Tensor<T>>(xs);
  Tensor<T> out(xs);
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int t = 0; t < l; ++t) {
        const std::size_t i = (static_cast<std::size_t>(b) * c + ch) * l + t;
        xhat->data[i] = (xv.data[i] - mu[ch]) * inv_std[ch];
        out.data[i] = gv.data[ch] * xhat->data[i] + bv.data[ch];
      }
  return x.tape->push(
      std::move(out), {x, gamma, beta}, [=](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
        const auto& gv = tape.value(gamma);
        std::vector<T> sum_g(c, 0), sum_gx(c, 0);
        for (int b = 0; b < n; ++b)
          for (int ch = 0; ch < c; ++ch)
            for (int t = 0; t < l; ++t) {
              const std::size_t i = (static_cast<std::size_t>(b) * c + ch) * l + t;
              sum_g[ch] += g.data[i];
              sum_gx[ch] += g.data[i] * xhat->data[i];
            }
        if (Tensor<T>* gg = tape.grad_slot(gamma))
          for (int ch = 0; ch < c; ++ch) gg->data[ch] += sum_gx[ch];
        if (Tensor<T>* gb = tape.grad_slot(beta))
          for (int ch = 0; ch < c; ++ch) gb->data[ch] += sum_g[ch];
        if (Tensor<T>* gx = tape.grad_slot(x)) {
          const T cnt = static_cast<T>(count);
          for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch)
              for (int t = 0; t < l; ++t) {
                const std::size_t i = (static_cast<std::size_t>(b) * c + ch) * l + t;
                if (training) {
                  gx->data[i] += gv.data[ch] * inv_std[ch] *
                                 (g.data[i] - sum_g[ch] / cnt - xhat->data[i] * sum_gx[ch] / cnt);
                } else {
                  gx->data[i] += gv.data[ch] * inv_std[ch] * g.data[i];
                }
              }
        }
      });
}

template <typename T>
std::pair<Var<T>, Var<T>> lstm_step_projected(Var<T> x_proj, Var<T> h, Var<T> c, const LstmWeights<T>& w) {
  const Shape& hs = h.shape();
  MCAE_REQUIRE(hs.size() == 2 && c.shape() == hs, "lstm_step: h and c must be equally shaped B x H");
  const int hidden = hs[1];
  MCAE_REQUIRE(x_proj.shape() == (Shape{hs[0], 4 * hidden}), "lstm_step: projected input must be B x 4H");
  MCAE_REQUIRE(w.w_hidden.shape() == (Shape{4 * hidden, hidden}), "lstm_step: recurrent weight must be 4H x H");
  MCAE_REQUIRE(w.b_hidden.shape() == Shape{4 * hidden}, "lstm_step: recurrent bias must have 4H entries");
  Var<T> gates = add(x_proj, affine(h, w.w_hidden, w.b_hidden));
  Var<T> i = sigmoid(slice(gates, 1, 0, hidden));
  Var<T> f = sigmoid(slice(gates, 1, hidden, hidden));
  Var<T> g = tanh(slice(gates, 1, 2 * hidden, hidden));
  Var<T> o = sigmoid(slice(gates, 1, 3 * hidden, hidden));
  Var<T> c_next = add(mul(f, c), mul(i, g));
  Var<T> h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

template <typename T>
std::pair<Var<T>, Var<T>> lstm_step(Var<T> x, Var<T> h, Var<T> c, const LstmWeights<T>& w) {
  MCAE_REQUIRE(x.shape().size() == 2 && x.dim(0) == h.dim(0), "lstm_step: x must be B x in with matching batch");
  return lstm_step_projected(affine(x, w.w_input, w.b_input), h, c, w);
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  const Shape& ls = logits.shape();
  MCAE_REQUIRE(ls.size() == 2, "softmax_cross_entropy: logits must be B x C");
  const int rows = ls[0], classes = ls[1];
  if (static_cast<int>(labels.size()) != rows) throw DataError("softmax_cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= classes) throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
  auto probs = std::make_shared<Tensor<T>>(ls);
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  const auto& z = logits.value();
  T total = 0;
  for (int r = 0; r < rows; ++r) {
    const T* zr = z.data.data() + static_cast<std::size_t>(r) * classes;
    T* pr = probs->data.data() + static_cast<std::size_t>(r) * classes;
    const T mx = *std::max_element(zr, zr + classes);
    T se = 0;
    for (int j = 0; j < classes; ++j) {
      pr[j] = std::exp(zr[j] - mx);
      se += pr[j];
    }
    for (int j = 0; j < classes; ++j) pr[j] /= se;
    total += -(zr[(*lab)[r]] - mx - std::log(se));
  }
  return logits.tape->push(Tensor<T>::scalar(total / rows), {logits},
                           [=](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                             Tensor<T>* gz = tape.grad_slot(logits);
                             if (!gz) return;
                             const T s = g.data[0] / static_cast<T>(rows);
                             for (int r = 0; r < rows; ++r)
                               for (int j = 0; j < classes; ++j) {
                                 const std::size_t i = static_cast<std::size_t>(r) * classes + j;
                                 gz->data[i] += s * (probs->data[i] - (j == (*lab)[r] ? T(1) : T(0)));
                               }
                           });
}

template <typename T>
Var<T> contrastive_rows(Var<T> logits, bool include_positive) {
  const Shape& ls = logits.shape();
  MCAE_REQUIRE(ls.size() == 2 && ls[0] == ls[1], "contrastive_rows: logits must be square B x B");
  const int b = ls[0];
  MCAE_REQUIRE(b >= 2 || include_positive, "contrastive loss needs a batch of at least 2");
  const auto& z = logits.value();
  // softmax weights over the denominator terms, row by row
  auto weights = std::make_shared<Tensor<T>>(ls);
  T total = 0;
  for (int r = 0; r < b; ++r) {
    const T* zr = z.data.data() + static_cast<std::size_t>(r) * b;
    T* wr = weights->data.data() + static_cast<std::size_t>(r) * b;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < b; ++j)
      if (include_positive || j != r) mx = std::max(mx, zr[j]);
    T se = 0;
    for (int j = 0; j < b; ++j) {
      wr[j] = (include_positive || j != r) ? std::exp(zr[j] - mx) : T(0);
      se += wr[j];
    }
    for (int j = 0; j < b; ++j) wr[j] /= se;
    total += -zr[r] + mx + std::log(se);
  }
  return logits.tape->push(Tensor<T>::scalar(total / b), {logits},
                           [=](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                             Tensor<T>* gz = tape.grad_slot(logits);
                             if (!gz) return;
                             const T s = g.data[0] / static_cast<T>(b);
                             for (int r = 0; r < b; ++r)
                               for (int j = 0; j < b; ++j) {
                                 const std::size_t i = static_cast<std::size_t>(r) * b + j;
                                 gz->data[i] += s * (weights->data[i] - (j == r ? T(1) : T(0)));
                               }
                           });
}

#define MCAE_INSTANTIATE_OPS(T)                                                                            \
  template Var<T> add<T>(Var<T>, Var<T>);                                                                  \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                                  \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                                  \
  template Var<T> scale<T>(Var<T>, T);                                                                     \
  template Var<T> add_scalar<T>(Var<T>, T);                                                                \
  template Var<T> add_bias<T>(Var<T>, Var<T>);                                                             \
  template Var<T> mul_prefix<T>(Var<T>, Var<T>);                                                           \
  template Var<T> sigmoid<T>(Var<T>);                                                                      \
  template Var<T> tanh<T>(Var<T>);                                                                         \
  template Var<T> leaky_relu<T>(Var<T>, T);                                                                \
  template Var<T> exp<T>(Var<T>);                                                                          \
  template Var<T> log<T>(Var<T>);                                                                          \
  template Var<T> square<T>(Var<T>);                                                                       \
  template Var<T> sin<T>(Var<T>);                                                                          \
  template Var<T> cos<T>(Var<T>);                                                                          \
  template Var<T> clamp<T>(Var<T>, T);                                                                     \
  template Var<T> matmul<T>(Var<T>, Var<T>, bool, bool);                                                   \
  template Var<T> affine<T>(Var<T>, Var<T>, Var<T>);                                                       \
  template Var<T> grouped_affine<T>(Var<T>, Var<T>, Var<T>);                                               \
  template Var<T> reshape<T>(Var<T>, Shape);                                                               \
  template Var<T> slice<T>(Var<T>, int, int, int);                                                         \
  template Var<T> concat<T>(const std::vector<Var<T>>&, int);                                              \
  template Var<T> sum<T>(Var<T>);                                                                          \
  template Var<T> mean<T>(Var<T>);                                                                         \
  template Var<T> sum_squares<T>(Var<T>);                                                                  \
  template Var<T> sum_last<T>(Var<T>);                                                                     \
  template Var<T> row_normalize<T>(Var<T>, T);                                                             \
  template Var<T> cosine_similarity<T>(Var<T>, Var<T>, T);                                                 \
  template Var<T> conv1d<T>(Var<T>, Var<T>, Var<T>, int, int);                                             \
  template Var<T> batch_norm1d<T>(Var<T>, Var<T>, Var<T>, BatchNormState<T>, bool);                        \
  template std::pair<Var<T>, Var<T>> lstm_step<T>(Var<T>, Var<T>, Var<T>, const LstmWeights<T>&);          \
  template std::pair<Var<T>, Var<T>> lstm_step_projected<T>(Var<T>, Var<T>, Var<T>, const LstmWeights<T>&); \
  template Var<T> softmax_cross_entropy<T>(Var<T>, std::span<const int>);                                  \
  template Var<T> contrastive_rows<T>(Var<T>, bool);

MCAE_INSTANTIATE_OPS(float)
MCAE_INSTANTIATE_OPS(double)

}  // namespace mcae::diffcore
