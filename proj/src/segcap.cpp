#include "mcae/segcap.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <numbers>

namespace mcae::segcap {

using snicap::kMatrixSize;

template <typename T>
Var<T> flatten_snippet_codes(Var<T> A, Var<T> mu, int batch) {
  const int R = A.dim(0), N = A.dim(1);
  if (R % batch != 0) throw ConfigError("flatten_snippet_codes: row count is not a multiple of the batch");
  Var<T> joined = diffcore::concat<T>({A, diffcore::reshape(mu, {R, N, 1})}, 2);
  return diffcore::reshape(joined, {batch, R / batch, 10 * N});
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> unflatten_snippet_codes(const Tensor<T>& flat, int n) {
  if (flat.rank() != 3 || flat.dim(2) != 10 * n) throw ConfigError("unflatten_snippet_codes: expects B x S x 10N");
  const int R = flat.dim(0) * flat.dim(1);
  Tensor<T> A(Shape{R, n, kMatrixSize});
  Tensor<T> mu(Shape{R, n});
  for (int r = 0; r < R; ++r)
    for (int i = 0; i < n; ++i) {
      const T* src = flat.data.data() + (static_cast<std::size_t>(r) * n + i) * 10;
      std::copy_n(src, kMatrixSize, A.data.data() + (static_cast<std::size_t>(r) * n + i) * kMatrixSize);
      mu.data[static_cast<std::size_t>(r) * n + i] = src[kMatrixSize];
    }
  return {std::move(A), std::move(mu)};
}

template <typename T>
typename BiLstm<T>::Direction BiLstm<T>::make(ParamStore<T>& store, const std::string& prefix, Rng& rng) {
  const int H = hidden_;
  Direction d;
  d.w_input = &store.add(prefix + ".w_input", snicap::uniform_fan_in<T>({4 * H, input_}, H, rng));
  d.w_hidden = &store.add(prefix + ".w_hidden", snicap::uniform_fan_in<T>({4 * H, H}, H, rng));
  Tensor<T> bi(Shape{4 * H});
  for (int k = H; k < 2 * H; ++k) bi.data[k] = T(1);
  d.b_input = &store.add(prefix + ".b_input", std::move(bi));
  d.b_hidden = &store.add(prefix + ".b_hidden", Tensor<T>(Shape{4 * H}));
  return d;
}

template <typename T>
BiLstm<T>::BiLstm(ParamStore<T>& store, const std::string& prefix, int input, int hidden, Rng& rng, bool tie)
    : input_(input), hidden_(hidden) {
  if (input <= 0 || hidden <= 0) throw ConfigError("BiLstm: sizes must be positive");
  fwd_ = make(store, prefix + ".fwd", rng);
  bwd_ = tie ? fwd_ : make(store, prefix + ".bwd", rng);
}

template <typename T>
Var<T> BiLstm<T>::run(Tape<T>& tape, Var<T> seq, const Direction& d, bool reverse) const {
  const int B = seq.dim(0), S = seq.dim(1), H = hidden_;
  diffcore::LstmWeights<T> w{tape.param(*d.w_input), tape.param(*d.w_hidden), tape.param(*d.b_input),
                             tape.param(*d.b_hidden)};
  Var<T> proj = diffcore::affine(seq, w.w_input, w.b_input);
  Var<T> h = tape.constant(Tensor<T>(Shape{B, H}));
  Var<T> c = h;
  for (int step = 0; step < S; ++step) {
    const int t = reverse ? S - 1 - step : step;
    Var<T> xt = diffcore::reshape(diffcore::slice(proj, 1, t, 1), {B, 4 * H});
    std::tie(h, c) = diffcore::lstm_step_projected(xt, h, c, w);
  }
  return h;
}

template <typename T>
Var<T> BiLstm<T>::forward(Tape<T>& tape, Var<T> seq) const {
  if (seq.shape().size() != 3 || seq.dim(2) != input_) {
    throw ConfigError("BiLstm: expected B x S x " + std::to_string(input_) + ", got " + diffcore::shape_str(seq.shape()));
  }
  return diffcore::concat<T>({run(tape, seq, fwd_, false), run(tape, seq, bwd_, true)}, 1);
}

template <typename T>
SegmentEncoder<T>::SegmentEncoder(ParamStore<T>& store, const std::string& prefix, const EncoderSpec& spec, Rng& rng,
                                  bool tie)
    : spec_(spec) {
  const int N = spec.capsules, M = spec.segments, W = spec.head_width;
  lstm_ = BiLstm<T>(store, prefix + ".lstm", 10 * N, spec.hidden, rng, tie);
  const int H2 = 2 * spec.hidden;
  fc_w_ = &store.add(prefix + ".fc.weight", snicap::uniform_fan_in<T>({W * M, H2}, H2, rng));
  fc_b_ = &store.add(prefix + ".fc.bias", snicap::uniform_fan_in<T>({W * M}, H2, rng));
  const int tdim = N * spec.snippet_length * 2;
  const int fan = W + (spec.template_conditioned ? tdim : 0);
  head_w_ = &store.add(prefix + ".head.weight", snicap::uniform_fan_in<T>({M, 5, W}, fan, rng));
  head_b_ = &store.add(prefix + ".head.bias", snicap::uniform_fan_in<T>({M, 5}, fan, rng));
  // activations start near 1/M each, so the decoded homogeneous entry starts near 1
  const T logit0 = M > 1 ? static_cast<T>(-std::log(M - 1.0)) : T(0);
  for (int k = 0; k < M; ++k) head_b_->value.data[k * 5] += logit0;
  if (spec.template_conditioned) {
    head_t_ = &store.add(prefix + ".head.template_weight", snicap::uniform_fan_in<T>({5 * M, tdim}, fan, rng));
  }
}

template <typename T>
SegmentCode<T> SegmentEncoder<T>::forward(Tape<T>& tape, Var<T> seq, Var<T> templates) const {
  const int B = seq.dim(0), M = spec_.segments;
  Var<T> h = lstm_.forward(tape, seq);
  Var<T> z = diffcore::affine(h, tape.param(*fc_w_), tape.param(*fc_b_));
  z = diffcore::leaky_relu(z, static_cast<T>(spec_.leaky_slope));
  z = diffcore::reshape(z, {B, M, spec_.head_width});
  Var<T> raw = diffcore::grouped_affine(z, tape.param(*head_w_), tape.param(*head_b_));
  if (head_t_) {
    Var<T> flat_t = diffcore::reshape(templates, {1, static_cast<int>(templates.size())});
    Var<T> cond = diffcore::matmul(flat_t, tape.param(*head_t_), false, true);
    raw = diffcore::add_bias(raw, diffcore::reshape(cond, {M, 5}));
  }
  SegmentCode<T> code;
  code.raw = raw;
  code.nu = diffcore::reshape(diffcore::sigmoid(diffcore::slice(raw, 2, 0, 1)), {B, M});
  code.B = snicap::assemble_similarity(diffcore::slice(raw, 2, 1, 4));
  return code;
}

template <typename T>
Var<T> homogeneous_from_top(Var<T> top) {
  const Shape& ts = top.shape();
  if (ts.empty() || ts.back() != 6) throw ConfigError("homogeneous_from_top: trailing axis must be 6");
  Shape os = ts;
  os.back() = kMatrixSize;
  const std::size_t n = top.size() / 6;
  Tensor<T> out(os);
  const auto& tv = top.value();
  for (std::size_t k = 0; k < n; ++k) {
    std::copy_n(tv.data.data() + 6 * k, 6, out.data.data() + kMatrixSize * k);
    out.data[kMatrixSize * k + 8] = T(1);
  }
  return top.tape->push(std::move(out), {top}, [top, n](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
    if (Tensor<T>* gt = tape.grad_slot(top))
      for (std::size_t k = 0; k < n; ++k)
        for (int e = 0; e < 6; ++e) gt->data[6 * k + e] += g.data[kMatrixSize * k + e];
  });
}

template <typename T>
Var<T> segment_decode_matrices(Var<T> nu, Var<T> Bm, Var<T> P) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Shape& ps = P.shape();
  if (nu.shape().size() != 2) throw ConfigError("segment_decode: nu must be B x M");
  const int B = nu.dim(0), M = nu.dim(1);
  if (Bm.shape() != (Shape{B, M, kMatrixSize})) throw ConfigError("segment_decode: B matrices must be B x M x 9");
  if (ps.size() != 4 || ps[0] != M || ps[3] != kMatrixSize) throw ConfigError("segment_decode: P must be M x S x N x 9");
  const int SN = ps[1] * ps[2];
  // As one product: C[(b, r), (k, m)] = nu[b, k] Bm[b, k, r, m] and
  // Q[(k, m), (q, c)] = P[k, q, m, c], so A_hat[b, q, r, c] = (C Q)[(b, r), (q, c)].
  auto C = std::make_shared<Mat>(3 * B, 3 * M);
  auto Q = std::make_shared<Mat>(3 * M, 3 * SN);
  const T* nv = nu.value().data.data();
  const T* bv = Bm.value().data.data();
  const T* pv = P.value().data.data();
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < M; ++k) {
      const T w = nv[b * M + k];
      const T* bk = bv + (static_cast<std::size_t>(b) * M + k) * kMatrixSize;
      for (int r = 0; r < 3; ++r)
        for (int m = 0; m < 3; ++m) (*C)(3 * b + r, 3 * k + m) = w * bk[3 * r + m];
    }
  for (int k = 0; k < M; ++k)
    for (int q = 0; q < SN; ++q) {
      const T* p = pv + (static_cast<std::size_t>(k) * SN + q) * kMatrixSize;
      for (int m = 0; m < 3; ++m)
        for (int c = 0; c < 3; ++c) (*Q)(3 * k + m, 3 * q + c) = p[3 * m + c];
    }
  Mat O = (*C) * (*Q);
  Tensor<T> out(Shape{B, ps[1], ps[2], kMatrixSize});
  for (int b = 0; b < B; ++b)
    for (int q = 0; q < SN; ++q)
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
          out.data[(static_cast<std::size_t>(b) * SN + q) * kMatrixSize + 3 * r + c] = O(3 * b + r, 3 * q + c);
  return nu.tape->push(std::move(out), {nu, Bm, P}, [=](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
    Tensor<T>* gn = tape.grad_slot(nu);
    Tensor<T>* gb = tape.grad_slot(Bm);
    Tensor<T>* gp = tape.grad_slot(P);
    Mat G(3 * B, 3 * SN);
    for (int b = 0; b < B; ++b)
      for (int q = 0; q < SN; ++q)
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c)
            G(3 * b + r, 3 * q + c) = g.data[(static_cast<std::size_t>(b) * SN + q) * kMatrixSize + 3 * r + c];
    if (gp) {
      Mat gQ = C->transpose() * G;
      for (int k = 0; k < M; ++k)
        for (int q = 0; q < SN; ++q) {
          T* dst = gp->data.data() + (static_cast<std::size_t>(k) * SN + q) * kMatrixSize;
          for (int m = 0; m < 3; ++m)
            for (int c = 0; c < 3; ++c) dst[3 * m + c] += gQ(3 * k + m, 3 * q + c);
        }
    }
    if (gn || gb) {
      Mat gC = G * Q->transpose();
      const T* nv = tape.value(nu).data.data();
      const T* bv = tape.value(Bm).data.data();
      for (int b = 0; b < B; ++b)
        for (int k = 0; k < M; ++k) {
          const std::size_t bi = (static_cast<std::size_t>(b) * M + k) * kMatrixSize;
          T acc = 0;
          for (int r = 0; r < 3; ++r)
            for (int m = 0; m < 3; ++m) {
              const T v = gC(3 * b + r, 3 * k + m);
              acc += v * bv[bi + 3 * r + m];
              if (gb) gb->data[bi + 3 * r + m] += v * nv[b * M + k];
            }
          if (gn) gn->data[b * M + k] += acc;
        }
    }
  });
}

template <typename T>
Var<T> segment_decode_activations(Var<T> nu, Var<T> alpha) {
  const Shape& as = alpha.shape();
  if (as.size() != 3 || nu.shape().size() != 2 || nu.dim(1) != as[0]) {
    throw ConfigError("segment_decode: alpha must be M x S x N for nu of shape B x M");
  }
  Var<T> flat = diffcore::reshape(alpha, {as[0], as[1] * as[2]});
  return diffcore::reshape(diffcore::matmul(nu, flat), {nu.dim(0), as[1], as[2]});
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> init_segment_templates(int segments, int snippets, int capsules, Rng& rng) {
  Tensor<T> top(Shape{segments, snippets, capsules, 6});
  const std::size_t count = static_cast<std::size_t>(segments) * snippets * capsules;
  for (std::size_t q = 0; q < count; ++q) {
    const double s = rng.uniform(-1.0, 1.0);
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double tx = rng.uniform(-0.5, 0.5);
    const double ty = rng.uniform(-0.5, 0.5);
    const auto m = snicap::assemble_similarity(s, theta, tx, ty);
    for (int e = 0; e < 6; ++e) top.data[6 * q + e] = static_cast<T>(m[e]);
  }
  Tensor<T> alpha(Shape{segments, snippets, capsules});
  for (auto& v : alpha.data) v = static_cast<T>(rng.uniform(0.0, 2.0 / capsules));
  return {std::move(top), std::move(alpha)};
}

#define MCAE_INSTANTIATE_SEGCAP(T)                                                                 \
  template Var<T> flatten_snippet_codes<T>(Var<T>, Var<T>, int);                                   \
  template std::pair<Tensor<T>, Tensor<T>> unflatten_snippet_codes<T>(const Tensor<T>&, int);      \
  template class BiLstm<T>;                                                                        \
  template class SegmentEncoder<T>;                                                                \
  template Var<T> homogeneous_from_top<T>(Var<T>);                                                 \
  template Var<T> segment_decode_matrices<T>(Var<T>, Var<T>, Var<T>);                              \
  template Var<T> segment_decode_activations<T>(Var<T>, Var<T>);                                   \
  template std::pair<Tensor<T>, Tensor<T>> init_segment_templates<T>(int, int, int, Rng&);

MCAE_INSTANTIATE_SEGCAP(float)
MCAE_INSTANTIATE_SEGCAP(double)

}  // namespace mcae::segcap
