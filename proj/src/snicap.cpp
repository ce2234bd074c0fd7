#include "mcae/snicap.hpp"

#include <cmath>

namespace mcae::snicap {

namespace {

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T clamp_to(T x, T t) {
  return std::max(-t, std::min(x, t));
}

}  // namespace

std::array<double, 9> assemble_similarity(double s, double theta, double tx, double ty, double limit) {
  const double a = stable_sigmoid(s);
  const double c = std::cos(theta), sn = std::sin(theta);
  return {a * c, -a * sn, clamp_to(tx, limit), a * sn, a * c, clamp_to(ty, limit), 0.0, 0.0, 1.0};
}

template <typename T>
Var<T> assemble_similarity(Var<T> raw, T limit) {
  const Shape& rs = raw.shape();
  if (rs.empty() || rs.back() != 4) throw ConfigError("assemble_similarity: trailing axis must be 4, got " + diffcore::shape_str(rs));
  Shape os = rs;
  os.back() = kMatrixSize;
  const std::size_t n = raw.size() / 4;
  Tensor<T> out(os);
  const auto& rv = raw.value();
  const bool track = raw.tape->tracking_branches();
  for (std::size_t k = 0; k < n; ++k) {
    const T* p = rv.data.data() + 4 * k;
    T* o = out.data.data() + kMatrixSize * k;
    if (track) raw.tape->record_branch((std::abs(p[1]) <= limit ? 6 : 7) + 2 * (std::abs(p[2]) <= limit ? 0 : 1));
    const T a = stable_sigmoid(p[0]);
    const T c = std::cos(p[3]), sn = std::sin(p[3]);
    o[0] = a * c;
    o[1] = -a * sn;
    o[2] = clamp_to(p[1], limit);
    o[3] = a * sn;
    o[4] = a * c;
    o[5] = clamp_to(p[2], limit);
    o[6] = T(0);
    o[7] = T(0);
    o[8] = T(1);
  }
  return raw.tape->push(std::move(out), {raw}, [raw, n, limit](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
    Tensor<T>* gr = tape.grad_slot(raw);
    if (!gr) return;
    const auto& rv = tape.value(raw);
    for (std::size_t k = 0; k < n; ++k) {
      const T* p = rv.data.data() + 4 * k;
      const T* gk = g.data.data() + kMatrixSize * k;
      T* gp = gr->data.data() + 4 * k;
      const T a = stable_sigmoid(p[0]);
      const T da = a * (T(1) - a);
      const T c = std::cos(p[3]), sn = std::sin(p[3]);
      gp[0] += da * (c * (gk[0] + gk[4]) + sn * (gk[3] - gk[1]));
      gp[3] += a * (-sn * (gk[0] + gk[4]) + c * (gk[3] - gk[1]));
      if (std::abs(p[1]) <= limit) gp[1] += gk[2];
      if (std::abs(p[2]) <= limit) gp[2] += gk[5];
    }
  });
}

template <typename T>
std::vector<Tensor<T>> snippet_split(const Tensor<T>& trajectory, int l) {
  if (trajectory.rank() != 2) throw ConfigError("snippet_split: expects an L x d trajectory");
  const int L = trajectory.dim(0), d = trajectory.dim(1);
  if (l <= 0 || L % l != 0) {
    throw ConfigError("snippet_split: length " + std::to_string(L) + " is not divisible by " + std::to_string(l));
  }
  std::vector<Tensor<T>> out;
  for (int s = 0; s < L / l; ++s) {
    auto first = trajectory.data.begin() + static_cast<std::ptrdiff_t>(s) * l * d;
    out.emplace_back(Shape{l, d}, std::vector<T>(first, first + l * d));
  }
  return out;
}

template <typename T>
Tensor<T> snippets_to_conv_input(const Tensor<T>& batch, int l) {
  if (batch.rank() != 3) throw ConfigError("snippets_to_conv_input: expects B x L x d");
  const int B = batch.dim(0), L = batch.dim(1), d = batch.dim(2);
  if (l <= 0 || L % l != 0) {
    throw ConfigError("length " + std::to_string(L) + " is not divisible by snippet length " + std::to_string(l));
  }
  const int S = L / l;
  Tensor<T> out(Shape{B * S, d, l});
  for (int b = 0; b < B; ++b)
    for (int s = 0; s < S; ++s)
      for (int j = 0; j < l; ++j)
        for (int c = 0; c < d; ++c)
          out.data[((static_cast<std::size_t>(b) * S + s) * d + c) * l + j] =
              batch.data[(static_cast<std::size_t>(b) * L + s * l + j) * d + c];
  return out;
}

int stages_for_length(int l) {
  if (l < 2 || (l & (l - 1)) != 0) {
    throw ConfigError("snippet length must be a power of two >= 2, got " + std::to_string(l));
  }
  int stages = 0;
  while ((1 << stages) < l) ++stages;
  return stages;
}

template <typename T>
Tensor<T> uniform_fan_in(Shape shape, int fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(1.0 / fan_in);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
ConvBackbone<T>::ConvBackbone(ParamStore<T>& store, const std::string& prefix, const BackboneSpec& spec, Rng& rng)
    : spec_(spec) {
  if (spec.stages < 0 || spec.in_channels <= 0 || spec.base_channels <= 0 || spec.out_channels <= 0) {
    throw ConfigError("invalid conv backbone sizes");
  }
  int in = spec.in_channels;
  for (int i = 0; i < spec.stages; ++i) {
    const int out = spec.base_channels << i;
    const std::string p = prefix + ".conv" + std::to_string(i);
    Stage st;
    st.kernel = &store.add(p + ".weight", uniform_fan_in<T>({out, in, 4}, in * 4, rng));
    st.bias = &store.add(p + ".bias", uniform_fan_in<T>({out}, in * 4, rng));
    st.gamma = &store.add(p + ".bn.gamma", Tensor<T>({out}, T(1)));
    st.beta = &store.add(p + ".bn.beta", Tensor<T>({out}, T(0)));
    st.running_mean = &store.add_buffer(p + ".bn.running_mean", Tensor<T>({out}, T(0)));
    st.running_var = &store.add_buffer(p + ".bn.running_var", Tensor<T>({out}, T(1)));
    stages_.push_back(st);
    in = out;
  }
  const int k = spec.final_kernel;
  final_kernel_ = &store.add(prefix + ".out.weight", uniform_fan_in<T>({spec.out_channels, in, k}, in * k, rng));
  final_bias_ = &store.add(prefix + ".out.bias", uniform_fan_in<T>({spec.out_channels}, in * k, rng));
}

template <typename T>
Var<T> ConvBackbone<T>::forward(Tape<T>& tape, Var<T> x, bool training) const {
  for (const Stage& st : stages_) {
    x = diffcore::conv1d(x, tape.param(*st.kernel), tape.param(*st.bias), 2, 1);
    diffcore::BatchNormState<T> bn;
    bn.running_mean = st.running_mean;
    bn.running_var = st.running_var;
    x = diffcore::batch_norm1d(x, tape.param(*st.gamma), tape.param(*st.beta), bn, training);
    x = diffcore::leaky_relu(x, static_cast<T>(spec_.leaky_slope));
  }
  return diffcore::conv1d(x, tape.param(*final_kernel_), tape.param(*final_bias_), 1, spec_.final_padding);
}

template <typename T>
Var<T> snippet_decode(Var<T> A, Var<T> mu, Var<T> templates) {
  const Shape& as = A.shape();
  const Shape& ts = templates.shape();
  if (as.size() != 3 || as[2] != kMatrixSize) throw ConfigError("snippet_decode: A must be R x N x 9");
  const int R = as[0], N = as[1];
  if (mu.shape() != (Shape{R, N})) throw ConfigError("snippet_decode: mu must be R x N");
  if (ts.size() != 3 || ts[0] != N || ts[2] != 2) throw ConfigError("snippet_decode: templates must be N x l x 2");
  const int l = ts[1];
  Tensor<T> out(Shape{R, l, 2});
  {
    const T* av = A.value().data.data();
    const T* mv = mu.value().data.data();
    const T* tv = templates.value().data.data();
    for (int r = 0; r < R; ++r) {
      T* o = out.data.data() + static_cast<std::size_t>(r) * l * 2;
      for (int i = 0; i < N; ++i) {
        const T* a = av + (static_cast<std::size_t>(r) * N + i) * kMatrixSize;
        const T m = mv[r * N + i];
        const T* t = tv + static_cast<std::size_t>(i) * l * 2;
        for (int j = 0; j < l; ++j) {
          const T x = t[2 * j], y = t[2 * j + 1];
          o[2 * j] += m * (a[0] * x + a[1] * y + a[2]);
          o[2 * j + 1] += m * (a[3] * x + a[4] * y + a[5]);
        }
      }
    }
  }
  return A.tape->push(std::move(out), {A, mu, templates},
                      [A, mu, templates, R, N, l](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
    Tensor<T>* gA = tape.grad_slot(A);
    Tensor<T>* gm = tape.grad_slot(mu);
    Tensor<T>* gt = tape.grad_slot(templates);
    const T* av = tape.value(A).data.data();
    const T* mv = tape.value(mu).data.data();
    const T* tv = tape.value(templates).data.data();
    for (int r = 0; r < R; ++r) {
      const T* go = g.data.data() + static_cast<std::size_t>(r) * l * 2;
      for (int i = 0; i < N; ++i) {
        const std::size_t ai = (static_cast<std::size_t>(r) * N + i) * kMatrixSize;
        const T* a = av + ai;
        const T m = mv[r * N + i];
        const T* t = tv + static_cast<std::size_t>(i) * l * 2;
        // Sums over the l points of g_j t_j^T and g_j.
        T gxx = 0, gxy = 0, gyx = 0, gyy = 0, gx1 = 0, gy1 = 0, dot = 0;
        for (int j = 0; j < l; ++j) {
          const T x = t[2 * j], y = t[2 * j + 1];
          const T u = go[2 * j], v = go[2 * j + 1];
          gxx += u * x;
          gxy += u * y;
          gyx += v * x;
          gyy += v * y;
          gx1 += u;
          gy1 += v;
          if (gm) dot += u * (a[0] * x + a[1] * y + a[2]) + v * (a[3] * x + a[4] * y + a[5]);
          if (gt) {
            T* gti = gt->data.data() + static_cast<std::size_t>(i) * l * 2;
            gti[2 * j] += m * (a[0] * u + a[3] * v);
            gti[2 * j + 1] += m * (a[1] * u + a[4] * v);
          }
        }
        if (gm) gm->data[r * N + i] += dot;
        if (gA) {
          T* ga = gA->data.data() + ai;
          ga[0] += m * gxx;
          ga[1] += m * gxy;
          ga[2] += m * gx1;
          ga[3] += m * gyx;
          ga[4] += m * gyy;
          ga[5] += m * gy1;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> init_snippet_templates(int n, int l, Rng& rng) {
  if (n <= 0 || l < 2) throw ConfigError("init_snippet_templates: need n >= 1 and l >= 2");
  Tensor<T> t(Shape{n, l, 2});
  for (int i = 0; i < n; ++i) {
    const double x0 = rng.uniform(-0.5, 0.5), y0 = rng.uniform(-0.5, 0.5);
    const double x1 = rng.uniform(-0.5, 0.5), y1 = rng.uniform(-0.5, 0.5);
    for (int j = 0; j < l; ++j) {
      const double u = static_cast<double>(j) / (l - 1);
      t.data[(static_cast<std::size_t>(i) * l + j) * 2] = static_cast<T>(x0 + u * (x1 - x0));
      t.data[(static_cast<std::size_t>(i) * l + j) * 2 + 1] = static_cast<T>(y0 + u * (y1 - y0));
    }
  }
  return t;
}

#define MCAE_INSTANTIATE_SNICAP(T)                                                   \
  template Var<T> assemble_similarity<T>(Var<T>, T);                                 \
  template std::vector<Tensor<T>> snippet_split<T>(const Tensor<T>&, int);           \
  template Tensor<T> snippets_to_conv_input<T>(const Tensor<T>&, int);               \
  template Tensor<T> uniform_fan_in<T>(Shape, int, Rng&);                            \
  template class ConvBackbone<T>;                                                    \
  template Var<T> snippet_decode<T>(Var<T>, Var<T>, Var<T>);                         \
  template Tensor<T> init_snippet_templates<T>(int, int, Rng&);

MCAE_INSTANTIATE_SNICAP(float)
MCAE_INSTANTIATE_SNICAP(double)

}  // namespace mcae::snicap
