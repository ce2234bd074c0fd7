#include "mcae/evalprobe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mcae/diffcore/adam.hpp"

namespace mcae::evalprobe {

namespace dc = diffcore;

void FeatureSet::validate() const {
  if (features.rank() != 2) throw DataError("features must be an n x D matrix");
  if (static_cast<int>(labels.size()) != rows()) {
    throw DataError("feature rows (" + std::to_string(rows()) + ") and labels (" + std::to_string(labels.size()) +
                    ") differ");
  }
  for (float v : features.data)
    if (!std::isfinite(v)) throw DataError("features contain non-finite values");
}

Tensor<float> trajectories(const std::vector<t20::Sample>& samples) {
  if (samples.empty()) throw DataError("no samples");
  const int L = samples[0].length();
  Tensor<float> X(Shape{static_cast<int>(samples.size()), L, 2});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].length() != L) throw DataError("samples have different lengths");
    std::copy(samples[i].xy.begin(), samples[i].xy.end(), X.data.begin() + i * L * 2);
  }
  return X;
}

namespace {

std::vector<int> labels_of(const std::vector<t20::Sample>& samples) {
  std::vector<int> y;
  for (const auto& s : samples) y.push_back(s.label);
  return y;
}

}  // namespace

FeatureSet extract_features(const Mcae<float>& model, const std::vector<t20::Sample>& samples) {
  FeatureSet f{model.features(trajectories(samples)), labels_of(samples)};
  f.validate();
  return f;
}

double linear_probe(const FeatureSet& train, const FeatureSet& test, const ProbeOptions& opt) {
  train.validate();
  test.validate();
  if (train.rows() == 0) throw DataError("empty probe training set");
  if (train.dim() != test.dim()) throw DataError("train and test feature dimensions differ");
  int classes = opt.classes;
  if (classes == 0) {
    for (int y : train.labels) classes = std::max(classes, y + 1);
    for (int y : test.labels) classes = std::max(classes, y + 1);
  }
  auto check_labels = [&](const FeatureSet& f) {
    for (int y : f.labels)
      if (y < 0 || y >= classes) throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
  };
  check_labels(train);
  check_labels(test);

  const int n = train.rows(), D = train.dim();
  const float* fx = train.features.data.data();
  // canonical order: by label, then lexicographically by feature vector
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (train.labels[a] != train.labels[b]) return train.labels[a] < train.labels[b];
    return std::lexicographical_compare(fx + static_cast<std::size_t>(a) * D, fx + static_cast<std::size_t>(a + 1) * D,
                                        fx + static_cast<std::size_t>(b) * D, fx + static_cast<std::size_t>(b + 1) * D);
  });

  // z-score with training statistics (still a linear probe, just better conditioned)
  std::vector<double> shift(D, 0.0), gain(D, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < D; ++j) shift[j] += fx[static_cast<std::size_t>(order[i]) * D + j];
  for (int j = 0; j < D; ++j) shift[j] /= n;
  for (int j = 0; j < D; ++j) {
    double ss = 0;
    for (int i = 0; i < n; ++i) {
      const double d = fx[static_cast<std::size_t>(order[i]) * D + j] - shift[j];
      ss += d * d;
    }
    const double sd = std::sqrt(ss / n);
    gain[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }

  dc::Parameter<double> W("probe.weight", Tensor<double>(Shape{classes, D}));
  dc::Parameter<double> b("probe.bias", Tensor<double>(Shape{classes}));
  std::vector<dc::Parameter<double>*> params{&W, &b};
  dc::AdamState<double> adam(params);
  dc::AdamOptions aopt;
  aopt.lr = opt.lr;
  Rng rng(opt.seed);
  std::vector<int> perm = order;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
    for (int start = 0; start < n; start += opt.batch) {
      const int m = std::min(opt.batch, n - start);
      Tensor<double> xb(Shape{m, D});
      std::vector<int> yb(m);
      for (int r = 0; r < m; ++r) {
        const int src = perm[start + r];
        for (int j = 0; j < D; ++j)
          xb.data[static_cast<std::size_t>(r) * D + j] = (fx[static_cast<std::size_t>(src) * D + j] - shift[j]) * gain[j];
        yb[r] = train.labels[src];
      }
      Tape<double> tape;
      Var<double> logits = dc::affine(tape.constant(std::move(xb)), tape.param(W), tape.param(b));
      Var<double> loss = dc::softmax_cross_entropy(logits, std::span<const int>(yb));
      W.zero_grad();
      b.zero_grad();
      tape.backward(loss);
      dc::adam_update<double>(params, adam, aopt);
    }
  }

  int correct = 0;
  for (int r = 0; r < test.rows(); ++r) {
    const float* x = test.features.data.data() + static_cast<std::size_t>(r) * D;
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes; ++c) {
      double s = b.value.data[c];
      for (int j = 0; j < D; ++j) s += W.value.data[static_cast<std::size_t>(c) * D + j] * ((x[j] - shift[j]) * gain[j]);
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    correct += best == test.labels[r];
  }
  return test.rows() ? static_cast<double>(correct) / test.rows() : 0.0;
}

std::vector<int> knn_predict(const FeatureSet& gallery, const Tensor<float>& queries, Distance metric) {
  if (gallery.rows() == 0) throw UsageError("knn: empty gallery");
  if (queries.rank() != 2 || queries.dim(1) != gallery.dim()) throw DataError("knn: query dimension mismatch");
  const int n = gallery.rows(), D = gallery.dim(), q = queries.dim(0);
  const float* g = gallery.features.data.data();
  std::vector<double> gnorm(n, 1.0);
  if (metric == Distance::cosine) {
    for (int i = 0; i < n; ++i) {
      double s = 0;
      for (int j = 0; j < D; ++j) s += double(g[i * D + j]) * g[i * D + j];
      gnorm[i] = std::max(std::sqrt(s), 1e-12);
    }
  }
  std::vector<int> out(q);
  for (int r = 0; r < q; ++r) {
    const float* x = queries.data.data() + static_cast<std::size_t>(r) * D;
    double xn = 0;
    if (metric == Distance::cosine) {
      for (int j = 0; j < D; ++j) xn += double(x[j]) * x[j];
      xn = std::max(std::sqrt(xn), 1e-12);
    }
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const float* y = g + static_cast<std::size_t>(i) * D;
      double d = 0;
      if (metric == Distance::euclidean) {
        for (int j = 0; j < D; ++j) {
          const double t = double(x[j]) - y[j];
          d += t * t;
        }
      } else {
        double dot = 0;
        for (int j = 0; j < D; ++j) dot += double(x[j]) * y[j];
        d = 1.0 - dot / (xn * gnorm[i]);
      }
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    out[r] = gallery.labels[best];
  }
  return out;
}

double knn_eval(const FeatureSet& gallery, const FeatureSet& test, Distance metric) {
  gallery.validate();
  test.validate();
  const auto pred = knn_predict(gallery, test.features, metric);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test.labels[i];
  return pred.empty() ? 0.0 : static_cast<double>(correct) / pred.size();
}

EvalResult evaluate_features(const FeatureSet& train, const FeatureSet& test, const ProbeOptions& probe) {
  EvalResult r;
  r.linear = linear_probe(train, test, probe);
  r.knn = knn_eval(train, test);
  r.feature_dim = train.dim();
  return r;
}

EvalResult evaluate_t20(const Mcae<float>& model, const EvalProtocol& protocol) {
  const auto train = extract_features(model, t20::gen_test_set(protocol.train_samples, protocol.train_seed,
                                                               model.config().length));
  const auto test = extract_features(model, t20::gen_test_set(protocol.test_samples, protocol.test_seed,
                                                              model.config().length));
  return evaluate_features(train, test, protocol.probe);
}

BaselineConv::BaselineConv(int length, int dim, std::uint64_t seed, int base_channels) : length_(length), dim_(dim) {
  if (length < 4 || (length & (length - 1)) != 0) throw ConfigError("baseline length must be a power of two >= 4");
  Rng rng(seed);
  snicap::BackboneSpec spec;
  spec.in_channels = 2;
  spec.base_channels = base_channels;
  // stride-2 stages down to length 2; the final kernel-4 conv then collapses it to 1
  spec.stages = snicap::stages_for_length(length) - 1;
  spec.out_channels = dim;
  spec.final_kernel = 4;
  spec.final_padding = 1;
  net_ = snicap::ConvBackbone<float>(store_, "baseline", spec, rng);
}

Var<float> BaselineConv::forward(Tape<float>& tape, const Tensor<float>& X, bool training) const {
  if (X.rank() != 3 || X.dim(1) != length_ || X.dim(2) != 2) throw ConfigError("baseline input must be B x L x 2");
  const int B = X.dim(0);
  Var<float> input = tape.constant(snicap::snippets_to_conv_input(X, length_));
  return dc::reshape(net_.forward(tape, input, training), {B, dim_});
}

Tensor<float> BaselineConv::features(const Tensor<float>& X, int chunk) const {
  const int B = X.dim(0);
  Tensor<float> out(Shape{B, dim_});
  const std::size_t stride = static_cast<std::size_t>(length_) * 2;
  for (int start = 0; start < B; start += chunk) {
    const int n = std::min(chunk, B - start);
    Tensor<float> part(Shape{n, length_, 2},
                       std::vector<float>(X.data.begin() + start * stride, X.data.begin() + (start + n) * stride));
    Tape<float> tape(false);
    const auto& v = forward(tape, part, false).value();
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::size_t>(start) * dim_);
  }
  return out;
}

FeatureSet baseline_features(const BaselineConv& net, const std::vector<t20::Sample>& samples) {
  FeatureSet f{net.features(trajectories(samples)), labels_of(samples)};
  f.validate();
  return f;
}

training::LossTerms<float> BaselineLearner::losses(Tape<float>& tape, const Tensor<float>& X, int batch) {
  Var<float> f = net_.forward(tape, X, true);
  training::LossTerms<float> t;
  t.con = training::loss_contrastive(dc::slice(f, 0, 0, batch), dc::slice(f, 0, batch, batch),
                                     static_cast<float>(weights_.tau), weights_.include_positive);
  Var<float> zero = tape.constant(Tensor<float>::scalar(0.0f));
  t.sni = t.smt = t.sps = zero;
  t.total = dc::scale(t.con, static_cast<float>(weights_.contrastive));
  return t;
}

Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.runs = static_cast<int>(v.size());
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / (v.size() - 1));
  }
  return s;
}

std::string format_pm(const Summary& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", 100.0 * s.mean, 100.0 * s.std);
  return buf;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "config_hash,seed,probe,accuracy,feature_dim\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.6f", r.accuracy);
    out << r.config_hash << "," << r.seed << "," << r.probe << "," << buf << "," << r.feature_dim << "\n";
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_metrics_json(const std::filesystem::path& path, const std::vector<MetricRecord>& records) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : records) {
    j.push_back({{"config_hash", r.config_hash},
                 {"seed", r.seed},
                 {"probe", r.probe},
                 {"accuracy", r.accuracy},
                 {"feature_dim", r.feature_dim}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace mcae::evalprobe
