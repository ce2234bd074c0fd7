#include "mcae/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>

#include "mcae/t20gen.hpp"

namespace mcae::training {

namespace dc = diffcore;

AugmentPolicy AugmentPolicy::t20() {
  AugmentPolicy p;
  p.rotate = true;
  p.smooth = true;
  return p;
}

AugmentPolicy AugmentPolicy::skeleton() {
  AugmentPolicy p;
  p.rotate = p.smooth = p.jitter = p.mask = true;
  return p;
}

void AugmentPolicy::validate() const {
  auto prob = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
  };
  prob(jitter_prob, "augment.jitter_prob");
  prob(mask_prob, "augment.mask_prob");
  prob(apply_prob, "augment.apply_prob");
  if (smooth_kernel < 1 || smooth_kernel % 2 == 0) throw ConfigError("augment.smooth_kernel must be odd and positive");
  if (jitter_sigma < 0) throw ConfigError("augment.jitter_sigma must be nonnegative");
}

Tensor<float> augment(const Tensor<float>& seq, const AugmentPolicy& policy, Rng& rng) {
  if (seq.rank() != 3 || (seq.dim(2) != 2 && seq.dim(2) != 3)) {
    throw ConfigError("augment: expects K x T x d with d = 2 or 3");
  }
  const int K = seq.dim(0), T = seq.dim(1), d = seq.dim(2);
  Tensor<float> out = seq;
  auto at = [&](int k, int t, int c) -> float& { return out.data[(static_cast<std::size_t>(k) * T + t) * d + c]; };

  if (policy.rotate && rng.coin(policy.apply_prob)) {
    const double phi = rng.uniform(-policy.rotate_degrees, policy.rotate_degrees) * std::numbers::pi / 180.0;
    const double c = std::cos(phi), s = std::sin(phi);
    // In 3D one of the yaw / pitch / roll axes is picked; the other two
    // coordinates rotate.
    int a = 0, b = 1;
    if (d == 3) {
      const int axis = rng.uniform_int(3);
      a = axis == 0 ? 1 : 0;
      b = axis == 2 ? 1 : 2;
    }
    for (int k = 0; k < K; ++k)
      for (int t = 0; t < T; ++t) {
        const double x = at(k, t, a), y = at(k, t, b);
        at(k, t, a) = static_cast<float>(c * x - s * y);
        at(k, t, b) = static_cast<float>(s * x + c * y);
      }
  }
  if (policy.smooth && rng.coin(policy.apply_prob)) {
    const int h = policy.smooth_kernel / 2;
    Tensor<float> src = out;
    for (int k = 0; k < K; ++k)
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < d; ++c) {
          double acc = 0;
          for (int u = t - h; u <= t + h; ++u) {
            const int v = std::clamp(u, 0, T - 1);
            acc += src.data[(static_cast<std::size_t>(k) * T + v) * d + c];
          }
          at(k, t, c) = static_cast<float>(acc / policy.smooth_kernel);
        }
  }
  if (policy.jitter && rng.coin(policy.apply_prob)) {
    for (int k = 0; k < K; ++k) {
      if (!rng.coin(policy.jitter_prob)) continue;
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < d; ++c) at(k, t, c) += static_cast<float>(policy.jitter_sigma * rng.normal());
    }
  }
  if (policy.mask && rng.coin(policy.apply_prob)) {
    for (int k = 0; k < K; ++k) {
      if (!rng.coin(policy.mask_prob)) continue;
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < d; ++c) at(k, t, c) = 0.0f;
    }
  }
  return out;
}

template <typename T>
Var<T> loss_snippet_rec(Var<T> x_hat, Var<T> x) {
  return dc::sum_squares(x_hat - x);
}

template <typename T>
Var<T> loss_segment_rec(Var<T> A_hat, Var<T> mu_hat, Var<T> A, Var<T> mu) {
  Tape<T>& tape = *A_hat.tape;
  Var<T> a = dc::reshape(tape.detach(A), A_hat.shape());
  Var<T> m = dc::reshape(tape.detach(mu), mu_hat.shape());
  return dc::sum_squares(A_hat - a) + dc::sum_squares(mu_hat - m);
}

template <typename T>
Var<T> loss_contrastive(Var<T> nu1, Var<T> nu2, T tau, bool include_positive) {
  if (nu1.shape() != nu2.shape() || nu1.shape().size() != 2) {
    throw ConfigError("contrastive loss: views must be equally shaped B x M");
  }
  if (nu1.dim(0) < 2) throw ConfigError("contrastive loss needs a batch of at least 2");
  if (!(tau > 0)) throw ConfigError("temperature must be positive");
  Var<T> sim = dc::matmul(dc::row_normalize(nu1), dc::row_normalize(nu2), false, true);
  return dc::contrastive_rows(dc::scale(sim, T(1) / tau), include_positive);
}

template <typename T>
Var<T> loss_smoothness(Var<T> x_hat) {
  const int L = x_hat.dim(1);
  return dc::sum_squares(dc::slice(x_hat, 1, 1, L - 1) - dc::slice(x_hat, 1, 0, L - 1));
}

template <typename T>
Var<T> loss_sparsity(Var<T> nu) {
  return dc::sum_squares(nu);
}

template <typename T>
LossTerms<T> compute_losses(const ModelOutput<T>& out, Tape<T>& tape, const Tensor<T>& X, int batch,
                            const LossWeights& w, bool single_layer, const FrozenTargets<T>* frozen) {
  const int rows = X.dim(0);
  if (rows != 2 * batch) throw ConfigError("compute_losses: expected two stacked views");
  const T inv = T(1) / static_cast<T>(rows);
  LossTerms<T> t;
  t.sni = dc::scale(loss_snippet_rec(out.x_hat, tape.constant(X)), inv);
  t.con = loss_contrastive(dc::slice(out.nu, 0, 0, batch), dc::slice(out.nu, 0, batch, batch), static_cast<T>(w.tau),
                           w.include_positive);
  t.smt = dc::scale(loss_smoothness(out.x_hat), inv);
  t.sps = dc::scale(loss_sparsity(out.nu), inv);
  Var<T> total = dc::scale(t.sni, static_cast<T>(w.lambda_sni)) + dc::scale(t.con, static_cast<T>(w.contrastive)) +
                 dc::scale(t.smt, static_cast<T>(w.smoothness)) + dc::scale(t.sps, static_cast<T>(w.sparsity));
  if (!single_layer) {
    Var<T> A = frozen ? tape.constant(frozen->A) : out.A;
    Var<T> mu = frozen ? tape.constant(frozen->mu) : out.mu;
    t.seg = dc::scale(loss_segment_rec(out.A_hat, out.mu_hat, A, mu), inv);
    total = total + dc::scale(t.seg, static_cast<T>(w.lambda_seg));
  }
  t.total = total;
  return t;
}

template <typename T>
LossValues loss_values(const LossTerms<T>& t) {
  LossValues v;
  v.total = t.total.value().item();
  v.sni = t.sni.value().item();
  v.seg = t.seg.valid() ? t.seg.value().item() : 0.0;
  v.con = t.con.value().item();
  v.smt = t.smt.value().item();
  v.sps = t.sps.value().item();
  return v;
}

LossTerms<float> McaeLearner::losses(Tape<float>& tape, const Tensor<float>& X, int batch) {
  ModelOutput<float> out = model_.forward(tape, X, true);
  return compute_losses(out, tape, X, batch, weights_, model_.config().single_layer);
}

Sampler t20_sampler() {
  return [](Rng& rng, int count) {
    Tensor<float> out(Shape{count, t20::kTrajectoryLength, 2});
    for (int i = 0; i < count; ++i) {
      t20::Sample s = t20::sample_random(rng);
      std::copy(s.xy.begin(), s.xy.end(), out.data.begin() + static_cast<std::size_t>(i) * s.xy.size());
    }
    return out;
  };
}

std::string metrics_header() { return "epoch,total,l_sni,l_seg,l_con,l_smt,l_sps,wall_s"; }

std::string metrics_row(const EpochStats& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f", e.epoch, e.loss.total, e.loss.sni,
                e.loss.seg, e.loss.con, e.loss.smt, e.loss.sps, e.wall_s);
  return buf;
}

namespace {

void check_finite(const LossValues& v, int epoch, int batch) {
  const std::pair<const char*, double> parts[] = {{"l_sni", v.sni}, {"l_seg", v.seg}, {"l_con", v.con},
                                                  {"l_smt", v.smt}, {"l_sps", v.sps}, {"total", v.total}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) {
      throw NumericError(std::string("non-finite ") + name + " (" + std::to_string(value) + ") at epoch " +
                         std::to_string(epoch) + ", batch " + std::to_string(batch));
    }
  }
}

constexpr std::uint64_t kDataStream = 0xDA7A5EEDULL;

}  // namespace

TrainLog train_run(const TrainConfig& config, Learner& learner, const Sampler& sampler, const TrainOptions& options,
                   dc::AdamState<float>* adam_state) {
  config.validate();
  auto params = learner.store().params();
  dc::AdamState<float> local(params);
  dc::AdamState<float>& adam = adam_state ? *adam_state : local;
  if (adam.first_moment.size() != params.size()) adam = dc::AdamState<float>(params);

  std::ofstream metrics;
  if (!options.metrics_csv.empty()) {
    metrics.open(options.metrics_csv, std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + options.metrics_csv.string());
    metrics << metrics_header() << "\n";
  }

  const int B = config.batch_size, L = config.model.length;
  const auto t0 = std::chrono::steady_clock::now();
  TrainLog log;
  std::vector<double> totals;
  double best_avg = std::numeric_limits<double>::infinity();
  int since_best = 0;
  log.stop_reason = "max_epochs";

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    LossValues acc;
    for (int b = 0; b < config.batches_per_epoch; ++b) {
      Rng rng(split_seed(config.seed ^ kDataStream, static_cast<std::uint64_t>(log.steps)));
      Tensor<float> clean = sampler(rng, B);
      Tensor<float> X(Shape{2 * B, L, 2});
      const std::size_t stride = static_cast<std::size_t>(L) * 2;
      for (int i = 0; i < B; ++i) {
        Tensor<float> one(Shape{1, L, 2},
                          std::vector<float>(clean.data.begin() + i * stride, clean.data.begin() + (i + 1) * stride));
        Tensor<float> v1 = augment(one, config.augment, rng);
        Tensor<float> v2 = augment(one, config.augment, rng);
        std::copy(v1.data.begin(), v1.data.end(), X.data.begin() + i * stride);
        std::copy(v2.data.begin(), v2.data.end(), X.data.begin() + (B + i) * stride);
      }
      Tape<float> tape;
      LossTerms<float> terms = learner.losses(tape, X, B);
      LossValues v = loss_values(terms);
      check_finite(v, epoch, b);
      learner.store().zero_grad();
      tape.backward(terms.total);
      dc::adam_update<float>(params, adam, config.adam);
      ++log.steps;
      acc.total += v.total;
      acc.sni += v.sni;
      acc.seg += v.seg;
      acc.con += v.con;
      acc.smt += v.smt;
      acc.sps += v.sps;
    }
    const double n = config.batches_per_epoch;
    EpochStats e;
    e.epoch = epoch;
    e.loss = {acc.total / n, acc.sni / n, acc.seg / n, acc.con / n, acc.smt / n, acc.sps / n};
    e.wall_s = config.deterministic
                   ? 0.0
                   : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(e);
    if (metrics.is_open()) metrics << metrics_row(e) << "\n" << std::flush;
    if (!options.checkpoint.empty()) {
      auto meta = options.checkpoint_meta;
      meta["run.epoch"] = std::to_string(epoch);
      save_checkpoint(options.checkpoint, snapshot(learner.store(), &adam, meta));
    }
    if (!options.quiet) std::cerr << metrics_row(e) << "\n";
    if (options.on_epoch) options.on_epoch(e);

    totals.push_back(e.loss.total);
    const int w = std::min<int>(config.average_window, static_cast<int>(totals.size()));
    double avg = 0;
    for (int k = 0; k < w; ++k) avg += totals[totals.size() - 1 - k];
    avg /= w;
    if (avg < best_avg - config.min_delta) {
      best_avg = avg;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      log.stop_reason = "stagnation";
      break;
    }
  }
  return log;
}

#define MCAE_INSTANTIATE_LOSSES(T)                                                                       \
  template Var<T> loss_snippet_rec<T>(Var<T>, Var<T>);                                                   \
  template Var<T> loss_segment_rec<T>(Var<T>, Var<T>, Var<T>, Var<T>);                                   \
  template Var<T> loss_contrastive<T>(Var<T>, Var<T>, T, bool);                                          \
  template Var<T> loss_smoothness<T>(Var<T>);                                                            \
  template Var<T> loss_sparsity<T>(Var<T>);                                                              \
  template LossTerms<T> compute_losses<T>(const ModelOutput<T>&, Tape<T>&, const Tensor<T>&, int,        \
                                          const LossWeights&, bool, const FrozenTargets<T>*);                                     \
  template LossValues loss_values<T>(const LossTerms<T>&);

MCAE_INSTANTIATE_LOSSES(float)
MCAE_INSTANTIATE_LOSSES(double)

}  // namespace mcae::training
