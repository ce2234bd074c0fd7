#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mcae/diffcore/adam.hpp"
#include "mcae/model.hpp"

namespace mcae::training {

// ---------------------------------------------------------------- augment

struct AugmentPolicy {
  bool rotate = false;
  bool smooth = false;
  bool jitter = false;
  bool mask = false;
  double rotate_degrees = 30.0;
  int smooth_kernel = 3;
  double jitter_prob = 0.1;
  double jitter_sigma = 1.0;
  double mask_prob = 0.2;
  // Chance that each enabled disturbance is applied to a given sample.
  double apply_prob = 0.5;

  static AugmentPolicy none() { return {}; }
  static AugmentPolicy t20();
  static AugmentPolicy skeleton();
  void validate() const;
};

// seq: K points x T steps x d (d = 2 or 3), modified copy returned. Applies
// rotate, smooth, jitter, mask in that order, each behind its own coin flip.
Tensor<float> augment(const Tensor<float>& seq, const AugmentPolicy& policy, Rng& rng);

// ----------------------------------------------------------------- losses

struct LossWeights {
  double lambda_sni = 1.0;
  double lambda_seg = 1.0;
  double contrastive = 1.0;
  double smoothness = 0.5;
  double sparsity = 0.05;
  double tau = 0.1;
  bool include_positive = false;
};

// Per-sample losses, summed over time / capsules.
template <typename T> Var<T> loss_snippet_rec(Var<T> x_hat, Var<T> x);
// Targets A, mu are detached here.
template <typename T> Var<T> loss_segment_rec(Var<T> A_hat, Var<T> mu_hat, Var<T> A, Var<T> mu);
template <typename T> Var<T> loss_contrastive(Var<T> nu1, Var<T> nu2, T tau, bool include_positive = false);
template <typename T> Var<T> loss_smoothness(Var<T> x_hat);
template <typename T> Var<T> loss_sparsity(Var<T> nu);

template <typename T>
struct LossTerms {
  Var<T> total;
  Var<T> sni, seg, con, smt, sps;  // seg is invalid for the single-layer model
};

// Values standing in for the (detached) segment-reconstruction targets.
// Finite differences of the objective only agree with its stop-gradient
// gradient when the targets are held fixed like this.
template <typename T>
struct FrozenTargets {
  Tensor<T> A;
  Tensor<T> mu;
};

// Unweighted components plus the total. X holds both views stacked as 2B x L x 2
// (first B rows view one); reconstruction and regularizer terms are averaged
// over all 2B rows.
template <typename T>
LossTerms<T> compute_losses(const ModelOutput<T>& out, Tape<T>& tape, const Tensor<T>& X, int batch,
                            const LossWeights& w, bool single_layer, const FrozenTargets<T>* frozen = nullptr);

struct LossValues {
  double total = 0, sni = 0, seg = 0, con = 0, smt = 0, sps = 0;
};

template <typename T>
LossValues loss_values(const LossTerms<T>& t);

// ------------------------------------------------------------ run config

struct TrainConfig {
  McaeConfig model;
  LossWeights loss;
  AugmentPolicy augment = AugmentPolicy::t20();
  diffcore::AdamOptions adam;
  int batch_size = 64;
  int batches_per_epoch = 500;
  int max_epochs = 1000;
  int patience = 100;
  int average_window = 10;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;
  std::string preset = "t20";
  std::string data = "t20";  // t20 | multipoint
  int mp_points = 5;
  int mp_samples = 10000;
  double mp_noise = 0.02;
  bool deterministic = true;

  void validate() const;
};

// "t20", "single-layer", "multipoint".
TrainConfig preset_config(const std::string& name);

// key = value lines; '#' starts a comment. Unknown keys are rejected.
TrainConfig parse_config(const std::string& text, const TrainConfig& base = TrainConfig{});
TrainConfig load_config(const std::filesystem::path& path);
std::map<std::string, std::string> config_entries(const TrainConfig& c);
std::string config_text(const TrainConfig& c);
// FNV-1a over config_text, hex.
std::string config_hash(const TrainConfig& c);

void apply_entry(TrainConfig& c, const std::string& key, const std::string& value);

// -------------------------------------------------------------- learners

// Something trainable with the two-view objective.
class Learner {
 public:
  virtual ~Learner() = default;
  virtual ParamStore<float>& store() = 0;
  // X: 2B x L x 2 (two views stacked).
  virtual LossTerms<float> losses(Tape<float>& tape, const Tensor<float>& X, int batch) = 0;
  virtual bool has_segment_loss() const = 0;
};

class McaeLearner : public Learner {
 public:
  McaeLearner(Mcae<float>& model, LossWeights w) : model_(model), weights_(w) {}
  ParamStore<float>& store() override { return model_.store(); }
  LossTerms<float> losses(Tape<float>& tape, const Tensor<float>& X, int batch) override;
  bool has_segment_loss() const override { return !model_.config().single_layer; }

 private:
  Mcae<float>& model_;
  LossWeights weights_;
};

// Draws `count` clean trajectories (count x L x 2).
using Sampler = std::function<Tensor<float>(Rng& rng, int count)>;

Sampler t20_sampler();

// ------------------------------------------------------------ train loop

struct EpochStats {
  int epoch = 0;
  LossValues loss;
  double wall_s = 0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  long steps = 0;
  std::string stop_reason;
};

struct TrainOptions {
  std::filesystem::path metrics_csv;  // empty: none
  std::filesystem::path checkpoint;   // written after every epoch when set
  std::map<std::string, std::string> checkpoint_meta;
  std::function<void(const EpochStats&)> on_epoch;
  bool quiet = true;
};

std::string metrics_header();
std::string metrics_row(const EpochStats& e);

TrainLog train_run(const TrainConfig& config, Learner& learner, const Sampler& sampler, const TrainOptions& options,
                   diffcore::AdamState<float>* adam_state = nullptr);

// -------------------------------------------------------------- checkpoint

struct Checkpoint {
  std::map<std::string, std::string> meta;
  struct Array {
    std::string kind;  // param | buffer | adam_m | adam_v
    std::string name;
    Tensor<float> value;
  };
  std::vector<Array> arrays;
  long adam_step = 0;

  const Array* find(const std::string& kind, const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint snapshot(const ParamStore<float>& store, const diffcore::AdamState<float>* adam,
                    std::map<std::string, std::string> meta);
// Copies arrays into `store` (and `adam` when given); names and shapes must match.
void restore(const Checkpoint& ck, ParamStore<float>& store, diffcore::AdamState<float>* adam = nullptr);

// Model checkpoints carry the training config in `meta`.
Checkpoint model_checkpoint(const Mcae<float>& model, const TrainConfig& config,
                            const diffcore::AdamState<float>* adam = nullptr);
TrainConfig checkpoint_config(const Checkpoint& ck);
std::unique_ptr<Mcae<float>> model_from_checkpoint(const Checkpoint& ck);

}  // namespace mcae::training
