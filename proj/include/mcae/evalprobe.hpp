#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcae/model.hpp"
#include "mcae/t20gen.hpp"
#include "mcae/training.hpp"

namespace mcae::evalprobe {

struct FeatureSet {
  Tensor<float> features;  // n x D
  std::vector<int> labels;

  int rows() const { return features.rank() == 2 ? features.dim(0) : 0; }
  int dim() const { return features.rank() == 2 ? features.dim(1) : 0; }
  void validate() const;
};

// Stacks samples into an n x L x 2 batch.
Tensor<float> trajectories(const std::vector<t20::Sample>& samples);

// Segment activations of every sample (evaluation mode); the model is not modified.
FeatureSet extract_features(const Mcae<float>& model, const std::vector<t20::Sample>& samples);

struct ProbeOptions {
  int epochs = 100;
  double lr = 1e-3;
  int batch = 256;
  std::uint64_t seed = 0;
  int classes = 0;  // 0: 1 + largest label seen
};

// Softmax linear classifier trained with Adam on frozen features; returns
// test accuracy. The training rows are put in a canonical order first, so
// the result does not depend on how the training set is permuted.
double linear_probe(const FeatureSet& train, const FeatureSet& test, const ProbeOptions& options = {});

enum class Distance { euclidean, cosine };

// Fixed evaluation sets: probe/gallery training rows and the balanced test set.
struct EvalProtocol {
  int train_samples = 10000;
  std::uint64_t train_seed = 1;
  int test_samples = 2000;
  std::uint64_t test_seed = 0;
  ProbeOptions probe;
};

struct EvalResult {
  double linear = 0;
  double knn = 0;
  int feature_dim = 0;
};

EvalResult evaluate_features(const FeatureSet& train, const FeatureSet& test, const ProbeOptions& probe = {});
EvalResult evaluate_t20(const Mcae<float>& model, const EvalProtocol& protocol = {});

// 1-nearest-neighbour labels; ties go to the lowest gallery index.
std::vector<int> knn_predict(const FeatureSet& gallery, const Tensor<float>& queries,
                             Distance metric = Distance::euclidean);
double knn_eval(const FeatureSet& gallery, const FeatureSet& test, Distance metric = Distance::euclidean);

// Contrastive 1D-conv baseline: four stride-2 stages (48, 96, 192, 384
// channels) then a length-collapsing conv to D outputs.
class BaselineConv {
 public:
  BaselineConv(int length, int dim, std::uint64_t seed, int base_channels = 48);

  Var<float> forward(Tape<float>& tape, const Tensor<float>& X, bool training) const;
  Tensor<float> features(const Tensor<float>& X, int chunk = 512) const;

  ParamStore<float>& store() { return store_; }
  const ParamStore<float>& store() const { return store_; }
  int dim() const { return dim_; }
  int length() const { return length_; }

 private:
  int length_;
  int dim_;
  ParamStore<float> store_;
  snicap::ConvBackbone<float> net_;
};

FeatureSet baseline_features(const BaselineConv& net, const std::vector<t20::Sample>& samples);

class BaselineLearner : public training::Learner {
 public:
  BaselineLearner(BaselineConv& net, training::LossWeights w) : net_(net), weights_(w) {}
  ParamStore<float>& store() override { return net_.store(); }
  training::LossTerms<float> losses(Tape<float>& tape, const Tensor<float>& X, int batch) override;
  bool has_segment_loss() const override { return false; }

 private:
  BaselineConv& net_;
  training::LossWeights weights_;
};

struct Summary {
  double mean = 0;
  double std = 0;  // sample standard deviation, 0 for a single run
  int runs = 0;
};

Summary summarize(const std::vector<double>& values);
// Accuracies in [0, 1] rendered as percentages, e.g. "69.30±0.76".
std::string format_pm(const Summary& s);

struct MetricRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string probe;  // linear | knn
  double accuracy = 0;
  int feature_dim = 0;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records);
void write_metrics_json(const std::filesystem::path& path, const std::vector<MetricRecord>& records);

}  // namespace mcae::evalprobe
