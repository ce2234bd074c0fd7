#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcae/evalprobe.hpp"
#include "mcae/model.hpp"
#include "mcae/training.hpp"

namespace mcae::multipoint {

struct MultiPointSequence {
  Tensor<float> points;  // K x T x dim
  int label = 0;
  std::string id;
  int subject = -1;  // reserved, -1 when unknown

  int joints() const { return points.rank() == 3 ? points.dim(0) : 0; }
  int frames() const { return points.rank() == 3 ? points.dim(1) : 0; }
  int dim() const { return points.rank() == 3 ? points.dim(2) : 0; }
  void validate() const;
  bool operator==(const MultiPointSequence&) const = default;
};

// (x, y), (y, z), (x, z), in that order.
std::array<Tensor<float>, 3> project_3d_views(const Tensor<float>& seq);

struct Normalized {
  Tensor<float> seq;
  bool degenerate = false;  // input had no spatial extent; seq is all zeros
};

// Linear resampling to `length` steps, then the sequence-wide centroid is
// removed and coordinates are divided by the largest absolute value.
Normalized normalize_and_resample(const Tensor<float>& seq, int length);

// Segment activations of every point (and view, for 3D input) concatenated:
// block (v * K + k) holds view v of point k. Sequences must already have the
// model's input length. `per_view` optionally supplies one model per view for
// 3D input; otherwise `model` is shared by all views.
Tensor<float> mcae_mp_features(const Mcae<float>& model, const std::vector<MultiPointSequence>& seqs,
                               const std::array<const Mcae<float>*, 3>* per_view = nullptr);
evalprobe::FeatureSet mp_feature_set(const Mcae<float>& model, const std::vector<MultiPointSequence>& seqs,
                                     const std::array<const Mcae<float>*, 3>* per_view = nullptr);

// Skeleton text files.
std::string format_skeleton(const std::vector<MultiPointSequence>& seqs);
std::vector<MultiPointSequence> parse_skeleton(const std::string& text);
void save_skeleton_file(const std::filesystem::path& path, const std::vector<MultiPointSequence>& seqs);
std::vector<MultiPointSequence> load_skeleton_file(const std::filesystem::path& path);

// n samples with labels i mod 20. Point 0 is the T20 sample of gen_test_set;
// the other points are the same curve shifted by a per-sample random offset
// plus Gaussian noise of std `noise`.
std::vector<MultiPointSequence> synth_multipoint_gen(int K, int n, std::uint64_t seed, double noise = 0.02,
                                                     int length = t20::kTrajectoryLength);

// Every sequence through normalize_and_resample.
std::vector<MultiPointSequence> normalized(const std::vector<MultiPointSequence>& seqs, int length);

// Training source: single point trajectories drawn from a fixed normalized
// synthetic pool.
training::Sampler multipoint_sampler(int K, int pool_size, double noise, std::uint64_t seed,
                                     int length = t20::kTrajectoryLength);

// Probe and 1-NN on normalized synthetic multi-point sets drawn with the
// protocol's sizes and seeds.
evalprobe::EvalResult evaluate_multipoint(const Mcae<float>& model, int K, double noise,
                                          const evalprobe::EvalProtocol& protocol = {});

}  // namespace mcae::multipoint
