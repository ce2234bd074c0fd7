#pragma once

#include <array>
#include <string>
#include <vector>

#include "mcae/diffcore/ops.hpp"
#include "mcae/diffcore/param_store.hpp"
#include "mcae/rng.hpp"

namespace mcae::snicap {

using diffcore::Parameter;
using diffcore::ParamStore;
using diffcore::Shape;
using diffcore::Tape;
using diffcore::Tensor;
using diffcore::Var;

// Per-capsule raw output layout of the encoders.
inline constexpr int kRawPerCapsule = 5;  // activation logit, s, tx, ty, theta
inline constexpr int kMatrixSize = 9;     // 3 x 3, row-major
inline constexpr double kTranslationLimit = 1.5;

// [[sig(s) cos t, -sig(s) sin t, clamp(tx)], [sig(s) sin t, sig(s) cos t, clamp(ty)], [0, 0, 1]]
std::array<double, 9> assemble_similarity(double s, double theta, double tx, double ty,
                                          double limit = kTranslationLimit);

// raw: ... x 4 ordered (s, tx, ty, theta) -> ... x 9.
template <typename T>
Var<T> assemble_similarity(Var<T> raw, T limit = T(kTranslationLimit));

// Splits an L x d trajectory into L / l consecutive snippets.
template <typename T>
std::vector<Tensor<T>> snippet_split(const Tensor<T>& trajectory, int l);

// B x L x d trajectories -> (B * S) x d x l conv input, snippet-major within a sample.
template <typename T>
Tensor<T> snippets_to_conv_input(const Tensor<T>& batch, int l);

// Number of stride-2 stages needed to reduce l to 1.
int stages_for_length(int l);

struct BackboneSpec {
  int in_channels = 2;
  int base_channels = 8;
  int stages = 3;
  int out_channels = 40;
  int final_kernel = 1;
  int final_padding = 0;
  float leaky_slope = 0.01f;
};

// Stride-2 convs (kernel 4, padding 1) with batch norm and leaky ReLU, the
// i-th producing base * 2^i channels, followed by one plain conv.
template <typename T>
class ConvBackbone {
 public:
  ConvBackbone() = default;
  ConvBackbone(ParamStore<T>& store, const std::string& prefix, const BackboneSpec& spec, Rng& rng);

  // input: R x in_channels x len -> R x out_channels x len'
  Var<T> forward(Tape<T>& tape, Var<T> input, bool training) const;

  const BackboneSpec& spec() const { return spec_; }

 private:
  struct Stage {
    Parameter<T>* kernel;
    Parameter<T>* bias;
    Parameter<T>* gamma;
    Parameter<T>* beta;
    Tensor<T>* running_mean;
    Tensor<T>* running_var;
  };
  BackboneSpec spec_;
  std::vector<Stage> stages_;
  Parameter<T>* final_kernel_ = nullptr;
  Parameter<T>* final_bias_ = nullptr;
};

// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) tensor.
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, int fan_in, Rng& rng);

// A: R x N x 9, mu: R x N, templates: N x l x 2 -> R x l x 2.
//   x_j = sum_i mu_i * (A_i [t_ij; 1])_{0:2}
template <typename T>
Var<T> snippet_decode(Var<T> A, Var<T> mu, Var<T> templates);

// N random straight lines of l evenly spaced points with endpoints in [-0.5, 0.5]^2.
template <typename T>
Tensor<T> init_snippet_templates(int n, int l, Rng& rng);

}  // namespace mcae::snicap
