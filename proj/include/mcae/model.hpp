#pragma once

#include <cstdint>
#include <string>

#include "mcae/segcap.hpp"

namespace mcae {

using diffcore::Parameter;
using diffcore::ParamStore;
using diffcore::Shape;
using diffcore::Tape;
using diffcore::Tensor;
using diffcore::Var;

struct McaeConfig {
  int length = 32;         // L
  int snippet_length = 8;  // l
  int capsules = 8;        // N
  int segments = 80;       // M
  int base_channels = 8;   // C of the snippet conv encoder
  int lstm_hidden = 32;
  int head_width = 32;
  bool template_conditioned = true;
  // Snippet autoencoder only; mu doubles as the representation.
  bool single_layer = false;

  int snippets() const { return length / snippet_length; }
  int representation_dim() const { return single_layer ? capsules : segments; }
  void validate() const;
};

// Snippet-only model over the entire trajectory with 80 capsules.
McaeConfig single_layer_config(int length);

template <typename T>
struct ModelOutput {
  Var<T> x_hat;   // B x L x 2
  Var<T> A;       // B*S x N x 9
  Var<T> mu;      // B*S x N
  Var<T> nu;      // B x M (single layer: B x N view of mu)
  Var<T> Bm;      // B x M x 9 (invalid for single layer)
  Var<T> A_hat;   // B x S x N x 9 (invalid for single layer)
  Var<T> mu_hat;  // B x S x N (invalid for single layer)
};

template <typename T>
class Mcae {
 public:
  Mcae(const McaeConfig& config, std::uint64_t seed, bool tie_lstm_directions = false);
  Mcae(const Mcae&) = delete;
  Mcae& operator=(const Mcae&) = delete;

  // X: B x L x 2. Training mode uses batch statistics in batch norm and
  // updates the running estimates.
  ModelOutput<T> forward(Tape<T>& tape, const Tensor<T>& X, bool training) const;

  // Evaluation-mode representation vectors (B x representation_dim).
  Tensor<T> features(const Tensor<T>& X, int chunk = 512) const;

  const McaeConfig& config() const { return config_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }

  Parameter<T>& snippet_templates() const { return *templates_; }
  Parameter<T>* segment_top() const { return p_top_; }
  Parameter<T>* segment_alpha() const { return alpha_; }
  const snicap::ConvBackbone<T>& snippet_encoder() const { return encoder_; }

 private:
  McaeConfig config_;
  ParamStore<T> store_;
  Parameter<T>* templates_ = nullptr;
  snicap::ConvBackbone<T> encoder_;
  segcap::SegmentEncoder<T> segment_encoder_;
  Parameter<T>* p_top_ = nullptr;
  Parameter<T>* alpha_ = nullptr;
};

}  // namespace mcae
