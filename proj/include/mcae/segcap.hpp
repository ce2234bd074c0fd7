#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mcae/snicap.hpp"

namespace mcae::segcap {

using diffcore::Parameter;
using diffcore::ParamStore;
using diffcore::Shape;
using diffcore::Tape;
using diffcore::Tensor;
using diffcore::Var;

// A: R x N x 9 and mu: R x N with R = B * S -> B x S x 10N, capsule-major
// [A_1 (9), mu_1, ..., A_N (9), mu_N] per snippet.
template <typename T>
Var<T> flatten_snippet_codes(Var<T> A, Var<T> mu, int batch);

// Inverse of the flattening on plain arrays: B x S x 10N -> (A: B*S x N x 9, mu: B*S x N).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> unflatten_snippet_codes(const Tensor<T>& flat, int n_capsules);

// Bidirectional single-layer LSTM returning the concatenation of the forward
// state after the last step and the backward state after the first step.
template <typename T>
class BiLstm {
 public:
  BiLstm() = default;
  // With tie_directions the backward pass reuses the forward weights.
  BiLstm(ParamStore<T>& store, const std::string& prefix, int input, int hidden, Rng& rng, bool tie_directions = false);

  // seq: B x S x input -> B x 2H
  Var<T> forward(Tape<T>& tape, Var<T> seq) const;

  int hidden() const { return hidden_; }

 private:
  struct Direction {
    Parameter<T>* w_input;
    Parameter<T>* w_hidden;
    Parameter<T>* b_input;
    Parameter<T>* b_hidden;
  };
  Direction make(ParamStore<T>& store, const std::string& prefix, Rng& rng);
  Var<T> run(Tape<T>& tape, Var<T> seq, const Direction& d, bool reverse) const;

  int input_ = 0;
  int hidden_ = 0;
  Direction fwd_{};
  Direction bwd_{};
};

struct EncoderSpec {
  int snippets = 4;       // S
  int capsules = 8;       // N
  int segments = 80;      // M
  int snippet_length = 8; // l
  int hidden = 32;
  int head_width = 32;
  // Heads also see the flattened snippet templates.
  bool template_conditioned = true;
  float leaky_slope = 0.01f;
};

template <typename T>
struct SegmentCode {
  Var<T> raw;  // B x M x 5
  Var<T> nu;   // B x M
  Var<T> B;    // B x M x 9
};

template <typename T>
class SegmentEncoder {
 public:
  SegmentEncoder() = default;
  SegmentEncoder(ParamStore<T>& store, const std::string& prefix, const EncoderSpec& spec, Rng& rng,
                 bool tie_lstm_directions = false);

  // seq: B x S x 10N; templates: N x l x 2 (used only when template-conditioned).
  SegmentCode<T> forward(Tape<T>& tape, Var<T> seq, Var<T> templates) const;

  // Final BiLSTM state only, for inspection.
  Var<T> lstm_state(Tape<T>& tape, Var<T> seq) const { return lstm_.forward(tape, seq); }

  const EncoderSpec& spec() const { return spec_; }

 private:
  EncoderSpec spec_;
  BiLstm<T> lstm_;
  Parameter<T>* fc_w_ = nullptr;
  Parameter<T>* fc_b_ = nullptr;
  Parameter<T>* head_w_ = nullptr;
  Parameter<T>* head_b_ = nullptr;
  Parameter<T>* head_t_ = nullptr;
};

// ... x 6 (the top two rows) -> ... x 9 with last row (0, 0, 1).
template <typename T>
Var<T> homogeneous_from_top(Var<T> top);

// nu: B x M, Bm: B x M x 9, P: M x S x N x 9 ->
//   A_hat[b, i, n] = sum_k nu[b, k] * Bm[b, k] * P[k, i, n]   (B x S x N x 9)
template <typename T>
Var<T> segment_decode_matrices(Var<T> nu, Var<T> Bm, Var<T> P);

// nu: B x M, alpha: M x S x N -> B x S x N
template <typename T>
Var<T> segment_decode_activations(Var<T> nu, Var<T> alpha);

// Top two rows of random similarity matrices (M x S x N x 6) and alpha in [0, 2/N).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> init_segment_templates(int segments, int snippets, int capsules, Rng& rng);

}  // namespace mcae::segcap
