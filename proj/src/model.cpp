#include "mcae/model.hpp"

#include <algorithm>

namespace mcae {

void McaeConfig::validate() const {
  if (length <= 0 || snippet_length <= 0 || length % snippet_length != 0) {
    throw ConfigError("trajectory length " + std::to_string(length) + " is not divisible by snippet length " +
                      std::to_string(snippet_length));
  }
  snicap::stages_for_length(snippet_length);
  if (capsules <= 0 || base_channels <= 0 || lstm_hidden <= 0 || head_width <= 0) {
    throw ConfigError("model sizes must be positive");
  }
  if (!single_layer && segments <= 0) throw ConfigError("segment count must be positive");
}

McaeConfig single_layer_config(int length) {
  McaeConfig c;
  c.length = length;
  c.snippet_length = length;
  c.capsules = 80;
  c.single_layer = true;
  return c;
}

template <typename T>
Mcae<T>::Mcae(const McaeConfig& config, std::uint64_t seed, bool tie_lstm_directions) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int N = config_.capsules, l = config_.snippet_length;
  templates_ = &store_.add("snippet.templates", snicap::init_snippet_templates<T>(N, l, rng));
  snicap::BackboneSpec spec;
  spec.in_channels = 2;
  spec.base_channels = config_.base_channels;
  spec.stages = snicap::stages_for_length(l);
  spec.out_channels = snicap::kRawPerCapsule * N;
  encoder_ = snicap::ConvBackbone<T>(store_, "snippet.encoder", spec, rng);
  if (config_.single_layer) return;
  segcap::EncoderSpec es;
  es.snippets = config_.snippets();
  es.capsules = N;
  es.segments = config_.segments;
  es.snippet_length = l;
  es.hidden = config_.lstm_hidden;
  es.head_width = config_.head_width;
  es.template_conditioned = config_.template_conditioned;
  segment_encoder_ = segcap::SegmentEncoder<T>(store_, "segment.encoder", es, rng, tie_lstm_directions);
  auto [top, alpha] = segcap::init_segment_templates<T>(config_.segments, config_.snippets(), N, rng);
  p_top_ = &store_.add("segment.templates", std::move(top));
  alpha_ = &store_.add("segment.alpha", std::move(alpha));
}

template <typename T>
ModelOutput<T> Mcae<T>::forward(Tape<T>& tape, const Tensor<T>& X, bool training) const {
  const Shape& xs = X.shape;
  if (xs.size() != 3 || xs[1] != config_.length || xs[2] != 2) {
    throw ConfigError("model input must be B x " + std::to_string(config_.length) + " x 2, got " +
                      diffcore::shape_str(xs));
  }
  const int B = xs[0], S = config_.snippets(), N = config_.capsules, l = config_.snippet_length;
  const int R = B * S;
  // B x L x 2 -> R x 2 x l: regroup time into snippets, then put coordinates first.
  Var<T> input = tape.constant(snicap::snippets_to_conv_input(X, l));

  ModelOutput<T> out;
  Var<T> raw = diffcore::reshape(encoder_.forward(tape, input, training), {R, N, snicap::kRawPerCapsule});
  out.mu = diffcore::reshape(diffcore::sigmoid(diffcore::slice(raw, 2, 0, 1)), {R, N});
  out.A = snicap::assemble_similarity(diffcore::slice(raw, 2, 1, 4));
  Var<T> tmpl = tape.param(*templates_);
  out.x_hat = diffcore::reshape(snicap::snippet_decode(out.A, out.mu, tmpl), {B, config_.length, 2});
  if (config_.single_layer) {
    out.nu = out.mu;
    return out;
  }
  Var<T> seq = segcap::flatten_snippet_codes(out.A, out.mu, B);
  segcap::SegmentCode<T> code = segment_encoder_.forward(tape, seq, tmpl);
  out.nu = code.nu;
  out.Bm = code.B;
  Var<T> P = segcap::homogeneous_from_top(tape.param(*p_top_));
  out.A_hat = segcap::segment_decode_matrices(code.nu, code.B, P);
  out.mu_hat = segcap::segment_decode_activations(code.nu, tape.param(*alpha_));
  return out;
}

template <typename T>
Tensor<T> Mcae<T>::features(const Tensor<T>& X, int chunk) const {
  if (X.rank() != 3) throw ConfigError("features: expects B x L x 2");
  const int B = X.dim(0), L = X.dim(1), D = config_.representation_dim();
  Tensor<T> out(Shape{B, D});
  const std::size_t stride = static_cast<std::size_t>(L) * 2;
  for (int start = 0; start < B; start += chunk) {
    const int n = std::min(chunk, B - start);
    Tensor<T> part(Shape{n, L, 2},
                   std::vector<T>(X.data.begin() + start * stride, X.data.begin() + (start + n) * stride));
    Tape<T> tape(false);
    ModelOutput<T> o = forward(tape, part, false);
    const auto& nv = o.nu.value();
    std::copy(nv.data.begin(), nv.data.end(), out.data.begin() + static_cast<std::size_t>(start) * D);
  }
  return out;
}

template class Mcae<float>;
template class Mcae<double>;

}  // namespace mcae
