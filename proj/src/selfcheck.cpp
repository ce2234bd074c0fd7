#include "mcae/selfcheck.hpp"

#include <functional>

#include "mcae/diffcore/ops.hpp"
#include "mcae/segcap.hpp"
#include "mcae/snicap.hpp"
#include "mcae/t20gen.hpp"

namespace mcae::selfcheck {

namespace dc = diffcore;
using V = Var<double>;
using TD = Tensor<double>;

dc::GradCheckOptions default_options() {
  dc::GradCheckOptions o;
  o.step = 1e-4;
  o.tolerance = 1e-4;
  o.floor = 1e-6;
  return o;
}

training::TrainConfig miniature_config() {
  training::TrainConfig c;
  c.model.length = 16;
  c.model.snippet_length = 8;
  c.model.capsules = 2;
  c.model.segments = 3;
  c.batch_size = 4;
  return c;
}

namespace {

TD randn(Shape s, Rng& rng, double sd = 1.0) {
  TD t(std::move(s));
  for (auto& v : t.data) v = sd * rng.normal();
  return t;
}

TD randu(Shape s, Rng& rng, double lo, double hi) {
  TD t(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

CheckLine summarize(const std::string& name, const dc::GradCheckReport& r) {
  CheckLine c;
  c.name = name;
  c.max_rel_error = r.max_rel_error;
  c.coords = r.entries.size();
  c.skipped = r.skipped;
  c.passed = r.passed && r.entries.size() > r.skipped;
  c.worst = r.worst();
  return c;
}

// Non-scalar outputs are reduced with fixed random weights so every output
// coordinate contributes.
V project(V y, std::uint64_t seed) {
  if (y.shape().empty()) return y;
  Rng rng(seed);
  TD w(y.shape());
  for (auto& v : w.data) v = rng.uniform(-1.0, 1.0);
  return dc::sum(dc::mul(y, y.tape->constant(std::move(w))));
}

using Fn = std::function<V(std::span<const V>)>;

}  // namespace

std::vector<CheckLine> gradcheck_primitives(const dc::GradCheckOptions& options) {
  std::vector<CheckLine> out;
  Rng rng(options.seed ^ 0x51C0);
  std::uint64_t k = 0;
  auto check = [&](const std::string& name, std::vector<TD> inputs, Fn f) {
    const std::uint64_t seed = ++k;
    dc::InputFn fn = [&](Tape<double>&, std::span<const V> in) { return project(f(in), seed); };
    out.push_back(summarize(name, dc::gradcheck(fn, inputs, options)));
  };

  check("add", {randn({3, 4}, rng), randn({3, 4}, rng)}, [](auto in) { return in[0] + in[1]; });
  check("sub", {randn({3, 4}, rng), randn({3, 4}, rng)}, [](auto in) { return in[0] - in[1]; });
  check("mul", {randn({3, 4}, rng), randn({3, 4}, rng)}, [](auto in) { return in[0] * in[1]; });
  check("scale", {randn({5}, rng)}, [](auto in) { return dc::scale(in[0], -1.7); });
  check("add_scalar", {randn({5}, rng)}, [](auto in) { return dc::add_scalar(in[0], 0.3); });
  check("add_bias", {randn({2, 3, 4}, rng), randn({3, 4}, rng)}, [](auto in) { return dc::add_bias(in[0], in[1]); });
  check("mul_prefix", {randn({2, 3, 4}, rng), randn({2, 3}, rng)}, [](auto in) { return dc::mul_prefix(in[0], in[1]); });
  check("sigmoid", {randn({6}, rng, 2.0)}, [](auto in) { return dc::sigmoid(in[0]); });
  check("tanh", {randn({6}, rng)}, [](auto in) { return dc::tanh(in[0]); });
  check("leaky_relu", {randn({8}, rng)}, [](auto in) { return dc::leaky_relu(in[0], 0.01); });
  check("exp", {randn({6}, rng)}, [](auto in) { return dc::exp(in[0]); });
  check("log", {randu({6}, rng, 0.5, 3.0)}, [](auto in) { return dc::log(in[0]); });
  check("square", {randn({6}, rng)}, [](auto in) { return dc::square(in[0]); });
  check("sin", {randn({6}, rng)}, [](auto in) { return dc::sin(in[0]); });
  check("cos", {randn({6}, rng)}, [](auto in) { return dc::cos(in[0]); });
  check("clamp", {randn({8}, rng, 2.0)}, [](auto in) { return dc::clamp(in[0], 1.5); });
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
      Shape sb = tb ? Shape{5, 4} : Shape{4, 5};
      check("matmul" + std::string(ta ? "_ta" : "") + (tb ? "_tb" : ""), {randn(sa, rng), randn(sb, rng)},
            [=](auto in) { return dc::matmul(in[0], in[1], ta != 0, tb != 0); });
    }
  check("matmul_batched", {randn({2, 3, 4}, rng), randn({4, 2}, rng)}, [](auto in) { return dc::matmul(in[0], in[1]); });
  check("affine", {randn({3, 4}, rng), randn({5, 4}, rng), randn({5}, rng)},
        [](auto in) { return dc::affine(in[0], in[1], in[2]); });
  check("grouped_affine", {randn({2, 3, 4}, rng), randn({3, 5, 4}, rng), randn({3, 5}, rng)},
        [](auto in) { return dc::grouped_affine(in[0], in[1], in[2]); });
  check("reshape", {randn({2, 6}, rng)}, [](auto in) { return dc::reshape(in[0], {3, 4}); });
  check("slice", {randn({3, 5, 2}, rng)}, [](auto in) { return dc::slice(in[0], 1, 1, 3); });
  check("concat", {randn({2, 3}, rng), randn({2, 2}, rng)},
        [](auto in) { return dc::concat<double>({in[0], in[1]}, 1); });
  check("sum", {randn({3, 4}, rng)}, [](auto in) { return dc::sum(in[0]); });
  check("mean", {randn({3, 4}, rng)}, [](auto in) { return dc::mean(in[0]); });
  check("sum_squares", {randn({3, 4}, rng)}, [](auto in) { return dc::sum_squares(in[0]); });
  check("sum_last", {randn({3, 4}, rng)}, [](auto in) { return dc::sum_last(in[0]); });
  check("row_normalize", {randn({3, 4}, rng)}, [](auto in) { return dc::row_normalize(in[0]); });
  check("cosine_similarity", {randn({3, 4}, rng), randn({3, 4}, rng)},
        [](auto in) { return dc::cosine_similarity(in[0], in[1]); });
  check("conv1d_stride2", {randn({2, 3, 8}, rng), randn({4, 3, 4}, rng), randn({4}, rng)},
        [](auto in) { return dc::conv1d(in[0], in[1], in[2], 2, 1); });
  check("conv1d_stride1", {randn({2, 3, 5}, rng), randn({2, 3, 3}, rng), randn({2}, rng)},
        [](auto in) { return dc::conv1d(in[0], in[1], in[2], 1, 0); });
  {
    auto rm = std::make_shared<TD>(Shape{3});
    auto rv = std::make_shared<TD>(Shape{3}, 1.0);
    for (int training = 0; training < 2; ++training)
      check(training ? "batch_norm1d_train" : "batch_norm1d_eval",
            {randn({4, 3, 5}, rng), randu({3}, rng, 0.5, 1.5), randn({3}, rng)}, [=](auto in) {
              dc::BatchNormState<double> st{rm.get(), rv.get()};
              return dc::batch_norm1d(in[0], in[1], in[2], st, training != 0);
            });
  }
  {
    const int B = 2, I = 3, H = 4;
    std::vector<TD> in{randn({B, I}, rng), randn({B, H}, rng), randn({B, H}, rng), randn({4 * H, I}, rng, 0.5),
                       randn({4 * H, H}, rng, 0.5), randn({4 * H}, rng), randn({4 * H}, rng)};
    check("lstm_step", in, [](auto v) {
      auto [h, c] = dc::lstm_step(v[0], v[1], v[2], dc::LstmWeights<double>{v[3], v[4], v[5], v[6]});
      return dc::concat<double>({h, c}, 1);
    });
    std::vector<TD> pin{randn({B, 4 * H}, rng), randn({B, H}, rng), randn({B, H}, rng), randn({4 * H, I}, rng, 0.5),
                        randn({4 * H, H}, rng, 0.5), randn({4 * H}, rng), randn({4 * H}, rng)};
    check("lstm_step_projected", pin, [](auto v) {
      auto [h, c] = dc::lstm_step_projected(v[0], v[1], v[2], dc::LstmWeights<double>{v[3], v[4], v[5], v[6]});
      return dc::concat<double>({h, c}, 1);
    });
  }
  {
    const std::vector<int> labels{2, 0, 1, 2};
    check("softmax_cross_entropy", {randn({4, 3}, rng)},
          [labels](auto in) { return dc::softmax_cross_entropy(in[0], std::span<const int>(labels)); });
  }
  check("contrastive_rows", {randn({4, 4}, rng)}, [](auto in) { return dc::contrastive_rows(in[0], false); });
  check("contrastive_rows_positive", {randn({4, 4}, rng)}, [](auto in) { return dc::contrastive_rows(in[0], true); });
  check("assemble_similarity", {randn({3, 2, 4}, rng)}, [](auto in) { return snicap::assemble_similarity(in[0]); });
  check("snippet_decode", {randn({3, 2, 9}, rng), randu({3, 2}, rng, 0.1, 0.9), randn({2, 4, 2}, rng)},
        [](auto in) { return snicap::snippet_decode(in[0], in[1], in[2]); });
  check("homogeneous_from_top", {randn({2, 3, 6}, rng)}, [](auto in) { return segcap::homogeneous_from_top(in[0]); });
  check("segment_decode_matrices", {randu({2, 3}, rng, 0.1, 0.9), randn({2, 3, 9}, rng), randn({3, 2, 2, 9}, rng)},
        [](auto in) { return segcap::segment_decode_matrices(in[0], in[1], in[2]); });
  check("segment_decode_activations", {randu({2, 3}, rng, 0.1, 0.9), randu({3, 2, 2}, rng, 0.0, 1.0)},
        [](auto in) { return segcap::segment_decode_activations(in[0], in[1]); });
  return out;
}

CheckLine gradcheck_objective(const training::TrainConfig& config, const dc::GradCheckOptions& options) {
  config.validate();
  const int B = config.batch_size, L = config.model.length;
  Mcae<double> model(config.model, config.seed);
  // a fixed pair of augmented views, as one training step would see them
  Rng rng(split_seed(config.seed, 0xC4EC));
  TD X(Shape{2 * B, L, 2});
  for (int i = 0; i < B; ++i) {
    const t20::Sample s = t20::sample_random(rng, L);
    Tensor<float> one(Shape{1, L, 2}, s.xy);
    const Tensor<float> v1 = training::augment(one, config.augment, rng);
    const Tensor<float> v2 = training::augment(one, config.augment, rng);
    std::copy(v1.data.begin(), v1.data.end(), X.data.begin() + static_cast<std::size_t>(i) * L * 2);
    std::copy(v2.data.begin(), v2.data.end(), X.data.begin() + static_cast<std::size_t>(B + i) * L * 2);
  }
  training::FrozenTargets<double> targets;
  if (!config.model.single_layer) {
    Tape<double> tape(false);
    const ModelOutput<double> out = model.forward(tape, X, true);
    targets = {out.A.value(), out.mu.value()};
  }
  const auto* frozen = config.model.single_layer ? nullptr : &targets;
  dc::LossBuilder build = [&](Tape<double>& tape) {
    const ModelOutput<double> out = model.forward(tape, X, true);
    return training::compute_losses(out, tape, X, B, config.loss, config.model.single_layer, frozen).total;
  };
  auto params = model.store().params();
  return summarize("objective", dc::gradcheck_params(build, params, options));
}

}  // namespace mcae::selfcheck
