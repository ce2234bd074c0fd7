#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mcae/diffcore/tape.hpp"

namespace mcae::diffcore {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments are kept one per parameter, in the order of the parameter list.
template <typename T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;

  AdamState() = default;
  explicit AdamState(std::span<Parameter<T>* const> params) {
    for (const Parameter<T>* p : params) {
      first_moment.emplace_back(p->value.shape);
      second_moment.emplace_back(p->value.shape);
    }
  }
};

// One bias-corrected Adam step using the gradient slots of `params`.
template <typename T>
void adam_update(std::span<Parameter<T>* const> params, AdamState<T>& state, const AdamOptions& opt) {
  if (state.first_moment.size() != params.size()) {
    throw ConfigError("adam: optimizer state holds " + std::to_string(state.first_moment.size()) +
                      " moments for " + std::to_string(params.size()) + " parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
  const T step_size = static_cast<T>(opt.lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T eps = static_cast<T>(opt.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = *params[k];
    Tensor<T>& m = state.first_moment[k];
    Tensor<T>& v = state.second_moment[k];
    if (m.shape != p.value.shape || p.grad.shape != p.value.shape) {
      throw ConfigError("adam: shape mismatch for parameter " + p.name);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = p.grad.data[i];
      m.data[i] = b1 * m.data[i] + (T(1) - b1) * g;
      v.data[i] = b2 * v.data[i] + (T(1) - b2) * g * g;
      // lr * m_hat / (sqrt(v_hat) + eps)
      p.value.data[i] -= step_size * m.data[i] / (std::sqrt(v.data[i]) * inv_sqrt_c2 + eps);
    }
  }
}

}  // namespace mcae::diffcore
