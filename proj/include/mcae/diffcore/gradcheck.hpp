#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mcae/diffcore/tape.hpp"

namespace mcae::diffcore {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  // |a - n| / max(|a|, |n|, floor): keeps near-zero gradients from reporting
  // huge relative noise.
  double floor = 1e-6;
  // 0 checks every coordinate; otherwise a deterministic random subset per array.
  std::size_t max_coords_per_array = 0;
  std::uint64_t seed = 0;
  // Coordinates whose +step and -step evaluations fall on different pieces of
  // a leaky_relu or clamp are reported as skipped instead of compared: the
  // central difference there straddles a kink.
  bool skip_kinks = true;
};

struct GradCheckEntry {
  std::string array;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
  bool pass = false;
  bool skipped = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0;
  bool passed = true;
  std::size_t skipped = 0;
  std::string worst() const;
};

double relative_error(double analytic, double numeric, double floor);

// Builds a scalar loss on a fresh tape from the current parameter values.
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

// Compares tape gradients of `build` against central differences of its value,
// perturbing each selected parameter coordinate in place.
GradCheckReport gradcheck_params(const LossBuilder& build, std::span<Parameter<double>* const> params,
                                 const GradCheckOptions& opt = {});

using InputFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

// Same check with respect to free input arrays.
GradCheckReport gradcheck(const InputFn& fn, const std::vector<Tensor<double>>& inputs,
                          const GradCheckOptions& opt = {});

}  // namespace mcae::diffcore
