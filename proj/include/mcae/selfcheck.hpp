#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcae/diffcore/gradcheck.hpp"
#include "mcae/training.hpp"

namespace mcae::selfcheck {

struct CheckLine {
  std::string name;
  double max_rel_error = 0;
  std::size_t coords = 0;
  std::size_t skipped = 0;  // straddled a kink, not compared
  bool passed = false;
  std::string worst;
};

// Central differences with step 1e-4, tolerance 1e-4.
diffcore::GradCheckOptions default_options();

// L=16, l=8, N=2, M=3 (batch 4 in the objective check).
training::TrainConfig miniature_config();

// Every differentiable primitive on small random inputs, in double precision.
std::vector<CheckLine> gradcheck_primitives(const diffcore::GradCheckOptions& options = default_options());

// Full training objective (both views, all loss terms) against every model
// parameter.
CheckLine gradcheck_objective(const training::TrainConfig& config,
                              const diffcore::GradCheckOptions& options = default_options());

}  // namespace mcae::selfcheck
