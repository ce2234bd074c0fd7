#pragma once

#include <string>

#include "mcae/training.hpp"

// Matched desk-scale budget shared by the learning, ablation and analysis checks.
namespace mcae::desk {

inline constexpr int kEpochs = 200;
inline constexpr int kBatches = 500;
inline constexpr int kMultipointEpochs = 50;

inline training::TrainConfig t20(const std::string& variant = "default") {
  training::TrainConfig c = variant == "single-layer" ? training::preset_config("single-layer") : training::TrainConfig{};
  c.max_epochs = kEpochs;
  c.batches_per_epoch = kBatches;
  if (variant == "l4") c.model.snippet_length = 4;
  if (variant == "no-sparsity") c.loss.sparsity = 0.0;
  c.validate();
  return c;
}

inline training::TrainConfig multipoint() {
  training::TrainConfig c = training::preset_config("multipoint");
  c.max_epochs = kMultipointEpochs;
  c.batches_per_epoch = kBatches;
  c.validate();
  return c;
}

}  // namespace mcae::desk
