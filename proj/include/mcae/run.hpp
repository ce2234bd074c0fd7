#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "mcae/evalprobe.hpp"
#include "mcae/training.hpp"

namespace mcae::run {

// Training source named by config.data.
training::Sampler make_sampler(const training::TrainConfig& config);

struct RunResult {
  std::unique_ptr<Mcae<float>> model;
  training::TrainLog log;
  std::filesystem::path dir;
  bool from_cache = false;
};

// Trains an MCAE and writes config.txt, metrics.csv, checkpoint.ckpt (every
// epoch) and model.ckpt (final) under `out`.
RunResult train_mcae(const training::TrainConfig& config, const std::filesystem::path& out, bool quiet = true);

// Reuses <root>/<config_hash>/model.ckpt when present, otherwise trains there.
RunResult cached_mcae(const training::TrainConfig& config, const std::filesystem::path& root, bool quiet = true);

// Test accuracy for the model's data source.
evalprobe::EvalResult evaluate(const Mcae<float>& model, const training::TrainConfig& config,
                               const evalprobe::EvalProtocol& protocol = {});

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace mcae::run
