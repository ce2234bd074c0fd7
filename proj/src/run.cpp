#include "mcae/run.hpp"

#include <fstream>
#include <sstream>

#include "mcae/multipoint.hpp"

namespace mcae::run {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

training::Sampler make_sampler(const training::TrainConfig& config) {
  if (config.data == "multipoint") {
    // pool seed kept away from the evaluation seeds
    return multipoint::multipoint_sampler(config.mp_points, config.mp_samples, config.mp_noise,
                                          split_seed(config.seed, 0x9001), config.model.length);
  }
  if (config.model.length != t20::kTrajectoryLength) {
    throw ConfigError("T20 trajectories have " + std::to_string(t20::kTrajectoryLength) + " steps, model.length is " +
                      std::to_string(config.model.length));
  }
  return training::t20_sampler();
}

RunResult train_mcae(const training::TrainConfig& config, const fs::path& out, bool quiet) {
  config.validate();
  fs::create_directories(out);
  write_text(out / "config.txt", training::config_text(config));
  RunResult r;
  r.dir = out;
  r.model = std::make_unique<Mcae<float>>(config.model, config.seed);
  training::McaeLearner learner(*r.model, config.loss);
  training::TrainOptions opt;
  opt.metrics_csv = out / "metrics.csv";
  opt.checkpoint = out / "checkpoint.ckpt";
  for (const auto& [k, v] : training::config_entries(config)) opt.checkpoint_meta["cfg." + k] = v;
  opt.checkpoint_meta["kind"] = "mcae";
  opt.quiet = quiet;
  diffcore::AdamState<float> adam(r.model->store().params());
  r.log = training::train_run(config, learner, make_sampler(config), opt, &adam);
  auto ck = training::model_checkpoint(*r.model, config, &adam);
  ck.meta["run.epochs"] = std::to_string(r.log.epochs.size());
  ck.meta["run.steps"] = std::to_string(r.log.steps);
  ck.meta["run.stop"] = r.log.stop_reason;
  training::save_checkpoint(out / "model.ckpt", ck);
  return r;
}

RunResult cached_mcae(const training::TrainConfig& config, const fs::path& root, bool quiet) {
  const fs::path dir = root / training::config_hash(config);
  if (fs::exists(dir / "model.ckpt")) {
    const auto ck = training::load_checkpoint(dir / "model.ckpt");
    if (training::config_hash(training::checkpoint_config(ck)) == training::config_hash(config)) {
      RunResult r;
      r.dir = dir;
      r.model = training::model_from_checkpoint(ck);
      r.from_cache = true;
      return r;
    }
  }
  return train_mcae(config, dir, quiet);
}

evalprobe::EvalResult evaluate(const Mcae<float>& model, const training::TrainConfig& config,
                               const evalprobe::EvalProtocol& protocol) {
  if (config.data == "multipoint") return multipoint::evaluate_multipoint(model, config.mp_points, config.mp_noise, protocol);
  return evalprobe::evaluate_t20(model, protocol);
}

}  // namespace mcae::run
