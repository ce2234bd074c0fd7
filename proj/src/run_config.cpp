#include <cstdio>
#include <fstream>
#include <sstream>

#include "mcae/training.hpp"

namespace mcae::training {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(bool v) { return v ? "true" : "false"; }

int to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("config key " + key + ": expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || v[0] == '-') {
    throw ConfigError("config key " + key + ": expected a nonnegative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key " + key + ": expected true or false, got '" + v + "'");
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  augment.validate();
  if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2");
  if (batches_per_epoch < 1 || max_epochs < 0 || patience < 1 || average_window < 1) {
    throw ConfigError("training schedule values must be positive");
  }
  if (!(loss.tau > 0)) throw ConfigError("loss.tau must be positive");
  if (!(adam.lr > 0)) throw ConfigError("train.lr must be positive");
  if (data != "t20" && data != "multipoint") throw ConfigError("unknown data source '" + data + "'");
  if (data == "multipoint" && (mp_points < 1 || mp_samples < 1)) throw ConfigError("multipoint sizes must be positive");
}

TrainConfig preset_config(const std::string& name) {
  TrainConfig c;
  c.preset = name;
  if (name == "t20") return c;
  if (name == "single-layer") {
    c.model = single_layer_config(32);
    return c;
  }
  if (name == "multipoint") {
    c.data = "multipoint";
    c.loss.lambda_sni = 10.0;
    c.loss.lambda_seg = 5.0;
    c.augment = AugmentPolicy::skeleton();
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected t20, single-layer or multipoint)");
}

void apply_entry(TrainConfig& c, const std::string& key, const std::string& v) {
  if (key == "preset") {
    c = preset_config(v);
  } else if (key == "data") {
    c.data = v;
  } else if (key == "model.length") {
    c.model.length = to_int(key, v);
  } else if (key == "model.snippet_length") {
    c.model.snippet_length = to_int(key, v);
  } else if (key == "model.capsules") {
    c.model.capsules = to_int(key, v);
  } else if (key == "model.segments") {
    c.model.segments = to_int(key, v);
  } else if (key == "model.base_channels") {
    c.model.base_channels = to_int(key, v);
  } else if (key == "model.lstm_hidden") {
    c.model.lstm_hidden = to_int(key, v);
  } else if (key == "model.head_width") {
    c.model.head_width = to_int(key, v);
  } else if (key == "model.template_conditioned") {
    c.model.template_conditioned = to_bool(key, v);
  } else if (key == "model.single_layer") {
    c.model.single_layer = to_bool(key, v);
  } else if (key == "loss.lambda_sni") {
    c.loss.lambda_sni = to_double(key, v);
  } else if (key == "loss.lambda_seg") {
    c.loss.lambda_seg = to_double(key, v);
  } else if (key == "loss.smoothness") {
    c.loss.smoothness = to_double(key, v);
  } else if (key == "loss.sparsity") {
    c.loss.sparsity = to_double(key, v);
  } else if (key == "loss.tau") {
    c.loss.tau = to_double(key, v);
  } else if (key == "loss.include_positive") {
    c.loss.include_positive = to_bool(key, v);
  } else if (key == "augment.rotate") {
    c.augment.rotate = to_bool(key, v);
  } else if (key == "augment.smooth") {
    c.augment.smooth = to_bool(key, v);
  } else if (key == "augment.jitter") {
    c.augment.jitter = to_bool(key, v);
  } else if (key == "augment.mask") {
    c.augment.mask = to_bool(key, v);
  } else if (key == "augment.rotate_degrees") {
    c.augment.rotate_degrees = to_double(key, v);
  } else if (key == "augment.smooth_kernel") {
    c.augment.smooth_kernel = to_int(key, v);
  } else if (key == "augment.jitter_prob") {
    c.augment.jitter_prob = to_double(key, v);
  } else if (key == "augment.jitter_sigma") {
    c.augment.jitter_sigma = to_double(key, v);
  } else if (key == "augment.mask_prob") {
    c.augment.mask_prob = to_double(key, v);
  } else if (key == "augment.apply_prob") {
    c.augment.apply_prob = to_double(key, v);
  } else if (key == "train.batch_size") {
    c.batch_size = to_int(key, v);
  } else if (key == "train.batches_per_epoch") {
    c.batches_per_epoch = to_int(key, v);
  } else if (key == "train.max_epochs") {
    c.max_epochs = to_int(key, v);
  } else if (key == "train.patience") {
    c.patience = to_int(key, v);
  } else if (key == "train.average_window") {
    c.average_window = to_int(key, v);
  } else if (key == "train.min_delta") {
    c.min_delta = to_double(key, v);
  } else if (key == "train.lr") {
    c.adam.lr = to_double(key, v);
  } else if (key == "train.seed") {
    c.seed = to_u64(key, v);
  } else if (key == "train.deterministic") {
    c.deterministic = to_bool(key, v);
  } else if (key == "mp.points") {
    c.mp_points = to_int(key, v);
  } else if (key == "mp.samples") {
    c.mp_samples = to_int(key, v);
  } else if (key == "mp.noise") {
    c.mp_noise = to_double(key, v);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

TrainConfig parse_config(const std::string& text, const TrainConfig& base) {
  TrainConfig c = base;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", lineno);
    try {
      apply_entry(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
    }
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::map<std::string, std::string> config_entries(const TrainConfig& c) {
  std::map<std::string, std::string> m;
  m["preset"] = c.preset;
  m["data"] = c.data;
  m["model.length"] = std::to_string(c.model.length);
  m["model.snippet_length"] = std::to_string(c.model.snippet_length);
  m["model.capsules"] = std::to_string(c.model.capsules);
  m["model.segments"] = std::to_string(c.model.segments);
  m["model.base_channels"] = std::to_string(c.model.base_channels);
  m["model.lstm_hidden"] = std::to_string(c.model.lstm_hidden);
  m["model.head_width"] = std::to_string(c.model.head_width);
  m["model.template_conditioned"] = fmt(c.model.template_conditioned);
  m["model.single_layer"] = fmt(c.model.single_layer);
  m["loss.lambda_sni"] = fmt(c.loss.lambda_sni);
  m["loss.lambda_seg"] = fmt(c.loss.lambda_seg);
  m["loss.smoothness"] = fmt(c.loss.smoothness);
  m["loss.sparsity"] = fmt(c.loss.sparsity);
  m["loss.tau"] = fmt(c.loss.tau);
  m["loss.include_positive"] = fmt(c.loss.include_positive);
  m["augment.rotate"] = fmt(c.augment.rotate);
  m["augment.smooth"] = fmt(c.augment.smooth);
  m["augment.jitter"] = fmt(c.augment.jitter);
  m["augment.mask"] = fmt(c.augment.mask);
  m["augment.rotate_degrees"] = fmt(c.augment.rotate_degrees);
  m["augment.smooth_kernel"] = std::to_string(c.augment.smooth_kernel);
  m["augment.jitter_prob"] = fmt(c.augment.jitter_prob);
  m["augment.jitter_sigma"] = fmt(c.augment.jitter_sigma);
  m["augment.mask_prob"] = fmt(c.augment.mask_prob);
  m["augment.apply_prob"] = fmt(c.augment.apply_prob);
  m["train.batch_size"] = std::to_string(c.batch_size);
  m["train.batches_per_epoch"] = std::to_string(c.batches_per_epoch);
  m["train.max_epochs"] = std::to_string(c.max_epochs);
  m["train.patience"] = std::to_string(c.patience);
  m["train.average_window"] = std::to_string(c.average_window);
  m["train.min_delta"] = fmt(c.min_delta);
  m["train.lr"] = fmt(c.adam.lr);
  m["train.seed"] = std::to_string(c.seed);
  m["train.deterministic"] = fmt(c.deterministic);
  m["mp.points"] = std::to_string(c.mp_points);
  m["mp.samples"] = std::to_string(c.mp_samples);
  m["mp.noise"] = fmt(c.mp_noise);
  return m;
}

std::string config_text(const TrainConfig& c) {
  auto m = config_entries(c);
  // preset first so that re-parsing starts from the same base
  std::string out = "preset = " + m["preset"] + "\n";
  m.erase("preset");
  for (const auto& [k, v] : m) out += k + " = " + v + "\n";
  return out;
}

std::string config_hash(const TrainConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_text(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mcae::training
