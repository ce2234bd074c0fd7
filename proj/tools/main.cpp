#include <cstdlib>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcae/analysis.hpp"
#include "mcae/binary_io.hpp"
#include "mcae/evalprobe.hpp"
#include "mcae/multipoint.hpp"
#include "mcae/run.hpp"
#include "mcae/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace mcae;

namespace {

int default_threads() {
  if (const char* env = std::getenv("MCAE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

struct Common {
  int threads = default_threads();
  bool deterministic = true;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--threads", c.threads, "worker threads (env MCAE_THREADS)")->check(CLI::PositiveNumber);
  cmd->add_flag("--deterministic,!--no-deterministic", c.deterministic,
                "reproducible output, wall-clock fields zeroed");
}

training::TrainConfig resolve_config(const std::string& path, const std::string& preset,
                                     const std::vector<std::string>& sets) {
  training::TrainConfig c = preset.empty() ? training::TrainConfig{} : training::preset_config(preset);
  if (!path.empty()) c = training::parse_config(run::read_text(path), c);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    training::apply_entry(c, s.substr(0, eq), s.substr(eq + 1));
  }
  c.validate();
  return c;
}

void record_run(const fs::path& out, const std::string& command, const std::map<std::string, std::string>& fields) {
  fs::create_directories(out);
  nlohmann::json j;
  j["command"] = command;
  for (const auto& [k, v] : fields) j[k] = v;
  run::write_text(out / "run.json", j.dump(2) + "\n");
}

int gen_t20(const std::string& out, int samples, std::uint64_t seed) {
  const auto set = t20::gen_test_set(samples, seed);
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  t20::save_dataset(p, set);
  std::cout << "wrote " << set.size() << " samples to " << out << "\n";
  return 0;
}

int train(const training::TrainConfig& config, const fs::path& out, bool quiet) {
  auto r = run::train_mcae(config, out, quiet);
  std::cout << "trained " << r.log.epochs.size() << " epochs (" << r.log.steps << " steps, " << r.log.stop_reason
            << ") -> " << (out / "model.ckpt").string() << "\n";
  return 0;
}

std::vector<t20::Sample> load_or_generate(const std::string& file, int n, std::uint64_t seed, int length) {
  if (!file.empty()) return t20::load_dataset(file);
  return t20::gen_test_set(n, seed, length);
}

int eval(const std::string& checkpoint, const std::string& train_file, const std::string& test_file,
         const evalprobe::EvalProtocol& protocol, const fs::path& out) {
  const auto ck = training::load_checkpoint(checkpoint);
  const auto config = training::checkpoint_config(ck);
  const auto model = training::model_from_checkpoint(ck);
  evalprobe::EvalResult r;
  if (config.data == "multipoint" && train_file.empty() && test_file.empty()) {
    r = run::evaluate(*model, config, protocol);
  } else {
    const int L = config.model.length;
    const auto train = evalprobe::extract_features(
        *model, load_or_generate(train_file, protocol.train_samples, protocol.train_seed, L));
    const auto test = evalprobe::extract_features(
        *model, load_or_generate(test_file, protocol.test_samples, protocol.test_seed, L));
    r = evalprobe::evaluate_features(train, test, protocol.probe);
  }
  fs::create_directories(out);
  const std::string hash = training::config_hash(config);
  std::vector<evalprobe::MetricRecord> rec{{hash, config.seed, "linear", r.linear, r.feature_dim},
                                           {hash, config.seed, "knn", r.knn, r.feature_dim}};
  evalprobe::write_metrics_csv(out / "eval.csv", rec);
  evalprobe::write_metrics_json(out / "eval.json", rec);
  std::printf("linear %.4f\nknn %.4f\nfeature_dim %d\n", r.linear, r.knn, r.feature_dim);
  return 0;
}

int inspect(const std::string& path) {
  const auto bytes = io::read_file(path);
  if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "MCAE") {
    const auto ck = training::deserialize_checkpoint(bytes);
    std::cout << "checkpoint " << path << "\n";
    for (const auto& [k, v] : ck.meta) std::cout << "  meta " << k << " = " << v << "\n";
    std::size_t params = 0;
    for (const auto& a : ck.arrays) {
      if (a.kind == "param") params += a.value.size();
      std::cout << "  " << a.kind << " " << a.name << " " << diffcore::shape_str(a.value.shape) << "\n";
    }
    std::cout << "  learnable parameters " << params << "\n";
    std::cout << "  adam_step " << ck.adam_step << "\n";
    return 0;
  }
  if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "T20D") {
    const auto set = t20::deserialize_dataset(bytes);
    std::vector<int> per(t20::kPatternCount, 0);
    for (const auto& s : set) ++per.at(s.label);
    std::cout << "t20 dataset " << path << ": " << set.size() << " samples\n";
    for (int c = 0; c < t20::kPatternCount; ++c)
      std::cout << "  " << c << " " << t20::pattern_name(t20::pattern_from_index(c)) << " " << per[c] << "\n";
    return 0;
  }
  if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "SKEL") {
    const auto seqs = multipoint::load_skeleton_file(path);
    std::cout << "skeleton file " << path << ": " << seqs.size() << " sequences";
    if (!seqs.empty()) std::cout << ", K=" << seqs[0].joints() << " dim=" << seqs[0].dim();
    std::cout << "\n";
    return 0;
  }
  throw ValidationError(path + " is not a checkpoint, T20 dataset or skeleton file");
}

int gradcheck(const training::TrainConfig& config) {
  bool ok = true;
  auto report = [&](const selfcheck::CheckLine& c) {
    ok = ok && c.passed;
    std::printf("%s %-28s max_rel %.3e over %zu coords", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.max_rel_error,
                c.coords - c.skipped);
    if (c.skipped) std::printf(" (%zu at kinks skipped)", c.skipped);
    std::printf("\n");
    if (!c.passed) std::printf("     worst: %s\n", c.worst.c_str());
  };
  for (const auto& c : selfcheck::gradcheck_primitives()) report(c);
  report(selfcheck::gradcheck_objective(config));
  std::cout << (ok ? "all gradients match\n" : "gradient mismatch\n");
  return ok ? 0 : 1;
}

int export_templates(const std::string& checkpoint, const fs::path& out, const std::string& format, int segments) {
  const auto model = training::model_from_checkpoint(training::load_checkpoint(checkpoint));
  fs::create_directories(out);
  const auto files = analysis::export_templates(*model, out, format == "svg" ? analysis::ExportFormat::svg
                                                                             : analysis::ExportFormat::csv,
                                                segments);
  for (const auto& f : files) std::cout << f.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion capsule autoencoder: data generation, training, evaluation and analysis"};
  app.require_subcommand(1);

  Common common;
  std::string out, config_path, preset, checkpoint;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;

  auto* gen = app.add_subcommand("gen-t20", "write a balanced Trajectory20 set");
  int samples = 10000;
  gen->add_option("--samples", samples, "multiple of 20")->default_val(10000);
  gen->add_option("--seed", seed, "dataset seed");
  gen->add_option("--out", out, "output file")->required();
  add_common(gen, common);

  auto* tr = app.add_subcommand("train", "train an MCAE");
  int epochs = -1, batches = -1;
  bool verbose = false;
  tr->add_option("--config", config_path, "config file (key = value)");
  tr->add_option("--preset", preset, "t20 | single-layer | multipoint");
  tr->add_option("--set", sets, "override a config key, key=value");
  tr->add_option("--seed", seed, "training seed")->each([&](const std::string&) { seed_given = true; });
  tr->add_option("--epochs", epochs, "max epochs");
  tr->add_option("--batches", batches, "batches per epoch");
  tr->add_option("--out", out, "run directory")->required();
  tr->add_flag("-v,--verbose", verbose, "print per-epoch losses");
  add_common(tr, common);

  auto* ev = app.add_subcommand("eval", "linear probe and 1-NN on frozen features");
  evalprobe::EvalProtocol protocol;
  std::string train_file, test_file;
  ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  ev->add_option("--train-data", train_file, "T20 file for probe training (default: generated)");
  ev->add_option("--test-data", test_file, "T20 file for testing (default: generated)");
  ev->add_option("--train-samples", protocol.train_samples)->default_val(10000);
  ev->add_option("--train-seed", protocol.train_seed)->default_val(1);
  ev->add_option("--test-samples", protocol.test_samples)->default_val(2000);
  ev->add_option("--test-seed", protocol.test_seed)->default_val(0);
  ev->add_option("--probe-epochs", protocol.probe.epochs)->default_val(100);
  ev->add_option("--out", out, "output directory")->required();
  add_common(ev, common);

  auto* in = app.add_subcommand("inspect", "describe a checkpoint, T20 dataset or skeleton file");
  std::string target;
  in->add_option("path", target)->required();

  auto* ex = app.add_subcommand("export-templates", "render snippet and segment templates");
  std::string format = "svg";
  int seg_count = 8;
  ex->add_option("--checkpoint", checkpoint)->required();
  ex->add_option("--format", format)->check(CLI::IsMember({"svg", "csv"}))->default_val("svg");
  ex->add_option("--segments", seg_count, "segment templates to render (evenly spaced ids)")->default_val(8);
  ex->add_option("--out", out, "output directory")->required();
  add_common(ex, common);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every primitive and the objective");
  gc->add_option("--config", config_path, "model config (default: miniature)");
  gc->add_option("--set", sets, "override a config key, key=value");
  add_common(gc, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      record_run(fs::path(out).parent_path().empty() ? fs::path(".") : fs::path(out).parent_path(), "gen-t20",
                 {{"samples", std::to_string(samples)}, {"seed", std::to_string(seed)}, {"out", out}});
      return gen_t20(out, samples, seed);
    }
    if (*tr) {
      auto config = resolve_config(config_path, preset, sets);
      if (seed_given) config.seed = seed;
      if (epochs >= 0) config.max_epochs = epochs;
      if (batches > 0) config.batches_per_epoch = batches;
      config.deterministic = common.deterministic;
      config.validate();
      record_run(out, "train", {{"config_hash", training::config_hash(config)},
                                {"seed", std::to_string(config.seed)},
                                {"threads", std::to_string(common.threads)}});
      return train(config, out, !verbose);
    }
    if (*ev) {
      record_run(out, "eval", {{"checkpoint", checkpoint},
                               {"train_seed", std::to_string(protocol.train_seed)},
                               {"test_seed", std::to_string(protocol.test_seed)}});
      return eval(checkpoint, train_file, test_file, protocol, out);
    }
    if (*in) return inspect(target);
    if (*ex) {
      record_run(out, "export-templates", {{"checkpoint", checkpoint}, {"format", format}});
      return export_templates(checkpoint, out, format, seg_count);
    }
    if (*gc) {
      training::TrainConfig base = selfcheck::miniature_config();
      if (!config_path.empty()) base = training::parse_config(run::read_text(config_path), base);
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        training::apply_entry(base, s.substr(0, eq), s.substr(eq + 1));
      }
      base.validate();
      return gradcheck(base);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
