#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mcae/t20gen.hpp"
#include "test_util.hpp"

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MCAE_CLI_PATH + "\" " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kTiny =
    "--set model.segments=6 --set model.lstm_hidden=8 --set model.head_width=4 --set train.batch_size=4 "
    "--epochs 2 --batches 3";

}  // namespace

TEST_CASE("cli usage errors") {
  CHECK(run_cli("").code == 1);
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("train --bogus 1 --out x").code == 1);
  CHECK(run_cli("frobnicate").code == 1);
  testutil::TempDir dir("cli_err");
  CHECK(run_cli("train --set nope=1 --out " + (dir / "r").string()).code == 1);
  CHECK(run_cli("gen-t20 --samples 30 --out " + (dir / "a.t20").string()).code == 1);
  CHECK(run_cli("inspect " + (dir / "missing").string()).code != 0);
}

TEST_CASE("cli gen-t20 and inspect") {
  testutil::TempDir dir("cli_gen");
  const auto path = dir / "data" / "t.t20";
  const Result r = run_cli("gen-t20 --samples 100 --seed 4 --out " + path.string());
  CHECK(r.code == 0);
  CHECK(std::filesystem::file_size(path) == 12 + 100 * mcae::t20::kDatasetRecordBytes);
  CHECK(mcae::t20::load_dataset(path) == mcae::t20::gen_test_set(100, 4));
  CHECK(std::filesystem::exists(dir / "data" / "run.json"));
  const Result ins = run_cli("inspect " + path.string());
  CHECK(ins.code == 0);
  CHECK(ins.out.find("100 samples") != std::string::npos);
}

TEST_CASE("cli gradcheck") {
  const Result r = run_cli("gradcheck");
  INFO(r.out);
  CHECK(r.code == 0);
  CHECK(r.out.find("all gradients match") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE("cli train, eval, export") {
  testutil::TempDir dir("cli_train");
  const auto a = dir / "a", b = dir / "b";
  const Result ra = run_cli("train " + kTiny + " --seed 3 --out " + a.string());
  INFO(ra.out);
  REQUIRE(ra.code == 0);
  REQUIRE(run_cli("train " + kTiny + " --seed 3 --out " + b.string()).code == 0);
  const std::string ma = slurp(a / "metrics.csv");
  CHECK(ma == slurp(b / "metrics.csv"));
  CHECK(std::count(ma.begin(), ma.end(), '\n') == 3);
  CHECK(slurp(a / "model.ckpt") == slurp(b / "model.ckpt"));
  const auto run = nlohmann::json::parse(slurp(a / "run.json"));
  CHECK(run["command"] == "train");
  CHECK(run["seed"] == "3");
  CHECK(std::filesystem::exists(a / "config.txt"));

  const Result ins = run_cli("inspect " + (a / "model.ckpt").string());
  CHECK(ins.code == 0);
  CHECK(ins.out.find("meta cfg.train.seed = 3") != std::string::npos);

  const auto ev = dir / "ev";
  const Result re = run_cli("eval --checkpoint " + (a / "model.ckpt").string() +
                            " --train-samples 60 --test-samples 40 --probe-epochs 3 --out " + ev.string());
  INFO(re.out);
  CHECK(re.code == 0);
  CHECK(re.out.find("feature_dim 6") != std::string::npos);
  const auto metrics = nlohmann::json::parse(slurp(ev / "eval.json"));
  REQUIRE(metrics.size() == 2);
  CHECK(metrics[0]["probe"] == "linear");
  CHECK(metrics[1]["probe"] == "knn");
  CHECK(std::filesystem::exists(ev / "run.json"));

  const auto ex = dir / "ex";
  const Result rx = run_cli("export-templates --checkpoint " + (a / "model.ckpt").string() + " --format csv --segments 3 --out " +
                            ex.string());
  CHECK(rx.code == 0);
  CHECK(std::filesystem::exists(ex / "snippet_templates.csv"));
  CHECK(std::filesystem::exists(ex / "segment_templates.csv"));
  CHECK(run_cli("export-templates --checkpoint " + (a / "model.ckpt").string() + " --format png --out " + ex.string()).code == 1);
}
