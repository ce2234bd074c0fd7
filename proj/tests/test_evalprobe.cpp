#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "mcae/evalprobe.hpp"
#include "test_util.hpp"

using namespace mcae;
using namespace mcae::evalprobe;

namespace {

FeatureSet one_hot(int n, int classes) {
  FeatureSet f;
  f.features = Tensor<float>({n, classes});
  for (int i = 0; i < n; ++i) {
    f.labels.push_back(i % classes);
    f.features.data[i * classes + i % classes] = 1.0f;
  }
  return f;
}

FeatureSet blobs(int n, double sep, Rng& rng) {
  FeatureSet f;
  f.features = Tensor<float>({n, 8});
  for (int i = 0; i < n; ++i) {
    const int y = i % 2;
    f.labels.push_back(y);
    for (int k = 0; k < 8; ++k) f.features.data[i * 8 + k] = static_cast<float>(rng.normal());
    f.features.data[i * 8] += static_cast<float>(y ? sep / 2 : -sep / 2);
  }
  return f;
}

FeatureSet random_set(int n, int dim, int classes, Rng& rng) {
  FeatureSet f;
  f.features = testutil::randn<float>({n, dim}, rng);
  for (int i = 0; i < n; ++i) f.labels.push_back(rng.uniform_int(classes));
  return f;
}

std::vector<int> brute_force_1nn(const FeatureSet& g, const Tensor<float>& q, bool cosine) {
  const int D = g.dim();
  std::vector<int> out;
  for (int i = 0; i < q.dim(0); ++i) {
    double best = 1e300;
    int arg = -1;
    for (int j = 0; j < g.rows(); ++j) {
      double d = 0, qq = 0, gg = 0, qg = 0;
      for (int k = 0; k < D; ++k) {
        const double a = q[i * D + k], b = g.features[j * D + k];
        d += (a - b) * (a - b);
        qq += a * a;
        gg += b * b;
        qg += a * b;
      }
      if (cosine) d = 1 - qg / (std::max(std::sqrt(qq), 1e-8) * std::max(std::sqrt(gg), 1e-8));
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    out.push_back(g.labels[arg]);
  }
  return out;
}

std::vector<Tensor<float>> param_values(const ParamStore<float>& s) {
  std::vector<Tensor<float>> v;
  for (auto* p : s.params()) v.push_back(p->value);
  for (auto* b : s.buffers()) v.push_back(b->value);
  return v;
}

}  // namespace

TEST_CASE("linear probe") {
  Rng rng(1);
  SUBCASE("one-hot classes are separable") {
    CHECK(linear_probe(one_hot(200, 5), one_hot(50, 5)) == 1.0);
  }
  SUBCASE("zero features fall back to the majority class") {
    FeatureSet tr, te;
    tr.features = Tensor<float>({100, 4});
    te.features = Tensor<float>({50, 4});
    for (int i = 0; i < 100; ++i) tr.labels.push_back(i < 60 ? 2 : (i < 90 ? 0 : 1));
    for (int i = 0; i < 50; ++i) te.labels.push_back(i < 35 ? 2 : 1);
    CHECK(linear_probe(tr, te) == doctest::Approx(0.7));
  }
  SUBCASE("6 sigma blobs") {
    CHECK(linear_probe(blobs(1000, 6.0, rng), blobs(2000, 6.0, rng)) > 0.99);
  }
  SUBCASE("training order does not matter") {
    FeatureSet tr = random_set(300, 6, 3, rng), te = random_set(100, 6, 3, rng);
    for (int i = 0; i < 300; ++i) tr.features.data[i * 6 + tr.labels[i]] += 1.5f;
    for (int i = 0; i < 100; ++i) te.features.data[i * 6 + te.labels[i]] += 1.5f;
    std::vector<int> perm(300);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937(4));
    FeatureSet sh;
    sh.features = Tensor<float>(tr.features.shape);
    for (int i = 0; i < 300; ++i) {
      sh.labels.push_back(tr.labels[perm[i]]);
      std::copy_n(&tr.features.data[perm[i] * 6], 6, &sh.features.data[i * 6]);
    }
    const double a = linear_probe(tr, te);
    CHECK(a == linear_probe(sh, te));
    CHECK(a > 0.6);
  }
  SUBCASE("bad inputs") {
    FeatureSet tr = one_hot(10, 2), wide = one_hot(10, 3);
    CHECK_THROWS_AS(linear_probe(tr, wide), DataError);
    ProbeOptions o;
    o.classes = 1;
    CHECK_THROWS_AS(linear_probe(tr, tr, o), DataError);
    tr.labels.pop_back();
    CHECK_THROWS_AS(tr.validate(), DataError);
    FeatureSet nan = one_hot(4, 2);
    nan.features.data[0] = std::nanf("");
    CHECK_THROWS_AS(nan.validate(), DataError);
  }
}

TEST_CASE("1-nearest neighbour") {
  Rng rng(2);
  SUBCASE("gallery queried with itself") {
    FeatureSet g = random_set(60, 5, 4, rng);
    CHECK(knn_eval(g, g) == 1.0);
    CHECK(knn_eval(g, g, Distance::cosine) == 1.0);
  }
  SUBCASE("single gallery point") {
    FeatureSet g;
    g.features = Tensor<float>({1, 3}, std::vector<float>{1, 2, 3});
    g.labels = {7};
    for (int y : knn_predict(g, testutil::randn<float>({20, 3}, rng))) CHECK(y == 7);
  }
  SUBCASE("brute-force oracle") {
    for (int rep = 0; rep < 10; ++rep) {
      FeatureSet g = random_set(40, 4, 3, rng);
      Tensor<float> q = testutil::randn<float>({30, 4}, rng);
      CHECK(knn_predict(g, q) == brute_force_1nn(g, q, false));
      CHECK(knn_predict(g, q, Distance::cosine) == brute_force_1nn(g, q, true));
    }
  }
  SUBCASE("ties go to the lowest index") {
    FeatureSet g;
    g.features = Tensor<float>({3, 1}, std::vector<float>{-1, 1, 1});
    g.labels = {0, 1, 2};
    CHECK(knn_predict(g, Tensor<float>({1, 1}, 0.0f)) == std::vector<int>{0});
    CHECK(knn_predict(g, Tensor<float>({1, 1}, 1.0f)) == std::vector<int>{1});
  }
  SUBCASE("empty gallery") {
    FeatureSet g;
    CHECK_THROWS_AS(knn_predict(g, Tensor<float>({1, 3})), UsageError);
  }
}

TEST_CASE("feature extraction leaves the model alone") {
  McaeConfig c;
  Mcae<float> model(c, 5);
  const auto before = param_values(model.store());
  const auto samples = t20::gen_test_set(40, 3);
  const FeatureSet f = extract_features(model, samples);
  CHECK(f.dim() == 80);
  CHECK(f.rows() == 40);
  CHECK(f.labels[7] == samples[7].label);
  CHECK(extract_features(model, samples).features == f.features);
  linear_probe(f, f);
  CHECK(param_values(model.store()) == before);
}

TEST_CASE("baseline conv") {
  BaselineConv net(32, 128, 0);
  // stages 2 -> 48 -> 96 -> 192 -> 384, kernel 4 with bias and batch norm,
  // then a kernel-4 conv to D
  std::size_t expect = 0;
  int in = 2;
  for (int out : {48, 96, 192, 384}) {
    expect += static_cast<std::size_t>(in) * out * 4 + 3 * out;
    in = out;
  }
  expect += 384 * 128 * 4 + 128;
  CHECK(net.store().parameter_count() == expect);
  CHECK(expect == 586352);

  const auto samples = t20::gen_test_set(200, 4);
  const FeatureSet f = baseline_features(net, samples);
  CHECK(f.dim() == 128);
  CHECK(f.rows() == 200);
  const double acc = linear_probe(f, baseline_features(net, t20::gen_test_set(200, 5)));
  CHECK(acc < 0.9);
  CHECK_THROWS_AS(BaselineConv(24, 16, 0), ConfigError);

  SUBCASE("contrastive objective only") {
    BaselineConv small(32, 16, 1, 4);
    BaselineLearner learner(small, training::LossWeights{});
    Tape<float> tape;
    Rng rng(6);
    const auto t = learner.losses(tape, testutil::randn<float>({8, 32, 2}, rng), 4);
    CHECK(t.total.value().item() == t.con.value().item());
    CHECK_FALSE(learner.has_segment_loss());
  }
}

TEST_CASE("reporting") {
  CHECK(summarize({0.5}).std == 0.0);
  const Summary s = summarize({0.68, 0.69, 0.70});
  CHECK(s.mean == doctest::Approx(0.69));
  CHECK(s.std == doctest::Approx(0.01));
  CHECK(s.runs == 3);
  CHECK(format_pm(s) == "69.00±1.00");
  CHECK(format_pm({0.693, 0.0076, 3}) == "69.30±0.76");

  testutil::TempDir dir("metrics");
  std::vector<MetricRecord> recs{{"abc", 1, "linear", 0.5, 80}, {"abc", 2, "knn", 0.25, 80}};
  write_metrics_csv(dir / "m.csv", recs);
  write_metrics_json(dir / "m.json", recs);
  std::ifstream csv(dir / "m.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "config_hash,seed,probe,accuracy,feature_dim");
  std::getline(csv, line);
  CHECK(line == "abc,1,linear,0.500000,80");
  std::ifstream js(dir / "m.json");
  const auto j = nlohmann::json::parse(js);
  REQUIRE(j.size() == 2);
  CHECK(j[1]["probe"] == "knn");
  CHECK(j[1]["accuracy"].get<double>() == 0.25);
  CHECK(j[0]["feature_dim"].get<int>() == 80);
}
