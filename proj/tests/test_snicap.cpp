#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mcae/model.hpp"
#include "mcae/snicap.hpp"
#include "test_util.hpp"

using namespace mcae;
using namespace mcae::snicap;
using testutil::randn;
using testutil::randu;

namespace {

constexpr double kPi = std::numbers::pi;

// reconstruction of one row by direct per-point loops
std::vector<double> decode_reference(const Tensor<double>& A, const Tensor<double>& mu, const Tensor<double>& T, int r) {
  const int N = T.dim(0), l = T.dim(1);
  std::vector<double> out(2 * l, 0.0);
  for (int j = 0; j < l; ++j)
    for (int i = 0; i < N; ++i) {
      const double* a = &A.data[(r * N + i) * 9];
      const double x = T[(i * l + j) * 2], y = T[(i * l + j) * 2 + 1];
      const double m = mu[r * N + i];
      out[2 * j] += m * (a[0] * x + a[1] * y + a[2] * 1.0);
      out[2 * j + 1] += m * (a[3] * x + a[4] * y + a[5] * 1.0);
    }
  return out;
}

Tensor<double> random_similarities(int R, int N, Rng& rng) {
  Tensor<double> A({R, N, 9});
  for (int k = 0; k < R * N; ++k) {
    const auto m = assemble_similarity(rng.uniform(-3, 3), rng.uniform(-kPi, kPi), rng.uniform(-1, 1), rng.uniform(-1, 1));
    std::copy(m.begin(), m.end(), A.data.begin() + 9 * k);
  }
  return A;
}

}  // namespace

TEST_CASE("snippet_split") {
  Rng rng(1);
  Tensor<float> X = randn<float>({32, 2}, rng);
  const auto parts = snippet_split(X, 8);
  REQUIRE(parts.size() == 4);
  std::vector<float> joined;
  for (const auto& p : parts) {
    CHECK(p.shape == Shape{8, 2});
    joined.insert(joined.end(), p.data.begin(), p.data.end());
  }
  CHECK(joined == X.data);
  const auto whole = snippet_split(X, 32);
  REQUIRE(whole.size() == 1);
  CHECK(whole[0] == X);
  CHECK_THROWS_AS(snippet_split(X, 5), ConfigError);
}

TEST_CASE("snippet encoder backbone") {
  CHECK(stages_for_length(4) == 2);
  CHECK(stages_for_length(8) == 3);
  CHECK(stages_for_length(16) == 4);
  CHECK_THROWS_AS(stages_for_length(6), ConfigError);

  ParamStore<double> store;
  Rng rng(2);
  BackboneSpec spec;  // C=8, three stages, 5N = 40 outputs
  ConvBackbone<double> net(store, "enc", spec, rng);
  CHECK(store.get("enc.conv0.weight").value.shape == Shape{8, 2, 4});
  CHECK(store.get("enc.conv1.weight").value.shape == Shape{16, 8, 4});
  CHECK(store.get("enc.conv2.weight").value.shape == Shape{32, 16, 4});
  CHECK(store.get("enc.out.weight").value.shape == Shape{40, 32, 1});
  int len = 8;
  std::vector<int> lengths{len};
  for (int i = 0; i < 3; ++i) lengths.push_back(len = diffcore::conv1d_out_length(len, 4, 2, 1));
  lengths.push_back(diffcore::conv1d_out_length(len, 1, 1, 0));
  CHECK(lengths == std::vector<int>{8, 4, 2, 1, 1});

  Tape<double> tape;
  Var<double> y = net.forward(tape, tape.constant(randn({6, 2, 8}, rng)), true);
  CHECK(y.shape() == Shape{6, 40, 1});

  SUBCASE("zero weights give zero raw parameters") {
    for (auto* p : store.params()) p->value.fill(0.0);
    Tape<double> t2;
    for (double v : net.forward(t2, t2.constant(randn({3, 2, 8}, rng)), false).value().data) CHECK(v == 0.0);
  }
}

TEST_CASE("zero snippet encoder gives mu = 0.5") {
  McaeConfig c;
  c.segments = 4;
  Mcae<float> model(c, 3);
  for (auto* p : model.store().params())
    if (p->name.rfind("snippet.encoder", 0) == 0) p->value.fill(0.0f);
  Rng rng(4);
  Tape<float> tape(false);
  ModelOutput<float> out = model.forward(tape, randn<float>({2, 32, 2}, rng), false);
  CHECK(out.mu.shape() == Shape{8, 8});
  for (float v : out.mu.value().data) CHECK(v == 0.5f);
  for (int k = 0; k < 64; ++k) {
    const float* a = &out.A.value().data[9 * k];
    CHECK(a[0] == 0.5f);
    CHECK(a[4] == 0.5f);
    CHECK(a[1] == 0.0f);
    CHECK(a[2] == 0.0f);
  }
}

TEST_CASE("assemble_similarity") {
  const auto a = assemble_similarity(0, 0, 0, 0);
  const std::array<double, 9> expect{0.5, 0, 0, 0, 0.5, 0, 0, 0, 1};
  for (int i = 0; i < 9; ++i) CHECK(a[i] == doctest::Approx(expect[i]).epsilon(1e-15));

  const auto b = assemble_similarity(100, kPi / 2, 2, -2);
  const std::array<double, 9> sat{0, -1, 1.5, 1, 0, -1.5, 0, 0, 1};
  for (int i = 0; i < 9; ++i) CHECK(std::abs(b[i] - sat[i]) < 1e-6);

  const auto c = assemble_similarity(1, kPi / 4, 0.3, 0);
  CHECK(c[0] == doctest::Approx(testutil::sigmoid(1.0) * std::cos(kPi / 4)).epsilon(1e-14));
  CHECK(c[2] == doctest::Approx(0.3));

  SUBCASE("array version agrees and satisfies the invariants") {
    Rng rng(5);
    Tensor<double> raw({50, 4});
    for (auto& v : raw.data) v = rng.uniform(-4, 4);
    Tape<double> tape;
    const Tensor<double> m = assemble_similarity(tape.constant(raw)).value();
    REQUIRE(m.shape == Shape{50, 9});
    for (int k = 0; k < 50; ++k) {
      const double* r = &raw.data[4 * k];
      const auto ref = assemble_similarity(r[0], r[3], r[1], r[2]);
      const double* o = &m.data[9 * k];
      for (int i = 0; i < 9; ++i) CHECK(o[i] == doctest::Approx(ref[i]).epsilon(1e-14));
      CHECK(o[6] == 0.0);
      CHECK(o[7] == 0.0);
      CHECK(o[8] == 1.0);
      CHECK(o[0] == o[4]);
      CHECK(o[1] == -o[3]);
      const double sc = std::hypot(o[0], o[3]);
      CHECK(sc > 0.0);
      CHECK(sc < 1.0);
      CHECK(std::abs(o[2]) <= 1.5);
      CHECK(std::abs(o[5]) <= 1.5);
    }
  }
}

TEST_CASE("snippet_decode") {
  Rng rng(6);
  Tape<double> tape;
  SUBCASE("identity, unit activation") {
    Tensor<double> I({1, 1, 9}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor<double> T = randn({1, 8, 2}, rng);
    Var<double> x = snippet_decode(tape.constant(I), tape.constant(Tensor<double>({1, 1}, 1.0)), tape.constant(T));
    CHECK(x.value().data == T.data);
  }
  SUBCASE("zero mixture") {
    Var<double> x = snippet_decode(tape.constant(random_similarities(3, 2, rng)), tape.constant(Tensor<double>({3, 2})),
                                   tape.constant(randn({2, 8, 2}, rng)));
    for (double v : x.value().data) CHECK(v == 0.0);
  }
  SUBCASE("loop oracle") {
    Tensor<double> A = randn({4, 2, 9}, rng), mu = randu({4, 2}, rng, 0, 1), T = randn({2, 8, 2}, rng);
    Var<double> x = snippet_decode(tape.constant(A), tape.constant(mu), tape.constant(T));
    for (int r = 0; r < 4; ++r) {
      const auto ref = decode_reference(A, mu, T, r);
      for (int k = 0; k < 16; ++k) CHECK(std::abs(x.value()[r * 16 + k] - ref[k]) < 1e-12);
    }
  }
  SUBCASE("linear in mu") {
    Tensor<double> A = random_similarities(2, 3, rng), mu = randu({2, 3}, rng, 0, 1), T = randn({3, 8, 2}, rng);
    Tensor<double> mu3 = mu;
    for (auto& v : mu3.data) v *= -2.5;
    const auto x1 = snippet_decode(tape.constant(A), tape.constant(mu), tape.constant(T)).value();
    const auto x3 = snippet_decode(tape.constant(A), tape.constant(mu3), tape.constant(T)).value();
    for (std::size_t k = 0; k < x1.size(); ++k) CHECK(std::abs(x3[k] + 2.5 * x1[k]) < 1e-12);
  }
  SUBCASE("similarity equivariance when activations sum to one") {
    const int N = 4;
    Tensor<double> A = random_similarities(1, N, rng), T = randn({N, 8, 2}, rng);
    Tensor<double> mu({1, N});
    double tot = 0;
    for (auto& v : mu.data) tot += (v = rng.uniform(0.1, 1));
    for (auto& v : mu.data) v /= tot;
    const auto G = assemble_similarity(0.7, 2.1, -0.4, 0.25);
    Tensor<double> GA = A;
    for (int i = 0; i < N; ++i)
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
          double acc = 0;
          for (int k = 0; k < 3; ++k) acc += G[r * 3 + k] * A[i * 9 + k * 3 + c];
          GA[i * 9 + r * 3 + c] = acc;
        }
    const auto x = snippet_decode(tape.constant(A), tape.constant(mu), tape.constant(T)).value();
    const auto gx = snippet_decode(tape.constant(GA), tape.constant(mu), tape.constant(T)).value();
    for (int j = 0; j < 8; ++j) {
      const double px = x[2 * j], py = x[2 * j + 1];
      CHECK(std::abs(gx[2 * j] - (G[0] * px + G[1] * py + G[2])) < 1e-6);
      CHECK(std::abs(gx[2 * j + 1] - (G[3] * px + G[4] * py + G[5])) < 1e-6);
    }
  }
  SUBCASE("shape checks") {
    CHECK_THROWS_AS(snippet_decode(tape.constant(Tensor<double>({2, 3, 9})), tape.constant(Tensor<double>({2, 2})),
                                   tape.constant(Tensor<double>({3, 8, 2}))),
                    ConfigError);
  }
}

TEST_CASE("snippet template initialization") {
  Rng rng(7);
  const auto T = init_snippet_templates<double>(8, 8, rng);
  CHECK(T.shape == Shape{8, 8, 2});
  for (int i = 0; i < 8; ++i) {
    const double* t = &T.data[i * 16];
    for (int a = 0; a < 2; ++a) {
      CHECK(std::abs(t[a]) <= 0.5);
      CHECK(std::abs(t[14 + a]) <= 0.5);
    }
    for (int j = 1; j < 8; ++j)
      for (int a = 0; a < 2; ++a) CHECK(std::abs((t[2 * j + a] - t[2 * j - 2 + a]) - (t[2 + a] - t[a])) < 1e-12);
  }
  Rng r2(7);
  CHECK(init_snippet_templates<double>(8, 8, r2) == T);
}
