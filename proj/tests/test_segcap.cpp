#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mcae/segcap.hpp"
#include "test_util.hpp"

using namespace mcae;
using namespace mcae::segcap;
using testutil::randn;
using testutil::randu;

namespace {

using Mat3 = std::array<double, 9>;

Mat3 mul3(const double* a, const double* b) {
  Mat3 c{};
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k)
      for (int q = 0; q < 3; ++q) c[r * 3 + q] += a[r * 3 + k] * b[k * 3 + q];
  return c;
}

Tensor<double> random_B(int B, int M, Rng& rng) {
  Tensor<double> t({B, M, 9});
  for (int k = 0; k < B * M; ++k) {
    const auto m = snicap::assemble_similarity(rng.uniform(-2, 2), rng.uniform(-3, 3), rng.uniform(-1, 1), rng.uniform(-1, 1));
    std::copy(m.begin(), m.end(), t.data.begin() + 9 * k);
  }
  return t;
}

Tensor<double> random_P(int M, int S, int N, Rng& rng) {
  Tensor<double> top = randn({M, S, N, 6}, rng);
  Tensor<double> P({M, S, N, 9});
  for (int q = 0; q < M * S * N; ++q) {
    std::copy_n(&top.data[6 * q], 6, &P.data[9 * q]);
    P.data[9 * q + 8] = 1;
  }
  return P;
}

}  // namespace

TEST_CASE("flatten_snippet_codes") {
  Tape<double> tape;
  Rng rng(1);
  const int B = 2, S = 4, N = 8;
  Tensor<double> A = randn({B * S, N, 9}, rng), mu = randu({B * S, N}, rng, 0, 1);
  Var<double> flat = flatten_snippet_codes(tape.constant(A), tape.constant(mu), B);
  CHECK(flat.shape() == Shape{B, S, 80});
  for (int r = 0; r < B * S; ++r)
    for (int i = 0; i < N; ++i) {
      for (int e = 0; e < 9; ++e) CHECK(flat.value()[r * 80 + i * 10 + e] == A[(r * N + i) * 9 + e]);
      CHECK(flat.value()[r * 80 + i * 10 + 9] == mu[r * N + i]);
    }
  auto [A2, mu2] = unflatten_snippet_codes(flat.value(), N);
  CHECK(A2 == A);
  CHECK(mu2 == mu);

  SUBCASE("identity capsule slice") {
    Tensor<double> I({1, 1, 9}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
    Var<double> f = flatten_snippet_codes(tape.constant(I), tape.constant(Tensor<double>({1, 1}, 1.0)), 1);
    CHECK(f.value().data == std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1, 1});
  }
}

TEST_CASE("BiLSTM final-state layout") {
  ParamStore<double> store;
  Rng rng(2);
  BiLstm<double> lstm(store, "l", 5, 4, rng, true);
  Tensor<double> seq = randn({3, 6, 5}, rng), rev(seq.shape);
  for (int b = 0; b < 3; ++b)
    for (int s = 0; s < 6; ++s)
      for (int k = 0; k < 5; ++k) rev[(b * 6 + s) * 5 + k] = seq[(b * 6 + (5 - s)) * 5 + k];
  Tape<double> tape;
  const auto h = lstm.forward(tape, tape.constant(seq)).value();
  const auto hr = lstm.forward(tape, tape.constant(rev)).value();
  REQUIRE(h.shape == Shape{3, 8});
  for (int b = 0; b < 3; ++b)
    for (int j = 0; j < 4; ++j) {
      CHECK(std::abs(h[b * 8 + j] - hr[b * 8 + 4 + j]) < 1e-12);
      CHECK(std::abs(h[b * 8 + 4 + j] - hr[b * 8 + j]) < 1e-12);
    }
  CHECK(store.params().size() == 4);  // tied directions share weights
}

TEST_CASE("segment encoder") {
  ParamStore<double> store;
  Rng rng(3);
  EncoderSpec spec;
  spec.segments = 6;
  SegmentEncoder<double> enc(store, "seg", spec, rng);
  Tape<double> tape;
  Var<double> seq = tape.constant(randn({2, 4, 80}, rng, 0.3));
  Var<double> tmpl = tape.constant(randn({8, 8, 2}, rng, 0.3));
  SegmentCode<double> code = enc.forward(tape, seq, tmpl);
  CHECK(code.raw.shape() == Shape{2, 6, 5});
  CHECK(code.nu.shape() == Shape{2, 6});
  CHECK(code.B.shape() == Shape{2, 6, 9});
  for (double v : code.nu.value().data) {
    CHECK(v > 0);
    CHECK(v < 1);
  }
  SUBCASE("activations start near 1/M") {
    double tot = 0;
    for (double v : code.nu.value().data) tot += v;
    CHECK(tot / 2 == doctest::Approx(1.0).epsilon(0.5));
  }
  SUBCASE("zero weights") {
    for (auto* p : store.params()) p->value.fill(0.0);
    Tape<double> t2;
    SegmentCode<double> z = enc.forward(t2, t2.constant(seq.value()), t2.constant(tmpl.value()));
    for (double v : z.nu.value().data) CHECK(v == 0.5);
    const auto ref = snicap::assemble_similarity(0, 0, 0, 0);
    for (int k = 0; k < 12; ++k)
      for (int e = 0; e < 9; ++e) CHECK(z.B.value()[9 * k + e] == doctest::Approx(ref[e]).epsilon(1e-15));
  }
  SUBCASE("wrong input width") {
    CHECK_THROWS_AS(enc.forward(tape, tape.constant(Tensor<double>({2, 4, 70})), tmpl), ConfigError);
  }
}

TEST_CASE("segment_decode") {
  Rng rng(4);
  Tape<double> tape;
  SUBCASE("identity mixing") {
    Tensor<double> P = random_P(1, 2, 3, rng);
    Tensor<double> I({1, 1, 9}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor<double> alpha = randn({1, 2, 3}, rng);
    Var<double> nu = tape.constant(Tensor<double>({1, 1}, 1.0));
    CHECK(segment_decode_matrices(nu, tape.constant(I), tape.constant(P)).value().data == P.data);
    CHECK(segment_decode_activations(nu, tape.constant(alpha)).value().data == alpha.data);
  }
  SUBCASE("zero mixture") {
    Var<double> nu = tape.constant(Tensor<double>({2, 3}));
    for (double v : segment_decode_matrices(nu, tape.constant(random_B(2, 3, rng)), tape.constant(random_P(3, 2, 2, rng))).value().data)
      CHECK(v == 0.0);
    for (double v : segment_decode_activations(nu, tape.constant(randn({3, 2, 2}, rng))).value().data) CHECK(v == 0.0);
  }
  SUBCASE("triple-loop oracle and structural properties") {
    const int B = 2, M = 2, S = 3, N = 2;
    Tensor<double> nu = randu({B, M}, rng, 0, 1), Bm = random_B(B, M, rng), P = random_P(M, S, N, rng);
    Tensor<double> alpha = randn({M, S, N}, rng);
    const auto Ah = segment_decode_matrices(tape.constant(nu), tape.constant(Bm), tape.constant(P)).value();
    const auto mh = segment_decode_activations(tape.constant(nu), tape.constant(alpha)).value();
    REQUIRE(Ah.shape == Shape{B, S, N, 9});
    for (int b = 0; b < B; ++b) {
      double nsum = 0;
      for (int k = 0; k < M; ++k) nsum += nu[b * M + k];
      for (int i = 0; i < S; ++i)
        for (int n = 0; n < N; ++n) {
          Mat3 acc{};
          double ma = 0;
          for (int k = 0; k < M; ++k) {
            const Mat3 prod = mul3(&Bm[(b * M + k) * 9], &P[((k * S + i) * N + n) * 9]);
            for (int e = 0; e < 9; ++e) acc[e] += nu[b * M + k] * prod[e];
            ma += nu[b * M + k] * alpha[(k * S + i) * N + n];
          }
          const double* got = &Ah[((b * S + i) * N + n) * 9];
          for (int e = 0; e < 9; ++e) CHECK(std::abs(got[e] - acc[e]) < 1e-12);
          CHECK(std::abs(mh[(b * S + i) * N + n] - ma) < 1e-12);
          // last row is (sum nu) (0, 0, 1)
          CHECK(got[6] == 0.0);
          CHECK(got[7] == 0.0);
          CHECK(std::abs(got[8] - nsum) < 1e-14);
        }
    }
    SUBCASE("linear in nu") {
      Tensor<double> nu2 = nu;
      for (auto& v : nu2.data) v *= 0.3;
      const auto A2 = segment_decode_matrices(tape.constant(nu2), tape.constant(Bm), tape.constant(P)).value();
      for (std::size_t k = 0; k < Ah.size(); ++k) CHECK(std::abs(A2[k] - 0.3 * Ah[k]) < 1e-12);
    }
    SUBCASE("left composition with a similarity") {
      const auto G = snicap::assemble_similarity(0.4, -1.2, 0.3, -0.6);
      Tensor<double> GB = Bm;
      for (int k = 0; k < B * M; ++k) {
        const Mat3 g = mul3(G.data(), &Bm[9 * k]);
        std::copy(g.begin(), g.end(), &GB.data[9 * k]);
      }
      const auto AG = segment_decode_matrices(tape.constant(nu), tape.constant(GB), tape.constant(P)).value();
      for (int q = 0; q < B * S * N; ++q) {
        const Mat3 ref = mul3(G.data(), &Ah[9 * q]);
        for (int e = 0; e < 9; ++e) CHECK(std::abs(AG[9 * q + e] - ref[e]) < 1e-6);
      }
    }
  }
}

TEST_CASE("homogeneous_from_top") {
  Rng rng(5);
  Tape<double> tape;
  Tensor<double> top = randn({2, 3, 6}, rng);
  const auto m = homogeneous_from_top(tape.constant(top)).value();
  CHECK(m.shape == Shape{2, 3, 9});
  for (int k = 0; k < 6; ++k) {
    for (int e = 0; e < 6; ++e) CHECK(m[9 * k + e] == top[6 * k + e]);
    CHECK(m[9 * k + 6] == 0.0);
    CHECK(m[9 * k + 7] == 0.0);
    CHECK(m[9 * k + 8] == 1.0);
  }
}

TEST_CASE("init_segment_templates") {
  Rng a(6), b(6);
  auto [top, alpha] = init_segment_templates<double>(5, 4, 8, a);
  auto [top2, alpha2] = init_segment_templates<double>(5, 4, 8, b);
  CHECK(top == top2);
  CHECK(alpha == alpha2);
  CHECK(top.shape == Shape{5, 4, 8, 6});
  CHECK(alpha.shape == Shape{5, 4, 8});
  for (int q = 0; q < 5 * 4 * 8; ++q) {
    const double* t = &top.data[6 * q];
    CHECK(t[0] == doctest::Approx(t[4]).epsilon(1e-15));
    CHECK(t[1] == doctest::Approx(-t[3]).epsilon(1e-15));
    const double sc = std::hypot(t[0], t[3]);
    CHECK(sc >= testutil::sigmoid(-1.0) - 1e-12);
    CHECK(sc <= testutil::sigmoid(1.0) + 1e-12);
    CHECK(std::abs(t[2]) <= 0.5);
    CHECK(std::abs(t[5]) <= 0.5);
  }
  for (double v : alpha.data) {
    CHECK(v >= 0.0);
    CHECK(v < 2.0 / 8);
  }
}
