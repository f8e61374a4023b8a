// tests/test_metrics.cpp

// Copyright 2026  The campnet Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include "campnet/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace campnet;

namespace {

oracle::Frames ToFrames(const FeatureMatrix& m) {
  oracle::Frames f(m.rows(), std::vector<double>(kFeatureDim));
  for (Eigen::Index t = 0; t < m.rows(); ++t)
    for (int k = 0; k < kFeatureDim; ++k) f[t][k] = m(t, k);
  return f;
}

FeatureMatrix RandomFeatures(int T, Rng& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f), pitch(0.8f, 2.5f), corr(0.0f, 1.0f);
  FeatureMatrix m(T, kFeatureDim);
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < kBfccDim; ++k) m(t, k) = u(rng);
    m(t, kPitchIndex) = pitch(rng);
    m(t, kPitchCorrIndex) = corr(rng);
  }
  return m;
}

F0Contour Contour(std::vector<double> hz) {
  F0Contour c;
  c.hz = Eigen::Map<Eigen::VectorXd>(hz.data(), hz.size());
  c.voiced.assign(hz.size(), true);
  return c;
}

Eigen::MatrixXd Scalars(std::vector<double> v) {
  return Eigen::Map<Eigen::VectorXd>(v.data(), v.size());
}

}  // namespace

TEST_CASE("dtw of a sequence with itself is the zero-cost diagonal") {
  Rng rng(1);
  const FeatureMatrix a = RandomFeatures(9, rng);
  const DtwPath p = Dtw(a, a);
  CHECK(p.cost == 0.0);
  CHECK(p.pairs == DiagonalPath(9).pairs);
}

TEST_CASE("dtw degenerate one-frame sequence") {
  const DtwPath p = Dtw(Scalars({0}), Scalars({0, 0, 0}));
  CHECK(p.pairs == std::vector<std::pair<int, int>>{{0, 0}, {0, 1}, {0, 2}});
  CHECK(p.cost == 0.0);
  CHECK_THROWS_AS(Dtw(Eigen::MatrixXd(0, 1), Scalars({1})), MetricError);
}

TEST_CASE("dtw matches exhaustive enumeration and the textbook path") {
  Rng rng(5);
  std::uniform_int_distribution<int> len(1, 7);
  std::uniform_int_distribution<int> level(0, 3);  // coarse values so ties occur
  for (int n = 0; n < 200; ++n) {
    const int P = len(rng), Q = len(rng);
    oracle::Frames a(P, std::vector<double>(2)), b(Q, std::vector<double>(2));
    Eigen::MatrixXd A(P, 2), B(Q, 2);
    for (int i = 0; i < P; ++i)
      for (int k = 0; k < 2; ++k) A(i, k) = a[i][k] = level(rng);
    for (int j = 0; j < Q; ++j)
      for (int k = 0; k < 2; ++k) B(j, k) = b[j][k] = level(rng);
    const DtwPath p = Dtw(A, B);
    CHECK(p.cost == doctest::Approx(oracle::ExhaustiveDtwCost(a, b)).epsilon(1e-12));
    CHECK(p.pairs == oracle::DtwPath(a, b));
    CHECK(p.pairs.front() == std::pair{0, 0});
    CHECK(p.pairs.back() == std::pair{P - 1, Q - 1});
    for (std::size_t s = 1; s < p.pairs.size(); ++s) {
      const int di = p.pairs[s].first - p.pairs[s - 1].first, dj = p.pairs[s].second - p.pairs[s - 1].second;
      CHECK((di == 0 || di == 1));
      CHECK((dj == 0 || dj == 1));
      CHECK(di + dj > 0);
    }
  }
}

TEST_CASE("mcd hand values") {
  FeatureMatrix a = FeatureMatrix::Zero(1, kFeatureDim), b = a;
  CHECK(Mcd(a, a) == 0.0);
  b(0, 5) = 1.0f;
  CHECK(Mcd(a, b) == doctest::Approx(10.0 / std::log(10.0) * std::sqrt(2.0)).epsilon(1e-12));
  CHECK(Mcd(a, b) == doctest::Approx(6.1421).epsilon(1e-3));
  // Columns past the 28th do not count.
  b(0, 5) = 0.0f;
  b(0, 29) = 3.0f;
  CHECK(FrameMcd(a.row(0), b.row(0)) == 0.0);
}

TEST_CASE("mcd is homogeneous and symmetric on the diagonal") {
  Rng rng(9);
  const FeatureMatrix a = RandomFeatures(6, rng), b = RandomFeatures(6, rng);
  const DtwPath diag = DiagonalPath(6);
  for (double c : {0.0, 0.5, 2.0, 7.0}) {
    const FeatureMatrix scaled = a + (c * (b - a).cast<double>()).cast<float>();
    for (int t = 0; t < 6; ++t)
      CHECK(FrameMcd(a.row(t), scaled.row(t)) == doctest::Approx(c * FrameMcd(a.row(t), b.row(t))).epsilon(1e-5));
  }
  CHECK(Mcd(a, b, diag) == doctest::Approx(Mcd(b, a, diag)).epsilon(1e-12));
}

TEST_CASE("f0 error hand values") {
  const DtwPath d = DiagonalPath(3);
  CHECK(F0Rmse(Contour({220, 220, 220}), Contour({110, 110, 110}), d) == doctest::Approx(1200.0));
  CHECK(F0Rmse(Contour({150, 160, 170}), Contour({150, 160, 170}), d) == 0.0);
  F0Contour unvoiced = Contour({100, 100, 100});
  unvoiced.voiced.assign(3, false);
  CHECK_THROWS_AS(F0Rmse(unvoiced, Contour({100, 100, 100}), d), MetricError);
  CHECK_THROWS_AS(F0Rmse(Contour({0, 100, 100}), Contour({100, 100, 100}), d), MetricError);
  // The root-mean-square variant differs from the mean only when frames differ.
  CHECK(F0Rmse(Contour({200, 100, 100}), Contour({100, 100, 100}), d, F0Reduction::kRms) ==
        doctest::Approx(1200.0 / std::sqrt(3.0)));
}

TEST_CASE("v/uv error hand values") {
  const DtwPath d = DiagonalPath(4);
  CHECK(VuvError({true, false, true, true}, {true, false, true, true}, d) == 0.0);
  CHECK(VuvError({true, false, true, true}, {true, true, true, true}, d) == 25.0);
  CHECK(VuvError({true, false}, {false, true}, DiagonalPath(2)) == 100.0);
}

TEST_CASE("f0 correlation hand values and affine invariance") {
  const DtwPath d = DiagonalPath(3);
  CHECK(F0Corr(Contour({1, 2, 3}), Contour({2, 4, 6}), d) == doctest::Approx(1.0));
  CHECK(F0Corr(Contour({1, 2, 3}), Contour({3, 2, 1}), d) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(F0Corr(Contour({1, 2, 3}), Contour({5, 5, 5}), d), MetricError);
  CHECK_THROWS_AS(F0Corr(Contour({1}), Contour({1}), DiagonalPath(1)), MetricError);

  Rng rng(4);
  std::uniform_real_distribution<double> u(50, 300);
  for (int n = 0; n < 50; ++n) {
    std::vector<double> x(8), y(8);
    for (int k = 0; k < 8; ++k) x[k] = u(rng), y[k] = u(rng);
    const double r = F0Corr(Contour(x), Contour(y), DiagonalPath(8));
    for (double b : {0.5, 3.0}) {
      std::vector<double> z(8);
      for (int k = 0; k < 8; ++k) z[k] = 10.0 + b * y[k];
      CHECK(F0Corr(Contour(x), Contour(z), DiagonalPath(8)) == doctest::Approx(r).epsilon(1e-9));
    }
    // Negative slopes flip the sign; shift keeps values positive.
    std::vector<double> z(8);
    for (int k = 0; k < 8; ++k) z[k] = 1000.0 - 2.0 * y[k];
    CHECK(F0Corr(Contour(x), Contour(z), DiagonalPath(8)) == doctest::Approx(-r).epsilon(1e-9));
  }
}

TEST_CASE("all metrics match the naive references") {
  Rng rng(21);
  std::uniform_int_distribution<int> len(2, 12);
  for (int n = 0; n < 100; ++n) {
    const FeatureMatrix a = RandomFeatures(len(rng), rng), b = RandomFeatures(len(rng), rng);
    const auto fa = ToFrames(a), fb = ToFrames(b);
    const auto path = oracle::DtwPath(fa, fb);
    const MetricsReport r = EvaluateFeatures(a, b);
    CHECK(r.mcd_db == doctest::Approx(oracle::Mcd(fa, fb, path)).epsilon(1e-9));
    CHECK(r.vuv_error_pct == doctest::Approx(oracle::Vuv(fa, fb, path)).epsilon(1e-9));
    const double f0 = oracle::F0Error(fa, fb, path), corr = oracle::F0Corr(fa, fb, path);
    if (std::isnan(f0))
      CHECK(std::isnan(r.f0_rmse));
    else
      CHECK(r.f0_rmse == doctest::Approx(f0).epsilon(1e-9));
    if (std::isnan(corr))
      CHECK(std::isnan(r.f0_corr));
    else
      CHECK(r.f0_corr == doctest::Approx(corr).epsilon(1e-9));
  }
}

TEST_CASE("evaluate_edit identity and invariants") {
  SyntheticCorpusSpec spec;
  spec.utterance_count = 3;
  const Corpus c = GenerateSynthetic(spec);
  const Utterance& u = c.utterances[0];
  const MaskSpan span{3, 9};
  const MetricsReport same = EvaluateEdit(u, u.features, span);
  CHECK(same.mcd_db == 0.0);
  CHECK(same.f0_rmse == 0.0);
  CHECK(same.vuv_error_pct == 0.0);
  CHECK(same.f0_corr == doctest::Approx(1.0));

  Rng rng(2);
  for (int n = 0; n < 20; ++n) {
    FeatureSequence pred(RandomFeatures(u.num_frames(), rng));
    const MetricsReport r = EvaluateEdit(u, pred, span);
    CHECK(r.mcd_db >= 0.0);
    CHECK(r.vuv_error_pct >= 0.0);
    CHECK(r.vuv_error_pct <= 100.0);
    if (!std::isnan(r.f0_rmse)) CHECK(r.f0_rmse >= 0.0);
    if (!std::isnan(r.f0_corr)) CHECK(std::abs(r.f0_corr) <= 1.0);
  }
}

TEST_CASE("mcd grows with noise in the edited span") {
  SyntheticCorpusSpec spec;
  spec.utterance_count = 1;
  const Utterance u = GenerateSynthetic(spec).utterances[0];
  const MaskSpan span{2, std::min(14, u.num_frames())};
  Rng rng(13);
  double previous = 0.0;
  for (double amp : {0.05, 0.2, 0.8, 3.2}) {
    double total = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::normal_distribution<float> noise(0.0f, static_cast<float>(amp));
      FeatureMatrix p = u.features.frames;
      for (int t = span.start; t < span.end; ++t)
        for (int k = 0; k < kBfccDim; ++k) p(t, k) += noise(rng);
      total += EvaluateEdit(u, FeatureSequence(p), span).mcd_db;
    }
    CHECK(total / 100 >= previous);
    previous = total / 100;
  }
}
