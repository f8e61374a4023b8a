// include/campnet/metrics.hpp

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

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "campnet/corpus.hpp"
#include "campnet/masking.hpp"

namespace campnet {

/// Monotone alignment from (0, 0) to (P-1, Q-1) with steps (1,0), (0,1), (1,1).
struct DtwPath {
  std::vector<std::pair<int, int>> pairs;
  double cost = 0.0;

  int size() const { return static_cast<int>(pairs.size()); }
};

/// Minimum-cost DTW over a P x Q grid of frame-pair costs `cost(i, j)`.
/// Ties prefer the diagonal predecessor, then (i-1, j), then (i, j-1).
template <typename CostFn>
DtwPath DtwFromCost(int P, int Q, CostFn&& cost) {
  if (P < 1 || Q < 1) throw MetricError("DTW needs two nonempty sequences");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  Matrix<double> acc = Matrix<double>::Constant(P, Q, kInf);
  for (int i = 0; i < P; ++i) {
    for (int j = 0; j < Q; ++j) {
      double best = (i == 0 && j == 0) ? 0.0 : kInf;
      if (i > 0 && j > 0) best = std::min(best, acc(i - 1, j - 1));
      if (i > 0) best = std::min(best, acc(i - 1, j));
      if (j > 0) best = std::min(best, acc(i, j - 1));
      acc(i, j) = best + cost(i, j);
    }
  }
  DtwPath path;
  path.cost = acc(P - 1, Q - 1);
  int i = P - 1, j = Q - 1;
  path.pairs.emplace_back(i, j);
  while (i > 0 || j > 0) {
    const double diag = (i > 0 && j > 0) ? acc(i - 1, j - 1) : kInf;
    const double up = i > 0 ? acc(i - 1, j) : kInf;
    const double left = j > 0 ? acc(i, j - 1) : kInf;
    if (diag <= up && diag <= left) {
      --i, --j;
    } else if (up <= left) {
      --i;
    } else {
      --j;
    }
    path.pairs.emplace_back(i, j);
  }
  std::reverse(path.pairs.begin(), path.pairs.end());
  return path;
}

/// DTW with Euclidean frame distance over all columns; rows are frames.
template <typename DerivedA, typename DerivedB>
DtwPath Dtw(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.cols()) throw MetricError("DTW frame dimensions differ");
  return DtwFromCost(static_cast<int>(a.rows()), static_cast<int>(b.rows()), [&](int i, int j) {
    return (a.row(i).template cast<double>() - b.row(j).template cast<double>()).norm();
  });
}

/// (0,0), (1,1), ..., (n-1,n-1) with zero cost; used for equal-length inputs.
DtwPath DiagonalPath(int n);

inline constexpr int kMcdOrder = 28;

/// Mel-cepstral distortion in dB between two cepstral rows, over the first
/// kMcdOrder coefficients: (10 / ln 10) * sqrt(2 * sum (a_i - b_i)^2).
template <typename DerivedA, typename DerivedB>
double FrameMcd(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  const auto diff = (a.template head<kMcdOrder>().template cast<double>() -
                     b.template head<kMcdOrder>().template cast<double>());
  return 10.0 / std::log(10.0) * std::sqrt(2.0 * diff.squaredNorm());
}

double Mcd(const FeatureMatrix& ref, const FeatureMatrix& edited, const DtwPath& path);
double Mcd(const FeatureMatrix& ref, const FeatureMatrix& edited);

inline constexpr double kVoicingThreshold = 0.3;

struct F0Contour {
  Eigen::VectorXd hz;
  std::vector<bool> voiced;

  int size() const { return static_cast<int>(hz.size()); }
};

F0Contour DecodeF0(const FeatureMatrix& features, double f0_hz_per_unit);

enum class F0Reduction {
  kMeanAbs,  // mean of per-frame 1200 |log2(Fr / Fs)| along the path
  kRms,      // root of the mean of squared per-frame values
};

double F0Rmse(const F0Contour& ref, const F0Contour& edited, const DtwPath& path,
              F0Reduction reduction = F0Reduction::kMeanAbs);
double VuvError(const std::vector<bool>& ref, const std::vector<bool>& edited, const DtwPath& path);
/// Pearson correlation of DTW-aligned co-voiced F0 values.
double F0Corr(const F0Contour& ref, const F0Contour& edited, const DtwPath& path);

struct MetricsReport {
  double mcd_db = 0.0;
  double f0_rmse = 0.0;
  double vuv_error_pct = 0.0;
  double f0_corr = 0.0;
};

struct MetricOptions {
  double f0_hz_per_unit = 100.0;
  F0Reduction f0_reduction = F0Reduction::kMeanAbs;
};

/// All four metrics between two whole feature sequences, sharing one DTW path.
/// f0_rmse / f0_corr are NaN when undefined (no co-voiced frames, flat contour).
MetricsReport EvaluateFeatures(const FeatureMatrix& ref, const FeatureMatrix& edited,
                               const MetricOptions& options = {});

/// Pastes `predicted` into the reference over `span`, then scores the whole sequence.
MetricsReport EvaluateEdit(const Utterance& ref, const FeatureSequence& predicted,
                           const MaskSpan& span, const MetricOptions& options = {});

}  // namespace campnet
