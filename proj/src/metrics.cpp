// src/metrics.cpp

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

#include "campnet/metrics.hpp"

#include <cmath>

namespace campnet {

DtwPath DiagonalPath(int n) {
  if (n < 1) throw MetricError("empty sequence");
  DtwPath path;
  for (int i = 0; i < n; ++i) path.pairs.emplace_back(i, i);
  return path;
}

double Mcd(const FeatureMatrix& ref, const FeatureMatrix& edited, const DtwPath& path) {
  if (ref.rows() < 1 || edited.rows() < 1) throw MetricError("MCD needs nonempty sequences");
  if (path.pairs.empty()) throw MetricError("MCD needs a nonempty path");
  double sum = 0.0;
  for (auto [i, j] : path.pairs) sum += FrameMcd(ref.row(i), edited.row(j));
  return sum / path.size();
}

double Mcd(const FeatureMatrix& ref, const FeatureMatrix& edited) {
  return Mcd(ref, edited, Dtw(ref, edited));
}

F0Contour DecodeF0(const FeatureMatrix& features, double f0_hz_per_unit) {
  F0Contour c;
  c.hz = features.col(kPitchIndex).cast<double>() * f0_hz_per_unit;
  c.voiced.resize(features.rows());
  for (Eigen::Index t = 0; t < features.rows(); ++t)
    c.voiced[t] = features(t, kPitchCorrIndex) > kVoicingThreshold;
  return c;
}

namespace {

template <typename Fn>
void ForCoVoiced(const F0Contour& ref, const F0Contour& edited, const DtwPath& path, Fn&& fn) {
  for (auto [i, j] : path.pairs) {
    if (!ref.voiced.at(i) || !edited.voiced.at(j)) continue;
    const double fr = ref.hz(i), fs = edited.hz(j);
    if (!(fr > 0.0) || !(fs > 0.0)) throw MetricError("non-positive F0 on a voiced frame");
    fn(fr, fs);
  }
}

}  // namespace

double F0Rmse(const F0Contour& ref, const F0Contour& edited, const DtwPath& path,
              F0Reduction reduction) {
  double sum = 0.0;
  int n = 0;
  ForCoVoiced(ref, edited, path, [&](double fr, double fs) {
    const double cents = 1200.0 * std::abs(std::log2(fr) - std::log2(fs));
    sum += reduction == F0Reduction::kRms ? cents * cents : cents;
    ++n;
  });
  if (n == 0) throw MetricError("F0-RMSE undefined: no co-voiced frames");
  return reduction == F0Reduction::kRms ? std::sqrt(sum / n) : sum / n;
}

double VuvError(const std::vector<bool>& ref, const std::vector<bool>& edited, const DtwPath& path) {
  if (path.pairs.empty()) throw MetricError("V/UV error needs a nonempty path");
  int mismatched = 0;
  for (auto [i, j] : path.pairs) mismatched += ref.at(i) != edited.at(j);
  return 100.0 * mismatched / path.size();
}

double F0Corr(const F0Contour& ref, const F0Contour& edited, const DtwPath& path) {
  std::vector<double> a, b;
  ForCoVoiced(ref, edited, path, [&](double fr, double fs) {
    a.push_back(fr);
    b.push_back(fs);
  });
  if (a.size() < 2) throw MetricError("F0-CORR needs at least two co-voiced pairs");
  const Eigen::Map<const Eigen::ArrayXd> x(a.data(), a.size()), y(b.data(), b.size());
  const Eigen::ArrayXd dx = x - x.mean(), dy = y - y.mean();
  const double denom = std::sqrt(dx.square().sum()) * std::sqrt(dy.square().sum());
  if (!(denom > 0.0)) throw MetricError("F0-CORR undefined for a constant contour");
  return std::clamp((dx * dy).sum() / denom, -1.0, 1.0);
}

MetricsReport EvaluateFeatures(const FeatureMatrix& ref, const FeatureMatrix& edited,
                               const MetricOptions& options) {
  const DtwPath path = Dtw(ref, edited);
  const F0Contour fr = DecodeF0(ref, options.f0_hz_per_unit);
  const F0Contour fs = DecodeF0(edited, options.f0_hz_per_unit);
  MetricsReport r;
  r.mcd_db = Mcd(ref, edited, path);
  r.vuv_error_pct = VuvError(fr.voiced, fs.voiced, path);
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  try {
    r.f0_rmse = F0Rmse(fr, fs, path, options.f0_reduction);
  } catch (const MetricError&) {
    r.f0_rmse = kNaN;
  }
  try {
    r.f0_corr = F0Corr(fr, fs, path);
  } catch (const MetricError&) {
    r.f0_corr = kNaN;
  }
  return r;
}

MetricsReport EvaluateEdit(const Utterance& ref, const FeatureSequence& predicted,
                           const MaskSpan& span, const MetricOptions& options) {
  const FeatureSequence pasted = PasteRegion(ref.features, predicted, span);
  return EvaluateFeatures(ref.features.frames, pasted.frames, options);
}

}  // namespace campnet
