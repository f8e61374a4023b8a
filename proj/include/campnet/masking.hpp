// include/campnet/masking.hpp

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

#include <vector>

#include "campnet/corpus.hpp"

namespace campnet {

/// Frames [start, end) to be regenerated.
struct MaskSpan {
  int start = 0;
  int end = 0;

  int length() const { return end - start; }
  bool contains(int t) const { return t >= start && t < end; }
  /// Throws MaskError unless 0 <= start < end <= num_frames.
  void Validate(int num_frames) const;
  friend bool operator==(const MaskSpan&, const MaskSpan&) = default;
};

/// Feature-level mask token. Masked frames become exactly this vector.
inline Eigen::Matrix<float, 1, kFeatureDim> MaskToken() {
  return Eigen::Matrix<float, 1, kFeatureDim>::Zero();
}

struct MaskedFeatures {
  FeatureMatrix values;
  std::vector<MaskSpan> spans;
  std::vector<bool> mask_flag;

  int length() const { return static_cast<int>(values.rows()); }
  int masked_count() const;
};

/// length = max(1, round(ratio * T)); start uniform over [0, T - length].
MaskSpan SampleMaskSpan(int num_frames, double ratio, Rng& rng);

MaskedFeatures ApplyMask(const FeatureMatrix& y, const std::vector<MaskSpan>& spans);
inline MaskedFeatures ApplyMask(const FeatureSequence& y, const std::vector<MaskSpan>& spans) {
  return ApplyMask(y.frames, spans);
}

/// original outside `span`, predicted inside it.
FeatureMatrix PasteRegion(const FeatureMatrix& original, const FeatureMatrix& predicted,
                          const MaskSpan& span);
inline FeatureSequence PasteRegion(const FeatureSequence& original,
                                   const FeatureSequence& predicted, const MaskSpan& span) {
  return FeatureSequence(PasteRegion(original.frames, predicted.frames, span));
}

}  // namespace campnet
