// src/masking.cpp

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

#include "campnet/masking.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace campnet {

void MaskSpan::Validate(int num_frames) const {
  if (start < 0 || start >= end || end > num_frames)
    throw MaskError("mask span [" + std::to_string(start) + ", " + std::to_string(end) +
                    ") invalid for " + std::to_string(num_frames) + " frames");
}

int MaskedFeatures::masked_count() const {
  return static_cast<int>(std::count(mask_flag.begin(), mask_flag.end(), true));
}

MaskSpan SampleMaskSpan(int num_frames, double ratio, Rng& rng) {
  if (num_frames < 1) throw MaskError("cannot mask an empty sequence");
  if (!(ratio > 0.0) || ratio * num_frames >= num_frames)
    throw MaskError("mask ratio must lie in (0, 1)");
  const int length = std::max(1, static_cast<int>(std::lround(ratio * num_frames)));
  const int start = std::uniform_int_distribution<int>(0, num_frames - length)(rng);
  return {start, start + length};
}

MaskedFeatures ApplyMask(const FeatureMatrix& y, const std::vector<MaskSpan>& spans) {
  const int T = static_cast<int>(y.rows());
  MaskedFeatures out;
  out.values = y;
  out.spans = spans;
  out.mask_flag.assign(T, false);
  for (const auto& s : spans) {
    s.Validate(T);
    for (int t = s.start; t < s.end; ++t) {
      if (out.mask_flag[t]) throw MaskError("mask spans overlap at frame " + std::to_string(t));
      out.mask_flag[t] = true;
      out.values.row(t) = MaskToken();
    }
  }
  return out;
}

FeatureMatrix PasteRegion(const FeatureMatrix& original, const FeatureMatrix& predicted,
                          const MaskSpan& span) {
  if (original.rows() != predicted.rows())
    throw MaskError("paste length mismatch: " + std::to_string(original.rows()) + " vs " +
                    std::to_string(predicted.rows()));
  span.Validate(static_cast<int>(original.rows()));
  FeatureMatrix out = original;
  out.middleRows(span.start, span.length()) = predicted.middleRows(span.start, span.length());
  return out;
}

}  // namespace campnet
