// tests/test_masking.cpp

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

#include "campnet/masking.hpp"
#include "test_util.hpp"

using namespace campnet;

TEST_CASE("span length is the rounded ratio, at least one frame") {
  Rng rng(3);
  for (int T : {1, 2, 7, 50, 333}) {
    for (double ratio : {0.001, 0.06, 0.12, 0.5, 0.9}) {
      if (ratio * T >= T) continue;
      for (int k = 0; k < 20; ++k) {
        const MaskSpan s = SampleMaskSpan(T, ratio, rng);
        CHECK(s.length() == std::max(1L, std::lround(ratio * T)));
        CHECK(s.start >= 0);
        CHECK(s.end <= T);
      }
    }
  }
}

TEST_CASE("span start is uniform over every admissible offset") {
  Rng rng(11);
  std::vector<int> hits(7, 0);
  for (int k = 0; k < 7000; ++k) ++hits[SampleMaskSpan(10, 0.4, rng).start];
  for (int h : hits) CHECK(h > 800);
}

TEST_CASE("bad ratios and lengths") {
  Rng rng(1);
  CHECK_THROWS_AS(SampleMaskSpan(0, 0.1, rng), MaskError);
  CHECK_THROWS_AS(SampleMaskSpan(10, 0.0, rng), MaskError);
  CHECK_THROWS_AS(SampleMaskSpan(10, 1.0, rng), MaskError);
  CHECK_THROWS_AS(SampleMaskSpan(10, -0.2, rng), MaskError);
}

TEST_CASE("masked frames equal the token and the rest is untouched") {
  const Utterance u = testutil::MakeUtterance({2, 2}, {9, 11});
  const MaskedFeatures m = ApplyMask(u.features, {{3, 7}, {12, 13}});
  CHECK(m.masked_count() == 5);
  for (int t = 0; t < u.num_frames(); ++t) {
    const bool in = (t >= 3 && t < 7) || t == 12;
    CHECK(m.mask_flag[t] == in);
    if (in)
      CHECK((m.values.row(t).array() == MaskToken().array()).all());
    else
      CHECK((m.values.row(t).array() == u.features.frames.row(t).array()).all());
  }
}

TEST_CASE("overlapping or out-of-range spans are rejected") {
  const Utterance u = testutil::MakeUtterance({2}, {10});
  CHECK_THROWS_AS(ApplyMask(u.features, {{2, 6}, {5, 8}}), MaskError);
  CHECK_THROWS_AS(ApplyMask(u.features, {{8, 11}}), MaskError);
  CHECK_THROWS_AS(ApplyMask(u.features, {{4, 4}}), MaskError);
  CHECK_NOTHROW(ApplyMask(u.features, {}));
}

TEST_CASE("paste takes predicted frames only inside the span") {
  const Utterance u = testutil::MakeUtterance({2}, {10});
  const FeatureMatrix pred = FeatureMatrix::Constant(10, kFeatureDim, 0.5f);
  const FeatureMatrix out = PasteRegion(u.features.frames, pred, {2, 5});
  for (int t = 0; t < 10; ++t) {
    const auto& src = (t >= 2 && t < 5) ? pred : u.features.frames;
    CHECK((out.row(t).array() == src.row(t).array()).all());
  }
  CHECK_THROWS_AS(PasteRegion(u.features.frames, FeatureMatrix(FeatureMatrix::Zero(9, kFeatureDim)), {2, 5}),
                  MaskError);
}
