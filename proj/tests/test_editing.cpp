// tests/test_editing.cpp

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

#include <algorithm>

#include <json.hpp>

#include "campnet/editing.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace campnet;

namespace {

ModelConfig Tiny(int vocab) {
  ModelConfig c = ModelConfig::Toy(vocab);
  c.hidden_dim = 8;
  c.conv_channels = 8;
  c.phoneme_embed_dim = 8;
  c.ffn_dim = 16;
  c.heads = 2;
  return c;
}

// Means indexed by id: 0 -> 8, 1 -> 6, 2 -> 10, 3 -> 12, 4 -> 8; others unseen.
DurationModel Table() {
  DurationModel dm;
  dm.means = {8, 6, 10, 12, 8, 0, 0, 0, 0, 0};
  dm.global_mean = 7;
  return dm;
}

EditOptions Eps(int e) {
  EditOptions o;
  o.expansion = e;
  return o;
}

// Three words of two phonemes each, frames [0,10), [10,20), [20,30).
Utterance Thirty() { return testutil::MakeUtterance({2, 2, 2}, {10, 10, 10}); }

void CheckProvenance(const EditPlan& plan, const Utterance& src) {
  for (int t = 0; t < plan.length(); ++t) {
    const int p = plan.provenance[t];
    if (p == kMaskedFrame) {
      CHECK(plan.masked.mask_flag[t]);
    } else {
      CHECK((plan.masked.values.row(t).array() == src.features.frames.row(p).array()).all());
    }
  }
}

}  // namespace

TEST_CASE("duration prediction") {
  const DurationModel dm = Table();
  CHECK(dm.Predict({0, 1}) == 14);
  CHECK(dm.Predict({7}) == 7);
  CHECK(dm.Mean(9) == 7.0);
  CHECK_THROWS_AS(dm.Predict({}), EditError);
  DurationModel tiny;
  tiny.means = {0.2};
  tiny.global_mean = 0.2;
  CHECK(tiny.Predict({0}) >= 1);
}

TEST_CASE("duration fit averages even splits and stays at least one frame") {
  const Utterance u = testutil::MakeUtterance({2, 1}, {10, 3});  // ids 0,1 then 2
  const DurationModel dm = DurationModel::Fit(std::span<const Utterance>(&u, 1), 10);
  CHECK(dm.Mean(0) == doctest::Approx(5.0));
  CHECK(dm.Mean(1) == doctest::Approx(5.0));
  CHECK(dm.Mean(2) == doctest::Approx(3.0));
  CHECK(dm.global_mean == doctest::Approx(13.0 / 3.0));
  CHECK_NOTHROW(dm.Validate());
  for (double m : dm.means)
    if (m > 0) CHECK(m >= 1.0);
}

TEST_CASE("delete examples") {
  const Utterance u = Thirty();
  const EditScript del{EditOp::kDelete, 1, {}};
  EditPlan p = PlanDelete(u, del, 10, Eps(3));
  CHECK(p.length() == 20);
  REQUIRE(p.spans.size() == 1);
  CHECK(p.spans[0] == MaskSpan{7, 13});
  CheckProvenance(p, u);
  CHECK_NOTHROW(p.Validate());

  p = PlanDelete(u, del, 10, Eps(0));
  CHECK(p.length() == 20);
  CHECK(p.spans.empty());

  p = PlanDelete(u, {EditOp::kDelete, 0, {}}, 10, Eps(3));
  REQUIRE(p.spans.size() == 1);
  CHECK(p.spans[0] == MaskSpan{0, 3});
  CHECK(p.words.front().frames == Range{0, 10});
}

TEST_CASE("duration-guided delete sizes the junction from neighbouring phonemes") {
  // Word 0 ends with id 1 (mean 6); word 2 starts with id 4 (mean 8).
  const Utterance u = Thirty();
  EditOptions o;
  o.duration_guided_delete = true;
  const DurationModel dm = Table();
  const EditPlan p = PlanDelete(u, {EditOp::kDelete, 1, {}}, 10, o, &dm);
  REQUIRE(p.spans.size() == 1);
  CHECK(p.spans[0] == MaskSpan{10 - 6, 10 + 8});
  CHECK_THROWS_AS(PlanDelete(u, {EditOp::kDelete, 1, {}}, 10, o, nullptr), EditError);
}

TEST_CASE("replace examples") {
  const Utterance u = Thirty();
  const DurationModel dm = Table();
  EditPlan p = PlanReplace(u, {EditOp::kReplace, 1, {{"ab", {0, 1}}}}, 10, dm, Eps(3));
  CHECK(p.length() == 34);
  REQUIRE(p.spans.size() == 1);
  CHECK(p.spans[0] == MaskSpan{7, 27});
  CHECK(p.inserted_frames == Range{10, 24});
  CHECK(p.words[1].frames == Range{10, 24});
  CHECK(p.words[2].frames == Range{24, 34});
  CheckProvenance(p, u);

  // Equal length and no expansion: the mask is the original word span.
  DurationModel ten = dm;
  ten.means[5] = 10;
  p = PlanReplace(u, {EditOp::kReplace, 1, {{"x", {5}}}}, 10, ten, Eps(0));
  CHECK(p.length() == 30);
  CHECK(p.spans[0] == MaskSpan{10, 20});

  p = PlanReplace(u, {EditOp::kReplace, 2, {{"x", {5}}}}, 10, ten, Eps(50));
  CHECK(p.spans[0] == MaskSpan{0, 30});
}

TEST_CASE("insert examples") {
  const Utterance u = Thirty();
  const DurationModel dm = Table();
  // id 3 has mean 12, so d = 12.
  EditPlan p = PlanInsert(u, {EditOp::kInsert, 1, {{"x", {3}}}}, 10, dm, Eps(3));
  CHECK(p.length() == 42);
  REQUIRE(p.spans.size() == 1);
  CHECK(p.spans[0] == MaskSpan{7, 25});

  p = PlanInsert(u, {EditOp::kInsert, 0, {{"x", {3}}}}, 10, dm, Eps(3));
  CHECK(p.spans[0] == MaskSpan{0, 15});
  p = PlanInsert(u, {EditOp::kInsert, 3, {{"x", {3}}}}, 10, dm, Eps(3));
  CHECK(p.spans[0] == MaskSpan{27, 42});
  CHECK(p.x_prime.ids.back() == 3);
}

TEST_CASE("plans agree with independent splice arithmetic") {
  Rng rng(8);
  const DurationModel dm = Table();
  std::uniform_int_distribution<int> words(1, 5), ph(1, 3), fr(1, 15), id(0, 9), eps(0, 8), op(0, 2), nw(1, 3);
  for (int n = 0; n < 200; ++n) {
    std::vector<int> phs, frs;
    const int W = words(rng);
    for (int w = 0; w < W; ++w) phs.push_back(ph(rng)), frs.push_back(fr(rng));
    const Utterance u = testutil::MakeUtterance(phs, frs);
    EditScript s;
    s.op = static_cast<EditOp>(op(rng));
    if (s.op == EditOp::kDelete && W == 1) s.op = EditOp::kReplace;
    s.index = std::uniform_int_distribution<int>(0, s.op == EditOp::kInsert ? W : W - 1)(rng);
    if (s.op != EditOp::kDelete) {
      s.words.push_back({"w", {}});
      for (int k = ph(rng); k > 0; --k) s.words[0].phonemes.push_back(id(rng));
    }
    const int e = eps(rng);
    const EditPlan p = PlanEdit(u, s, 10, dm, Eps(e));
    const int T = u.num_frames();
    int cut_n = 0, cut_m = 0, d = 0;
    if (s.op == EditOp::kInsert) {
      cut_n = cut_m = s.index < W ? u.words[s.index].frames.begin : T;
      d = dm.Predict(s.words[0].phonemes);
    } else {
      cut_n = u.words[s.index].frames.begin;
      cut_m = u.words[s.index].frames.end;
      if (s.op == EditOp::kReplace) d = dm.Predict(s.words[0].phonemes);
    }
    const int Tp = oracle::SplicedLength(T, cut_n, cut_m, d);
    CAPTURE(n);
    CHECK(p.length() == Tp);
    const auto [lo, hi] = oracle::SplicedSpan(Tp, cut_n, d, e);
    if (hi > lo) {
      REQUIRE(p.spans.size() == 1);
      CHECK(p.spans[0] == MaskSpan{lo, hi});
    } else {
      CHECK(p.spans.empty());
    }
    for (int t = 0; t < Tp; ++t) {
      const bool masked = t >= lo && t < hi;
      if (masked) continue;
      const int src = t < cut_n ? t : t - d + (cut_m - cut_n);
      CHECK(p.provenance[t] == src);
      CHECK((p.masked.values.row(t).array() == u.features.frames.row(src).array()).all());
    }
  }
}

TEST_CASE("long single-step spans warn") {
  const Utterance u = testutil::MakeUtterance({1, 1}, {10, 10});
  DurationModel dm = Table();
  dm.means[5] = 150;
  const EditPlan ok = PlanInsert(u, {EditOp::kInsert, 1, {{"x", {5}}}}, 10, dm, Eps(0));
  CHECK(ok.warnings.empty());
  const EditPlan big = PlanInsert(u, {EditOp::kInsert, 1, {{"x", {5}}}}, 10, dm, Eps(1));
  REQUIRE(big.warnings.size() == 1);
  CHECK(big.warnings[0].find("152") != std::string::npos);
}

TEST_CASE("one-step editing preserves frames outside the spans") {
  const Utterance u = Thirty();
  const CampNetModel<float> m(Tiny(10), 3);
  const DurationModel dm = Table();
  const EditPlan p = PlanReplace(u, {EditOp::kReplace, 1, {{"ab", {0, 1}}}}, 10, dm, Eps(3));
  const EditResult r = EditOneStep(m, u, p);
  CHECK(r.utterance.num_frames() == 34);
  CHECK(r.provenance == p.provenance);
  CHECK(r.generated == p.spans);
  REQUIRE(r.steps.size() == 1);
  CHECK(r.steps[0].coarse_passes == 1);
  CHECK(r.steps[0].fine_passes == 1);
  CHECK(r.steps[0].attention_mass >= 0.0);
  CHECK(r.steps[0].attention_mass <= 1.0);
  for (int t = 0; t < 34; ++t)
    if (p.provenance[t] != kMaskedFrame)
      CHECK((r.utterance.features.frames.row(t).array() == u.features.frames.row(p.provenance[t]).array()).all());
  CHECK(r.utterance.phonemes == p.x_prime);
  CHECK(r.utterance.words == p.words);
}

TEST_CASE("an empty span list returns the spliced input untouched") {
  const Utterance u = Thirty();
  const CampNetModel<float> m(Tiny(10), 3);
  const EditPlan p = PlanDelete(u, {EditOp::kDelete, 1, {}}, 10, Eps(0));
  const EditResult r = EditOneStep(m, u, p);
  CHECK(r.utterance.features.frames == p.masked.values);
  CHECK(r.steps[0].coarse_passes == 0);
  CHECK(std::isnan(r.steps[0].attention_mass));
}

TEST_CASE("word-level editing runs one iteration per word") {
  const Utterance u = testutil::MakeUtterance({2, 2, 1}, {20, 20, 10});
  const CampNetModel<float> m(Tiny(10), 3);
  const DurationModel dm = Table();
  const EditScript s{EditOp::kInsert, 1, {{"a", {2}}, {"b", {3}}, {"c", {4}}}};  // 10, 12, 8
  const EditResult r = EditWordLevel(m, u, s, dm, Eps(2));
  REQUIRE(r.steps.size() == 3);
  CHECK(r.utterance.num_frames() == 80);
  CHECK(r.steps[0].length == 60);
  CHECK(r.steps[1].length == 72);
  CHECK(r.steps[2].length == 80);
  CHECK(r.steps[2].word == "c");
  CHECK(r.utterance.num_words() == 6);
  CHECK(r.utterance.words[1].word == "a");
  CHECK(r.utterance.words[3].word == "c");
  CHECK(r.utterance.words[1].frames == Range{20, 30});
  CHECK(r.utterance.words[4].frames == Range{50, 70});
  for (std::size_t t = 0; t < r.provenance.size(); ++t)
    if (r.provenance[t] != kMaskedFrame)
      CHECK((r.utterance.features.frames.row(t).array() == u.features.frames.row(r.provenance[t]).array()).all());
  CHECK_NOTHROW(r.utterance.Validate(10));
}

TEST_CASE("word-level with one word equals the one-step edit") {
  const Utterance u = Thirty();
  const CampNetModel<float> m(Tiny(10), 3);
  const DurationModel dm = Table();
  const EditScript s{EditOp::kReplace, 2, {{"x", {3}}}};
  const EditResult a = EditWordLevel(m, u, s, dm, Eps(3));
  const EditResult b = EditOneStep(m, u, PlanEdit(u, s, 10, dm, Eps(3)));
  CHECK(a.utterance == b.utterance);
  CHECK(a.provenance == b.provenance);
}

TEST_CASE("word-level scripts are validated before the first iteration") {
  const Utterance u = Thirty();
  const CampNetModel<float> m(Tiny(10), 3);
  const EditScript s{EditOp::kInsert, 1, {{"a", {2}}, {"b", {12}}}};
  CHECK_THROWS_AS(EditWordLevel(m, u, s, Table(), Eps(2)), EditError);
}

TEST_CASE("generated frames stay inside the feature domain") {
  const Utterance u = Thirty();
  CampNetModel<float> m(Tiny(10), 3);
  auto& bias = std::find_if(m.params().begin(), m.params().end(), [](const auto& p) {
                 return p.name == "fine.out.bias";
               })->value;
  // Push the corr output far outside [0, 1].
  bias(0, kPitchCorrIndex) = 50.0f;
  const EditResult r = EditOneStep(m, u, PlanEdit(u, {EditOp::kReplace, 1, {{"x", {4, 5}}}}, 10, Table(), Eps(2)));
  CHECK_NOTHROW(r.utterance.features.Validate());
  bias(0, kPitchCorrIndex) = -50.0f;
  const EditResult q = EditOneStep(m, u, PlanEdit(u, {EditOp::kReplace, 1, {{"x", {4, 5}}}}, 10, Table(), Eps(2)));
  CHECK_NOTHROW(q.utterance.features.Validate());
}

TEST_CASE("masked runs and provenance sidecar") {
  CHECK(MaskedRuns({0, -1, -1, 3, -1}) == std::vector<MaskSpan>{{1, 3}, {4, 5}});
  CHECK(MaskedRuns({0, 1}).empty());
  const Utterance u = Thirty();
  const CampNetModel<float> m(Tiny(10), 3);
  const EditScript s{EditOp::kDelete, 1, {}};
  const EditResult r = EditOneStep(m, u, PlanDelete(u, s, 10, Eps(3)));
  const auto j = nlohmann::json::parse(ProvenanceToJson(r, s));
  CHECK(j.at("length") == 20);
  CHECK(j.at("provenance").size() == 20);
  CHECK(j.at("provenance")[0] == "original@0");
}
