// tests/test_training.cpp

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

#include <fstream>
#include <optional>
#include <set>

#include "campnet/training.hpp"
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
  c.encoder_blocks = 1;
  c.coarse_blocks = 2;
  c.fine_blocks = 1;
  return c;
}

Corpus SmallCorpus(int count = 6, std::uint64_t seed = 7) {
  SyntheticCorpusSpec spec;
  spec.vocab_size = 6;
  spec.seed = seed;
  spec.utterance_count = count;
  spec.phonemes_per_utt = {3, 5};
  spec.frames_per_phoneme = {3, 5};
  return GenerateSynthetic(spec);
}

TrainConfig Quick(int steps) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.batch_size = 3;
  cfg.seed = 9;
  return cfg;
}

template <typename S>
bool SameParams(const CampNetModel<S>& a, const CampNetModel<S>& b, std::optional<ParamGroup> only = {}) {
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    if (only && a.params()[i].group != *only) continue;
    if (a.params()[i].value != b.params()[i].value) return false;
  }
  return true;
}

DecoderOutputs<float> Outputs(const FeatureMatrix& coarse, const FeatureMatrix& fine) {
  DecoderOutputs<float> out;
  out.coarse = coarse;
  out.fine = fine;
  return out;
}

}  // namespace

TEST_CASE("build target examples") {
  const Utterance u = testutil::MakeUtterance({1, 1}, {2, 1});
  const FeatureMatrix& y = u.features.frames;
  CHECK(BuildTarget(y, {0, 3}) == y);
  const FeatureMatrix t = BuildTarget(y, {1, 2});
  CHECK(t.row(0).isZero(0));
  CHECK(t.row(2).isZero(0));
  CHECK(t.row(1) == y.row(1));
}

TEST_CASE("target and masked input add back to the features") {
  SyntheticCorpusSpec spec;
  spec.utterance_count = 5;
  Rng rng(2);
  for (const auto& u : GenerateSynthetic(spec).utterances) {
    for (int k = 0; k < 20; ++k) {
      const MaskSpan s = SampleMaskSpan(u.num_frames(), 0.3, rng);
      const FeatureMatrix sum = BuildTarget(u.features.frames, s) + ApplyMask(u.features, {s}).values;
      CHECK(sum == u.features.frames);
    }
  }
}

TEST_CASE("loss examples") {
  const FeatureMatrix target = FeatureMatrix::Constant(5, kFeatureDim, 0.25f);
  LossReport r = Loss(Outputs(target, target), target);
  CHECK(r.total == 0.0);
  r = Loss(Outputs(target.array() + 1.0f, target), target);
  CHECK(r.coarse_term == doctest::Approx(1.0));
  CHECK(r.fine_term == 0.0);
  CHECK(r.total == doctest::Approx(1.0));
  const LossReport once = Loss(Outputs(target.array() + 0.5f, target.array() - 0.25f), target);
  const LossReport twice = Loss(Outputs(target.array() + 1.0f, target.array() - 0.5f), target);
  CHECK(twice.total == doctest::Approx(2.0 * once.total));
  CHECK(once.total == doctest::Approx(once.coarse_term + once.fine_term));
  CHECK_THROWS_AS(Loss(Outputs(target, target), FeatureMatrix(FeatureMatrix::Zero(4, kFeatureDim))), TrainError);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.Validate());
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.Validate(), TrainError);
  cfg = TrainConfig{};
  cfg.mask_ratio = 1.0;
  CHECK_THROWS_AS(cfg.Validate(), TrainError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.Validate(), TrainError);
}

TEST_CASE("zero steps leave the model unchanged") {
  const Corpus c = SmallCorpus();
  CampNetModel<float> m(Tiny(6), 1);
  const CampNetModel<float> before = m;
  const TrainResult r = Train(m, std::span<const Utterance>(c.utterances), Quick(0));
  CHECK(r.steps.empty());
  CHECK(SameParams(m, before));
}

TEST_CASE("training is deterministic for a seed") {
  const Corpus c = SmallCorpus();
  CampNetModel<float> a(Tiny(6), 1), b(Tiny(6), 1);
  const TrainResult ra = Train(a, std::span<const Utterance>(c.utterances), Quick(4));
  const TrainResult rb = Train(b, std::span<const Utterance>(c.utterances), Quick(4));
  REQUIRE(ra.steps.size() == 4);
  for (int s = 0; s < 4; ++s) {
    CHECK(ra.steps[s].loss.total == rb.steps[s].loss.total);
    CHECK(ra.steps[s].spans == rb.steps[s].spans);
  }
  CHECK(SameParams(a, b));
}

TEST_CASE("each step samples one span per batch item at the mask ratio") {
  const Corpus c = SmallCorpus();
  CampNetModel<float> m(Tiny(6), 1);
  TrainConfig cfg = Quick(3);
  cfg.mask_ratio = 0.25;
  int calls = 0;
  const TrainResult r = Train(m, std::span<const Utterance>(c.utterances), cfg, [&](int, const StepRecord&) { ++calls; });
  CHECK(calls == 3);
  for (const auto& step : r.steps) {
    CHECK(step.spans.size() == 3u);
    CHECK(step.loss.masked_frame_count > 0);
    CHECK(step.loss.total >= 0.0);
  }
}

TEST_CASE("empty corpus is rejected") {
  CampNetModel<float> m(Tiny(6), 1);
  CHECK_THROWS_AS(Train(m, std::span<const Utterance>(), Quick(1)), TrainError);
}

TEST_CASE("divergence names the step") {
  const Corpus c = SmallCorpus();
  CampNetModel<float> m(Tiny(6), 1);
  TrainConfig cfg = Quick(3);
  cfg.lr = 1e30;
  cfg.clip_norm = 0.0;
  try {
    for (int k = 0; k < 5; ++k) Train(m, std::span<const Utterance>(c.utterances), cfg);
    FAIL("expected TrainError");
  } catch (const TrainError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("gradient clipping bounds the global norm") {
  CampNetModel<double> m(Tiny(6), 1);
  for (auto& p : m.params())
    if (p.trainable) p.grad = Matrix<double>::Constant(p.value.rows(), p.value.cols(), 3.0);
  const double before = ClipGradNorm(m, 1.0);
  CHECK(before > 1.0);
  double sq = 0.0;
  for (const auto& p : m.params())
    if (p.has_grad()) sq += p.grad.squaredNorm();
  CHECK(std::sqrt(sq) == doctest::Approx(1.0));
}

TEST_CASE("adam's first step moves each parameter by about lr") {
  CampNetModel<double> m(Tiny(6), 1);
  const CampNetModel<double> before = m;
  auto& p = m.params()[m.Index("fine.out.bias")];
  p.grad = Matrix<double>::Constant(p.value.rows(), p.value.cols(), -0.2);
  TrainConfig cfg;
  Adam<double> adam(cfg);
  adam.Step(m);
  const auto delta = (p.value - before.param("fine.out.bias").value).eval();
  CHECK(delta.minCoeff() == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK(delta.maxCoeff() == doctest::Approx(1e-3).epsilon(1e-4));
  // Parameters without a gradient are untouched.
  CHECK(m.param("fine.out.weight").value == before.param("fine.out.weight").value);
}

TEST_CASE("sweep rows follow the ratios and duplicates agree") {
  const Corpus c = SmallCorpus();
  const CampNetModel<float> m(Tiny(6), 1);
  const auto rows = MaskRatioSweep(m, std::span<const Utterance>(c.utterances), {0.2, 0.2, 0.3}, Quick(2));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].ratio == 0.2);
  CHECK(rows[0].final_loss == rows[1].final_loss);
  CHECK(MaskRatioSweep(m, std::span<const Utterance>(c.utterances), {0.2}, Quick(1)).size() == 1);
  CHECK_THROWS(MaskRatioSweep(m, std::span<const Utterance>(c.utterances), {1.2}, Quick(1)));
}

TEST_CASE("final loss averages the last tenth") {
  TrainResult r;
  for (int s = 0; s < 20; ++s) {
    StepRecord rec;
    rec.loss.total = s;
    r.steps.push_back(rec);
  }
  CHECK(r.FinalLoss() == doctest::Approx(18.5));
  r.steps.resize(3);
  CHECK(r.FinalLoss() == doctest::Approx(2.0));
}

TEST_CASE("few-shot adaptation freezes the encoder") {
  const Corpus c = SmallCorpus(4, 31);
  CampNetModel<float> m(Tiny(6), 1);
  const CampNetModel<float> before = m;
  AdaptConfig cfg;
  cfg.train = Quick(0);
  cfg.epochs = 2;
  const TrainResult r = AdaptFewShot(m, std::span<const Utterance>(c.utterances), cfg);
  CHECK(r.steps.size() == 4u);  // 2 epochs of ceil(4 / 3)
  CHECK(SameParams(m, before, ParamGroup::kEncoder));
  CHECK_FALSE(SameParams(m, before, ParamGroup::kDecoder));
  CHECK_FALSE(SameParams(m, before, ParamGroup::kPrenet));

  cfg.epochs = 0;
  CampNetModel<float> n = before;
  AdaptFewShot(n, std::span<const Utterance>(c.utterances), cfg);
  CHECK(SameParams(n, before));
  CHECK_THROWS_AS(AdaptFewShot(n, std::span<const Utterance>(), cfg), AdaptError);
}

TEST_CASE("one-shot adaptation draws fresh spans") {
  CHECK(OneShotStepsPerEpoch(0.12) == 9);
  CHECK(OneShotStepsPerEpoch(0.25) == 4);
  CHECK(OneShotStepsPerEpoch(0.5) == 2);
  const Corpus c = SmallCorpus(1, 33);
  CampNetModel<float> m(Tiny(6), 1);
  const CampNetModel<float> before = m;
  AdaptConfig cfg;
  cfg.train = Quick(0);
  cfg.train.mask_ratio = 0.25;
  cfg.epochs = 5;
  const TrainResult r = AdaptOneShot(m, c.utterances[0], cfg);
  CHECK(r.steps.size() == 20u);
  std::set<std::pair<int, int>> distinct;
  for (const auto& s : r.steps)
    for (const auto& span : s.spans) distinct.insert({span.start, span.end});
  CHECK(distinct.size() >= 2);
  CHECK(SameParams(m, before, ParamGroup::kEncoder));
}

TEST_CASE("one-shot spans come from the supplied generator") {
  const Corpus c = SmallCorpus(1, 33);
  const Utterance& u = c.utterances[0];
  AdaptConfig cfg;
  cfg.train = Quick(0);
  cfg.epochs = 1;
  CampNetModel<float> a(Tiny(6), 1), b(Tiny(6), 1);
  Rng ra(5), rb(5);
  const TrainResult x = AdaptOneShot(a, u, cfg, &ra), y = AdaptOneShot(b, u, cfg, &rb);
  for (std::size_t s = 0; s < x.steps.size(); ++s) CHECK(x.steps[s].spans == y.steps[s].spans);

  // A ratio that rounds to the whole utterance leaves one possible span, so
  // every step repeats the same batch.
  cfg.train.mask_ratio = 1.0 - 0.4 / u.num_frames();
  CampNetModel<float> m(Tiny(6), 1);
  const TrainResult r = AdaptOneShot(m, u, cfg);
  for (const auto& step : r.steps)
    for (const auto& span : step.spans) CHECK(span == MaskSpan{0, u.num_frames()});
}

TEST_CASE("reconstruction score and loss csv") {
  const Corpus c = SmallCorpus(3);
  const CampNetModel<float> m(Tiny(6), 1);
  const auto spans = SampleEvalSpans(std::span<const Utterance>(c.utterances), 0.2, 4);
  CHECK(spans == SampleEvalSpans(std::span<const Utterance>(c.utterances), 0.2, 4));
  const ReconstructionScore s = ScoreReconstruction(m, std::span<const Utterance>(c.utterances), spans);
  CHECK(s.utterances == 3);
  CHECK(s.mcd_zero > 0.0);
  CHECK(MaskedRegionMcd(c.utterances[0].features.frames, c.utterances[0].features.frames, spans[0]) == 0.0);

  testutil::TempDir dir;
  TrainResult r;
  r.steps.resize(2);
  r.steps[1].loss = {3.0, 1.0, 2.0, 4};
  WriteLossCsv(r, dir / "loss.csv");
  std::ifstream in(dir / "loss.csv");
  std::string header, first, second;
  std::getline(in, header);
  std::getline(in, first);
  std::getline(in, second);
  CHECK(header == "step,total,coarse,fine");
  CHECK(second.rfind("1,3", 0) == 0);
}
