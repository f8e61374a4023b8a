// src/editing.cpp

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

#include "campnet/editing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

namespace campnet {

DurationModel DurationModel::Fit(std::span<const Utterance> utts, int vocab_size) {
  if (vocab_size < 1) throw EditError("duration model needs a non-empty inventory");
  std::vector<double> sum(vocab_size, 0.0);
  std::vector<int> count(vocab_size, 0);
  double total_frames = 0.0, gap_sum = 0.0;
  long total_phonemes = 0, gaps = 0;
  for (const auto& u : utts) {
    for (std::size_t w = 0; w < u.words.size(); ++w) {
      const WordSpan& word = u.words[w];
      if (word.phonemes.empty() || word.frames.empty()) continue;
      const double share = static_cast<double>(word.frames.size()) / word.phonemes.size();
      for (int p = word.phonemes.begin; p < word.phonemes.end; ++p) {
        const int id = u.phonemes.ids[p];
        if (id < 0 || id >= vocab_size) continue;
        sum[id] += share;
        ++count[id];
      }
      total_frames += word.frames.size();
      total_phonemes += word.phonemes.size();
      if (w > 0) {
        gap_sum += std::max(0, word.frames.begin - u.words[w - 1].frames.end);
        ++gaps;
      }
    }
  }
  DurationModel dm;
  dm.global_mean = total_phonemes > 0 ? std::max(1.0, total_frames / total_phonemes) : 1.0;
  dm.pause_mean = gaps > 0 ? gap_sum / gaps : 0.0;
  dm.means.assign(vocab_size, 0.0);
  for (int id = 0; id < vocab_size; ++id)
    if (count[id] > 0) dm.means[id] = std::max(1.0, sum[id] / count[id]);
  return dm;
}

double DurationModel::Mean(int id) const {
  if (id >= 0 && id < static_cast<int>(means.size()) && means[id] > 0.0) return means[id];
  return global_mean;
}

int DurationModel::Predict(const std::vector<int>& phonemes) const {
  if (phonemes.empty()) throw EditError("cannot predict the duration of an empty word");
  double total = 0.0;
  for (int id : phonemes) total += Mean(id);
  return std::max(1, static_cast<int>(std::lround(total)));
}

void DurationModel::Validate() const {
  if (!(global_mean >= 1.0)) throw EditError("duration global mean below one frame");
  if (!(pause_mean >= 0.0)) throw EditError("negative pause mean");
  for (double m : means)
    if (m > 0.0 && m < 1.0) throw EditError("phoneme mean below one frame");
}

void EditPlan::Validate() const {
  const int T = length();
  if (masked.values.rows() != T || static_cast<int>(masked.mask_flag.size()) != T)
    throw EditError("plan length mismatch");
  std::vector<bool> in_span(T, false);
  for (const auto& s : spans) {
    s.Validate(T);
    for (int t = s.start; t < s.end; ++t) in_span[t] = true;
  }
  for (int t = 0; t < T; ++t) {
    if (in_span[t] != (provenance[t] == kMaskedFrame))
      throw EditError("provenance disagrees with mask spans at frame " + std::to_string(t));
    if (in_span[t] != static_cast<bool>(masked.mask_flag[t]))
      throw EditError("mask flags disagree with spans at frame " + std::to_string(t));
  }
}

namespace {

/// Cuts source frames [cut_begin, cut_end), splices sum(durations) mask frames
/// in their place and re-masks [cut_begin - left, cut_begin + d + right).
EditPlan Splice(const Utterance& utt, TextEdit text, EditOp kind, int cut_begin, int cut_end,
                const std::vector<int>& durations, int left, int right, int expansion) {
  const int T = utt.num_frames();
  if (cut_begin < 0 || cut_end < cut_begin || cut_end > T)
    throw EditError("word frame span [" + std::to_string(cut_begin) + ", " + std::to_string(cut_end) +
                    ") outside utterance of " + std::to_string(T) + " frames");
  int d = 0;
  for (int x : durations) d += x;
  const int removed = cut_end - cut_begin;
  const int Tp = T - removed + d;
  if (Tp < 1) throw EditError("edit would leave no frames");

  EditPlan plan;
  plan.kind = kind;
  plan.expansion = expansion;
  plan.source_length = T;
  plan.inserted_frames = {cut_begin, cut_begin + d};

  FeatureMatrix values(Tp, kFeatureDim);
  const auto& y = utt.features.frames;
  values.topRows(cut_begin) = y.topRows(cut_begin);
  values.middleRows(cut_begin, d).rowwise() = MaskToken();
  values.bottomRows(T - cut_end) = y.bottomRows(T - cut_end);
  plan.provenance.resize(Tp);
  for (int t = 0; t < Tp; ++t)
    plan.provenance[t] = t < cut_begin ? t : t < cut_begin + d ? kMaskedFrame : t - d + removed;

  const MaskSpan span{std::max(0, cut_begin - left), std::min(Tp, cut_begin + d + right)};
  if (span.length() > 0) plan.spans.push_back(span);
  plan.masked = ApplyMask(values, plan.spans);
  for (const auto& s : plan.spans) {
    for (int t = s.start; t < s.end; ++t) plan.provenance[t] = kMaskedFrame;
    if (s.length() > kMaxSingleStepMask)
      plan.warnings.push_back("mask span [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                              ") is " + std::to_string(s.length()) + " frames, above " +
                              std::to_string(kMaxSingleStepMask) +
                              "; word-level generation is recommended");
  }

  std::size_t next_new = 0;
  int cursor = cut_begin;
  for (auto& w : text.words) {
    if (w.frames.begin < 0) {
      const int len = durations.at(next_new++);
      w.frames = {cursor, cursor + len};
      cursor += len;
    } else if (w.frames.begin >= cut_end && removed + d > 0) {
      w.frames.begin += d - removed;
      w.frames.end += d - removed;
    }
  }
  plan.words = std::move(text.words);
  plan.x_prime = std::move(text.phonemes);
  plan.edited_phonemes = text.edited_phonemes;
  return plan;
}

std::vector<int> WordDurations(const EditScript& script, const DurationModel& dm) {
  std::vector<int> out;
  for (const auto& w : script.words) out.push_back(dm.Predict(w.phonemes));
  return out;
}

void RequireFrames(const WordSpan& w) {
  if (w.frames.begin < 0 || w.frames.end < w.frames.begin)
    throw EditError("word '" + w.word + "' has no frame span");
}

}  // namespace

EditPlan PlanDelete(const Utterance& utt, const EditScript& script, int vocab_size, const EditOptions& opts,
                    const DurationModel* dm) {
  if (script.op != EditOp::kDelete) throw EditError("PlanDelete needs a delete script");
  if (opts.expansion < 0) throw EditError("expansion must be >= 0");
  TextEdit text = ApplyEditToText(utt, script, vocab_size);
  const WordSpan& target = utt.words[script.index];
  RequireFrames(target);
  int left = opts.expansion, right = opts.expansion;
  if (opts.duration_guided_delete) {
    if (!dm) throw EditError("duration-guided delete needs a duration model");
    left = right = 0;
    if (script.index > 0 && !utt.words[script.index - 1].phonemes.empty())
      left = static_cast<int>(std::lround(dm->Mean(utt.phonemes.ids[utt.words[script.index - 1].phonemes.end - 1])));
    if (script.index + 1 < utt.num_words() && !utt.words[script.index + 1].phonemes.empty())
      right = static_cast<int>(std::lround(dm->Mean(utt.phonemes.ids[utt.words[script.index + 1].phonemes.begin])));
  }
  const int cut = text.edited_phonemes.begin;
  const int M = text.phonemes.size();
  EditPlan plan = Splice(utt, std::move(text), EditOp::kDelete, target.frames.begin, target.frames.end, {}, left,
                         right, opts.expansion);
  // Phonemes on either side of the junction.
  plan.edited_phonemes = {std::max(0, cut - 1), std::min(M, cut + 1)};
  return plan;
}

EditPlan PlanReplace(const Utterance& utt, const EditScript& script, int vocab_size, const DurationModel& dm,
                     const EditOptions& opts) {
  if (script.op != EditOp::kReplace) throw EditError("PlanReplace needs a replace script");
  if (opts.expansion < 0) throw EditError("expansion must be >= 0");
  TextEdit text = ApplyEditToText(utt, script, vocab_size);
  const WordSpan& target = utt.words[script.index];
  RequireFrames(target);
  return Splice(utt, std::move(text), EditOp::kReplace, target.frames.begin, target.frames.end,
                WordDurations(script, dm), opts.expansion, opts.expansion, opts.expansion);
}

EditPlan PlanInsert(const Utterance& utt, const EditScript& script, int vocab_size, const DurationModel& dm,
                    const EditOptions& opts) {
  if (script.op != EditOp::kInsert) throw EditError("PlanInsert needs an insert script");
  if (opts.expansion < 0) throw EditError("expansion must be >= 0");
  TextEdit text = ApplyEditToText(utt, script, vocab_size);
  int b = 0;
  if (script.index < utt.num_words()) {
    RequireFrames(utt.words[script.index]);
    b = utt.words[script.index].frames.begin;
  } else if (!utt.words.empty()) {
    RequireFrames(utt.words.back());
    b = utt.words.back().frames.end;
  } else {
    b = utt.num_frames();
  }
  return Splice(utt, std::move(text), EditOp::kInsert, b, b, WordDurations(script, dm), opts.expansion,
                opts.expansion, opts.expansion);
}

EditPlan PlanEdit(const Utterance& utt, const EditScript& script, int vocab_size, const DurationModel& dm,
                  const EditOptions& opts) {
  switch (script.op) {
    case EditOp::kDelete: return PlanDelete(utt, script, vocab_size, opts, &dm);
    case EditOp::kReplace: return PlanReplace(utt, script, vocab_size, dm, opts);
    case EditOp::kInsert: return PlanInsert(utt, script, vocab_size, dm, opts);
  }
  throw EditError("unknown edit op");
}

std::vector<MaskSpan> MaskedRuns(const std::vector<int>& provenance) {
  std::vector<MaskSpan> runs;
  const int T = static_cast<int>(provenance.size());
  for (int t = 0; t < T;) {
    if (provenance[t] != kMaskedFrame) {
      ++t;
      continue;
    }
    int e = t;
    while (e < T && provenance[e] == kMaskedFrame) ++e;
    runs.push_back({t, e});
    t = e;
  }
  return runs;
}

namespace {

template <typename S>
std::pair<FeatureMatrix, EditStep> RunStep(const CampNetModel<S>& model, const EditPlan& plan) {
  EditStep step;
  step.length = plan.length();
  step.spans = plan.spans;
  step.warnings = plan.warnings;
  step.attention_mass = std::numeric_limits<double>::quiet_NaN();
  FeatureMatrix out = plan.masked.values;
  if (plan.spans.empty()) return {out, step};

  const DecoderOutputs<S> dec = Forward(plan.x_prime, plan.masked, model);
  const FeatureMatrix fine = dec.fine.template cast<float>();
  for (const auto& s : plan.spans) {
    out.middleRows(s.start, s.length()) = fine.middleRows(s.start, s.length());
    // The regressor is unbounded; keep generated frames inside the feature domain.
    out.col(kPitchCorrIndex).segment(s.start, s.length()) =
        out.col(kPitchCorrIndex).segment(s.start, s.length()).cwiseMax(0.0f).cwiseMin(1.0f);
  }
  step.coarse_passes = dec.coarse_passes;
  step.fine_passes = dec.fine_passes;
  if (!plan.edited_phonemes.empty()) {
    double mass = 0.0;
    int frames = 0;
    for (const auto& s : plan.spans) {
      mass += ExtractAlignment(dec, s, plan.edited_phonemes) * s.length();
      frames += s.length();
    }
    step.attention_mass = mass / frames;
  }
  for (const auto& block : dec.attention) {
    std::vector<Matrix<float>> heads;
    for (const auto& h : block) heads.push_back(h.template cast<float>());
    step.attention.push_back(std::move(heads));
  }
  return {out, std::move(step)};
}

Utterance Rebuild(const Utterance& source, const EditPlan& plan, FeatureMatrix frames) {
  Utterance u;
  u.id = source.id;
  u.speaker = source.speaker;
  u.phonemes = plan.x_prime;
  u.words = plan.words;
  u.features.frames = std::move(frames);
  u.features.hop_ms = source.features.hop_ms;
  return u;
}

}  // namespace

template <typename S>
EditResult EditOneStep(const CampNetModel<S>& model, const Utterance& source, const EditPlan& plan) {
  plan.Validate();
  if (plan.source_length != source.num_frames()) throw EditError("plan was built for a different utterance");
  auto [frames, step] = RunStep(model, plan);
  EditResult result;
  result.utterance = Rebuild(source, plan, std::move(frames));
  result.provenance = plan.provenance;
  result.generated = MaskedRuns(result.provenance);
  result.warnings = plan.warnings;
  step.iteration = 1;
  result.steps.push_back(std::move(step));
  return result;
}

template <typename S>
EditResult EditWordLevel(const CampNetModel<S>& model, const Utterance& utt, const EditScript& script,
                         const DurationModel& dm, const EditOptions& opts) {
  const int vocab = model.config().vocab_size;
  script.Validate(utt.num_words(), vocab);

  std::vector<EditScript> singles;
  if (script.op == EditOp::kDelete) {
    singles.push_back(script);
  } else {
    for (std::size_t i = 0; i < script.words.size(); ++i) {
      EditScript s;
      s.words = {script.words[i]};
      // The first word of a replace takes the target's place; every later
      // word goes in right after the previous one.
      s.op = script.op == EditOp::kReplace && i == 0 ? EditOp::kReplace : EditOp::kInsert;
      s.index = script.index + static_cast<int>(i);
      singles.push_back(std::move(s));
    }
  }

  EditResult result;
  Utterance current = utt;
  std::vector<int> provenance(utt.num_frames());
  for (int t = 0; t < utt.num_frames(); ++t) provenance[t] = t;

  for (std::size_t i = 0; i < singles.size(); ++i) {
    const std::string where = "word-level iteration " + std::to_string(i + 1) + ": ";
    try {
      const EditPlan plan = PlanEdit(current, singles[i], vocab, dm, opts);
      auto [frames, step] = RunStep(model, plan);
      step.iteration = static_cast<int>(i) + 1;
      step.word = singles[i].words.empty() ? utt.words[script.index].word : singles[i].words[0].word;
      std::vector<int> composed(plan.length());
      for (int t = 0; t < plan.length(); ++t)
        composed[t] = plan.provenance[t] == kMaskedFrame ? kMaskedFrame : provenance[plan.provenance[t]];
      provenance = std::move(composed);
      for (const auto& w : plan.warnings) result.warnings.push_back(where + w);
      current = Rebuild(current, plan, std::move(frames));
      result.steps.push_back(std::move(step));
    } catch (const EditError& e) {
      throw EditError(where + e.what());
    } catch (const ModelError& e) {
      throw ModelError(where + e.what());
    }
  }
  result.utterance = std::move(current);
  result.provenance = std::move(provenance);
  result.generated = MaskedRuns(result.provenance);
  return result;
}

std::string ProvenanceToJson(const EditResult& result, const EditScript& script) {
  using nlohmann::json;
  auto spans = [](const std::vector<MaskSpan>& v) {
    json a = json::array();
    for (const auto& s : v) a.push_back({s.start, s.end});
    return a;
  };
  json tags = json::array();
  for (int p : result.provenance)
    tags.push_back(p == kMaskedFrame ? std::string("masked") : "original@" + std::to_string(p));
  json steps = json::array();
  for (const auto& s : result.steps) {
    steps.push_back({{"iteration", s.iteration},
                     {"word", s.word},
                     {"length", s.length},
                     {"spans", spans(s.spans)},
                     {"coarse_passes", s.coarse_passes},
                     {"fine_passes", s.fine_passes},
                     {"attention_mass", std::isfinite(s.attention_mass) ? json(s.attention_mass) : json()},
                     {"warnings", s.warnings}});
  }
  return json{{"id", result.utterance.id},
              {"script", json::parse(EditScriptToJson(script))},
              {"length", result.utterance.num_frames()},
              {"generated", spans(result.generated)},
              {"provenance", tags},
              {"steps", steps},
              {"warnings", result.warnings}}
      .dump(2);
}

template EditResult EditOneStep<float>(const CampNetModel<float>&, const Utterance&, const EditPlan&);
template EditResult EditOneStep<double>(const CampNetModel<double>&, const Utterance&, const EditPlan&);
template EditResult EditWordLevel<float>(const CampNetModel<float>&, const Utterance&, const EditScript&,
                                         const DurationModel&, const EditOptions&);
template EditResult EditWordLevel<double>(const CampNetModel<double>&, const Utterance&, const EditScript&,
                                          const DurationModel&, const EditOptions&);

}  // namespace campnet
