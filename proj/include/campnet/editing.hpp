// include/campnet/editing.hpp

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

#include <span>
#include <string>
#include <vector>

#include "campnet/corpus.hpp"
#include "campnet/frontend.hpp"
#include "campnet/masking.hpp"
#include "campnet/model.hpp"

namespace campnet {

/// Longest mask a single inference step is trusted with (1.5 s at 10 ms hops).
inline constexpr int kMaxSingleStepMask = 150;
inline constexpr int kDefaultExpansion = 5;

/// Per-phoneme mean durations in frames.
struct DurationModel {
  std::vector<double> means;  // indexed by phoneme id; <= 0 means unseen
  double global_mean = 1.0;
  /// Mean gap between consecutive words; 0 for corpora whose words tile the
  /// utterance.
  double pause_mean = 0.0;

  /// Splits every word's frame span evenly over its phonemes and averages per id.
  static DurationModel Fit(std::span<const Utterance> utts, int vocab_size);

  /// Mean for one phoneme, falling back to the global mean for unseen ids.
  double Mean(int id) const;
  /// Rounded sum of phoneme means, at least 1. Throws EditError on an empty list.
  int Predict(const std::vector<int>& phonemes) const;
  void Validate() const;
};

struct EditOptions {
  /// Frames re-masked on each side of the edited region.
  int expansion = kDefaultExpansion;
  /// Delete only: size the junction re-mask from the mean durations of the
  /// neighbouring word-final and word-initial phonemes instead of `expansion`.
  bool duration_guided_delete = false;
};

/// Where a frame of an edited sequence comes from.
inline constexpr int kMaskedFrame = -1;

struct EditPlan {
  EditOp kind = EditOp::kReplace;
  PhonemeSequence x_prime;
  /// Word list of x' with frame spans in the edited timeline.
  std::vector<WordSpan> words;
  MaskedFeatures masked;
  std::vector<MaskSpan> spans;
  int expansion = 0;
  /// Per output frame: index into the source sequence, or kMaskedFrame.
  std::vector<int> provenance;
  /// Phonemes of x' the masked region should attend to.
  Range edited_phonemes;
  /// Frames spliced in for new words (empty for delete).
  Range inserted_frames;
  int source_length = 0;
  std::vector<std::string> warnings;

  int length() const { return static_cast<int>(provenance.size()); }
  /// Throws EditError if provenance, spans and masked values disagree.
  void Validate() const;
};

EditPlan PlanDelete(const Utterance& utt, const EditScript& script, int vocab_size,
                    const EditOptions& opts = {}, const DurationModel* dm = nullptr);
EditPlan PlanReplace(const Utterance& utt, const EditScript& script, int vocab_size,
                     const DurationModel& dm, const EditOptions& opts = {});
EditPlan PlanInsert(const Utterance& utt, const EditScript& script, int vocab_size,
                    const DurationModel& dm, const EditOptions& opts = {});
EditPlan PlanEdit(const Utterance& utt, const EditScript& script, int vocab_size,
                  const DurationModel& dm, const EditOptions& opts = {});

/// Diagnostics of one inference step.
struct EditStep {
  int iteration = 0;
  std::string word;
  int length = 0;
  std::vector<MaskSpan> spans;
  int coarse_passes = 0;
  int fine_passes = 0;
  /// Mean cross-attention mass of masked frames on the edited phonemes,
  /// NaN when nothing was masked.
  double attention_mass = 0.0;
  AttentionMaps<float> attention;
  std::vector<std::string> warnings;
};

struct EditResult {
  /// Edited utterance: new features, x' and updated word spans.
  Utterance utterance;
  /// Per output frame: index into the original utterance or kMaskedFrame.
  std::vector<int> provenance;
  /// Maximal runs of generated frames in the output timeline.
  std::vector<MaskSpan> generated;
  std::vector<EditStep> steps;
  std::vector<std::string> warnings;
};

/// Runs the model on x' and the plan's masked input, then pastes the fine
/// prediction into every span. Frames outside the spans are left untouched.
template <typename S>
EditResult EditOneStep(const CampNetModel<S>& model, const Utterance& source, const EditPlan& plan);

/// One single-word plan and inference step per new word, each against the
/// previous iteration's output. Deletes take one iteration.
template <typename S>
EditResult EditWordLevel(const CampNetModel<S>& model, const Utterance& utt, const EditScript& script,
                         const DurationModel& dm, const EditOptions& opts = {});

/// Maximal runs of kMaskedFrame in a provenance vector.
std::vector<MaskSpan> MaskedRuns(const std::vector<int>& provenance);

/// Sidecar describing an edit: spans, per-frame tags and per-step diagnostics.
std::string ProvenanceToJson(const EditResult& result, const EditScript& script);

}  // namespace campnet
