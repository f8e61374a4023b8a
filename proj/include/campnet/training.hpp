// include/campnet/training.hpp

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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <span>
#include <vector>

#include "campnet/corpus.hpp"
#include "campnet/masking.hpp"
#include "campnet/model.hpp"

namespace campnet {

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 16;
  int steps = 0;
  double mask_ratio = 0.12;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 1.0;
  double coarse_weight = 1.0;
  double fine_weight = 1.0;
  /// Restrict the loss to masked frames instead of the whole sequence.
  bool mask_only_loss = false;
  std::uint64_t seed = 1;

  void Validate() const;
};

struct LossReport {
  double total = 0.0;
  double coarse_term = 0.0;
  double fine_term = 0.0;
  int masked_frame_count = 0;
};

/// y inside `span`, mask token (zeros) elsewhere. Both decoders share it.
FeatureMatrix BuildTarget(const FeatureMatrix& y, const MaskSpan& span);

/// Mean absolute error of each decoder against `target`.
template <typename S>
LossReport Loss(const DecoderOutputs<S>& outputs, const FeatureMatrix& target,
                double coarse_weight = 1.0, double fine_weight = 1.0);

/// Adaptive-moment optimizer state over a model's trainable parameters.
template <typename S>
class Adam {
 public:
  explicit Adam(const TrainConfig& cfg) : cfg_(cfg) {}
  /// Applies one update to every trainable parameter that carries a gradient.
  void Step(CampNetModel<S>& model);
  long steps() const { return t_; }

 private:
  TrainConfig cfg_;
  long t_ = 0;
  std::vector<Matrix<S>> m_, v_;
};

/// Global L2 norm of all gradients; scales them to `max_norm` when above it.
/// Returns the norm before clipping.
template <typename S>
double ClipGradNorm(CampNetModel<S>& model, double max_norm);

struct StepRecord {
  LossReport loss;
  std::vector<MaskSpan> spans;  // one per batch item
};

struct TrainResult {
  std::vector<StepRecord> steps;

  std::vector<LossReport> LossCurve() const;
  /// Mean total loss over the last tenth of the run (at least one step).
  double FinalLoss() const;
};

using StepCallback = std::function<void(int step, const StepRecord&)>;

/// Masked-infilling training: each step samples a batch, one mask span per
/// utterance, and applies one optimizer update. Deterministic for a seed.
template <typename S>
TrainResult Train(CampNetModel<S>& model, std::span<const Utterance> corpus, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

struct SweepRow {
  double ratio = 0.0;
  double final_loss = 0.0;
  TrainResult result;
};

/// Trains one copy of `initial` per ratio with shared seed and step count.
template <typename S>
std::vector<SweepRow> MaskRatioSweep(const CampNetModel<S>& initial, std::span<const Utterance> corpus,
                                     const std::vector<double>& ratios, const TrainConfig& cfg,
                                     std::vector<CampNetModel<S>>* trained = nullptr);

struct AdaptConfig {
  TrainConfig train;
  int epochs = 5;
};

/// Fine-tunes prenet and decoders on a speaker's utterances; the encoder is
/// frozen. One epoch is ceil(N / batch_size) steps.
template <typename S>
TrainResult AdaptFewShot(CampNetModel<S>& model, std::span<const Utterance> speaker_utts,
                         const AdaptConfig& cfg);

/// Fine-tunes on a single utterance; every batch item draws a fresh mask span.
/// One epoch is ceil(1 / mask_ratio) steps.
template <typename S>
TrainResult AdaptOneShot(CampNetModel<S>& model, const Utterance& utt, const AdaptConfig& cfg,
                         Rng* span_rng = nullptr);

int OneShotStepsPerEpoch(double mask_ratio);

/// Masked-region reconstruction quality over a set of utterances.
struct ReconstructionScore {
  double mae_fine = 0.0;
  double mae_coarse = 0.0;
  double mcd_fine = 0.0;
  double mcd_coarse = 0.0;
  double mcd_zero = 0.0;  // predicting the mask token itself
  int utterances = 0;
};

/// Frame-aligned MCD averaged over the rows of `span`.
double MaskedRegionMcd(const FeatureMatrix& ref, const FeatureMatrix& pred, const MaskSpan& span);

/// One span per utterance, sampled with `seed` at `ratio`.
std::vector<MaskSpan> SampleEvalSpans(std::span<const Utterance> utts, double ratio, std::uint64_t seed);

template <typename S>
ReconstructionScore ScoreReconstruction(const CampNetModel<S>& model, std::span<const Utterance> utts,
                                        const std::vector<MaskSpan>& spans);

/// step,total,coarse,fine
void WriteLossCsv(const TrainResult& result, const std::filesystem::path& path);

}  // namespace campnet
