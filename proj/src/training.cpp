// src/training.cpp

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

#include "campnet/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "campnet/metrics.hpp"

namespace campnet {

void TrainConfig::Validate() const {
  if (!(lr > 0.0)) throw TrainError("learning rate must be positive");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw TrainError("mask ratio must lie in (0, 1)");
  if (batch_size < 1) throw TrainError("batch size must be >= 1");
  if (steps < 0) throw TrainError("steps must be >= 0");
}

FeatureMatrix BuildTarget(const FeatureMatrix& y, const MaskSpan& span) {
  span.Validate(static_cast<int>(y.rows()));
  FeatureMatrix target = FeatureMatrix::Zero(y.rows(), kFeatureDim);
  target.rowwise() += MaskToken();
  target.middleRows(span.start, span.length()) = y.middleRows(span.start, span.length());
  return target;
}

template <typename S>
LossReport Loss(const DecoderOutputs<S>& outputs, const FeatureMatrix& target, double coarse_weight,
                double fine_weight) {
  if (outputs.coarse.rows() != target.rows() || outputs.fine.rows() != target.rows() ||
      outputs.coarse.cols() != kFeatureDim || outputs.fine.cols() != kFeatureDim)
    throw TrainError("loss shape mismatch");
  const Matrix<double> t = target.cast<double>();
  LossReport r;
  r.coarse_term = coarse_weight * (outputs.coarse.template cast<double>() - t).cwiseAbs().mean();
  r.fine_term = fine_weight * (outputs.fine.template cast<double>() - t).cwiseAbs().mean();
  r.total = r.coarse_term + r.fine_term;
  return r;
}

template <typename S>
void Adam<S>::Step(CampNetModel<S>& model) {
  auto& params = model.params();
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Matrix<S>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix<S>::Zero(p.value.rows(), p.value.cols()));
    }
  }
  ++t_;
  const S b1 = S(cfg_.beta1), b2 = S(cfg_.beta2);
  const S c1 = S(1) - S(std::pow(cfg_.beta1, static_cast<double>(t_)));
  const S c2 = S(1) - S(std::pow(cfg_.beta2, static_cast<double>(t_)));
  const S lr = S(cfg_.lr), eps = S(cfg_.adam_eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable || !p.has_grad()) continue;
    m_[i] = b1 * m_[i] + (S(1) - b1) * p.grad;
    v_[i] = b2 * v_[i] + (S(1) - b2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
  }
}

template <typename S>
double ClipGradNorm(CampNetModel<S>& model, double max_norm) {
  double sq = 0.0;
  for (const auto& p : model.params())
    if (p.has_grad()) sq += p.grad.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const S scale = S(max_norm / norm);
    for (auto& p : model.params())
      if (p.has_grad()) p.grad *= scale;
  }
  return norm;
}

std::vector<LossReport> TrainResult::LossCurve() const {
  std::vector<LossReport> curve;
  for (const auto& s : steps) curve.push_back(s.loss);
  return curve;
}

double TrainResult::FinalLoss() const {
  if (steps.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = std::max<std::size_t>(1, steps.size() / 10);
  double sum = 0.0;
  for (std::size_t i = steps.size() - n; i < steps.size(); ++i) sum += steps[i].loss.total;
  return sum / static_cast<double>(n);
}

namespace {

struct BatchEntry {
  const Utterance* utt;
  MaskSpan span;
};

using Sampler = std::function<std::vector<BatchEntry>(Rng&)>;

template <typename S>
TrainResult RunSteps(CampNetModel<S>& model, const TrainConfig& cfg, int steps,
                     const std::set<ParamGroup>& frozen, const Sampler& sample,
                     const StepCallback& on_step) {
  cfg.Validate();
  TrainResult result;
  Rng rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0x5deece66dULL);
  Adam<S> adam(cfg);
  ForwardOptions options;
  options.training = true;
  options.dropout_rng = &dropout_rng;
  options.frozen = frozen;

  for (int step = 0; step < steps; ++step) {
    const std::vector<BatchEntry> batch = sample(rng);
    std::vector<MaskedFeatures> masked;
    masked.reserve(batch.size());
    std::vector<ForwardItem> items;
    int rows = 0;
    for (const auto& e : batch) {
      masked.push_back(ApplyMask(e.utt->features, {e.span}));
      rows += e.utt->num_frames();
    }
    Matrix<S> target(rows, kFeatureDim);
    std::vector<S> weights;
    StepRecord record;
    for (std::size_t i = 0, r = 0; i < batch.size(); ++i) {
      items.push_back({&batch[i].utt->phonemes, &masked[i]});
      const int T = batch[i].utt->num_frames();
      target.middleRows(r, T) = BuildTarget(batch[i].utt->features.frames, batch[i].span).template cast<S>();
      for (int t = 0; t < T; ++t) weights.push_back(!cfg.mask_only_loss || batch[i].span.contains(t) ? S(1) : S(0));
      r += T;
      record.spans.push_back(batch[i].span);
      record.loss.masked_frame_count += batch[i].span.length();
    }

    ad::Tape<S> tape;
    const ForwardGraph<S> graph = ForwardBatch(tape, model, std::span<const ForwardItem>(items), options);
    if (cfg.mask_only_loss == false) weights.clear();
    auto coarse = ad::MeanAbsError(graph.coarse, target, weights);
    auto fine = ad::MeanAbsError(graph.fine, target, weights);
    auto total = ad::Add(ad::Scale(coarse, S(cfg.coarse_weight)), ad::Scale(fine, S(cfg.fine_weight)));
    record.loss.coarse_term = cfg.coarse_weight * static_cast<double>(coarse.value()(0, 0));
    record.loss.fine_term = cfg.fine_weight * static_cast<double>(fine.value()(0, 0));
    record.loss.total = record.loss.coarse_term + record.loss.fine_term;
    if (!std::isfinite(record.loss.total))
      throw TrainError("loss diverged at step " + std::to_string(step));

    tape.Backward(total);
    model.ZeroGrad();
    AccumulateGrads(model, tape, graph);
    const double norm = ClipGradNorm(model, cfg.clip_norm);
    if (!std::isfinite(norm)) throw TrainError("non-finite gradient at step " + std::to_string(step));
    adam.Step(model);
    model.UpdateRunningStats(graph.bn_stats);

    if (on_step) on_step(step, record);
    result.steps.push_back(std::move(record));
  }
  model.ZeroGrad();
  return result;
}

/// Epoch-wise shuffled batches with one fresh span per item.
Sampler EpochSampler(std::span<const Utterance> pool, int batch_size, double ratio) {
  auto order = std::make_shared<std::vector<std::size_t>>();
  auto cursor = std::make_shared<std::size_t>(0);
  return [pool, batch_size, ratio, order, cursor](Rng& rng) {
    std::vector<BatchEntry> batch;
    const int n = std::min<int>(batch_size, static_cast<int>(pool.size()));
    for (int i = 0; i < n; ++i) {
      if (*cursor == order->size()) {
        order->resize(pool.size());
        std::iota(order->begin(), order->end(), std::size_t{0});
        std::shuffle(order->begin(), order->end(), rng);
        *cursor = 0;
      }
      const Utterance& u = pool[(*order)[(*cursor)++]];
      batch.push_back({&u, SampleMaskSpan(u.num_frames(), ratio, rng)});
    }
    return batch;
  };
}

}  // namespace

template <typename S>
TrainResult Train(CampNetModel<S>& model, std::span<const Utterance> corpus, const TrainConfig& cfg,
                  const StepCallback& on_step) {
  if (corpus.empty()) throw TrainError("training corpus is empty");
  return RunSteps(model, cfg, cfg.steps, {}, EpochSampler(corpus, cfg.batch_size, cfg.mask_ratio), on_step);
}

template <typename S>
std::vector<SweepRow> MaskRatioSweep(const CampNetModel<S>& initial, std::span<const Utterance> corpus,
                                     const std::vector<double>& ratios, const TrainConfig& cfg,
                                     std::vector<CampNetModel<S>>* trained) {
  std::vector<SweepRow> rows;
  if (trained) trained->clear();
  for (double ratio : ratios) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw TrainError("sweep ratios must lie in (0, 1)");
    TrainConfig c = cfg;
    c.mask_ratio = ratio;
    CampNetModel<S> model = initial;
    SweepRow row;
    row.ratio = ratio;
    row.result = Train(model, corpus, c);
    row.final_loss = row.result.FinalLoss();
    rows.push_back(std::move(row));
    if (trained) trained->push_back(std::move(model));
  }
  return rows;
}

template <typename S>
TrainResult AdaptFewShot(CampNetModel<S>& model, std::span<const Utterance> speaker_utts,
                         const AdaptConfig& cfg) {
  if (speaker_utts.empty()) throw AdaptError("adaptation set is empty");
  if (cfg.epochs < 0) throw AdaptError("epochs must be >= 0");
  const int n = static_cast<int>(speaker_utts.size());
  const int per_epoch = (n + cfg.train.batch_size - 1) / cfg.train.batch_size;
  return RunSteps(model, cfg.train, cfg.epochs * per_epoch, {ParamGroup::kEncoder},
                  EpochSampler(speaker_utts, cfg.train.batch_size, cfg.train.mask_ratio), {});
}

int OneShotStepsPerEpoch(double mask_ratio) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw AdaptError("mask ratio must lie in (0, 1)");
  return static_cast<int>(std::ceil(1.0 / mask_ratio - 1e-12));
}

template <typename S>
TrainResult AdaptOneShot(CampNetModel<S>& model, const Utterance& utt, const AdaptConfig& cfg,
                         Rng* span_rng) {
  if (cfg.epochs < 0) throw AdaptError("epochs must be >= 0");
  const int steps = cfg.epochs * OneShotStepsPerEpoch(cfg.train.mask_ratio);
  const double ratio = cfg.train.mask_ratio;
  const int batch_size = cfg.train.batch_size;
  Sampler sampler = [&utt, ratio, batch_size, span_rng](Rng& rng) {
    Rng& source = span_rng ? *span_rng : rng;
    std::vector<BatchEntry> batch;
    for (int i = 0; i < batch_size; ++i)
      batch.push_back({&utt, SampleMaskSpan(utt.num_frames(), ratio, source)});
    return batch;
  };
  return RunSteps(model, cfg.train, steps, {ParamGroup::kEncoder}, sampler, {});
}

double MaskedRegionMcd(const FeatureMatrix& ref, const FeatureMatrix& pred, const MaskSpan& span) {
  span.Validate(static_cast<int>(ref.rows()));
  if (pred.rows() != ref.rows()) throw MetricError("masked-region MCD length mismatch");
  double sum = 0.0;
  for (int t = span.start; t < span.end; ++t) sum += FrameMcd(ref.row(t), pred.row(t));
  return sum / span.length();
}

std::vector<MaskSpan> SampleEvalSpans(std::span<const Utterance> utts, double ratio, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<MaskSpan> spans;
  for (const auto& u : utts) spans.push_back(SampleMaskSpan(u.num_frames(), ratio, rng));
  return spans;
}

template <typename S>
ReconstructionScore ScoreReconstruction(const CampNetModel<S>& model, std::span<const Utterance> utts,
                                        const std::vector<MaskSpan>& spans) {
  if (spans.size() != utts.size()) throw TrainError("one span per utterance required");
  ReconstructionScore score;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    const auto& u = utts[i];
    const MaskSpan& span = spans[i];
    const MaskedFeatures masked = ApplyMask(u.features, {span});
    const DecoderOutputs<S> out = Forward(u.phonemes, masked, model);
    const FeatureMatrix fine = out.fine.template cast<float>();
    const FeatureMatrix coarse = out.coarse.template cast<float>();
    const auto ref = u.features.frames.middleRows(span.start, span.length()).template cast<double>();
    score.mae_fine += (fine.middleRows(span.start, span.length()).cast<double>() - ref).cwiseAbs().mean();
    score.mae_coarse += (coarse.middleRows(span.start, span.length()).cast<double>() - ref).cwiseAbs().mean();
    score.mcd_fine += MaskedRegionMcd(u.features.frames, fine, span);
    score.mcd_coarse += MaskedRegionMcd(u.features.frames, coarse, span);
    score.mcd_zero += MaskedRegionMcd(u.features.frames, masked.values, span);
    ++score.utterances;
  }
  if (score.utterances > 0) {
    const double n = score.utterances;
    score.mae_fine /= n;
    score.mae_coarse /= n;
    score.mcd_fine /= n;
    score.mcd_coarse /= n;
    score.mcd_zero /= n;
  }
  return score;
}

void WriteLossCsv(const TrainResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,total,coarse,fine\n";
  out.precision(9);
  for (std::size_t i = 0; i < result.steps.size(); ++i) {
    const auto& l = result.steps[i].loss;
    out << i << ',' << l.total << ',' << l.coarse_term << ',' << l.fine_term << '\n';
  }
}

#define CAMPNET_INSTANTIATE(S)                                                                         \
  template LossReport Loss<S>(const DecoderOutputs<S>&, const FeatureMatrix&, double, double);        \
  template class Adam<S>;                                                                              \
  template double ClipGradNorm<S>(CampNetModel<S>&, double);                                           \
  template TrainResult Train<S>(CampNetModel<S>&, std::span<const Utterance>, const TrainConfig&,      \
                                const StepCallback&);                                                  \
  template std::vector<SweepRow> MaskRatioSweep<S>(const CampNetModel<S>&, std::span<const Utterance>, \
                                                   const std::vector<double>&, const TrainConfig&,     \
                                                   std::vector<CampNetModel<S>>*);                     \
  template TrainResult AdaptFewShot<S>(CampNetModel<S>&, std::span<const Utterance>, const AdaptConfig&); \
  template TrainResult AdaptOneShot<S>(CampNetModel<S>&, const Utterance&, const AdaptConfig&, Rng*);  \
  template ReconstructionScore ScoreReconstruction<S>(const CampNetModel<S>&, std::span<const Utterance>, \
                                                      const std::vector<MaskSpan>&);

CAMPNET_INSTANTIATE(float)
CAMPNET_INSTANTIATE(double)

#undef CAMPNET_INSTANTIATE

}  // namespace campnet
