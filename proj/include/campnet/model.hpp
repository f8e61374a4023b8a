// include/campnet/model.hpp

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
#include <set>
#include <span>
#include <string>
#include <vector>

#include "campnet/autodiff.hpp"
#include "campnet/corpus.hpp"
#include "campnet/masking.hpp"

namespace campnet {

struct ModelConfig {
  int vocab_size = 0;
  int hidden_dim = 256;
  int encoder_blocks = 3;
  int coarse_blocks = 6;
  int fine_blocks = 3;
  int conv_layers = 3;
  int conv_channels = 256;
  int conv_kernel = 5;
  int phoneme_embed_dim = 256;
  int heads = 4;
  int ffn_dim = 1024;
  double dropout = 0.1;
  int feature_dim = kFeatureDim;
  /// Prenet positions advance by M/T per frame so frame t and phoneme
  /// t*M/T share an encoding; off means one step per frame.
  bool phoneme_rate_positions = true;
  /// Adds a learned row to masked frames at the fine decoder input so it can
  /// tell regenerated frames from context.
  bool fine_mask_embedding = true;

  /// Throws ModelError on an inconsistent configuration.
  void Validate() const;

  /// Desk-scale configuration used by the synthetic experiments: same block
  /// structure, narrower layers.
  static ModelConfig Toy(int vocab_size);

  std::string ToJson() const;
  static ModelConfig FromJson(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

using ad::ParamGroup;

/// CampNet parameters. Every entry belongs to exactly one group: encoder
/// (phoneme embedding, conv stack, text transformer), prenet (frame projection
/// and mask embedding) or decoder (coarse and fine stacks, output projections).
template <typename S>
class CampNetModel {
 public:
  CampNetModel() = default;
  CampNetModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<ad::Parameter<S>>& params() { return params_; }
  const std::vector<ad::Parameter<S>>& params() const { return params_; }

  const ad::Parameter<S>& param(const std::string& name) const;
  std::size_t Index(const std::string& name) const;

  void ZeroGrad();
  /// Exponential update of batch-norm running statistics.
  void UpdateRunningStats(const std::vector<ad::BatchStats<S>>& stats, S momentum = S(0.1));

  /// Number of trainable scalars.
  std::size_t ParameterCount() const;

  struct LinearIdx {
    std::size_t weight = 0, bias = 0;
  };
  struct NormIdx {
    std::size_t gain = 0, bias = 0;
  };
  struct AttentionIdx {
    NormIdx norm;
    LinearIdx q, k, v, out;
  };
  struct BlockIdx {
    AttentionIdx self;
    bool has_cross = false;
    AttentionIdx cross;
    NormIdx ffn_norm;
    LinearIdx ffn_in, ffn_out;
  };
  struct ConvIdx {
    LinearIdx conv;
    NormIdx bn;
    std::size_t running_mean = 0, running_var = 0;
  };
  struct Layout {
    std::size_t embedding = 0;
    std::vector<ConvIdx> convs;
    LinearIdx encoder_proj;
    std::vector<BlockIdx> encoder;
    NormIdx encoder_norm;

    LinearIdx prenet1, prenet2;
    std::size_t mask_embedding = 0;

    std::vector<BlockIdx> coarse;
    NormIdx coarse_norm;
    LinearIdx coarse_out;
    LinearIdx fine_in;
    /// Valid only when the config enables it.
    std::size_t fine_mask_embedding = 0;
    std::vector<BlockIdx> fine;
    NormIdx fine_norm;
    LinearIdx fine_out;
  };
  const Layout& layout() const { return layout_; }

  void Save(const std::filesystem::path& path) const;
  static CampNetModel Load(const std::filesystem::path& path);

 private:
  std::size_t Add(std::string name, ParamGroup group, Matrix<S> value, bool trainable = true);
  LinearIdx AddLinear(const std::string& name, ParamGroup group, int in, int out, Rng& rng);
  NormIdx AddNorm(const std::string& name, ParamGroup group, int dim);
  AttentionIdx AddAttention(const std::string& name, ParamGroup group, Rng& rng);
  BlockIdx AddBlock(const std::string& name, ParamGroup group, bool cross, Rng& rng);

  ModelConfig config_;
  std::vector<ad::Parameter<S>> params_;
  Layout layout_;
};

/// One utterance of a batch.
struct ForwardItem {
  const PhonemeSequence* phonemes = nullptr;
  const MaskedFeatures* masked = nullptr;
};

struct ForwardOptions {
  bool training = false;
  /// Dropout is active only in training mode with a non-null rng.
  Rng* dropout_rng = nullptr;
  /// Parameters of these groups enter the graph as constants.
  std::set<ParamGroup> frozen;
};

/// Handles into a recorded forward pass over a row-stacked batch.
template <typename S>
struct ForwardGraph {
  ad::Var<S> text;        // sum(M) x hidden
  ad::Var<S> prenet;      // sum(T) x hidden
  ad::Var<S> coarse;      // sum(T) x 32
  ad::Var<S> fine_input;  // coarse + masked input
  ad::Var<S> fine;        // sum(T) x 32
  ad::Segments frame_segments;
  ad::Segments phoneme_segments;
  /// Cross-attention weights: [coarse block][batch item][head] (T x M).
  std::vector<std::vector<ad::HeadWeights<S>>> cross_attention;
  std::vector<ad::BatchStats<S>> bn_stats;
  /// Tape variable of each parameter, or -1 when it entered as a constant.
  std::vector<int> param_vars;
  int coarse_passes = 0;
  int fine_passes = 0;
};

template <typename S>
ForwardGraph<S> ForwardBatch(ad::Tape<S>& tape, const CampNetModel<S>& model,
                             std::span<const ForwardItem> batch, const ForwardOptions& options = {});

/// Adds the gradients recorded on `tape` for `graph`'s parameters into Parameter::grad.
template <typename S>
void AccumulateGrads(CampNetModel<S>& model, ad::Tape<S>& tape, const ForwardGraph<S>& graph);

/// T x M cross-attention weights, one per coarse block and head.
template <typename S>
using AttentionMaps = std::vector<std::vector<Matrix<S>>>;

template <typename S>
struct DecoderOutputs {
  Matrix<S> coarse;
  Matrix<S> fine;
  AttentionMaps<S> attention;
  int coarse_passes = 0;
  int fine_passes = 0;
};

// Single-utterance inference (eval mode, no dropout, running batch-norm statistics).
template <typename S>
Matrix<S> Encode(const PhonemeSequence& phonemes, const CampNetModel<S>& model);
// `phoneme_count` is required when the config uses phoneme-rate positions.
template <typename S>
Matrix<S> Prenet(const MaskedFeatures& masked, const CampNetModel<S>& model, int phoneme_count = 0);
template <typename S>
std::pair<Matrix<S>, AttentionMaps<S>> CoarseDecode(const Matrix<S>& prenet, const Matrix<S>& text,
                                                    const CampNetModel<S>& model);
template <typename S>
Matrix<S> FineDecode(const Matrix<S>& coarse, const MaskedFeatures& masked,
                     const CampNetModel<S>& model);
template <typename S>
DecoderOutputs<S> Forward(const PhonemeSequence& phonemes, const MaskedFeatures& masked,
                          const CampNetModel<S>& model);

/// Mean attention mass that queries inside `span` put on phoneme columns
/// `edited`, averaged over the heads of the last coarse block.
template <typename S>
double ExtractAlignment(const DecoderOutputs<S>& outputs, const MaskSpan& span, const Range& edited);

/// Fixed sinusoidal position table; row t encodes position t*step.
template <typename S>
Matrix<S> SinusoidalPositions(int length, int dim, double step = 1.0);

}  // namespace campnet
