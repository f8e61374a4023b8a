// src/model.cpp

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

#include "campnet/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace campnet {

using nlohmann::json;

void ModelConfig::Validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw ModelError(std::string(what) + " must be >= 1");
  };
  positive(vocab_size, "vocab_size");
  positive(hidden_dim, "hidden_dim");
  positive(encoder_blocks, "encoder_blocks");
  positive(coarse_blocks, "coarse_blocks");
  positive(fine_blocks, "fine_blocks");
  positive(conv_layers, "conv_layers");
  positive(conv_channels, "conv_channels");
  positive(conv_kernel, "conv_kernel");
  positive(phoneme_embed_dim, "phoneme_embed_dim");
  positive(heads, "heads");
  positive(ffn_dim, "ffn_dim");
  if (hidden_dim % heads != 0) throw ModelError("hidden_dim must be divisible by heads");
  if (conv_kernel % 2 == 0) throw ModelError("conv_kernel must be odd");
  if (dropout < 0.0 || dropout >= 1.0) throw ModelError("dropout must lie in [0, 1)");
  if (feature_dim != kFeatureDim) throw ModelError("feature_dim must be 32");
}

ModelConfig ModelConfig::Toy(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.hidden_dim = 64;
  c.conv_channels = 64;
  c.phoneme_embed_dim = 64;
  c.ffn_dim = 128;
  c.heads = 4;
  c.dropout = 0.0;
  return c;
}

std::string ModelConfig::ToJson() const {
  return json{{"vocab_size", vocab_size},           {"hidden_dim", hidden_dim},
              {"encoder_blocks", encoder_blocks},   {"coarse_blocks", coarse_blocks},
              {"fine_blocks", fine_blocks},         {"conv_layers", conv_layers},
              {"conv_channels", conv_channels},     {"conv_kernel", conv_kernel},
              {"phoneme_embed_dim", phoneme_embed_dim}, {"heads", heads},
              {"ffn_dim", ffn_dim},                 {"dropout", dropout},
              {"feature_dim", feature_dim},         {"phoneme_rate_positions", phoneme_rate_positions},
              {"fine_mask_embedding", fine_mask_embedding}}
      .dump();
}

ModelConfig ModelConfig::FromJson(const std::string& text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.vocab_size = j.at("vocab_size");
    c.hidden_dim = j.at("hidden_dim");
    c.encoder_blocks = j.at("encoder_blocks");
    c.coarse_blocks = j.at("coarse_blocks");
    c.fine_blocks = j.at("fine_blocks");
    c.conv_layers = j.at("conv_layers");
    c.conv_channels = j.at("conv_channels");
    c.conv_kernel = j.at("conv_kernel");
    c.phoneme_embed_dim = j.at("phoneme_embed_dim");
    c.heads = j.at("heads");
    c.ffn_dim = j.at("ffn_dim");
    c.dropout = j.at("dropout");
    c.feature_dim = j.at("feature_dim");
    c.phoneme_rate_positions = j.value("phoneme_rate_positions", false);
    c.fine_mask_embedding = j.value("fine_mask_embedding", false);
  } catch (const json::exception& e) {
    throw ModelError(std::string("bad model config: ") + e.what());
  }
  c.Validate();
  return c;
}

template <typename S>
Matrix<S> SinusoidalPositions(int length, int dim, double step) {
  Matrix<S> pe(length, dim);
  for (int t = 0; t < length; ++t) {
    const double pos = t * step;
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(t, i) = static_cast<S>(i % 2 == 0 ? std::sin(pos * rate) : std::cos(pos * rate));
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename S>
std::size_t CampNetModel<S>::Add(std::string name, ParamGroup group, Matrix<S> value, bool trainable) {
  ad::Parameter<S> p;
  p.name = std::move(name);
  p.group = group;
  p.value = std::move(value);
  p.trainable = trainable;
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

template <typename S>
typename CampNetModel<S>::LinearIdx CampNetModel<S>::AddLinear(const std::string& name, ParamGroup group,
                                                               int in, int out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> uni(-limit, limit);
  Matrix<S> w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(uni(rng));
  LinearIdx idx;
  idx.weight = Add(name + ".weight", group, std::move(w));
  idx.bias = Add(name + ".bias", group, Matrix<S>::Zero(1, out));
  return idx;
}

template <typename S>
typename CampNetModel<S>::NormIdx CampNetModel<S>::AddNorm(const std::string& name, ParamGroup group, int dim) {
  NormIdx idx;
  idx.gain = Add(name + ".gain", group, Matrix<S>::Ones(1, dim));
  idx.bias = Add(name + ".bias", group, Matrix<S>::Zero(1, dim));
  return idx;
}

template <typename S>
typename CampNetModel<S>::AttentionIdx CampNetModel<S>::AddAttention(const std::string& name,
                                                                     ParamGroup group, Rng& rng) {
  const int d = config_.hidden_dim;
  AttentionIdx a;
  a.norm = AddNorm(name + ".norm", group, d);
  a.q = AddLinear(name + ".q", group, d, d, rng);
  a.k = AddLinear(name + ".k", group, d, d, rng);
  a.v = AddLinear(name + ".v", group, d, d, rng);
  a.out = AddLinear(name + ".out", group, d, d, rng);
  return a;
}

template <typename S>
typename CampNetModel<S>::BlockIdx CampNetModel<S>::AddBlock(const std::string& name, ParamGroup group,
                                                             bool cross, Rng& rng) {
  BlockIdx b;
  b.self = AddAttention(name + ".self", group, rng);
  b.has_cross = cross;
  if (cross) b.cross = AddAttention(name + ".cross", group, rng);
  b.ffn_norm = AddNorm(name + ".ffn_norm", group, config_.hidden_dim);
  b.ffn_in = AddLinear(name + ".ffn_in", group, config_.hidden_dim, config_.ffn_dim, rng);
  b.ffn_out = AddLinear(name + ".ffn_out", group, config_.ffn_dim, config_.hidden_dim, rng);
  return b;
}

template <typename S>
CampNetModel<S>::CampNetModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.Validate();
  Rng rng(seed);
  const int d = config_.hidden_dim;
  const auto E = ParamGroup::kEncoder;
  const auto P = ParamGroup::kPrenet;
  const auto D = ParamGroup::kDecoder;
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](int rows, int cols, double scale) {
    Matrix<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(scale * normal(rng));
    return m;
  };

  layout_.embedding = Add("encoder.embedding", E, gaussian(config_.vocab_size, config_.phoneme_embed_dim, 1.0));
  int channels = config_.phoneme_embed_dim;
  for (int l = 0; l < config_.conv_layers; ++l) {
    const std::string name = "encoder.conv" + std::to_string(l);
    ConvIdx c;
    c.conv = AddLinear(name, E, channels * config_.conv_kernel, config_.conv_channels, rng);
    c.bn = AddNorm(name + ".bn", E, config_.conv_channels);
    c.running_mean = Add(name + ".bn.running_mean", E, Matrix<S>::Zero(1, config_.conv_channels), false);
    c.running_var = Add(name + ".bn.running_var", E, Matrix<S>::Ones(1, config_.conv_channels), false);
    layout_.convs.push_back(c);
    channels = config_.conv_channels;
  }
  layout_.encoder_proj = AddLinear("encoder.proj", E, channels, d, rng);
  for (int b = 0; b < config_.encoder_blocks; ++b)
    layout_.encoder.push_back(AddBlock("encoder.block" + std::to_string(b), E, false, rng));
  layout_.encoder_norm = AddNorm("encoder.norm", E, d);

  layout_.prenet1 = AddLinear("prenet.fc1", P, config_.feature_dim, d, rng);
  layout_.prenet2 = AddLinear("prenet.fc2", P, d, d, rng);
  layout_.mask_embedding = Add("prenet.mask_embedding", P, gaussian(1, d, 0.5));

  for (int b = 0; b < config_.coarse_blocks; ++b)
    layout_.coarse.push_back(AddBlock("coarse.block" + std::to_string(b), D, true, rng));
  layout_.coarse_norm = AddNorm("coarse.norm", D, d);
  layout_.coarse_out = AddLinear("coarse.out", D, d, config_.feature_dim, rng);
  layout_.fine_in = AddLinear("fine.in", D, config_.feature_dim, d, rng);
  for (int b = 0; b < config_.fine_blocks; ++b)
    layout_.fine.push_back(AddBlock("fine.block" + std::to_string(b), D, false, rng));
  layout_.fine_norm = AddNorm("fine.norm", D, d);
  layout_.fine_out = AddLinear("fine.out", D, d, config_.feature_dim, rng);
  if (config_.fine_mask_embedding)
    layout_.fine_mask_embedding = Add("fine.mask_embedding", D, gaussian(1, d, 0.5));
}

template <typename S>
std::size_t CampNetModel<S>::Index(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw ModelError("no parameter named " + name);
}

template <typename S>
const ad::Parameter<S>& CampNetModel<S>::param(const std::string& name) const {
  return params_[Index(name)];
}

template <typename S>
void CampNetModel<S>::ZeroGrad() {
  for (auto& p : params_) p.grad.resize(0, 0);
}

template <typename S>
void CampNetModel<S>::UpdateRunningStats(const std::vector<ad::BatchStats<S>>& stats, S momentum) {
  if (stats.empty()) return;
  if (stats.size() != layout_.convs.size()) throw ModelError("batch statistics do not match conv stack");
  for (std::size_t l = 0; l < stats.size(); ++l) {
    auto& mean = params_[layout_.convs[l].running_mean].value;
    auto& var = params_[layout_.convs[l].running_var].value;
    mean = (S(1) - momentum) * mean + momentum * stats[l].mean;
    var = (S(1) - momentum) * var + momentum * stats[l].var;
  }
}

template <typename S>
std::size_t CampNetModel<S>::ParameterCount() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += static_cast<std::size_t>(p.value.size());
  return n;
}

// ---------------------------------------------------------------------------
// Checkpoints: "CAMPCKPT", u32 version, u32 scalar bytes, u32 config length,
// config JSON, u32 parameter count, then per parameter: u32 name length, name,
// u8 group, u8 trainable, u32 rows, u32 cols, rows*cols raw little-endian values.

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'A', 'M', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void WriteU32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

std::uint32_t ReadU32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ModelError("checkpoint truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

template <typename S>
using UInt = std::conditional_t<sizeof(S) == 4, std::uint32_t, std::uint64_t>;

template <typename S>
void WriteScalar(std::ostream& out, S v) {
  const auto bits = std::bit_cast<UInt<S>>(v);
  char b[sizeof(S)];
  for (std::size_t i = 0; i < sizeof(S); ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(b, sizeof(S));
}

template <typename S>
S ReadScalar(std::istream& in) {
  unsigned char b[sizeof(S)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(S))) throw ModelError("checkpoint truncated");
  UInt<S> bits = 0;
  for (std::size_t i = 0; i < sizeof(S); ++i) bits |= static_cast<UInt<S>>(b[i]) << (8 * i);
  return std::bit_cast<S>(bits);
}

}  // namespace

template <typename S>
void CampNetModel<S>::Save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 8);
  WriteU32(out, kCheckpointVersion);
  WriteU32(out, sizeof(S));
  const std::string cfg = config_.ToJson();
  WriteU32(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  WriteU32(out, static_cast<std::uint32_t>(params_.size()));
  for (const auto& p : params_) {
    WriteU32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    out.put(static_cast<char>(p.group));
    out.put(p.trainable ? 1 : 0);
    WriteU32(out, static_cast<std::uint32_t>(p.value.rows()));
    WriteU32(out, static_cast<std::uint32_t>(p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) WriteScalar<S>(out, p.value.data()[i]);
  }
  if (!out) throw IoError("checkpoint write failed for " + path.string());
}

template <typename S>
CampNetModel<S> CampNetModel<S>::Load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic))
    throw ModelError(path.string() + " is not a checkpoint");
  if (ReadU32(in) != kCheckpointVersion) throw ModelError("unsupported checkpoint version");
  if (ReadU32(in) != sizeof(S)) throw ModelError("checkpoint scalar type differs");
  std::string cfg(ReadU32(in), '\0');
  if (!in.read(cfg.data(), static_cast<std::streamsize>(cfg.size()))) throw ModelError("checkpoint truncated");
  // Rebuild the layout from the config, then overwrite every tensor.
  CampNetModel model(ModelConfig::FromJson(cfg), 0);
  const std::uint32_t count = ReadU32(in);
  if (count != model.params_.size()) throw ModelError("checkpoint parameter count mismatch");
  for (auto& p : model.params_) {
    std::string name(ReadU32(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw ModelError("checkpoint truncated");
    if (name != p.name) throw ModelError("checkpoint has '" + name + "' where '" + p.name + "' was expected");
    const int group = in.get();
    const int trainable = in.get();
    if (group != static_cast<int>(p.group) || trainable != (p.trainable ? 1 : 0))
      throw ModelError("checkpoint partition mismatch for " + name);
    const std::uint32_t rows = ReadU32(in), cols = ReadU32(in);
    if (rows != p.value.rows() || cols != p.value.cols()) throw ModelError("checkpoint shape mismatch for " + name);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = ReadScalar<S>(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ModelError("trailing bytes in checkpoint");
  return model;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

template <typename S>
class Builder {
 public:
  using Model = CampNetModel<S>;
  using V = ad::Var<S>;

  Builder(ad::Tape<S>& tape, const Model& model, const ForwardOptions& options, ForwardGraph<S>& graph)
      : tape_(tape), model_(model), options_(options), graph_(graph) {
    graph_.param_vars.assign(model.params().size(), -1);
    vars_.resize(model.params().size());
    have_.assign(model.params().size(), false);
  }

  V P(std::size_t idx) {
    if (!have_[idx]) {
      const auto& p = model_.params()[idx];
      const bool differentiable = tape_.recording() && p.trainable && !options_.frozen.count(p.group);
      vars_[idx] = differentiable ? tape_.Variable(p.value) : tape_.Constant(p.value);
      if (differentiable) graph_.param_vars[idx] = vars_[idx].id;
      have_[idx] = true;
    }
    return vars_[idx];
  }

  V Linear(V x, const typename Model::LinearIdx& l) { return ad::Linear(x, P(l.weight), P(l.bias)); }
  V Norm(V x, const typename Model::NormIdx& n) { return ad::LayerNorm(x, P(n.gain), P(n.bias)); }
  V Drop(V x) {
    return options_.training ? ad::Dropout(x, model_.config().dropout, options_.dropout_rng) : x;
  }

  V AttentionSublayer(V x, const typename Model::AttentionIdx& a, const V* memory,
                      const ad::Segments& q_seg, const ad::Segments& k_seg,
                      std::vector<ad::HeadWeights<S>>* weights) {
    V n = Norm(x, a.norm);
    V src = memory ? *memory : n;
    V att = ad::Attention(Linear(n, a.q), Linear(src, a.k), Linear(src, a.v), q_seg, k_seg,
                          model_.config().heads, weights);
    return ad::Add(x, Drop(Linear(att, a.out)));
  }

  V Block(V x, const typename Model::BlockIdx& b, const ad::Segments& seg, const V* memory,
          const ad::Segments* memory_seg, std::vector<ad::HeadWeights<S>>* cross_weights) {
    x = AttentionSublayer(x, b.self, nullptr, seg, seg, nullptr);
    if (b.has_cross) x = AttentionSublayer(x, b.cross, memory, seg, *memory_seg, cross_weights);
    V h = ad::Relu(Linear(Norm(x, b.ffn_norm), b.ffn_in));
    return ad::Add(x, Drop(Linear(h, b.ffn_out)));
  }

  // With `rate_seg`, item b steps by (its phoneme count)/(its frame count).
  V Positions(const ad::Segments& seg, const ad::Segments* rate_seg = nullptr) {
    const int dim = model_.config().hidden_dim;
    Matrix<S> pe(seg.back(), dim);
    if (rate_seg) {
      for (std::size_t b = 0; b + 1 < seg.size(); ++b) {
        const int T = seg[b + 1] - seg[b];
        const double step = static_cast<double>((*rate_seg)[b + 1] - (*rate_seg)[b]) / T;
        pe.middleRows(seg[b], T) = SinusoidalPositions<S>(T, dim, step);
      }
      return tape_.Constant(std::move(pe));
    }
    int longest = 0;
    for (std::size_t b = 0; b + 1 < seg.size(); ++b) longest = std::max(longest, seg[b + 1] - seg[b]);
    const Matrix<S> table = SinusoidalPositions<S>(longest, dim);
    for (std::size_t b = 0; b + 1 < seg.size(); ++b)
      pe.middleRows(seg[b], seg[b + 1] - seg[b]) = table.topRows(seg[b + 1] - seg[b]);
    return tape_.Constant(std::move(pe));
  }

  V Encode(const std::vector<int>& ids, const ad::Segments& seg) {
    const auto& L = model_.layout();
    V x = ad::Gather(P(L.embedding), ids);
    for (const auto& c : L.convs) {
      x = Linear(ad::Unfold(x, seg, model_.config().conv_kernel), c.conv);
      ad::BatchStats<S> stats;
      const bool batch_mode = options_.training && !options_.frozen.count(ParamGroup::kEncoder);
      x = ad::BatchNorm(x, P(c.bn.gain), P(c.bn.bias), model_.params()[c.running_mean].value,
                        model_.params()[c.running_var].value, batch_mode, &stats);
      if (batch_mode && x.rows() >= 2) graph_.bn_stats.push_back(stats);
      x = Drop(ad::Relu(x));
    }
    x = ad::Add(Linear(x, L.encoder_proj), Positions(seg));
    for (const auto& b : L.encoder) x = Block(x, b, seg, nullptr, nullptr, nullptr);
    return Norm(x, L.encoder_norm);
  }

  V Prenet(const Matrix<S>& frames, const std::vector<bool>& flags, const ad::Segments& seg,
           const ad::Segments& phoneme_seg) {
    const auto& L = model_.layout();
    V x = tape_.Constant(frames);
    x = Drop(ad::Relu(Linear(x, L.prenet1)));
    x = Drop(ad::Relu(Linear(x, L.prenet2)));
    x = ad::AddRowWhere(x, P(L.mask_embedding), flags);
    return ad::Add(x, Positions(seg, model_.config().phoneme_rate_positions ? &phoneme_seg : nullptr));
  }

  V Coarse(V h, V text, const ad::Segments& frame_seg, const ad::Segments& phoneme_seg) {
    const auto& L = model_.layout();
    ++graph_.coarse_passes;
    V x = h;
    for (const auto& b : L.coarse) {
      graph_.cross_attention.emplace_back();
      x = Block(x, b, frame_seg, &text, &phoneme_seg, &graph_.cross_attention.back());
    }
    return Linear(Norm(x, L.coarse_norm), L.coarse_out);
  }

  V Fine(V fine_input, const std::vector<bool>& flags, const ad::Segments& frame_seg) {
    const auto& L = model_.layout();
    ++graph_.fine_passes;
    V x = Linear(fine_input, L.fine_in);
    if (model_.config().fine_mask_embedding) x = ad::AddRowWhere(x, P(L.fine_mask_embedding), flags);
    x = ad::Add(x, Positions(frame_seg));
    for (const auto& b : L.fine) x = Block(x, b, frame_seg, nullptr, nullptr, nullptr);
    return Linear(Norm(x, L.fine_norm), L.fine_out);
  }

 private:
  ad::Tape<S>& tape_;
  const Model& model_;
  const ForwardOptions& options_;
  ForwardGraph<S>& graph_;
  std::vector<V> vars_;
  std::vector<bool> have_;
};

template <typename S>
struct StackedBatch {
  std::vector<int> ids;
  Matrix<S> frames;
  std::vector<bool> flags;
  ad::Segments frame_seg{0};
  ad::Segments phoneme_seg{0};
};

template <typename S>
StackedBatch<S> Stack(const CampNetModel<S>& model, std::span<const ForwardItem> batch) {
  if (batch.empty()) throw ModelError("empty batch");
  StackedBatch<S> s;
  int rows = 0;
  for (const auto& item : batch) {
    if (!item.phonemes || !item.masked) throw ModelError("incomplete batch item");
    if (item.phonemes->ids.empty()) throw ModelError("empty phoneme sequence");
    for (int id : item.phonemes->ids)
      if (id < 0 || id >= model.config().vocab_size)
        throw ModelError("phoneme id " + std::to_string(id) + " outside the embedding table");
    if (item.masked->values.rows() < 1) throw ModelError("empty feature sequence");
    if (!item.masked->values.allFinite()) throw ModelError("non-finite input features");
    if (static_cast<Eigen::Index>(item.masked->mask_flag.size()) != item.masked->values.rows())
      throw ModelError("mask flags do not match feature length");
    rows += item.masked->length();
  }
  s.frames.resize(rows, kFeatureDim);
  for (const auto& item : batch) {
    const int T = item.masked->length();
    s.frames.middleRows(s.frame_seg.back(), T) = item.masked->values.template cast<S>();
    s.flags.insert(s.flags.end(), item.masked->mask_flag.begin(), item.masked->mask_flag.end());
    s.ids.insert(s.ids.end(), item.phonemes->ids.begin(), item.phonemes->ids.end());
    s.frame_seg.push_back(s.frame_seg.back() + T);
    s.phoneme_seg.push_back(s.phoneme_seg.back() + item.phonemes->size());
  }
  return s;
}

}  // namespace

template <typename S>
ForwardGraph<S> ForwardBatch(ad::Tape<S>& tape, const CampNetModel<S>& model,
                             std::span<const ForwardItem> batch, const ForwardOptions& options) {
  const StackedBatch<S> s = Stack(model, batch);
  ForwardGraph<S> g;
  g.frame_segments = s.frame_seg;
  g.phoneme_segments = s.phoneme_seg;
  Builder<S> b(tape, model, options, g);
  g.text = b.Encode(s.ids, s.phoneme_seg);
  g.prenet = b.Prenet(s.frames, s.flags, s.frame_seg, s.phoneme_seg);
  g.coarse = b.Coarse(g.prenet, g.text, s.frame_seg, s.phoneme_seg);
  // The fine stack sees the coarse prediction plus the masked context;
  // mask-token frames contribute zeros.
  g.fine_input = ad::Add(g.coarse, tape.Constant(s.frames));
  g.fine = b.Fine(g.fine_input, s.flags, s.frame_seg);
  return g;
}

template <typename S>
void AccumulateGrads(CampNetModel<S>& model, ad::Tape<S>& tape, const ForwardGraph<S>& graph) {
  auto& params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const int id = graph.param_vars[i];
    if (id < 0 || !tape.has_grad(id)) continue;
    if (params[i].grad.size() == 0)
      params[i].grad = tape.grad(id);
    else
      params[i].grad += tape.grad(id);
  }
}

namespace {

template <typename S>
AttentionMaps<S> CollectAttention(const ForwardGraph<S>& g) {
  AttentionMaps<S> maps;
  for (const auto& block : g.cross_attention) maps.push_back(block.at(0));
  return maps;
}

}  // namespace

template <typename S>
Matrix<S> Encode(const PhonemeSequence& phonemes, const CampNetModel<S>& model) {
  for (int id : phonemes.ids)
    if (id < 0 || id >= model.config().vocab_size)
      throw ModelError("phoneme id " + std::to_string(id) + " outside the embedding table");
  if (phonemes.ids.empty()) throw ModelError("empty phoneme sequence");
  ad::Tape<S> tape(false);
  ForwardGraph<S> g;
  ForwardOptions options;
  Builder<S> b(tape, model, options, g);
  return b.Encode(phonemes.ids, {0, phonemes.size()}).value();
}

template <typename S>
Matrix<S> Prenet(const MaskedFeatures& masked, const CampNetModel<S>& model, int phoneme_count) {
  if (!masked.values.allFinite()) throw ModelError("non-finite input features");
  if (model.config().phoneme_rate_positions && phoneme_count < 1)
    throw ModelError("phoneme-rate positions need the phoneme count");
  ad::Tape<S> tape(false);
  ForwardGraph<S> g;
  ForwardOptions options;
  Builder<S> b(tape, model, options, g);
  return b.Prenet(masked.values.template cast<S>(), masked.mask_flag, {0, masked.length()}, {0, phoneme_count})
      .value();
}

template <typename S>
std::pair<Matrix<S>, AttentionMaps<S>> CoarseDecode(const Matrix<S>& prenet, const Matrix<S>& text,
                                                    const CampNetModel<S>& model) {
  const int d = model.config().hidden_dim;
  if (prenet.cols() != d || text.cols() != d || prenet.rows() < 1 || text.rows() < 1)
    throw ModelError("coarse decoder input shape mismatch");
  ad::Tape<S> tape(false);
  ForwardGraph<S> g;
  ForwardOptions options;
  Builder<S> b(tape, model, options, g);
  auto h = tape.Constant(prenet);
  auto m = tape.Constant(text);
  auto y = b.Coarse(h, m, {0, static_cast<int>(prenet.rows())}, {0, static_cast<int>(text.rows())});
  return {y.value(), CollectAttention(g)};
}

template <typename S>
Matrix<S> FineDecode(const Matrix<S>& coarse, const MaskedFeatures& masked, const CampNetModel<S>& model) {
  if (coarse.rows() != masked.values.rows() || coarse.cols() != kFeatureDim)
    throw ModelError("fine decoder input shape mismatch");
  ad::Tape<S> tape(false);
  ForwardGraph<S> g;
  ForwardOptions options;
  Builder<S> b(tape, model, options, g);
  auto sum = ad::Add(tape.Constant(coarse), tape.Constant(masked.values.template cast<S>()));
  return b.Fine(sum, masked.mask_flag, {0, masked.length()}).value();
}

template <typename S>
DecoderOutputs<S> Forward(const PhonemeSequence& phonemes, const MaskedFeatures& masked,
                          const CampNetModel<S>& model) {
  ad::Tape<S> tape(false);
  const ForwardItem item{&phonemes, &masked};
  const ForwardGraph<S> g = ForwardBatch(tape, model, std::span<const ForwardItem>(&item, 1));
  DecoderOutputs<S> out;
  out.coarse = g.coarse.value();
  out.fine = g.fine.value();
  out.attention = CollectAttention(g);
  out.coarse_passes = g.coarse_passes;
  out.fine_passes = g.fine_passes;
  return out;
}

template <typename S>
double ExtractAlignment(const DecoderOutputs<S>& outputs, const MaskSpan& span, const Range& edited) {
  if (span.length() < 1) throw ModelError("alignment needs a nonempty span");
  if (outputs.attention.empty()) throw ModelError("no attention maps recorded");
  const auto& heads = outputs.attention.back();
  const auto T = heads.at(0).rows(), M = heads.at(0).cols();
  if (span.start < 0 || span.end > T) throw ModelError("span outside attention map");
  if (edited.begin < 0 || edited.end > M || edited.begin > edited.end)
    throw ModelError("edited phoneme range outside attention map");
  double mass = 0.0;
  for (const auto& w : heads)
    mass += w.block(span.start, edited.begin, span.length(), edited.size()).template cast<double>().sum();
  return mass / (static_cast<double>(heads.size()) * span.length());
}

#define CAMPNET_INSTANTIATE(S)                                                                      \
  template class CampNetModel<S>;                                                                   \
  template Matrix<S> SinusoidalPositions<S>(int, int, double);                                              \
  template ForwardGraph<S> ForwardBatch<S>(ad::Tape<S>&, const CampNetModel<S>&,                    \
                                           std::span<const ForwardItem>, const ForwardOptions&);    \
  template void AccumulateGrads<S>(CampNetModel<S>&, ad::Tape<S>&, const ForwardGraph<S>&);         \
  template Matrix<S> Encode<S>(const PhonemeSequence&, const CampNetModel<S>&);                     \
  template Matrix<S> Prenet<S>(const MaskedFeatures&, const CampNetModel<S>&, int);                      \
  template std::pair<Matrix<S>, AttentionMaps<S>> CoarseDecode<S>(const Matrix<S>&, const Matrix<S>&, \
                                                                  const CampNetModel<S>&);          \
  template Matrix<S> FineDecode<S>(const Matrix<S>&, const MaskedFeatures&, const CampNetModel<S>&); \
  template DecoderOutputs<S> Forward<S>(const PhonemeSequence&, const MaskedFeatures&,              \
                                        const CampNetModel<S>&);                                    \
  template double ExtractAlignment<S>(const DecoderOutputs<S>&, const MaskSpan&, const Range&);

CAMPNET_INSTANTIATE(float)
CAMPNET_INSTANTIATE(double)

#undef CAMPNET_INSTANTIATE

}  // namespace campnet
