// src/corpus.cpp

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

#include "campnet/corpus.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

namespace campnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'A', 'M', 'P'};
constexpr std::uint32_t kFeatureVersion = 1;
constexpr std::size_t kHeaderBytes = 16;

void PutU32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t GetU32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

std::uint32_t Crc(const std::string& bytes, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

}  // namespace

AcousticFrame AcousticFrame::FromRow(
    const Eigen::Ref<const Eigen::Matrix<float, 1, kFeatureDim>>& row) {
  AcousticFrame f;
  f.bfcc = row.head<kBfccDim>();
  f.pitch = row(kPitchIndex);
  f.pitch_corr = row(kPitchCorrIndex);
  return f;
}

Eigen::Matrix<float, 1, kFeatureDim> AcousticFrame::ToRow() const {
  Eigen::Matrix<float, 1, kFeatureDim> row;
  row.head<kBfccDim>() = bfcc;
  row(kPitchIndex) = pitch;
  row(kPitchCorrIndex) = pitch_corr;
  return row;
}

bool AcousticFrame::IsValid() const {
  return bfcc.allFinite() && std::isfinite(pitch) && std::isfinite(pitch_corr) &&
         pitch_corr >= 0.0f && pitch_corr <= 1.0f;
}

void FeatureSequence::Validate() const {
  if (frames.rows() < 1) throw FormatError("feature sequence is empty");
  if (hop_ms != kHopMs) throw FormatError("hop must be 10 ms");
  if (!frames.allFinite()) throw FormatError("feature sequence has non-finite values");
  auto corr = frames.col(kPitchCorrIndex).array();
  if ((corr < 0.0f).any() || (corr > 1.0f).any())
    throw FormatError("pitch correlation outside [0, 1]");
}

void PhonemeSequence::Validate(int vocab_size) const {
  if (ids.empty()) throw FormatError("phoneme sequence is empty");
  for (int id : ids)
    if (id < 0 || id >= vocab_size)
      throw FormatError("phoneme id " + std::to_string(id) + " outside inventory");
}

void Utterance::Validate(int vocab_size) const {
  features.Validate();
  phonemes.Validate(vocab_size);
  const int T = num_frames();
  int last_frame = 0;
  int last_phoneme = 0;
  for (const auto& w : words) {
    if (w.frames.begin < last_frame || w.frames.begin >= w.frames.end || w.frames.end > T)
      throw FormatError(id + ": word '" + w.word + "' has an invalid frame range");
    if (w.phonemes.begin < last_phoneme || w.phonemes.begin >= w.phonemes.end ||
        w.phonemes.end > phonemes.size())
      throw FormatError(id + ": word '" + w.word + "' has an invalid phoneme range");
    last_frame = w.frames.end;
    last_phoneme = w.phonemes.end;
  }
}

const Utterance* Corpus::Find(const std::string& id) const {
  for (const auto& u : utterances)
    if (u.id == id) return &u;
  return nullptr;
}

std::string EncodeFeatures(const FeatureSequence& seq) {
  const auto T = static_cast<std::uint32_t>(seq.frames.rows());
  std::string out;
  out.reserve(kHeaderBytes + 4 * T * kFeatureDim + 4);
  out.append(kMagic, 4);
  PutU32(out, kFeatureVersion);
  PutU32(out, T);
  PutU32(out, kFeatureDim);
  for (Eigen::Index t = 0; t < seq.frames.rows(); ++t)
    for (int d = 0; d < kFeatureDim; ++d) PutU32(out, std::bit_cast<std::uint32_t>(seq.frames(t, d)));
  PutU32(out, Crc(out, out.size()));
  return out;
}

FeatureSequence DecodeFeatures(const std::string& bytes) {
  if (bytes.size() < kHeaderBytes) throw IngestError("feature data truncated in header");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw FormatError("bad feature magic");
  if (GetU32(bytes, 4) != kFeatureVersion)
    throw FormatError("unsupported feature version " + std::to_string(GetU32(bytes, 4)));
  const std::uint32_t T = GetU32(bytes, 8);
  const std::uint32_t D = GetU32(bytes, 12);
  if (D != kFeatureDim) throw FormatError("feature dimension " + std::to_string(D) + " != 32");
  const std::size_t payload = kHeaderBytes + std::size_t{4} * T * D;
  if (bytes.size() < payload + 4) throw IngestError("feature data truncated");
  if (bytes.size() > payload + 4) throw FormatError("trailing bytes after feature data");
  if (Crc(bytes, payload) != GetU32(bytes, payload)) throw FormatError("feature checksum mismatch");

  FeatureSequence seq(FeatureMatrix(T, kFeatureDim));
  std::size_t pos = kHeaderBytes;
  for (std::uint32_t t = 0; t < T; ++t)
    for (int d = 0; d < kFeatureDim; ++d, pos += 4)
      seq.frames(t, d) = std::bit_cast<float>(GetU32(bytes, pos));
  seq.Validate();
  return seq;
}

FeatureSequence ReadFeatureFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open feature file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return DecodeFeatures(bytes);
}

void WriteFeatureFile(const FeatureSequence& seq, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string bytes = EncodeFeatures(seq);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

json RangeJson(const Range& r) { return json::array({r.begin, r.end}); }

Range RangeFrom(const json& j) {
  if (!j.is_array() || j.size() != 2) throw FormatError("range must be [begin, end]");
  return {j[0].get<int>(), j[1].get<int>()};
}

json UtteranceJson(const Utterance& u) {
  json words = json::array();
  for (const auto& w : u.words)
    words.push_back({{"word", w.word},
                     {"phoneme_range", RangeJson(w.phonemes)},
                     {"frame_range", RangeJson(w.frames)}});
  return {{"id", u.id}, {"speaker", u.speaker}, {"phonemes", u.phonemes.ids}, {"words", words}};
}

}  // namespace

void SaveCorpus(const Corpus& corpus, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "features", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in " + dir.string());
  const auto& inv = corpus.inventory;
  manifest << json{{"inventory",
                    {{"vocab_size", inv.vocab_size},
                     {"phonemes", inv.phoneme_names},
                     {"f0_hz_per_unit", inv.f0_hz_per_unit}}}}
                  .dump()
           << '\n';
  for (const auto& u : corpus.utterances) {
    manifest << UtteranceJson(u).dump() << '\n';
    WriteFeatureFile(u.features, dir / "features" / (u.id + ".campf"));
  }
  if (!manifest) throw IoError("manifest write failed in " + dir.string());
}

Corpus LoadCorpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("corpus directory " + dir.string() + " not found");
  Corpus corpus;
  const auto manifest_path = dir / "manifest.jsonl";
  if (!fs::exists(manifest_path)) {
    if (fs::is_empty(dir)) return corpus;
    throw IngestError("missing manifest.jsonl in " + dir.string());
  }
  std::ifstream manifest(manifest_path);
  std::string line;
  int line_no = 0;
  int max_id = -1;
  bool have_inventory = false;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (j.contains("inventory")) {
        const auto& inv = j["inventory"];
        corpus.inventory.vocab_size = inv.at("vocab_size").get<int>();
        corpus.inventory.phoneme_names = inv.value("phonemes", std::vector<std::string>{});
        corpus.inventory.f0_hz_per_unit = inv.value("f0_hz_per_unit", 100.0);
        have_inventory = true;
        continue;
      }
      Utterance u;
      u.id = j.at("id").get<std::string>();
      u.speaker = j.value("speaker", "");
      u.phonemes.ids = j.at("phonemes").get<std::vector<int>>();
      for (const auto& w : j.at("words"))
        u.words.push_back({w.at("word").get<std::string>(), RangeFrom(w.at("phoneme_range")),
                           RangeFrom(w.at("frame_range"))});
      for (int id : u.phonemes.ids) max_id = std::max(max_id, id);
      corpus.utterances.push_back(std::move(u));
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_inventory) corpus.inventory.vocab_size = max_id + 1;

  std::sort(corpus.utterances.begin(), corpus.utterances.end(),
            [](const Utterance& a, const Utterance& b) { return a.id < b.id; });
  for (auto& u : corpus.utterances) {
    const auto path = dir / "features" / (u.id + ".campf");
    if (!fs::exists(path)) throw IngestError("utterance " + u.id + ": missing feature file");
    try {
      u.features = ReadFeatureFile(path);
    } catch (const IngestError& e) {
      throw IngestError("utterance " + u.id + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("utterance " + u.id + ": " + e.what());
    }
    u.Validate(corpus.inventory.vocab_size);
  }
  return corpus;
}

Matrix<float> PhonemeTemplates(int vocab_size, std::uint64_t template_seed) {
  Rng rng(template_seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Matrix<float> templates(vocab_size, kBfccDim);
  for (int p = 0; p < vocab_size; ++p) {
    // Redraw until the template is separated from all previous ones.
    for (;;) {
      for (int d = 0; d < kBfccDim; ++d) templates(p, d) = normal(rng);
      bool distinct = true;
      for (int q = 0; q < p && distinct; ++q)
        distinct = (templates.row(p) - templates.row(q)).cwiseAbs().maxCoeff() > 0.5f;
      if (distinct) break;
    }
  }
  return templates;
}

namespace {

struct SpeakerVoice {
  Eigen::Matrix<float, 1, kBfccDim> offset;
  float f0_base_hz;
};

SpeakerVoice VoiceFor(int speaker_index, std::uint64_t template_seed) {
  Rng rng(template_seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(speaker_index + 1)));
  std::normal_distribution<float> normal(0.0f, 0.3f);
  std::uniform_real_distribution<float> base(100.0f, 220.0f);
  SpeakerVoice v;
  for (int d = 0; d < kBfccDim; ++d) v.offset(d) = normal(rng);
  v.f0_base_hz = base(rng);
  return v;
}

int Draw(Rng& rng, IntRange r) { return std::uniform_int_distribution<int>(r.min, r.max)(rng); }

}  // namespace

Corpus GenerateSynthetic(const SyntheticCorpusSpec& spec, std::vector<SyntheticTrace>* trace) {
  if (spec.vocab_size < 2) throw FormatError("synthetic vocab_size must be >= 2");
  for (IntRange r : {spec.phonemes_per_utt, spec.frames_per_phoneme, spec.phonemes_per_word})
    if (r.min < 1 || r.max < r.min) throw FormatError("synthetic ranges must be nonempty and >= 1");
  if (spec.speaker_count < 1) throw FormatError("synthetic speaker_count must be >= 1");

  Corpus corpus;
  corpus.inventory.vocab_size = spec.vocab_size;
  for (int p = 0; p < spec.vocab_size; ++p) corpus.inventory.phoneme_names.push_back("p" + std::to_string(p));
  corpus.inventory.f0_hz_per_unit = 100.0;
  if (trace) trace->clear();
  if (spec.utterance_count <= 0) return corpus;

  const Matrix<float> templates = PhonemeTemplates(spec.vocab_size, spec.template_seed);
  Rng rng(spec.seed);
  std::uniform_int_distribution<int> phoneme(0, spec.vocab_size - 1);
  std::uniform_real_distribution<float> unit(-1.0f, 1.0f);
  std::uniform_real_distribution<float> amp(0.1f, 0.2f);
  std::normal_distribution<float> noise(0.0f, 1.0f);

  for (int n = 0; n < spec.utterance_count; ++n) {
    Utterance u;
    const int speaker_index = spec.first_speaker + n % spec.speaker_count;
    const SpeakerVoice voice = VoiceFor(speaker_index, spec.template_seed);
    u.speaker = "spk" + std::to_string(speaker_index);
    char id[64];
    std::snprintf(id, sizeof(id), "%s%06d_%s", spec.id_prefix.c_str(), n, u.speaker.c_str());
    u.id = id;

    const int M = Draw(rng, spec.phonemes_per_utt);
    std::vector<int> durations(M);
    for (int i = 0; i < M; ++i) {
      u.phonemes.ids.push_back(phoneme(rng));
      durations[i] = Draw(rng, spec.frames_per_phoneme);
    }
    int T = 0;
    for (int d : durations) T += d;

    // Words group consecutive phonemes; frame ranges tile [0, T).
    for (int a = 0, frame = 0; a < M;) {
      const int b = std::min(M, a + Draw(rng, spec.phonemes_per_word));
      WordSpan w;
      w.word = "w";
      for (int i = a; i < b; ++i) w.word += std::to_string(u.phonemes.ids[i]) + (i + 1 < b ? "_" : "");
      w.phonemes = {a, b};
      int frames = 0;
      for (int i = a; i < b; ++i) frames += durations[i];
      w.frames = {frame, frame + frames};
      frame += frames;
      u.words.push_back(std::move(w));
      a = b;
    }

    // Cubic trend per BFCC dimension, rescaled to a peak of at most 0.2.
    Eigen::Matrix<float, 4, kBfccDim> coef;
    for (int k = 0; k < 4; ++k)
      for (int d = 0; d < kBfccDim; ++d) coef(k, d) = unit(rng);
    FeatureMatrix trend = FeatureMatrix::Zero(T, kFeatureDim);
    for (int t = 0; t < T; ++t) {
      const float x = T > 1 ? 2.0f * t / (T - 1) - 1.0f : 0.0f;
      trend.row(t).head<kBfccDim>() = coef.row(0) + x * coef.row(1) + x * x * coef.row(2) +
                                      x * x * x * coef.row(3);
    }
    const float peak = trend.cwiseAbs().maxCoeff();
    if (peak > 0.0f) trend *= amp(rng) / peak;

    const float f0_rate = 0.5f + 1.5f * (unit(rng) + 1.0f) / 2.0f;
    const float f0_phase = std::numbers::pi_v<float> * unit(rng);
    u.features.frames.resize(T, kFeatureDim);
    for (int i = 0, t = 0; i < M; ++i) {
      const int ph = u.phonemes.ids[i];
      const bool voiced = ph % 3 != 2;
      for (int k = 0; k < durations[i]; ++k, ++t) {
        const float x = static_cast<float>(t) / static_cast<float>(T);
        auto row = u.features.frames.row(t);
        for (int d = 0; d < kBfccDim; ++d)
          row(d) = templates(ph, d) + voice.offset(d) + trend(t, d) + spec.noise_std * noise(rng);
        const float f0 = voice.f0_base_hz *
                         (1.0f + 0.08f * std::sin(2.0f * std::numbers::pi_v<float> * f0_rate * x + f0_phase) -
                          0.05f * x);
        row(kPitchIndex) = f0 / 100.0f + spec.noise_std * 0.1f * noise(rng);
        const float corr = (voiced ? 0.85f : 0.1f) + spec.noise_std * noise(rng);
        row(kPitchCorrIndex) = std::clamp(corr, 0.0f, 1.0f);
      }
    }
    if (trace) trace->push_back({std::move(trend), voice.offset});
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

}  // namespace campnet
