// include/campnet/corpus.hpp

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
#include <optional>
#include <string>
#include <vector>

#include "campnet/types.hpp"

namespace campnet {

/// Half-open index interval [begin, end).
struct Range {
  int begin = 0;
  int end = 0;

  int size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(int i) const { return i >= begin && i < end; }
  friend bool operator==(const Range&, const Range&) = default;
};

struct AcousticFrame {
  Eigen::Matrix<float, 1, kBfccDim> bfcc;
  float pitch = 0.0f;
  float pitch_corr = 0.0f;

  static AcousticFrame FromRow(const Eigen::Ref<const Eigen::Matrix<float, 1, kFeatureDim>>& row);
  Eigen::Matrix<float, 1, kFeatureDim> ToRow() const;
  bool IsValid() const;
};

struct FeatureSequence {
  FeatureMatrix frames;
  int hop_ms = kHopMs;

  FeatureSequence() = default;
  explicit FeatureSequence(FeatureMatrix m) : frames(std::move(m)) {}

  int length() const { return static_cast<int>(frames.rows()); }
  AcousticFrame frame(int t) const { return AcousticFrame::FromRow(frames.row(t)); }

  /// Throws FormatError when empty, non-finite, or pitch_corr leaves [0, 1].
  void Validate() const;

  friend bool operator==(const FeatureSequence& a, const FeatureSequence& b) {
    return a.hop_ms == b.hop_ms && a.frames.rows() == b.frames.rows() &&
           (a.frames.array() == b.frames.array()).all();
  }
};

struct PhonemeSequence {
  std::vector<int> ids;

  int size() const { return static_cast<int>(ids.size()); }
  /// Throws FormatError when empty or any id is outside [0, vocab_size).
  void Validate(int vocab_size) const;
  friend bool operator==(const PhonemeSequence&, const PhonemeSequence&) = default;
};

struct WordSpan {
  std::string word;
  Range phonemes;
  Range frames;

  friend bool operator==(const WordSpan&, const WordSpan&) = default;
};

struct Utterance {
  std::string id;
  std::string speaker;
  PhonemeSequence phonemes;
  std::vector<WordSpan> words;
  FeatureSequence features;

  int num_frames() const { return features.length(); }
  int num_words() const { return static_cast<int>(words.size()); }
  void Validate(int vocab_size) const;
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

/// Corpus-wide metadata stored as the optional first manifest record.
struct Inventory {
  int vocab_size = 0;
  std::vector<std::string> phoneme_names;
  /// Decoded F0 in Hz equals pitch channel value times this factor.
  double f0_hz_per_unit = 100.0;

  friend bool operator==(const Inventory&, const Inventory&) = default;
};

struct Corpus {
  Inventory inventory;
  std::vector<Utterance> utterances;

  const Utterance* Find(const std::string& id) const;
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

struct IntRange {
  int min = 0;
  int max = 0;
};

struct SyntheticCorpusSpec {
  int vocab_size = 10;
  int utterance_count = 200;
  IntRange phonemes_per_utt{6, 10};
  IntRange frames_per_phoneme{6, 10};
  IntRange phonemes_per_word{1, 3};
  int speaker_count = 4;
  /// Speakers are named spk<first_speaker> .. spk<first_speaker + count - 1>;
  /// a speaker's voice depends only on its index and template_seed.
  int first_speaker = 0;
  float noise_std = 0.03f;
  /// Ids are <id_prefix><6-digit index>_<speaker>, so generation order is id order.
  std::string id_prefix = "u";
  std::uint64_t seed = 7;
  std::uint64_t template_seed = 0x43414d50;
};

/// Additive decomposition of one generated utterance (noise excluded).
struct SyntheticTrace {
  FeatureMatrix trend;
  Eigen::Matrix<float, 1, kBfccDim> speaker_offset;
};

Matrix<float> PhonemeTemplates(int vocab_size, std::uint64_t template_seed);

Corpus GenerateSynthetic(const SyntheticCorpusSpec& spec,
                         std::vector<SyntheticTrace>* trace = nullptr);

Corpus LoadCorpus(const std::filesystem::path& dir);
void SaveCorpus(const Corpus& corpus, const std::filesystem::path& dir);

// Feature file: "CAMP", u32 version, u32 T, u32 D, T*D little-endian f32,
// then u32 CRC-32 of everything before it.
FeatureSequence ReadFeatureFile(const std::filesystem::path& path);
void WriteFeatureFile(const FeatureSequence& seq, const std::filesystem::path& path);
std::string EncodeFeatures(const FeatureSequence& seq);
FeatureSequence DecodeFeatures(const std::string& bytes);

}  // namespace campnet
