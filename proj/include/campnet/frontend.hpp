// include/campnet/frontend.hpp

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

#include <string>
#include <vector>

#include "campnet/corpus.hpp"

namespace campnet {

enum class EditOp { kDelete, kReplace, kInsert };

const char* ToString(EditOp op);
EditOp EditOpFromString(const std::string& s);

struct NewWord {
  std::string word;
  std::vector<int> phonemes;

  friend bool operator==(const NewWord&, const NewWord&) = default;
};

/// A transcript change. For delete/replace `index` is a word index; for
/// insert it is a boundary in [0, word_count] (0 = before the first word).
struct EditScript {
  EditOp op = EditOp::kReplace;
  int index = 0;
  std::vector<NewWord> words;

  /// Throws EditError if the script does not fit an utterance with
  /// `word_count` words and a `vocab_size` inventory.
  void Validate(int word_count, int vocab_size) const;

  friend bool operator==(const EditScript&, const EditScript&) = default;
};

/// Wire format: {"op": "delete|replace|insert", "index": n,
///               "words": [{"w": "...", "ph": [ids]}]}
EditScript ParseEditScript(const std::string& json_text);
std::string EditScriptToJson(const EditScript& script);

struct TextEdit {
  PhonemeSequence phonemes;
  /// Word list after the edit. Phoneme ranges are recomputed; frame ranges
  /// of unedited words are copied unchanged and edited words get {-1, -1}.
  std::vector<WordSpan> words;
  /// Phoneme range of the new words in the edited sequence (empty for delete,
  /// positioned where the removed word used to start).
  Range edited_phonemes;
  int removed_phonemes = 0;
  int inserted_phonemes = 0;
};

TextEdit ApplyEditToText(const Utterance& utt, const EditScript& script, int vocab_size);

}  // namespace campnet
