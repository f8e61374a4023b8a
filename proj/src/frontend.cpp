// src/frontend.cpp

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

#include "campnet/frontend.hpp"

#include <json.hpp>

namespace campnet {

using nlohmann::json;

const char* ToString(EditOp op) {
  switch (op) {
    case EditOp::kDelete: return "delete";
    case EditOp::kReplace: return "replace";
    case EditOp::kInsert: return "insert";
  }
  return "?";
}

EditOp EditOpFromString(const std::string& s) {
  if (s == "delete") return EditOp::kDelete;
  if (s == "replace") return EditOp::kReplace;
  if (s == "insert") return EditOp::kInsert;
  throw EditError("unknown edit op '" + s + "'");
}

void EditScript::Validate(int word_count, int vocab_size) const {
  if (op == EditOp::kInsert) {
    if (index < 0 || index > word_count)
      throw EditError("insert boundary " + std::to_string(index) + " outside [0, " +
                      std::to_string(word_count) + "]");
  } else if (index < 0 || index >= word_count) {
    throw EditError("word index " + std::to_string(index) + " outside [0, " +
                    std::to_string(word_count) + ")");
  }
  if (op == EditOp::kDelete && !words.empty()) throw EditError("delete takes no new words");
  if (op != EditOp::kDelete && words.empty())
    throw EditError(std::string(ToString(op)) + " needs at least one new word");
  for (const auto& w : words) {
    if (w.phonemes.empty()) throw EditError("new word '" + w.word + "' has no phonemes");
    for (int id : w.phonemes)
      if (id < 0 || id >= vocab_size)
        throw EditError("new word '" + w.word + "' uses phoneme id " + std::to_string(id) +
                        " outside inventory");
  }
}

EditScript ParseEditScript(const std::string& json_text) {
  EditScript script;
  try {
    const json j = json::parse(json_text);
    script.op = EditOpFromString(j.at("op").get<std::string>());
    script.index = j.at("index").get<int>();
    if (j.contains("words"))
      for (const auto& w : j.at("words"))
        script.words.push_back({w.value("w", ""), w.at("ph").get<std::vector<int>>()});
  } catch (const json::exception& e) {
    throw EditError(std::string("malformed edit script: ") + e.what());
  }
  return script;
}

std::string EditScriptToJson(const EditScript& script) {
  json words = json::array();
  for (const auto& w : script.words) words.push_back({{"w", w.word}, {"ph", w.phonemes}});
  return json{{"op", ToString(script.op)}, {"index", script.index}, {"words", words}}.dump();
}

TextEdit ApplyEditToText(const Utterance& utt, const EditScript& script, int vocab_size) {
  script.Validate(utt.num_words(), vocab_size);
  const auto& ids = utt.phonemes.ids;

  // Phoneme cut [cut_begin, cut_end) and word cut [word_begin, word_end).
  int cut_begin = 0, cut_end = 0, word_begin = 0, word_end = 0;
  if (script.op == EditOp::kInsert) {
    word_begin = word_end = script.index;
    cut_begin = cut_end = script.index < utt.num_words() ? utt.words[script.index].phonemes.begin
                          : utt.words.empty()           ? utt.phonemes.size()
                                                        : utt.words.back().phonemes.end;
  } else {
    word_begin = script.index;
    word_end = script.index + 1;
    cut_begin = utt.words[script.index].phonemes.begin;
    cut_end = utt.words[script.index].phonemes.end;
  }

  TextEdit out;
  out.removed_phonemes = cut_end - cut_begin;
  out.phonemes.ids.assign(ids.begin(), ids.begin() + cut_begin);
  std::vector<WordSpan> inserted;
  for (const auto& w : script.words) {
    const int begin = static_cast<int>(out.phonemes.ids.size());
    out.phonemes.ids.insert(out.phonemes.ids.end(), w.phonemes.begin(), w.phonemes.end());
    inserted.push_back({w.word, {begin, static_cast<int>(out.phonemes.ids.size())}, {-1, -1}});
  }
  out.inserted_phonemes = static_cast<int>(out.phonemes.ids.size()) - cut_begin;
  out.edited_phonemes = {cut_begin, cut_begin + out.inserted_phonemes};
  out.phonemes.ids.insert(out.phonemes.ids.end(), ids.begin() + cut_end, ids.end());
  if (out.phonemes.ids.empty()) throw EditError("edit would leave an empty transcript");

  const int shift = out.inserted_phonemes - out.removed_phonemes;
  for (int i = 0; i < word_begin; ++i) out.words.push_back(utt.words[i]);
  for (auto& w : inserted) out.words.push_back(std::move(w));
  for (int i = word_end; i < utt.num_words(); ++i) {
    WordSpan w = utt.words[i];
    w.phonemes.begin += shift;
    w.phonemes.end += shift;
    out.words.push_back(std::move(w));
  }
  return out;
}

}  // namespace campnet
