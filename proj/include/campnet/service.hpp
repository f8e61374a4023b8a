// include/campnet/service.hpp

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

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "campnet/corpus.hpp"
#include "campnet/editing.hpp"
#include "campnet/model.hpp"

namespace campnet {

struct ServiceOptions {
  EditOptions edit;
  /// External vocoder: a shell command with {in} (a .campf file) and {out}
  /// (audio to be written) placeholders. Empty disables playback.
  std::string vocoder_command;
};

/// REST editing service over a read-only corpus and a frozen model.
///
///   GET  /utterances                 list of utterance metadata
///   GET  /utterances/{id}            metadata with word spans
///   GET  /utterances/{id}/features   .campf bytes
///   POST /sessions                   {"utterance": id} -> {"session": sid}
///   GET  /sessions/{sid}             current state and history
///   POST /sessions/{sid}/edit        {"script": {...}, "epsilon": n, "word_level": b}
///   POST /sessions/{sid}/undo
///   GET  /sessions/{sid}/view        heatmap, F0, spans, latest attention
///   GET  /sessions/{sid}/features    .campf bytes of the working state
///   GET  /sessions/{sid}/audio       vocoder output, 404 without a hook
class EditService {
 public:
  EditService(Corpus corpus, CampNetModel<float> model, ServiceOptions options = {});
  ~EditService();
  EditService(const EditService&) = delete;
  EditService& operator=(const EditService&) = delete;

  /// Binds to `port` (0 picks a free one) and returns the bound port, or -1.
  int Bind(const std::string& host, int port);
  /// Serves until Stop(); blocks the calling thread.
  bool Listen();
  void Stop();
  void WaitUntilReady() const;

  /// Called with the session id while a mutating request holds that
  /// session's lock. Used to exercise conflict handling.
  void SetMutationHook(std::function<void(const std::string&)> hook);

  /// Working utterance of a session, if it exists.
  std::optional<Utterance> SessionState(const std::string& sid) const;
  /// State rebuilt from the original utterance by replaying the history.
  std::optional<Utterance> ReplayHistory(const std::string& sid) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace campnet
