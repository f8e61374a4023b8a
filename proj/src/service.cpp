// src/service.cpp

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

#include "campnet/service.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "campnet/metrics.hpp"

namespace campnet {

using nlohmann::json;

namespace {

struct EditRequest {
  EditScript script;
  int expansion = kDefaultExpansion;
  bool word_level = false;
};

struct Session {
  std::string id;
  const Utterance* original = nullptr;
  Utterance current;
  std::vector<int> provenance;
  std::vector<EditRequest> history;
  std::optional<EditResult> latest;  // last edit, for the attention view
  mutable std::mutex mu;
};

json WordsJson(const std::vector<WordSpan>& words) {
  json a = json::array();
  for (const auto& w : words)
    a.push_back({{"word", w.word},
                 {"phoneme_range", {w.phonemes.begin, w.phonemes.end}},
                 {"frame_range", {w.frames.begin, w.frames.end}}});
  return a;
}

json UtteranceJson(const Utterance& u) {
  return {{"id", u.id},
          {"speaker", u.speaker},
          {"frames", u.num_frames()},
          {"hop_ms", u.features.hop_ms},
          {"phonemes", u.phonemes.ids},
          {"words", WordsJson(u.words)}};
}

json SpansJson(const std::vector<MaskSpan>& spans) {
  json a = json::array();
  for (const auto& s : spans) a.push_back({s.start, s.end});
  return a;
}

/// Head-averaged cross-attention of the last coarse block.
Matrix<float> LatestAttention(const EditResult& r) {
  if (r.steps.empty() || r.steps.back().attention.empty()) return {};
  const auto& heads = r.steps.back().attention.back();
  Matrix<float> mean = Matrix<float>::Zero(heads[0].rows(), heads[0].cols());
  for (const auto& h : heads) mean += h;
  return mean / static_cast<float>(heads.size());
}

json MatrixJson(const Matrix<float>& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    rows.push_back(std::vector<float>(m.row(r).data(), m.row(r).data() + m.cols()));
  return rows;
}

void SendJson(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void SendError(httplib::Response& res, int status, const std::string& message) {
  SendJson(res, status, {{"error", message}});
}

}  // namespace

struct EditService::Impl {
  Corpus corpus;
  CampNetModel<float> model;
  ServiceOptions options;
  DurationModel durations;
  httplib::Server server;

  mutable std::mutex sessions_mu;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::atomic<int> next_session{1};
  std::function<void(const std::string&)> hook;

  std::shared_ptr<Session> Find(const std::string& sid) const {
    std::lock_guard<std::mutex> lock(sessions_mu);
    auto it = sessions.find(sid);
    return it == sessions.end() ? nullptr : it->second;
  }

  EditResult Run(const Utterance& utt, const EditRequest& req) const {
    EditOptions opts = options.edit;
    opts.expansion = req.expansion;
    if (req.word_level) return EditWordLevel(model, utt, req.script, durations, opts);
    const EditPlan plan = PlanEdit(utt, req.script, model.config().vocab_size, durations, opts);
    return EditOneStep(model, utt, plan);
  }

  /// Rebuilds a session's state from its original utterance.
  void Replay(const Utterance& original, const std::vector<EditRequest>& history, Utterance* state,
              std::vector<int>* provenance, std::optional<EditResult>* latest) const {
    *state = original;
    provenance->resize(original.num_frames());
    for (int t = 0; t < original.num_frames(); ++t) (*provenance)[t] = t;
    latest->reset();
    for (const auto& req : history) {
      EditResult r = Run(*state, req);
      std::vector<int> composed(r.provenance.size());
      for (std::size_t t = 0; t < composed.size(); ++t)
        composed[t] = r.provenance[t] == kMaskedFrame ? kMaskedFrame : (*provenance)[r.provenance[t]];
      *provenance = std::move(composed);
      *state = r.utterance;
      *latest = std::move(r);
    }
  }

  json StateJson(const Session& s) const {
    json history = json::array();
    for (const auto& h : s.history)
      history.push_back({{"script", json::parse(EditScriptToJson(h.script))},
                         {"epsilon", h.expansion},
                         {"word_level", h.word_level}});
    json out = UtteranceJson(s.current);
    out["session"] = s.id;
    out["utterance"] = s.original->id;
    out["history"] = history;
    out["generated"] = SpansJson(MaskedRuns(s.provenance));
    return out;
  }

  void Routes();
  void HandleEdit(const httplib::Request& req, httplib::Response& res);
  void HandleUndo(const httplib::Request& req, httplib::Response& res);
  void HandleView(const httplib::Request& req, httplib::Response& res);
  void HandleAudio(const httplib::Request& req, httplib::Response& res);
};

void EditService::Impl::Routes() {
  server.Get("/health", [](const httplib::Request&, httplib::Response& res) { SendJson(res, 200, {{"ok", true}}); });

  server.Get("/utterances", [this](const httplib::Request&, httplib::Response& res) {
    json list = json::array();
    for (const auto& u : corpus.utterances) list.push_back(UtteranceJson(u));
    SendJson(res, 200, list);
  });

  server.Get(R"(/utterances/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const Utterance* u = corpus.Find(req.matches[1]);
    if (!u) return SendError(res, 404, "unknown utterance " + std::string(req.matches[1]));
    SendJson(res, 200, UtteranceJson(*u));
  });

  server.Get(R"(/utterances/([^/]+)/features)", [this](const httplib::Request& req, httplib::Response& res) {
    const Utterance* u = corpus.Find(req.matches[1]);
    if (!u) return SendError(res, 404, "unknown utterance " + std::string(req.matches[1]));
    res.set_content(EncodeFeatures(u->features), "application/octet-stream");
  });

  server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    std::string utt_id;
    try {
      utt_id = json::parse(req.body).at("utterance").get<std::string>();
    } catch (const json::exception& e) {
      return SendError(res, 422, std::string("expected {\"utterance\": id}: ") + e.what());
    }
    const Utterance* u = corpus.Find(utt_id);
    if (!u) return SendError(res, 404, "unknown utterance " + utt_id);
    auto s = std::make_shared<Session>();
    s->id = "s" + std::to_string(next_session++);
    s->original = u;
    Replay(*u, {}, &s->current, &s->provenance, &s->latest);
    {
      std::lock_guard<std::mutex> lock(sessions_mu);
      sessions[s->id] = s;
    }
    std::lock_guard<std::mutex> lock(s->mu);
    SendJson(res, 201, StateJson(*s));
  });

  server.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto s = Find(req.matches[1]);
    if (!s) return SendError(res, 404, "unknown session");
    std::lock_guard<std::mutex> lock(s->mu);
    SendJson(res, 200, StateJson(*s));
  });

  server.Get(R"(/sessions/([^/]+)/features)", [this](const httplib::Request& req, httplib::Response& res) {
    auto s = Find(req.matches[1]);
    if (!s) return SendError(res, 404, "unknown session");
    std::lock_guard<std::mutex> lock(s->mu);
    res.set_content(EncodeFeatures(s->current.features), "application/octet-stream");
  });

  server.Post(R"(/sessions/([^/]+)/edit)",
              [this](const httplib::Request& req, httplib::Response& res) { HandleEdit(req, res); });
  server.Post(R"(/sessions/([^/]+)/undo)",
              [this](const httplib::Request& req, httplib::Response& res) { HandleUndo(req, res); });
  server.Get(R"(/sessions/([^/]+)/view)",
             [this](const httplib::Request& req, httplib::Response& res) { HandleView(req, res); });
  server.Get(R"(/sessions/([^/]+)/audio)",
             [this](const httplib::Request& req, httplib::Response& res) { HandleAudio(req, res); });
}

void EditService::Impl::HandleEdit(const httplib::Request& req, httplib::Response& res) {
  auto s = Find(req.matches[1]);
  if (!s) return SendError(res, 404, "unknown session");

  EditRequest edit;
  edit.expansion = options.edit.expansion;
  try {
    const json body = json::parse(req.body);
    edit.script = ParseEditScript(body.at("script").dump());
    edit.expansion = body.value("epsilon", edit.expansion);
    edit.word_level = body.value("word_level", false);
    if (edit.expansion < 0) throw EditError("epsilon must be >= 0");
  } catch (const json::exception& e) {
    return SendError(res, 422, std::string("malformed edit request: ") + e.what());
  } catch (const EditError& e) {
    return SendError(res, 422, e.what());
  }

  std::unique_lock<std::mutex> lock(s->mu, std::try_to_lock);
  if (!lock.owns_lock()) return SendError(res, 409, "another edit on this session is in flight");
  if (hook) hook(s->id);

  EditResult result;
  try {
    result = Run(s->current, edit);
  } catch (const EditError& e) {
    return SendError(res, 422, e.what());
  } catch (const Error& e) {
    return SendError(res, 500, e.what());
  }

  std::vector<int> composed(result.provenance.size());
  for (std::size_t t = 0; t < composed.size(); ++t)
    composed[t] = result.provenance[t] == kMaskedFrame ? kMaskedFrame : s->provenance[result.provenance[t]];
  s->provenance = std::move(composed);
  s->current = result.utterance;
  s->history.push_back(edit);

  json steps = json::array();
  for (const auto& st : result.steps)
    steps.push_back({{"iteration", st.iteration},
                     {"word", st.word},
                     {"length", st.length},
                     {"spans", SpansJson(st.spans)},
                     {"coarse_passes", st.coarse_passes},
                     {"fine_passes", st.fine_passes},
                     {"attention_mass", std::isfinite(st.attention_mass) ? json(st.attention_mass) : json()}});
  json out = StateJson(*s);
  out["length"] = result.utterance.num_frames();
  out["spans"] = result.steps.empty() ? json::array() : SpansJson(result.steps.back().spans);
  out["steps"] = steps;
  out["provenance"] = s->provenance;
  out["warnings"] = result.warnings;
  s->latest = std::move(result);
  SendJson(res, 200, out);
}

void EditService::Impl::HandleUndo(const httplib::Request& req, httplib::Response& res) {
  auto s = Find(req.matches[1]);
  if (!s) return SendError(res, 404, "unknown session");
  std::unique_lock<std::mutex> lock(s->mu, std::try_to_lock);
  if (!lock.owns_lock()) return SendError(res, 409, "another edit on this session is in flight");
  if (hook) hook(s->id);
  if (s->history.empty()) return SendError(res, 409, "nothing to undo");
  s->history.pop_back();
  Replay(*s->original, s->history, &s->current, &s->provenance, &s->latest);
  SendJson(res, 200, StateJson(*s));
}

void EditService::Impl::HandleView(const httplib::Request& req, httplib::Response& res) {
  auto s = Find(req.matches[1]);
  if (!s) return SendError(res, 404, "unknown session");
  std::lock_guard<std::mutex> lock(s->mu);
  const FeatureMatrix& y = s->current.features.frames;
  const F0Contour f0 = DecodeF0(y, corpus.inventory.f0_hz_per_unit);
  json view = StateJson(*s);
  view["heatmap"] = MatrixJson(y.leftCols(kBfccDim).cast<float>());
  view["f0"] = {{"hz", std::vector<double>(f0.hz.data(), f0.hz.data() + f0.hz.size())}, {"voiced", f0.voiced}};
  view["vocoder"] = !options.vocoder_command.empty();
  if (s->latest) {
    const Matrix<float> att = LatestAttention(*s->latest);
    if (att.size() > 0) view["attention"] = MatrixJson(att);
    view["spans"] = SpansJson(s->latest->steps.back().spans);
  }
  SendJson(res, 200, view);
}

void EditService::Impl::HandleAudio(const httplib::Request& req, httplib::Response& res) {
  if (options.vocoder_command.empty()) return SendError(res, 404, "no vocoder hook configured");
  auto s = Find(req.matches[1]);
  if (!s) return SendError(res, 404, "unknown session");
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path();
  const std::string stem = "campnet_" + s->id + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(&res));
  const fs::path in = dir / (stem + ".campf"), out = dir / (stem + ".wav");
  {
    std::lock_guard<std::mutex> lock(s->mu);
    WriteFeatureFile(s->current.features, in);
  }
  std::string cmd = options.vocoder_command;
  for (auto [key, value] : {std::pair<std::string, std::string>{"{in}", in.string()}, {"{out}", out.string()}})
    for (std::size_t p; (p = cmd.find(key)) != std::string::npos;) cmd.replace(p, key.size(), value);
  const int rc = std::system(cmd.c_str());
  std::ifstream f(out, std::ios::binary);
  std::error_code ec;
  fs::remove(in, ec);
  if (rc != 0 || !f) {
    fs::remove(out, ec);
    return SendError(res, 502, "vocoder hook failed");
  }
  std::ostringstream bytes;
  bytes << f.rdbuf();
  f.close();
  fs::remove(out, ec);
  res.set_content(bytes.str(), "audio/wav");
}

EditService::EditService(Corpus corpus, CampNetModel<float> model, ServiceOptions options)
    : impl_(std::make_unique<Impl>()) {
  if (model.config().vocab_size < corpus.inventory.vocab_size)
    throw ModelError("checkpoint vocabulary is smaller than the corpus inventory");
  impl_->corpus = std::move(corpus);
  impl_->model = std::move(model);
  impl_->options = std::move(options);
  impl_->durations = DurationModel::Fit(impl_->corpus.utterances, impl_->model.config().vocab_size);
  impl_->Routes();
}

EditService::~EditService() { Stop(); }

int EditService::Bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool EditService::Listen() { return impl_->server.listen_after_bind(); }

void EditService::Stop() {
  if (impl_) impl_->server.stop();
}

void EditService::WaitUntilReady() const { impl_->server.wait_until_ready(); }

void EditService::SetMutationHook(std::function<void(const std::string&)> hook) { impl_->hook = std::move(hook); }

std::optional<Utterance> EditService::SessionState(const std::string& sid) const {
  auto s = impl_->Find(sid);
  if (!s) return std::nullopt;
  std::lock_guard<std::mutex> lock(s->mu);
  return s->current;
}

std::optional<Utterance> EditService::ReplayHistory(const std::string& sid) const {
  auto s = impl_->Find(sid);
  if (!s) return std::nullopt;
  std::vector<EditRequest> history;
  {
    std::lock_guard<std::mutex> lock(s->mu);
    history = s->history;
  }
  Utterance state;
  std::vector<int> provenance;
  std::optional<EditResult> latest;
  impl_->Replay(*s->original, history, &state, &provenance, &latest);
  return state;
}

}  // namespace campnet
