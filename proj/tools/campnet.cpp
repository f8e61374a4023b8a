// tools/campnet.cpp

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

// Command-line front end: corpus generation, training, adaptation, editing,
// evaluation and the editing service.
//
// Exit codes: 0 ok, 2 usage/config, 3 training, 4 data or edit failure.

#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "campnet/corpus.hpp"
#include "campnet/editing.hpp"
#include "campnet/frontend.hpp"
#include "campnet/metrics.hpp"
#include "campnet/model.hpp"
#include "campnet/service.hpp"
#include "campnet/training.hpp"

namespace fs = std::filesystem;
using namespace campnet;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitTrain = 3;
constexpr int kExitData = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenArgs {
  std::string out;
  int vocab = 10;
  int utts = 200;
  int min_phonemes = 6, max_phonemes = 10;
  int min_frames = 6, max_frames = 10;
  int speakers = 4;
  int first_speaker = 0;
  float noise = 0.03f;
  std::uint64_t seed = 7;
};

struct ModelArgs {
  std::string preset = "toy";
  std::uint64_t init_seed = 1;
};

struct TrainArgs {
  std::string corpus, out, init;
  int steps = 2000;
  int batch = 16;
  double lr = 1e-3;
  double mask_ratio = 0.12;
  bool mask_only_loss = false;
  std::uint64_t seed = 1;
  ModelArgs model;
  std::string ratios = "6,12,16";
};

struct AdaptArgs {
  std::string checkpoint, corpus, out, mode = "few-shot", speaker, utt;
  int epochs = 5;
  int batch = 16;
  double lr = 1e-3;
  double mask_ratio = 0.12;
  std::uint64_t seed = 1;
};

struct EditArgs {
  std::string checkpoint, corpus, utt, script, out;
  int epsilon = kDefaultExpansion;
  bool word_level = false;
  bool duration_guided_delete = false;
};

struct EvalArgs {
  std::string ref, edited, out, reduction = "mean-abs";
};

struct ServeArgs {
  std::string corpus, checkpoint, host = "127.0.0.1", vocoder;
  int port = 8080;
};

ModelConfig MakeModelConfig(const ModelArgs& a, int vocab) {
  if (a.preset == "toy") return ModelConfig::Toy(vocab);
  if (a.preset == "full") {
    ModelConfig c;
    c.vocab_size = vocab;
    return c;
  }
  throw UsageError("unknown model preset '" + a.preset + "' (toy|full)");
}

/// Writes the fully resolved configuration of the active subcommand next to a
/// run's outputs. `campnet --config <file> <subcommand>` replays it.
void WriteRunConfig(const CLI::App& app, const fs::path& dir) {
  fs::create_directories(dir);
  std::string prefix;
  for (const auto* sub : app.get_subcommands()) prefix = sub->get_name() + ".";
  std::ofstream out(dir / "run_config.toml");
  std::stringstream all(app.config_to_str(true, false));
  for (std::string line; std::getline(all, line);)
    if (line.rfind(prefix, 0) == 0) out << line << '\n';
  if (!out) throw IoError("cannot write " + (dir / "run_config.toml").string());
}

std::vector<double> ParseRatios(const std::string& text) {
  std::vector<double> ratios;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      double r = std::stod(item);
      ratios.push_back(r >= 1.0 ? r / 100.0 : r);
    } catch (const std::exception&) {
      throw UsageError("bad ratio '" + item + "'");
    }
  }
  if (ratios.empty()) throw UsageError("no ratios given");
  return ratios;
}

void PrintProgress(int step, const StepRecord& r, int total) {
  if (step == 0 || (step + 1) % 100 == 0 || step + 1 == total)
    std::cerr << "step " << step + 1 << "/" << total << "  loss " << r.loss.total << " (coarse "
              << r.loss.coarse_term << ", fine " << r.loss.fine_term << ")\n";
}

int RunGen(const CLI::App& app, const GenArgs& a) {
  SyntheticCorpusSpec spec;
  spec.vocab_size = a.vocab;
  spec.utterance_count = a.utts;
  spec.phonemes_per_utt = {a.min_phonemes, a.max_phonemes};
  spec.frames_per_phoneme = {a.min_frames, a.max_frames};
  spec.speaker_count = a.speakers;
  spec.first_speaker = a.first_speaker;
  spec.noise_std = a.noise;
  spec.seed = a.seed;
  Corpus corpus;
  try {
    corpus = GenerateSynthetic(spec);
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  }
  SaveCorpus(corpus, a.out);
  WriteRunConfig(app, a.out);
  std::cout << "wrote " << corpus.utterances.size() << " utterances to " << a.out << "\n";
  return 0;
}

int RunTrain(const CLI::App& app, const TrainArgs& a) {
  const Corpus corpus = LoadCorpus(a.corpus);
  if (corpus.utterances.empty()) throw TrainError("corpus " + a.corpus + " has no utterances");
  CampNetModel<float> model = a.init.empty()
                                  ? CampNetModel<float>(MakeModelConfig(a.model, corpus.inventory.vocab_size),
                                                        a.model.init_seed)
                                  : CampNetModel<float>::Load(a.init);
  TrainConfig cfg;
  cfg.steps = a.steps;
  cfg.batch_size = a.batch;
  cfg.lr = a.lr;
  cfg.mask_ratio = a.mask_ratio;
  cfg.mask_only_loss = a.mask_only_loss;
  cfg.seed = a.seed;
  WriteRunConfig(app, a.out);
  const TrainResult result = Train(model, std::span<const Utterance>(corpus.utterances), cfg,
                                   [&](int s, const StepRecord& r) { PrintProgress(s, r, cfg.steps); });
  model.Save(fs::path(a.out) / "model.ckpt");
  WriteLossCsv(result, fs::path(a.out) / "loss.csv");
  std::cout << "final loss " << result.FinalLoss() << "\n";
  return 0;
}

int RunSweep(const CLI::App& app, const TrainArgs& a) {
  const std::vector<double> ratios = ParseRatios(a.ratios);
  const Corpus corpus = LoadCorpus(a.corpus);
  if (corpus.utterances.empty()) throw TrainError("corpus " + a.corpus + " has no utterances");
  const CampNetModel<float> initial = a.init.empty()
      ? CampNetModel<float>(MakeModelConfig(a.model, corpus.inventory.vocab_size), a.model.init_seed)
      : CampNetModel<float>::Load(a.init);
  TrainConfig cfg;
  cfg.steps = a.steps;
  cfg.batch_size = a.batch;
  cfg.lr = a.lr;
  cfg.mask_only_loss = a.mask_only_loss;
  cfg.seed = a.seed;
  WriteRunConfig(app, a.out);
  std::vector<CampNetModel<float>> trained;
  const auto rows = MaskRatioSweep(initial, std::span<const Utterance>(corpus.utterances), ratios, cfg, &trained);
  std::ofstream summary(fs::path(a.out) / "summary.csv");
  summary << "ratio,final_loss\n";
  std::printf("%8s  %12s\n", "ratio", "final_loss");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "ratio_%02d", static_cast<int>(std::lround(rows[i].ratio * 100)));
    const fs::path dir = fs::path(a.out) / name;
    fs::create_directories(dir);
    trained[i].Save(dir / "model.ckpt");
    WriteLossCsv(rows[i].result, dir / "loss.csv");
    summary << rows[i].ratio << ',' << rows[i].final_loss << '\n';
    std::printf("%8.3f  %12.6f\n", rows[i].ratio, rows[i].final_loss);
  }
  return 0;
}

int RunAdapt(const CLI::App& app, const AdaptArgs& a) {
  const Corpus corpus = LoadCorpus(a.corpus);
  CampNetModel<float> model = CampNetModel<float>::Load(a.checkpoint);
  AdaptConfig cfg;
  cfg.epochs = a.epochs;
  cfg.train.batch_size = a.batch;
  cfg.train.lr = a.lr;
  cfg.train.mask_ratio = a.mask_ratio;
  cfg.train.seed = a.seed;
  TrainResult result;
  if (a.mode == "few-shot") {
    std::vector<Utterance> subset;
    for (const auto& u : corpus.utterances)
      if (a.speaker.empty() || u.speaker == a.speaker) subset.push_back(u);
    if (subset.empty()) throw AdaptError("no utterances for speaker '" + a.speaker + "'");
    WriteRunConfig(app, a.out);
    result = AdaptFewShot(model, std::span<const Utterance>(subset), cfg);
  } else if (a.mode == "one-shot") {
    if (a.utt.empty()) throw UsageError("one-shot adaptation needs --utt");
    const Utterance* u = corpus.Find(a.utt);
    if (!u) throw IngestError("unknown utterance " + a.utt);
    WriteRunConfig(app, a.out);
    result = AdaptOneShot(model, *u, cfg);
  } else {
    throw UsageError("unknown adaptation mode '" + a.mode + "' (few-shot|one-shot)");
  }
  model.Save(fs::path(a.out) / "model.ckpt");
  WriteLossCsv(result, fs::path(a.out) / "loss.csv");
  std::cout << "adapted for " << result.steps.size() << " steps, final loss " << result.FinalLoss() << "\n";
  return 0;
}

std::string ReadScriptText(const std::string& arg) {
  if (!arg.empty() && arg.front() == '{') return arg;
  std::ifstream in(arg);
  if (!in) throw UsageError("cannot read edit script " + arg);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int RunEdit(const CLI::App& app, const EditArgs& a) {
  EditScript script;
  try {
    script = ParseEditScript(ReadScriptText(a.script));
  } catch (const EditError& e) {
    throw UsageError(e.what());
  }
  if (a.epsilon < 0) throw UsageError("--epsilon must be >= 0");
  const Corpus corpus = LoadCorpus(a.corpus);
  const Utterance* utt = corpus.Find(a.utt);
  if (!utt) throw IngestError("unknown utterance " + a.utt);
  const CampNetModel<float> model = CampNetModel<float>::Load(a.checkpoint);
  if (model.config().vocab_size < corpus.inventory.vocab_size)
    throw ModelError("checkpoint vocabulary is smaller than the corpus inventory");
  const DurationModel dm = DurationModel::Fit(corpus.utterances, model.config().vocab_size);

  EditOptions opts;
  opts.expansion = a.epsilon;
  opts.duration_guided_delete = a.duration_guided_delete;
  const EditResult result = a.word_level
      ? EditWordLevel(model, *utt, script, dm, opts)
      : EditOneStep(model, *utt, PlanEdit(*utt, script, model.config().vocab_size, dm, opts));

  WriteRunConfig(app, a.out);
  const fs::path feat = fs::path(a.out) / (utt->id + ".campf");
  WriteFeatureFile(result.utterance.features, feat);
  std::ofstream(fs::path(a.out) / (utt->id + ".provenance.json")) << ProvenanceToJson(result, script) << "\n";

  std::cout << "T " << utt->num_frames() << " -> " << result.utterance.num_frames() << "\n";
  for (const auto& step : result.steps) {
    std::cout << "iteration " << step.iteration << " spans";
    for (const auto& s : step.spans) std::cout << " [" << s.start << "," << s.end << ")";
    std::cout << "\n";
  }
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int RunEval(const EvalArgs& a) {
  MetricOptions opts;
  if (a.reduction == "rms") opts.f0_reduction = F0Reduction::kRms;
  else if (a.reduction != "mean-abs") throw UsageError("unknown F0 reduction '" + a.reduction + "'");
  const Corpus ref = LoadCorpus(a.ref);
  opts.f0_hz_per_unit = ref.inventory.f0_hz_per_unit;

  // Edited files are <id>.campf, either directly in the directory or in features/.
  fs::path dir = a.edited;
  if (!fs::is_directory(dir)) throw IoError("no such directory " + a.edited);
  if (fs::is_directory(dir / "features")) dir /= "features";
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".campf") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());

  std::vector<std::string> unpaired;
  for (const auto& id : ids)
    if (!ref.Find(id)) unpaired.push_back(id);
  if (!unpaired.empty()) {
    std::string list;
    for (const auto& id : unpaired) list += " " + id;
    throw IngestError("edited files without a reference utterance:" + list);
  }
  if (ids.empty()) throw IngestError("no edited .campf files in " + a.edited);

  std::ostringstream csv;
  csv.precision(9);
  csv << "utterance_id,mcd_db,f0_rmse,vuv_error_pct,f0_corr\n";
  double sum[4] = {0, 0, 0, 0};
  int count[4] = {0, 0, 0, 0};
  for (const auto& id : ids) {
    const FeatureSequence edited = ReadFeatureFile(dir / (id + ".campf"));
    const MetricsReport r = EvaluateFeatures(ref.Find(id)->features.frames, edited.frames, opts);
    const double v[4] = {r.mcd_db, r.f0_rmse, r.vuv_error_pct, r.f0_corr};
    csv << id;
    for (int k = 0; k < 4; ++k) {
      csv << ',' << v[k];
      if (std::isfinite(v[k])) sum[k] += v[k], ++count[k];
    }
    csv << '\n';
  }
  csv << "mean";
  for (int k = 0; k < 4; ++k) csv << ',' << (count[k] ? sum[k] / count[k] : std::nan(""));
  csv << '\n';

  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(a.out);
    out << csv.str();
    if (!out) throw IoError("cannot write " + a.out);
  }
  return 0;
}

EditService* g_service = nullptr;

int RunServe(const ServeArgs& a) {
  Corpus corpus = LoadCorpus(a.corpus);
  ServiceOptions opts;
  opts.vocoder_command = a.vocoder;
  EditService service(std::move(corpus), CampNetModel<float>::Load(a.checkpoint), opts);
  const int port = service.Bind(a.host, a.port);
  if (port < 0) throw IoError("cannot bind " + a.host + ":" + std::to_string(a.port));
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->Stop();
  });
  std::cout << "listening on http://" << a.host << ":" << port << std::endl;
  service.Listen();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"campnet: text-based speech editing by masked acoustic infilling"};
  app.set_config("--config", "", "TOML configuration file; command-line flags take precedence");
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic corpus");
  gen_cmd->add_option("-o,--out", gen.out, "Output corpus directory")->required();
  gen_cmd->add_option("--vocab", gen.vocab, "Phoneme inventory size")->capture_default_str();
  gen_cmd->add_option("--utts", gen.utts, "Number of utterances")->capture_default_str();
  gen_cmd->add_option("--min-phonemes", gen.min_phonemes)->capture_default_str();
  gen_cmd->add_option("--max-phonemes", gen.max_phonemes)->capture_default_str();
  gen_cmd->add_option("--min-frames", gen.min_frames, "Frames per phoneme, lower bound")->capture_default_str();
  gen_cmd->add_option("--max-frames", gen.max_frames, "Frames per phoneme, upper bound")->capture_default_str();
  gen_cmd->add_option("--speakers", gen.speakers)->capture_default_str();
  gen_cmd->add_option("--first-speaker", gen.first_speaker)->capture_default_str();
  gen_cmd->add_option("--noise", gen.noise, "Frame noise standard deviation")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed)->envname("CAMPNET_SEED")->capture_default_str();

  TrainArgs train;
  auto add_train_options = [](CLI::App* cmd, TrainArgs& t) {
    cmd->add_option("--corpus", t.corpus, "Corpus directory")->required();
    cmd->add_option("-o,--out", t.out, "Output directory")->required();
    cmd->add_option("--init", t.init, "Start from this checkpoint instead of a fresh model");
    cmd->add_option("--model", t.model.preset, "Model preset: toy or full")->capture_default_str();
    cmd->add_option("--init-seed", t.model.init_seed, "Parameter initialisation seed")->capture_default_str();
    cmd->add_option("--steps", t.steps)->capture_default_str();
    cmd->add_option("--batch", t.batch)->capture_default_str();
    cmd->add_option("--lr", t.lr)->capture_default_str();
    cmd->add_flag("--mask-only-loss", t.mask_only_loss, "Score masked frames only");
    cmd->add_option("--seed", t.seed, "Batch, mask and dropout seed")->envname("CAMPNET_SEED")->capture_default_str();
  };
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_train_options(train_cmd, train);
  train_cmd->add_option("--mask-ratio", train.mask_ratio)->capture_default_str();

  TrainArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train one model per mask ratio");
  add_train_options(sweep_cmd, sweep);
  sweep_cmd->add_option("--ratios", sweep.ratios, "Comma-separated ratios, in percent or as fractions")
      ->capture_default_str();

  AdaptArgs adapt;
  auto* adapt_cmd = app.add_subcommand("adapt", "Adapt a trained model to a speaker");
  adapt_cmd->add_option("--checkpoint", adapt.checkpoint)->required();
  adapt_cmd->add_option("--corpus", adapt.corpus)->required();
  adapt_cmd->add_option("-o,--out", adapt.out)->required();
  adapt_cmd->add_option("--mode", adapt.mode, "few-shot or one-shot")->capture_default_str();
  adapt_cmd->add_option("--speaker", adapt.speaker, "Few-shot: restrict to this speaker");
  adapt_cmd->add_option("--utt", adapt.utt, "One-shot: the utterance to adapt on");
  adapt_cmd->add_option("--epochs", adapt.epochs)->capture_default_str();
  adapt_cmd->add_option("--batch", adapt.batch)->capture_default_str();
  adapt_cmd->add_option("--lr", adapt.lr)->capture_default_str();
  adapt_cmd->add_option("--mask-ratio", adapt.mask_ratio)->capture_default_str();
  adapt_cmd->add_option("--seed", adapt.seed)->envname("CAMPNET_SEED")->capture_default_str();

  EditArgs edit;
  auto* edit_cmd = app.add_subcommand("edit", "Apply a transcript edit to an utterance");
  edit_cmd->add_option("--checkpoint", edit.checkpoint)->required();
  edit_cmd->add_option("--corpus", edit.corpus)->required();
  edit_cmd->add_option("--utt", edit.utt)->required();
  edit_cmd->add_option("--script", edit.script, "Edit script JSON, inline or a file path")->required();
  edit_cmd->add_option("-o,--out", edit.out)->required();
  edit_cmd->add_option("--epsilon", edit.epsilon, "Frames re-masked on each side")->capture_default_str();
  edit_cmd->add_flag("--word-level", edit.word_level, "Generate one word per model pass");
  edit_cmd->add_flag("--duration-guided-delete", edit.duration_guided_delete,
                     "Size the delete junction from neighbouring phoneme durations");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score edited features against a reference corpus");
  eval_cmd->add_option("--ref", eval.ref, "Reference corpus directory")->required();
  eval_cmd->add_option("--edited", eval.edited, "Directory of <id>.campf files")->required();
  eval_cmd->add_option("-o,--out", eval.out, "CSV path (stdout when omitted)");
  eval_cmd->add_option("--reduction", eval.reduction, "F0 error reduction: mean-abs or rms")->capture_default_str();

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the editing service");
  serve_cmd->add_option("--corpus", serve.corpus)->required();
  serve_cmd->add_option("--checkpoint", serve.checkpoint)->required();
  serve_cmd->add_option("--host", serve.host)->capture_default_str();
  serve_cmd->add_option("--port", serve.port)->capture_default_str();
  serve_cmd->add_option("--vocoder", serve.vocoder, "Command with {in} and {out} placeholders");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen_cmd) return RunGen(app, gen);
    if (*train_cmd) return RunTrain(app, train);
    if (*sweep_cmd) return RunSweep(app, sweep);
    if (*adapt_cmd) return RunAdapt(app, adapt);
    if (*edit_cmd) return RunEdit(app, edit);
    if (*eval_cmd) return RunEval(eval);
    if (*serve_cmd) return RunServe(serve);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kExitTrain;
  } catch (const AdaptError& e) {
    std::cerr << "adaptation failed: " << e.what() << "\n";
    return kExitTrain;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
