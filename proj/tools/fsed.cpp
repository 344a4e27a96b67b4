// fsed: command line front end for the few-shot sound event detection
// pipeline. Logs go to stderr (FSED_LOG sets the level), data to --out.

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fsed/autodiff/gradcheck.hpp"
#include "fsed/bench/bench.hpp"
#include "fsed/dsp/frontend.hpp"
#include "fsed/error.hpp"
#include "fsed/eval/events.hpp"
#include "fsed/fewshot/fewshot.hpp"
#include "fsed/ingest/annotations.hpp"
#include "fsed/ingest/audio.hpp"
#include "fsed/ingest/config.hpp"
#include "fsed/ingest/synth.hpp"
#include "fsed/log.hpp"
#include "fsed/seed.hpp"
#include "fsed/train/pretrain.hpp"

namespace fs = std::filesystem;
using namespace fsed;

namespace {

constexpr int kUsageError = 2;
constexpr const char* kConfigFile = "config.txt";

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string out;
};

// --config wins; otherwise a config.txt saved next to `artifact`; otherwise
// `fallback`. --seed overrides whatever was loaded.
ingest::RunConfig resolve_config(const Common& c, const fs::path& artifact = {},
                                 const ingest::RunConfig& fallback = {}) {
  ingest::RunConfig cfg = fallback;
  if (!c.config.empty()) {
    cfg = ingest::load_config(c.config);
  } else if (!artifact.empty()) {
    const auto dir = fs::is_directory(artifact) ? artifact : artifact.parent_path();
    if (fs::exists(dir / kConfigFile)) {
      cfg = ingest::load_config(dir / kConfigFile);
      log(LogLevel::info, "using ", (dir / kConfigFile).string());
    }
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) raise(ErrorCategory::config, "--out is required");
  fs::create_directories(out);
  return out;
}

void save_config(const fs::path& dir, const ingest::RunConfig& cfg) {
  std::ofstream f(dir / kConfigFile);
  f << cfg.to_text();
  if (!f) raise(ErrorCategory::io, "cannot write " + (dir / kConfigFile).string());
}

fs::path sibling_csv(const fs::path& wav) { return fs::path(wav).replace_extension(".csv"); }

std::vector<fs::path> fold_checkpoints(const fs::path& ckpt) {
  if (!fs::is_directory(ckpt)) return {ckpt};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(ckpt)) {
    const auto name = e.path().filename().string();
    if (name.rfind("fold", 0) == 0 && e.path().extension() == ".ckpt") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) raise(ErrorCategory::io, "no fold*.ckpt in " + ckpt.string());
  return out;
}

std::vector<eval::Event> as_eval(const std::vector<ingest::AnnotationEvent>& events) {
  std::vector<eval::Event> out;
  for (const auto& e : events) out.push_back({e.onset_s, e.offset_s, 0.0});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.onset_s < b.onset_s; });
  return out;
}

// POS events after the fifth shot; files without Q are taken as they are.
std::vector<ingest::AnnotationEvent> query_reference(std::vector<ingest::AnnotationEvent> events, bool shots) {
  if (!shots) return events;
  auto pos = ingest::filter_label(events, "POS");
  std::sort(pos.begin(), pos.end(), [](const auto& a, const auto& b) { return a.onset_s < b.onset_s; });
  if (pos.size() < ingest::kShots) return {};
  const double query_start = pos[ingest::kShots - 1].offset_s;
  std::vector<ingest::AnnotationEvent> out;
  for (const auto& e : pos) {
    if (e.onset_s >= query_start) out.push_back(e);
  }
  return out;
}

std::map<std::string, std::vector<ingest::AnnotationEvent>> by_file(const std::vector<ingest::AnnotationEvent>& ev) {
  std::map<std::string, std::vector<ingest::AnnotationEvent>> out;
  for (const auto& e : ev) out[e.audio_file].push_back(e);
  return out;
}

bool has_q_column(const fs::path& csv) {
  std::ifstream f(csv);
  std::string header;
  std::getline(f, header);
  return header.find('Q') != std::string::npos;
}

int cmd_synth(const Common& c) {
  const auto out = prepare_out(c.out);
  const auto cfg = resolve_config(c);
  ingest::write_dataset(ingest::synth_dataset(ingest::default_bench_spec(), cfg.seed), out);
  std::cout << "wrote " << (out / "base").string() << " and " << (out / "novel").string() << '\n';
  return 0;
}

int cmd_features(const Common& c, const std::vector<std::string>& wavs) {
  const auto out = prepare_out(c.out);
  const auto cfg = resolve_config(c);
  for (const auto& w : wavs) {
    const auto features = dsp::extract_features(ingest::read_wav(w), cfg);
    const auto path = out / (fs::path(w).stem().string() + ".pcen");
    dsp::write_feature_dump(path, features);
    std::cout << path.string() << ' ' << features.frames() << 'x' << features.bands() << '\n';
  }
  return 0;
}

int cmd_pretrain(const Common& c, const std::string& data) {
  const auto out = prepare_out(c.out);
  const auto cfg = resolve_config(c);
  const auto corpus = train::load_base_corpus(data, cfg);
  std::ofstream csv(out / "metrics.csv");
  const auto result = train::pretrain(corpus, cfg, &csv);
  for (std::size_t k = 0; k < result.fold_models.size(); ++k) {
    model::save_model(out / ("fold" + std::to_string(k) + ".ckpt"), result.fold_models[k]);
  }
  save_config(out, cfg);
  std::cout << "saved " << result.fold_models.size() << " fold model(s) to " << out.string() << '\n';
  return 0;
}

int cmd_finetune(const Common& c, const std::string& ckpt, const std::string& wav, const std::string& data) {
  const auto out = prepare_out(c.out);
  const auto cfg = resolve_config(c, ckpt);
  std::vector<model::Model> folds;
  for (const auto& p : fold_checkpoints(ckpt)) folds.push_back(model::load_model(p));
  std::vector<framing::WindowBatch> base;
  if (!data.empty()) {
    auto corpus = train::load_base_corpus(data, cfg);
    if (corpus.classes.names() != folds.front().class_names) {
      raise(ErrorCategory::config, "--data classes differ from the classes the checkpoint was trained on");
    }
    base = std::move(corpus.windows);
  }
  const fs::path csv = sibling_csv(wav);
  const auto task = fewshot::load_task(wav, csv, cfg);
  fewshot::TaskBundle bundle;
  bundle.wav = fs::absolute(wav);
  bundle.csv = fs::absolute(csv);
  for (std::size_t k = 0; k < folds.size(); ++k) {
    fewshot::FinetuneLog lg;
    bundle.folds.push_back(fewshot::adapt(folds[k], task, base, cfg, derive_seed(cfg.seed, 3), &lg));
    if (!lg.bin_loss.empty()) {
      log(LogLevel::info, "fold ", k, ": binary loss ", lg.bin_loss.front(), " -> ", lg.bin_loss.back(),
          ", pseudo-label cycles run ", lg.pseudo_cycles_run);
    }
  }
  const auto path = out / (fs::path(wav).stem().string() + ".task");
  fewshot::save_task_bundle(path, bundle);
  save_config(out, cfg);
  std::cout << path.string() << '\n';
  return 0;
}

int cmd_detect(const Common& c, const std::string& task_ckpt, const std::string& wav_override) {
  const auto out = prepare_out(c.out);
  const auto cfg = resolve_config(c, task_ckpt);
  auto bundle = fewshot::load_task_bundle(task_ckpt);
  const fs::path wav = wav_override.empty() ? bundle.wav : fs::path(wav_override);
  const fs::path csv = wav_override.empty() ? bundle.csv : sibling_csv(wav);
  const auto task = fewshot::load_task(wav, csv, cfg);
  const auto events = fewshot::detect_events(bundle.folds, task, cfg);
  const auto path = out / (wav.stem().string() + ".csv");
  ingest::write_annotations(path, events, false);
  std::cout << path.string() << ' ' << events.size() << " events\n";
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& pred_path, const std::string& ref_path, double iou) {
  const auto pred = by_file(ingest::read_annotations(pred_path, false));
  const auto ref = by_file(query_reference(ingest::read_annotations(ref_path, false), has_q_column(ref_path)));
  std::vector<eval::Counts> per_clip;
  std::map<std::string, bool> files;
  for (const auto& [f, _] : pred) files[f] = true;
  for (const auto& [f, _] : ref) files[f] = true;
  for (const auto& [f, _] : files) {
    const auto p = pred.count(f) ? as_eval(pred.at(f)) : std::vector<eval::Event>{};
    const auto r = ref.count(f) ? as_eval(ref.at(f)) : std::vector<eval::Event>{};
    per_clip.push_back(eval::match_events(p, r, iou));
  }
  const auto report = eval::fscore(per_clip);
  std::cout << eval::report_table(report) << eval::report_json(report) << '\n';
  if (!c.out.empty()) {
    std::ofstream(prepare_out(c.out) / "score.json") << eval::report_json(report) << '\n';
  }
  return 0;
}

int cmd_gradcheck(const Common& c, int seeds) {
  (void)c;
  constexpr double kTolerance = 1e-4;
  bool ok = true;
  for (const auto& r : ad::run_gradient_suite(seeds)) {
    const bool pass = r.max_rel_error < kTolerance;
    ok = ok && pass;
    std::printf("%-28s %d seeds  max rel err %.3e  %s\n", r.op.c_str(), r.seeds, r.max_rel_error,
                pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

int cmd_bench(const Common& c, bool timings) {
  const auto out = prepare_out(c.out);
  const auto cfg = resolve_config(c, {}, bench::bench_config());
  const auto report = bench::run_bench(cfg, ingest::default_bench_spec(), cfg.seed, out, c.jobs);
  const auto json = bench::report_json(report, timings);
  std::ofstream(out / "report.json") << json << '\n';
  std::cerr << bench::report_table(report);
  std::cout << json << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot sound event detection: synthetic data, pretraining, adaptation, detection, scoring"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Master seed (overrides the config)");
    sub->add_option("--jobs", common.jobs, "Worker threads for per-task work")->check(CLI::PositiveNumber);
    sub->add_option("--out", common.out, "Output directory");
  };

  auto* synth = app.add_subcommand("synth-data", "Write the synthetic base/novel dataset");
  add_common(synth);

  std::vector<std::string> wavs;
  auto* features = app.add_subcommand("features", "PCEN feature dumps of wave files");
  add_common(features);
  features->add_option("wav", wavs, "Wave files")->required()->check(CLI::ExistingFile);

  std::string data;
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain fold models on a base-class directory");
  add_common(pretrain);
  pretrain->add_option("--data", data, "Directory of base wav/csv pairs")->required()->check(CLI::ExistingDirectory);

  std::string ckpt, task_wav, finetune_data;
  auto* finetune = app.add_subcommand("finetune", "Adapt pretrained models to one few-shot task");
  add_common(finetune);
  finetune->add_option("--ckpt", ckpt, "Pretraining output directory or a single .ckpt")
      ->required()
      ->check(CLI::ExistingPath);
  finetune->add_option("--task", task_wav, "Task wave file (annotations in the .csv beside it)")
      ->required()
      ->check(CLI::ExistingFile);
  finetune->add_option("--data", finetune_data, "Base directory to mix into SED fine-tuning")
      ->check(CLI::ExistingDirectory);

  std::string task_ckpt, detect_wav;
  auto* detect = app.add_subcommand("detect", "Detect POS events in a task's query region");
  add_common(detect);
  detect->add_option("--task-ckpt", task_ckpt, "Bundle written by finetune")->required()->check(CLI::ExistingFile);
  detect->add_option("--task", detect_wav, "Wave file to use instead of the one stored in the bundle")
      ->check(CLI::ExistingFile);

  std::string pred, ref;
  double iou = 0.3;
  auto* evaluate = app.add_subcommand("evaluate", "Event-level precision, recall and F");
  add_common(evaluate);
  evaluate->add_option("--pred", pred, "Predicted events CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--ref", ref, "Reference annotations CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--iou", iou, "Minimum IoU for a hit")->check(CLI::Range(0.0, 1.0));

  int seeds = 10;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  add_common(gradcheck);
  gradcheck->add_option("--seeds", seeds, "Random instances per op")->check(CLI::PositiveNumber);

  bool timings = false;
  auto* bench_cmd = app.add_subcommand("bench", "End-to-end synthetic benchmark with ablations");
  add_common(bench_cmd);
  bench_cmd->add_flag("--timings", timings, "Include wall-clock timings in the JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*synth) return cmd_synth(common);
    if (*features) return cmd_features(common, wavs);
    if (*pretrain) return cmd_pretrain(common, data);
    if (*finetune) return cmd_finetune(common, ckpt, task_wav, finetune_data);
    if (*detect) return cmd_detect(common, task_ckpt, detect_wav);
    if (*evaluate) return cmd_evaluate(common, pred, ref, iou);
    if (*gradcheck) return cmd_gradcheck(common, seeds);
    if (*bench_cmd) return cmd_bench(common, timings);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.category()) << "]: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error [io]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [unexpected]: " << e.what() << '\n';
    return 1;
  }
  return kUsageError;
}
