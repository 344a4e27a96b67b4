#include "fsed/bench/bench.hpp"

#include <atomic>
#include <chrono>
#include <iomanip>
#include <map>
#include <json.hpp>
#include <mutex>
#include <sstream>
#include <thread>

#include "fsed/error.hpp"
#include "fsed/fewshot/fewshot.hpp"
#include "fsed/log.hpp"
#include "fsed/seed.hpp"
#include "fsed/train/pretrain.hpp"

namespace fsed::bench {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
// is rethrown after every worker has stopped.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<eval::Event> as_eval(const std::vector<ingest::AnnotationEvent>& events) {
  std::vector<eval::Event> out;
  for (const auto& e : events) out.push_back({e.onset_s, e.offset_s, 0.0});
  return out;
}

ingest::RunConfig with_toggles(ingest::RunConfig cfg, const Toggles& t) {
  cfg.multitask = t.multitask;
  cfg.use_transformer = t.transformer;
  cfg.time_filter_aug = t.time_filter_aug;
  if (!t.pseudo_label) cfg.pseudo_cycles = 0;
  return cfg;
}

// Fraction of frames of held-out Support2-style windows whose SFBC argmax
// matches the POS/NEG label.
double sfbc_accuracy(fewshot::TaskModel& tm, const fewshot::TaskData& task, const ingest::RunConfig& cfg,
                     std::uint64_t seed) {
  if (tm.sfbc_center.empty()) return 0.0;
  const auto windows = fewshot::build_supports(task.pos_material, task.neg_material,
                                               static_cast<std::size_t>(cfg.support_windows),
                                               tm.model.config().win, seed);
  const auto c = ad::Tensor::constant({1, tm.sfbc_center.size()}, tm.sfbc_center);
  std::size_t hit = 0, total = 0;
  for (const auto& w : windows) {
    const auto logits = tm.model.sfbc_forward(tm.model.embed(w.features, {ad::BnMode::eval, false}), c);
    const auto v = logits.values();
    for (std::size_t t = 0; t < w.valid_frames; ++t) {
      const int pred = v[2 * t + 1] > v[2 * t] ? 1 : 0;
      hit += pred == w.sfbc_labels[t];
      ++total;
    }
  }
  return total > 0 ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

std::string toggles_name(const Toggles& t) {
  if (t.multitask && t.transformer && t.time_filter_aug && t.pseudo_label) return "full";
  if (!t.multitask) return "-multitask";
  if (!t.transformer) return "-transformer";
  if (!t.time_filter_aug) return "-aug";
  return "-pseudo";
}

}  // namespace

ingest::RunConfig bench_config() {
  ingest::RunConfig cfg;
  cfg.channels = 32;
  cfg.embed_dim = 32;  // transformer tokens are 2 * 32 = 64 wide
  cfg.tf_heads = 8;
  cfg.tf_ffn = 256;
  cfg.speed_factors = {1.0};
  cfg.kfold = 1;
  cfg.iters = 3;
  cfg.step_size = 100;
  return cfg;
}

Report run_bench(const ingest::RunConfig& cfg, const ingest::SynthSpec& spec, std::uint64_t seed,
                 const std::filesystem::path& out, int jobs) {
  cfg.validate();
  const auto t_total = Clock::now();
  Report report;
  report.config_hash = ingest::config_hash(cfg);
  report.seed = seed;

  auto t0 = Clock::now();
  const auto data_dir = out / "data";
  ingest::write_dataset(ingest::synth_dataset(spec, derive_seed(seed, 1)), data_dir);
  report.timings.emplace_back("synth", seconds_since(t0));

  t0 = Clock::now();
  const auto corpus = train::load_base_corpus(data_dir / "base", cfg);
  std::vector<fewshot::TaskData> tasks;
  std::vector<std::string> stems;
  for (const auto& [wav, csv] : ingest::list_pairs(data_dir / "novel")) {
    tasks.push_back(fewshot::load_task(wav, csv, cfg));
    stems.push_back(wav.stem().string());
  }
  if (tasks.empty()) raise(ErrorCategory::io, "benchmark produced no novel tasks");
  report.timings.emplace_back("features", seconds_since(t0));

  // One pretraining per architecture; the augmentation and pseudo-label
  // ablations only change fine-tuning and share the full model.
  const std::vector<Toggles> rows{
      {}, {false, true, true, true}, {true, false, true, true}, {true, true, false, true}, {true, true, true, false}};
  std::map<std::pair<bool, bool>, train::PretrainResult> pretrained;
  for (const auto& t : rows) {
    const auto key = std::make_pair(t.multitask, t.transformer);
    if (pretrained.count(key) != 0) continue;
    t0 = Clock::now();
    auto pcfg = with_toggles(cfg, t);
    pcfg.seed = derive_seed(seed, 2);
    log(LogLevel::info, "bench: pretraining ", toggles_name(t));
    pretrained.emplace(key, train::pretrain(corpus, pcfg));
    report.timings.emplace_back("pretrain " + toggles_name(t), seconds_since(t0));
  }

  // Per task and fold: adapted models for every row. The "-pseudo" row is
  // the full adaptation stopped before pseudo-labeling.
  const std::size_t n_rows = rows.size();
  std::vector<std::vector<std::vector<fewshot::TaskModel>>> models(
      n_rows, std::vector<std::vector<fewshot::TaskModel>>(tasks.size()));
  std::vector<double> sfbc_acc(tasks.size(), 0.0);
  t0 = Clock::now();
  parallel_for(tasks.size(), jobs, [&](std::size_t i) {
    for (std::size_t r = 0; r + 1 < n_rows; ++r) {
      const auto rcfg = with_toggles(cfg, rows[r]);
      const auto& folds = pretrained.at({rows[r].multitask, rows[r].transformer}).fold_models;
      for (std::size_t k = 0; k < folds.size(); ++k) {
        fewshot::TaskModel unrefined;
        const bool full = r == 0;
        models[r][i].push_back(fewshot::adapt(folds[k], tasks[i], corpus.windows, rcfg, derive_seed(seed, 3, i),
                                              nullptr, full ? &unrefined : nullptr));
        if (full) models[n_rows - 1][i].push_back(std::move(unrefined));
      }
      log(LogLevel::info, "bench: adapted ", stems[i], " for ", toggles_name(rows[r]));
    }
    double acc = 0.0;
    for (auto& tm : models[0][i]) acc += sfbc_accuracy(tm, tasks[i], cfg, derive_seed(seed, 4, i));
    sfbc_acc[i] = acc / static_cast<double>(models[0][i].size());
  });
  report.timings.emplace_back("adapt", seconds_since(t0));

  t0 = Clock::now();
  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto name = toggles_name(rows[r]);
    const auto rcfg = with_toggles(cfg, rows[r]);
    std::vector<eval::Counts> per_clip(tasks.size());
    std::filesystem::create_directories(out / "pred" / name);
    parallel_for(tasks.size(), jobs, [&](std::size_t i) {
      const auto events = fewshot::detect_events(models[r][i], tasks[i], rcfg);
      ingest::write_annotations(out / "pred" / name / (stems[i] + ".csv"), events, false);
      per_clip[i] = eval::match_events(as_eval(events), as_eval(tasks[i].reference), cfg.iou_min);
    });
    report.rows.push_back({name, rows[r], eval::fscore(per_clip)});
  }
  report.timings.emplace_back("detect", seconds_since(t0));

  double acc = 0.0;
  for (double a : sfbc_acc) acc += a;
  report.sfbc_accuracy = acc / static_cast<double>(tasks.size());
  report.timings.emplace_back("total", seconds_since(t_total));
  return report;
}

std::string report_json(const Report& report, bool with_timings) {
  nlohmann::ordered_json j;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    nlohmann::ordered_json row;
    row["name"] = r.name;
    row["toggles"] = {{"multitask", r.toggles.multitask},
                      {"transformer", r.toggles.transformer},
                      {"time_filter_aug", r.toggles.time_filter_aug},
                      {"pseudo_label", r.toggles.pseudo_label}};
    row["tp"] = r.score.counts.tp;
    row["fp"] = r.score.counts.fp;
    row["fn"] = r.score.counts.fn;
    row["precision"] = r.score.precision;
    row["recall"] = r.score.recall;
    row["f"] = r.score.f;
    rows.push_back(row);
  }
  j["rows"] = rows;
  j["sfbc_accuracy"] = report.sfbc_accuracy;
  if (with_timings) {
    nlohmann::ordered_json t;
    for (const auto& [name, s] : report.timings) t[name] = s;
    j["timings"] = t;
  }
  return j.dump(2);
}

std::string report_table(const Report& report) {
  std::ostringstream s;
  s << std::left << std::setw(14) << "system" << std::right << std::setw(6) << "TP" << std::setw(6) << "FP"
    << std::setw(6) << "FN" << std::setw(11) << "precision" << std::setw(9) << "recall" << std::setw(9) << "F"
    << '\n';
  s << std::fixed << std::setprecision(4);
  for (const auto& r : report.rows) {
    s << std::left << std::setw(14) << r.name << std::right << std::setw(6) << r.score.counts.tp << std::setw(6)
      << r.score.counts.fp << std::setw(6) << r.score.counts.fn << std::setw(11) << r.score.precision
      << std::setw(9) << r.score.recall << std::setw(9) << r.score.f << '\n';
  }
  s << "SFBC frame accuracy (held-out supports): " << report.sfbc_accuracy << '\n';
  return s.str();
}

}  // namespace fsed::bench
