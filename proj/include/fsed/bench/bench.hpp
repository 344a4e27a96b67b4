#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fsed/eval/events.hpp"
#include "fsed/ingest/config.hpp"
#include "fsed/ingest/synth.hpp"

namespace fsed::bench {

struct Toggles {
  bool multitask = true;
  bool transformer = true;
  bool time_filter_aug = true;
  bool pseudo_label = true;
};

struct Row {
  std::string name;
  Toggles toggles;
  eval::ScoreReport score;
};

struct Report {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<Row> rows;
  double sfbc_accuracy = 0.0;  // full system, held-out Support2 windows
  std::vector<std::pair<std::string, double>> timings;  // seconds
};

/// Reduced model and schedule used by the benchmark.
ingest::RunConfig bench_config();

/// synth data -> pretrain -> per-task fine-tuning -> detect -> evaluate, for
/// the full system and each ablation. Writes the dataset and the predicted
/// event CSVs below `out`. Tasks run on up to `jobs` threads; results do not
/// depend on it.
Report run_bench(const ingest::RunConfig& cfg, const ingest::SynthSpec& spec, std::uint64_t seed,
                 const std::filesystem::path& out, int jobs = 1);

/// {config_hash, seed, rows: [{name, toggles, precision, recall, f, ...}],
/// sfbc_accuracy, timings}. Wall-clock timings are only included when asked
/// for, so the default output is reproducible byte for byte.
std::string report_json(const Report& report, bool with_timings);
std::string report_table(const Report& report);

}  // namespace fsed::bench
