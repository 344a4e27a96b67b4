#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "fsed/autodiff/optim.hpp"
#include "fsed/framing/windows.hpp"
#include "fsed/ingest/config.hpp"
#include "fsed/model/model.hpp"

namespace fsed::train {

struct LossParts {
  ad::Tensor l1;
  ad::Tensor l2;  // undefined when the SFBC branch is skipped
  ad::Tensor total;
};

/// l1 = masked CE over C classes, l2 = masked CE over {background,
/// foreground}, total = l1 + l2. Pass an undefined sfbc tensor to skip l2.
LossParts multitask_loss(const ad::Tensor& sed_logits, const ad::Tensor& sfbc_logits,
                         std::span<const int> sed_labels, std::span<const int> sfbc_labels,
                         std::span<const int> mask);

/// One annotated base clip as used for holdout scoring.
struct BaseClip {
  std::string name;
  std::vector<ingest::AnnotationEvent> events;
  std::size_t frames = 0;
  int source_id = -1;  // windows of the unperturbed copy
};

/// Windows of every base clip under every speed factor. Each (clip, factor)
/// pair is its own source; windows of one source are contiguous.
struct BaseCorpus {
  framing::ClassMap classes;
  std::vector<BaseClip> clips;
  std::vector<framing::WindowBatch> windows;
  std::vector<std::size_t> clip_of_source;
  double frame_period_s = 0.0;
};

BaseCorpus load_base_corpus(const std::filesystem::path& dir, const ingest::RunConfig& cfg);

struct TrainPlan {
  int epochs = 100;
  double lr = 1e-4;
  int step_size = 10;
  double gamma = 0.5;
  bool multitask = true;
  bool balanced = true;
  std::size_t kfold = 5;
  std::uint64_t seed = 0;
};

TrainPlan train_plan(const ingest::RunConfig& cfg);

struct EpochMetrics {
  int fold = 0;
  int epoch = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
  std::size_t steps = 0;
  double holdout_f = std::numeric_limits<double>::quiet_NaN();
};

/// Classes present in a window's real frames, ascending.
std::vector<int> window_classes(const framing::WindowBatch& w);

/// One pass over `order` (indices into `windows`). Each window takes one
/// optimizer step per event class it holds (SED + SFBC conditioned on the
/// nearest preceding TC window of that class) or a single SED-only step when
/// it holds none or multitask is off.
EpochMetrics pretrain_epoch(model::Model& model, ad::Adam& optimizer,
                            const std::vector<framing::WindowBatch>& windows,
                            std::span<const std::size_t> order, const TrainPlan& plan, int epoch);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};

/// Clip-level K-fold split, folds within one clip of each other in size.
/// K = 1 trains on everything with an empty holdout.
std::vector<Fold> kfold_split(std::size_t clips, std::size_t k, std::uint64_t seed);

/// Argmax with ties resolved to the earliest epoch.
std::size_t select_best_epoch(std::span<const double> scores);

/// Event F-score of the SED branch over the given clips, micro-averaged over
/// clips and base classes.
double holdout_fscore(model::Model& model, const BaseCorpus& corpus, std::span<const std::size_t> clips,
                      const ingest::RunConfig& cfg);

struct PretrainResult {
  std::vector<model::Model> fold_models;
  std::vector<EpochMetrics> log;
};

/// Full pretraining: one model per fold, best holdout epoch kept (the last
/// epoch when there is no holdout). Metrics rows are also written to
/// `csv_log` when given.
PretrainResult pretrain(const BaseCorpus& corpus, const ingest::RunConfig& cfg, std::ostream* csv_log = nullptr);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const EpochMetrics& m);

}  // namespace fsed::train
