#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fsed/framing/windows.hpp"
#include "fsed/ingest/annotations.hpp"
#include "fsed/ingest/config.hpp"
#include "fsed/model/model.hpp"

namespace fsed::fewshot {

struct FrameRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t length() const { return end - begin; }
};

/// Frames whose centre lies in [onset, offset); never empty.
FrameRange frame_range(double onset_s, double offset_s, double frame_period_s, std::size_t frames);

/// One few-shot task at the model's frame rate.
struct TaskData {
  std::string audio_file;
  Matrix features;  // unperturbed PCEN frames of the whole clip
  double frame_period_s = 0.0;
  std::vector<FrameRange> shots;          // the five POS shots
  std::vector<Matrix> pos_material;       // shot frames under every speed factor
  std::vector<Matrix> neg_material;       // annotated NEG gaps, unperturbed
  std::size_t query_start = 0;            // first query frame
  std::vector<ingest::AnnotationEvent> reference;  // POS events inside the query region
};

TaskData prepare_task(const ingest::SupportTask& task, const std::vector<ingest::AnnotationEvent>& events,
                      const ingest::RunConfig& cfg);
TaskData load_task(const std::filesystem::path& wav, const std::filesystem::path& csv,
                   const ingest::RunConfig& cfg);

/// Query region cut into model windows; start frames are absolute.
std::vector<framing::WindowBatch> query_windows(const TaskData& task, std::size_t win, std::size_t shift);

/// Mean of the shot embeddings, L2-normalized. Task error on a zero norm.
std::vector<double> pos_center(const std::vector<std::vector<double>>& shot_embeddings);

/// Masked-mean embedding of every shot, each embedded inside a window of its
/// own clip context.
std::vector<std::vector<double>> shot_embeddings(model::Model& model, const TaskData& task);

struct Similarity {
  std::vector<double> per_frame;  // cosine per reduced frame
  double score = 0.0;             // max over frames
};

/// Cosine of every embedding row [T' x E] with the center.
Similarity query_similarity(std::span<const double> emb, std::size_t dim, std::span<const double> center);

/// Indices of the `quota` lowest scores, ascending by score, ties to the
/// earlier index.
std::vector<std::size_t> lowest_scores(std::span<const double> scores, std::size_t quota);

/// max(min_count, round(frac * n)), capped at n.
std::size_t neg_quota(std::size_t n, double frac, std::size_t min_count);

/// NEG material of the task plus the lowest-similarity query windows.
std::vector<Matrix> reconstruct_negatives(model::Model& model, const TaskData& task,
                                          std::span<const double> center, const ingest::RunConfig& cfg);

/// `count` windows, each one POS shot at a random offset inside NEG frames
/// drawn from the pool. POS frames carry label 1, everything is unmasked.
std::vector<framing::WindowBatch> build_supports(const std::vector<Matrix>& pos, const std::vector<Matrix>& neg,
                                                 std::size_t count, std::size_t win, std::uint64_t seed);

struct Supports {
  std::vector<framing::WindowBatch> support1;
  std::vector<framing::WindowBatch> support2;
};

struct AugSpec {
  std::size_t zones = 6;
  double db_low = -6.0;
  double db_high = 8.0;
  std::size_t min_zone = 48;
};

AugSpec aug_spec(const ingest::RunConfig& cfg);

/// Per-frame gains for zones of the given lengths: in zone i, alpha ramps
/// from knots[i] to knots[i + 1] over its frames (both ends included),
/// beta = low + (high - low) * alpha dB, gain = 10^(beta / 20).
std::vector<double> ramp_gains(std::span<const std::size_t> zone_lengths, std::span<const double> knots,
                               double db_low, double db_high);

/// Random zone partition and knots, then every row scaled by its gain.
/// Windows shorter than min_zone come back unchanged.
Matrix time_filter_aug(const Matrix& window, const AugSpec& spec, std::mt19937_64& rng);

/// Outputs of blocks 1-2 for unaugmented windows, keyed by the address of
/// the feature matrix. Only valid while those blocks are frozen and BN runs
/// in eval mode; the matrices must outlive the cache. Past the byte budget
/// new entries are computed but not stored.
class FrontCache {
 public:
  explicit FrontCache(std::size_t budget_bytes = std::size_t{512} << 20) : budget_(budget_bytes) {}

  /// Eval-mode embedding of `window`, identical to model.embed(window, eval).
  ad::Tensor embed(model::Model& model, const Matrix& window);
  std::size_t bytes() const { return used_; }

 private:
  std::unordered_map<const Matrix*, ad::Tensor> fronts_;
  std::size_t used_ = 0;
  std::size_t budget_;
};

/// Row 0 of decoder_sed becomes `row`.
void graft_sed_row(model::Model& model, std::span<const double> row);

struct FinetuneLog {
  std::vector<double> bin_loss;   // per SED iteration
  std::vector<double> sfbc_loss;  // per SFBC iteration
  std::size_t pseudo_cycles_run = 0;
  std::size_t pseudo_cycles_skipped = 0;
};

/// SED step: decoder_bin on supports plus the mixed task (support POS as
/// class 0, base event frames as their classes) over decoders and blocks
/// 3-4. TimeFilterAug on support windows from the configured iteration.
void finetune_sed(model::Model& model, const Supports& supports,
                  std::span<const framing::WindowBatch> base_windows, const ingest::RunConfig& cfg,
                  std::uint64_t seed, FinetuneLog& log, FrontCache* cache = nullptr);

/// Confident query frames (p >= hi as POS, p <= lo as NEG) retrain
/// decoder_bin and blocks 3-4; a cycle without confident frames is skipped.
/// Every batch also carries as many support windows so the labeled POS
/// frames keep their weight against a mostly NEG query.
void pseudo_label_refine(model::Model& model, std::span<const framing::WindowBatch> query, const Supports& supports,
                         const ingest::RunConfig& cfg, std::uint64_t seed, FinetuneLog& log,
                         FrontCache* cache = nullptr);

/// POS center from the TC vectors of Support1, [E].
std::vector<double> tc_center(model::Model& model, std::span<const framing::WindowBatch> support1);

/// Trains decoder_sfbc only, on Support2 conditioned on `center`.
void finetune_sfbc(model::Model& model, std::span<const framing::WindowBatch> support2,
                   std::span<const double> center, const ingest::RunConfig& cfg, std::uint64_t seed,
                   FinetuneLog& log);

/// A pretrained model adapted to one task.
struct TaskModel {
  model::Model model;
  std::vector<double> sfbc_center;  // empty when the SFBC branch is off
};

/// Full adaptation: center, NEG reconstruction, supports, graft, SED
/// fine-tuning, pseudo-label cycles and SFBC fine-tuning. When `unrefined`
/// is given it receives the same adaptation without the pseudo-label cycles.
TaskModel adapt(const model::Model& pretrained, const TaskData& task,
                std::span<const framing::WindowBatch> base_windows, const ingest::RunConfig& cfg,
                std::uint64_t seed, FinetuneLog* log = nullptr, TaskModel* unrefined = nullptr);

/// Per-frame POS probability of one window: p_bin, or the mean of p_bin and
/// p_sfbc when the model carries an SFBC center. [win].
std::vector<double> window_probs(TaskModel& tm, const Matrix& window);

/// POS probability for every query frame; overlapping windows averaged.
std::vector<double> detect(TaskModel& tm, const TaskData& task, std::size_t shift);

/// Fold models fused per frame.
std::vector<double> detect(std::vector<TaskModel>& folds, const TaskData& task, std::size_t shift);

/// Events decoded from query probabilities, in clip time.
std::vector<ingest::AnnotationEvent> detect_events(std::vector<TaskModel>& folds, const TaskData& task,
                                                   const ingest::RunConfig& cfg);

/// Adapted fold models of one task plus the wav/csv pair they were tuned on.
struct TaskBundle {
  std::vector<TaskModel> folds;
  std::filesystem::path wav;
  std::filesystem::path csv;
};

void save_task_bundle(const std::filesystem::path& path, const TaskBundle& bundle);
TaskBundle load_task_bundle(const std::filesystem::path& path);

}  // namespace fsed::fewshot
