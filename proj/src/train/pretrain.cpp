#include "fsed/train/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>

#include "fsed/dsp/frontend.hpp"
#include "fsed/error.hpp"
#include "fsed/eval/events.hpp"
#include "fsed/ingest/synth.hpp"
#include "fsed/log.hpp"
#include "fsed/seed.hpp"

namespace fsed::train {
namespace {

const ad::BatchNormOptions kTrainBn{ad::BnMode::train, true};
const ad::BatchNormOptions kTrainBnFrozenStats{ad::BnMode::train, false};
const ad::BatchNormOptions kEvalBn{ad::BnMode::eval, false};

// [first, last) window range of every source; windows of a source are contiguous.
std::map<int, std::pair<std::size_t, std::size_t>> source_ranges(
    const std::vector<framing::WindowBatch>& windows) {
  std::map<int, std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto [it, fresh] = out.try_emplace(windows[i].source_id, i, i + 1);
    if (!fresh) {
      if (it->second.second != i) raise(ErrorCategory::validation, "windows of a source are not contiguous");
      it->second.second = i + 1;
    }
  }
  return out;
}

std::vector<ad::Tensor> trainable(const model::Model& m) {
  std::vector<ad::Tensor> out;
  for (const auto& nt : m.named_tensors()) {
    if (nt.trainable) out.push_back(nt.tensor);
  }
  return out;
}

}  // namespace

LossParts multitask_loss(const ad::Tensor& sed_logits, const ad::Tensor& sfbc_logits,
                         std::span<const int> sed_labels, std::span<const int> sfbc_labels,
                         std::span<const int> mask) {
  LossParts out;
  out.l1 = ad::masked_softmax_ce(sed_logits, sed_labels, mask);
  if (sfbc_logits.defined()) {
    out.l2 = ad::masked_softmax_ce(sfbc_logits, sfbc_labels, mask);
    out.total = ad::add(out.l1, out.l2);
  } else {
    out.total = out.l1;
  }
  return out;
}

BaseCorpus load_base_corpus(const std::filesystem::path& dir, const ingest::RunConfig& cfg) {
  const auto pairs = ingest::list_pairs(dir);
  if (pairs.empty()) raise(ErrorCategory::io, "no wav/csv pairs in " + dir.string());
  BaseCorpus corpus;
  corpus.frame_period_s = cfg.frame_period_s();

  std::vector<std::vector<ingest::AnnotationEvent>> annotations;
  std::set<std::string> names;
  for (const auto& [wav, csv] : pairs) {
    auto events = ingest::read_annotations(csv);
    std::erase_if(events, [](const auto& e) { return e.label == "NEG" || e.label == "UNK"; });
    for (const auto& e : events) names.insert(e.label);
    annotations.push_back(std::move(events));
  }
  for (const auto& n : names) corpus.classes.add(n);

  int source = 0;
  for (std::size_t c = 0; c < pairs.size(); ++c) {
    BaseClip clip;
    clip.name = pairs[c].first.filename().string();
    const auto audio = dsp::resample(ingest::read_wav(pairs[c].first), cfg.sample_rate);
    for (double factor : cfg.speed_factors) {
      const auto [perturbed, scale] = dsp::speed_perturb(audio, factor);
      const auto feats = dsp::pcen(dsp::stft_mel(perturbed, cfg.n_fft, cfg.hop, cfg.mel_bands,
                                                 cfg.mel_fmin, cfg.mel_fmax),
                                   dsp::pcen_params(cfg));
      auto events = annotations[c];
      for (auto& e : events) {
        e.onset_s *= scale;
        e.offset_s *= scale;
      }
      auto windows = framing::clip_windows(feats.values, feats.frame_period_s, events, corpus.classes,
                                           static_cast<std::size_t>(cfg.win_frames),
                                           static_cast<std::size_t>(cfg.shift_frames), source);
      if (clip.source_id < 0 || factor == 1.0) {
        clip.source_id = source;
        clip.events = events;
        clip.frames = feats.frames();
      }
      std::move(windows.begin(), windows.end(), std::back_inserter(corpus.windows));
      corpus.clip_of_source.push_back(c);
      ++source;
    }
    log(LogLevel::info, "base clip ", clip.name, ": ", clip.events.size(), " events");
    corpus.clips.push_back(std::move(clip));
  }
  return corpus;
}

TrainPlan train_plan(const ingest::RunConfig& cfg) {
  TrainPlan p;
  p.epochs = cfg.iters;
  p.lr = cfg.lr_pretrain;
  p.step_size = cfg.step_size;
  p.gamma = cfg.gamma;
  p.multitask = cfg.multitask;
  p.balanced = cfg.balanced_sampling;
  p.kfold = static_cast<std::size_t>(cfg.kfold);
  p.seed = cfg.seed;
  return p;
}

std::vector<int> window_classes(const framing::WindowBatch& w) {
  std::set<int> present;
  for (std::size_t t = 0; t < w.valid_frames; ++t) {
    if (w.sed_labels[t] != 0) present.insert(w.sed_labels[t]);
  }
  return {present.begin(), present.end()};
}

EpochMetrics pretrain_epoch(model::Model& model, ad::Adam& optimizer,
                            const std::vector<framing::WindowBatch>& windows,
                            std::span<const std::size_t> order, const TrainPlan& plan, int epoch) {
  const auto ranges = source_ranges(windows);
  const double lr = ad::steplr(plan.lr, epoch, plan.step_size, plan.gamma);
  EpochMetrics m;
  m.epoch = epoch;
  std::size_t l2_steps = 0;
  std::vector<int> foreground;
  for (std::size_t idx : order) {
    const auto& w = windows.at(idx);
    std::vector<int> targets = plan.multitask ? window_classes(w) : std::vector<int>{};
    if (targets.empty()) targets.push_back(0);  // SED-only step
    for (int target : targets) {
      try {
        optimizer.zero_grad();
        const auto emb = model.embed(w.features, kTrainBn);
        ad::Tensor sfbc;
        if (target != 0) {
          const auto [first, last] = ranges.at(w.source_id);
          const std::span<const framing::WindowBatch> clip(windows.data() + first, last - first);
          const auto& tcw = clip[model::select_tc_window(clip, target, idx - first)];
          std::vector<int> tc_mask(tcw.length(), 0);
          for (std::size_t t = 0; t < tcw.valid_frames; ++t) tc_mask[t] = tcw.sed_labels[t] == target;
          const auto tc_emb = model.embed(model::tc_vector(tcw.features, tcw.sed_labels, target),
                                          kTrainBnFrozenStats);
          sfbc = model.sfbc_forward(emb, model::masked_center(tc_emb, tc_mask));
          foreground.assign(w.length(), 0);
          for (std::size_t t = 0; t < w.length(); ++t) foreground[t] = w.sed_labels[t] == target;
        }
        const auto loss = multitask_loss(model.sed_forward(emb), sfbc, w.sed_labels, foreground, w.train_mask);
        loss.total.backward();
        optimizer.step(lr);
        m.l1 += loss.l1.item();
        if (loss.l2.defined()) {
          m.l2 += loss.l2.item();
          ++l2_steps;
        }
        m.total += loss.total.item();
        ++m.steps;
      } catch (const Error& e) {
        if (e.category() != ErrorCategory::numeric) throw;
        raise(ErrorCategory::numeric, "epoch " + std::to_string(epoch) + ", window " + std::to_string(idx) +
                                          ", class " + std::to_string(target) + ": " + e.what());
      }
    }
  }
  if (m.steps > 0) {
    m.l1 /= static_cast<double>(m.steps);
    m.total /= static_cast<double>(m.steps);
  }
  if (l2_steps > 0) m.l2 /= static_cast<double>(l2_steps);
  return m;
}

std::vector<Fold> kfold_split(std::size_t clips, std::size_t k, std::uint64_t seed) {
  if (k == 0) raise(ErrorCategory::config, "kfold must be at least 1");
  if (clips < k) {
    raise(ErrorCategory::validation, std::to_string(clips) + " clips cannot fill " + std::to_string(k) + " folds");
  }
  std::vector<std::size_t> perm(clips);
  for (std::size_t i = 0; i < clips; ++i) perm[i] = i;
  if (k == 1) return {Fold{perm, {}}};
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < clips; ++i) folds[i % k].holdout.push_back(perm[i]);
  for (std::size_t f = 0; f < k; ++f) {
    std::sort(folds[f].holdout.begin(), folds[f].holdout.end());
    for (std::size_t c = 0; c < clips; ++c) {
      if (!std::binary_search(folds[f].holdout.begin(), folds[f].holdout.end(), c)) folds[f].train.push_back(c);
    }
  }
  return folds;
}

std::size_t select_best_epoch(std::span<const double> scores) {
  if (scores.empty()) raise(ErrorCategory::validation, "no holdout scores to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

double holdout_fscore(model::Model& model, const BaseCorpus& corpus, std::span<const std::size_t> clips,
                      const ingest::RunConfig& cfg) {
  const auto ranges = source_ranges(corpus.windows);
  const std::size_t classes = corpus.classes.size();
  const auto params = eval::decode_params(cfg);
  eval::Counts total;
  for (std::size_t c : clips) {
    const auto& clip = corpus.clips.at(c);
    const auto [first, last] = ranges.at(clip.source_id);
    Matrix sum(clip.frames, classes, 0.0);
    std::vector<double> count(clip.frames, 0.0);
    for (std::size_t i = first; i < last; ++i) {
      const auto& w = corpus.windows[i];
      const auto p = ad::softmax_rows(model.sed_forward(model.embed(w.features, kEvalBn)));
      for (std::size_t t = 0; t < w.valid_frames; ++t) {
        for (std::size_t k = 0; k < classes; ++k) sum(w.start_frame + t, k) += p.at(t * classes + k);
        count[w.start_frame + t] += 1.0;
      }
    }
    for (std::size_t k = 1; k < classes; ++k) {
      std::vector<double> probs(clip.frames);
      for (std::size_t t = 0; t < clip.frames; ++t) probs[t] = sum(t, k) / std::max(1.0, count[t]);
      const auto pred = eval::decode_events(probs, corpus.frame_period_s, params);
      std::vector<eval::Event> ref;
      for (const auto& e : clip.events) {
        if (e.label == corpus.classes.name(static_cast<int>(k))) ref.push_back({e.onset_s, e.offset_s, 1.0});
      }
      total += eval::match_events(pred, ref, cfg.iou_min);
    }
  }
  return eval::fscore(total).f;
}

void write_metrics_header(std::ostream& out) { out << "fold,epoch,l1,l2,l_total,holdout_f\n"; }

void write_metrics_row(std::ostream& out, const EpochMetrics& m) {
  out << m.fold << ',' << m.epoch << ',' << m.l1 << ',' << m.l2 << ',' << m.total << ',';
  if (!std::isnan(m.holdout_f)) out << m.holdout_f;
  out << '\n' << std::flush;
}

PretrainResult pretrain(const BaseCorpus& corpus, const ingest::RunConfig& cfg, std::ostream* csv_log) {
  const auto plan = train_plan(cfg);
  if (plan.epochs <= 0) raise(ErrorCategory::config, "iters must be positive");
  const auto folds = kfold_split(corpus.clips.size(), plan.kfold, derive_seed(plan.seed, 11));
  PretrainResult result;
  if (csv_log != nullptr) write_metrics_header(*csv_log);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < corpus.windows.size(); ++i) {
      const auto clip = corpus.clip_of_source.at(static_cast<std::size_t>(corpus.windows[i].source_id));
      if (std::find(folds[f].train.begin(), folds[f].train.end(), clip) != folds[f].train.end()) pool.push_back(i);
    }
    model::Model model(model::model_config(cfg, corpus.classes.size()), derive_seed(plan.seed, 12, f));
    model.class_names = corpus.classes.names();
    ad::Adam optimizer(trainable(model));
    std::optional<model::Model> best;
    double best_f = -1.0;
    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
      const auto epoch_seed = derive_seed(plan.seed, 13, f * 100003 + static_cast<std::size_t>(epoch));
      std::vector<std::size_t> order = pool;
      if (plan.balanced) {
        order = framing::balanced_sample_indices(corpus.windows, pool, epoch_seed);
      } else {
        std::mt19937_64 rng(epoch_seed);
        std::shuffle(order.begin(), order.end(), rng);
      }
      auto metrics = pretrain_epoch(model, optimizer, corpus.windows, order, plan, epoch);
      metrics.fold = static_cast<int>(f);
      if (!folds[f].holdout.empty()) {
        metrics.holdout_f = holdout_fscore(model, corpus, folds[f].holdout, cfg);
        if (metrics.holdout_f > best_f) {
          best_f = metrics.holdout_f;
          best = model::clone(model);
        }
      }
      log(LogLevel::info, "fold ", f, " epoch ", epoch, ": l1 ", metrics.l1, " l2 ", metrics.l2, " steps ",
          metrics.steps, std::isnan(metrics.holdout_f) ? std::string() : " holdout F " + std::to_string(metrics.holdout_f));
      if (csv_log != nullptr) write_metrics_row(*csv_log, metrics);
      result.log.push_back(metrics);
    }
    result.fold_models.push_back(best ? std::move(*best) : std::move(model));
  }
  return result;
}

}  // namespace fsed::train
