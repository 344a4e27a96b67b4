#include "fsed/fewshot/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsed/autodiff/checkpoint.hpp"
#include "fsed/autodiff/optim.hpp"
#include "fsed/dsp/frontend.hpp"
#include "fsed/error.hpp"
#include "fsed/eval/events.hpp"
#include "fsed/ingest/audio.hpp"
#include "fsed/log.hpp"
#include "fsed/seed.hpp"

namespace fsed::fewshot {
namespace {

const ad::BatchNormOptions kEvalBn{ad::BnMode::eval, false};
// TC vectors are normalized by their own statistics, as in pretraining.
const ad::BatchNormOptions kTcBn{ad::BnMode::train, false};

Matrix copy_rows(const Matrix& m, std::size_t begin, std::size_t end) {
  Matrix out(end - begin, m.cols);
  std::copy(m.data.begin() + static_cast<std::ptrdiff_t>(begin * m.cols),
            m.data.begin() + static_cast<std::ptrdiff_t>(end * m.cols), out.data.begin());
  return out;
}

// `win` rows from `start`, padded by repeating the last frame.
Matrix window_at(const Matrix& m, std::size_t start, std::size_t win) {
  Matrix out(win, m.cols);
  for (std::size_t t = 0; t < win; ++t) {
    const std::size_t src = std::min(start + t, m.rows - 1);
    std::copy_n(m.row(src).begin(), m.cols, out.row(t).begin());
  }
  return out;
}

// Column 1 of a row-wise softmax over [T x 2] logits.
std::vector<double> positive_probs(const ad::Tensor& logits) {
  const auto p = ad::softmax_rows(logits);
  std::vector<double> out(logits.dim(0));
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = p.at(2 * t + 1);
  return out;
}

// Marks the listed tensors trainable and freezes everything else, so frozen
// parts of the graph are not differentiated.
std::vector<ad::Tensor> select_trainable(model::Model& m, std::initializer_list<std::string_view> prefixes) {
  std::vector<ad::Tensor> out;
  for (auto& nt : m.named_tensors()) {
    const bool pick = nt.trainable && std::any_of(prefixes.begin(), prefixes.end(), [&](std::string_view p) {
                        return nt.name.starts_with(p);
                      });
    nt.tensor.set_requires_grad(pick);
    if (pick) out.push_back(nt.tensor);
  }
  return out;
}

void restore_trainable(model::Model& m) {
  for (auto& nt : m.named_tensors()) nt.tensor.set_requires_grad(nt.trainable);
}

void check_finite(double loss, const char* stage, std::size_t iteration) {
  if (!std::isfinite(loss)) {
    raise(ErrorCategory::numeric, std::string(stage) + " loss is not finite at iteration " + std::to_string(iteration));
  }
}

ad::Tensor embed_eval(model::Model& model, const Matrix& window, FrontCache* cache) {
  return cache != nullptr ? cache->embed(model, window) : model.embed(window, kEvalBn);
}

template <class T>
const T& pick(const std::vector<const T*>& pool, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> u(0, pool.size() - 1);
  return *pool[u(rng)];
}

}  // namespace

FrameRange frame_range(double onset_s, double offset_s, double frame_period_s, std::size_t frames) {
  if (frames == 0) raise(ErrorCategory::validation, "no frames to place an event in");
  auto first = static_cast<std::size_t>(std::max(0.0, std::ceil(onset_s / frame_period_s - 0.5)));
  auto last = static_cast<std::size_t>(std::max(0.0, std::ceil(offset_s / frame_period_s - 0.5)));
  first = std::min(first, frames - 1);
  last = std::clamp(last, first + 1, frames);
  return {first, last};
}

TaskData prepare_task(const ingest::SupportTask& task, const std::vector<ingest::AnnotationEvent>& events,
                      const ingest::RunConfig& cfg) {
  TaskData out;
  out.audio_file = task.audio_file;
  const auto clip = dsp::resample(task.clip, cfg.sample_rate);
  const auto pcen = dsp::pcen_params(cfg);
  auto features = [&](const ingest::AudioClip& c) {
    return dsp::pcen(dsp::stft_mel(c, cfg.n_fft, cfg.hop, cfg.mel_bands, cfg.mel_fmin, cfg.mel_fmax), pcen).values;
  };
  out.features = features(clip);
  out.frame_period_s = cfg.frame_period_s();
  const std::size_t frames = out.features.rows;
  for (const auto& e : task.pos_events) {
    out.shots.push_back(frame_range(e.onset_s, e.offset_s, out.frame_period_s, frames));
  }
  for (double factor : cfg.speed_factors) {
    if (factor == 1.0) {
      for (const auto& r : out.shots) out.pos_material.push_back(copy_rows(out.features, r.begin, r.end));
      continue;
    }
    const auto [perturbed, scale] = dsp::speed_perturb(clip, factor);
    const auto f = features(perturbed);
    for (const auto& e : task.pos_events) {
      const auto r = frame_range(e.onset_s * scale, e.offset_s * scale, out.frame_period_s, f.rows);
      out.pos_material.push_back(copy_rows(f, r.begin, r.end));
    }
  }
  for (const auto& n : task.neg_intervals) {
    const auto r = frame_range(n.onset_s, n.offset_s, out.frame_period_s, frames);
    out.neg_material.push_back(copy_rows(out.features, r.begin, r.end));
  }
  out.query_start = std::min(frames, static_cast<std::size_t>(std::ceil(task.query_start_s / out.frame_period_s - 1e-9)));
  for (const auto& e : ingest::filter_label(events, "POS")) {
    if (e.onset_s >= task.query_start_s) out.reference.push_back(e);
  }
  std::sort(out.reference.begin(), out.reference.end(),
            [](const auto& a, const auto& b) { return a.onset_s < b.onset_s; });
  return out;
}

TaskData load_task(const std::filesystem::path& wav, const std::filesystem::path& csv,
                   const ingest::RunConfig& cfg) {
  const auto events = ingest::read_annotations(csv);
  auto task = ingest::make_support_task(ingest::read_wav(wav), events);
  if (task.audio_file.empty()) task.audio_file = wav.filename().string();
  return prepare_task(task, events, cfg);
}

std::vector<framing::WindowBatch> query_windows(const TaskData& task, std::size_t win, std::size_t shift) {
  const std::size_t frames = task.features.rows;
  if (task.query_start >= frames) return {};
  const auto region = copy_rows(task.features, task.query_start, frames);
  auto windows = framing::segment_windows(region, std::vector<int>(region.rows, 0), win, shift);
  for (auto& w : windows) w.start_frame += task.query_start;
  return windows;
}

std::vector<double> pos_center(const std::vector<std::vector<double>>& shot_embeddings) {
  if (shot_embeddings.empty()) raise(ErrorCategory::task, "no shots to form a POS center");
  std::vector<double> c(shot_embeddings[0].size(), 0.0);
  for (const auto& e : shot_embeddings) {
    if (e.size() != c.size()) raise(ErrorCategory::shape, "shot embeddings differ in size");
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += e[i];
  }
  double norm = 0.0;
  for (double& v : c) {
    v /= static_cast<double>(shot_embeddings.size());
    norm += v * v;
  }
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) raise(ErrorCategory::task, "POS center has zero norm");
  for (double& v : c) v /= norm;
  return c;
}

std::vector<std::vector<double>> shot_embeddings(model::Model& model, const TaskData& task) {
  const std::size_t win = model.config().win;
  const std::size_t frames = task.features.rows;
  std::vector<std::vector<double>> out;
  for (const auto& shot : task.shots) {
    // Centre the shot in its window where the clip allows.
    std::size_t start = 0;
    if (frames > win) {
      const std::size_t mid = shot.begin + shot.length() / 2;
      start = std::min(mid > win / 2 ? mid - win / 2 : 0, frames - win);
    }
    std::vector<int> mask(win, 0);
    for (std::size_t t = shot.begin; t < shot.end; ++t) {
      if (t >= start && t - start < win) mask[t - start] = 1;
    }
    const auto emb = model.embed(window_at(task.features, start, win), kEvalBn);
    const auto c = model::masked_center(emb, mask);
    out.emplace_back(c.values().begin(), c.values().end());
  }
  return out;
}

Similarity query_similarity(std::span<const double> emb, std::size_t dim, std::span<const double> center) {
  if (dim == 0 || emb.size() % dim != 0 || center.size() != dim) {
    raise(ErrorCategory::shape, "query_similarity: embedding and center sizes disagree");
  }
  double cn = 0.0;
  for (double v : center) cn += v * v;
  cn = std::sqrt(cn);
  Similarity s;
  s.score = -1.0;
  for (std::size_t r = 0; r < emb.size() / dim; ++r) {
    double dot = 0.0, n = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      dot += emb[r * dim + i] * center[i];
      n += emb[r * dim + i] * emb[r * dim + i];
    }
    const double denom = std::sqrt(n) * cn;
    const double v = denom > 0.0 ? std::clamp(dot / denom, -1.0, 1.0) : 0.0;
    s.per_frame.push_back(v);
    s.score = std::max(s.score, v);
  }
  return s;
}

std::vector<std::size_t> lowest_scores(std::span<const double> scores, std::size_t quota) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  idx.resize(std::min(quota, idx.size()));
  return idx;
}

std::size_t neg_quota(std::size_t n, double frac, std::size_t min_count) {
  const auto q = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
  return std::min(n, std::max(min_count, q));
}

std::vector<Matrix> reconstruct_negatives(model::Model& model, const TaskData& task,
                                          std::span<const double> center, const ingest::RunConfig& cfg) {
  std::vector<Matrix> pool = task.neg_material;
  const auto windows = query_windows(task, model.config().win, static_cast<std::size_t>(cfg.shift_frames));
  if (windows.empty()) return pool;
  std::vector<double> scores;
  for (const auto& w : windows) {
    const auto emb = model.embed(w.features, kEvalBn);
    scores.push_back(query_similarity(emb.values(), emb.dim(1), center).score);
  }
  const auto quota = neg_quota(windows.size(), cfg.neg_quota_frac, static_cast<std::size_t>(cfg.neg_quota_min));
  for (std::size_t i : lowest_scores(scores, quota)) {
    pool.push_back(copy_rows(windows[i].features, 0, windows[i].valid_frames));
  }
  log(LogLevel::debug, "NEG pool: ", task.neg_material.size(), " annotated + ", quota, " query windows");
  return pool;
}

std::vector<framing::WindowBatch> build_supports(const std::vector<Matrix>& pos, const std::vector<Matrix>& neg,
                                                 std::size_t count, std::size_t win, std::uint64_t seed) {
  if (pos.empty()) raise(ErrorCategory::task, "no POS shots to build supports from");
  std::vector<const Matrix*> negs;
  for (const auto& n : neg) {
    if (n.rows > 0) negs.push_back(&n);
  }
  if (negs.empty()) raise(ErrorCategory::task, "no NEG material to build supports from");
  const std::size_t bands = pos[0].cols;
  std::mt19937_64 rng(seed);
  std::vector<framing::WindowBatch> out(count);
  for (auto& w : out) {
    const Matrix& shot = pos[std::uniform_int_distribution<std::size_t>(0, pos.size() - 1)(rng)];
    const std::size_t len = std::min(shot.rows, win);
    const std::size_t offset = std::uniform_int_distribution<std::size_t>(0, win - len)(rng);
    w.features = Matrix(win, bands);
    w.sed_labels.assign(win, 0);
    w.sfbc_labels.assign(win, 0);
    w.train_mask.assign(win, 1);
    w.valid_frames = win;
    // NEG before the shot, the shot, NEG after it.
    auto fill_neg = [&](std::size_t from, std::size_t to) {
      while (from < to) {
        const Matrix& n = pick(negs, rng);
        const std::size_t start = std::uniform_int_distribution<std::size_t>(0, n.rows - 1)(rng);
        const std::size_t take = std::min(to - from, n.rows - start);
        std::copy_n(n.row(start).begin(), take * bands, w.features.row(from).begin());
        from += take;
      }
    };
    fill_neg(0, offset);
    std::copy_n(shot.data.begin(), len * bands, w.features.row(offset).begin());
    for (std::size_t t = offset; t < offset + len; ++t) w.sed_labels[t] = w.sfbc_labels[t] = 1;
    fill_neg(offset + len, win);
  }
  return out;
}

AugSpec aug_spec(const ingest::RunConfig& cfg) {
  AugSpec s;
  s.zones = static_cast<std::size_t>(cfg.aug_zones);
  s.db_low = cfg.aug_db_low;
  s.db_high = cfg.aug_db_high;
  s.min_zone = static_cast<std::size_t>(cfg.aug_min_zone);
  return s;
}

std::vector<double> ramp_gains(std::span<const std::size_t> zone_lengths, std::span<const double> knots,
                               double db_low, double db_high) {
  if (knots.size() != zone_lengths.size() + 1) raise(ErrorCategory::validation, "need one more knot than zones");
  std::vector<double> gains;
  for (std::size_t i = 0; i < zone_lengths.size(); ++i) {
    const std::size_t len = zone_lengths[i];
    for (std::size_t j = 0; j < len; ++j) {
      const double a = len == 1 ? knots[i + 1]
                                : knots[i] + (knots[i + 1] - knots[i]) * static_cast<double>(j) /
                                                 static_cast<double>(len - 1);
      const double beta = db_low + (db_high - db_low) * a;
      gains.push_back(std::pow(10.0, beta / 20.0));
    }
  }
  return gains;
}

Matrix time_filter_aug(const Matrix& window, const AugSpec& spec, std::mt19937_64& rng) {
  const std::size_t frames = window.rows;
  if (spec.zones == 0 || spec.min_zone == 0 || frames < spec.min_zone) return window;
  std::size_t m = spec.zones;
  while (m > 1 && m * spec.min_zone > frames) --m;
  const std::size_t extra = frames - m * spec.min_zone;
  std::uniform_int_distribution<std::size_t> cut(0, extra);
  std::vector<std::size_t> cuts{0, extra};
  for (std::size_t i = 1; i < m; ++i) cuts.push_back(cut(rng));
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::size_t> lengths(m);
  for (std::size_t i = 0; i < m; ++i) lengths[i] = spec.min_zone + cuts[i + 1] - cuts[i];
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> knots(m + 1);
  for (double& k : knots) k = unit(rng);
  const auto gains = ramp_gains(lengths, knots, spec.db_low, spec.db_high);
  Matrix out = window;
  for (std::size_t t = 0; t < frames; ++t) {
    for (double& v : out.row(t)) v *= gains[t];
  }
  return out;
}

ad::Tensor FrontCache::embed(model::Model& model, const Matrix& window) {
  constexpr std::size_t kFrozen = 2;
  auto it = fronts_.find(&window);
  if (it == fronts_.end()) {
    const auto image = ad::Tensor::constant({1, window.rows, window.cols}, window.data);
    auto front = model.run_blocks(image, 0, kFrozen, kEvalBn).detach();
    const std::size_t bytes = front.size() * sizeof(double);
    if (used_ + bytes > budget_) return model.project(model.run_blocks(front, kFrozen, model.blocks.size(), kEvalBn));
    used_ += bytes;
    it = fronts_.emplace(&window, std::move(front)).first;
  }
  return model.project(model.run_blocks(it->second, kFrozen, model.blocks.size(), kEvalBn));
}

void graft_sed_row(model::Model& model, std::span<const double> row) {
  auto w = model.decoder_sed.weight;
  if (row.size() != w.dim(1)) raise(ErrorCategory::shape, "graft row does not match the embedding size");
  std::copy(row.begin(), row.end(), w.mutable_values().begin());
}

void finetune_sed(model::Model& model, const Supports& supports,
                  std::span<const framing::WindowBatch> base_windows, const ingest::RunConfig& cfg,
                  std::uint64_t seed, FinetuneLog& log, FrontCache* cache) {
  std::vector<const framing::WindowBatch*> pool, base;
  for (const auto* set : {&supports.support1, &supports.support2}) {
    for (const auto& w : *set) pool.push_back(&w);
  }
  if (pool.empty()) raise(ErrorCategory::task, "no support windows to fine-tune on");
  for (const auto& w : base_windows) {
    if (w.has_event()) base.push_back(&w);
  }
  ad::Adam adam(select_trainable(model, {"block3.", "block4.", "decoder_"}));
  const auto spec = aug_spec(cfg);
  const auto support_batch = static_cast<std::size_t>(cfg.finetune_batch);
  const std::size_t base_batch = base.empty() ? 0 : static_cast<std::size_t>(cfg.base_mix_windows);
  const double weight = 1.0 / static_cast<double>(support_batch + base_batch);
  std::mt19937_64 rng(seed);
  std::vector<int> zeros, pos_mask, event_mask;
  for (int it = 0; it < cfg.finetune_iters; ++it) {
    adam.zero_grad();
    const bool augment = cfg.time_filter_aug && it >= cfg.aug_start_iter;
    double bin_loss = 0.0;
    for (std::size_t b = 0; b < support_batch; ++b) {
      const auto& w = pick(pool, rng);
      const auto emb = augment ? model.embed(time_filter_aug(w.features, spec, rng), kEvalBn)
                               : embed_eval(model, w.features, cache);
      auto loss = ad::masked_softmax_ce(model.bin_forward(emb), w.sfbc_labels, w.train_mask);
      bin_loss += loss.item();
      if (base_batch > 0) {
        // POS frames of a support window stand for class 0 of the mixed task.
        zeros.assign(w.length(), 0);
        pos_mask.assign(w.length(), 0);
        for (std::size_t t = 0; t < w.length(); ++t) pos_mask[t] = w.train_mask[t] && w.sfbc_labels[t] == 1;
        loss = ad::add(loss, ad::masked_softmax_ce(model.sed_forward(emb), zeros, pos_mask));
      }
      ad::scale(loss, weight).backward();
    }
    for (std::size_t b = 0; b < base_batch; ++b) {
      const auto& w = pick(base, rng);
      event_mask.assign(w.length(), 0);
      for (std::size_t t = 0; t < w.length(); ++t) event_mask[t] = w.train_mask[t] && w.sed_labels[t] != 0;
      const auto loss = ad::masked_softmax_ce(model.sed_forward(embed_eval(model, w.features, cache)),
                                              w.sed_labels, event_mask);
      ad::scale(loss, weight).backward();
    }
    bin_loss /= static_cast<double>(support_batch);
    check_finite(bin_loss, "SED fine-tuning", static_cast<std::size_t>(it));
    adam.step(cfg.lr_sed);
    log.bin_loss.push_back(bin_loss);
  }
  restore_trainable(model);
}

void pseudo_label_refine(model::Model& model, std::span<const framing::WindowBatch> query, const Supports& supports,
                         const ingest::RunConfig& cfg, std::uint64_t seed, FinetuneLog& log, FrontCache* cache) {
  struct Labeled {
    const Matrix* features;
    std::vector<int> labels, mask;
  };
  std::mt19937_64 rng(seed);
  for (int cycle = 0; cycle < cfg.pseudo_cycles; ++cycle) {
    std::vector<Labeled> labeled;
    for (const auto& w : query) {
      const auto p = positive_probs(model.bin_forward(embed_eval(model, w.features, cache)));
      Labeled pw{&w.features, std::vector<int>(w.length(), 0), std::vector<int>(w.length(), 0)};
      bool any = false;
      for (std::size_t t = 0; t < w.valid_frames; ++t) {
        if (p[t] >= cfg.pseudo_hi) {
          pw.labels[t] = 1;
          pw.mask[t] = 1;
        } else if (p[t] <= cfg.pseudo_lo) {
          pw.mask[t] = 1;
        }
        any = any || pw.mask[t];
      }
      if (any) labeled.push_back(std::move(pw));
    }
    if (labeled.empty()) {
      ++log.pseudo_cycles_skipped;
      fsed::log(LogLevel::info, "pseudo-label cycle ", cycle, " skipped: no confident frames");
      continue;
    }
    ++log.pseudo_cycles_run;
    std::vector<const Labeled*> pool;
    for (const auto& w : labeled) pool.push_back(&w);
    std::vector<const framing::WindowBatch*> anchor_pool;
    for (const auto* set : {&supports.support1, &supports.support2}) {
      for (const auto& w : *set) anchor_pool.push_back(&w);
    }
    ad::Adam adam(select_trainable(model, {"block3.", "block4.", "decoder_bin."}));
    const auto batch = static_cast<std::size_t>(cfg.finetune_batch);
    const std::size_t anchor_batch = anchor_pool.empty() ? 0 : batch;
    const double weight = 1.0 / static_cast<double>(batch + anchor_batch);
    for (int it = 0; it < cfg.pseudo_iters; ++it) {
      adam.zero_grad();
      double total = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const auto& w = pick(pool, rng);
        const auto loss =
            ad::masked_softmax_ce(model.bin_forward(embed_eval(model, *w.features, cache)), w.labels, w.mask);
        total += loss.item();
        ad::scale(loss, weight).backward();
      }
      for (std::size_t b = 0; b < anchor_batch; ++b) {
        const auto& w = pick(anchor_pool, rng);
        const auto loss = ad::masked_softmax_ce(model.bin_forward(embed_eval(model, w.features, cache)),
                                                w.sfbc_labels, w.train_mask);
        total += loss.item();
        ad::scale(loss, weight).backward();
      }
      check_finite(total, "pseudo-label", static_cast<std::size_t>(it));
      adam.step(cfg.lr_sed);
    }
    restore_trainable(model);
  }
}

std::vector<double> tc_center(model::Model& model, std::span<const framing::WindowBatch> support1) {
  if (support1.empty()) return {};
  std::vector<double> sum;
  for (const auto& w : support1) {
    const auto emb = model.embed(model::tc_vector(w.features, w.sfbc_labels, 1), kTcBn);
    const auto c = model::masked_center(emb, w.sfbc_labels);
    if (sum.empty()) sum.assign(c.size(), 0.0);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += c.at(i);
  }
  for (double& v : sum) v /= static_cast<double>(support1.size());
  return sum;
}

void finetune_sfbc(model::Model& model, std::span<const framing::WindowBatch> support2,
                   std::span<const double> center, const ingest::RunConfig& cfg, std::uint64_t seed,
                   FinetuneLog& log) {
  if (support2.empty() || center.empty()) return;
  const auto c = ad::Tensor::constant({1, center.size()}, {center.begin(), center.end()});
  ad::Adam adam(select_trainable(model, {"decoder_sfbc."}));
  // Everything below decoder_sfbc is frozen, so the tokens are fixed.
  std::vector<ad::Tensor> tokens;
  for (const auto& w : support2) tokens.push_back(model.sfbc_tokens(model.embed(w.features, kEvalBn), c).detach());
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> u(0, support2.size() - 1);
  const auto batch = static_cast<std::size_t>(cfg.finetune_batch);
  for (int it = 0; it < cfg.sfbc_iters; ++it) {
    adam.zero_grad();
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t i = u(rng);
      const auto loss = ad::masked_softmax_ce(model.sfbc_head(tokens[i]), support2[i].sfbc_labels,
                                              support2[i].train_mask);
      total += loss.item();
      ad::scale(loss, 1.0 / static_cast<double>(batch)).backward();
    }
    total /= static_cast<double>(batch);
    check_finite(total, "SFBC fine-tuning", static_cast<std::size_t>(it));
    adam.step(cfg.lr_sfbc);
    log.sfbc_loss.push_back(total);
  }
  restore_trainable(model);
}

TaskModel adapt(const model::Model& pretrained, const TaskData& task,
                std::span<const framing::WindowBatch> base_windows, const ingest::RunConfig& cfg,
                std::uint64_t seed, FinetuneLog* log, TaskModel* unrefined) {
  FinetuneLog local;
  FinetuneLog& lg = log != nullptr ? *log : local;
  TaskModel tm{model::clone(pretrained), {}};
  auto& m = tm.model;
  const std::size_t win = m.config().win;
  const auto center = pos_center(shot_embeddings(m, task));
  const auto neg = reconstruct_negatives(m, task, center, cfg);
  const auto count = static_cast<std::size_t>(cfg.support_windows);
  Supports supports{build_supports(task.pos_material, neg, count, win, derive_seed(seed, 21)),
                    build_supports(task.pos_material, neg, count, win, derive_seed(seed, 22))};
  if (cfg.decoder_graft == "pos_center") {
    graft_sed_row(m, center);
  } else if (cfg.decoder_graft == "binary_weights") {
    const auto w = m.decoder_bin.weight.values();
    graft_sed_row(m, w.subspan(w.size() / 2));
  } else {
    raise(ErrorCategory::config, "unknown decoder_graft '" + cfg.decoder_graft + "'");
  }
  FrontCache cache;
  const auto query = query_windows(task, win, static_cast<std::size_t>(cfg.shift_frames));
  finetune_sed(m, supports, base_windows, cfg, derive_seed(seed, 23), lg, &cache);
  if (unrefined != nullptr) *unrefined = TaskModel{model::clone(m), {}};
  pseudo_label_refine(m, query, supports, cfg, derive_seed(seed, 24), lg, &cache);
  auto finish_sfbc = [&](TaskModel& t, FinetuneLog& l) {
    if (!cfg.multitask) return;
    t.sfbc_center = tc_center(t.model, supports.support1);
    if (t.sfbc_center.empty()) {
      fsed::log(LogLevel::warn, "Support1 is empty; SFBC branch skipped");
    } else {
      finetune_sfbc(t.model, supports.support2, t.sfbc_center, cfg, derive_seed(seed, 25), l);
    }
  };
  finish_sfbc(tm, lg);
  if (unrefined != nullptr) {
    FinetuneLog scratch;
    finish_sfbc(*unrefined, scratch);
  }
  return tm;
}

std::vector<double> window_probs(TaskModel& tm, const Matrix& window) {
  const auto emb = tm.model.embed(window, kEvalBn);
  auto p = positive_probs(tm.model.bin_forward(emb));
  if (!tm.sfbc_center.empty()) {
    const auto c = ad::Tensor::constant({1, tm.sfbc_center.size()}, tm.sfbc_center);
    const auto q = positive_probs(tm.model.sfbc_forward(emb, c));
    for (std::size_t t = 0; t < p.size(); ++t) p[t] = 0.5 * (p[t] + q[t]);
  }
  return p;
}

std::vector<double> detect(TaskModel& tm, const TaskData& task, std::size_t shift) {
  const std::size_t frames = task.features.rows;
  if (task.query_start >= frames) return {};
  std::vector<double> sum(frames - task.query_start, 0.0), count(sum.size(), 0.0);
  for (const auto& w : query_windows(task, tm.model.config().win, shift)) {
    const auto p = window_probs(tm, w.features);
    for (std::size_t t = 0; t < w.valid_frames; ++t) {
      sum[w.start_frame - task.query_start + t] += p[t];
      count[w.start_frame - task.query_start + t] += 1.0;
    }
  }
  for (std::size_t t = 0; t < sum.size(); ++t) sum[t] /= count[t];
  return sum;
}

std::vector<double> detect(std::vector<TaskModel>& folds, const TaskData& task, std::size_t shift) {
  if (folds.empty()) raise(ErrorCategory::validation, "no fold models to detect with");
  std::vector<std::vector<double>> per_fold;
  for (auto& f : folds) per_fold.push_back(detect(f, task, shift));
  if (per_fold[0].empty()) return {};
  return eval::fuse_fold_predictions(per_fold);
}

std::vector<ingest::AnnotationEvent> detect_events(std::vector<TaskModel>& folds, const TaskData& task,
                                                   const ingest::RunConfig& cfg) {
  const auto probs = detect(folds, task, static_cast<std::size_t>(cfg.shift_frames));
  const auto events = eval::decode_events(probs, task.frame_period_s, eval::decode_params(cfg),
                                          static_cast<double>(task.query_start) * task.frame_period_s);
  std::vector<ingest::AnnotationEvent> out;
  for (const auto& e : events) out.push_back({e.onset_s, e.offset_s, "POS", task.audio_file});
  return out;
}

namespace {

constexpr const char* kWavPrefix = "task.wav:";
constexpr const char* kCsvPrefix = "task.csv:";

std::string fold_prefix(std::size_t k) { return "fold" + std::to_string(k) + "/"; }

}  // namespace

void save_task_bundle(const std::filesystem::path& path, const TaskBundle& bundle) {
  std::vector<ad::CheckpointRecord> records;
  for (std::size_t k = 0; k < bundle.folds.size(); ++k) {
    auto r = model::model_records(bundle.folds[k].model, fold_prefix(k));
    records.insert(records.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
    const auto& c = bundle.folds[k].sfbc_center;
    if (!c.empty()) records.push_back({fold_prefix(k) + "task.center", {c.size()}, c});
  }
  records.push_back({kWavPrefix + bundle.wav.string(), {1}, {0.0}});
  records.push_back({kCsvPrefix + bundle.csv.string(), {1}, {0.0}});
  ad::write_checkpoint(path, records);
}

TaskBundle load_task_bundle(const std::filesystem::path& path) {
  const auto records = ad::read_checkpoint(path);
  TaskBundle b;
  for (const auto& r : records) {
    if (r.name.starts_with(kWavPrefix)) b.wav = r.name.substr(std::string(kWavPrefix).size());
    if (r.name.starts_with(kCsvPrefix)) b.csv = r.name.substr(std::string(kCsvPrefix).size());
  }
  for (std::size_t k = 0;; ++k) {
    const auto prefix = fold_prefix(k);
    if (std::none_of(records.begin(), records.end(), [&](const auto& r) { return r.name.starts_with(prefix); })) break;
    TaskModel tm{model::model_from_records(records, prefix), {}};
    for (const auto& r : records) {
      if (r.name == prefix + "task.center") tm.sfbc_center = r.data;
    }
    b.folds.push_back(std::move(tm));
  }
  if (b.folds.empty()) raise(ErrorCategory::format, path.string() + " holds no task models");
  return b;
}

}  // namespace fsed::fewshot
