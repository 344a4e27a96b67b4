#include "fsed/framing/windows.hpp"

#include <algorithm>
#include <random>

#include "fsed/error.hpp"

namespace fsed::framing {

ClassMap::ClassMap(const std::vector<std::string>& names) {
  for (const auto& n : names) add(n);
}

int ClassMap::add(const std::string& name) {
  if (auto it = index_.find(name); it != index_.end()) return it->second;
  names_.push_back(name);
  const int idx = static_cast<int>(names_.size());
  index_.emplace(name, idx);
  return idx;
}

int ClassMap::index(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) raise(ErrorCategory::validation, "unknown class '" + name + "'");
  return it->second;
}

const std::string& ClassMap::name(int index) const {
  if (index < 1 || static_cast<std::size_t>(index) > names_.size()) {
    raise(ErrorCategory::validation, "class index " + std::to_string(index) + " out of range");
  }
  return names_[static_cast<std::size_t>(index - 1)];
}

std::vector<int> label_frames(std::size_t frames, double frame_period_s,
                              const std::vector<ingest::AnnotationEvent>& events,
                              const ClassMap& classes) {
  if (!(frame_period_s > 0.0)) raise(ErrorCategory::validation, "frame period must be positive");
  std::vector<const ingest::AnnotationEvent*> order;
  for (const auto& e : events) order.push_back(&e);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto* a, const auto* b) { return a->onset_s < b->onset_s; });
  std::vector<int> labels(frames, 0);
  for (const auto* e : order) {
    const int k = classes.index(e->label);
    // First frame whose centre reaches onset; then walk while centre < offset.
    const double first = std::ceil(e->onset_s / frame_period_s - 0.5);
    for (auto t = static_cast<std::size_t>(std::max(0.0, first)); t < frames; ++t) {
      const double centre = static_cast<double>(t) * frame_period_s + frame_period_s / 2;
      if (centre < e->onset_s) continue;
      if (centre >= e->offset_s) break;
      labels[t] = k;
    }
  }
  return labels;
}

bool WindowBatch::has_event() const {
  for (std::size_t t = 0; t < valid_frames; ++t) {
    if (sed_labels[t] != 0) return true;
  }
  return false;
}

std::vector<WindowBatch> segment_windows(const Matrix& features, const std::vector<int>& labels,
                                         std::size_t win, std::size_t shift, int source_id) {
  if (features.rows == 0) raise(ErrorCategory::validation, "cannot window an empty feature matrix");
  if (!(win > shift && shift > 0)) raise(ErrorCategory::config, "need win > shift > 0");
  if (labels.size() != features.rows) raise(ErrorCategory::shape, "labels and features differ in length");
  const std::size_t frames = features.rows, bands = features.cols;
  const std::size_t count = window_count(frames, win, shift);
  std::vector<WindowBatch> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& w = out[i];
    w.start_frame = i * shift;
    w.source_id = source_id;
    w.valid_frames = std::min(win, frames - w.start_frame);
    w.features = Matrix(win, bands);
    w.sed_labels.assign(win, 0);
    w.sfbc_labels.assign(win, 0);
    w.train_mask.assign(win, 0);
    for (std::size_t t = 0; t < win; ++t) {
      const std::size_t src = std::min(w.start_frame + t, frames - 1);
      std::copy_n(features.row(src).begin(), bands, w.features.row(t).begin());
      if (t < w.valid_frames) {
        w.sed_labels[t] = labels[src];
        w.sfbc_labels[t] = labels[src] != 0;
        w.train_mask[t] = 1;
      }
    }
  }
  return out;
}

void build_overlap_mask(std::vector<WindowBatch>& windows) {
  for (std::size_t i = 1; i < windows.size(); ++i) {
    const auto& prev = windows[i - 1];
    auto& w = windows[i];
    if (prev.source_id != w.source_id) continue;
    const std::size_t prev_end = prev.start_frame + prev.valid_frames;
    for (std::size_t t = 0; t < w.valid_frames; ++t) {
      const std::size_t f = w.start_frame + t;
      if (f >= prev_end) break;
      if (w.sed_labels[t] != 0) w.train_mask[t] = 0;
    }
  }
}

std::vector<WindowBatch> clip_windows(const Matrix& features, double frame_period_s,
                                      const std::vector<ingest::AnnotationEvent>& events,
                                      const ClassMap& classes, std::size_t win, std::size_t shift,
                                      int source_id) {
  const auto labels = label_frames(features.rows, frame_period_s, events, classes);
  auto windows = segment_windows(features, labels, win, shift, source_id);
  build_overlap_mask(windows);
  return windows;
}

std::vector<std::size_t> balanced_sample_indices(const std::vector<WindowBatch>& windows,
                                                 std::uint64_t seed) {
  std::vector<std::size_t> all(windows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return balanced_sample_indices(windows, all, seed);
}

std::vector<std::size_t> balanced_sample_indices(const std::vector<WindowBatch>& windows,
                                                 std::span<const std::size_t> subset,
                                                 std::uint64_t seed) {
  std::vector<std::size_t> order(subset.begin(), subset.end());
  std::vector<std::size_t> pos_windows, pos_frames;
  std::size_t pos_total = 0, neg_total = 0;
  for (std::size_t i : subset) {
    const auto& w = windows.at(i);
    std::size_t n = 0;
    for (std::size_t t = 0; t < w.valid_frames; ++t) n += w.sed_labels[t] != 0;
    if (n > 0) {
      pos_windows.push_back(i);
      pos_frames.push_back(n);
      pos_total += n;
    } else {
      neg_total += w.valid_frames;
    }
  }
  if (pos_windows.empty()) raise(ErrorCategory::validation, "no event frames to balance against");
  std::mt19937_64 rng(seed);
  while (pos_total < neg_total) {
    const std::size_t pick = rng() % pos_windows.size();
    order.push_back(pos_windows[pick]);
    pos_total += pos_frames[pick];
  }
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace fsed::framing
