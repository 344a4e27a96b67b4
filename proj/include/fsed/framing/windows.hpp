#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fsed/ingest/annotations.hpp"
#include "fsed/matrix.hpp"

namespace fsed::framing {

/// Class name to label index. Index 0 is background and has no name entry.
class ClassMap {
 public:
  ClassMap() = default;
  explicit ClassMap(const std::vector<std::string>& names);

  int add(const std::string& name);
  int index(const std::string& name) const;  // validation error when unknown
  bool contains(const std::string& name) const { return index_.contains(name); }
  const std::string& name(int index) const;
  std::size_t size() const { return names_.size() + 1; }  // C, background included
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> index_;
};

/// Per-frame class labels: frame t is class k when its centre
/// t*period + period/2 lies in [onset, offset) of a class-k event. Later
/// onsets overwrite earlier ones.
std::vector<int> label_frames(std::size_t frames, double frame_period_s,
                              const std::vector<ingest::AnnotationEvent>& events,
                              const ClassMap& classes);

struct WindowBatch {
  Matrix features;              // [win x bands]
  std::vector<int> sed_labels;  // 0 = background
  std::vector<int> sfbc_labels;
  std::vector<int> train_mask;
  std::size_t start_frame = 0;
  std::size_t valid_frames = 0;  // frames before right padding
  int source_id = 0;

  std::size_t length() const { return sed_labels.size(); }
  bool has_event() const;
};

inline std::size_t window_count(std::size_t frames, std::size_t win, std::size_t shift) {
  if (frames <= win) return 1;
  return (frames - win + shift - 1) / shift + 1;
}

/// Windows at 0, shift, 2*shift, ...; the last is right-padded by repeating
/// the final frame, with label 0 and mask 0 on the padding.
std::vector<WindowBatch> segment_windows(const Matrix& features, const std::vector<int>& labels,
                                         std::size_t win = 431, std::size_t shift = 86,
                                         int source_id = 0);

/// Event frames keep mask 1 only in the first window that contains them.
void build_overlap_mask(std::vector<WindowBatch>& windows);

/// label_frames + segment_windows + build_overlap_mask for one clip.
std::vector<WindowBatch> clip_windows(const Matrix& features, double frame_period_s,
                                      const std::vector<ingest::AnnotationEvent>& events,
                                      const ClassMap& classes, std::size_t win, std::size_t shift,
                                      int source_id);

/// Epoch order: every window once plus seeded draws (with replacement) of
/// event-bearing windows until their event frames reach the frame count of
/// the all-background windows. Shuffled by seed.
std::vector<std::size_t> balanced_sample_indices(const std::vector<WindowBatch>& windows,
                                                 std::uint64_t seed);
/// Same over a subset of window indices; returned values index `windows`.
std::vector<std::size_t> balanced_sample_indices(const std::vector<WindowBatch>& windows,
                                                 std::span<const std::size_t> subset,
                                                 std::uint64_t seed);

}  // namespace fsed::framing
