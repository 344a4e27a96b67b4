#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fsed/ingest/audio.hpp"

namespace fsed::ingest {

struct AnnotationEvent {
  double onset_s = 0.0;
  double offset_s = 0.0;
  std::string label;       // Q column value: POS, NEG, UNK or a class name
  std::string audio_file;  // Audiofilename column
};

/// Reads a CSV with a header row naming Audiofilename, Starttime, Endtime and
/// Q. One event per data row, label = Q. When require_q is false a missing Q
/// column is accepted and every row gets label "POS" (prediction files).
std::vector<AnnotationEvent> read_annotations(const std::filesystem::path& path,
                                              bool require_q = true);

void write_annotations(const std::filesystem::path& path,
                       const std::vector<AnnotationEvent>& events, bool include_q = true);

std::vector<AnnotationEvent> filter_label(const std::vector<AnnotationEvent>& events,
                                          const std::string& label);

/// One few-shot task: the first five POS events are the shots, the gaps
/// between them are the NEG material, everything after the fifth shot is
/// the query region.
struct SupportTask {
  AudioClip clip;
  std::string audio_file;
  std::vector<AnnotationEvent> pos_events;     // exactly 5, sorted by onset
  std::vector<AnnotationEvent> neg_intervals;  // derived gaps before query_start_s
  double query_start_s = 0.0;
};

inline constexpr std::size_t kShots = 5;

SupportTask make_support_task(AudioClip clip, const std::vector<AnnotationEvent>& events);

}  // namespace fsed::ingest
