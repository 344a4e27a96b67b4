#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fsed/ingest/config.hpp"

namespace fsed::eval {

struct Event {
  double onset_s = 0.0;
  double offset_s = 0.0;
  double score = 0.0;  // mean probability over the event's frames
};

struct DecodeParams {
  double threshold = 0.5;
  double min_dur_s = 0.06;
  double merge_gap_s = 0.1;
  std::size_t median_width = 5;
};

DecodeParams decode_params(const ingest::RunConfig& cfg);

/// Odd-width running median with edge replication.
std::vector<double> median_filter(std::span<const double> x, std::size_t width);

/// median filter -> threshold -> runs -> merge gaps shorter than
/// merge_gap_s -> drop events shorter than min_dur_s. Frame t spans
/// [t, t+1) * frame_period_s, shifted by time_offset_s.
std::vector<Event> decode_events(std::span<const double> probs, double frame_period_s,
                                 const DecodeParams& params = {}, double time_offset_s = 0.0);

double iou(const Event& a, const Event& b);

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

/// Greedy one-to-one matching in descending IoU order (ties by prediction
/// then reference index); pairs with IoU >= iou_min count as hits.
Counts match_events(const std::vector<Event>& pred, const std::vector<Event>& ref, double iou_min = 0.3);

struct ScoreReport {
  Counts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

/// Micro average: counts are summed before P, R and F are formed.
ScoreReport fscore(std::span<const Counts> per_clip);
ScoreReport fscore(const Counts& total);

/// Per-frame arithmetic mean over models.
std::vector<double> fuse_fold_predictions(const std::vector<std::vector<double>>& per_model);

/// Aligned text table and JSON object for a report.
std::string report_table(const ScoreReport& report);
std::string report_json(const ScoreReport& report);

}  // namespace fsed::eval
