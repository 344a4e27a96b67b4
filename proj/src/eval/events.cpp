#include "fsed/eval/events.hpp"

#include <algorithm>
#include <cstdio>
#include <tuple>

#include <json.hpp>

#include "fsed/error.hpp"

namespace fsed::eval {

DecodeParams decode_params(const ingest::RunConfig& cfg) {
  return {cfg.threshold, cfg.min_dur_s, cfg.merge_gap_s, static_cast<std::size_t>(cfg.median_width)};
}

std::vector<double> median_filter(std::span<const double> x, std::size_t width) {
  if (width <= 1 || x.empty()) return {x.begin(), x.end()};
  if (width % 2 == 0) raise(ErrorCategory::config, "median width must be odd");
  const long half = static_cast<long>(width / 2);
  const long n = static_cast<long>(x.size());
  std::vector<double> out(x.size()), buf(width);
  for (long t = 0; t < n; ++t) {
    for (long k = -half; k <= half; ++k) buf[static_cast<std::size_t>(k + half)] = x[static_cast<std::size_t>(std::clamp(t + k, 0L, n - 1))];
    std::nth_element(buf.begin(), buf.begin() + half, buf.end());
    out[static_cast<std::size_t>(t)] = buf[static_cast<std::size_t>(half)];
  }
  return out;
}

std::vector<Event> decode_events(std::span<const double> probs, double frame_period_s,
                                 const DecodeParams& params, double time_offset_s) {
  const auto smooth = median_filter(probs, params.median_width);
  struct Run {
    std::size_t begin, end;
  };
  std::vector<Run> runs;
  for (std::size_t t = 0; t < smooth.size();) {
    if (smooth[t] < params.threshold) {
      ++t;
      continue;
    }
    std::size_t e = t;
    while (e < smooth.size() && smooth[e] >= params.threshold) ++e;
    if (!runs.empty() && static_cast<double>(t - runs.back().end) * frame_period_s < params.merge_gap_s) {
      runs.back().end = e;
    } else {
      runs.push_back({t, e});
    }
    t = e;
  }
  std::vector<Event> out;
  for (const auto& r : runs) {
    const double dur = static_cast<double>(r.end - r.begin) * frame_period_s;
    if (dur < params.min_dur_s) continue;
    double s = 0.0;
    for (std::size_t t = r.begin; t < r.end; ++t) s += probs[t];
    out.push_back({time_offset_s + static_cast<double>(r.begin) * frame_period_s,
                   time_offset_s + static_cast<double>(r.end) * frame_period_s,
                   s / static_cast<double>(r.end - r.begin)});
  }
  return out;
}

double iou(const Event& a, const Event& b) {
  const double inter = std::min(a.offset_s, b.offset_s) - std::max(a.onset_s, b.onset_s);
  if (inter <= 0.0) return 0.0;
  const double uni = std::max(a.offset_s, b.offset_s) - std::min(a.onset_s, b.onset_s);
  return inter / uni;
}

Counts match_events(const std::vector<Event>& pred, const std::vector<Event>& ref, double iou_min) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      const double v = iou(pred[i], ref[j]);
      if (v >= iou_min && v > 0.0) pairs.emplace_back(v, i, j);
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    return std::tie(std::get<1>(a), std::get<2>(a)) < std::tie(std::get<1>(b), std::get<2>(b));
  });
  std::vector<bool> pred_used(pred.size()), ref_used(ref.size());
  Counts c;
  for (const auto& [v, i, j] : pairs) {
    if (pred_used[i] || ref_used[j]) continue;
    pred_used[i] = ref_used[j] = true;
    ++c.tp;
  }
  c.fp = pred.size() - c.tp;
  c.fn = ref.size() - c.tp;
  return c;
}

ScoreReport fscore(const Counts& total) {
  ScoreReport r;
  r.counts = total;
  const double tp = static_cast<double>(total.tp);
  r.precision = total.tp + total.fp > 0 ? tp / static_cast<double>(total.tp + total.fp) : 0.0;
  r.recall = total.tp + total.fn > 0 ? tp / static_cast<double>(total.tp + total.fn) : 0.0;
  r.f = r.precision + r.recall > 0.0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

ScoreReport fscore(std::span<const Counts> per_clip) {
  Counts total;
  for (const auto& c : per_clip) total += c;
  return fscore(total);
}

std::vector<double> fuse_fold_predictions(const std::vector<std::vector<double>>& per_model) {
  if (per_model.empty()) raise(ErrorCategory::validation, "nothing to fuse");
  std::vector<double> out(per_model[0].size(), 0.0);
  for (const auto& p : per_model) {
    if (p.size() != out.size()) raise(ErrorCategory::shape, "fold predictions differ in length");
  }
  // Summing in sorted order makes the result independent of model order.
  std::vector<double> column(per_model.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    for (std::size_t m = 0; m < per_model.size(); ++m) column[m] = per_model[m][t];
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (double v : column) s += v;
    out[t] = s / static_cast<double>(per_model.size());
  }
  return out;
}

std::string report_table(const ScoreReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%-10s %8s\n%-10s %8zu\n%-10s %8zu\n%-10s %8zu\n%-10s %8.4f\n%-10s %8.4f\n%-10s %8.4f\n",
                "metric", "value", "TP", r.counts.tp, "FP", r.counts.fp, "FN", r.counts.fn,
                "precision", r.precision, "recall", r.recall, "F", r.f);
  return buf;
}

std::string report_json(const ScoreReport& r) {
  nlohmann::ordered_json j;
  j["tp"] = r.counts.tp;
  j["fp"] = r.counts.fp;
  j["fn"] = r.counts.fn;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f"] = r.f;
  return j.dump(2);
}

}  // namespace fsed::eval
