#include "fsed/ingest/annotations.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fsed/error.hpp"

namespace fsed::ingest {
namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

double parse_seconds(const std::string& cell, std::size_t row, const std::string& column) {
  double v = 0.0;
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    raise(ErrorCategory::format,
          "row " + std::to_string(row) + ": " + column + " is not a number: '" + cell + "'");
  }
  return v;
}

}  // namespace

std::vector<AnnotationEvent> read_annotations(const std::filesystem::path& path, bool require_q) {
  std::ifstream in(path);
  if (!in) raise(ErrorCategory::io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) raise(ErrorCategory::format, path.string() + ": empty file");
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  const auto header = split_csv(line);
  const auto column = [&](const std::string& name) -> long {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<long>(it - header.begin());
  };
  const long c_file = column("Audiofilename");
  const long c_start = column("Starttime");
  const long c_end = column("Endtime");
  const long c_q = column("Q");
  for (auto [name, idx] : {std::pair{"Audiofilename", c_file}, {"Starttime", c_start},
                           {"Endtime", c_end}}) {
    if (idx < 0) raise(ErrorCategory::format, path.string() + ": missing column " + name);
  }
  if (require_q && c_q < 0) raise(ErrorCategory::format, path.string() + ": missing column Q");

  std::vector<AnnotationEvent> events;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    const long needed = std::max({c_file, c_start, c_end, c_q});
    if (static_cast<long>(cells.size()) <= needed) {
      raise(ErrorCategory::format, path.string() + ": row " + std::to_string(row) + " has " +
                                       std::to_string(cells.size()) + " cells");
    }
    AnnotationEvent ev;
    ev.audio_file = cells[static_cast<std::size_t>(c_file)];
    ev.onset_s = parse_seconds(cells[static_cast<std::size_t>(c_start)], row, "Starttime");
    ev.offset_s = parse_seconds(cells[static_cast<std::size_t>(c_end)], row, "Endtime");
    ev.label = c_q >= 0 ? cells[static_cast<std::size_t>(c_q)] : "POS";
    if (ev.onset_s < 0.0 || ev.onset_s >= ev.offset_s) {
      raise(ErrorCategory::validation, path.string() + ": row " + std::to_string(row) +
                                           ": need 0 <= Starttime < Endtime");
    }
    events.push_back(std::move(ev));
  }
  return events;
}

void write_annotations(const std::filesystem::path& path,
                       const std::vector<AnnotationEvent>& events, bool include_q) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(ErrorCategory::io, "cannot open " + path.string() + " for writing");
  out << (include_q ? "Audiofilename,Starttime,Endtime,Q\n" : "Audiofilename,Starttime,Endtime\n");
  out << std::setprecision(17);
  for (const auto& e : events) {
    out << e.audio_file << ',' << e.onset_s << ',' << e.offset_s;
    if (include_q) out << ',' << e.label;
    out << '\n';
  }
  if (!out) raise(ErrorCategory::io, "write failed for " + path.string());
}

std::vector<AnnotationEvent> filter_label(const std::vector<AnnotationEvent>& events,
                                          const std::string& label) {
  std::vector<AnnotationEvent> out;
  std::copy_if(events.begin(), events.end(), std::back_inserter(out),
               [&](const AnnotationEvent& e) { return e.label == label; });
  return out;
}

SupportTask make_support_task(AudioClip clip, const std::vector<AnnotationEvent>& events) {
  auto pos = filter_label(events, "POS");
  if (pos.size() < kShots) {
    raise(ErrorCategory::task, "few-shot task needs at least " + std::to_string(kShots) +
                                   " POS events, found " + std::to_string(pos.size()));
  }
  std::stable_sort(pos.begin(), pos.end(), [](const auto& a, const auto& b) {
    return a.onset_s < b.onset_s;
  });
  pos.resize(kShots);

  SupportTask task;
  task.audio_file = pos.front().audio_file;
  task.query_start_s = pos.back().offset_s;
  double cursor = 0.0;
  for (const auto& p : pos) {
    if (p.onset_s > cursor) {
      task.neg_intervals.push_back({cursor, p.onset_s, "NEG", p.audio_file});
    }
    cursor = std::max(cursor, p.offset_s);
  }
  task.pos_events = std::move(pos);
  task.clip = std::move(clip);
  return task;
}

}  // namespace fsed::ingest
