#include "fsed/ingest/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fsed/error.hpp"

namespace fsed::ingest {
namespace {

constexpr double kRampS = 0.01;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t role, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (role * 1000003ULL + index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Placed {
  std::size_t start;
  std::size_t end;
  const SynthClass* cls;
};

std::vector<Placed> place_events(const std::vector<const SynthClass*>& classes, double clip_s,
                                 double min_gap_s, int sr, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> durations;
  double total = 0.0;
  for (const auto* c : classes) {
    durations.push_back(c->min_dur_s + (c->max_dur_s - c->min_dur_s) * unit(rng));
    total += durations.back();
  }
  const double free = clip_s - total - min_gap_s * static_cast<double>(classes.size() + 1);
  if (free < 0.0) {
    raise(ErrorCategory::generation,
          std::to_string(classes.size()) + " events need " +
              std::to_string(total + min_gap_s * static_cast<double>(classes.size() + 1)) +
              " s but the clip is " + std::to_string(clip_s) + " s");
  }
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> weights(classes.size() + 1);
  double wsum = 0.0;
  for (double& w : weights) {
    w = expo(rng);
    wsum += w;
  }
  std::vector<Placed> out;
  double t = 0.0;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    t += min_gap_s + free * weights[i] / wsum;
    const auto start = static_cast<std::size_t>(std::llround(t * sr));
    const auto end = static_cast<std::size_t>(std::llround((t + durations[i]) * sr));
    out.push_back({start, end, classes[i]});
    t += durations[i];
  }
  return out;
}

void render_event(std::vector<double>& samples, const Placed& ev, double amplitude, int sr,
                  std::mt19937_64& rng) {
  const double dur = static_cast<double>(ev.end - ev.start) / sr;
  const double phase0 = 2.0 * std::numbers::pi * std::uniform_real_distribution<double>(0, 1)(rng);
  const double f0 = ev.cls->kind == SignalKind::chirp ? ev.cls->center_hz - ev.cls->sweep_hz / 2
                                                       : ev.cls->center_hz;
  const double slope = ev.cls->kind == SignalKind::chirp ? ev.cls->sweep_hz / dur : 0.0;
  const double ramp = std::min(kRampS, dur / 2);
  for (std::size_t k = ev.start; k < ev.end && k < samples.size(); ++k) {
    const double t = static_cast<double>(k - ev.start) / sr;
    double env = 1.0;
    if (t < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * t / ramp);
    if (dur - t < ramp) env = std::min(env, 0.5 - 0.5 * std::cos(std::numbers::pi * (dur - t) / ramp));
    const double phase = 2.0 * std::numbers::pi * (f0 * t + 0.5 * slope * t * t) + phase0;
    samples[k] += amplitude * env * std::sin(phase);
  }
}

// Paul Kellett's economy pink filter over white Gaussian noise, scaled to
// the requested RMS.
std::vector<double> pink_noise(std::size_t n, double rms, std::mt19937_64& rng) {
  std::normal_distribution<double> white(0.0, 1.0);
  std::vector<double> out(n);
  double b0 = 0, b1 = 0, b2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = white(rng);
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    out[i] = b0 + b1 + b2 + w * 0.1848;
  }
  double ss = 0.0;
  for (double v : out) ss += v * v;
  const double cur = std::sqrt(ss / static_cast<double>(std::max<std::size_t>(n, 1)));
  if (cur > 0.0) {
    for (double& v : out) v *= rms / cur;
  }
  return out;
}

SynthFile make_file(const std::string& stem, const std::vector<const SynthClass*>& event_classes,
                    double clip_s, const SynthSpec& spec, const std::string& fixed_label,
                    std::mt19937_64& rng) {
  SynthFile file;
  file.stem = stem;
  file.clip.sample_rate = spec.sample_rate;
  file.clip.samples.assign(static_cast<std::size_t>(std::llround(clip_s * spec.sample_rate)), 0.0);
  const auto placed = place_events(event_classes, clip_s, spec.min_gap_s, spec.sample_rate, rng);
  for (const auto& ev : placed) {
    render_event(file.clip.samples, ev, spec.amplitude, spec.sample_rate, rng);
    file.events.push_back({static_cast<double>(ev.start) / spec.sample_rate,
                           static_cast<double>(ev.end) / spec.sample_rate,
                           fixed_label.empty() ? ev.cls->name : fixed_label, stem + ".wav"});
  }
  if (std::isfinite(spec.snr_db)) {
    const double noise_rms = spec.amplitude / std::numbers::sqrt2 / std::pow(10.0, spec.snr_db / 20.0);
    const auto noise = pink_noise(file.clip.samples.size(), noise_rms, rng);
    for (std::size_t i = 0; i < noise.size(); ++i) file.clip.samples[i] += noise[i];
  }
  for (double& s : file.clip.samples) s = std::clamp(s, -1.0, 32767.0 / 32768.0);
  return file;
}

}  // namespace

SynthSpec default_bench_spec() {
  SynthSpec spec;
  spec.base_classes = {
      {"base_a", SignalKind::tone, 500.0, 0.0, 0.3, 1.2},
      {"base_b", SignalKind::chirp, 1400.0, 600.0, 0.3, 1.2},
      {"base_c", SignalKind::tone, 2600.0, 0.0, 0.3, 1.2},
      {"base_d", SignalKind::chirp, 5000.0, 1500.0, 0.3, 1.2},
  };
  spec.novel_classes = {
      {"novel_a", SignalKind::chirp, 3600.0, 800.0, 0.2, 0.6},
      {"novel_b", SignalKind::tone, 7500.0, 0.0, 0.2, 0.6},
  };
  return spec;
}

SynthDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.base_classes.empty() && spec.novel_classes.empty()) {
    raise(ErrorCategory::generation, "synthetic spec names no classes");
  }
  if (spec.sample_rate <= 0 || spec.base_clip_s <= 0.0 || spec.novel_clip_s <= 0.0) {
    raise(ErrorCategory::generation, "synthetic spec needs positive rate and clip lengths");
  }
  if (!spec.novel_classes.empty() && spec.novel_events < 10) {
    raise(ErrorCategory::generation, "novel files need at least 10 POS events (5 shots + 5 queries)");
  }
  SynthDataset data;
  if (!spec.base_classes.empty()) {
    for (int f = 0; f < spec.base_files; ++f) {
      std::mt19937_64 rng(mix_seed(seed, 1, static_cast<std::uint64_t>(f)));
      std::vector<const SynthClass*> classes;
      for (int e = 0; e < spec.base_events_per_file; ++e) {
        classes.push_back(&spec.base_classes[static_cast<std::size_t>(e) % spec.base_classes.size()]);
      }
      std::shuffle(classes.begin(), classes.end(), rng);
      char stem[32];
      std::snprintf(stem, sizeof stem, "base_%02d", f);
      data.base.push_back(make_file(stem, classes, spec.base_clip_s, spec, "", rng));
    }
  }
  for (std::size_t c = 0; c < spec.novel_classes.size(); ++c) {
    std::mt19937_64 rng(mix_seed(seed, 2, c));
    std::vector<const SynthClass*> classes(static_cast<std::size_t>(spec.novel_events),
                                           &spec.novel_classes[c]);
    char stem[32];
    std::snprintf(stem, sizeof stem, "task_%02zu", c);
    data.novel.push_back(make_file(stem, classes, spec.novel_clip_s, spec, "POS", rng));
  }
  return data;
}

void write_dataset(const SynthDataset& data, const std::filesystem::path& out) {
  for (const auto& [sub, files] : {std::pair{"base", &data.base}, {"novel", &data.novel}}) {
    const auto dir = out / sub;
    std::filesystem::create_directories(dir);
    for (const auto& f : *files) {
      write_wav(dir / (f.stem + ".wav"), f.clip);
      write_annotations(dir / (f.stem + ".csv"), f.events);
    }
  }
}

void synth_task_set(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& out) {
  write_dataset(synth_dataset(spec, seed), out);
}

std::vector<std::pair<std::filesystem::path, std::filesystem::path>> list_pairs(
    const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) raise(ErrorCategory::io, dir.string() + " is not a directory");
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".wav") continue;
    auto csv = entry.path();
    csv.replace_extension(".csv");
    if (std::filesystem::exists(csv)) out.emplace_back(entry.path(), csv);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace fsed::ingest
