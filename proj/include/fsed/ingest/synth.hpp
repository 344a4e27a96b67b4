#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fsed/ingest/annotations.hpp"
#include "fsed/ingest/audio.hpp"

namespace fsed::ingest {

enum class SignalKind { tone, chirp };

struct SynthClass {
  std::string name;
  SignalKind kind = SignalKind::tone;
  double center_hz = 1000.0;
  double sweep_hz = 0.0;  // chirp span, centered on center_hz
  double min_dur_s = 0.2;
  double max_dur_s = 0.8;
};

/// Generator parameters for a synthetic base/novel split. Base files carry
/// every base class with Q = class name; each novel class gets one task file
/// with Q = POS.
struct SynthSpec {
  std::vector<SynthClass> base_classes;
  std::vector<SynthClass> novel_classes;
  int base_files = 4;
  double base_clip_s = 60.0;
  int base_events_per_file = 24;
  double novel_clip_s = 90.0;
  int novel_events = 12;
  double snr_db = 10.0;  // +inf disables the noise floor
  double amplitude = 0.25;
  double min_gap_s = 0.3;
  int sample_rate = 22050;
};

/// Four base classes and two novel classes with well separated center
/// frequencies, sized as the desk-scale benchmark.
SynthSpec default_bench_spec();

struct SynthFile {
  std::string stem;
  AudioClip clip;
  std::vector<AnnotationEvent> events;
};

struct SynthDataset {
  std::vector<SynthFile> base;
  std::vector<SynthFile> novel;
};

/// Pure function of (spec, seed).
SynthDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed);

/// Writes <out>/base/*.wav|csv and <out>/novel/*.wav|csv.
void write_dataset(const SynthDataset& data, const std::filesystem::path& out);

void synth_task_set(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& out);

/// Wave file / annotation CSV pairs found in a directory, sorted by stem.
std::vector<std::pair<std::filesystem::path, std::filesystem::path>> list_pairs(
    const std::filesystem::path& dir);

}  // namespace fsed::ingest
