#pragma once

#include <filesystem>
#include <utility>

#include "fsed/ingest/audio.hpp"
#include "fsed/ingest/config.hpp"
#include "fsed/matrix.hpp"

namespace fsed::dsp {

/// Mel energies [T frames x bands], non-negative.
struct MelFrames {
  Matrix values;
  double frame_period_s = 0.0;
};

/// PCEN output [T frames x bands].
struct FrameFeatures {
  Matrix values;
  double frame_period_s = 0.0;

  std::size_t frames() const { return values.rows; }
  std::size_t bands() const { return values.cols; }
};

/// Windowed-sinc resampling by an arbitrary rate ratio (out/in). Output
/// length is round(len * ratio).
std::vector<double> resample_ratio(const std::vector<double>& samples, double ratio);

/// Band-limited resampling to target_hz; identity when the rates agree.
ingest::AudioClip resample(const ingest::AudioClip& clip, int target_hz);

/// Speed perturbation: the waveform is resampled by 1/factor and keeps its
/// declared rate, so pitch and tempo both change. Annotation times must be
/// multiplied by the returned time scale (1/factor).
std::pair<ingest::AudioClip, double> speed_perturb(const ingest::AudioClip& clip, double factor);

/// Slaney-style mel filterbank [bands x (n_fft/2 + 1)], area normalized.
Matrix mel_filterbank(int sample_rate, int n_fft, int bands, double fmin, double fmax);

/// Power STFT (periodic Hann, reflect-padded by n_fft/2 on both sides)
/// projected through the mel filterbank. T = 1 + floor(len / hop).
MelFrames stft_mel(const ingest::AudioClip& clip, int n_fft = 1024, int hop = 256,
                   int mel_bands = 128, double fmin = 0.0, double fmax = 0.0);

struct PcenParams {
  double s = 0.025;
  double alpha = 0.98;
  double delta = 2.0;
  double r = 0.5;
  double eps = 1e-6;
};

PcenParams pcen_params(const ingest::RunConfig& cfg);

/// Per-band smoother M(t) = (1-s) M(t-1) + s E(t) with M(0) = E(0), then
/// (E / (eps + M)^alpha + delta)^r - delta^r.
FrameFeatures pcen(const MelFrames& mel, const PcenParams& params = {});

/// Full frontend: resample to cfg.sample_rate, mel, PCEN.
FrameFeatures extract_features(const ingest::AudioClip& clip, const ingest::RunConfig& cfg);

// Feature dump: "PCEN" | u32 frames | u32 bands | u32 version | f32 values,
// little-endian, row-major.
void write_feature_dump(const std::filesystem::path& path, const FrameFeatures& features);
Matrix read_feature_dump(const std::filesystem::path& path);

}  // namespace fsed::dsp
