#pragma once

#include <filesystem>
#include <vector>

namespace fsed::ingest {

/// Mono waveform with amplitudes nominally in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// Reads RIFF/WAVE with 8/16/24/32-bit integer PCM or 32-bit float samples.
/// Multichannel input is averaged to mono; integers are scaled by 2^(bits-1).
AudioClip read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples are scaled by 2^15, rounded and clamped,
/// so read_wav(write_wav(x)) reproduces any 16-bit quantized input exactly.
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

}  // namespace fsed::ingest
