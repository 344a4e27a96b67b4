#include "fsed/dsp/frontend.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

#include "fsed/error.hpp"

namespace fsed::dsp {
namespace {

constexpr int kSincZeroCrossings = 16;

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return hz < min_log_hz ? hz / f_sp : min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return mel < min_log_mel ? mel * f_sp : min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<long>(n) ? i : period - i);
}

// FFTW planning is not thread-safe; execution with the new-array interface is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = fftw_alloc_real(static_cast<std::size_t>(n));
    out_ = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  const fftw_complex* execute() {
    fftw_execute(plan_);
    return out_;
  }

 private:
  int n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace

std::vector<double> resample_ratio(const std::vector<double>& samples, double ratio) {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) {
    raise(ErrorCategory::validation, "resample ratio must be positive");
  }
  const std::size_t n_in = samples.size();
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * ratio));
  const double cutoff = std::min(1.0, ratio) * 0.97;
  const double half_width = kSincZeroCrossings / cutoff;
  std::vector<double> out(n_out, 0.0);
  for (std::size_t n = 0; n < n_out; ++n) {
    const double t = static_cast<double>(n) / ratio;
    const long k0 = std::max(0L, static_cast<long>(std::ceil(t - half_width)));
    const long k1 = std::min(static_cast<long>(n_in) - 1, static_cast<long>(std::floor(t + half_width)));
    double acc = 0.0;
    for (long k = k0; k <= k1; ++k) {
      const double d = t - static_cast<double>(k);
      const double window = 0.5 * (1.0 + std::cos(std::numbers::pi * d / half_width));
      acc += samples[static_cast<std::size_t>(k)] * cutoff * sinc(cutoff * d) * window;
    }
    out[n] = acc;
  }
  return out;
}

ingest::AudioClip resample(const ingest::AudioClip& clip, int target_hz) {
  if (target_hz <= 0) raise(ErrorCategory::validation, "target sample rate must be positive");
  if (clip.sample_rate <= 0) raise(ErrorCategory::validation, "clip has no sample rate");
  if (clip.sample_rate == target_hz) return clip;
  ingest::AudioClip out;
  out.sample_rate = target_hz;
  out.samples = resample_ratio(clip.samples, static_cast<double>(target_hz) / clip.sample_rate);
  return out;
}

std::pair<ingest::AudioClip, double> speed_perturb(const ingest::AudioClip& clip, double factor) {
  if (!(factor > 0.0)) raise(ErrorCategory::validation, "speed factor must be positive");
  if (factor == 1.0) return {clip, 1.0};
  ingest::AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples = resample_ratio(clip.samples, 1.0 / factor);
  return {std::move(out), 1.0 / factor};
}

Matrix mel_filterbank(int sample_rate, int n_fft, int bands, double fmin, double fmax) {
  if (fmax <= 0.0) fmax = sample_rate / 2.0;
  const std::size_t bins = static_cast<std::size_t>(n_fft / 2 + 1);
  const double mel_lo = hz_to_mel(fmin), mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(bands) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(bands + 1));
  }
  Matrix fb(static_cast<std::size_t>(bands), bins);
  for (std::size_t m = 0; m < fb.rows; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    const double norm = 2.0 / (hi - lo);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double rising = (f - lo) / (mid - lo);
      const double falling = (hi - f) / (hi - mid);
      fb(m, k) = std::max(0.0, std::min(rising, falling)) * norm;
    }
  }
  return fb;
}

MelFrames stft_mel(const ingest::AudioClip& clip, int n_fft, int hop, int mel_bands, double fmin,
                   double fmax) {
  if (clip.samples.empty()) raise(ErrorCategory::validation, "stft_mel: empty clip");
  if (n_fft <= 0 || hop <= 0 || mel_bands <= 0) {
    raise(ErrorCategory::config, "stft_mel: n_fft, hop and mel_bands must be positive");
  }
  const std::size_t len = clip.samples.size();
  const std::size_t frames = 1 + len / static_cast<std::size_t>(hop);
  const std::size_t bins = static_cast<std::size_t>(n_fft / 2 + 1);
  const long pad = n_fft / 2;

  std::vector<double> window(static_cast<std::size_t>(n_fft));
  for (std::size_t i = 0; i < window.size(); ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n_fft);
  }

  Matrix power(frames, bins);
  RealFft fft(n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    double* in = fft.input();
    const long start = static_cast<long>(t) * hop - pad;
    for (long i = 0; i < n_fft; ++i) {
      in[i] = clip.samples[reflect_index(start + i, len)] * window[static_cast<std::size_t>(i)];
    }
    const fftw_complex* spec = fft.execute();
    for (std::size_t k = 0; k < bins; ++k) power(t, k) = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
  }

  const Matrix fb = mel_filterbank(clip.sample_rate, n_fft, mel_bands, fmin, fmax);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  MelFrames mel;
  mel.values = Matrix(frames, static_cast<std::size_t>(mel_bands));
  mel.frame_period_s = static_cast<double>(hop) / clip.sample_rate;
  Eigen::Map<RowMat>(mel.values.data.data(), static_cast<Eigen::Index>(frames), mel_bands).noalias() =
      Eigen::Map<const RowMat>(power.data.data(), static_cast<Eigen::Index>(frames),
                               static_cast<Eigen::Index>(bins)) *
      Eigen::Map<const RowMat>(fb.data.data(), mel_bands, static_cast<Eigen::Index>(bins)).transpose();
  for (double& v : mel.values.data) v = std::max(v, 0.0);
  return mel;
}

PcenParams pcen_params(const ingest::RunConfig& cfg) {
  return {cfg.pcen_s, cfg.pcen_alpha, cfg.pcen_delta, cfg.pcen_r, cfg.pcen_eps};
}

FrameFeatures pcen(const MelFrames& mel, const PcenParams& p) {
  const Matrix& e = mel.values;
  for (double v : e.data) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      raise(ErrorCategory::validation, "pcen: mel energies must be finite and non-negative");
    }
  }
  FrameFeatures out;
  out.frame_period_s = mel.frame_period_s;
  out.values = Matrix(e.rows, e.cols);
  if (e.rows == 0) return out;
  std::vector<double> smooth(e.row(0).begin(), e.row(0).end());
  const double offset = std::pow(p.delta, p.r);
  for (std::size_t t = 0; t < e.rows; ++t) {
    const auto in = e.row(t);
    auto res = out.values.row(t);
    for (std::size_t f = 0; f < e.cols; ++f) {
      if (t > 0) smooth[f] = (1.0 - p.s) * smooth[f] + p.s * in[f];
      res[f] = std::pow(in[f] / std::pow(p.eps + smooth[f], p.alpha) + p.delta, p.r) - offset;
    }
  }
  return out;
}

FrameFeatures extract_features(const ingest::AudioClip& clip, const ingest::RunConfig& cfg) {
  const auto at_rate = resample(clip, cfg.sample_rate);
  return pcen(stft_mel(at_rate, cfg.n_fft, cfg.hop, cfg.mel_bands, cfg.mel_fmin, cfg.mel_fmax),
              pcen_params(cfg));
}

void write_feature_dump(const std::filesystem::path& path, const FrameFeatures& features) {
  static_assert(std::endian::native == std::endian::little);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCategory::io, "cannot open " + path.string() + " for writing");
  const std::uint32_t header[3] = {static_cast<std::uint32_t>(features.values.rows),
                                   static_cast<std::uint32_t>(features.values.cols), 1u};
  out.write("PCEN", 4);
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  for (double v : features.values.data) {
    const auto f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
  if (!out) raise(ErrorCategory::io, "write failed for " + path.string());
}

Matrix read_feature_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCategory::io, "cannot open " + path.string());
  char magic[4];
  std::uint32_t header[3];
  if (!in.read(magic, 4) || std::memcmp(magic, "PCEN", 4) != 0 ||
      !in.read(reinterpret_cast<char*>(header), sizeof header)) {
    raise(ErrorCategory::format, path.string() + " is not a PCEN feature dump");
  }
  Matrix m(header[0], header[1]);
  for (double& v : m.data) {
    float f;
    if (!in.read(reinterpret_cast<char*>(&f), sizeof f)) {
      raise(ErrorCategory::format, path.string() + ": truncated feature data");
    }
    v = f;
  }
  return m;
}

}  // namespace fsed::dsp
