#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "fsed/dsp/frontend.hpp"
#include "fsed/error.hpp"

using namespace fsed;
using namespace fsed::dsp;
using fsed::ingest::AudioClip;

namespace {

AudioClip tone(double hz, double seconds, int sr, double amp = 0.5) {
  AudioClip c;
  c.sample_rate = sr;
  const auto n = static_cast<std::size_t>(std::llround(seconds * sr));
  for (std::size_t i = 0; i < n; ++i) c.samples.push_back(amp * std::sin(2 * std::numbers::pi * hz * i / sr));
  return c;
}

// Naive DFT magnitude peak over the positive bins, in Hz.
double dft_peak_hz(const std::vector<double>& x, int sr) {
  const std::size_t n = x.size();
  double best = -1.0;
  std::size_t best_k = 0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = 2 * std::numbers::pi * static_cast<double>(k * i % n) / static_cast<double>(n);
      re += x[i] * std::cos(a);
      im -= x[i] * std::sin(a);
    }
    if (re * re + im * im > best) {
      best = re * re + im * im;
      best_k = k;
    }
  }
  return static_cast<double>(best_k) * sr / static_cast<double>(n);
}

// Slaney mel scale, written out independently of the library.
double slaney_mel_to_hz(double m) {
  return m < 15.0 ? m * 200.0 / 3.0 : 1000.0 * std::pow(6.4, (m - 15.0) / 27.0);
}
double slaney_hz_to_mel(double f) {
  return f < 1000.0 ? f * 3.0 / 200.0 : 15.0 + 27.0 * std::log(f / 1000.0) / std::log(6.4);
}

double pcen_cell_oracle(const Matrix& e, std::size_t t, std::size_t f, const PcenParams& p) {
  double m = e(0, f);
  for (std::size_t k = 1; k <= t; ++k) m = (1 - p.s) * m + p.s * e(k, f);
  return std::pow(e(t, f) / std::pow(p.eps + m, p.alpha) + p.delta, p.r) - std::pow(p.delta, p.r);
}

}  // namespace

TEST_CASE("resample identity at equal rates") {
  const auto c = tone(440, 0.3, 22050);
  const auto out = resample(c, 22050);
  CHECK(out.sample_rate == 22050);
  CHECK(out.samples == c.samples);
}

TEST_CASE("resample 44.1k to 22.05k keeps a 1 kHz tone and the duration") {
  const auto c = tone(1000, 1.0, 44100);
  const auto out = resample(c, 22050);
  CHECK(out.sample_rate == 22050);
  CHECK(std::abs(static_cast<long>(out.samples.size()) - 22050) <= 1);
  const std::vector<double> head(out.samples.begin(), out.samples.begin() + 4410);
  CHECK(std::abs(dft_peak_hz(head, 22050) - 1000.0) <= 22050.0 / 4410.0);
}

TEST_CASE("resample suppresses content above the new Nyquist") {
  const auto c = tone(15000, 0.5, 44100);
  const auto out = resample(c, 22050);
  double ss = 0.0;
  for (std::size_t i = 1000; i < out.samples.size() - 1000; ++i) ss += out.samples[i] * out.samples[i];
  CHECK(std::sqrt(ss / static_cast<double>(out.samples.size() - 2000)) < 1e-2);
}

TEST_CASE("speed perturbation lengths and time scale") {
  const auto c = tone(500, 1.1, 22050);
  const auto [same, s1] = speed_perturb(c, 1.0);
  CHECK(s1 == 1.0);
  CHECK(same.samples == c.samples);

  const auto [fast, s11] = speed_perturb(c, 1.1);
  CHECK(s11 == doctest::Approx(1.0 / 1.1));
  CHECK(fast.sample_rate == 22050);
  CHECK(fast.duration_s() == doctest::Approx(1.0).epsilon(1.0 / 22050));

  const auto [slow, s09] = speed_perturb(c, 0.9);
  CHECK(2.0 * s09 == doctest::Approx(2.0 / 0.9));
  CHECK(3.0 * s09 == doctest::Approx(3.333).epsilon(1e-3));
  CHECK_THROWS_AS(speed_perturb(c, 0.0), Error);
}

TEST_CASE("stft_mel frame count and silence") {
  AudioClip silent{std::vector<double>(22050, 0.0), 22050};
  const auto mel = stft_mel(silent);
  CHECK(mel.values.rows == 1 + 22050 / 256);
  CHECK(mel.values.rows == 87);
  CHECK(mel.values.cols == 128);
  CHECK(mel.frame_period_s == doctest::Approx(256.0 / 22050));
  for (double v : mel.values.data) CHECK(v == 0.0);
  AudioClip empty{{}, 22050};
  CHECK_THROWS_AS(stft_mel(empty), Error);
}

TEST_CASE("stft_mel handles clips shorter than the FFT") {
  const auto c = tone(800, 0.01, 22050);
  const auto mel = stft_mel(c);
  CHECK(mel.values.rows == 1 + c.samples.size() / 256);
  for (double v : mel.values.data) CHECK(std::isfinite(v));
}

TEST_CASE("tone at a band centre peaks in that band") {
  const int band = 40;
  const double top = slaney_hz_to_mel(11025.0);
  const double centre = slaney_mel_to_hz(top * (band + 1) / 129.0);
  const auto mel = stft_mel(tone(centre, 1.0, 22050));
  for (std::size_t t = 4; t + 4 < mel.values.rows; ++t) {
    const auto row = mel.values.row(t);
    const auto arg = std::max_element(row.begin(), row.end()) - row.begin();
    CHECK(arg == band);
  }
}

TEST_CASE("mel energies scale exactly with power") {
  auto c = tone(1234, 0.5, 22050, 0.2);
  const auto a = stft_mel(c);
  for (double& s : c.samples) s *= 2.0;
  const auto b = stft_mel(c);
  for (std::size_t i = 0; i < a.values.data.size(); ++i) CHECK(b.values.data[i] == 4.0 * a.values.data[i]);
}

TEST_CASE("frontend is bit-deterministic") {
  const auto c = tone(3000, 0.7, 22050);
  CHECK(stft_mel(c).values == stft_mel(c).values);
  CHECK(pcen(stft_mel(c)).values == pcen(stft_mel(c)).values);
}

TEST_CASE("pcen closed forms") {
  MelFrames zeros{Matrix(6, 4, 0.0), 0.01};
  for (double v : pcen(zeros).values.data) CHECK(v == 0.0);

  MelFrames ones{Matrix(5, 3, 1.0), 0.01};
  PcenParams p;
  p.s = 1.0;
  const double expected = std::sqrt(1.0 / std::pow(1.0 + 1e-6, 0.98) + 2.0) - std::sqrt(2.0);
  CHECK(expected == doctest::Approx(0.31784).epsilon(1e-4));
  for (double v : pcen(ones, p).values.data) CHECK(v == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("pcen matches a per-cell scalar recursion") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  MelFrames mel{Matrix(10, 3), 0.01};
  for (double& v : mel.values.data) v = u(rng);
  const PcenParams p;
  const auto out = pcen(mel, p);
  for (std::size_t t = 0; t < 10; ++t) {
    for (std::size_t f = 0; f < 3; ++f) CHECK(std::abs(out.values(t, f) - pcen_cell_oracle(mel.values, t, f, p)) < 1e-10);
  }
}

TEST_CASE("pcen gain invariance in the alpha, s -> 1 limit") {
  PcenParams p;
  p.alpha = 1.0;
  p.s = 1.0;
  p.eps = 1e-15;  // the limit form; the default eps leaves a 1e-7 residue at unit energy
  for (double e : {0.5, 1.0, 7.0}) {
    for (double c : {0.25, 3.0, 100.0}) {
      const auto a = pcen(MelFrames{Matrix(4, 2, e), 0.01}, p);
      const auto b = pcen(MelFrames{Matrix(4, 2, c * e), 0.01}, p);
      for (std::size_t i = 0; i < a.values.data.size(); ++i) CHECK(std::abs(a.values.data[i] - b.values.data[i]) < 1e-9);
    }
  }
}

TEST_CASE("pcen rejects negative energy") {
  MelFrames mel{Matrix(2, 2, 1.0), 0.01};
  mel.values(1, 1) = -1e-3;
  try {
    pcen(mel);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::validation);
  }
}

TEST_CASE("feature dump layout and round trip") {
  const auto path = std::filesystem::temp_directory_path() / "fsed_test_dump.bin";
  const auto feats = pcen(stft_mel(tone(2000, 0.2, 22050)));
  write_feature_dump(path, feats);
  CHECK(std::filesystem::file_size(path) == 16 + 4 * feats.frames() * feats.bands());
  const auto back = read_feature_dump(path);
  CHECK(back.rows == feats.frames());
  CHECK(back.cols == feats.bands());
  for (std::size_t i = 0; i < back.data.size(); ++i) {
    CHECK(back.data[i] == static_cast<double>(static_cast<float>(feats.values.data[i])));
  }
}
