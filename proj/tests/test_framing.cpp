#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fsed/error.hpp"
#include "fsed/framing/windows.hpp"

using namespace fsed;
using namespace fsed::framing;
using fsed::ingest::AnnotationEvent;

namespace {

constexpr double kPeriod = 256.0 / 22050.0;

Matrix ramp_features(std::size_t frames, std::size_t bands = 3) {
  Matrix m(frames, bands);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t b = 0; b < bands; ++b) m(t, b) = static_cast<double>(t * 10 + b);
  }
  return m;
}

std::vector<int> frame_span(std::size_t frames, std::size_t a, std::size_t b, int k = 1) {
  std::vector<int> l(frames, 0);
  for (std::size_t f = a; f <= b && f < frames; ++f) l[f] = k;
  return l;
}

WindowBatch plain_window(std::size_t pos_frames, std::size_t len = 431) {
  WindowBatch w;
  w.valid_frames = len;
  w.sed_labels.assign(len, 0);
  for (std::size_t t = 0; t < pos_frames; ++t) w.sed_labels[t] = 1;
  w.sfbc_labels = w.sed_labels;
  w.train_mask.assign(len, 1);
  return w;
}

}  // namespace

TEST_CASE("class map reserves index 0") {
  ClassMap m({"dog", "bird"});
  CHECK(m.size() == 3);
  CHECK(m.index("dog") == 1);
  CHECK(m.index("bird") == 2);
  CHECK(m.add("dog") == 1);
  CHECK(m.name(2) == "bird");
  CHECK_THROWS_AS(m.index("cat"), Error);
}

TEST_CASE("frame labels follow frame centres") {
  ClassMap m({"POS"});
  const std::vector<AnnotationEvent> ev{{0.0, 1.0, "POS", ""}};
  const auto labels = label_frames(120, kPeriod, ev, m);
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const double centre = t * kPeriod + kPeriod / 2;
    CHECK(labels[t] == (centre < 1.0 ? 1 : 0));
  }
  CHECK(labels[85] == 1);
  CHECK(labels[86] == 0);

  CHECK(label_frames(50, kPeriod, {}, m) == std::vector<int>(50, 0));
  const auto all = label_frames(50, kPeriod, {{0.0, 50 * kPeriod, "POS", ""}}, m);
  CHECK(all == std::vector<int>(50, 1));
  CHECK_THROWS_AS(label_frames(50, kPeriod, {{0.0, 1.0, "cat", ""}}, m), Error);
}

TEST_CASE("overlapping annotations: later onset wins") {
  ClassMap m({"a", "b"});
  const auto labels = label_frames(200, kPeriod, {{1.0, 2.0, "b", ""}, {0.0, 1.5, "a", ""}}, m);
  CHECK(labels[static_cast<std::size_t>(0.5 / kPeriod)] == 1);
  CHECK(labels[static_cast<std::size_t>(1.2 / kPeriod)] == 2);
  CHECK(labels[static_cast<std::size_t>(1.8 / kPeriod)] == 2);
}

TEST_CASE("extending an offset never unlabels a frame") {
  ClassMap m({"POS"});
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double on = u(rng), off = on + 0.01 + u(rng);
    const auto a = label_frames(400, kPeriod, {{on, off, "POS", ""}}, m);
    const auto b = label_frames(400, kPeriod, {{on, off + u(rng), "POS", ""}}, m);
    for (std::size_t t = 0; t < a.size(); ++t) CHECK(b[t] >= a[t]);
  }
}

TEST_CASE("window counts and geometry") {
  CHECK(segment_windows(ramp_features(431), std::vector<int>(431, 0)).size() == 1);
  const auto two = segment_windows(ramp_features(517), std::vector<int>(517, 0));
  REQUIRE(two.size() == 2);
  CHECK(two[0].start_frame == 0);
  CHECK(two[1].start_frame == 86);
  CHECK(std::abs(431 * kPeriod - 5.004) <= kPeriod);
  CHECK(std::abs(86 * kPeriod - 0.999) <= kPeriod);
  for (std::size_t frames : {1u, 100u, 430u, 431u, 432u, 517u, 518u, 1000u}) {
    const double expected = std::max(1.0, std::ceil((static_cast<double>(frames) - 431) / 86) + 1);
    CHECK(segment_windows(ramp_features(frames), std::vector<int>(frames, 0)).size() ==
          static_cast<std::size_t>(expected));
  }
  CHECK_THROWS_AS(segment_windows(Matrix(0, 3), {}), Error);
}

TEST_CASE("short input pads by repeating the last frame") {
  auto labels = std::vector<int>(430, 1);
  const auto w = segment_windows(ramp_features(430), labels);
  REQUIRE(w.size() == 1);
  CHECK(w[0].valid_frames == 430);
  CHECK(w[0].features(430, 1) == w[0].features(429, 1));
  CHECK(w[0].sed_labels[430] == 0);
  CHECK(w[0].sfbc_labels[430] == 0);
  CHECK(w[0].train_mask[430] == 0);
  CHECK(w[0].train_mask[429] == 1);
}

TEST_CASE("windows cover every source frame") {
  for (std::size_t frames : {431u, 600u, 1234u}) {
    const auto ws = segment_windows(ramp_features(frames), std::vector<int>(frames, 0));
    std::vector<int> seen(frames, 0);
    for (const auto& w : ws) {
      for (std::size_t t = 0; t < w.valid_frames; ++t) {
        seen[w.start_frame + t] = 1;
        CHECK(w.features(t, 0) == static_cast<double>((w.start_frame + t) * 10));
      }
    }
    CHECK(std::count(seen.begin(), seen.end(), 0) == 0);
  }
}

TEST_CASE("overlap mask: event straddling two windows") {
  auto ws = segment_windows(ramp_features(517), frame_span(517, 400, 440));
  build_overlap_mask(ws);
  for (std::size_t f = 400; f <= 430; ++f) {
    CHECK(ws[0].train_mask[f] == 1);
    CHECK(ws[1].train_mask[f - 86] == 0);
  }
  for (std::size_t f = 431; f <= 440; ++f) CHECK(ws[1].train_mask[f - 86] == 1);
  CHECK(ws[1].train_mask[0] == 1);  // background stays trainable
}

TEST_CASE("overlap mask: no events keeps everything") {
  auto ws = segment_windows(ramp_features(517), std::vector<int>(517, 0));
  build_overlap_mask(ws);
  for (const auto& w : ws) {
    for (std::size_t t = 0; t < w.valid_frames; ++t) CHECK(w.train_mask[t] == 1);
  }
}

TEST_CASE("overlap-once property on random annotations") {
  std::mt19937_64 rng(99);
  ClassMap m({"a", "b", "c"});
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t frames = 431 + rng() % 1500;
    std::vector<AnnotationEvent> ev;
    double t = 0.0;
    while (true) {
      t += 0.1 + (rng() % 1000) / 500.0;
      const double d = 0.05 + (rng() % 1000) / 400.0;
      if ((t + d) / kPeriod >= static_cast<double>(frames)) break;
      ev.push_back({t, t + d, m.name(static_cast<int>(1 + rng() % 3)), ""});
      t += d;
    }
    const auto ws = clip_windows(ramp_features(frames), kPeriod, ev, m, 431, 86, 0);
    const auto labels = label_frames(frames, kPeriod, ev, m);
    for (std::size_t f = 0; f < frames; ++f) {
      if (labels[f] == 0) continue;
      int weight = 0;
      for (const auto& w : ws) {
        if (f >= w.start_frame && f < w.start_frame + w.valid_frames) weight += w.train_mask[f - w.start_frame];
      }
      CHECK(weight == 1);
    }
  }
}

TEST_CASE("balanced sampling replicates event windows") {
  std::vector<WindowBatch> ws{plain_window(50)};
  for (int i = 0; i < 9; ++i) ws.push_back(plain_window(0));
  const auto order = balanced_sample_indices(ws, 7);
  const auto k = std::count(order.begin(), order.end(), 0u);
  CHECK(k == static_cast<long>(std::ceil(9.0 * 431 / 50)));
  CHECK(k == 78);
  for (std::size_t i = 1; i < 10; ++i) CHECK(std::count(order.begin(), order.end(), i) == 1);
  CHECK(balanced_sample_indices(ws, 7) == order);
  CHECK(balanced_sample_indices(ws, 8) != order);
}

TEST_CASE("balanced corpus is left alone; all-background corpus is an error") {
  std::vector<WindowBatch> ws{plain_window(431), plain_window(0)};
  auto order = balanced_sample_indices(ws, 1);
  std::sort(order.begin(), order.end());
  CHECK(order == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(balanced_sample_indices({plain_window(0)}, 1), Error);
}
