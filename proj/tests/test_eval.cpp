#include <doctest.h>

#include <random>

#include <json.hpp>

#include "fsed/error.hpp"
#include "fsed/eval/events.hpp"
#include "oracles.hpp"

using namespace fsed;
using namespace fsed::eval;

namespace {

constexpr double kDelta = 256.0 / 22050.0;

std::vector<Event> random_events(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> start(0.0, 10.0), len(0.2, 2.0);
  std::vector<Event> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = start(rng);
    out.push_back({s, s + len(rng), 0.0});
  }
  std::sort(out.begin(), out.end(), [](const Event& a, const Event& b) { return a.onset_s < b.onset_s; });
  return out;
}

std::vector<double> render(const std::vector<Event>& ev, std::size_t frames) {
  std::vector<double> p(frames, 0.0);
  for (const auto& e : ev) {
    for (auto t = static_cast<std::size_t>(std::llround(e.onset_s / kDelta));
         t < static_cast<std::size_t>(std::llround(e.offset_s / kDelta)) && t < frames; ++t) {
      p[t] = 1.0;
    }
  }
  return p;
}

}  // namespace

TEST_CASE("decoding silence and a single run") {
  CHECK(decode_events(std::vector<double>(100, 0.0), kDelta).empty());
  std::vector<double> p(100, 0.0);
  for (std::size_t t = 10; t < 20; ++t) p[t] = 1.0;
  const auto ev = decode_events(p, kDelta);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].onset_s == doctest::Approx(10 * kDelta));
  CHECK(ev[0].offset_s == doctest::Approx(20 * kDelta));
}

TEST_CASE("runs separated by a short gap merge") {
  std::vector<double> p(100, 0.0);
  for (std::size_t t = 10; t < 20; ++t) p[t] = 1.0;
  for (std::size_t t = 22; t < 32; ++t) p[t] = 1.0;
  CHECK(2 * kDelta < 0.1);
  DecodeParams no_median;
  no_median.median_width = 1;
  const auto ev = decode_events(p, kDelta, no_median);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].offset_s == doctest::Approx(32 * kDelta));
  // A gap of 10 frames (0.116 s) stays split.
  std::fill(p.begin() + 20, p.end(), 0.0);
  std::fill(p.begin() + 30, p.begin() + 40, 1.0);
  CHECK(decode_events(p, kDelta, no_median).size() == 2);
}

TEST_CASE("short blips are removed") {
  std::vector<double> p(100, 0.0);
  p[50] = p[51] = 1.0;  // killed by the median filter
  CHECK(decode_events(p, kDelta).empty());
  DecodeParams no_median;
  no_median.median_width = 1;
  CHECK(decode_events(p, kDelta, no_median).empty());  // 0.023 s < 0.06 s
}

TEST_CASE("decode of rendered events is idempotent") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Event> ev;
    double t = 0.2;
    for (int i = 0; i < 5; ++i) {
      t += 0.15 + (rng() % 100) / 100.0;
      const double d = 0.08 + (rng() % 100) / 100.0;
      ev.push_back({t, t + d, 0.0});
      t += d;
    }
    const auto once = decode_events(render(ev, 1200), kDelta);
    const auto twice = decode_events(render(once, 1200), kDelta);
    REQUIRE(once.size() == twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
      CHECK(once[i].onset_s == doctest::Approx(twice[i].onset_s));
      CHECK(once[i].offset_s == doctest::Approx(twice[i].offset_s));
    }
  }
}

TEST_CASE("matching examples") {
  const std::vector<Event> ref{{0, 1}, {2, 3}, {4, 5}};
  const auto same = match_events(ref, ref);
  CHECK(same.tp == 3);
  CHECK(same.fp == 0);
  CHECK(same.fn == 0);
  CHECK(match_events({}, ref).fn == 3);
  CHECK(iou({0, 1}, {0.5, 1.5}) == doctest::Approx(1.0 / 3));
  CHECK(match_events({{0, 1}}, {{0.5, 1.5}}).tp == 1);
  CHECK(match_events({{0, 1}}, {{0.8, 1.8}}).tp == 0);
}

TEST_CASE("matching is symmetric in counts") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_events(rng, rng() % 6), b = random_events(rng, rng() % 6);
    const auto ab = match_events(a, b), ba = match_events(b, a);
    CHECK(ab.tp == ba.tp);
    CHECK(ab.fp == ba.fn);
    CHECK(ab.fn == ba.fp);
  }
}

TEST_CASE("greedy matching against optimal bipartite matching") {
  std::mt19937_64 rng(2024);
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto pred = random_events(rng, 1 + rng() % 6), ref = random_events(rng, 1 + rng() % 6);
    const auto greedy = match_events(pred, ref, 0.3).tp;
    const auto best = oracle::optimal_tp(pred, ref, 0.3);
    CHECK(greedy <= best);
    CHECK(best - greedy <= 1);
    agree += greedy == best;
  }
  MESSAGE("greedy == optimal on " << agree << "/100 instances");
  CHECK(agree >= 95);
}

TEST_CASE("F-score arithmetic") {
  const auto r = fscore(Counts{1, 0, 1});
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 0.5);
  CHECK(r.f == doctest::Approx(2.0 / 3));
  CHECK(fscore(Counts{}).f == 0.0);
  CHECK(fscore(Counts{2, 0, 0}).f == 1.0);
  const std::vector<Counts> clips{{1, 0, 0}, {0, 1, 1}};
  CHECK(fscore(clips).f == doctest::Approx(0.5));  // micro: TP 1, FP 1, FN 1
}

TEST_CASE("fold fusion") {
  const std::vector<double> a{0.2, 0.4};
  CHECK(fuse_fold_predictions({a}) == a);
  CHECK(fuse_fold_predictions({{0.2}, {0.8}})[0] == doctest::Approx(0.5));
  CHECK(fuse_fold_predictions({{0.1, 0.9}, {0.3, 0.5}, {0.8, 0.2}}) ==
        fuse_fold_predictions({{0.8, 0.2}, {0.1, 0.9}, {0.3, 0.5}}));
  CHECK_THROWS_AS(fuse_fold_predictions({{0.1}, {0.1, 0.2}}), Error);
}

TEST_CASE("report renderings") {
  const auto r = fscore(Counts{3, 1, 2});
  const auto j = nlohmann::json::parse(report_json(r));
  CHECK(j["tp"] == 3);
  CHECK(j["f"].get<double>() == doctest::Approx(r.f));
  CHECK(report_table(r).find("precision") != std::string::npos);
}
