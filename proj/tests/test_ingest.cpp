#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "fsed/error.hpp"
#include "fsed/ingest/annotations.hpp"
#include "fsed/ingest/audio.hpp"
#include "fsed/ingest/config.hpp"
#include "fsed/ingest/synth.hpp"

namespace fs = std::filesystem;
using namespace fsed;
using namespace fsed::ingest;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "fsed_test_ingest";
  fs::create_directories(dir);
  return dir / name;
}

void put_u16(std::ofstream& o, std::uint16_t v) { o.write(reinterpret_cast<const char*>(&v), 2); }
void put_u32(std::ofstream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }

// Minimal hand-rolled RIFF writer, independent of write_wav.
void raw_wav(const fs::path& path, std::uint16_t format, std::uint16_t channels,
             std::uint16_t bits, const std::vector<char>& payload) {
  std::ofstream o(path, std::ios::binary);
  o.write("RIFF", 4);
  put_u32(o, static_cast<std::uint32_t>(36 + payload.size()));
  o.write("WAVEfmt ", 8);
  put_u32(o, 16);
  put_u16(o, format);
  put_u16(o, channels);
  put_u32(o, 22050);
  put_u32(o, 22050u * channels * bits / 8);
  put_u16(o, static_cast<std::uint16_t>(channels * bits / 8));
  put_u16(o, bits);
  o.write("data", 4);
  put_u32(o, static_cast<std::uint32_t>(payload.size()));
  o.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

template <typename T>
std::vector<char> bytes_of(const std::vector<T>& v) {
  std::vector<char> out(v.size() * sizeof(T));
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::vector<AnnotationEvent> pos(std::initializer_list<std::pair<double, double>> spans) {
  std::vector<AnnotationEvent> out;
  for (auto [a, b] : spans) out.push_back({a, b, "POS", "x.wav"});
  return out;
}

double rms(const std::vector<double>& x, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (std::size_t i = a; i < b; ++i) s += x[i] * x[i];
  return b > a ? std::sqrt(s / static_cast<double>(b - a)) : 0.0;
}

}  // namespace

TEST_CASE("16-bit samples scale by 2^15") {
  const auto p = scratch("scale.wav");
  raw_wav(p, 1, 1, 16, bytes_of(std::vector<std::int16_t>{16384, 0, -32768}));
  const auto clip = read_wav(p);
  REQUIRE(clip.samples.size() == 3);
  CHECK(clip.sample_rate == 22050);
  CHECK(clip.samples[0] == 0.5);
  CHECK(clip.samples[1] == 0.0);
  CHECK(clip.samples[2] == -1.0);
}

TEST_CASE("stereo float frames average to mono") {
  const auto p = scratch("stereo.wav");
  raw_wav(p, 3, 2, 32, bytes_of(std::vector<float>{0.2f, 0.4f}));
  const auto clip = read_wav(p);
  REQUIRE(clip.samples.size() == 1);
  CHECK(clip.samples[0] == doctest::Approx(0.3).epsilon(1e-7));
}

TEST_CASE("8-bit and 24-bit integer PCM") {
  const auto p8 = scratch("u8.wav");
  raw_wav(p8, 1, 1, 8, {static_cast<char>(192), static_cast<char>(128)});
  const auto c8 = read_wav(p8);
  CHECK(c8.samples[0] == 0.5);
  CHECK(c8.samples[1] == 0.0);

  const auto p24 = scratch("s24.wav");
  raw_wav(p24, 1, 1, 24, {0x00, 0x00, 0x40});  // 0x400000 = 2^22
  CHECK(read_wav(p24).samples[0] == 0.5);
}

TEST_CASE("malformed or unsupported wav") {
  const auto bad = scratch("bad.wav");
  write_text(bad, "not a riff file at all");
  try {
    read_wav(bad);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::format);
  }
  const auto alaw = scratch("alaw.wav");
  raw_wav(alaw, 6, 1, 8, {0, 0});
  try {
    read_wav(alaw);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::unsupported);
  }
}

TEST_CASE("write_wav then read_wav is exact on 16-bit values") {
  AudioClip clip;
  clip.sample_rate = 16000;
  for (int v = -32768; v < 32768; v += 37) clip.samples.push_back(v / 32768.0);
  clip.samples.push_back(32767 / 32768.0);
  const auto p = scratch("rt.wav");
  write_wav(p, clip);
  const auto back = read_wav(p);
  CHECK(back.sample_rate == 16000);
  CHECK(back.samples == clip.samples);
}

TEST_CASE("annotation rows parse to events") {
  const auto p = scratch("one.csv");
  write_text(p, "Audiofilename,Starttime,Endtime,Q\na.wav,1.0,1.5,POS\n");
  const auto ev = read_annotations(p);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].onset_s == 1.0);
  CHECK(ev[0].offset_s == 1.5);
  CHECK(ev[0].label == "POS");
  CHECK(ev[0].audio_file == "a.wav");
}

TEST_CASE("empty event is a validation error naming the row") {
  const auto p = scratch("empty.csv");
  write_text(p, "Audiofilename,Starttime,Endtime,Q\na.wav,1.0,2.0,POS\na.wav,3.0,3.0,POS\n");
  try {
    read_annotations(p);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::validation);
    CHECK(std::string(e.what()).find('3') != std::string::npos);
  }
}

TEST_CASE("missing column is a format error") {
  const auto p = scratch("nocol.csv");
  write_text(p, "Audiofilename,Starttime,Q\na.wav,1.0,POS\n");
  try {
    read_annotations(p);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::format);
  }
}

TEST_CASE("filtering POS out of a mixed fixture") {
  const auto p = scratch("mixed.csv");
  const std::string text =
      "Audiofilename,Starttime,Endtime,Q\n"
      "f.wav,0.5,1.0,POS\n"
      "f.wav,1.5,2.0,UNK\n"
      "f.wav,2.5,3.0,POS\n"
      "f.wav,3.5,4.0,POS\n"
      "f.wav,4.5,5.0,UNK\n"
      "f.wav,5.5,6.0,POS\n"
      "f.wav,6.5,7.0,UNK\n"
      "f.wav,7.5,8.0,POS\n";
  std::size_t pos_rows = 0;
  for (std::size_t at = 0; (at = text.find(",POS\n", at)) != std::string::npos; ++at) ++pos_rows;
  write_text(p, text);
  const auto all = read_annotations(p);
  CHECK(all.size() == 8);
  CHECK(filter_label(all, "POS").size() == pos_rows);
  CHECK(pos_rows == 5);
}

TEST_CASE("support task from five spaced events") {
  AudioClip clip{std::vector<double>(22050 * 20, 0.0), 22050};
  const auto task = make_support_task(clip, pos({{9, 10}, {1, 2}, {3, 4}, {5, 6}, {7, 8}, {12, 13}}));
  CHECK(task.query_start_s == 10.0);
  REQUIRE(task.pos_events.size() == 5);
  CHECK(task.pos_events[0].onset_s == 1.0);
  REQUIRE(task.neg_intervals.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(task.neg_intervals[static_cast<std::size_t>(i)].onset_s == 2.0 * i);
    CHECK(task.neg_intervals[static_cast<std::size_t>(i)].offset_s == 2.0 * i + 1.0);
  }
}

TEST_CASE("support task omits zero-length gaps and covers the prefix") {
  AudioClip clip{std::vector<double>(22050 * 20, 0.0), 22050};
  const auto task = make_support_task(clip, pos({{0, 1}, {1, 2}, {2.5, 3}, {3, 4}, {6, 7}}));
  // Gaps: [2,2.5], [4,6]; the abutting ones and the leading one at 0 vanish.
  REQUIRE(task.neg_intervals.size() == 2);
  double covered = 0.0;
  for (const auto& n : task.neg_intervals) {
    CHECK(n.offset_s > n.onset_s);
    covered += n.offset_s - n.onset_s;
    for (const auto& p : task.pos_events) CHECK((n.offset_s <= p.onset_s || n.onset_s >= p.offset_s));
  }
  for (const auto& p : task.pos_events) covered += p.offset_s - p.onset_s;
  CHECK(covered == doctest::Approx(task.query_start_s));
}

TEST_CASE("support task needs five shots") {
  AudioClip clip{std::vector<double>(22050 * 20, 0.0), 22050};
  try {
    make_support_task(clip, pos({{1, 2}, {3, 4}, {5, 6}, {7, 8}}));
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::task);
  }
}

TEST_CASE("config parsing, overrides and validation") {
  const auto cfg = parse_config("# comment\nhop = 512\nspeed_factors = 1.0\nseed=9\n");
  CHECK(cfg.hop == 512);
  CHECK(cfg.seed == 9);
  CHECK(cfg.win_frames == 431);
  CHECK(cfg.shift_frames == 86);
  CHECK(parse_config(cfg.to_text()).to_text() == cfg.to_text());
  CHECK(config_hash(cfg) == config_hash(parse_config(cfg.to_text())));
  CHECK(config_hash(cfg) != config_hash(RunConfig{}));
  CHECK_THROWS_AS(parse_config("no_such_key = 1\n"), Error);
  CHECK_THROWS_AS(parse_config("win_frames = 50\nshift_frames = 86\n"), Error);
  CHECK_THROWS_AS(parse_config("aug_db_low = 8\naug_db_high = -6\n"), Error);
}

TEST_CASE("synthetic data is deterministic on disk") {
  auto spec = default_bench_spec();
  spec.base_clip_s = 20.0;
  spec.base_events_per_file = 8;
  spec.novel_clip_s = 20.0;
  spec.novel_events = 10;
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  fs::remove_all(a);
  fs::remove_all(b);
  synth_task_set(spec, 42, a);
  synth_task_set(spec, 42, b);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    ++files;
    CHECK(slurp(entry.path()) == slurp(b / fs::relative(entry.path(), a)));
  }
  CHECK(files == 2 * (4 + 2));
}

TEST_CASE("four base files each carry every base class") {
  const auto spec = default_bench_spec();
  const auto dir = scratch("synth_base");
  fs::remove_all(dir);
  synth_task_set(spec, 3, dir);
  const auto pairs = list_pairs(dir / "base");
  REQUIRE(pairs.size() == 4);
  for (const auto& [wav, csv] : pairs) {
    CHECK(read_wav(wav).duration_s() == doctest::Approx(60.0));
    const auto events = read_annotations(csv);
    for (const auto& cls : spec.base_classes) CHECK(!filter_label(events, cls.name).empty());
  }
  for (const auto& [wav, csv] : list_pairs(dir / "novel")) {
    CHECK(filter_label(read_annotations(csv), "POS").size() >= 10);
  }
}

TEST_CASE("noise-free synthesis is silent between events") {
  auto spec = default_bench_spec();
  spec.snr_db = std::numeric_limits<double>::infinity();
  spec.base_clip_s = 20.0;
  spec.base_events_per_file = 8;
  spec.novel_clip_s = 20.0;
  spec.novel_events = 10;
  const auto data = synth_dataset(spec, 5);
  for (const auto& file : data.base) {
    const auto& x = file.clip.samples;
    std::size_t prev_end = 0;
    for (const auto& ev : file.events) {
      const auto s = static_cast<std::size_t>(std::llround(ev.onset_s * 22050));
      const auto e = static_cast<std::size_t>(std::llround(ev.offset_s * 22050));
      CHECK(rms(x, s, e) > 0.0);
      CHECK(rms(x, prev_end, s) == 0.0);
      prev_end = e;
    }
    CHECK(rms(x, prev_end, x.size()) == 0.0);
  }
}

TEST_CASE("infeasible event density is a generation error") {
  auto spec = default_bench_spec();
  spec.base_clip_s = 5.0;
  try {
    synth_dataset(spec, 1);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::generation);
  }
}
