#include "fsed/ingest/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <type_traits>

#include "fsed/error.hpp"

namespace fsed::ingest {
namespace {

template <typename Cfg, typename F>
void visit_fields(Cfg& c, F&& f) {
  f("sample_rate", c.sample_rate);
  f("n_fft", c.n_fft);
  f("hop", c.hop);
  f("mel_bands", c.mel_bands);
  f("mel_fmin", c.mel_fmin);
  f("mel_fmax", c.mel_fmax);
  f("pcen_s", c.pcen_s);
  f("pcen_alpha", c.pcen_alpha);
  f("pcen_delta", c.pcen_delta);
  f("pcen_r", c.pcen_r);
  f("pcen_eps", c.pcen_eps);
  f("speed_factors", c.speed_factors);
  f("win_frames", c.win_frames);
  f("shift_frames", c.shift_frames);
  f("channels", c.channels);
  f("embed_dim", c.embed_dim);
  f("tf_heads", c.tf_heads);
  f("tf_ffn", c.tf_ffn);
  f("use_transformer", c.use_transformer);
  f("multitask", c.multitask);
  f("lr_pretrain", c.lr_pretrain);
  f("step_size", c.step_size);
  f("gamma", c.gamma);
  f("iters", c.iters);
  f("kfold", c.kfold);
  f("balanced_sampling", c.balanced_sampling);
  f("lr_sed", c.lr_sed);
  f("lr_sfbc", c.lr_sfbc);
  f("finetune_iters", c.finetune_iters);
  f("sfbc_iters", c.sfbc_iters);
  f("finetune_batch", c.finetune_batch);
  f("base_mix_windows", c.base_mix_windows);
  f("support_windows", c.support_windows);
  f("neg_quota_frac", c.neg_quota_frac);
  f("neg_quota_min", c.neg_quota_min);
  f("pseudo_cycles", c.pseudo_cycles);
  f("pseudo_iters", c.pseudo_iters);
  f("pseudo_hi", c.pseudo_hi);
  f("pseudo_lo", c.pseudo_lo);
  f("decoder_graft", c.decoder_graft);
  f("time_filter_aug", c.time_filter_aug);
  f("aug_start_iter", c.aug_start_iter);
  f("aug_zones", c.aug_zones);
  f("aug_min_zone", c.aug_min_zone);
  f("aug_db_low", c.aug_db_low);
  f("aug_db_high", c.aug_db_high);
  f("threshold", c.threshold);
  f("min_dur_s", c.min_dur_s);
  f("merge_gap_s", c.merge_gap_s);
  f("median_width", c.median_width);
  f("iou_min", c.iou_min);
  f("seed", c.seed);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    raise(ErrorCategory::config, "config key '" + key + "': cannot parse '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "on" || text == "yes") return true;
  if (text == "0" || text == "false" || text == "off" || text == "no") return false;
  raise(ErrorCategory::config, "config key '" + key + "': expected a boolean, got '" + text + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  bool found = false;
  visit_fields(*this, [&](const char* name, auto& field) {
    if (found || key != name) return;
    found = true;
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<T, bool>) {
      field = parse_bool(key, value);
    } else if constexpr (std::is_same_v<T, std::string>) {
      field = value;
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      field.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) field.push_back(parse_number<double>(key, trim(item)));
    } else {
      field = parse_number<T>(key, value);
    }
  });
  if (!found) raise(ErrorCategory::config, "unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  const auto check = [](bool ok, const std::string& what) {
    if (!ok) raise(ErrorCategory::config, what);
  };
  check(sample_rate > 0, "sample_rate must be positive");
  check(n_fft > 0 && hop > 0, "n_fft and hop must be positive");
  check(mel_bands > 0, "mel_bands must be positive");
  check(mel_fmin >= 0.0 && (mel_fmax == 0.0 || mel_fmax > mel_fmin), "invalid mel frequency range");
  check(win_frames > shift_frames && shift_frames > 0, "need win_frames > shift_frames > 0");
  check(aug_db_low < aug_db_high, "need aug_db_low < aug_db_high");
  check(aug_zones >= 1 && aug_min_zone >= 1, "aug_zones and aug_min_zone must be positive");
  check(iters > 0, "iters must be positive");
  check(kfold >= 1, "kfold must be >= 1");
  check(channels > 0 && embed_dim > 0, "channels and embed_dim must be positive");
  check(tf_heads > 0 && (2 * embed_dim) % tf_heads == 0,
        "transformer dim 2*embed_dim must be divisible by tf_heads");
  check(!speed_factors.empty(), "speed_factors must not be empty");
  for (double f : speed_factors) check(f > 0.0, "speed factors must be positive");
  check(decoder_graft == "pos_center" || decoder_graft == "binary_weights",
        "decoder_graft must be pos_center or binary_weights");
  check(pseudo_lo < pseudo_hi, "need pseudo_lo < pseudo_hi");
  check(median_width >= 1 && median_width % 2 == 1, "median_width must be odd and positive");
  check(finetune_batch >= 1 && support_windows >= 1, "finetune_batch and support_windows must be positive");
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << std::setprecision(17);
  visit_fields(*this, [&](const char* name, const auto& field) {
    using T = std::decay_t<decltype(field)>;
    out << name << " = ";
    if constexpr (std::is_same_v<T, std::vector<double>>) {
      for (std::size_t i = 0; i < field.size(); ++i) out << (i ? "," : "") << field[i];
    } else if constexpr (std::is_same_v<T, bool>) {
      out << (field ? "true" : "false");
    } else {
      out << field;
    }
    out << '\n';
  });
  return out.str();
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      raise(ErrorCategory::config, "config line " + std::to_string(lineno) + ": expected key = value");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCategory::io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : cfg.to_text()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

}  // namespace fsed::ingest
