#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fsed::ingest {

/// Every tunable of the pipeline. Defaults are the full-scale settings; the
/// config file overrides any subset as flat `key = value` lines.
struct RunConfig {
  // frontend
  int sample_rate = 22050;
  int n_fft = 1024;
  int hop = 256;
  int mel_bands = 128;
  double mel_fmin = 0.0;
  double mel_fmax = 0.0;  // 0 = Nyquist
  double pcen_s = 0.025;
  double pcen_alpha = 0.98;
  double pcen_delta = 2.0;
  double pcen_r = 0.5;
  double pcen_eps = 1e-6;
  std::vector<double> speed_factors{0.9, 1.0, 1.1};

  // windowing
  int win_frames = 431;
  int shift_frames = 86;

  // model
  int channels = 128;
  int embed_dim = 128;
  int tf_heads = 8;
  int tf_ffn = 2048;
  bool use_transformer = true;
  bool multitask = true;

  // pretraining
  double lr_pretrain = 1e-4;
  int step_size = 10;
  double gamma = 0.5;
  int iters = 100;  // epochs over the windowed base corpus
  int kfold = 5;
  bool balanced_sampling = true;

  // fine-tuning
  double lr_sed = 1e-3;
  double lr_sfbc = 1e-4;
  int finetune_iters = 100;
  int sfbc_iters = 100;
  int finetune_batch = 4;
  int base_mix_windows = 2;
  int support_windows = 32;
  double neg_quota_frac = 0.2;
  int neg_quota_min = 2;
  int pseudo_cycles = 3;
  int pseudo_iters = 20;
  double pseudo_hi = 0.9;
  double pseudo_lo = 0.1;
  std::string decoder_graft = "pos_center";  // or "binary_weights"

  // TimeFilterAug
  bool time_filter_aug = true;
  int aug_start_iter = 40;
  int aug_zones = 6;
  int aug_min_zone = 48;
  double aug_db_low = -6.0;
  double aug_db_high = 8.0;

  // event decoding and scoring
  double threshold = 0.5;
  double min_dur_s = 0.06;
  double merge_gap_s = 0.1;
  int median_width = 5;
  double iou_min = 0.3;

  std::uint64_t seed = 0;

  double frame_period_s() const { return static_cast<double>(hop) / sample_rate; }

  /// Applies one `key = value` assignment. Unknown keys and unparsable values
  /// raise ErrorCategory::config.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  /// Canonical `key = value` text of every field, in a fixed order.
  std::string to_text() const;
};

RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text);

/// FNV-1a 64 of to_text(), hex encoded.
std::string config_hash(const RunConfig& cfg);

}  // namespace fsed::ingest
