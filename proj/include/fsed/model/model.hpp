#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fsed/autodiff/checkpoint.hpp"
#include "fsed/autodiff/nn.hpp"
#include "fsed/framing/windows.hpp"
#include "fsed/ingest/config.hpp"
#include "fsed/matrix.hpp"

namespace fsed::model {

struct ModelConfig {
  std::size_t bands = 128;
  std::size_t win = 431;
  std::size_t channels = 128;
  std::size_t embed_dim = 128;
  std::size_t tf_heads = 8;
  std::size_t tf_ffn = 2048;
  std::size_t classes = 20;  // C, background included
  bool use_transformer = true;

  bool operator==(const ModelConfig&) const = default;
};

ModelConfig model_config(const ingest::RunConfig& cfg, std::size_t classes);

inline constexpr std::size_t kTimeReduction = 4;

/// Rows after the two time-pooling blocks: ceil(ceil(win / 2) / 2).
std::size_t reduced_frames(std::size_t win);

/// Four conv blocks (2x2, 2x2, 1x2, 1x2 pooling), per-time-step flatten,
/// linear projection to embed_dim; a pre-norm transformer layer over
/// 2*embed_dim tokens; decoders for SED (C classes), SFBC (2) and the
/// fine-tuning binary head (2).
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// Every tensor by name, BN running statistics included (trainable=false).
  ad::TensorList named_tensors() const;

  /// [win x bands] PCEN window -> [T' x E] embedding.
  ad::Tensor embed(const Matrix& window, const ad::BatchNormOptions& bn);
  ad::Tensor embed(const ad::Tensor& window, const ad::BatchNormOptions& bn);

  /// Runs blocks [first, last) on a [C x H x W] image.
  ad::Tensor run_blocks(const ad::Tensor& image, std::size_t first, std::size_t last,
                        const ad::BatchNormOptions& bn);
  /// Flatten + projection applied to the output of block 4.
  ad::Tensor project(const ad::Tensor& block_out) const;

  /// decoder_sed per reduced frame, repeated to win frames: [win x C].
  ad::Tensor sed_forward(const ad::Tensor& emb) const;
  /// Tokens concat(center, emb[t]) -> transformer (when enabled) ->
  /// decoder_sfbc -> [win x 2]. `center` is [1 x E].
  ad::Tensor sfbc_tokens(const ad::Tensor& emb, const ad::Tensor& center) const;
  ad::Tensor sfbc_head(const ad::Tensor& tokens) const;
  ad::Tensor sfbc_forward(const ad::Tensor& emb, const ad::Tensor& center) const {
    return sfbc_head(sfbc_tokens(emb, center));
  }
  /// decoder_bin per reduced frame: [win x 2].
  ad::Tensor bin_forward(const ad::Tensor& emb) const;

  std::array<ad::ConvBlock, 4> blocks;
  ad::Linear embed_proj;
  ad::TransformerEncoderLayer transformer;
  ad::Linear decoder_sed;
  ad::Linear decoder_sfbc;
  ad::Linear decoder_bin;
  std::vector<std::string> class_names;  // index k names class k + 1

 private:
  ModelConfig config_;
};

/// Deep copy: no tensor is shared with the source.
Model clone(const Model& model);

/// out[t] = window[t] where labels[t] == target, else a zero row.
Matrix tc_vector(const Matrix& window, std::span<const int> labels, int target);

/// Nearest window before `current` (same source) holding a `target` frame,
/// else `current` itself when it holds one. Selection error otherwise.
std::size_t select_tc_window(std::span<const framing::WindowBatch> windows, int target,
                             std::size_t current);

/// A reduced frame is set when any of its `factor` input frames is set.
std::vector<int> reduce_mask(std::span<const int> frame_mask, std::size_t factor,
                             std::size_t reduced);

/// Masked mean of embedding rows over the reduced POS mask: [1 x E].
/// Validation error when the mask is empty.
ad::Tensor masked_center(const ad::Tensor& emb, std::span<const int> frame_mask);

/// Weights plus hyperparameters and class names, every record name
/// prefixed so several models can share one checkpoint file.
std::vector<ad::CheckpointRecord> model_records(const Model& model, const std::string& prefix = "");
Model model_from_records(const std::vector<ad::CheckpointRecord>& records, const std::string& prefix = "");

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

/// Bitwise parameter equality, buffers included.
bool same_weights(const Model& a, const Model& b);

}  // namespace fsed::model
