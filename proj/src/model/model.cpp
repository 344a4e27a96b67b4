#include "fsed/model/model.hpp"

#include <algorithm>
#include <random>

#include "fsed/autodiff/checkpoint.hpp"
#include "fsed/error.hpp"

namespace fsed::model {
namespace {

constexpr const char* kMetaHyper = "meta.hyper";
constexpr const char* kMetaClassPrefix = "meta.class.";

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

std::size_t reduced_bands(std::size_t bands) {
  for (int i = 0; i < 4; ++i) bands = ceil_div(bands, 2);
  return bands;
}

}  // namespace

ModelConfig model_config(const ingest::RunConfig& cfg, std::size_t classes) {
  ModelConfig m;
  m.bands = static_cast<std::size_t>(cfg.mel_bands);
  m.win = static_cast<std::size_t>(cfg.win_frames);
  m.channels = static_cast<std::size_t>(cfg.channels);
  m.embed_dim = static_cast<std::size_t>(cfg.embed_dim);
  m.tf_heads = static_cast<std::size_t>(cfg.tf_heads);
  m.tf_ffn = static_cast<std::size_t>(cfg.tf_ffn);
  m.classes = classes;
  m.use_transformer = cfg.use_transformer;
  return m;
}

std::size_t reduced_frames(std::size_t win) { return ceil_div(ceil_div(win, 2), 2); }

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  if (config.classes < 2) raise(ErrorCategory::config, "model needs at least 2 classes");
  if (config.embed_dim * 2 % config.tf_heads != 0) {
    raise(ErrorCategory::config, "transformer dim 2*embed_dim must be divisible by tf_heads");
  }
  std::mt19937_64 rng(seed);
  const std::size_t c = config.channels;
  blocks[0] = ad::ConvBlock(1, c, 2, 2, rng);
  blocks[1] = ad::ConvBlock(c, c, 2, 2, rng);
  blocks[2] = ad::ConvBlock(c, c, 1, 2, rng);
  blocks[3] = ad::ConvBlock(c, c, 1, 2, rng);
  embed_proj = ad::Linear(c * reduced_bands(config.bands), config.embed_dim, rng);
  transformer = ad::TransformerEncoderLayer(2 * config.embed_dim, config.tf_heads, config.tf_ffn, rng);
  decoder_sed = ad::Linear(config.embed_dim, config.classes, rng);
  decoder_sfbc = ad::Linear(2 * config.embed_dim, 2, rng);
  decoder_bin = ad::Linear(config.embed_dim, 2, rng);
}

ad::TensorList Model::named_tensors() const {
  ad::TensorList out;
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("block" + std::to_string(i + 1), out);
  embed_proj.collect("embed", out);
  transformer.collect("transformer", out);
  decoder_sed.collect("decoder_sed", out);
  decoder_sfbc.collect("decoder_sfbc", out);
  decoder_bin.collect("decoder_bin", out);
  return out;
}

ad::Tensor Model::run_blocks(const ad::Tensor& image, std::size_t first, std::size_t last,
                             const ad::BatchNormOptions& bn) {
  ad::Tensor h = image;
  for (std::size_t i = first; i < last; ++i) h = blocks[i].forward(h, bn);
  return h;
}

ad::Tensor Model::project(const ad::Tensor& block_out) const {
  return embed_proj.forward(ad::time_major_flatten(block_out));
}

ad::Tensor Model::embed(const ad::Tensor& window, const ad::BatchNormOptions& bn) {
  if (window.rank() != 2 || window.dim(0) != config_.win || window.dim(1) != config_.bands) {
    raise(ErrorCategory::shape, "model expects a [" + std::to_string(config_.win) + " x " +
                                    std::to_string(config_.bands) + "] window, got " +
                                    ad::shape_string(window.shape()));
  }
  const ad::Tensor image = ad::Tensor::make_result(
      "as_image", {1, config_.win, config_.bands},
      std::vector<double>(window.values().begin(), window.values().end()), {window},
      [src = window.node()](ad::Node& self) {
        auto& g = src->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
  return project(run_blocks(image, 0, blocks.size(), bn));
}

ad::Tensor Model::embed(const Matrix& window, const ad::BatchNormOptions& bn) {
  return embed(ad::Tensor::constant({window.rows, window.cols}, window.data), bn);
}

ad::Tensor Model::sed_forward(const ad::Tensor& emb) const {
  return ad::repeat_upsample(decoder_sed.forward(emb), kTimeReduction, config_.win);
}

ad::Tensor Model::sfbc_tokens(const ad::Tensor& emb, const ad::Tensor& center) const {
  const ad::Tensor tokens = ad::concat_cols({ad::repeat_rows(center, emb.dim(0)), emb});
  return config_.use_transformer ? transformer.forward(tokens) : tokens;
}

ad::Tensor Model::sfbc_head(const ad::Tensor& tokens) const {
  return ad::repeat_upsample(decoder_sfbc.forward(tokens), kTimeReduction, config_.win);
}

ad::Tensor Model::bin_forward(const ad::Tensor& emb) const {
  return ad::repeat_upsample(decoder_bin.forward(emb), kTimeReduction, config_.win);
}

Model clone(const Model& model) {
  Model copy(model.config(), 0);
  copy.class_names = model.class_names;
  auto dst = copy.named_tensors();
  ad::assign_records(ad::to_records(model.named_tensors()), dst);
  return copy;
}

Matrix tc_vector(const Matrix& window, std::span<const int> labels, int target) {
  if (labels.size() != window.rows) raise(ErrorCategory::shape, "tc_vector: label length mismatch");
  Matrix out(window.rows, window.cols, 0.0);
  for (std::size_t t = 0; t < window.rows; ++t) {
    if (labels[t] == target) std::copy_n(window.row(t).begin(), window.cols, out.row(t).begin());
  }
  return out;
}

std::size_t select_tc_window(std::span<const framing::WindowBatch> windows, int target,
                             std::size_t current) {
  if (current >= windows.size()) raise(ErrorCategory::selection, "current window out of range");
  const auto holds = [&](std::size_t i) {
    const auto& w = windows[i];
    for (std::size_t t = 0; t < w.valid_frames; ++t) {
      if (w.sed_labels[t] == target) return true;
    }
    return false;
  };
  for (std::size_t i = current; i-- > 0;) {
    if (windows[i].source_id != windows[current].source_id) break;
    if (holds(i)) return i;
  }
  if (holds(current)) return current;
  raise(ErrorCategory::selection, "class " + std::to_string(target) + " absent from the clip");
}

std::vector<int> reduce_mask(std::span<const int> frame_mask, std::size_t factor, std::size_t reduced) {
  std::vector<int> out(reduced, 0);
  for (std::size_t t = 0; t < frame_mask.size(); ++t) {
    if (frame_mask[t] != 0 && t / factor < reduced) out[t / factor] = 1;
  }
  return out;
}

ad::Tensor masked_center(const ad::Tensor& emb, std::span<const int> frame_mask) {
  const auto reduced = reduce_mask(frame_mask, kTimeReduction, emb.dim(0));
  if (std::none_of(reduced.begin(), reduced.end(), [](int v) { return v != 0; })) {
    raise(ErrorCategory::validation, "no POS frames to form a class centre");
  }
  return ad::masked_mean_rows(emb, reduced);
}

std::vector<ad::CheckpointRecord> model_records(const Model& model, const std::string& prefix) {
  auto records = ad::to_records(model.named_tensors());
  const auto& c = model.config();
  records.push_back({kMetaHyper,
                     {8},
                     {static_cast<double>(c.bands), static_cast<double>(c.win),
                      static_cast<double>(c.channels), static_cast<double>(c.embed_dim),
                      static_cast<double>(c.tf_heads), static_cast<double>(c.tf_ffn),
                      static_cast<double>(c.classes), c.use_transformer ? 1.0 : 0.0}});
  for (std::size_t i = 0; i < model.class_names.size(); ++i) {
    records.push_back({kMetaClassPrefix + model.class_names[i], {1}, {static_cast<double>(i + 1)}});
  }
  for (auto& r : records) r.name = prefix + r.name;
  return records;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  ad::write_checkpoint(path, model_records(model));
}

Model model_from_records(const std::vector<ad::CheckpointRecord>& all, const std::string& prefix) {
  std::vector<ad::CheckpointRecord> records;
  for (const auto& r : all) {
    if (r.name.starts_with(prefix)) records.push_back({r.name.substr(prefix.size()), r.shape, r.data});
  }
  const auto hyper = std::find_if(records.begin(), records.end(),
                                  [](const auto& r) { return r.name == kMetaHyper; });
  if (hyper == records.end() || hyper->data.size() != 8) {
    raise(ErrorCategory::format, "no model hyperparameters under '" + prefix + "'");
  }
  const auto& h = hyper->data;
  ModelConfig c;
  c.bands = static_cast<std::size_t>(h[0]);
  c.win = static_cast<std::size_t>(h[1]);
  c.channels = static_cast<std::size_t>(h[2]);
  c.embed_dim = static_cast<std::size_t>(h[3]);
  c.tf_heads = static_cast<std::size_t>(h[4]);
  c.tf_ffn = static_cast<std::size_t>(h[5]);
  c.classes = static_cast<std::size_t>(h[6]);
  c.use_transformer = h[7] != 0.0;
  Model model(c, 0);
  std::vector<std::pair<int, std::string>> names;
  for (const auto& r : records) {
    if (r.name.starts_with(kMetaClassPrefix)) {
      names.emplace_back(static_cast<int>(r.data.at(0)), r.name.substr(std::string(kMetaClassPrefix).size()));
    }
  }
  std::sort(names.begin(), names.end());
  for (auto& [idx, name] : names) model.class_names.push_back(std::move(name));
  auto targets = model.named_tensors();
  ad::assign_records(records, targets);
  return model;
}

Model load_model(const std::filesystem::path& path) {
  try {
    return model_from_records(ad::read_checkpoint(path));
  } catch (const Error& e) {
    raise(e.category(), path.string() + ": " + e.what());
  }
}

bool same_weights(const Model& a, const Model& b) {
  const auto ta = a.named_tensors(), tb = b.named_tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].name != tb[i].name || ta[i].tensor.shape() != tb[i].tensor.shape()) return false;
    const auto va = ta[i].tensor.values(), vb = tb[i].tensor.values();
    if (!std::equal(va.begin(), va.end(), vb.begin())) return false;
  }
  return true;
}

}  // namespace fsed::model
