#include "fsed/autodiff/nn.hpp"

#include <cmath>

#include "fsed/error.hpp"

namespace fsed::ad {

std::vector<double> uniform_fan_in(std::size_t count, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(count);
  for (double& x : v) x = dist(rng);
  return v;
}

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(Tensor::parameter({out, in}, uniform_fan_in(out * in, in, rng))),
      bias(Tensor::parameter({out}, uniform_fan_in(out, in, rng))) {}

void Linear::collect(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t dim)
    : gamma(Tensor::parameter({dim}, std::vector<double>(dim, 1.0))),
      beta(Tensor::parameter({dim}, std::vector<double>(dim, 0.0))) {}

void LayerNorm::collect(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

ConvBlock::ConvBlock(std::size_t in_channels, std::size_t out_channels, std::size_t ph,
                     std::size_t pw, std::mt19937_64& rng)
    : kernels(Tensor::parameter({out_channels, in_channels, 3, 3},
                                uniform_fan_in(out_channels * in_channels * 9, in_channels * 9, rng))),
      bias(Tensor::parameter({out_channels}, uniform_fan_in(out_channels, in_channels * 9, rng))),
      bn_gamma(Tensor::parameter({out_channels}, std::vector<double>(out_channels, 1.0))),
      bn_beta(Tensor::parameter({out_channels}, std::vector<double>(out_channels, 0.0))),
      running_mean(Tensor::constant({out_channels}, std::vector<double>(out_channels, 0.0))),
      running_var(Tensor::constant({out_channels}, std::vector<double>(out_channels, 1.0))),
      pool_h(ph),
      pool_w(pw) {}

Tensor ConvBlock::forward(const Tensor& x, const BatchNormOptions& bn) {
  return bn_relu_maxpool(conv2d(x, kernels, bias), bn_gamma, bn_beta, running_mean, running_var, bn, pool_h,
                         pool_w);
}

void ConvBlock::collect(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".conv.weight", kernels});
  out.push_back({prefix + ".conv.bias", bias});
  out.push_back({prefix + ".bn.gamma", bn_gamma});
  out.push_back({prefix + ".bn.beta", bn_beta});
  out.push_back({prefix + ".bn.running_mean", running_mean, false});
  out.push_back({prefix + ".bn.running_var", running_var, false});
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t h, std::mt19937_64& rng)
    : heads(h) {
  if (h == 0 || dim % h != 0) {
    raise(ErrorCategory::config, "attention dim " + std::to_string(dim) +
                                     " is not divisible by " + std::to_string(h) + " heads");
  }
  query = Linear(dim, dim, rng);
  key = Linear(dim, dim, rng);
  value = Linear(dim, dim, rng);
  output = Linear(dim, dim, rng);
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& k_in,
                                   const Tensor& v_in) const {
  const std::size_t dim = query.in_features();
  if (q_in.rank() != 2 || q_in.dim(1) != dim || k_in.dim(1) != dim || v_in.dim(1) != dim ||
      k_in.dim(0) != v_in.dim(0)) {
    raise(ErrorCategory::shape, "attention: inputs do not match model dim " + std::to_string(dim));
  }
  if (heads == 0 || dim % heads != 0) {
    raise(ErrorCategory::config, "attention dim not divisible by head count");
  }
  const std::size_t head_dim = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const Tensor q = query.forward(q_in);
  const Tensor k = key.forward(k_in);
  const Tensor v = value.forward(v_in);
  std::vector<Tensor> per_head;
  per_head.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * head_dim, head_dim);
    const Tensor kh = slice_cols(k, h * head_dim, head_dim);
    const Tensor vh = slice_cols(v, h * head_dim, head_dim);
    const Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    per_head.push_back(matmul(softmax_rows(scores), vh));
  }
  return output.forward(concat_cols(per_head));
}

void MultiHeadAttention::collect(const std::string& prefix, TensorList& out) const {
  query.collect(prefix + ".q", out);
  key.collect(prefix + ".k", out);
  value.collect(prefix + ".v", out);
  output.collect(prefix + ".out", out);
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  std::vector<double> pe(length * dim);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(t) * freq;
      pe[t * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::constant({length, dim}, std::move(pe));
}

TransformerEncoderLayer::TransformerEncoderLayer(std::size_t dim, std::size_t heads,
                                                 std::size_t ffn_dim, std::mt19937_64& rng)
    : norm1(dim),
      attention(dim, heads, rng),
      norm2(dim),
      ffn_in(dim, ffn_dim, rng),
      ffn_out(ffn_dim, dim, rng) {}

Tensor TransformerEncoderLayer::forward(const Tensor& x, bool positional_encoding) const {
  Tensor h = x;
  if (positional_encoding) h = add(h, sinusoidal_positions(x.dim(0), x.dim(1)));
  h = add(h, attention.forward(norm1.forward(h)));
  const Tensor ff = ffn_out.forward(relu(ffn_in.forward(norm2.forward(h))));
  return add(h, ff);
}

void TransformerEncoderLayer::collect(const std::string& prefix, TensorList& out) const {
  norm1.collect(prefix + ".norm1", out);
  attention.collect(prefix + ".attn", out);
  norm2.collect(prefix + ".norm2", out);
  ffn_in.collect(prefix + ".ffn_in", out);
  ffn_out.collect(prefix + ".ffn_out", out);
}

}  // namespace fsed::ad
