#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fsed/autodiff/ops.hpp"
#include "fsed/autodiff/tensor.hpp"

namespace fsed::ad {

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;  // false for buffers such as BN running statistics
};

using TensorList = std::vector<NamedTensor>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization for weights and
/// biases of linear and convolution layers.
std::vector<double> uniform_fan_in(std::size_t count, std::size_t fan_in, std::mt19937_64& rng);

struct Linear {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, TensorList& out) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, TensorList& out) const;
};

/// conv 3x3 -> batch norm -> ReLU -> max pool.
struct ConvBlock {
  Tensor kernels;  // [out x in x 3 x 3]
  Tensor bias;
  Tensor bn_gamma;
  Tensor bn_beta;
  Tensor running_mean;
  Tensor running_var;
  std::size_t pool_h = 1;
  std::size_t pool_w = 1;

  ConvBlock() = default;
  ConvBlock(std::size_t in_channels, std::size_t out_channels, std::size_t pool_h,
            std::size_t pool_w, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, const BatchNormOptions& bn);
  void collect(const std::string& prefix, TensorList& out) const;
};

/// Scaled dot-product self-attention over [T x D] with `heads` heads.
struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, std::mt19937_64& rng);
  Tensor forward(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in) const;
  Tensor forward(const Tensor& x) const { return forward(x, x, x); }
  void collect(const std::string& prefix, TensorList& out) const;
};

/// Sinusoidal positional encoding table [T x D].
Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

/// Pre-norm encoder layer:
///   h = x + pe; h = h + MHA(LN1(h)); out = h + FFN(LN2(h)).
struct TransformerEncoderLayer {
  LayerNorm norm1;
  MultiHeadAttention attention;
  LayerNorm norm2;
  Linear ffn_in;
  Linear ffn_out;

  TransformerEncoderLayer() = default;
  TransformerEncoderLayer(std::size_t dim, std::size_t heads, std::size_t ffn_dim,
                          std::mt19937_64& rng);
  Tensor forward(const Tensor& x, bool positional_encoding = true) const;
  void collect(const std::string& prefix, TensorList& out) const;
};

}  // namespace fsed::ad
