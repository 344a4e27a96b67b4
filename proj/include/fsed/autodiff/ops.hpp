#pragma once

#include <span>
#include <vector>

#include "fsed/autodiff/tensor.hpp"

namespace fsed::ad {

// Layout conventions: matrices are row-major [rows x cols]; images are
// [channels x height x width]. Every op raises ErrorCategory::shape on
// mismatched inputs and ErrorCategory::numeric if it produces NaN/Inf.

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& x);

/// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// x [T x in], weight [out x in], bias [out] -> [T x out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// 3x3 cross-correlation, stride 1, zero padding 1.
/// input [Cin x H x W], kernels [Cout x Cin x 3 x 3], bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias);

enum class BnMode { train, eval };

struct BatchNormOptions {
  BnMode mode = BnMode::train;
  bool update_running = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization of [C x H x W]. In train mode the batch is the
/// single image, statistics are taken over H x W, and the running buffers are
/// updated (unbiased variance) when options.update_running is set.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var,
                   const BatchNormOptions& options);

/// Max pooling with non-overlapping pool_h x pool_w windows in ceil mode:
/// the trailing partial window takes the max over the rows/cols it has.
Tensor maxpool2d(const Tensor& input, std::size_t pool_h, std::size_t pool_w);

/// maxpool2d(relu(batchnorm2d(x))) as one node that stores only the pooled
/// output and the winning position of every pool cell.
Tensor bn_relu_maxpool(const Tensor& input, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                       Tensor& running_var, const BatchNormOptions& options, std::size_t pool_h,
                       std::size_t pool_w);

/// Row-wise layer normalization of [T x D].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor softmax_rows(const Tensor& x);

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// [C x T x M] -> [T x (C*M)], channel-major within each time step.
Tensor time_major_flatten(const Tensor& x);

/// Each row repeated `factor` times, then trimmed to `target` rows.
Tensor repeat_upsample(const Tensor& x, std::size_t factor, std::size_t target);

/// Mean of the rows of [T x D] whose mask entry is nonzero -> [1 x D].
Tensor masked_mean_rows(const Tensor& x, std::span<const int> mask);

/// [1 x D] -> [n x D]
Tensor repeat_rows(const Tensor& row, std::size_t n);

/// sum_t mask_t * -log softmax(logits_t)[label_t] / max(1, sum_t mask_t).
Tensor masked_softmax_ce(const Tensor& logits, std::span<const int> labels,
                         std::span<const int> mask);

/// sum_i x_i * w_i, with w treated as a constant. Used to project tensors
/// onto scalars for gradient checks.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);

}  // namespace fsed::ad
