#pragma once

#include <cstdint>
#include <vector>

#include "fsed/autodiff/tensor.hpp"

namespace fsed::ad {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed list of parameter tensors. Parameters
/// without an accumulated gradient are left untouched for that step.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamOptions options = {});

  void step(double lr);
  void zero_grad();
  std::uint64_t step_count() const { return steps_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  AdamOptions options_;
  std::uint64_t steps_ = 0;
};

/// base_lr * gamma^floor(epoch / step_size)
double steplr(double base_lr, int epoch, int step_size = 10, double gamma = 0.5);

}  // namespace fsed::ad
