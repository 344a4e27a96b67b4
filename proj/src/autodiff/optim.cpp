#include "fsed/autodiff/optim.hpp"

#include <cmath>

#include "fsed/error.hpp"

namespace fsed::ad {

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  first_.reserve(params_.size());
  second_.reserve(params_.size());
  for (const auto& p : params_) {
    first_.emplace_back(p.size(), 0.0);
    second_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto grad = params_[k].grad();
    if (grad.empty()) continue;
    auto values = params_[k].mutable_values();
    if (grad.size() != values.size()) {
      raise(ErrorCategory::shape, "adam: gradient/parameter size mismatch");
    }
    auto& m = first_[k];
    auto& v = second_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * grad[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      values[i] -= lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double steplr(double base_lr, int epoch, int step_size, double gamma) {
  if (epoch < 0) raise(ErrorCategory::validation, "steplr: negative epoch");
  return base_lr * std::pow(gamma, epoch / step_size);
}

}  // namespace fsed::ad
