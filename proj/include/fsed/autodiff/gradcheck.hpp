#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fsed/autodiff/tensor.hpp"

namespace fsed::ad {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error, so that elements whose
  /// gradients are both ~0 compare on an absolute scale.
  double floor = 1e-4;
};

/// Compares reverse-mode gradients of a random scalar projection of f()
/// against central finite differences over every element of `wrt`.
/// Returns max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, floor).
/// f must rebuild its output from the current values of the `wrt` tensors.
double max_relative_error(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
                          std::uint64_t seed, const GradCheckOptions& options = {});

struct GradCheckResult {
  std::string op;
  double max_rel_error = 0.0;
  int seeds = 0;
};

/// Gradient checks of every differentiable op on random small tensors,
/// `seeds` instances each.
std::vector<GradCheckResult> run_gradient_suite(int seeds = 10,
                                                const GradCheckOptions& options = {});

}  // namespace fsed::ad
