#include "fsed/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fsed/autodiff/nn.hpp"
#include "fsed/autodiff/ops.hpp"

namespace fsed::ad {
namespace {

double project(const Tensor& y, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * w[i];
  return s;
}

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

// Values bounded away from zero and from each other, so kinks of relu and
// max pooling are never within one finite-difference step.
std::vector<double> separated_values(std::size_t n, std::mt19937_64& rng) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = (static_cast<double>(i) + 1.0) * 0.05 * (i % 2 == 0 ? 1.0 : -1.0);
  }
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

Tensor param(Shape shape, std::vector<double> values) {
  return Tensor::parameter(std::move(shape), std::move(values));
}

}  // namespace

double max_relative_error(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
                          std::uint64_t seed, const GradCheckOptions& options) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (auto t : wrt) t.zero_grad();
  const Tensor y = f();
  const std::vector<double> w = random_values(y.size(), rng);
  weighted_sum(y, w).backward();

  double worst = 0.0;
  for (auto t : wrt) {
    const std::vector<double> analytic =
        t.grad().empty() ? std::vector<double>(t.size(), 0.0)
                         : std::vector<double>(t.grad().begin(), t.grad().end());
    auto values = t.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double plus = project(f(), w);
      values[i] = saved - options.step;
      const double minus = project(f(), w);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    t.zero_grad();
  }
  return worst;
}

std::vector<GradCheckResult> run_gradient_suite(int seeds, const GradCheckOptions& options) {
  using Case = std::function<double(std::uint64_t)>;
  std::vector<std::pair<std::string, Case>> cases;

  cases.emplace_back("conv2d", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = param({2, 4, 5}, random_values(40, rng));
    Tensor k = param({3, 2, 3, 3}, random_values(54, rng));
    Tensor b = param({3}, random_values(3, rng));
    return max_relative_error([&] { return conv2d(x, k, b); }, {x, k, b}, s, options);
  });
  cases.emplace_back("batchnorm2d_train", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = param({2, 3, 4}, random_values(24, rng));
    Tensor g = param({2}, random_values(2, rng, 0.5, 1.5));
    Tensor b = param({2}, random_values(2, rng));
    Tensor rm = Tensor::zeros({2});
    Tensor rv = Tensor::constant({2}, {1.0, 1.0});
    BatchNormOptions bn{BnMode::train, false};
    return max_relative_error([&] { return batchnorm2d(x, g, b, rm, rv, bn); }, {x, g, b}, s,
                              options);
  });
  cases.emplace_back("batchnorm2d_eval", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = param({2, 3, 4}, random_values(24, rng));
    Tensor g = param({2}, random_values(2, rng, 0.5, 1.5));
    Tensor b = param({2}, random_values(2, rng));
    Tensor rm = Tensor::constant({2}, random_values(2, rng));
    Tensor rv = Tensor::constant({2}, random_values(2, rng, 0.5, 2.0));
    BatchNormOptions bn{BnMode::eval, false};
    return max_relative_error([&] { return batchnorm2d(x, g, b, rm, rv, bn); }, {x, g, b}, s,
                              options);
  });
  cases.emplace_back("linear", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = param({4, 5}, random_values(20, rng));
    Tensor w = param({3, 5}, random_values(15, rng));
    Tensor b = param({3}, random_values(3, rng));
    return max_relative_error([&] { return linear(x, w, b); }, {x, w, b}, s, options);
  });
  cases.emplace_back("matmul", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor a = param({3, 4}, random_values(12, rng));
    Tensor b = param({2, 4}, random_values(8, rng));
    return max_relative_error([&] { return matmul(a, transpose(b)); }, {a, b}, s, options);
  });
  cases.emplace_back("relu", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = param({3, 7}, separated_values(21, rng));
    return max_relative_error([&] { return relu(x); }, {x}, s, options);
  });
  cases.emplace_back("maxpool2d", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = param({2, 5, 7}, separated_values(70, rng));
    return max_relative_error([&] { return maxpool2d(x, 2, 2); }, {x}, s, options);
  });
  cases.emplace_back("bn_relu_maxpool", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = param({2, 5, 7}, separated_values(70, rng));
    Tensor g = param({2}, random_values(2, rng, 0.5, 1.5));
    Tensor b = param({2}, random_values(2, rng, -0.5, 0.5));
    Tensor rm = Tensor::zeros({2});
    Tensor rv = Tensor::constant({2}, {1.0, 1.0});
    BatchNormOptions bn{BnMode::train, false};
    return max_relative_error([&] { return bn_relu_maxpool(x, g, b, rm, rv, bn, 2, 2); }, {x, g, b}, s,
                              options);
  });
  cases.emplace_back("layer_norm", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = param({3, 6}, random_values(18, rng));
    Tensor g = param({6}, random_values(6, rng, 0.5, 1.5));
    Tensor b = param({6}, random_values(6, rng));
    return max_relative_error([&] { return layer_norm(x, g, b); }, {x, g, b}, s, options);
  });
  cases.emplace_back("softmax_rows", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = param({3, 5}, random_values(15, rng, -2.0, 2.0));
    return max_relative_error([&] { return softmax_rows(x); }, {x}, s, options);
  });
  cases.emplace_back("concat_slice", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor a = param({3, 2}, random_values(6, rng));
    Tensor b = param({3, 4}, random_values(12, rng));
    return max_relative_error([&] { return slice_cols(concat_cols({a, b}), 1, 4); }, {a, b}, s,
                              options);
  });
  cases.emplace_back("time_major_flatten", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = param({2, 3, 4}, random_values(24, rng));
    return max_relative_error([&] { return time_major_flatten(x); }, {x}, s, options);
  });
  cases.emplace_back("repeat_upsample", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = param({3, 2}, random_values(6, rng));
    return max_relative_error([&] { return repeat_upsample(x, 4, 11); }, {x}, s, options);
  });
  cases.emplace_back("masked_mean_rows", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = param({5, 3}, random_values(15, rng));
    const std::vector<int> mask{1, 0, 1, 1, 0};
    return max_relative_error([&] { return repeat_rows(masked_mean_rows(x, mask), 3); }, {x}, s,
                              options);
  });
  cases.emplace_back("multi_head_attention", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    MultiHeadAttention mha(16, 8, rng);
    Tensor x = param({5, 16}, random_values(80, rng));
    TensorList ps;
    mha.collect("mha", ps);
    std::vector<Tensor> wrt{x};
    for (auto& p : ps) wrt.push_back(p.tensor);
    return max_relative_error([&] { return mha.forward(x); }, wrt, s, options);
  });
  cases.emplace_back("transformer_encoder_layer", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    TransformerEncoderLayer layer(8, 2, 16, rng);
    Tensor x = param({4, 8}, random_values(32, rng));
    TensorList ps;
    layer.collect("tf", ps);
    std::vector<Tensor> wrt{x};
    for (auto& p : ps) wrt.push_back(p.tensor);
    return max_relative_error([&] { return layer.forward(x); }, wrt, s, options);
  });
  cases.emplace_back("masked_softmax_ce", [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tensor x = param({6, 4}, random_values(24, rng, -2.0, 2.0));
    const std::vector<int> labels{0, 3, 1, 2, 2, 0};
    const std::vector<int> mask{1, 1, 0, 1, 0, 1};
    return max_relative_error([&] { return masked_softmax_ce(x, labels, mask); }, {x}, s,
                              options);
  });

  std::vector<GradCheckResult> results;
  for (auto& [name, run] : cases) {
    GradCheckResult r{name, 0.0, seeds};
    for (int s = 0; s < seeds; ++s) {
      r.max_rel_error = std::max(r.max_rel_error, run(1000 + static_cast<std::uint64_t>(s)));
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace fsed::ad
