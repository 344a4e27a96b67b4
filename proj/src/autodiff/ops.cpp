#include "fsed/autodiff/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "fsed/error.hpp"

namespace fsed::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& what) {
  if (!ok) raise(ErrorCategory::shape, what);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require(t.defined() && t.rank() == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
              (t.defined() ? shape_string(t.shape()) : "undefined"));
}

MapMat as_mat(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MapMat(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return Tensor::make_result("add", a.shape(), std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& p = parent(n, k);
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  return Tensor::make_result("scale", a.shape(), std::move(out), {a}, [factor](Node& n) {
    auto& g = parent(n, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * n.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_result("relu", x.shape(), std::move(out), {x}, [](Node& n) {
    auto& g = parent(n, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (n.value[i] > 0.0) g[i] += n.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ " + shape_string(a.shape()) + " * " +
                             shape_string(b.shape()));
  std::vector<double> out(m * n);
  as_mat(out, m, n).noalias() = as_mat(a.node()->value, m, k) * as_mat(b.node()->value, k, n);
  return Tensor::make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& node) {
    auto dc = as_mat(node.grad, m, n);
    Node& pa = parent(node, 0);
    Node& pb = parent(node, 1);
    if (pa.requires_grad) {
      as_mat(pa.ensure_grad(), m, k).noalias() += dc * as_mat(pb.value, k, n).transpose();
    }
    if (pb.requires_grad) {
      as_mat(pb.ensure_grad(), k, n).noalias() += as_mat(pa.value, m, k).transpose() * dc;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  as_mat(out, n, m) = as_mat(a.node()->value, m, n).transpose();
  return Tensor::make_result("transpose", {n, m}, std::move(out), {a}, [m, n](Node& node) {
    as_mat(parent(node, 0).ensure_grad(), m, n) += as_mat(node.grad, n, m).transpose();
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t t = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  require(weight.dim(1) == in, "linear: input width " + std::to_string(in) +
                                   " does not match weight " + shape_string(weight.shape()));
  require(bias.size() == out_dim, "linear: bias size mismatch");
  std::vector<double> out(t * out_dim);
  auto y = as_mat(out, t, out_dim);
  y.noalias() = as_mat(x.node()->value, t, in) * as_mat(weight.node()->value, out_dim, in).transpose();
  const auto b = Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(),
                                                      static_cast<Eigen::Index>(out_dim));
  y.rowwise() += b;
  return Tensor::make_result(
      "linear", {t, out_dim}, std::move(out), {x, weight, bias}, [t, in, out_dim](Node& node) {
        auto dy = as_mat(node.grad, t, out_dim);
        Node& px = parent(node, 0);
        Node& pw = parent(node, 1);
        Node& pb = parent(node, 2);
        if (px.requires_grad) {
          as_mat(px.ensure_grad(), t, in).noalias() += dy * as_mat(pw.value, out_dim, in);
        }
        if (pw.requires_grad) {
          as_mat(pw.ensure_grad(), out_dim, in).noalias() +=
              dy.transpose() * as_mat(px.value, t, in);
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t r = 0; r < t; ++r) {
            for (std::size_t c = 0; c < out_dim; ++c) g[c] += node.grad[r * out_dim + c];
          }
        }
      });
}

namespace {

// Column matrix [(cin*9) x (h*w)] for a 3x3 same-padded convolution.
std::vector<double> im2col3x3(const std::vector<double>& in, std::size_t cin, std::size_t h,
                              std::size_t w) {
  std::vector<double> col(cin * 9 * h * w, 0.0);
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = col.data() + ((c * 9 + ky * 3 + kx) * h * w);
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          const double* src = in.data() + (c * h + static_cast<std::size_t>(sy)) * w;
          double* dst = row + y * w;
          const std::size_t x0 = kx == 0 ? 1 : 0;
          const std::size_t x1 = kx == 2 ? w - 1 : w;
          for (std::size_t x = x0; x < x1; ++x) dst[x] = src[x + kx - 1];
        }
      }
    }
  }
  return col;
}

void col2im3x3(const std::vector<double>& col, std::size_t cin, std::size_t h, std::size_t w,
               std::vector<double>& out) {
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* row = col.data() + ((c * 9 + ky * 3 + kx) * h * w);
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          double* dst = out.data() + (c * h + static_cast<std::size_t>(sy)) * w;
          const double* src = row + y * w;
          const std::size_t x0 = kx == 0 ? 1 : 0;
          const std::size_t x1 = kx == 2 ? w - 1 : w;
          for (std::size_t x = x0; x < x1; ++x) dst[x + kx - 1] += src[x];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  require_rank(input, 3, "conv2d");
  require_rank(kernels, 4, "conv2d");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernels.dim(0);
  require(kernels.dim(1) == cin && kernels.dim(2) == 3 && kernels.dim(3) == 3,
          "conv2d: kernels " + shape_string(kernels.shape()) + " incompatible with input " +
              shape_string(input.shape()));
  require(bias.size() == cout, "conv2d: bias size mismatch");
  const std::size_t hw = h * w, k9 = cin * 9;

  auto col = std::make_shared<std::vector<double>>(im2col3x3(input.node()->value, cin, h, w));
  std::vector<double> out(cout * hw);
  auto y = as_mat(out, cout, hw);
  y.noalias() = as_mat(kernels.node()->value, cout, k9) * as_mat(*col, k9, hw);
  for (std::size_t o = 0; o < cout; ++o) y.row(static_cast<Eigen::Index>(o)).array() += bias.values()[o];

  const bool keep_col = kernels.requires_grad();
  if (!keep_col) col.reset();
  return Tensor::make_result(
      "conv2d", {cout, h, w}, std::move(out), {input, kernels, bias},
      [col, cin, h, w, cout, hw, k9](Node& node) {
        auto dy = as_mat(node.grad, cout, hw);
        Node& px = parent(node, 0);
        Node& pk = parent(node, 1);
        Node& pb = parent(node, 2);
        if (pk.requires_grad) {
          as_mat(pk.ensure_grad(), cout, k9).noalias() += dy * as_mat(*col, k9, hw).transpose();
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          // Plain loop: Eigen's vectorized sum depends on buffer alignment.
          for (std::size_t o = 0; o < cout; ++o) {
            double s = 0.0;
            for (std::size_t i = 0; i < hw; ++i) s += node.grad[o * hw + i];
            g[o] += s;
          }
        }
        if (px.requires_grad) {
          std::vector<double> dcol(k9 * hw);
          as_mat(dcol, k9, hw).noalias() = as_mat(pk.value, cout, k9).transpose() * dy;
          col2im3x3(dcol, cin, h, w, px.ensure_grad());
        }
      });
}

namespace {

// Per-channel mean and 1/sqrt(var + eps) of [C x N] data; updates the
// running buffers in train mode when asked.
void bn_statistics(const std::vector<double>& x, std::size_t c, std::size_t n, Tensor& running_mean,
                   Tensor& running_var, const BatchNormOptions& options, std::vector<double>& mean,
                   std::vector<double>& invstd) {
  mean.assign(c, 0.0);
  invstd.assign(c, 0.0);
  if (options.mode == BnMode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* px = x.data() + ch * n;
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += px[i];
      const double mu = s / static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) ss += (px[i] - mu) * (px[i] - mu);
      const double var = ss / static_cast<double>(n);
      mean[ch] = mu;
      invstd[ch] = 1.0 / std::sqrt(var + options.eps);
      if (options.update_running) {
        const double unbiased = n > 1 ? ss / static_cast<double>(n - 1) : var;
        auto rm = running_mean.mutable_values();
        auto rv = running_var.mutable_values();
        rm[ch] = (1.0 - options.momentum) * rm[ch] + options.momentum * mu;
        rv[ch] = (1.0 - options.momentum) * rv[ch] + options.momentum * unbiased;
      }
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean.values()[ch];
      invstd[ch] = 1.0 / std::sqrt(running_var.values()[ch] + options.eps);
    }
  }
}

}  // namespace

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var,
                   const BatchNormOptions& options) {
  require_rank(input, 3, "batchnorm2d");
  const std::size_t c = input.dim(0), n = input.dim(1) * input.dim(2);
  require(gamma.size() == c && beta.size() == c && running_mean.size() == c &&
              running_var.size() == c,
          "batchnorm2d: parameter size mismatch for " + shape_string(input.shape()));
  const auto& x = input.node()->value;

  std::vector<double> mean, invstd;
  bn_statistics(x, c, n, running_mean, running_var, options, mean, invstd);

  auto xhat = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double g = gamma.values()[ch], b = beta.values()[ch];
    for (std::size_t i = 0; i < n; ++i) {
      const double xh = (x[ch * n + i] - mean[ch]) * invstd[ch];
      (*xhat)[ch * n + i] = xh;
      out[ch * n + i] = g * xh + b;
    }
  }
  const bool train = options.mode == BnMode::train;
  return Tensor::make_result(
      "batchnorm2d", input.shape(), std::move(out), {input, gamma, beta},
      [xhat, invstd, c, n, train](Node& node) {
        Node& px = parent(node, 0);
        Node& pg = parent(node, 1);
        Node& pb = parent(node, 2);
        const auto& dy = node.grad;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xh = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            sum_dy += dy[ch * n + i];
            sum_dy_xh += dy[ch * n + i] * (*xhat)[ch * n + i];
          }
          if (pg.requires_grad) pg.ensure_grad()[ch] += sum_dy_xh;
          if (pb.requires_grad) pb.ensure_grad()[ch] += sum_dy;
          if (!px.requires_grad) continue;
          auto& gx = px.ensure_grad();
          const double g = pg.value[ch];
          if (train) {
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
              const double xh = (*xhat)[ch * n + i];
              gx[ch * n + i] +=
                  g * invstd[ch] * (dy[ch * n + i] - inv_n * sum_dy - xh * inv_n * sum_dy_xh);
            }
          } else {
            for (std::size_t i = 0; i < n; ++i) gx[ch * n + i] += g * invstd[ch] * dy[ch * n + i];
          }
        }
      });
}

Tensor maxpool2d(const Tensor& input, std::size_t pool_h, std::size_t pool_w) {
  require_rank(input, 3, "maxpool2d");
  require(pool_h > 0 && pool_w > 0, "maxpool2d: pool size must be positive");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t oh = (h + pool_h - 1) / pool_h, ow = (w + pool_w - 1) / pool_w;
  const auto& x = input.node()->value;
  std::vector<double> out(c * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t y = oy * pool_h; y < std::min(h, (oy + 1) * pool_h); ++y) {
          for (std::size_t xx = ox * pool_w; xx < std::min(w, (ox + 1) * pool_w); ++xx) {
            const std::size_t idx = (ch * h + y) * w + xx;
            if (x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (ch * oh + oy) * ow + ox;
        out[o] = best;
        (*argmax)[o] = best_idx;
      }
    }
  }
  return Tensor::make_result("maxpool2d", {c, oh, ow}, std::move(out), {input},
                             [argmax](Node& node) {
                               auto& g = parent(node, 0).ensure_grad();
                               for (std::size_t o = 0; o < node.grad.size(); ++o) {
                                 g[(*argmax)[o]] += node.grad[o];
                               }
                             });
}

Tensor bn_relu_maxpool(const Tensor& input, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                       Tensor& running_var, const BatchNormOptions& options, std::size_t pool_h,
                       std::size_t pool_w) {
  require_rank(input, 3, "bn_relu_maxpool");
  require(pool_h > 0 && pool_w > 0 && pool_h * pool_w <= 256, "bn_relu_maxpool: bad pool size");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2), n = h * w;
  require(gamma.size() == c && beta.size() == c && running_mean.size() == c && running_var.size() == c,
          "bn_relu_maxpool: parameter size mismatch for " + shape_string(input.shape()));
  const std::size_t oh = (h + pool_h - 1) / pool_h, ow = (w + pool_w - 1) / pool_w;
  const auto& x = input.node()->value;
  std::vector<double> mean, invstd;
  bn_statistics(x, c, n, running_mean, running_var, options, mean, invstd);

  // Only the pooled output and the winning offset in each pool cell are kept;
  // the normalized values are recomputed from the input in backward.
  std::vector<double> out(c * oh * ow);
  auto arg = std::make_shared<std::vector<std::uint8_t>>(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double g = gamma.values()[ch], b = beta.values()[ch], mu = mean[ch], is = invstd[ch];
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::uint8_t best_k = 0;
        for (std::size_t y = oy * pool_h; y < std::min(h, (oy + 1) * pool_h); ++y) {
          for (std::size_t xx = ox * pool_w; xx < std::min(w, (ox + 1) * pool_w); ++xx) {
            const double v = g * ((x[(ch * h + y) * w + xx] - mu) * is) + b;
            const double r = v > 0.0 ? v : 0.0;
            if (r > best) {
              best = r;
              best_k = static_cast<std::uint8_t>((y - oy * pool_h) * pool_w + (xx - ox * pool_w));
            }
          }
        }
        const std::size_t o = (ch * oh + oy) * ow + ox;
        out[o] = best;
        (*arg)[o] = best_k;
      }
    }
  }
  const bool train = options.mode == BnMode::train;
  return Tensor::make_result(
      "bn_relu_maxpool", {c, oh, ow}, std::move(out), {input, gamma, beta},
      [arg, mean = std::move(mean), invstd = std::move(invstd), c, h, w, n, oh, ow, pool_h, pool_w,
       train](Node& node) {
        Node& px = parent(node, 0);
        Node& pg = parent(node, 1);
        Node& pb = parent(node, 2);
        const auto& x = px.value;
        const auto& dy = node.grad;
        auto source = [&](std::size_t ch, std::size_t o) {
          const std::size_t oy = (o / ow) % oh, ox = o % ow, k = (*arg)[o];
          return (ch * h + oy * pool_h + k / pool_w) * w + ox * pool_w + k % pool_w;
        };
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double mu = mean[ch], is = invstd[ch], g = pg.value[ch];
          double sum_dy = 0.0, sum_dy_xh = 0.0;
          for (std::size_t o = ch * oh * ow; o < (ch + 1) * oh * ow; ++o) {
            if (!(node.value[o] > 0.0)) continue;  // relu gate
            const double xh = (x[source(ch, o)] - mu) * is;
            sum_dy += dy[o];
            sum_dy_xh += dy[o] * xh;
          }
          if (pg.requires_grad) pg.ensure_grad()[ch] += sum_dy_xh;
          if (pb.requires_grad) pb.ensure_grad()[ch] += sum_dy;
          if (!px.requires_grad) continue;
          auto& gx = px.ensure_grad();
          const double k1 = g * is;
          if (train) {
            const double a = sum_dy / static_cast<double>(n), bcoef = sum_dy_xh / static_cast<double>(n);
            for (std::size_t i = ch * n; i < (ch + 1) * n; ++i) gx[i] -= k1 * (a + (x[i] - mu) * is * bcoef);
          }
          for (std::size_t o = ch * oh * ow; o < (ch + 1) * oh * ow; ++o) {
            if (node.value[o] > 0.0) gx[source(ch, o)] += k1 * dy[o];
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t t = x.dim(0), d = x.dim(1);
  require(gamma.size() == d && beta.size() == d, "layer_norm: parameter size mismatch");
  const auto& v = x.node()->value;
  auto xhat = std::make_shared<std::vector<double>>(v.size());
  std::vector<double> invstd(t);
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < t; ++r) {
    const double* row = v.data() + r * d;
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += row[i];
    const double mu = s / static_cast<double>(d);
    double ss = 0.0;
    for (std::size_t i = 0; i < d; ++i) ss += (row[i] - mu) * (row[i] - mu);
    invstd[r] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    for (std::size_t i = 0; i < d; ++i) {
      const double xh = (row[i] - mu) * invstd[r];
      (*xhat)[r * d + i] = xh;
      out[r * d + i] = gamma.values()[i] * xh + beta.values()[i];
    }
  }
  return Tensor::make_result(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta}, [xhat, invstd, t, d](Node& node) {
        Node& px = parent(node, 0);
        Node& pg = parent(node, 1);
        Node& pb = parent(node, 2);
        const auto& dy = node.grad;
        std::vector<double> dxh(d);
        for (std::size_t r = 0; r < t; ++r) {
          double sum_dxh = 0.0, sum_dxh_xh = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            const double g = dy[r * d + i];
            const double xh = (*xhat)[r * d + i];
            if (pg.requires_grad) pg.ensure_grad()[i] += g * xh;
            if (pb.requires_grad) pb.ensure_grad()[i] += g;
            dxh[i] = g * pg.value[i];
            sum_dxh += dxh[i];
            sum_dxh_xh += dxh[i] * xh;
          }
          if (!px.requires_grad) continue;
          auto& gx = px.ensure_grad();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t i = 0; i < d; ++i) {
            const double xh = (*xhat)[r * d + i];
            gx[r * d + i] += invstd[r] * (dxh[i] - inv_d * sum_dxh - xh * inv_d * sum_dxh_xh);
          }
        }
      });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t t = x.dim(0), d = x.dim(1);
  const auto& v = x.node()->value;
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < t; ++r) {
    const double* row = v.data() + r * d;
    const double mx = *std::max_element(row, row + d);
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      out[r * d + i] = std::exp(row[i] - mx);
      s += out[r * d + i];
    }
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] /= s;
  }
  return Tensor::make_result("softmax_rows", x.shape(), std::move(out), {x}, [t, d](Node& node) {
    auto& g = parent(node, 0).ensure_grad();
    for (std::size_t r = 0; r < t; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += node.grad[r * d + i] * node.value[r * d + i];
      for (std::size_t i = 0; i < d; ++i) {
        g[r * d + i] += node.value[r * d + i] * (node.grad[r * d + i] - dot);
      }
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t t = x.dim(0), d = x.dim(1);
  require(start + count <= d, "slice_cols: range exceeds width");
  std::vector<double> out(t * count);
  for (std::size_t r = 0; r < t; ++r) {
    std::copy_n(x.values().data() + r * d + start, count, out.data() + r * count);
  }
  return Tensor::make_result("slice_cols", {t, count}, std::move(out), {x},
                             [t, d, start, count](Node& node) {
                               auto& g = parent(node, 0).ensure_grad();
                               for (std::size_t r = 0; r < t; ++r) {
                                 for (std::size_t i = 0; i < count; ++i) {
                                   g[r * d + start + i] += node.grad[r * count + i];
                                 }
                               }
                             });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t t = parts.front().dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    require(p.dim(0) == t, "concat_cols: row count mismatch");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(t * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t r = 0; r < t; ++r) {
      std::copy_n(parts[k].values().data() + r * widths[k], widths[k],
                  out.data() + r * total + off);
    }
    off += widths[k];
  }
  return Tensor::make_result("concat_cols", {t, total}, std::move(out), parts,
                             [t, total, widths](Node& node) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 Node& p = parent(node, k);
                                 if (p.requires_grad) {
                                   auto& g = p.ensure_grad();
                                   for (std::size_t r = 0; r < t; ++r) {
                                     for (std::size_t i = 0; i < widths[k]; ++i) {
                                       g[r * widths[k] + i] += node.grad[r * total + off + i];
                                     }
                                   }
                                 }
                                 off += widths[k];
                               }
                             });
}

Tensor time_major_flatten(const Tensor& x) {
  require_rank(x, 3, "time_major_flatten");
  const std::size_t c = x.dim(0), t = x.dim(1), m = x.dim(2);
  std::vector<double> out(c * t * m);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < t; ++r) {
      std::copy_n(x.values().data() + (ch * t + r) * m, m, out.data() + r * c * m + ch * m);
    }
  }
  return Tensor::make_result("time_major_flatten", {t, c * m}, std::move(out), {x},
                             [c, t, m](Node& node) {
                               auto& g = parent(node, 0).ensure_grad();
                               for (std::size_t ch = 0; ch < c; ++ch) {
                                 for (std::size_t r = 0; r < t; ++r) {
                                   for (std::size_t i = 0; i < m; ++i) {
                                     g[(ch * t + r) * m + i] += node.grad[r * c * m + ch * m + i];
                                   }
                                 }
                               }
                             });
}

Tensor repeat_upsample(const Tensor& x, std::size_t factor, std::size_t target) {
  require_rank(x, 2, "repeat_upsample");
  const std::size_t t = x.dim(0), k = x.dim(1);
  require(factor > 0 && t * factor >= target,
          "repeat_upsample: " + std::to_string(t) + " rows x factor " + std::to_string(factor) +
              " cannot cover " + std::to_string(target) + " frames");
  std::vector<double> out(target * k);
  for (std::size_t r = 0; r < target; ++r) {
    std::copy_n(x.values().data() + (r / factor) * k, k, out.data() + r * k);
  }
  return Tensor::make_result("repeat_upsample", {target, k}, std::move(out), {x},
                             [factor, target, k](Node& node) {
                               auto& g = parent(node, 0).ensure_grad();
                               for (std::size_t r = 0; r < target; ++r) {
                                 for (std::size_t i = 0; i < k; ++i) {
                                   g[(r / factor) * k + i] += node.grad[r * k + i];
                                 }
                               }
                             });
}

Tensor masked_mean_rows(const Tensor& x, std::span<const int> mask) {
  require_rank(x, 2, "masked_mean_rows");
  const std::size_t t = x.dim(0), d = x.dim(1);
  require(mask.size() == t, "masked_mean_rows: mask length mismatch");
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < t; ++r) {
    if (mask[r] != 0) rows.push_back(r);
  }
  require(!rows.empty(), "masked_mean_rows: mask selects no rows");
  const double inv = 1.0 / static_cast<double>(rows.size());
  std::vector<double> out(d, 0.0);
  for (std::size_t r : rows) {
    for (std::size_t i = 0; i < d; ++i) out[i] += x.values()[r * d + i];
  }
  for (double& v : out) v *= inv;
  return Tensor::make_result("masked_mean_rows", {1, d}, std::move(out), {x},
                             [rows, d, inv](Node& node) {
                               auto& g = parent(node, 0).ensure_grad();
                               for (std::size_t r : rows) {
                                 for (std::size_t i = 0; i < d; ++i) g[r * d + i] += inv * node.grad[i];
                               }
                             });
}

Tensor repeat_rows(const Tensor& row, std::size_t n) {
  require_rank(row, 2, "repeat_rows");
  require(row.dim(0) == 1, "repeat_rows: expected a single row");
  const std::size_t d = row.dim(1);
  std::vector<double> out(n * d);
  for (std::size_t r = 0; r < n; ++r) std::copy_n(row.values().data(), d, out.data() + r * d);
  return Tensor::make_result("repeat_rows", {n, d}, std::move(out), {row}, [n, d](Node& node) {
    auto& g = parent(node, 0).ensure_grad();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t i = 0; i < d; ++i) g[i] += node.grad[r * d + i];
    }
  });
}

Tensor masked_softmax_ce(const Tensor& logits, std::span<const int> labels,
                         std::span<const int> mask) {
  require_rank(logits, 2, "masked_softmax_ce");
  const std::size_t t = logits.dim(0), c = logits.dim(1);
  require(labels.size() == t && mask.size() == t, "masked_softmax_ce: label/mask length mismatch");
  std::size_t active = 0;
  for (std::size_t r = 0; r < t; ++r) {
    if (mask[r] != 0 && mask[r] != 1) raise(ErrorCategory::validation, "mask values must be 0 or 1");
    if (mask[r]) {
      if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
        raise(ErrorCategory::validation, "label " + std::to_string(labels[r]) +
                                             " outside [0," + std::to_string(c) + ")");
      }
      ++active;
    }
  }
  const double denom = static_cast<double>(std::max<std::size_t>(1, active));
  auto probs = std::make_shared<std::vector<double>>(t * c, 0.0);
  double loss = 0.0;
  const auto& v = logits.node()->value;
  for (std::size_t r = 0; r < t; ++r) {
    if (!mask[r]) continue;
    const double* row = v.data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t i = 0; i < c; ++i) s += std::exp(row[i] - mx);
    const double log_z = mx + std::log(s);
    loss += log_z - row[labels[r]];
    for (std::size_t i = 0; i < c; ++i) (*probs)[r * c + i] = std::exp(row[i] - log_z);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<int> msk(mask.begin(), mask.end());
  return Tensor::make_result(
      "masked_softmax_ce", {1}, {loss / denom}, {logits},
      [probs, lab = std::move(lab), msk = std::move(msk), t, c, denom](Node& node) {
        auto& g = parent(node, 0).ensure_grad();
        const double up = node.grad[0] / denom;
        for (std::size_t r = 0; r < t; ++r) {
          if (!msk[r]) continue;
          for (std::size_t i = 0; i < c; ++i) {
            const double onehot = static_cast<int>(i) == lab[r] ? 1.0 : 0.0;
            g[r * c + i] += up * ((*probs)[r * c + i] - onehot);
          }
        }
      });
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  require(weights.size() == x.size(), "weighted_sum: weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.values()[i] * weights[i];
  std::vector<double> w(weights.begin(), weights.end());
  return Tensor::make_result("weighted_sum", {1}, {s}, {x}, [w = std::move(w)](Node& node) {
    auto& g = parent(node, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[i] * node.grad[0];
  });
}

}  // namespace fsed::ad
