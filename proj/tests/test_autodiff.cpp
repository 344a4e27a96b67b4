#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "fsed/autodiff/checkpoint.hpp"
#include "fsed/autodiff/gradcheck.hpp"
#include "fsed/autodiff/nn.hpp"
#include "fsed/autodiff/ops.hpp"
#include "fsed/autodiff/optim.hpp"
#include "fsed/error.hpp"

using namespace fsed::ad;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

void zero_biases(TensorList& list) {
  for (auto& t : list) {
    if (t.name.ends_with(".bias") || t.name.ends_with(".beta")) {
      for (double& v : t.tensor.mutable_values()) v = 0.0;
    }
  }
}

}  // namespace

TEST_CASE("conv2d identity and box kernels") {
  auto x = Tensor::constant({1, 4, 5}, randn(20, 1));
  std::vector<double> ident(9, 0.0);
  ident[4] = 1.0;
  auto y = conv2d(x, Tensor::constant({1, 1, 3, 3}, ident), Tensor::zeros({1}));
  for (std::size_t i = 0; i < 20; ++i) CHECK(y.values()[i] == x.values()[i]);

  auto ones = Tensor::constant({1, 3, 3}, std::vector<double>(9, 1.0));
  auto box = conv2d(ones, Tensor::constant({1, 1, 3, 3}, std::vector<double>(9, 1.0)),
                    Tensor::zeros({1}));
  CHECK(box.values()[4] == 9.0);  // interior pixel
  CHECK(box.values()[0] == 4.0);  // corner sees the zero padding
}

TEST_CASE("conv2d shape mismatch is a shape error") {
  auto x = Tensor::constant({2, 3, 3}, std::vector<double>(18, 0.0));
  auto k = Tensor::constant({1, 1, 3, 3}, std::vector<double>(9, 0.0));
  try {
    conv2d(x, k, Tensor::zeros({1}));
    FAIL("expected shape error");
  } catch (const fsed::Error& e) {
    CHECK(e.category() == fsed::ErrorCategory::shape);
  }
}

TEST_CASE("conv2d gradient check on 1x4x4") {
  auto x = Tensor::parameter({1, 4, 4}, randn(16, 2));
  auto k = Tensor::parameter({1, 1, 3, 3}, randn(9, 3));
  auto b = Tensor::parameter({1}, {0.3});
  CHECK(max_relative_error([&] { return conv2d(x, k, b); }, {x, k, b}, 7) < 1e-6);
}

TEST_CASE("batchnorm2d train mode standardizes per channel") {
  auto x = Tensor::constant({3, 5, 7}, randn(105, 4));
  auto g = Tensor::constant({3}, {1, 1, 1});
  auto b = Tensor::constant({3}, {0, 0, 0});
  auto rm = Tensor::zeros({3});
  auto rv = Tensor::constant({3}, {1, 1, 1});
  auto y = batchnorm2d(x, g, b, rm, rv, {BnMode::train, true});
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 35; ++i) mean += y.values()[c * 35 + i];
    mean /= 35.0;
    for (std::size_t i = 0; i < 35; ++i) var += std::pow(y.values()[c * 35 + i] - mean, 2);
    var /= 35.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);  // eps = 1e-5 shrinks the variance slightly
  }
  // running statistics moved toward the batch statistics
  CHECK(rm.values()[0] != 0.0);

  // re-normalizing an already standardized input is (nearly) the identity
  auto z = batchnorm2d(y, g, b, rm, rv, {BnMode::train, false});
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(z.values()[i] - y.values()[i]) < 1e-4);
}

TEST_CASE("batchnorm2d eval mode with initial statistics") {
  auto x = Tensor::constant({1, 2, 2}, {1, 2, 3, 4});
  auto rm = Tensor::zeros({1});
  auto rv = Tensor::constant({1}, {1.0});
  auto y = batchnorm2d(x, Tensor::constant({1}, {1.0}), Tensor::constant({1}, {0.0}), rm, rv,
                       {BnMode::eval, false});
  CHECK(y.values()[3] == doctest::Approx(4.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
}

TEST_CASE("batchnorm2d gradient check") {
  auto x = Tensor::parameter({2, 3, 3}, randn(18, 5));
  auto g = Tensor::parameter({2}, {0.7, 1.3});
  auto b = Tensor::parameter({2}, {0.1, -0.2});
  auto rm = Tensor::zeros({2});
  auto rv = Tensor::constant({2}, {1, 1});
  CHECK(max_relative_error([&] { return batchnorm2d(x, g, b, rm, rv, {BnMode::train, false}); },
                           {x, g, b}, 11) < 1e-6);
}

TEST_CASE("maxpool2d uses ceil mode") {
  auto x = Tensor::constant({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto y = maxpool2d(x, 2, 2);
  CHECK(y.shape() == Shape{1, 2, 2});
  CHECK(y.values()[0] == 5);
  CHECK(y.values()[1] == 6);
  CHECK(y.values()[2] == 8);
  CHECK(y.values()[3] == 9);
}

TEST_CASE("fused bn-relu-maxpool matches the composed ops") {
  for (BnMode mode : {BnMode::train, BnMode::eval}) {
    for (auto [ph, pw] : {std::pair<std::size_t, std::size_t>{2, 2}, {1, 2}}) {
      std::vector<double> out[2], gx[2], gg[2], gb[2], rm_after[2];
      for (int fused = 0; fused < 2; ++fused) {
        auto x = Tensor::parameter({3, 7, 9}, randn(189, 21));
        auto g = Tensor::parameter({3}, {0.8, 1.2, -0.5});
        auto b = Tensor::parameter({3}, {0.1, -0.3, 0.2});
        auto rm = Tensor::constant({3}, {0.2, -0.1, 0.0});
        auto rv = Tensor::constant({3}, {1.5, 0.7, 1.0});
        const BatchNormOptions bn{mode, mode == BnMode::train};
        Tensor y = fused ? bn_relu_maxpool(x, g, b, rm, rv, bn, ph, pw)
                         : maxpool2d(relu(batchnorm2d(x, g, b, rm, rv, bn)), ph, pw);
        weighted_sum(y, randn(y.size(), 22)).backward();
        out[fused].assign(y.values().begin(), y.values().end());
        gx[fused].assign(x.grad().begin(), x.grad().end());
        gg[fused].assign(g.grad().begin(), g.grad().end());
        gb[fused].assign(b.grad().begin(), b.grad().end());
        rm_after[fused].assign(rm.values().begin(), rm.values().end());
      }
      auto close = [](const std::vector<double>& a, const std::vector<double>& c) {
        REQUIRE(a.size() == c.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(c[i]).epsilon(1e-12));
      };
      close(out[0], out[1]);
      close(gx[0], gx[1]);
      close(gg[0], gg[1]);
      close(gb[0], gb[1]);
      close(rm_after[0], rm_after[1]);
    }
  }
}

TEST_CASE("multi-head attention basic properties") {
  std::mt19937_64 rng(3);
  MultiHeadAttention mha(16, 8, rng);

  SUBCASE("single token attends only to itself") {
    auto x = Tensor::constant({1, 16}, randn(16, 9));
    auto y = mha.forward(x);
    auto expected = mha.output.forward(mha.value.forward(x));
    for (std::size_t i = 0; i < 16; ++i) {
      CHECK(y.values()[i] == doctest::Approx(expected.values()[i]).epsilon(1e-12));
    }
  }
  SUBCASE("identical tokens give identical rows") {
    auto row = randn(16, 10);
    std::vector<double> two(row);
    two.insert(two.end(), row.begin(), row.end());
    auto y = mha.forward(Tensor::constant({2, 16}, two));
    for (std::size_t i = 0; i < 16; ++i) CHECK(y.values()[i] == y.values()[16 + i]);
  }
  SUBCASE("gradient check T=5 D=16") {
    auto x = Tensor::parameter({5, 16}, randn(80, 12));
    TensorList ps;
    mha.collect("mha", ps);
    std::vector<Tensor> wrt{x};
    for (auto& p : ps) wrt.push_back(p.tensor);
    CHECK(max_relative_error([&] { return mha.forward(x); }, wrt, 13) < 1e-5);
  }
}

TEST_CASE("attention rejects dims not divisible by heads") {
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(MultiHeadAttention(10, 8, rng), fsed::Error);
}

TEST_CASE("transformer encoder layer") {
  std::mt19937_64 rng(5);
  SUBCASE("zero input, zero biases, no positional encoding -> zero") {
    TransformerEncoderLayer layer(16, 8, 32, rng);
    TensorList ps;
    layer.collect("tf", ps);
    zero_biases(ps);
    auto y = layer.forward(Tensor::zeros({6, 16}), false);
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("shape is preserved at model dim 256") {
    TransformerEncoderLayer layer(256, 8, 2048, rng);
    auto y = layer.forward(Tensor::constant({54, 256}, randn(54 * 256, 6)));
    CHECK(y.shape() == Shape{54, 256});
  }
  SUBCASE("gradient check T=4 D=8") {
    TransformerEncoderLayer layer(8, 2, 16, rng);
    auto x = Tensor::parameter({4, 8}, randn(32, 14));
    TensorList ps;
    layer.collect("tf", ps);
    std::vector<Tensor> wrt{x};
    for (auto& p : ps) wrt.push_back(p.tensor);
    CHECK(max_relative_error([&] { return layer.forward(x); }, wrt, 15) < 1e-5);
  }
}

TEST_CASE("masked softmax cross-entropy values") {
  const std::vector<int> label0{0};
  const std::vector<int> on{1};
  auto logits = Tensor::constant({1, 3}, {std::log(0.5), std::log(0.25), std::log(0.25)});
  CHECK(masked_softmax_ce(logits, label0, on).item() == doctest::Approx(0.693147).epsilon(1e-6));

  const std::vector<int> off{0};
  auto p = Tensor::parameter({1, 3}, {3.0, -1.0, 0.5});
  auto loss = masked_softmax_ce(p, label0, off);
  CHECK(loss.item() == 0.0);
  loss.backward();
  for (double g : p.grad()) CHECK(g == 0.0);

  auto two = Tensor::constant({2, 3}, {std::log(0.5), std::log(0.25), std::log(0.25),
                                       std::log(0.5), std::log(0.25), std::log(0.25)});
  const std::vector<int> labels{0, 0}, both{1, 1};
  CHECK(masked_softmax_ce(two, labels, both).item() == doctest::Approx(0.693147).epsilon(1e-6));
}

TEST_CASE("masked frames contribute exactly nothing") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-3, 3);
  std::vector<double> v(8 * 4);
  for (auto& x : v) x = u(rng);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
  const std::vector<int> mask{1, 0, 1, 0, 0, 1, 1, 0};
  auto base = Tensor::parameter({8, 4}, v);
  auto l0 = masked_softmax_ce(base, labels, mask);
  l0.backward();
  for (std::size_t r = 0; r < 8; ++r) {
    if (mask[r]) continue;
    for (std::size_t c = 0; c < 4; ++c) CHECK(base.grad()[r * 4 + c] == 0.0);
    auto w = v;
    for (std::size_t c = 0; c < 4; ++c) w[r * 4 + c] += u(rng) * 10.0;
    CHECK(masked_softmax_ce(Tensor::constant({8, 4}, w), labels, mask).item() == l0.item());
  }
}

TEST_CASE("adam first step matches the closed form") {
  auto p = Tensor::parameter({1}, {1.0});
  Adam adam({p});
  p.node()->ensure_grad()[0] = 1.0;
  adam.step(0.1);
  // m_hat = 1, v_hat = 1 after bias correction
  CHECK(std::abs(p.values()[0] - (1.0 - 0.1 / (1.0 + 1e-8))) < 1e-9);
}

TEST_CASE("adam zero gradient and symmetry") {
  auto a = Tensor::parameter({2}, {0.5, 0.5});
  auto b = Tensor::parameter({1}, {2.0});
  Adam adam({a, b});
  a.node()->ensure_grad() = {0.3, 0.3};
  b.node()->ensure_grad()[0] = 0.0;
  adam.step(0.01);
  CHECK(a.values()[0] == a.values()[1]);
  CHECK(b.values()[0] == 2.0);
}

TEST_CASE("adam is bit-deterministic") {
  auto run = [] {
    auto p = Tensor::parameter({3}, {0.1, -0.2, 0.3});
    Adam adam({p});
    for (int i = 0; i < 5; ++i) {
      adam.zero_grad();
      auto loss = weighted_sum(relu(p), std::vector<double>{1.0, 2.0, -3.0});
      loss.backward();
      adam.step(0.05);
    }
    return std::vector<double>(p.values().begin(), p.values().end());
  };
  CHECK(run() == run());
}

TEST_CASE("steplr schedule") {
  CHECK(steplr(1e-4, 0) == 1e-4);
  CHECK(steplr(1e-4, 10) == 5e-5);
  CHECK(steplr(1e-4, 25) == 2.5e-5);
  double prev = steplr(1e-4, 0);
  for (int e = 1; e < 100; ++e) {
    CHECK(steplr(1e-4, e) <= prev);
    prev = steplr(1e-4, e);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(21);
  TransformerEncoderLayer layer(8, 2, 16, rng);
  TensorList ps;
  layer.collect("tf", ps);
  const auto path = std::filesystem::temp_directory_path() / "fsed_ckpt_roundtrip.bin";
  write_checkpoint(path, to_records(ps));

  std::mt19937_64 other(99);
  TransformerEncoderLayer fresh(8, 2, 16, other);
  TensorList qs;
  fresh.collect("tf", qs);
  assign_records(read_checkpoint(path), qs);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    CHECK(ps[i].name == qs[i].name);
    CHECK(std::equal(ps[i].tensor.values().begin(), ps[i].tensor.values().end(),
                     qs[i].tensor.values().begin()));
  }
  std::filesystem::remove(path);
}

TEST_CASE("non-finite values trip a numeric error") {
  auto x = Tensor::constant({1, 2}, {1.0, 2.0});
  try {
    scale(x, std::numeric_limits<double>::infinity());
    FAIL("expected numeric error");
  } catch (const fsed::Error& e) {
    CHECK(e.category() == fsed::ErrorCategory::numeric);
  }
}

TEST_CASE("full gradient suite") {
  for (const auto& r : run_gradient_suite(3)) {
    INFO(r.op << " max rel err " << r.max_rel_error);
    CHECK(r.max_rel_error < 1e-4);
  }
}
