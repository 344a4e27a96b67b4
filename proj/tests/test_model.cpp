#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fsed/error.hpp"
#include "fsed/model/model.hpp"

using namespace fsed;
using namespace fsed::model;

namespace {

ModelConfig small_config(std::size_t classes = 5) {
  ModelConfig c;
  c.channels = 4;
  c.embed_dim = 16;
  c.tf_heads = 8;
  c.tf_ffn = 32;
  c.classes = classes;
  return c;
}

Matrix random_window(std::uint64_t seed, std::size_t win = 431, std::size_t bands = 128) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix m(win, bands);
  for (double& v : m.data) v = u(rng);
  return m;
}

const ad::BatchNormOptions kEval{ad::BnMode::eval, false};

void zero(ad::Tensor t) {
  for (double& v : t.mutable_values()) v = 0.0;
}

}  // namespace

TEST_CASE("backbone maps a 431x128 window to 108 embeddings") {
  Model m(small_config(), 1);
  CHECK(reduced_frames(431) == 108);
  const auto emb = m.embed(random_window(2), kEval);
  CHECK(emb.shape() == ad::Shape{108, 16});
  CHECK_THROWS_AS(m.embed(random_window(2, 430), kEval), Error);
}

TEST_CASE("zero window with zero biases embeds to zero") {
  Model m(small_config(), 1);
  for (auto& b : m.blocks) zero(b.bias);
  zero(m.embed_proj.bias);
  const auto emb = m.embed(Matrix(431, 128, 0.0), kEval);
  for (double v : emb.values()) CHECK(v == 0.0);
}

TEST_CASE("identical windows embed identically") {
  Model m(small_config(), 1);
  const auto w = random_window(3);
  const auto a = m.embed(w, kEval), b = m.embed(w, kEval);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST_CASE("repeat upsampling") {
  const auto rows = ad::Tensor::constant({2, 1}, {1.0, 2.0});
  const auto four = ad::repeat_upsample(rows, 2, 4);
  CHECK(std::vector<double>(four.values().begin(), four.values().end()) == std::vector<double>{1, 1, 2, 2});
  const auto three = ad::repeat_upsample(rows, 2, 3);
  CHECK(std::vector<double>(three.values().begin(), three.values().end()) == std::vector<double>{1, 1, 2});
  CHECK(ad::repeat_upsample(ad::Tensor::zeros({108, 128}), 4, 431).shape() == ad::Shape{431, 128});
  CHECK_THROWS_AS(ad::repeat_upsample(rows, 2, 5), Error);
}

TEST_CASE("tc_vector keeps only target frames") {
  Matrix w(3, 2);
  w.data = {1, 2, 3, 4, 5, 6};
  const std::vector<int> labels{1, 0, 1};
  const auto out = tc_vector(w, labels, 1);
  CHECK(out.data == std::vector<double>{1, 2, 0, 0, 5, 6});
  CHECK(tc_vector(out, labels, 1) == out);
  CHECK(tc_vector(w, std::vector<int>{1, 1, 1}, 1) == w);
  CHECK(tc_vector(w, std::vector<int>{0, 2, 0}, 1) == Matrix(3, 2, 0.0));
}

TEST_CASE("TC window selection") {
  auto windows_with = [](std::vector<std::size_t> holding, std::size_t count) {
    std::vector<framing::WindowBatch> ws(count);
    for (auto& w : ws) {
      w.valid_frames = 10;
      w.sed_labels.assign(10, 0);
    }
    for (auto i : holding) ws[i].sed_labels[3] = 2;
    return ws;
  };
  CHECK(select_tc_window(windows_with({2, 7}, 9), 2, 7) == 2);
  CHECK(select_tc_window(windows_with({3}, 9), 2, 3) == 3);
  CHECK(select_tc_window(windows_with({1, 4, 6}, 9), 2, 6) == 4);
  try {
    select_tc_window(windows_with({}, 4), 2, 3);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::selection);
  }
}

TEST_CASE("SED head shape, uniform start and repeat structure") {
  Model m(small_config(6), 1);
  const auto logits = m.sed_forward(m.embed(random_window(4), kEval));
  CHECK(logits.shape() == ad::Shape{431, 6});
  for (std::size_t t = 1; t < 4; ++t) {
    for (std::size_t k = 0; k < 6; ++k) CHECK(logits.at(t * 6 + k) == logits.at(k));
  }
  zero(m.decoder_sed.bias);
  const auto p = ad::softmax_rows(m.sed_forward(ad::Tensor::zeros({108, 16})));
  for (double v : p.values()) CHECK(v == doctest::Approx(1.0 / 6).epsilon(1e-12));
}

TEST_CASE("SFBC branch shape and POS-centre semantics") {
  Model m(small_config(), 1);
  const auto window = random_window(5);
  std::vector<int> labels(431, 0);
  for (std::size_t t = 120; t < 180; ++t) labels[t] = 3;
  const auto emb = m.embed(window, kEval);
  const auto tc = m.embed(tc_vector(window, labels, 3), kEval);
  std::vector<int> pos(431, 0);
  for (std::size_t t = 0; t < 431; ++t) pos[t] = labels[t] == 3;
  const auto out = m.sfbc_forward(emb, masked_center(tc, pos));
  CHECK(out.shape() == ad::Shape{431, 2});

  // Single POS frame: the centre is that reduced frame's embedding.
  std::vector<int> one(431, 0);
  one[41] = 1;
  const auto c1 = masked_center(emb, one);
  for (std::size_t d = 0; d < 16; ++d) CHECK(c1.at(d) == emb.at(10 * 16 + d));
  CHECK_THROWS_AS(masked_center(emb, std::vector<int>(431, 0)), Error);

  // Scrambling non-target frames of the TC window changes nothing.
  auto scrambled = window;
  std::mt19937_64 rng(8);
  for (std::size_t t = 0; t < 431; ++t) {
    if (labels[t] != 3) {
      for (auto& v : scrambled.row(t)) v = static_cast<double>(rng() % 100);
    }
  }
  const auto tc2 = m.embed(tc_vector(scrambled, labels, 3), kEval);
  const auto out2 = m.sfbc_forward(emb, masked_center(tc2, pos));
  CHECK(std::equal(out.values().begin(), out.values().end(), out2.values().begin()));
}

TEST_CASE("multitask forward is finite and gradients reach the backbone") {
  Model m(small_config(), 1);
  const auto window = random_window(6);
  std::vector<int> labels(431, 0), mask(431, 1), fg(431, 0);
  for (std::size_t t = 200; t < 260; ++t) labels[t] = 2, fg[t] = 1;
  const ad::BatchNormOptions train{ad::BnMode::train, false};
  const auto emb = m.embed(window, train);
  const auto tc = m.embed(tc_vector(window, labels, 2), train);
  const auto sed = m.sed_forward(emb);
  const auto sfbc = m.sfbc_forward(emb, masked_center(tc, fg));
  for (const auto* logits : {&sed, &sfbc}) {
    const auto p = ad::softmax_rows(*logits);
    const std::size_t k = logits->dim(1);
    for (std::size_t t = 0; t < 431; ++t) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += p.at(t * k + j);
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
  const auto l1 = ad::masked_softmax_ce(sed, labels, mask);
  const auto l2 = ad::masked_softmax_ce(sfbc, fg, mask);
  ad::add(l1, l2).backward();
  for (const auto& b : m.blocks) {
    double norm = 0.0;
    for (double g : b.kernels.grad()) norm += g * g;
    CHECK(norm > 0.0);
  }
  double tnorm = 0.0;
  for (double g : m.transformer.ffn_out.weight.grad()) tnorm += g * g;
  CHECK(tnorm > 0.0);
}

TEST_CASE("checkpoint round trip reproduces probabilities bit for bit") {
  Model m(small_config(), 9);
  m.class_names = {"a", "b", "c", "d"};
  // Move the BN buffers off their initial values first.
  m.embed(random_window(1), {ad::BnMode::train, true});
  const auto path = std::filesystem::temp_directory_path() / "fsed_test_model.ckpt";
  save_model(path, m);
  Model back = load_model(path);
  CHECK(back.config() == m.config());
  CHECK(back.class_names == m.class_names);
  CHECK(same_weights(back, m));
  const auto w = random_window(12);
  const auto a = ad::softmax_rows(m.bin_forward(m.embed(w, kEval)));
  const auto b = ad::softmax_rows(back.bin_forward(back.embed(w, kEval)));
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  const Model copy = clone(m);
  CHECK(same_weights(copy, m));
  CHECK(copy.blocks[0].kernels.node() != m.blocks[0].kernels.node());
}
