#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "motiondiff/denoiser.hpp"
#include "motiondiff/errors.hpp"
#include "support.hpp"

using namespace motiondiff;
using motiondiff::testing::circular_shift;
using motiondiff::testing::randomize;
using motiondiff::testing::toy_config;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  return standard_normal(r, c, rng);
}

// Independent count from the architecture description.
std::size_t expected_parameter_count(const DenoiserConfig& c) {
  const std::size_t W = c.attention_width, F = c.feedforward_width, E = c.step_embed_dim, D = c.input_dim,
                    C = c.cond_dim, H = c.n_heads, R = c.max_relative_distance;
  // input, step fc1, step fc2, head fc1, head fc2
  std::size_t total = (D * W + W) + (E * W + W) + (W * W + W) + (W * W + W) + (W * D + D);
  for (int l = 0; l < c.n_blocks; ++l) {
    const std::size_t k = (l % c.dilation_cycle == 0) ? 1 : 3;
    std::size_t layer = 4 * W + 4 * (W * W + W) + H * (2 * R + 1) + (k * W * 2 * F + 2 * F) + (F * W + W);
    total += (W * W + W) + c.layers_per_block * layer + 2 * (W * 2 * W + 2 * W) + (C * 2 * W + 2 * W);
  }
  return total;
}

}  // namespace

TEST_CASE("default configuration") {
  DenoiserConfig c;
  CHECK(c.n_blocks == 10);
  CHECK(c.layers_per_block == 4);
  CHECK(c.dilation_cycle == 3);
  CHECK(c.n_heads == 8);
  CHECK(c.attention_width == 256);
  CHECK(c.feedforward_width == 1024);
}

TEST_CASE("block geometry cycles Transformer, Conformer d=1, Conformer d=2") {
  const double expected_factor[] = {0.5, 1, 2, 0.5, 1, 2, 0.5, 1, 2, 0.5};
  for (int l = 0; l < 10; ++l) {
    BlockGeometry g = block_geometry(l, 3);
    CHECK(g.dilation_factor == expected_factor[l]);
    if (l % 3 == 0) {
      CHECK(g.mode == LayerMode::Transformer);
      CHECK(g.kernel == 1);
    } else {
      CHECK(g.mode == LayerMode::Conformer);
      CHECK(g.kernel == 3);
      CHECK(g.dilation == int(expected_factor[l]));
    }
  }
}

TEST_CASE("parameter count for the default configuration") {
  DenoiserConfig c;
  c.input_dim = 45;
  c.cond_dim = 24;
  std::size_t total = 0;
  for (const auto& [name, shape] : parameter_layout(c)) total += std::size_t(shape.first * shape.second);
  CHECK(total == expected_parameter_count(c));
  CHECK(total == 70909293u);
}

TEST_CASE("step_embedding") {
  RowVector zero = step_embedding(0.0, 16);
  for (int k = 0; k < 8; ++k) {
    CHECK(zero(2 * k) == 0.0);
    CHECK(zero(2 * k + 1) == 1.0);
  }
  CHECK(step_embedding(37, 128) == step_embedding(37, 128));
  CHECK_THROWS_AS(step_embedding(3, 7), ConfigError);
  double min_gap = 1e9;
  for (int n = 1; n <= 100; ++n)
    for (int m = n + 1; m <= 100; ++m)
      min_gap = std::min(min_gap, (step_embedding(n, 128) - step_embedding(m, 128)).cwiseAbs().maxCoeff());
  CHECK(min_gap > 1e-6);
}

TEST_CASE("tisa bias depends only on the clamped offset") {
  DenoiserConfig c = toy_config();
  DenoiserParams p = init_params(c, 1);
  Denoiser fresh(c, p);
  for (Eigen::Index i = 0; i < 10; ++i)
    for (Eigen::Index j = 0; j < 10; ++j) CHECK(fresh.tisa_bias(1, 0, 1, i, j, 10) == 0.0);

  randomize(p, 2);
  Denoiser d(c, p);
  const int R = c.max_relative_distance;
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = 0; j < 6; ++j)
      for (Eigen::Index k = 1; k < 5; ++k) CHECK(d.tisa_bias(0, 1, 0, i, j, 20) == d.tisa_bias(0, 1, 0, i + k, j + k, 20));
  CHECK(d.tisa_bias(0, 0, 1, 0, R + 5, 20) == d.tisa_bias(0, 0, 1, 0, R, 20));
  CHECK(d.tisa_bias(0, 0, 1, R + 7, 0, 20) == d.tisa_bias(0, 0, 1, R, 0, 20));
  CHECK(d.tisa_bias(0, 0, 1, 0, R - 1, 20) != d.tisa_bias(0, 0, 1, 0, R, 20));
}

TEST_CASE("tisa_column circular wrap") {
  CHECK(tisa_column(0, 9, 10, 3, true) == tisa_column(0, -1, 10, 3, false));
  CHECK(tisa_column(9, 0, 10, 3, true) == tisa_column(0, 1, 10, 3, false));
  CHECK(tisa_column(2, 4, 10, 3, true) == 5);
  for (Eigen::Index i = 0; i < 7; ++i)
    for (Eigen::Index j = 0; j < 7; ++j)
      CHECK(tisa_column(i, j, 7, 2, true) == tisa_column((i + 3) % 7, (j + 3) % 7, 7, 2, true));
}

TEST_CASE("layer with zeroed output projections is the identity") {
  DenoiserConfig c = toy_config();
  DenoiserParams p = init_params(c, 3);
  randomize(p, 4);
  for (const char* name : {"block1.layer0.attn.wo", "block1.layer0.attn.bo", "block1.layer0.ff.out.w", "block1.layer0.ff.out.b"})
    p.at(name).setZero();
  Denoiser d(c, p);
  Matrix h = random_matrix(6, c.attention_width, 5);
  CHECK(d.layer_forward(h, 1, 0) == h);
}

TEST_CASE("layer accepts a single frame") {
  DenoiserConfig c = toy_config();
  DenoiserParams p = init_params(c, 3);
  randomize(p, 6);
  Denoiser d(c, p);
  Matrix h = random_matrix(1, c.attention_width, 7);
  for (int block : {0, 1}) {
    Matrix out = d.layer_forward(h, block, 1);
    CHECK(out.rows() == 1);
    CHECK(out.cols() == c.attention_width);
    CHECK(out.allFinite());
  }
}

TEST_CASE("circular layer commutes with circular shifts") {
  DenoiserConfig c = toy_config();
  c.circular = true;
  c.n_blocks = 3;
  DenoiserParams p = init_params(c, 8);
  randomize(p, 9);
  Denoiser d(c, p);
  Matrix h = random_matrix(11, c.attention_width, 10);
  for (int block : {0, 1, 2}) {
    Matrix base = d.layer_forward(h, block, 0);
    for (Eigen::Index k : {1, 4, 10}) {
      Matrix shifted = d.layer_forward(circular_shift(h, k), block, 0);
      CHECK((shifted - circular_shift(base, k)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("residual block gate and shapes") {
  DenoiserConfig c = toy_config();
  DenoiserParams p = init_params(c, 11);
  randomize(p, 12);
  const Eigen::Index W = c.attention_width;
  // Zero conditioning path and zero sigmoid-half pre-activations: gate = 0.5 * tanh(.)
  p.at("block0.cond.b").setZero();
  p.at("block0.gate.b").setZero();
  p.at("block0.gate.w").rightCols(W).setZero();
  Denoiser d(c, p);
  Matrix h = random_matrix(5, W, 13);
  Matrix cond = Matrix::Zero(5, c.cond_dim);
  RowVector step = d.step_features(7);
  auto [residual, skip] = d.block_forward(h, cond, step, 0);
  CHECK(residual.rows() == 5);
  CHECK(skip.rows() == 5);
  CHECK(skip.cols() == W);

  // Recompute by hand from the layer outputs.
  Matrix y = h;
  y.rowwise() += step * p.at("block0.step.w") + p.at("block0.step.b");
  for (int j = 0; j < c.layers_per_block; ++j) y = d.layer_forward(y, 0, j);
  Matrix pre = y * p.at("block0.gate.w").leftCols(W);
  Matrix gate = 0.5 * pre.array().tanh().matrix();
  Matrix o = gate * p.at("block0.out.w");
  o.rowwise() += p.at("block0.out.b").row(0);
  CHECK((residual - (h + o.leftCols(W)) / std::sqrt(2.0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((skip - o.rightCols(W)).cwiseAbs().maxCoeff() < 1e-12);

  for (int l = 0; l < c.n_blocks; ++l) {
    auto [r2, s2] = d.block_forward(h, random_matrix(5, c.cond_dim, 14), step, l);
    CHECK(s2.rows() == 5);
    CHECK(s2.cols() == W);
  }
}

TEST_CASE("denoiser output shape and zero head") {
  DenoiserConfig c = toy_config();
  Denoiser fresh(c, init_params(c, 15));
  for (Eigen::Index T : {1, 2, 8, 33}) {
    Matrix out = fresh.predict(random_matrix(T, 3, 16), random_matrix(T, 4, 17), 5);
    CHECK(out.rows() == T);
    CHECK(out.cols() == 3);
    CHECK(out.isZero(0.0));  // final head layer starts at zero
  }
}

TEST_CASE("denoiser input validation") {
  DenoiserConfig c = toy_config();
  DenoiserParams p = init_params(c, 18);
  Denoiser d(c, p);
  CHECK_THROWS_AS(d.predict(random_matrix(4, 2, 1), random_matrix(4, 4, 2), 1), ConfigError);
  CHECK_THROWS_AS(d.predict(random_matrix(4, 3, 1), random_matrix(5, 4, 2), 1), ContractViolation);

  DenoiserParams wrong = p;
  wrong.at("block1.layer0.attn.wq") = Matrix::Zero(3, 3);
  CHECK_THROWS_WITH_AS(Denoiser(c, wrong), doctest::Contains("block1.layer0.attn.wq"), ConfigError);
  DenoiserConfig other = c;
  other.n_blocks = 3;
  CHECK_THROWS_AS(Denoiser(other, p), ConfigError);
  other = c;
  other.step_embed_dim = 7;
  CHECK_THROWS_AS(other.validate(), ConfigError);
}

TEST_CASE("no absolute position parameters") {
  DenoiserConfig c;
  c.input_dim = 10;
  c.cond_dim = 5;
  for (const auto& [name, shape] : parameter_layout(c)) {
    CHECK(name.find("pos") == std::string::npos);
    CHECK(name.find("abs") == std::string::npos);
  }
}

TEST_CASE("denoiser gradients match finite differences") {
  DenoiserConfig c = toy_config();
  DenoiserParams p = init_params(c, 19);
  randomize(p, 20);
  Denoiser d(c, p);
  Matrix x = random_matrix(5, 3, 21), cond = random_matrix(5, 4, 22), target = random_matrix(5, 3, 23);
  auto loss = [&]() {
    ag::Tape tape(false);
    return ag::mean_squared_error(d.forward(tape, x, cond, 9), target).value()(0, 0);
  };
  ag::Tape tape(true);
  ag::Var l = ag::mean_squared_error(d.forward(tape, x, cond, 9), target);
  tape.backward(l);
  GradientBuffer grads(d.params().size());
  tape.for_each_param_grad([&](int slot, const Matrix& g) { grads[std::size_t(slot)] = g; });
  auto result = motiondiff::testing::finite_difference_check(d.mutable_params(), loss, grads);
  INFO("worst parameter: " << result.worst_parameter);
  CHECK(result.max_relative_error < 1e-4);
}
