#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "motiondiff/errors.hpp"
#include "motiondiff/training.hpp"
#include "support.hpp"

using namespace motiondiff;

namespace {

// 1D Gaussian windows: x ~ N(0.5, 0.3^2) per frame, audio column zero, two styles.
Dataset gaussian_dataset(int items, Eigen::Index frames, std::uint64_t seed) {
  Dataset d;
  d.audio_width = 1;
  d.style_width = 2;
  Rng rng(seed);
  for (int i = 0; i < items; ++i) {
    Matrix x = (standard_normal(frames, 1, rng) * 0.3).array() + 0.5;
    Matrix cond = Matrix::Zero(frames, 3);
    cond.col(1 + (i % 2)).setOnes();
    d.items.push_back({x, cond});
  }
  return d;
}

DenoiserConfig tiny_model() {
  DenoiserConfig c = motiondiff::testing::toy_config(1, 3);
  c.n_blocks = 2;
  c.layers_per_block = 1;
  return c;
}

TrainConfig tiny_train(long steps) {
  TrainConfig t;
  t.lr_max = 3e-3;
  t.warmup_steps = 20;
  t.batch_size = 8;
  t.total_steps = steps;
  t.seed = 1234;
  t.checkpoint_every = 50;
  return t;
}

}  // namespace

TEST_CASE("lr_at warmup and decay") {
  TrainConfig c;
  CHECK(lr_at(10000, c) == 1e-4);
  CHECK(lr_at(5000, c) == doctest::Approx(0.5e-4).epsilon(1e-15));
  CHECK(lr_at(0, c) == 0.0);
  CHECK(lr_at(10010, c) == 1e-4 * (1 - 0.5e-5));
  CHECK(lr_at(10010, c) / lr_at(10000, c) == 1 - 0.5e-5);
  CHECK(lr_at(10009, c) == lr_at(10000, c));
  // one warmup increment below the plateau
  CHECK(lr_at(10000, c) - lr_at(9999, c) == doctest::Approx(c.lr_max / double(c.warmup_steps)));
  double prev = lr_at(10000, c);
  for (long s = 10001; s < 200000; s += 37) {
    const double lr = lr_at(s, c);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(lr_at(-1, c), ContractViolation);
}

TEST_CASE("presets") {
  CHECK(preset_train_config("trinity").total_steps == 150000);
  CHECK(preset_train_config("zeroeggs").total_steps == 100000);
  CHECK(preset_train_config("dance").total_steps == 200000);
  CHECK(preset_train_config("locomotion").total_steps == 250000);
  CHECK_THROWS_AS(preset_train_config("nope"), ConfigError);
}

TEST_CASE("style dropout edge probabilities and span discipline") {
  Rng rng(3);
  std::vector<ConditioningSequence> batch;
  for (int i = 0; i < 20; ++i) {
    Matrix f = standard_normal(6, 5, rng);
    f.rightCols(2).setConstant(1.0);
    batch.push_back({f, 3, 2});
  }
  auto original = batch;
  apply_style_dropout(batch, 0.0, rng);
  for (std::size_t i = 0; i < batch.size(); ++i) CHECK(batch[i].frames == original[i].frames);
  auto dropped = apply_style_dropout(batch, 1.0, rng);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(dropped[i]);
    CHECK(batch[i].frames.rightCols(2).isZero(0.0));
    CHECK(batch[i].frames.leftCols(3) == original[i].frames.leftCols(3));
  }
  batch = original;
  dropped = apply_style_dropout(batch, 0.5, rng);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const bool zero = batch[i].frames.rightCols(2).isZero(0.0);
    const bool intact = batch[i].frames == original[i].frames;
    CHECK(zero == bool(dropped[i]));
    CHECK((zero || intact));
  }
  CHECK_THROWS_AS(apply_style_dropout(batch, 1.5, rng), ConfigError);
}

TEST_CASE("style dropout rate over 1e5 sequences") {
  Rng rng(77);
  std::vector<ConditioningSequence> batch(100000, ConditioningSequence{Matrix::Ones(1, 2), 1, 1});
  auto dropped = apply_style_dropout(batch, 0.2, rng);
  const double fraction = double(std::count(dropped.begin(), dropped.end(), true)) / 1e5;
  CHECK(std::abs(fraction - 0.2) <= 0.004);
}

TEST_CASE("adam update matches the textbook recurrence") {
  DenoiserParams p;
  p.add("w", Matrix::Constant(1, 2, 1.0));
  AdamState adam(p);
  TrainConfig cfg;
  GradientBuffer g{Matrix::Constant(1, 2, 0.5)};
  adam.update(p, g, 0.1, cfg);
  // First step: m_hat = g, v_hat = g^2 -> update = lr * g / (|g| + eps)
  CHECK(p.at("w")(0, 0) == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  adam.update(p, g, 0.1, cfg);
  CHECK(adam.steps() == 2);
  CHECK(p.at("w")(0, 1) == doctest::Approx(1.0 - 0.2 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("checkpoint save-load-save is byte identical") {
  Trainer trainer(gaussian_dataset(8, 6, 1), tiny_train(3), tiny_model(), 20, 1e-3, 0.2, {{"style_labels", {"a", "b"}}});
  trainer.step();
  trainer.step();
  const std::string first = encode_checkpoint(trainer.state());
  const Checkpoint loaded = decode_checkpoint(first);
  CHECK(encode_checkpoint(loaded) == first);
  CHECK(loaded.step == 2);
  CHECK(loaded.optimizer.steps() == 2);
  CHECK(loaded.metadata["style_labels"][1] == "b");

  const std::string f32 = encode_checkpoint(trainer.state(), DType::Float32);
  CHECK(encode_checkpoint(decode_checkpoint(f32), DType::Float32) == f32);

  std::string corrupt = first;
  corrupt.resize(corrupt.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(corrupt), DataError);
  CHECK_THROWS_AS(decode_checkpoint("garbage"), DataError);

  const auto dir = std::filesystem::temp_directory_path() / "motiondiff_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "a.ckpt", trainer.state());
  CHECK(encode_checkpoint(load_checkpoint(dir / "a.ckpt")) == first);
  CHECK_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("zero total steps emits only the initial checkpoint") {
  Trainer trainer(gaussian_dataset(4, 5, 2), tiny_train(0), tiny_model(), 20, 1e-3, 0.2);
  int emitted = 0;
  auto log = train(trainer, [&](const Checkpoint& c) {
    ++emitted;
    CHECK(c.step == 0);
  });
  CHECK(emitted == 1);
  CHECK(log.empty());
}

TEST_CASE("smoke training lowers the loss and checkpoints on cadence") {
  TrainConfig cfg = tiny_train(200);
  Trainer trainer(gaussian_dataset(32, 8, 3), cfg, tiny_model(), 20, 1e-3, 0.2);
  std::vector<long> steps;
  auto log = train(trainer, [&](const Checkpoint& c) { steps.push_back(c.step); });
  CHECK(steps == std::vector<long>{0, 50, 100, 150, 200});
  REQUIRE(log.size() == 200);
  double head = 0, tail = 0;
  for (int i = 0; i < 20; ++i) {
    head += log[std::size_t(i)].loss;
    tail += log[log.size() - 1 - std::size_t(i)].loss;
  }
  CHECK(tail < head);
  const std::string csv = loss_log_csv(log);
  CHECK(csv.rfind("step,loss,lr\n0,", 0) == 0);
}

TEST_CASE("resume from a checkpoint continues bit for bit") {
  TrainConfig cfg = tiny_train(12);
  Dataset data = gaussian_dataset(16, 6, 4);
  Trainer straight(data, cfg, tiny_model(), 20, 1e-3, 0.2);
  for (int i = 0; i < 7; ++i) straight.step();
  const std::string saved = encode_checkpoint(straight.state());
  const LossRecord next = straight.step();

  Trainer resumed(data, decode_checkpoint(saved));
  CHECK(resumed.steps_done() == 7);
  const LossRecord again = resumed.step();
  CHECK(again.loss == next.loss);
  CHECK(again.lr == next.lr);
  CHECK(encode_checkpoint(resumed.state()) == encode_checkpoint(straight.state()));
}

TEST_CASE("training is reproducible end to end") {
  TrainConfig cfg = tiny_train(10);
  Dataset data = gaussian_dataset(16, 6, 5);
  Trainer a(data, cfg, tiny_model(), 20, 1e-3, 0.2), b(data, cfg, tiny_model(), 20, 1e-3, 0.2);
  train(a, nullptr);
  train(b, nullptr);
  CHECK(encode_checkpoint(a.state()) == encode_checkpoint(b.state()));
}

TEST_CASE("non-finite data aborts without touching the last good state") {
  Dataset data = gaussian_dataset(2, 4, 6);
  for (auto& item : data.items) item.x0(0, 0) = std::nan("");
  Trainer trainer(data, tiny_train(5), tiny_model(), 20, 1e-3, 0.2);
  const std::string before = encode_checkpoint(trainer.state());
  CHECK_THROWS_AS(trainer.step(), TrainingFault);
  CHECK(encode_checkpoint(trainer.state()) == before);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.style_dropout = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(Trainer(Dataset{}, tiny_train(1), tiny_model()), ConfigError);
  CHECK(train_config_from_json(to_json(tiny_train(9))).total_steps == 9);
}
