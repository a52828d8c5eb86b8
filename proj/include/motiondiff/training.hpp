#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "motiondiff/checkpoint.hpp"
#include "motiondiff/denoiser.hpp"
#include "motiondiff/diffusion.hpp"

namespace motiondiff {

struct TrainConfig {
  double lr_max = 1e-4;
  long warmup_steps = 10000;
  double decay_factor = 0.5e-5;  // lr *= (1 - decay_factor) every decay_interval steps
  long decay_interval = 10;
  double style_dropout = 0.2;
  int batch_size = 16;
  long total_steps = 150000;
  std::uint64_t seed = 0;
  long checkpoint_every = 1000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

// Step presets for the four datasets of the released models.
TrainConfig preset_train_config(const std::string& dataset);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

double lr_at(long step, const TrainConfig& cfg);

// Zeroes the whole style span of each sequence independently with probability p.
// Returns which sequences were dropped.
std::vector<bool> apply_style_dropout(std::span<ConditioningSequence> batch, double p, Rng& rng);

class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const DenoiserParams& shapes);

  void update(DenoiserParams& params, const GradientBuffer& grads, double lr, const TrainConfig& cfg);

  long steps() const { return steps_; }
  const std::vector<Matrix>& first_moment() const { return m_; }
  const std::vector<Matrix>& second_moment() const { return v_; }

 private:
  friend struct CheckpointCodec;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long steps_ = 0;
};

// Windows of one dataset; every cond is [audio | style].
struct Dataset {
  std::vector<TrainingItem> items;
  Eigen::Index audio_width = 0;
  Eigen::Index style_width = 0;
};

struct Checkpoint {
  DenoiserConfig model;
  int schedule_steps = 100;
  double beta_start = 1e-4;
  double beta_end = 5e-2;
  TrainConfig train;
  DenoiserParams params;
  AdamState optimizer;
  long step = 0;
  // Normalization statistics, style labels, skeleton template and feature settings.
  nlohmann::json metadata = nlohmann::json::object();

  NoiseSchedule schedule() const { return build_schedule(schedule_steps, beta_start, beta_end); }
  std::string config_digest() const;
};

// Parameters and moments as float64 so a resumed run continues bit for bit.
std::string encode_checkpoint(const Checkpoint& ckpt, DType dtype = DType::Float64);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, DType dtype = DType::Float64);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct LossRecord {
  long step;
  double loss;
  double lr;
};

std::string loss_log_csv(std::span<const LossRecord> log);

class Trainer {
 public:
  Trainer(Dataset data, const TrainConfig& train, const DenoiserConfig& model, int schedule_steps = 100,
          double beta_start = 1e-4, double beta_end = 5e-2, nlohmann::json metadata = nlohmann::json::object());
  Trainer(Dataset data, Checkpoint resume_from);

  // One optimization step. Throws TrainingFault on a non-finite loss or update.
  LossRecord step();

  long steps_done() const { return ckpt_.step; }
  const Checkpoint& state() const { return ckpt_; }
  Denoiser model() const { return Denoiser(ckpt_.model, ckpt_.params); }

  // Loss of the batch the next step() would draw, without updating.
  double peek_loss() const;

 private:
  std::vector<TrainingItem> draw_batch(long step) const;

  Dataset data_;
  NoiseSchedule sched_;
  TrainingWeighting weighting_;
  Checkpoint ckpt_;
};

using CheckpointSink = std::function<void(const Checkpoint&)>;

// Runs until cfg.total_steps. The sink sees the starting state and every
// checkpoint_every steps plus the final step.
std::vector<LossRecord> train(Trainer& trainer, const CheckpointSink& sink);

}  // namespace motiondiff
