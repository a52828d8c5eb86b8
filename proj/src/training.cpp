#include "motiondiff/training.hpp"

#include <cmath>
#include <random>

#include "motiondiff/errors.hpp"

namespace motiondiff {

void TrainConfig::validate() const {
  if (!(lr_max > 0.0)) throw ConfigError("lr_max must be positive");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (!(decay_factor >= 0.0 && decay_factor < 1.0)) throw ConfigError("decay_factor must lie in [0, 1)");
  if (decay_interval < 1) throw ConfigError("decay_interval must be positive");
  if (!(style_dropout >= 0.0 && style_dropout <= 1.0)) throw ConfigError("style_dropout must lie in [0, 1]");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("optimizer moment rates must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("optimizer epsilon must be positive");
}

TrainConfig preset_train_config(const std::string& dataset) {
  TrainConfig c;
  if (dataset == "trinity")
    c.total_steps = 150000;
  else if (dataset == "zeroeggs")
    c.total_steps = 100000;
  else if (dataset == "dance")
    c.total_steps = 200000;
  else if (dataset == "locomotion")
    c.total_steps = 250000;
  else
    throw ConfigError("unknown training preset " + dataset);
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr_max", c.lr_max},
          {"warmup_steps", c.warmup_steps},
          {"decay_factor", c.decay_factor},
          {"decay_interval", c.decay_interval},
          {"style_dropout", c.style_dropout},
          {"batch_size", c.batch_size},
          {"total_steps", c.total_steps},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.lr_max = j.at("lr_max").get<double>();
    c.warmup_steps = j.at("warmup_steps").get<long>();
    c.decay_factor = j.at("decay_factor").get<double>();
    c.decay_interval = j.at("decay_interval").get<long>();
    c.style_dropout = j.at("style_dropout").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.total_steps = j.at("total_steps").get<long>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.checkpoint_every = j.at("checkpoint_every").get<long>();
    c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.adam_beta2 = j.at("adam_beta2").get<double>();
    c.adam_epsilon = j.at("adam_epsilon").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_at(long step, const TrainConfig& cfg) {
  if (step < 0) throw ContractViolation("lr_at: negative step");
  if (step < cfg.warmup_steps) return cfg.lr_max * double(step) / double(cfg.warmup_steps);
  const long decays = (step - cfg.warmup_steps) / cfg.decay_interval;
  return cfg.lr_max * std::pow(1.0 - cfg.decay_factor, double(decays));
}

std::vector<bool> apply_style_dropout(std::span<ConditioningSequence> batch, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("style dropout probability must lie in [0, 1]");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<bool> dropped(batch.size(), false);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    // Always consume one draw so the stream does not depend on p.
    const bool drop = uniform(rng) < p;
    if (drop && batch[i].style_width > 0) batch[i].frames.rightCols(batch[i].style_width).setZero();
    dropped[i] = drop;
  }
  return dropped;
}

AdamState::AdamState(const DenoiserParams& shapes) {
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    m_.push_back(Matrix::Zero(shapes.tensor(i).rows(), shapes.tensor(i).cols()));
    v_.push_back(Matrix::Zero(shapes.tensor(i).rows(), shapes.tensor(i).cols()));
  }
}

void AdamState::update(DenoiserParams& params, const GradientBuffer& grads, double lr, const TrainConfig& cfg) {
  if (m_.size() != params.size()) throw ContractViolation("optimizer state does not match parameters");
  ++steps_;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, double(steps_));
  const double c2 = 1.0 - std::pow(b2, double(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (i >= grads.size() || grads[i].size() == 0) continue;
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i].cwiseAbs2();
    params.tensor(i).array() -=
        lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg.adam_epsilon);
  }
}

std::string Checkpoint::config_digest() const {
  nlohmann::json j = {{"model", to_json(model)},
                      {"schedule", {{"steps", schedule_steps}, {"beta_start", beta_start}, {"beta_end", beta_end}}},
                      {"train", to_json(train)}};
  return fnv1a_hex(j.dump());
}

struct CheckpointCodec {
  static std::string encode(const Checkpoint& c, DType dtype) {
    TensorFile f;
    f.header = {{"format", "motiondiff-checkpoint"},
                {"version", 1},
                {"model", to_json(c.model)},
                {"schedule", {{"steps", c.schedule_steps}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}}},
                {"train", to_json(c.train)},
                {"step", c.step},
                {"optimizer_steps", c.optimizer.steps_},
                {"config_digest", c.config_digest()},
                {"metadata", c.metadata}};
    for (std::size_t i = 0; i < c.params.size(); ++i) f.records.push_back({c.params.name(i), c.params.tensor(i), dtype});
    for (std::size_t i = 0; i < c.optimizer.m_.size(); ++i) {
      f.records.push_back({"adam.m/" + c.params.name(i), c.optimizer.m_[i], dtype});
      f.records.push_back({"adam.v/" + c.params.name(i), c.optimizer.v_[i], dtype});
    }
    return encode_tensor_file(f);
  }

  static Checkpoint decode(std::string_view bytes) {
    TensorFile f = decode_tensor_file(bytes);
    if (f.header.value("format", "") != "motiondiff-checkpoint") throw DataError("not a checkpoint file");
    Checkpoint c;
    try {
      c.model = denoiser_config_from_json(f.header.at("model"));
      c.schedule_steps = f.header.at("schedule").at("steps").get<int>();
      c.beta_start = f.header.at("schedule").at("beta_start").get<double>();
      c.beta_end = f.header.at("schedule").at("beta_end").get<double>();
      c.train = train_config_from_json(f.header.at("train"));
      c.step = f.header.at("step").get<long>();
      c.optimizer.steps_ = f.header.at("optimizer_steps").get<long>();
      c.metadata = f.header.at("metadata");
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("checkpoint header: ") + e.what());
    }
    std::size_t k = 0;
    for (const auto& [name, shape] : parameter_layout(c.model)) {
      if (k >= f.records.size() || f.records[k].name != name) throw DataError("checkpoint is missing parameter " + name);
      c.params.add(name, f.records[k].value);
      ++k;
    }
    const bool has_moments = f.records.size() > k;
    for (std::size_t i = 0; i < c.params.size() && has_moments; ++i) {
      const auto* m = f.find("adam.m/" + c.params.name(i));
      const auto* v = f.find("adam.v/" + c.params.name(i));
      if (!m || !v) throw DataError("checkpoint is missing optimizer moments for " + c.params.name(i));
      c.optimizer.m_.push_back(m->value);
      c.optimizer.v_.push_back(v->value);
    }
    if (!has_moments) c.optimizer = AdamState(c.params);
    Denoiser check(c.model, c.params);  // shape validation
    if (f.header.at("config_digest").get<std::string>() != c.config_digest())
      throw DataError("checkpoint config digest mismatch");
    return c;
  }
};

std::string encode_checkpoint(const Checkpoint& ckpt, DType dtype) { return CheckpointCodec::encode(ckpt, dtype); }

Checkpoint decode_checkpoint(std::string_view bytes) { return CheckpointCodec::decode(bytes); }

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, DType dtype) {
  write_file_atomic(path, encode_checkpoint(ckpt, dtype));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_binary_file(path)); }

std::string loss_log_csv(std::span<const LossRecord> log) {
  std::string out = "step,loss,lr\n";
  char buf[96];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g\n", r.step, r.loss, r.lr);
    out += buf;
  }
  return out;
}

Trainer::Trainer(Dataset data, const TrainConfig& train, const DenoiserConfig& model, int schedule_steps,
                 double beta_start, double beta_end, nlohmann::json metadata)
    : data_(std::move(data)) {
  train.validate();
  model.validate();
  ckpt_.model = model;
  ckpt_.train = train;
  ckpt_.schedule_steps = schedule_steps;
  ckpt_.beta_start = beta_start;
  ckpt_.beta_end = beta_end;
  ckpt_.metadata = std::move(metadata);
  ckpt_.params = init_params(model, train.seed);
  ckpt_.optimizer = AdamState(ckpt_.params);
  sched_ = ckpt_.schedule();
  weighting_ = TrainingWeighting::uniform(schedule_steps);
  if (data_.items.empty()) throw ConfigError("training dataset is empty");
  if (data_.audio_width + data_.style_width != model.cond_dim)
    throw ConfigError("dataset conditioning width differs from model cond_dim");
}

Trainer::Trainer(Dataset data, Checkpoint resume_from) : data_(std::move(data)), ckpt_(std::move(resume_from)) {
  sched_ = ckpt_.schedule();
  weighting_ = TrainingWeighting::uniform(ckpt_.schedule_steps);
  if (data_.items.empty()) throw ConfigError("training dataset is empty");
}

std::vector<TrainingItem> Trainer::draw_batch(long step) const {
  Rng rng = substream(ckpt_.train.seed, std::uint64_t(step) * 2 + 1);
  std::uniform_int_distribution<std::size_t> pick(0, data_.items.size() - 1);
  std::vector<ConditioningSequence> conds;
  std::vector<std::size_t> chosen;
  for (int b = 0; b < ckpt_.train.batch_size; ++b) {
    const std::size_t i = pick(rng);
    chosen.push_back(i);
    conds.push_back({data_.items[i].cond, data_.audio_width, data_.style_width});
  }
  apply_style_dropout(conds, ckpt_.train.style_dropout, rng);
  std::vector<TrainingItem> batch;
  for (std::size_t b = 0; b < chosen.size(); ++b) batch.push_back({data_.items[chosen[b]].x0, std::move(conds[b].frames)});
  return batch;
}

double Trainer::peek_loss() const {
  const Denoiser model(ckpt_.model, ckpt_.params);
  auto batch = draw_batch(ckpt_.step);
  return training_loss(model, batch, sched_, weighting_, substream(ckpt_.train.seed, std::uint64_t(ckpt_.step) * 2)());
}

LossRecord Trainer::step() {
  const long step = ckpt_.step;
  const Denoiser model(ckpt_.model, ckpt_.params);
  auto batch = draw_batch(step);
  GradientBuffer grads;
  const double loss = training_loss(model, batch, sched_, weighting_,
                                    substream(ckpt_.train.seed, std::uint64_t(step) * 2)(), &grads);
  const double lr = lr_at(step, ckpt_.train);
  DenoiserParams updated = ckpt_.params;
  AdamState moments = ckpt_.optimizer;
  moments.update(updated, grads, lr, ckpt_.train);
  if (!updated.all_finite()) throw TrainingFault("non-finite parameters after update at step " + std::to_string(step), 0);
  ckpt_.params = std::move(updated);
  ckpt_.optimizer = std::move(moments);
  ckpt_.step = step + 1;
  return {step, loss, lr};
}

std::vector<LossRecord> train(Trainer& trainer, const CheckpointSink& sink) {
  const TrainConfig& cfg = trainer.state().train;
  std::vector<LossRecord> log;
  if (sink) sink(trainer.state());
  while (trainer.steps_done() < cfg.total_steps) {
    log.push_back(trainer.step());
    const long done = trainer.steps_done();
    if (sink && (done % cfg.checkpoint_every == 0 || done == cfg.total_steps)) sink(trainer.state());
  }
  return log;
}

}  // namespace motiondiff
