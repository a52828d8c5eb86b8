#include "motiondiff/diffusion.hpp"

#include <cmath>
#include <random>
#include <string>

#include "motiondiff/errors.hpp"

namespace motiondiff {

NoiseSchedule build_schedule(int n_steps, double beta_start, double beta_end) {
  if (n_steps < 1) throw ConfigError("noise schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0))
    throw ConfigError("noise schedule betas must lie in (0, 1)");
  if (beta_start > beta_end) throw ConfigError("noise schedule requires beta_start <= beta_end");

  NoiseSchedule s;
  s.n_steps = n_steps;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  const auto N = static_cast<std::size_t>(n_steps);
  s.beta.resize(N);
  s.alpha.resize(N);
  s.alpha_cum.resize(N);
  s.beta_cum.resize(N);
  double prod = 1.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double frac = n_steps == 1 ? 0.0 : double(i) / double(n_steps - 1);
    s.beta[i] = beta_start + frac * (beta_end - beta_start);
    s.alpha[i] = std::sqrt(1.0 - s.beta[i]);
    prod *= s.alpha[i];
    s.alpha_cum[i] = prod;
    s.beta_cum[i] = std::sqrt(1.0 - prod * prod);
  }
  return s;
}

Matrix ConditioningSequence::with_style(const RowVector& style) const {
  if (style.size() != style_width) throw ContractViolation("style vector width does not match conditioning");
  Matrix out = frames;
  if (style_width > 0) out.rightCols(style_width).rowwise() = style;
  return out;
}

void ConditioningSequence::validate() const {
  if (frames.cols() != audio_width + style_width)
    throw ContractViolation("conditioning width != audio_width + style_width");
  if (!frames.allFinite()) throw ContractViolation("conditioning contains non-finite values");
}

GuidanceSpec GuidanceSpec::unconditional() {
  GuidanceSpec g;
  g.mode = GuidanceMode::Unconditional;
  return g;
}

GuidanceSpec GuidanceSpec::conditional(const RowVector& style) {
  GuidanceSpec g;
  g.mode = GuidanceMode::Conditional;
  g.styles = {style};
  return g;
}

GuidanceSpec GuidanceSpec::guided(const RowVector& style, double gamma) {
  GuidanceSpec g;
  g.mode = GuidanceMode::Guided;
  g.gamma = gamma;
  g.styles = {style};
  return g;
}

GuidanceSpec GuidanceSpec::interpolated(const RowVector& first, const RowVector& second, double gamma) {
  return interpolated({first, second}, {1.0 - gamma, gamma});
}

GuidanceSpec GuidanceSpec::interpolated(std::vector<RowVector> styles, std::vector<double> weights) {
  GuidanceSpec g;
  g.mode = GuidanceMode::Interpolated;
  g.styles = std::move(styles);
  g.weights = std::move(weights);
  return g;
}

namespace {

void check_weights(std::span<const double> weights, bool temperature_scaled) {
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w)) throw ConfigError("interpolation weight is not finite");
    sum += w;
  }
  if (!temperature_scaled && std::abs(sum - 1.0) > 1e-12)
    throw ConfigError("interpolation weights must sum to 1 (got " + std::to_string(sum) + ")");
}

}  // namespace

void GuidanceSpec::validate(Eigen::Index style_width) const {
  for (const auto& s : styles)
    if (s.size() != style_width) throw ConfigError("guidance style vector has the wrong width");
  switch (mode) {
    case GuidanceMode::Unconditional:
      break;
    case GuidanceMode::Conditional:
      if (styles.size() > 1) throw ConfigError("conditional guidance takes at most one style");
      break;
    case GuidanceMode::Guided:
      if (styles.size() != 1) throw ConfigError("guided sampling needs exactly one style");
      if (!std::isfinite(gamma)) throw ConfigError("guidance gamma must be finite");
      break;
    case GuidanceMode::Interpolated:
      if (styles.size() < 2) throw ConfigError("interpolation needs at least two styles");
      if (weights.size() != styles.size()) throw ConfigError("one interpolation weight per style required");
      check_weights(weights, temperature_scaled);
      break;
  }
}

Matrix forward_sample(const Matrix& x0, int n, const Matrix& eps, const NoiseSchedule& sched) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols())
    throw ContractViolation("forward_sample: noise shape differs from data shape");
  if (n < 1 || n > sched.n_steps) throw ContractViolation("forward_sample: step out of range");
  return sched.alpha_cum_at(n) * x0 + sched.beta_cum_at(n) * eps;
}

double training_loss(const DifferentiableEpsilonModel& model, std::span<const TrainingItem> batch,
                     const NoiseSchedule& sched, const TrainingWeighting& weighting,
                     std::uint64_t seed, GradientBuffer* grads) {
  if (batch.empty()) throw ContractViolation("training_loss: empty batch");
  if (weighting.kappa.size() != static_cast<std::size_t>(sched.n_steps))
    throw ConfigError("training weighting length differs from schedule length");
  if (grads) grads->resize(static_cast<std::size_t>(model.parameter_slots()));

  const double inv_batch = 1.0 / double(batch.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainingItem& item = batch[i];
    if (item.x0.rows() != item.cond.rows())
      throw ContractViolation("training_loss: conditioning frame count differs from pose frame count");
    Rng rng = substream(seed, i);
    std::uniform_int_distribution<int> step(1, sched.n_steps);
    const int n = step(rng);
    const Matrix eps = standard_normal(item.x0.rows(), item.x0.cols(), rng);
    const Matrix x_n = forward_sample(item.x0, n, eps, sched);

    ag::Tape tape(grads != nullptr);
    ag::Var eps_hat;
    try {
      eps_hat = model.forward(tape, x_n, item.cond, n);
    } catch (const EvaluationFault& e) {
      throw TrainingFault(e.what(), i);
    }
    ag::Var mse = ag::mean_squared_error(eps_hat, eps);
    const double kappa = weighting.kappa[static_cast<std::size_t>(n - 1)];
    ag::Var loss = ag::scale(mse, kappa * inv_batch);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) throw TrainingFault("non-finite training loss", i);
    total += value;

    if (grads) {
      tape.backward(loss);
      tape.for_each_param_grad([grads](int slot, const Matrix& g) {
        Matrix& dst = (*grads)[static_cast<std::size_t>(slot)];
        if (dst.size() == 0)
          dst = g;
        else
          dst += g;
      });
    }
  }
  return total;
}

double reverse_sigma(int n, const NoiseSchedule& sched, ReverseVariance variance) {
  if (n <= 1) return 0.0;
  const double beta = sched.beta_at(n);
  if (variance == ReverseVariance::Beta) return std::sqrt(beta);
  const double prev = sched.beta_cum_at(n - 1);
  const double cur = sched.beta_cum_at(n);
  return std::sqrt(beta * prev * prev / (cur * cur));
}

Matrix reverse_step(const Matrix& x_n, const Matrix& eps_hat, int n, const NoiseSchedule& sched,
                    Rng& rng, ReverseVariance variance) {
  if (n < 1 || n > sched.n_steps) throw ContractViolation("reverse_step: step out of range");
  if (x_n.rows() != eps_hat.rows() || x_n.cols() != eps_hat.cols())
    throw ContractViolation("reverse_step: shape mismatch");
  Matrix mean = (x_n - (sched.beta_at(n) / sched.beta_cum_at(n)) * eps_hat) / sched.alpha_at(n);
  if (n == 1) return mean;
  return mean + reverse_sigma(n, sched, variance) * standard_normal(x_n.rows(), x_n.cols(), rng);
}

Matrix guided_epsilon(const Matrix& eps_uncond, const Matrix& eps_cond, double gamma) {
  if (eps_uncond.rows() != eps_cond.rows() || eps_uncond.cols() != eps_cond.cols())
    throw ContractViolation("guided_epsilon: shape mismatch");
  // Written so gamma = 0 and gamma = 1 reproduce the inputs bit for bit.
  if (gamma == 0.0) return eps_uncond;
  if (gamma == 1.0) return eps_cond;
  return eps_uncond + gamma * (eps_cond - eps_uncond);
}

Matrix interpolated_epsilon(std::span<const Matrix> eps_list, std::span<const double> weights,
                            bool temperature_scaled) {
  if (eps_list.empty() || eps_list.size() != weights.size())
    throw ConfigError("interpolated_epsilon: need one weight per prediction");
  check_weights(weights, temperature_scaled);
  for (const Matrix& e : eps_list)
    if (e.rows() != eps_list[0].rows() || e.cols() != eps_list[0].cols())
      throw ContractViolation("interpolated_epsilon: shape mismatch");
  // A degenerate weight vector selects its expert exactly.
  if (!temperature_scaled) {
    for (std::size_t k = 0; k < weights.size(); ++k) {
      if (weights[k] != 1.0) continue;
      bool others_zero = true;
      for (std::size_t j = 0; j < weights.size(); ++j)
        if (j != k && weights[j] != 0.0) others_zero = false;
      if (others_zero) return eps_list[k];
    }
  }
  Matrix out = weights[0] * eps_list[0];
  for (std::size_t k = 1; k < eps_list.size(); ++k) out += weights[k] * eps_list[k];
  return out;
}

std::vector<double> temperature_scale(std::span<const double> weights, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("temperature must be positive");
  std::vector<double> out(weights.begin(), weights.end());
  for (double& w : out) w /= tau;
  return out;
}

Matrix combined_epsilon(const EpsilonModel& model, const Matrix& x_n, const ConditioningSequence& cond,
                        int n, const GuidanceSpec& guidance) {
  switch (guidance.mode) {
    case GuidanceMode::Unconditional:
      return model.predict(x_n, cond.without_style(), n);
    case GuidanceMode::Conditional:
      if (guidance.styles.empty()) return model.predict(x_n, cond.frames, n);
      return model.predict(x_n, cond.with_style(guidance.styles[0]), n);
    case GuidanceMode::Guided: {
      const Matrix uncond = model.predict(x_n, cond.without_style(), n);
      const Matrix conditioned = model.predict(x_n, cond.with_style(guidance.styles[0]), n);
      return guided_epsilon(uncond, conditioned, guidance.gamma);
    }
    case GuidanceMode::Interpolated: {
      std::vector<Matrix> experts;
      experts.reserve(guidance.styles.size());
      for (const auto& style : guidance.styles) experts.push_back(model.predict(x_n, cond.with_style(style), n));
      return interpolated_epsilon(experts, guidance.weights, guidance.temperature_scaled);
    }
  }
  throw ContractViolation("unknown guidance mode");
}

Matrix sample(const EpsilonModel& model, const ConditioningSequence& cond, Eigen::Index frames,
              const NoiseSchedule& sched, const GuidanceSpec& guidance, std::uint64_t seed,
              ReverseVariance variance) {
  cond.validate();
  if (cond.length() != frames) throw ContractViolation("sample: conditioning length differs from frame count");
  guidance.validate(cond.style_width);

  Rng rng = substream(seed, 0);
  Matrix x = standard_normal(frames, model.output_dim(), rng);
  for (int n = sched.n_steps; n >= 1; --n) {
    const Matrix eps_hat = combined_epsilon(model, x, cond, n, guidance);
    if (!eps_hat.allFinite()) throw EvaluationFault("non-finite noise prediction at step " + std::to_string(n));
    x = reverse_step(x, eps_hat, n, sched, rng, variance);
    if (!x.allFinite()) throw EvaluationFault("non-finite sample at step " + std::to_string(n));
  }
  return x;
}

}  // namespace motiondiff
