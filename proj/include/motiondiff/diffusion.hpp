#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "motiondiff/autograd.hpp"
#include "motiondiff/rng.hpp"

namespace motiondiff {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

// Per-step constants of the variance-preserving chain. Vectors are stored 0-based;
// use the accessors with 1-based step indices n = 1..N.
struct NoiseSchedule {
  int n_steps = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;      // sqrt(1 - beta_n)
  std::vector<double> alpha_cum;  // prod_{i<=n} alpha_i
  std::vector<double> beta_cum;   // sqrt(1 - alpha_cum_n^2)

  double beta_at(int n) const { return beta[static_cast<std::size_t>(n - 1)]; }
  double alpha_at(int n) const { return alpha[static_cast<std::size_t>(n - 1)]; }
  double alpha_cum_at(int n) const { return alpha_cum[static_cast<std::size_t>(n - 1)]; }
  // beta_cum_at(0) is 0 (clean data).
  double beta_cum_at(int n) const { return n == 0 ? 0.0 : beta_cum[static_cast<std::size_t>(n - 1)]; }
};

NoiseSchedule build_schedule(int n_steps, double beta_start, double beta_end);

// Step count and range used by the released models.
inline NoiseSchedule default_schedule() { return build_schedule(100, 1e-4, 5e-2); }

enum class ReverseVariance {
  Posterior,  // sigma_n^2 = beta_n * beta_cum_{n-1}^2 / beta_cum_n^2
  Beta,       // sigma_n^2 = beta_n
};

struct TrainingWeighting {
  std::vector<double> kappa;

  static TrainingWeighting uniform(int n_steps) {
    return {std::vector<double>(static_cast<std::size_t>(n_steps), 1.0)};
  }
};

struct PoseSequence {
  Matrix frames;  // T x D
  double frame_rate = 30.0;
};

// Frames are [audio | style]. An all-zero style span is the unconditional sentinel.
struct ConditioningSequence {
  Matrix frames;  // T x (audio_width + style_width)
  Eigen::Index audio_width = 0;
  Eigen::Index style_width = 0;

  Eigen::Index length() const { return frames.rows(); }
  Matrix with_style(const RowVector& style) const;
  Matrix without_style() const { return with_style(RowVector::Zero(style_width)); }
  void validate() const;
};

enum class GuidanceMode { Unconditional, Conditional, Guided, Interpolated };

struct GuidanceSpec {
  GuidanceMode mode = GuidanceMode::Conditional;
  double gamma = 1.0;
  std::vector<RowVector> styles;  // 1 for guided; 2+ for interpolated; optional for conditional
  std::vector<double> weights;    // barycentric coefficients for interpolated mode
  bool temperature_scaled = false;

  static GuidanceSpec unconditional();
  static GuidanceSpec conditional(const RowVector& style);
  static GuidanceSpec guided(const RowVector& style, double gamma);
  // Weights (1 - gamma, gamma) over two styles.
  static GuidanceSpec interpolated(const RowVector& first, const RowVector& second, double gamma);
  static GuidanceSpec interpolated(std::vector<RowVector> styles, std::vector<double> weights);

  void validate(Eigen::Index style_width) const;
};

// Noise predictor used by the sampler.
class EpsilonModel {
 public:
  virtual ~EpsilonModel() = default;
  virtual Eigen::Index output_dim() const = 0;
  virtual Matrix predict(const Matrix& x_n, const Matrix& cond, int n) const = 0;
};

// A predictor whose parameters can be differentiated through a tape. Parameter
// leaves report gradients under slots 0..parameter_slots()-1.
class DifferentiableEpsilonModel : public EpsilonModel {
 public:
  virtual int parameter_slots() const = 0;
  virtual ag::Var forward(ag::Tape& tape, const Matrix& x_n, const Matrix& cond, int n) const = 0;
};

using GradientBuffer = std::vector<Matrix>;

// alpha_cum_n * x0 + beta_cum_n * eps
Matrix forward_sample(const Matrix& x0, int n, const Matrix& eps, const NoiseSchedule& sched);

struct TrainingItem {
  Matrix x0;    // T x D
  Matrix cond;  // T x C
};

// Batch mean of kappa_n * mse(eps, eps_hat). One n and one eps draw per item, each item
// on its own substream of `seed`. When `grads` is given, d(loss)/d(param) is added into it.
double training_loss(const DifferentiableEpsilonModel& model, std::span<const TrainingItem> batch,
                     const NoiseSchedule& sched, const TrainingWeighting& weighting,
                     std::uint64_t seed, GradientBuffer* grads = nullptr);

double reverse_sigma(int n, const NoiseSchedule& sched, ReverseVariance variance);

Matrix reverse_step(const Matrix& x_n, const Matrix& eps_hat, int n, const NoiseSchedule& sched,
                    Rng& rng, ReverseVariance variance = ReverseVariance::Posterior);

Matrix guided_epsilon(const Matrix& eps_uncond, const Matrix& eps_cond, double gamma);

// sum_k weights[k] * eps_list[k]; weights must sum to 1 unless temperature_scaled.
Matrix interpolated_epsilon(std::span<const Matrix> eps_list, std::span<const double> weights,
                            bool temperature_scaled = false);

std::vector<double> temperature_scale(std::span<const double> weights, double tau);

// Guidance-combined noise prediction at one step.
Matrix combined_epsilon(const EpsilonModel& model, const Matrix& x_n, const ConditioningSequence& cond,
                        int n, const GuidanceSpec& guidance);

// Ancestral sampling from x_N ~ N(0, I). Pure function of its arguments and seed.
Matrix sample(const EpsilonModel& model, const ConditioningSequence& cond, Eigen::Index frames,
              const NoiseSchedule& sched, const GuidanceSpec& guidance, std::uint64_t seed,
              ReverseVariance variance = ReverseVariance::Posterior);

}  // namespace motiondiff
