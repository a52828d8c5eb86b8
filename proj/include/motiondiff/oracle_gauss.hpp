#pragma once

// Closed-form Gaussian targets for checking the sampler, guidance and interpolation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "motiondiff/diffusion.hpp"

namespace motiondiff {

struct GaussianExpert {
  RowVector mean;         // d
  double variance = 1.0;  // isotropic
};

// Minimizer of the noise-prediction loss for data ~ N(m, s^2 I) at step n:
// beta_cum * (x - alpha_cum m) / (alpha_cum^2 s^2 + beta_cum^2).
RowVector optimal_epsilon(const RowVector& x, int n, const GaussianExpert& g, const NoiseSchedule& sched);

// Normalized p1^w1 p2^w2. Throws ConfigError when the resulting precision is not positive.
GaussianExpert weighted_product_gaussian(const GaussianExpert& g1, const GaussianExpert& g2, double w1, double w2);
// Weights (1 - gamma, gamma).
GaussianExpert product_gaussian(const GaussianExpert& g1, const GaussianExpert& g2, double gamma);

// Exact-epsilon model over independent rows: each row of x is one d-dimensional draw.
// Row t uses experts[k] when its style span is one-hot at k and `unconditional` when
// the span is all zero.
class GaussianOracleModel : public EpsilonModel {
 public:
  GaussianOracleModel(const NoiseSchedule& sched, std::vector<GaussianExpert> experts,
                      std::optional<GaussianExpert> unconditional = std::nullopt);

  Eigen::Index output_dim() const override { return dim_; }
  Matrix predict(const Matrix& x_n, const Matrix& cond, int n) const override;

  // Style-only conditioning for `rows` draws: audio width 0, style width = expert count.
  ConditioningSequence conditioning(Eigen::Index rows) const;
  RowVector one_hot(std::size_t expert) const;

 private:
  const NoiseSchedule* sched_;
  std::vector<GaussianExpert> experts_;
  std::optional<GaussianExpert> unconditional_;
  Eigen::Index dim_;
};

struct SampleCheck {
  std::string label;
  RowVector empirical_mean;
  RowVector empirical_variance;
  RowVector target_mean;
  double target_variance = 0.0;
  RowVector mean_standard_error;
  bool mean_ok = false;
  bool variance_ok = false;

  bool pass() const { return mean_ok && variance_ok; }
  // key=value lines, one check per line.
  std::string to_text() const;
};

// Mean within 3 standard errors and variance within 5 % of the target, per dimension.
SampleCheck compare_samples(const std::string& label, const Matrix& draws, const GaussianExpert& target);

// Full reverse loop with the analytic epsilon of `target`.
SampleCheck verify_gaussian_recovery(const GaussianExpert& target, const NoiseSchedule& sched,
                                     Eigen::Index n_samples, std::uint64_t seed,
                                     ReverseVariance variance = ReverseVariance::Posterior);

// Interpolated sampling over two analytic experts at weights (1 - gamma, gamma), checked
// against product_gaussian. Experts must share one variance.
SampleCheck verify_poe_sampling(const GaussianExpert& g1, const GaussianExpert& g2, double gamma,
                                const NoiseSchedule& sched, Eigen::Index n_samples, std::uint64_t seed,
                                ReverseVariance variance = ReverseVariance::Posterior);

// Schedule used by the sampling checks: 1000 linear steps from 1e-4 to 2e-2, long enough
// that x_N is standard normal to within 0.7 % of the data scale.
NoiseSchedule oracle_schedule();

}  // namespace motiondiff
