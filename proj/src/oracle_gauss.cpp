#include "motiondiff/oracle_gauss.hpp"

#include <cmath>
#include <sstream>

#include "motiondiff/errors.hpp"

namespace motiondiff {

RowVector optimal_epsilon(const RowVector& x, int n, const GaussianExpert& g, const NoiseSchedule& sched) {
  if (n < 1 || n > sched.n_steps) throw ContractViolation("optimal_epsilon: step out of range");
  if (x.size() != g.mean.size()) throw ContractViolation("optimal_epsilon: dimension mismatch");
  const double a = sched.alpha_cum_at(n);
  const double b = sched.beta_cum_at(n);
  return b * (x - a * g.mean) / (a * a * g.variance + b * b);
}

GaussianExpert weighted_product_gaussian(const GaussianExpert& g1, const GaussianExpert& g2, double w1, double w2) {
  if (g1.mean.size() != g2.mean.size()) throw ContractViolation("product_gaussian: dimension mismatch");
  if (!(g1.variance > 0.0) || !(g2.variance > 0.0)) throw ConfigError("expert variance must be positive");
  const double precision = w1 / g1.variance + w2 / g2.variance;
  if (!(precision > 0.0)) throw ConfigError("product of experts has non-positive precision (extrapolation out of range)");
  GaussianExpert out;
  out.variance = 1.0 / precision;
  out.mean = (w1 * g1.mean / g1.variance + w2 * g2.mean / g2.variance) / precision;
  return out;
}

GaussianExpert product_gaussian(const GaussianExpert& g1, const GaussianExpert& g2, double gamma) {
  if (gamma == 0.0) return g1;
  if (gamma == 1.0) return g2;
  return weighted_product_gaussian(g1, g2, 1.0 - gamma, gamma);
}

GaussianOracleModel::GaussianOracleModel(const NoiseSchedule& sched, std::vector<GaussianExpert> experts,
                                         std::optional<GaussianExpert> unconditional)
    : sched_(&sched), experts_(std::move(experts)), unconditional_(std::move(unconditional)) {
  if (experts_.empty()) throw ConfigError("oracle model needs at least one expert");
  dim_ = experts_[0].mean.size();
  for (const auto& e : experts_)
    if (e.mean.size() != dim_) throw ConfigError("oracle experts must share a dimension");
  if (unconditional_ && unconditional_->mean.size() != dim_) throw ConfigError("unconditional expert dimension mismatch");
}

RowVector GaussianOracleModel::one_hot(std::size_t expert) const {
  RowVector s = RowVector::Zero(Eigen::Index(experts_.size()));
  s(Eigen::Index(expert)) = 1.0;
  return s;
}

ConditioningSequence GaussianOracleModel::conditioning(Eigen::Index rows) const {
  ConditioningSequence c;
  c.audio_width = 0;
  c.style_width = Eigen::Index(experts_.size());
  c.frames = Matrix::Zero(rows, c.style_width);
  return c;
}

Matrix GaussianOracleModel::predict(const Matrix& x_n, const Matrix& cond, int n) const {
  if (x_n.cols() != dim_) throw ContractViolation("oracle model: dimension mismatch");
  if (cond.rows() != x_n.rows() || cond.cols() != Eigen::Index(experts_.size()))
    throw ContractViolation("oracle model: conditioning shape mismatch");
  // Rows sharing a style share coefficients: eps = coef * (x - alpha_cum * m).
  const double a = sched_->alpha_cum_at(n);
  const double b = sched_->beta_cum_at(n);
  Matrix out(x_n.rows(), dim_);
  for (Eigen::Index t = 0; t < x_n.rows(); ++t) {
    const GaussianExpert* g = nullptr;
    Eigen::Index hot = -1;
    bool one_hot = true;
    for (Eigen::Index k = 0; k < cond.cols(); ++k) {
      const double v = cond(t, k);
      if (v == 1.0 && hot < 0)
        hot = k;
      else if (v != 0.0)
        one_hot = false;
    }
    if (!one_hot) throw ContractViolation("oracle model: style span must be one-hot or zero");
    if (hot >= 0) {
      g = &experts_[std::size_t(hot)];
    } else {
      if (!unconditional_) throw ContractViolation("oracle model has no unconditional expert");
      g = &*unconditional_;
    }
    const double coef = b / (a * a * g->variance + b * b);
    out.row(t) = coef * (x_n.row(t) - a * g->mean);
  }
  return out;
}

std::string SampleCheck::to_text() const {
  std::ostringstream os;
  os.precision(10);
  for (Eigen::Index d = 0; d < target_mean.size(); ++d) {
    os << "check=" << label << " dim=" << d << " mean=" << empirical_mean(d) << " target_mean=" << target_mean(d)
       << " mean_se=" << mean_standard_error(d) << " variance=" << empirical_variance(d)
       << " target_variance=" << target_variance << " mean_ok=" << (mean_ok ? 1 : 0)
       << " variance_ok=" << (variance_ok ? 1 : 0) << " pass=" << (pass() ? 1 : 0) << "\n";
  }
  return os.str();
}

SampleCheck compare_samples(const std::string& label, const Matrix& draws, const GaussianExpert& target) {
  if (draws.rows() < 2) throw ContractViolation("compare_samples needs at least two draws");
  SampleCheck c;
  c.label = label;
  c.target_mean = target.mean;
  c.target_variance = target.variance;
  const double count = double(draws.rows());
  c.empirical_mean = draws.colwise().mean();
  Matrix centered = draws.rowwise() - c.empirical_mean;
  c.empirical_variance = centered.colwise().squaredNorm() / (count - 1.0);
  c.mean_standard_error = (c.empirical_variance / count).cwiseSqrt();
  c.mean_ok = true;
  c.variance_ok = true;
  for (Eigen::Index d = 0; d < draws.cols(); ++d) {
    if (std::abs(c.empirical_mean(d) - target.mean(d)) > 3.0 * c.mean_standard_error(d)) c.mean_ok = false;
    if (std::abs(c.empirical_variance(d) - target.variance) > 0.05 * target.variance) c.variance_ok = false;
  }
  return c;
}

SampleCheck verify_gaussian_recovery(const GaussianExpert& target, const NoiseSchedule& sched,
                                     Eigen::Index n_samples, std::uint64_t seed, ReverseVariance variance) {
  GaussianOracleModel model(sched, {target});
  ConditioningSequence cond = model.conditioning(n_samples);
  Matrix draws = sample(model, cond, n_samples, sched, GuidanceSpec::conditional(model.one_hot(0)), seed, variance);
  std::ostringstream label;
  label << "recovery(m=" << target.mean(0) << ",s2=" << target.variance << ")";
  return compare_samples(label.str(), draws, target);
}

SampleCheck verify_poe_sampling(const GaussianExpert& g1, const GaussianExpert& g2, double gamma,
                                const NoiseSchedule& sched, Eigen::Index n_samples, std::uint64_t seed,
                                ReverseVariance variance) {
  if (g1.variance != g2.variance) throw ConfigError("verify_poe_sampling requires equal expert variances");
  GaussianOracleModel model(sched, {g1, g2});
  ConditioningSequence cond = model.conditioning(n_samples);
  GuidanceSpec guidance = GuidanceSpec::interpolated(model.one_hot(0), model.one_hot(1), gamma);
  Matrix draws = sample(model, cond, n_samples, sched, guidance, seed, variance);
  std::ostringstream label;
  label << "poe(gamma=" << gamma << ")";
  return compare_samples(label.str(), draws, product_gaussian(g1, g2, gamma));
}

NoiseSchedule oracle_schedule() { return build_schedule(1000, 1e-4, 2e-2); }

}  // namespace motiondiff
