#pragma once

// Helpers shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>

#include "motiondiff/denoiser.hpp"
#include "motiondiff/rng.hpp"

namespace motiondiff::testing {

inline DenoiserConfig toy_config(int input_dim = 3, int cond_dim = 4) {
  DenoiserConfig c;
  c.n_blocks = 2;
  c.layers_per_block = 2;
  c.dilation_cycle = 3;
  c.n_heads = 2;
  c.attention_width = 8;
  c.feedforward_width = 8;
  c.input_dim = input_dim;
  c.cond_dim = cond_dim;
  c.step_embed_dim = 8;
  c.max_relative_distance = 3;
  return c;
}

// Fills every tensor (including zero-initialized ones) with N(0, scale^2) draws so that
// no gradient path is trivially zero.
inline void randomize(DenoiserParams& params, std::uint64_t seed, double scale = 0.4) {
  Rng rng(seed);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& t = params.tensor(i);
    t = standard_normal(t.rows(), t.cols(), rng) * scale;
  }
}

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
};

// Compares tape gradients of loss() against central differences for every scalar
// parameter. The relative error uses max(|analytic|, |numeric|, floor) as denominator.
inline GradientCheckResult finite_difference_check(DenoiserParams& params, const std::function<double()>& loss,
                                                   const GradientBuffer& analytic, double step = 1e-5,
                                                   double floor = 1e-6) {
  GradientCheckResult r;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& t = params.tensor(k);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double orig = t(i);
      t(i) = orig + step;
      const double up = loss();
      t(i) = orig - step;
      const double down = loss();
      t(i) = orig;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[k].size() ? analytic[k](i) : 0.0;
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > r.max_relative_error) {
        r.max_relative_error = rel;
        r.worst_parameter = params.name(k);
      }
      ++r.checked;
    }
  }
  return r;
}

inline Matrix circular_shift(const Matrix& x, Eigen::Index k) {
  const Eigen::Index T = x.rows();
  Matrix out(T, x.cols());
  for (Eigen::Index t = 0; t < T; ++t) out.row(((t + k) % T + T) % T) = x.row(t);
  return out;
}

}  // namespace motiondiff::testing
