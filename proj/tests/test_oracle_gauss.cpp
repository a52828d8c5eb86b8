#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "motiondiff/errors.hpp"
#include "motiondiff/oracle_gauss.hpp"

using namespace motiondiff;

namespace {

GaussianExpert expert(double m, double s2) { return {RowVector::Constant(1, m), s2}; }

double log_normal_pdf(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (x - mean) * (x - mean) / var;
}

// Mean and variance of the normalized density p1^w1 p2^w2 by trapezoid quadrature.
std::pair<double, double> numeric_product_moments(const GaussianExpert& a, const GaussianExpert& b, double w1, double w2) {
  const double lo = -30.0, hi = 30.0;
  const int steps = 600000;
  const double h = (hi - lo) / steps;
  double z = 0, m1 = 0, m2 = 0;
  for (int i = 0; i <= steps; ++i) {
    const double x = lo + i * h;
    const double wgt = (i == 0 || i == steps) ? 0.5 : 1.0;
    const double p = std::exp(w1 * log_normal_pdf(x, a.mean(0), a.variance) + w2 * log_normal_pdf(x, b.mean(0), b.variance));
    z += wgt * p;
    m1 += wgt * p * x;
    m2 += wgt * p * x * x;
  }
  const double mean = m1 / z;
  return {mean, m2 / z - mean * mean};
}

}  // namespace

TEST_CASE("optimal_epsilon closed forms") {
  NoiseSchedule s = default_schedule();
  RowVector x(3);
  x << 0.3, -1.2, 2.0;
  GaussianExpert standard{RowVector::Zero(3), 1.0};
  for (int n : {1, 10, 50, 100}) {
    CHECK(optimal_epsilon(x, n, standard, s).isApprox(s.beta_cum_at(n) * x, 1e-12));
    GaussianExpert g{x / 3.0, 0.7};
    CHECK(optimal_epsilon(s.alpha_cum_at(n) * g.mean, n, g, s).isZero(1e-15));
  }
}

TEST_CASE("optimal_epsilon is the scaled score of the diffused marginal") {
  NoiseSchedule s = default_schedule();
  GaussianExpert g = expert(1.5, 0.4);
  for (int n : {1, 5, 40, 100}) {
    const double a = s.alpha_cum_at(n), b = s.beta_cum_at(n);
    const double var = a * a * g.variance + b * b;
    for (double x : {-2.0, 0.1, 0.9, 3.0}) {
      const double h = 1e-5;
      const double score = (log_normal_pdf(x + h, a * 1.5, var) - log_normal_pdf(x - h, a * 1.5, var)) / (2 * h);
      const double eps = optimal_epsilon(RowVector::Constant(1, x), n, g, s)(0);
      CHECK(std::abs(score - (-eps / b)) < 1e-6);
    }
  }
}

TEST_CASE("product_gaussian examples") {
  GaussianExpert g1 = expert(-1.0, 1.0), g2 = expert(1.0, 1.0);
  GaussianExpert p0 = product_gaussian(g1, g2, 0.0);
  CHECK(p0.mean == g1.mean);
  CHECK(p0.variance == g1.variance);
  GaussianExpert mid = product_gaussian(g1, g2, 0.5);
  CHECK(std::abs(mid.mean(0)) < 1e-15);
  CHECK(mid.variance == doctest::Approx(1.0).epsilon(1e-15));

  GaussianExpert a = expert(0.4, 1.0), b = expert(-0.8, 1.0);
  GaussianExpert ext = product_gaussian(a, b, 1.25);
  CHECK(ext.variance == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ext.mean(0) == doctest::Approx(1.25 * -0.8 - 0.25 * 0.4).epsilon(1e-14));
  auto [mean, var] = numeric_product_moments(a, b, -0.25, 1.25);
  CHECK(ext.mean(0) == doctest::Approx(mean).epsilon(1e-8));
  CHECK(ext.variance == doctest::Approx(var).epsilon(1e-7));
}

TEST_CASE("product_gaussian matches numeric normalization for unequal variances") {
  GaussianExpert a = expert(0.5, 0.6), b = expert(2.0, 2.5);
  for (double gamma : {0.1, 0.5, 0.9, 1.1}) {
    GaussianExpert p = product_gaussian(a, b, gamma);
    auto [mean, var] = numeric_product_moments(a, b, 1.0 - gamma, gamma);
    CHECK(p.mean(0) == doctest::Approx(mean).epsilon(1e-8));
    CHECK(p.variance == doctest::Approx(var).epsilon(1e-7));
  }
}

TEST_CASE("doubling both exponents via temperature 0.5 gives the plain product") {
  GaussianExpert a = expert(-0.7, 0.8), b = expert(1.1, 1.7);
  auto w = temperature_scale(std::vector<double>{0.5, 0.5}, 0.5);
  GaussianExpert p = weighted_product_gaussian(a, b, w[0], w[1]);
  auto [mean, var] = numeric_product_moments(a, b, 1.0, 1.0);
  CHECK(p.mean(0) == doctest::Approx(mean).epsilon(1e-8));
  CHECK(p.variance == doctest::Approx(var).epsilon(1e-7));
  CHECK(p.variance == doctest::Approx(1.0 / (1.0 / 0.8 + 1.0 / 1.7)).epsilon(1e-14));
}

TEST_CASE("product_gaussian rejects non-positive precision") {
  GaussianExpert a = expert(0.0, 1.0), b = expert(1.0, 4.0);
  // precision = (1 - g) + g / 4 <= 0 for g >= 4/3
  CHECK_THROWS_AS(product_gaussian(a, b, 1.5), ConfigError);
  CHECK_NOTHROW(product_gaussian(a, b, 1.25));
}

TEST_CASE("oracle model selects experts by one-hot style") {
  NoiseSchedule s = default_schedule();
  GaussianOracleModel m(s, {expert(1.0, 1.0), expert(-2.0, 0.5)}, expert(0.0, 1.0));
  Matrix x = Matrix::Constant(3, 1, 0.7);
  Matrix cond = Matrix::Zero(3, 2);
  cond(0, 0) = 1;
  cond(1, 1) = 1;
  Matrix e = m.predict(x, cond, 30);
  CHECK(e(0, 0) == doctest::Approx(optimal_epsilon(RowVector::Constant(1, 0.7), 30, expert(1.0, 1.0), s)(0)));
  CHECK(e(1, 0) == doctest::Approx(optimal_epsilon(RowVector::Constant(1, 0.7), 30, expert(-2.0, 0.5), s)(0)));
  CHECK(e(2, 0) == doctest::Approx(optimal_epsilon(RowVector::Constant(1, 0.7), 30, expert(0.0, 1.0), s)(0)));
  cond(2, 0) = 0.5;
  CHECK_THROWS_AS(m.predict(x, cond, 30), ContractViolation);
}

TEST_CASE("verify_poe_sampling examples") {
  NoiseSchedule s = oracle_schedule();
  SampleCheck at_zero = verify_poe_sampling(expert(0.0, 1.0), expert(2.0, 1.0), 0.0, s, 10000, 21);
  CHECK(at_zero.pass());
  CHECK(at_zero.target_mean(0) == 0.0);
  SampleCheck symmetric = verify_poe_sampling(expert(-1.0, 1.0), expert(1.0, 1.0), 0.5, s, 10000, 22);
  CHECK(std::abs(symmetric.empirical_mean(0)) < 3 * symmetric.mean_standard_error(0));
  CHECK(symmetric.pass());
  SampleCheck quarter = verify_poe_sampling(expert(0.0, 1.0), expert(2.0, 1.0), 0.25, s, 10000, 23);
  CHECK(quarter.target_mean(0) == doctest::Approx(0.5));
  CHECK(quarter.pass());
  CHECK(quarter.to_text().find("pass=1") != std::string::npos);
  CHECK_THROWS_AS(verify_poe_sampling(expert(0.0, 1.0), expert(2.0, 2.0), 0.5, s, 100, 1), ConfigError);
}

TEST_CASE("temperature below one sharpens interpolated sampling") {
  NoiseSchedule s = oracle_schedule();
  GaussianOracleModel m(s, {expert(0.0, 1.0), expert(3.0, 1.0)});
  ConditioningSequence cond = m.conditioning(10000);
  GuidanceSpec plain = GuidanceSpec::interpolated({m.one_hot(0), m.one_hot(1)}, {1.0, 0.0});
  GuidanceSpec sharp = GuidanceSpec::interpolated({m.one_hot(0), m.one_hot(1)}, temperature_scale(plain.weights, 0.5));
  sharp.temperature_scaled = true;
  auto variance = [](const Matrix& d) { return (d.array() - d.mean()).square().sum() / double(d.size() - 1); };
  const double v_plain = variance(sample(m, cond, 10000, s, plain, 4));
  const double v_sharp = variance(sample(m, cond, 10000, s, sharp, 4));
  CHECK(v_plain == doctest::Approx(1.0).epsilon(0.05));
  CHECK(v_sharp < 0.8 * v_plain);
}

TEST_CASE("compare_samples flags mean and variance separately") {
  Matrix d(4, 1);
  d << -1, 1, -1, 1;
  SampleCheck ok = compare_samples("x", d, expert(0.0, 4.0 / 3.0));
  CHECK(ok.mean_ok);
  CHECK(ok.variance_ok);
  SampleCheck bad = compare_samples("x", d, expert(5.0, 10.0));
  CHECK_FALSE(bad.mean_ok);
  CHECK_FALSE(bad.variance_ok);
}
