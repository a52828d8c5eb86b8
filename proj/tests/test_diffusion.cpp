#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "motiondiff/diffusion.hpp"
#include "motiondiff/errors.hpp"
#include "motiondiff/oracle_gauss.hpp"

using namespace motiondiff;

namespace {

// Cumulative product of sqrt(1 - beta_n) for the 100-step 1e-4..5e-2 schedule,
// evaluated independently with numpy (float64).
constexpr double kAlphaCum100 = 0.279703978559241;

// Predicts a constant (zero) noise.
class ZeroModel : public DifferentiableEpsilonModel {
 public:
  explicit ZeroModel(Eigen::Index dim) : dim_(dim) {}
  Eigen::Index output_dim() const override { return dim_; }
  int parameter_slots() const override { return 0; }
  Matrix predict(const Matrix& x, const Matrix&, int) const override { return Matrix::Zero(x.rows(), x.cols()); }
  ag::Var forward(ag::Tape& tape, const Matrix& x, const Matrix& c, int n) const override {
    return tape.constant(predict(x, c, n));
  }

 private:
  Eigen::Index dim_;
};

// Recovers the injected noise from the clean data it was given at construction.
class PerfectModel : public DifferentiableEpsilonModel {
 public:
  PerfectModel(const NoiseSchedule& s, Matrix x0) : sched_(s), x0_(std::move(x0)) {}
  Eigen::Index output_dim() const override { return x0_.cols(); }
  int parameter_slots() const override { return 0; }
  Matrix predict(const Matrix& x, const Matrix&, int n) const override {
    return (x - sched_.alpha_cum_at(n) * x0_) / sched_.beta_cum_at(n);
  }
  ag::Var forward(ag::Tape& tape, const Matrix& x, const Matrix& c, int n) const override {
    return tape.constant(predict(x, c, n));
  }

 private:
  const NoiseSchedule& sched_;
  Matrix x0_;
};

// Linear model eps_hat = x * w, for gradient plumbing tests.
class LinearModel : public DifferentiableEpsilonModel {
 public:
  explicit LinearModel(Matrix w) : w_(std::move(w)) {}
  Eigen::Index output_dim() const override { return w_.cols(); }
  int parameter_slots() const override { return 1; }
  Matrix predict(const Matrix& x, const Matrix&, int) const override { return x * w_; }
  ag::Var forward(ag::Tape& tape, const Matrix& x, const Matrix&, int) const override {
    return ag::matmul(tape.constant(x), tape.param(w_, 0));
  }
  Matrix w_;
};

}  // namespace

TEST_CASE("build_schedule endpoints and pinned cumulative product") {
  NoiseSchedule s = build_schedule(100, 1e-4, 5e-2);
  CHECK(s.beta_at(1) == 1e-4);
  CHECK(s.beta_at(100) == doctest::Approx(5e-2).epsilon(1e-15));
  CHECK(std::abs(s.alpha_cum_at(100) - kAlphaCum100) < 1e-6);
  for (int n = 1; n <= 100; ++n) {
    CHECK(s.alpha_at(n) == std::sqrt(1.0 - s.beta_at(n)));
    CHECK(std::abs(s.alpha_cum_at(n) * s.alpha_cum_at(n) + s.beta_cum_at(n) * s.beta_cum_at(n) - 1.0) < 1e-12);
    if (n > 1) {
      CHECK(s.beta_at(n) >= s.beta_at(n - 1));
      CHECK(s.alpha_cum_at(n) < s.alpha_cum_at(n - 1));
      CHECK(s.beta_cum_at(n) > s.beta_cum_at(n - 1));
    }
  }
}

TEST_CASE("build_schedule single step") {
  NoiseSchedule s = build_schedule(1, 0.5, 0.5);
  CHECK(s.alpha_cum_at(1) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  CHECK(s.beta_cum_at(1) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
}

TEST_CASE("build_schedule rejects bad ranges") {
  CHECK_THROWS_AS(build_schedule(0, 1e-4, 0.02), ConfigError);
  CHECK_THROWS_AS(build_schedule(10, 0.0, 0.02), ConfigError);
  CHECK_THROWS_AS(build_schedule(10, 1e-4, 1.0), ConfigError);
  CHECK_THROWS_AS(build_schedule(10, 0.2, 0.1), ConfigError);
}

TEST_CASE("forward_sample closed forms") {
  NoiseSchedule s = default_schedule();
  Rng rng(3);
  Matrix x0 = standard_normal(6, 4, rng);
  Matrix eps = standard_normal(6, 4, rng);
  CHECK(forward_sample(x0, 17, Matrix::Zero(6, 4), s) == s.alpha_cum_at(17) * x0);
  CHECK(forward_sample(Matrix::Zero(6, 4), 17, eps, s) == s.beta_cum_at(17) * eps);
  Matrix ones = Matrix::Ones(3, 2);
  Matrix out = forward_sample(ones, 100, ones, s);
  const double expected = kAlphaCum100 + std::sqrt(1.0 - kAlphaCum100 * kAlphaCum100);
  CHECK((out.array() - expected).abs().maxCoeff() < 1e-6);
  CHECK_THROWS_AS(forward_sample(x0, 1, Matrix::Zero(5, 4), s), ContractViolation);
  CHECK_THROWS_AS(forward_sample(x0, 0, eps, s), ContractViolation);
}

TEST_CASE("terminal marginal of unit-variance data is unit variance") {
  NoiseSchedule s = default_schedule();
  Rng rng(11);
  Matrix x0 = standard_normal(100000, 1, rng);
  Matrix eps = standard_normal(100000, 1, rng);
  Matrix xN = forward_sample(x0, 100, eps, s);
  const double mean = xN.mean();
  const double var = (xN.array() - mean).square().sum() / double(xN.size() - 1);
  CHECK(var >= 0.99);
  CHECK(var <= 1.01);
}

TEST_CASE("training_loss with perfect and zero predictors") {
  NoiseSchedule s = default_schedule();
  TrainingWeighting w = TrainingWeighting::uniform(100);
  Rng rng(5);
  Matrix x0 = standard_normal(8, 3, rng);
  std::vector<TrainingItem> one{{x0, Matrix::Zero(8, 2)}};
  CHECK(training_loss(PerfectModel(s, x0), one, s, w, 1) < 1e-20);

  std::vector<TrainingItem> batch;
  for (int i = 0; i < 4000; ++i) batch.push_back({standard_normal(8, 3, rng), Matrix::Zero(8, 2)});
  // E[mse] = 1; per-item variance 2/24 -> standard error ~0.0046 over 4000 items.
  CHECK(training_loss(ZeroModel(3), batch, s, w, 2) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("training_loss is reproducible and applies kappa") {
  NoiseSchedule s = build_schedule(10, 1e-3, 0.2);
  Rng rng(9);
  std::vector<TrainingItem> batch{{standard_normal(5, 2, rng), Matrix::Zero(5, 1)},
                                  {standard_normal(5, 2, rng), Matrix::Zero(5, 1)}};
  LinearModel m(standard_normal(2, 2, rng));
  TrainingWeighting w = TrainingWeighting::uniform(10);
  const double a = training_loss(m, batch, s, w, 42);
  const double b = training_loss(m, batch, s, w, 42);
  CHECK(a == b);
  TrainingWeighting doubled{std::vector<double>(10, 2.0)};
  CHECK(training_loss(m, batch, s, doubled, 42) == doctest::Approx(2 * a).epsilon(1e-14));
  CHECK_THROWS_AS(training_loss(m, std::span<const TrainingItem>(), s, w, 1), ContractViolation);
  std::vector<TrainingItem> bad{{standard_normal(5, 2, rng), Matrix::Zero(4, 1)}};
  CHECK_THROWS_AS(training_loss(m, bad, s, w, 1), ContractViolation);
}

TEST_CASE("training_loss gradient matches finite differences") {
  NoiseSchedule s = build_schedule(10, 1e-3, 0.2);
  Rng rng(19);
  std::vector<TrainingItem> batch{{standard_normal(6, 3, rng), Matrix::Zero(6, 1)},
                                  {standard_normal(6, 3, rng), Matrix::Zero(6, 1)}};
  LinearModel m(standard_normal(3, 3, rng));
  TrainingWeighting w = TrainingWeighting::uniform(10);
  GradientBuffer grads;
  training_loss(m, batch, s, w, 5, &grads);
  REQUIRE(grads.size() == 1);
  for (Eigen::Index i = 0; i < m.w_.size(); ++i) {
    const double orig = m.w_(i);
    m.w_(i) = orig + 1e-6;
    const double up = training_loss(m, batch, s, w, 5);
    m.w_(i) = orig - 1e-6;
    const double down = training_loss(m, batch, s, w, 5);
    m.w_(i) = orig;
    CHECK(grads[0](i) == doctest::Approx((up - down) / 2e-6).epsilon(1e-6));
  }
}

TEST_CASE("training_loss reports the non-finite batch item") {
  NoiseSchedule s = build_schedule(10, 1e-3, 0.2);
  Matrix bad = Matrix::Zero(4, 2);
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  std::vector<TrainingItem> batch{{Matrix::Zero(4, 2), Matrix::Zero(4, 1)}, {bad, Matrix::Zero(4, 1)}};
  LinearModel m(Matrix::Identity(2, 2));
  try {
    training_loss(m, batch, s, TrainingWeighting::uniform(10), 1);
    FAIL("expected TrainingFault");
  } catch (const TrainingFault& e) {
    CHECK(e.batch_index() == 1);
  }
}

TEST_CASE("reverse_step final step is deterministic and zero case") {
  NoiseSchedule s = default_schedule();
  Rng rng(1), other(2);
  Matrix x = standard_normal(4, 3, rng);
  Matrix e = standard_normal(4, 3, rng);
  Matrix a = reverse_step(x, e, 1, s, rng);
  Matrix b = reverse_step(x, e, 1, s, other);
  CHECK(a == b);
  Matrix mu = (x - (s.beta_at(1) / s.beta_cum_at(1)) * e) / s.alpha_at(1);
  CHECK(a == mu);
  Matrix zero = Matrix::Zero(4, 3);
  CHECK(reverse_step(zero, zero, 1, s, rng).isZero(0.0));
  CHECK_THROWS_AS(reverse_step(x, e, 0, s, rng), ContractViolation);
  CHECK_THROWS_AS(reverse_step(x, e, 101, s, rng), ContractViolation);
}

TEST_CASE("reverse_sigma options") {
  NoiseSchedule s = default_schedule();
  CHECK(reverse_sigma(1, s, ReverseVariance::Posterior) == 0.0);
  CHECK(reverse_sigma(50, s, ReverseVariance::Beta) == std::sqrt(s.beta_at(50)));
  const double post = reverse_sigma(50, s, ReverseVariance::Posterior);
  CHECK(post * post == doctest::Approx(s.beta_at(50) * std::pow(s.beta_cum_at(49) / s.beta_cum_at(50), 2)));
  CHECK(post < reverse_sigma(50, s, ReverseVariance::Beta));
}

TEST_CASE("guided_epsilon identities and arithmetic") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix u = standard_normal(5, 4, rng), c = standard_normal(5, 4, rng);
    CHECK(guided_epsilon(u, c, 0.0) == u);
    CHECK(guided_epsilon(u, c, 1.0) == c);
  }
  Matrix u = Matrix::Constant(2, 2, 0.2), c = Matrix::Constant(2, 2, 0.6);
  CHECK((guided_epsilon(u, c, 2.0).array() - 1.0).abs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(guided_epsilon(u, Matrix::Zero(3, 2), 1.0), ContractViolation);
}

TEST_CASE("interpolated_epsilon") {
  Rng rng(8);
  Matrix e1 = standard_normal(3, 2, rng), e2 = standard_normal(3, 2, rng);
  std::vector<Matrix> pair{e1, e2};
  CHECK(interpolated_epsilon(pair, std::vector<double>{1.0, 0.0}) == e1);
  CHECK(interpolated_epsilon(pair, std::vector<double>{0.0, 1.0}) == e2);
  std::vector<Matrix> simple{Matrix::Zero(2, 2), Matrix::Ones(2, 2)};
  CHECK(interpolated_epsilon(simple, std::vector<double>{0.5, 0.5}) == Matrix::Constant(2, 2, 0.5));
  Matrix extrap = interpolated_epsilon(pair, std::vector<double>{-0.25, 1.25});
  CHECK(extrap.isApprox(1.25 * e2 - 0.25 * e1, 1e-15));
  CHECK_THROWS_AS(interpolated_epsilon(pair, std::vector<double>{0.5, 0.6}), ConfigError);
  // Three styles.
  std::vector<Matrix> three{e1, e2, Matrix::Ones(3, 2)};
  CHECK(interpolated_epsilon(three, std::vector<double>{0.2, 0.3, 0.5}).isApprox(0.2 * e1 + 0.3 * e2 + 0.5 * Matrix::Ones(3, 2)));
}

TEST_CASE("temperature_scale") {
  std::vector<double> w{0.5, 0.5};
  CHECK(temperature_scale(w, 1.0) == w);
  CHECK(temperature_scale(w, 2.0) == std::vector<double>{0.25, 0.25});
  CHECK(temperature_scale(std::vector<double>{1.0, 0.0}, 0.5) == std::vector<double>{2.0, 0.0});
  CHECK_THROWS_AS(temperature_scale(w, 0.0), ConfigError);
  CHECK_THROWS_AS(temperature_scale(w, -1.0), ConfigError);
  Matrix e = Matrix::Ones(1, 1);
  std::vector<Matrix> pair{e, e};
  CHECK_THROWS_AS(interpolated_epsilon(pair, temperature_scale(w, 2.0)), ConfigError);
  CHECK(interpolated_epsilon(pair, temperature_scale(w, 2.0), true)(0, 0) == 0.5);
}

TEST_CASE("GuidanceSpec validation") {
  RowVector a = RowVector::Zero(2), b = RowVector::Zero(2);
  a(0) = 1;
  b(1) = 1;
  CHECK_NOTHROW(GuidanceSpec::guided(a, 3.0).validate(2));
  CHECK_THROWS_AS(GuidanceSpec::guided(a, 1.0).validate(3), ConfigError);
  CHECK_NOTHROW(GuidanceSpec::interpolated(a, b, 1.25).validate(2));
  CHECK_THROWS_AS(GuidanceSpec::interpolated({a, b}, {0.3, 0.3}).validate(2), ConfigError);
  GuidanceSpec only_one = GuidanceSpec::interpolated({a}, {1.0});
  CHECK_THROWS_AS(only_one.validate(2), ConfigError);
}

TEST_CASE("sample: determinism, unconditional sentinel, shape") {
  NoiseSchedule s = build_schedule(20, 1e-3, 0.2);
  GaussianExpert g0{RowVector::Constant(2, 1.0), 0.5}, g1{RowVector::Constant(2, -1.0), 0.5};
  GaussianExpert unc{RowVector::Zero(2), 1.0};
  GaussianOracleModel model(s, {g0, g1}, unc);
  ConditioningSequence cond = model.conditioning(7);
  Matrix a = sample(model, cond, 7, s, GuidanceSpec::guided(model.one_hot(0), 1.5), 99);
  Matrix b = sample(model, cond, 7, s, GuidanceSpec::guided(model.one_hot(0), 1.5), 99);
  CHECK(a == b);
  CHECK(a.rows() == 7);
  CHECK(a.cols() == 2);
  Matrix unconditional = sample(model, cond, 7, s, GuidanceSpec::unconditional(), 3);
  GuidanceSpec zero_style = GuidanceSpec::conditional(RowVector::Zero(2));
  CHECK(unconditional == sample(model, cond, 7, s, zero_style, 3));
  CHECK(sample(model, cond, 7, s, GuidanceSpec::guided(model.one_hot(1), 0.0), 3) == unconditional);
  CHECK_THROWS_AS(sample(model, cond, 8, s, GuidanceSpec::unconditional(), 3), ContractViolation);
}

TEST_CASE("sample aborts on non-finite predictions") {
  class NanModel : public EpsilonModel {
   public:
    Eigen::Index output_dim() const override { return 1; }
    Matrix predict(const Matrix& x, const Matrix&, int n) const override {
      return n == 5 ? Matrix::Constant(x.rows(), 1, std::nan("")) : Matrix::Zero(x.rows(), 1);
    }
  };
  NoiseSchedule s = build_schedule(10, 1e-3, 0.2);
  ConditioningSequence c;
  c.frames = Matrix::Zero(3, 0);
  CHECK_THROWS_WITH_AS(sample(NanModel(), c, 3, s, GuidanceSpec::conditional(RowVector()), 1),
                       doctest::Contains("step 5"), EvaluationFault);
}
