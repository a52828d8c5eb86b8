#include "motiondiff/verify.hpp"

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <sstream>

#include "motiondiff/audio.hpp"
#include "motiondiff/bvh.hpp"
#include "motiondiff/denoiser.hpp"
#include "motiondiff/errors.hpp"
#include "motiondiff/oracle_gauss.hpp"
#include "motiondiff/training.hpp"

namespace motiondiff {

namespace {

constexpr double kPi = std::numbers::pi;

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

SuiteResult result(const std::string& suite, const std::string& check, bool pass, const std::string& detail) {
  return {suite, check, pass, detail};
}

SuiteResult from_sample_check(const std::string& suite, const SampleCheck& c) {
  std::ostringstream d;
  d << "mean=" << fmt(c.empirical_mean(0)) << " target_mean=" << fmt(c.target_mean(0))
    << " var=" << fmt(c.empirical_variance(0)) << " target_var=" << fmt(c.target_variance)
    << " se=" << fmt(c.mean_standard_error(0));
  return result(suite, c.label, c.pass(), d.str());
}

GaussianExpert expert(double m, double s2) { return {RowVector::Constant(1, m), s2}; }

DenoiserConfig toy_config(int input_dim, int cond_dim) {
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

void randomize(DenoiserParams& p, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (std::size_t i = 0; i < p.size(); ++i) p.tensor(i) = standard_normal(p.tensor(i).rows(), p.tensor(i).cols(), rng) * scale;
}

Matrix shift_rows(const Matrix& x, Eigen::Index k, bool circular, Rng& fill) {
  const Eigen::Index T = x.rows();
  Matrix out = circular ? Matrix(T, x.cols()) : standard_normal(T, x.cols(), fill);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Eigen::Index to = t + k;
    if (circular) {
      out.row(((to % T) + T) % T) = x.row(t);
    } else if (to >= 0 && to < T) {
      out.row(to) = x.row(t);
    }
  }
  return out;
}

// Plain DFT pipeline, independent of the FFT-based extractor.
Eigen::MatrixXd dft_mfcc(const Waveform& w, int n_coeffs) {
  const double sr = w.sample_rate;
  const int win = int(std::lround(2048.0 / 44100.0 * sr));
  int nfft = 1;
  while (nfft < win) nfft <<= 1;
  const double hop = sr / 30.0;
  const long n = long(w.samples.size());
  const long frames = long(std::ceil(double(n) / hop - 1e-9));
  std::vector<double> y(w.samples.size());
  y[0] = w.samples[0];
  for (long i = 1; i < n; ++i) y[std::size_t(i)] = w.samples[std::size_t(i)] - 0.97 * w.samples[std::size_t(i - 1)];
  const int bins = nfft / 2 + 1, mels = 26;
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> pts(mels + 2);
  for (int i = 0; i < mels + 2; ++i) pts[std::size_t(i)] = hz(mel(sr / 2) * i / (mels + 1));
  Eigen::MatrixXd out(frames, n_coeffs);
  std::vector<double> frame(static_cast<std::size_t>(nfft)), mag(static_cast<std::size_t>(bins));
  for (long t = 0; t < frames; ++t) {
    const long start = std::lround(double(t) * hop) - win / 2;
    std::fill(frame.begin(), frame.end(), 0.0);
    for (int k = 0; k < win; ++k) {
      const long i = start + k;
      if (i >= 0 && i < n) frame[std::size_t(k)] = y[std::size_t(i)] * 0.5 * (1 - std::cos(2 * kPi * k / win));
    }
    for (int k = 0; k < bins; ++k) {
      std::complex<double> acc = 0;
      for (int j = 0; j < win; ++j) acc += frame[std::size_t(j)] * std::polar(1.0, -2 * kPi * double((long(k) * j) % nfft) / nfft);
      mag[std::size_t(k)] = std::abs(acc);
    }
    std::vector<double> logmel(mels);
    for (int m = 0; m < mels; ++m) {
      double e = 0;
      for (int k = 0; k < bins; ++k) {
        const double f = k * sr / nfft;
        double tri = 0;
        if (f > pts[std::size_t(m)] && f <= pts[std::size_t(m) + 1])
          tri = (f - pts[std::size_t(m)]) / (pts[std::size_t(m) + 1] - pts[std::size_t(m)]);
        else if (f > pts[std::size_t(m) + 1] && f < pts[std::size_t(m) + 2])
          tri = (pts[std::size_t(m) + 2] - f) / (pts[std::size_t(m) + 2] - pts[std::size_t(m) + 1]);
        e += tri * mag[std::size_t(k)];
      }
      logmel[std::size_t(m)] = std::log(std::max(e, 1e-10));
    }
    for (int c = 0; c < n_coeffs; ++c) {
      double acc = 0;
      for (int m = 0; m < mels; ++m) acc += logmel[std::size_t(m)] * std::cos(kPi * c * (m + 0.5) / mels);
      out(t, c) = acc * std::sqrt((c == 0 ? 1.0 : 2.0) / mels);
    }
  }
  return out;
}

const char* kFixture =
    "HIERARCHY\n"
    "ROOT Hips\n"
    "{\n"
    "\tOFFSET 0.5 91.25 -3.0\n"
    "\tCHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation\n"
    "\tJOINT Spine\n"
    "\t{\n"
    "\t\tOFFSET 0 10.125 0\n"
    "\t\tCHANNELS 3 Zrotation Xrotation Yrotation\n"
    "\t\tEnd Site\n"
    "\t\t{\n"
    "\t\t\tOFFSET 0 5 0\n"
    "\t\t}\n"
    "\t}\n"
    "}\n"
    "MOTION\n"
    "Frames: 2\n"
    "Frame Time: 0.0333333\n"
    "1.5 90 -2 10.25 -20.5 30.125 5 -4 3\n"
    "1.6 89.5 -1.75 11.5 -19.25 31 6 -5 2\n";

}  // namespace

std::vector<SuiteResult> check_schedule() {
  std::vector<SuiteResult> out;
  for (const auto& [name, sched] : {std::pair{"default", default_schedule()}, std::pair{"oracle", oracle_schedule()}}) {
    double worst = 0;
    for (int n = 1; n <= sched.n_steps; ++n)
      worst = std::max(worst, std::abs(sched.alpha_cum_at(n) * sched.alpha_cum_at(n) + sched.beta_cum_at(n) * sched.beta_cum_at(n) - 1.0));
    out.push_back(result("schedule", std::string("variance_preserving_") + name, worst < 1e-12, "max_dev=" + fmt(worst)));
  }
  const double a100 = default_schedule().alpha_cum_at(100);
  out.push_back(result("schedule", "alpha_cum_100_pin", std::abs(a100 - 0.279703978559241) < 1e-6, "value=" + fmt(a100)));
  const Matrix ones = Matrix::Ones(2, 3);
  const Matrix xn = forward_sample(ones, 100, ones, default_schedule());
  const double want = 0.279703978559241 + 0.960086290068831;
  out.push_back(result("schedule", "forward_sample_pin", (xn.array() - want).abs().maxCoeff() < 1e-12, "value=" + fmt(xn(0, 0))));
  return out;
}

std::vector<SuiteResult> check_guidance_identities() {
  Rng rng(2024);
  const DenoiserConfig c = toy_config(3, 4);
  DenoiserParams p = init_params(c, 5);
  randomize(p, 6, 0.4);
  const Denoiser model(c, p);
  bool zero_ok = true, one_ok = true, model_ok = true;
  for (int i = 0; i < 100; ++i) {
    const Matrix u = standard_normal(6, 3, rng), v = standard_normal(6, 3, rng);
    zero_ok = zero_ok && guided_epsilon(u, v, 0.0) == u;
    one_ok = one_ok && guided_epsilon(u, v, 1.0) == v;
  }
  for (int i = 0; i < 10; ++i) {
    ConditioningSequence cond{standard_normal(6, 4, rng), 2, 2};
    const RowVector style = (RowVector(2) << 1.0, 0.0).finished();
    cond.frames.rightCols(2).setZero();
    const Matrix x = standard_normal(6, 3, rng);
    const int n = 1 + int(rng() % 100);
    const Matrix uncond = model.predict(x, cond.without_style(), n);
    const Matrix condp = model.predict(x, cond.with_style(style), n);
    model_ok = model_ok && combined_epsilon(model, x, cond, n, GuidanceSpec::guided(style, 0.0)) == uncond &&
               combined_epsilon(model, x, cond, n, GuidanceSpec::guided(style, 1.0)) == condp;
  }
  return {result("guidance", "gamma0_bitwise_unconditional", zero_ok, "tensors=100"),
          result("guidance", "gamma1_bitwise_conditional", one_ok, "tensors=100"),
          result("guidance", "denoiser_guided_endpoints", model_ok, "inputs=10")};
}

std::vector<SuiteResult> check_gaussian_recovery() {
  const NoiseSchedule s = oracle_schedule();
  std::vector<SuiteResult> out;
  const std::pair<double, double> targets[] = {{0.0, 1.0}, {1.0, 1.0}, {-1.0, 0.5}, {0.5, 2.0}, {3.0, 0.25}};
  std::uint64_t seed = 100;
  for (auto [m, s2] : targets) out.push_back(from_sample_check("gauss", verify_gaussian_recovery(expert(m, s2), s, 10000, seed++)));
  return out;
}

std::vector<SuiteResult> check_poe() {
  const NoiseSchedule s = oracle_schedule();
  std::vector<SuiteResult> out;
  std::uint64_t seed = 200;
  for (double g : {0.0, 0.25, 0.5, 1.0, 1.25})
    out.push_back(from_sample_check("gauss", verify_poe_sampling(expert(0.0, 1.0), expert(2.0, 1.0), g, s, 10000, seed++)));
  out.push_back(from_sample_check("gauss", verify_poe_sampling(expert(-1.0, 1.0), expert(1.0, 1.0), 0.5, s, 10000, seed++)));
  return out;
}

std::vector<SuiteResult> check_guidance_monotone() {
  const NoiseSchedule s = oracle_schedule();
  GaussianOracleModel model(s, {expert(2.0, 1.0)}, expert(0.0, 1.0));
  const ConditioningSequence cond = model.conditioning(10000);
  std::vector<double> disp;
  std::string detail;
  for (double g : {0.0, 0.5, 1.0, 1.5, 2.0}) {
    const Matrix draws = sample(model, cond, 10000, s, GuidanceSpec::guided(model.one_hot(0), g), 300);
    disp.push_back(draws.mean() - 0.0);
    detail += "g" + fmt(g) + "=" + fmt(disp.back()) + " ";
  }
  bool increasing = true;
  for (std::size_t i = 1; i < disp.size(); ++i) increasing = increasing && disp[i] > disp[i - 1];
  return {result("gauss", "guidance_monotone_displacement", increasing, detail)};
}

std::vector<SuiteResult> check_gradients() {
  const DenoiserConfig c = toy_config(3, 4);
  DenoiserParams p = init_params(c, 41);
  randomize(p, 42, 0.4);
  Denoiser model(c, p);
  Rng rng(43);
  std::vector<TrainingItem> batch;
  for (int i = 0; i < 2; ++i) batch.push_back({standard_normal(8, 3, rng), standard_normal(8, 4, rng)});
  const NoiseSchedule s = default_schedule();
  const TrainingWeighting w = TrainingWeighting::uniform(s.n_steps);
  GradientBuffer grads;
  training_loss(model, batch, s, w, 44, &grads);

  const double h = 1e-5, floor = 1e-6;
  double worst = 0;
  std::string worst_name;
  std::size_t checked = 0;
  DenoiserParams& params = model.mutable_params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& t = params.tensor(k);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double orig = t(i);
      t(i) = orig + h;
      const double up = training_loss(model, batch, s, w, 44);
      t(i) = orig - h;
      const double down = training_loss(model, batch, s, w, 44);
      t(i) = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = grads[k].size() ? grads[k](i) : 0.0;
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > worst) {
        worst = rel;
        worst_name = params.name(k);
      }
      ++checked;
    }
  }
  return {result("gradient", "training_loss_vs_central_differences", worst < 1e-4,
                 "max_rel=" + fmt(worst) + " worst=" + worst_name + " scalars=" + std::to_string(checked))};
}

std::vector<SuiteResult> check_equivariance() {
  std::vector<SuiteResult> out;
  Rng rng(77);
  {
    DenoiserConfig c = toy_config(3, 4);
    c.circular = true;
    DenoiserParams p = init_params(c, 70);
    randomize(p, 71, 0.4);
    const Denoiser d(c, p);
    const Matrix x = standard_normal(16, 3, rng), cond = standard_normal(16, 4, rng);
    const Matrix base = d.predict(x, cond, 37);
    double worst = 0;
    for (Eigen::Index k : {1, 5, 11}) {
      const Matrix y = d.predict(shift_rows(x, k, true, rng), shift_rows(cond, k, true, rng), 37);
      worst = std::max(worst, (y - shift_rows(base, k, true, rng)).cwiseAbs().maxCoeff());
    }
    out.push_back(result("equivariance", "circular_shift", worst < 1e-5, "max_dev=" + fmt(worst)));
  }
  {
    // A -60 logit on the clamped boundary offsets limits attention to |offset| < R,
    // which makes the receptive field finite.
    DenoiserConfig c = toy_config(3, 4);
    DenoiserParams p = init_params(c, 72);
    randomize(p, 73, 0.4);
    const int r = c.max_relative_distance;
    int margin = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p.name(i).size() >= 10 && p.name(i).ends_with("attn.tisa")) {
        p.tensor(i).col(0).setConstant(-60.0);
        p.tensor(i).col(2 * r).setConstant(-60.0);
      }
    }
    for (int b = 0; b < c.n_blocks; ++b) {
      const BlockGeometry g = block_geometry(b, c.dilation_cycle);
      margin += c.layers_per_block * (r - 1 + (g.kernel - 1) / 2 * g.dilation);
    }
    const Denoiser d(c, p);
    const Eigen::Index T = 64, k = 5;
    const Matrix x = standard_normal(T, 3, rng), cond = standard_normal(T, 4, rng);
    const Matrix base = d.predict(x, cond, 37);
    const Matrix y = d.predict(shift_rows(x, k, false, rng), shift_rows(cond, k, false, rng), 37);
    double worst = 0;
    for (Eigen::Index t = k + margin; t < T - margin; ++t) worst = std::max(worst, (y.row(t) - base.row(t - k)).cwiseAbs().maxCoeff());
    out.push_back(result("equivariance", "zero_padding_interior", worst < 1e-4 && k + margin < T - margin,
                         "max_dev=" + fmt(worst) + " margin=" + std::to_string(margin) + " frames=" + std::to_string(T)));
  }
  return out;
}

std::vector<SuiteResult> check_lr_schedule() {
  const TrainConfig cfg;
  const double at_warm = lr_at(10000, cfg), next = lr_at(10010, cfg);
  return {result("lr", "lr_10000_exact", at_warm == 1e-4, "value=" + fmt(at_warm)),
          result("lr", "decay_ratio_exact", next / at_warm == 1.0 - 0.5e-5, "ratio=" + fmt(next / at_warm)),
          result("lr", "warmup_midpoint", std::abs(lr_at(5000, cfg) - 0.5e-4) < 1e-18, "value=" + fmt(lr_at(5000, cfg)))};
}

std::vector<SuiteResult> check_style_dropout() {
  const int n = 100000;
  std::vector<ConditioningSequence> batch(std::size_t(n), ConditioningSequence{Matrix::Ones(1, 3), 1, 2});
  Rng rng(99);
  const std::vector<bool> dropped = apply_style_dropout(batch, 0.2, rng);
  long count = 0;
  bool whole = true;
  for (int i = 0; i < n; ++i) {
    if (dropped[std::size_t(i)]) ++count;
    const auto& f = batch[std::size_t(i)].frames;
    whole = whole && f(0, 0) == 1.0 && (dropped[std::size_t(i)] ? f.rightCols(2).isZero(0.0) : f.rightCols(2).isOnes(0.0));
  }
  const double frac = double(count) / n;
  return {result("dropout", "rate_within_3_sigma", std::abs(frac - 0.2) <= 0.004, "fraction=" + fmt(frac)),
          result("dropout", "style_span_only", whole, "")};
}

std::vector<SuiteResult> check_round_trips() {
  std::vector<SuiteResult> out;
  {
    const BvhDocument a = parse_bvh(kFixture);
    BvhDocument big = a;
    Rng rng(5);
    std::uniform_real_distribution<double> u(-180, 180);
    big.motion.values = Matrix(50, a.skeleton.channel_count());
    for (Eigen::Index i = 0; i < big.motion.values.size(); ++i) big.motion.values.data()[i] = u(rng);
    double worst = 0, worst_offset = 0;
    for (const BvhDocument* d : std::initializer_list<const BvhDocument*>{&a, &big}) {
      const BvhDocument b = parse_bvh(serialize_bvh(d->skeleton, d->motion));
      worst = std::max(worst, (b.motion.values - d->motion.values).cwiseAbs().maxCoeff());
      for (std::size_t j = 0; j < b.skeleton.joints.size(); ++j)
        worst_offset = std::max(worst_offset, (b.skeleton.joints[j].offset - d->skeleton.joints[j].offset).cwiseAbs().maxCoeff());
    }
    out.push_back(result("roundtrip", "bvh_values", worst < 1e-4 && worst_offset < 1e-4,
                         "max_dev=" + fmt(worst) + " offset_dev=" + fmt(worst_offset)));
  }
  {
    Rng rng(6);
    std::normal_distribution<double> n(0.0, 1.5);
    std::uniform_real_distribution<double> deg(-180, 180);
    const RotationOrder orders[] = {parse_rotation_order("XYZ"), parse_rotation_order("ZXY"), parse_rotation_order("YZX")};
    double worst = 0;
    for (int i = 0; i < 10000; ++i) {
      const Eigen::Vector3d r(n(rng), n(rng), n(rng));
      const Eigen::Matrix3d m = expmap_to_matrix(r);
      worst = std::max(worst, (expmap_to_matrix(matrix_to_expmap(m)) - m).cwiseAbs().maxCoeff());
      const Eigen::Vector3d e(deg(rng), deg(rng) / 2, deg(rng));
      const RotationOrder o = orders[i % 3];
      worst = std::max(worst, (expmap_to_matrix(euler_to_expmap(e, o)) - euler_to_matrix(e, o)).cwiseAbs().maxCoeff());
    }
    out.push_back(result("roundtrip", "expmap_matrix", worst < 1e-9, "max_dev=" + fmt(worst)));
  }
  {
    Waveform sine, chirp, noise;
    sine.sample_rate = chirp.sample_rate = noise.sample_rate = 16000;
    Rng rng(7);
    std::normal_distribution<double> g(0.0, 0.2);
    for (int i = 0; i < 8000; ++i) {
      const double t = i / 16000.0;
      sine.samples.push_back(std::sin(2 * kPi * 440 * t));
      chirp.samples.push_back(0.6 * std::sin(2 * kPi * (200 * t + 1500 * t * t)));
      noise.samples.push_back(g(rng));
    }
    double worst = 0;
    for (const Waveform* w : {&sine, &chirp, &noise}) {
      const Eigen::MatrixXd got = mfcc(*w, 20).frames, want = dft_mfcc(*w, 20);
      worst = got.rows() == want.rows() ? std::max(worst, (got - want).cwiseAbs().maxCoeff()) : INFINITY;
    }
    out.push_back(result("roundtrip", "mfcc_vs_plain_dft", worst < 1e-6, "max_dev=" + fmt(worst)));
  }
  {
    Checkpoint ck;
    ck.model = toy_config(3, 4);
    ck.params = init_params(ck.model, 8);
    ck.optimizer = AdamState(ck.params);
    ck.train.total_steps = 10;
    const std::string once = encode_checkpoint(ck);
    const std::string twice = encode_checkpoint(decode_checkpoint(once));
    out.push_back(result("roundtrip", "checkpoint_bytes", once == twice, "bytes=" + std::to_string(once.size())));
  }
  return out;
}

std::vector<std::string> verify_suite_names() {
  return {"gauss", "schedule", "guidance", "lr", "dropout", "roundtrip", "gradient", "equivariance", "all"};
}

std::vector<SuiteResult> cmd_verify(const std::string& selector) {
  using Fn = std::function<std::vector<SuiteResult>()>;
  const std::vector<std::pair<std::string, std::vector<Fn>>> suites = {
      {"schedule", {check_schedule}},
      {"guidance", {check_guidance_identities}},
      {"gauss", {check_gaussian_recovery, check_poe, check_guidance_monotone}},
      {"lr", {check_lr_schedule}},
      {"dropout", {check_style_dropout}},
      {"roundtrip", {check_round_trips}},
      {"gradient", {check_gradients}},
      {"equivariance", {check_equivariance}},
  };
  std::vector<SuiteResult> out;
  bool matched = false;
  for (const auto& [name, fns] : suites) {
    if (selector != "all" && selector != name) continue;
    matched = true;
    for (const auto& f : fns) {
      auto r = f();
      out.insert(out.end(), r.begin(), r.end());
    }
  }
  if (!matched) {
    std::string names;
    for (const auto& n : verify_suite_names()) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("unknown suite '" + selector + "' (available: " + names + ")");
  }
  return out;
}

std::string verify_report(const std::vector<SuiteResult>& results) {
  std::string s;
  int passed = 0;
  for (const auto& r : results) {
    s += "suite=" + r.suite + " check=" + r.check + " pass=" + (r.pass ? "1" : "0");
    if (!r.detail.empty()) s += " " + r.detail;
    s += "\n";
    passed += r.pass ? 1 : 0;
  }
  s += "summary checks=" + std::to_string(results.size()) + " passed=" + std::to_string(passed) +
       " failed=" + std::to_string(int(results.size()) - passed) + "\n";
  return s;
}

}  // namespace motiondiff
