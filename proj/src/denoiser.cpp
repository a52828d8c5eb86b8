#include "motiondiff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "motiondiff/errors.hpp"
#include "motiondiff/rng.hpp"

namespace motiondiff {

namespace {

std::string layer_prefix(int block, int layer) {
  return "block" + std::to_string(block) + ".layer" + std::to_string(layer) + ".";
}

std::string block_prefix(int block) { return "block" + std::to_string(block) + "."; }

}  // namespace

void DenoiserConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string("denoiser config: ") + name + " must be positive");
  };
  positive(n_blocks, "n_blocks");
  positive(layers_per_block, "layers_per_block");
  positive(dilation_cycle, "dilation_cycle");
  positive(n_heads, "n_heads");
  positive(attention_width, "attention_width");
  positive(feedforward_width, "feedforward_width");
  positive(input_dim, "input_dim");
  positive(step_embed_dim, "step_embed_dim");
  positive(max_relative_distance, "max_relative_distance");
  if (cond_dim < 0) throw ConfigError("denoiser config: cond_dim must be non-negative");
  if (attention_width % n_heads != 0) throw ConfigError("denoiser config: attention_width must divide by n_heads");
  if (step_embed_dim % 2 != 0) throw ConfigError("denoiser config: step_embed_dim must be even");
}

BlockGeometry block_geometry(int block_index, int dilation_cycle) {
  const int exponent = (block_index % dilation_cycle) - 1;
  const double factor = std::ldexp(1.0, exponent);
  if (factor < 1.0) return {factor, LayerMode::Transformer, 1, 1};
  return {factor, LayerMode::Conformer, 3, static_cast<int>(factor)};
}

RowVector step_embedding(double n, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("step embedding dimension must be even and positive");
  const int half = dim / 2;
  RowVector e(dim);
  for (int k = 0; k < half; ++k) {
    const double exponent = half == 1 ? 0.0 : double(k) / double(half - 1);
    const double freq = std::pow(1e-4, exponent);
    e(2 * k) = std::sin(n * freq);
    e(2 * k + 1) = std::cos(n * freq);
  }
  return e;
}

Eigen::Index tisa_column(Eigen::Index t_query, Eigen::Index t_key, Eigen::Index length, int max_distance,
                         bool circular) {
  Eigen::Index offset = t_key - t_query;
  if (circular) {
    offset = ((offset % length) + length) % length;
    if (2 * offset >= length) offset -= length;
  }
  offset = std::clamp<Eigen::Index>(offset, -max_distance, max_distance);
  return offset + max_distance;
}

void DenoiserParams::add(const std::string& name, Matrix value) {
  if (contains(name)) throw ConfigError("duplicate parameter name " + name);
  index_[name] = static_cast<int>(names_.size());
  names_.push_back(name);
  tensors_.push_back(std::move(value));
}

int DenoiserParams::slot(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter " + name);
  return it->second;
}

Matrix& DenoiserParams::at(const std::string& name) { return tensors_[static_cast<std::size_t>(slot(name))]; }
const Matrix& DenoiserParams::at(const std::string& name) const {
  return tensors_[static_cast<std::size_t>(slot(name))];
}

std::size_t DenoiserParams::scalar_count() const {
  std::size_t total = 0;
  for (const auto& t : tensors_) total += static_cast<std::size_t>(t.size());
  return total;
}

bool DenoiserParams::all_finite() const {
  for (const auto& t : tensors_)
    if (!t.allFinite()) return false;
  return true;
}

std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> parameter_layout(
    const DenoiserConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> out;
  auto add = [&out](std::string name, Eigen::Index r, Eigen::Index k) { out.push_back({std::move(name), {r, k}}); };
  const Eigen::Index W = c.attention_width, F = c.feedforward_width;
  add("input.w", c.input_dim, W);
  add("input.b", 1, W);
  add("step.fc1.w", c.step_embed_dim, W);
  add("step.fc1.b", 1, W);
  add("step.fc2.w", W, W);
  add("step.fc2.b", 1, W);
  for (int l = 0; l < c.n_blocks; ++l) {
    const std::string bp = block_prefix(l);
    const int kernel = block_geometry(l, c.dilation_cycle).kernel;
    add(bp + "step.w", W, W);
    add(bp + "step.b", 1, W);
    for (int j = 0; j < c.layers_per_block; ++j) {
      const std::string lp = layer_prefix(l, j);
      add(lp + "ln1.gain", 1, W);
      add(lp + "ln1.offset", 1, W);
      for (const char* m : {"q", "k", "v", "o"}) {
        add(lp + "attn.w" + m, W, W);
        add(lp + "attn.b" + m, 1, W);
      }
      add(lp + "attn.tisa", c.n_heads, 2 * c.max_relative_distance + 1);
      add(lp + "ln2.gain", 1, W);
      add(lp + "ln2.offset", 1, W);
      add(lp + "ff.conv.w", kernel * W, 2 * F);
      add(lp + "ff.conv.b", 1, 2 * F);
      add(lp + "ff.out.w", F, W);
      add(lp + "ff.out.b", 1, W);
    }
    add(bp + "gate.w", W, 2 * W);
    add(bp + "gate.b", 1, 2 * W);
    add(bp + "cond.w", c.cond_dim, 2 * W);
    add(bp + "cond.b", 1, 2 * W);
    add(bp + "out.w", W, 2 * W);
    add(bp + "out.b", 1, 2 * W);
  }
  add("head.fc1.w", W, W);
  add("head.fc1.b", 1, W);
  add("head.fc2.w", W, c.input_dim);
  add("head.fc2.b", 1, c.input_dim);
  return out;
}

namespace {

// ".b", ".bq", ".bk", ".bv", ".bo"
bool is_bias(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string last = name.substr(dot + 1);
  return !last.empty() && last[0] == 'b' && last.size() <= 2;
}

}  // namespace

DenoiserParams init_params(const DenoiserConfig& config, std::uint64_t seed) {
  DenoiserParams params;
  Rng rng = substream(seed, 0x1ea7);
  for (const auto& [name, shape] : parameter_layout(config)) {
    const auto [rows, cols] = shape;
    auto ends_with = [&name](const char* suffix) {
      const std::string s(suffix);
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    Matrix m;
    if (ends_with(".gain")) {
      m = Matrix::Ones(rows, cols);
    } else if (name == "head.fc2.w" || ends_with(".tisa") || ends_with(".offset") || is_bias(name)) {
      // Biases, offsets, TISA tables and the final head layer start at zero.
      m = Matrix::Zero(rows, cols);
    } else {
      m = standard_normal(rows, cols, rng) * (1.0 / std::sqrt(double(std::max<Eigen::Index>(rows, 1))));
    }
    params.add(name, std::move(m));
  }
  return params;
}

struct Denoiser::Bound {
  const DenoiserParams* params;
  std::vector<ag::Var> leaves;
  const ag::Var& operator[](const std::string& name) const {
    return leaves[static_cast<std::size_t>(params->slot(name))];
  }
};

Denoiser::Denoiser(DenoiserConfig config, DenoiserParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size()) throw ConfigError("parameter count does not match denoiser config");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, shape] = layout[i];
    if (params_.name(i) != name) throw ConfigError("unexpected parameter " + params_.name(i) + ", wanted " + name);
    const Matrix& t = params_.tensor(i);
    if (t.rows() != shape.first || t.cols() != shape.second)
      throw ConfigError("parameter " + name + " has shape " + std::to_string(t.rows()) + "x" +
                        std::to_string(t.cols()) + ", config wants " + std::to_string(shape.first) + "x" +
                        std::to_string(shape.second));
  }
}

Denoiser::Bound Denoiser::bind(ag::Tape& tape) const {
  Bound b{&params_, {}};
  b.leaves.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) b.leaves.push_back(tape.param(params_.tensor(i), static_cast<int>(i)));
  return b;
}

void Denoiser::check_inputs(const Matrix& x_n, const Matrix& cond) const {
  if (x_n.cols() != config_.input_dim) throw ConfigError("denoiser input width differs from input_dim");
  if (cond.cols() != config_.cond_dim) throw ConfigError("conditioning width differs from cond_dim");
  if (cond.rows() != x_n.rows()) throw ContractViolation("conditioning frame count differs from pose frame count");
  if (x_n.rows() < 1) throw ContractViolation("denoiser needs at least one frame");
}

ag::Var Denoiser::step_features(ag::Tape& tape, const Bound& p, int n) const {
  ag::Var e = tape.constant(step_embedding(double(n), config_.step_embed_dim));
  ag::Var h = ag::gelu(ag::linear(e, p["step.fc1.w"], p["step.fc1.b"]));
  return ag::gelu(ag::linear(h, p["step.fc2.w"], p["step.fc2.b"]));
}

ag::Var Denoiser::layer(ag::Tape& /*tape*/, const Bound& p, const ag::Var& h, int block, int layer) const {
  const std::string lp = layer_prefix(block, layer);
  const Eigen::Index T = h.rows();
  const int heads = config_.n_heads;
  const Eigen::Index head_width = config_.attention_width / heads;
  const BlockGeometry geo = block_geometry(block, config_.dilation_cycle);

  // Self-attention with per-head relative-offset biases.
  ag::Var a = ag::layer_norm_rows(h, p[lp + "ln1.gain"], p[lp + "ln1.offset"]);
  ag::Var q = ag::linear(a, p[lp + "attn.wq"], p[lp + "attn.bq"]);
  ag::Var k = ag::linear(a, p[lp + "attn.wk"], p[lp + "attn.bk"]);
  ag::Var v = ag::linear(a, p[lp + "attn.wv"], p[lp + "attn.bv"]);
  ag::IndexMatrix offsets(T, T);
  for (Eigen::Index j = 0; j < T; ++j)
    for (Eigen::Index i = 0; i < T; ++i)
      offsets(i, j) = tisa_column(i, j, T, config_.max_relative_distance, config_.circular);
  const double logit_scale = 1.0 / std::sqrt(double(head_width));
  std::vector<ag::Var> head_out;
  head_out.reserve(static_cast<std::size_t>(heads));
  for (int hd = 0; hd < heads; ++hd) {
    ag::Var qh = ag::cols(q, hd * head_width, head_width);
    ag::Var kh = ag::cols(k, hd * head_width, head_width);
    ag::Var vh = ag::cols(v, hd * head_width, head_width);
    ag::Var logits = ag::add(ag::scale(ag::matmul_nt(qh, kh), logit_scale),
                             ag::gather_row(p[lp + "attn.tisa"], hd, offsets));
    head_out.push_back(ag::matmul(ag::softmax_rows(logits), vh));
  }
  ag::Var attn = ag::linear(ag::hcat(head_out), p[lp + "attn.wo"], p[lp + "attn.bo"]);
  ag::Var x = ag::add(h, attn);

  // Gated convolutional feedforward; kernel 1 in Transformer mode.
  ag::Var b = ag::layer_norm_rows(x, p[lp + "ln2.gain"], p[lp + "ln2.offset"]);
  std::vector<ag::Var> taps;
  const int centre = (geo.kernel - 1) / 2;
  for (int j = 0; j < geo.kernel; ++j) {
    const Eigen::Index offset = Eigen::Index(j - centre) * geo.dilation;
    taps.push_back(offset == 0 ? b : ag::time_shift(b, -offset, config_.circular));
  }
  ag::Var stacked = taps.size() == 1 ? taps[0] : ag::hcat(taps);
  ag::Var conv = ag::linear(stacked, p[lp + "ff.conv.w"], p[lp + "ff.conv.b"]);
  const Eigen::Index F = config_.feedforward_width;
  ag::Var gated = ag::hadamard(ag::gelu(ag::cols(conv, 0, F)), ag::cols(conv, F, F));
  ag::Var ff = ag::linear(gated, p[lp + "ff.out.w"], p[lp + "ff.out.b"]);
  ag::Var out = ag::add(x, ff);
  if (!out.value().allFinite())
    throw EvaluationFault("non-finite activation in block " + std::to_string(block) + " layer " + std::to_string(layer));
  return out;
}

std::pair<ag::Var, ag::Var> Denoiser::block(ag::Tape& tape, const Bound& p, const ag::Var& h, const ag::Var& cond,
                                            const ag::Var& step, int block) const {
  const std::string bp = block_prefix(block);
  const Eigen::Index W = config_.attention_width;
  ag::Var step_row = ag::linear(step, p[bp + "step.w"], p[bp + "step.b"]);
  ag::Var y = ag::add_row(h, step_row);
  for (int j = 0; j < config_.layers_per_block; ++j) y = layer(tape, p, y, block, j);
  ag::Var u = ag::add(ag::linear(y, p[bp + "gate.w"], p[bp + "gate.b"]),
                      ag::linear(cond, p[bp + "cond.w"], p[bp + "cond.b"]));
  ag::Var g = ag::hadamard(ag::tanh(ag::cols(u, 0, W)), ag::sigmoid(ag::cols(u, W, W)));
  ag::Var o = ag::linear(g, p[bp + "out.w"], p[bp + "out.b"]);
  ag::Var residual = ag::scale(ag::add(h, ag::cols(o, 0, W)), 1.0 / std::numbers::sqrt2);
  ag::Var skip = ag::cols(o, W, W);
  return {residual, skip};
}

ag::Var Denoiser::forward(ag::Tape& tape, const Matrix& x_n, const Matrix& cond, int n) const {
  check_inputs(x_n, cond);
  if (n < 1) throw ContractViolation("denoiser step index must be >= 1");
  const Bound p = bind(tape);
  ag::Var c = tape.constant(cond);
  ag::Var h = ag::linear(tape.constant(x_n), p["input.w"], p["input.b"]);
  ag::Var step = step_features(tape, p, n);
  ag::Var skip_sum;
  for (int l = 0; l < config_.n_blocks; ++l) {
    auto [residual, skip] = block(tape, p, h, c, step, l);
    h = residual;
    skip_sum = l == 0 ? skip : ag::add(skip_sum, skip);
  }
  ag::Var s = ag::scale(skip_sum, 1.0 / std::sqrt(double(config_.n_blocks)));
  ag::Var hidden = ag::gelu(ag::linear(s, p["head.fc1.w"], p["head.fc1.b"]));
  return ag::linear(hidden, p["head.fc2.w"], p["head.fc2.b"]);
}

Matrix Denoiser::predict(const Matrix& x_n, const Matrix& cond, int n) const {
  ag::Tape tape(false);
  return forward(tape, x_n, cond, n).value();
}

double Denoiser::tisa_bias(int block, int layer, int head, Eigen::Index t_query, Eigen::Index t_key,
                           Eigen::Index length) const {
  const Matrix& table = params_.at(layer_prefix(block, layer) + "attn.tisa");
  return table(head, tisa_column(t_query, t_key, length, config_.max_relative_distance, config_.circular));
}

Matrix Denoiser::layer_forward(const Matrix& h, int block, int layer_index) const {
  if (h.cols() != config_.attention_width) throw ContractViolation("hidden width differs from attention_width");
  ag::Tape tape(false);
  const Bound p = bind(tape);
  return layer(tape, p, tape.constant(h), block, layer_index).value();
}

std::pair<Matrix, Matrix> Denoiser::block_forward(const Matrix& h, const Matrix& cond, const RowVector& step,
                                                  int block_index) const {
  if (h.cols() != config_.attention_width) throw ContractViolation("hidden width differs from attention_width");
  ag::Tape tape(false);
  const Bound p = bind(tape);
  auto [r, s] = block(tape, p, tape.constant(h), tape.constant(cond), tape.constant(step), block_index);
  return {r.value(), s.value()};
}

RowVector Denoiser::step_features(int n) const {
  ag::Tape tape(false);
  const Bound p = bind(tape);
  return step_features(tape, p, n).value();
}

}  // namespace motiondiff
