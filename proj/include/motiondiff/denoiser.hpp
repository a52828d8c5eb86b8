#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "motiondiff/autograd.hpp"
#include "motiondiff/diffusion.hpp"

namespace motiondiff {

struct DenoiserConfig {
  int n_blocks = 10;
  int layers_per_block = 4;
  int dilation_cycle = 3;
  int n_heads = 8;
  int attention_width = 256;
  int feedforward_width = 1024;
  int input_dim = 0;
  int cond_dim = 0;
  int step_embed_dim = 128;
  int max_relative_distance = 32;
  // Wrap convolutions and attention offsets around the sequence ends. Test mode only.
  bool circular = false;

  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

enum class LayerMode { Transformer, Conformer };

struct BlockGeometry {
  double dilation_factor;  // 2^{(l mod cycle) - 1}
  LayerMode mode;
  int kernel;
  int dilation;
};

// Blocks with dilation factor below 1 run as Transformers (kernel 1).
BlockGeometry block_geometry(int block_index, int dilation_cycle);

// Interleaved sin/cos of n over a geometric frequency ladder from 1 down to 1e-4 rad/step.
RowVector step_embedding(double n, int dim);

// Column into a TISA table (width 2R+1) for the query/key pair. Non-circular offsets are
// clamped to [-R, R]; circular offsets are first wrapped into [-T/2, T/2).
Eigen::Index tisa_column(Eigen::Index t_query, Eigen::Index t_key, Eigen::Index length, int max_distance,
                         bool circular);

// Ordered, named weight collection. Iteration order is insertion order.
class DenoiserParams {
 public:
  void add(const std::string& name, Matrix value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  int slot(const std::string& name) const;

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Matrix& tensor(std::size_t i) { return tensors_[i]; }
  const Matrix& tensor(std::size_t i) const { return tensors_[i]; }
  std::size_t scalar_count() const;
  bool all_finite() const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> tensors_;
  std::map<std::string, int> index_;
};

// Names and shapes implied by a configuration, in canonical order.
std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> parameter_layout(
    const DenoiserConfig& config);

DenoiserParams init_params(const DenoiserConfig& config, std::uint64_t seed);

class Denoiser : public DifferentiableEpsilonModel {
 public:
  Denoiser(DenoiserConfig config, DenoiserParams params);

  const DenoiserConfig& config() const { return config_; }
  const DenoiserParams& params() const { return params_; }
  DenoiserParams& mutable_params() { return params_; }

  Eigen::Index output_dim() const override { return config_.input_dim; }
  int parameter_slots() const override { return static_cast<int>(params_.size()); }

  ag::Var forward(ag::Tape& tape, const Matrix& x_n, const Matrix& cond, int n) const override;
  Matrix predict(const Matrix& x_n, const Matrix& cond, int n) const override;

  // Learned bias added to the attention logit of (t_query, t_key) in one head.
  double tisa_bias(int block, int layer, int head, Eigen::Index t_query, Eigen::Index t_key,
                   Eigen::Index length) const;

  // Single Conformer/Transformer layer of `block` on hidden state h (T x W).
  Matrix layer_forward(const Matrix& h, int block, int layer) const;

  // Residual block; step_features is the 1 x W output of the step-embedding network.
  std::pair<Matrix, Matrix> block_forward(const Matrix& h, const Matrix& cond, const RowVector& step_features,
                                          int block) const;

  // 1 x W step features e(n) after the feedforward projection.
  RowVector step_features(int n) const;

 private:
  struct Bound;

  Bound bind(ag::Tape& tape) const;
  ag::Var step_features(ag::Tape& tape, const Bound& p, int n) const;
  ag::Var layer(ag::Tape& tape, const Bound& p, const ag::Var& h, int block, int layer) const;
  std::pair<ag::Var, ag::Var> block(ag::Tape& tape, const Bound& p, const ag::Var& h, const ag::Var& cond,
                                    const ag::Var& step, int block) const;
  void check_inputs(const Matrix& x_n, const Matrix& cond) const;

  DenoiserConfig config_;
  DenoiserParams params_;
};

}  // namespace motiondiff
