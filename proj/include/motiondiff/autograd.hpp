#pragma once

// Minimal reverse-mode differentiation over dense row=time, col=channel matrices.
// Every op records a closure on the owning Tape; Tape::backward replays them in
// reverse creation order. Tapes created with recording disabled only compute values.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace motiondiff::ag {

using Matrix = Eigen::MatrixXd;
using IndexMatrix = Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic>;

class Tape;

struct Node {
  Matrix value;
  const Matrix* external = nullptr;  // parameter leaves alias caller storage
  Matrix grad;                       // empty until something flows in
  bool needs_grad = false;
  int param_slot = -1;
  std::function<void(Node&)> backward;

  const Matrix& val() const { return external ? *external : value; }
  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::shared_ptr<Node> node) : tape_(tape), node_(std::move(node)) {}

  const Matrix& value() const { return node_->val(); }
  const Matrix& grad() const { return node_->grad; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  Tape* tape_ = nullptr;
  std::shared_ptr<Node> node_;
};

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix m);
  // Leaf whose gradient is reported under `slot`. The matrix must outlive the tape.
  Var param(const Matrix& m, int slot);

  // Output node for an op. `parents` decide whether a gradient is needed.
  Var make(Matrix value, std::initializer_list<const Var*> parents,
           std::function<void(Node&)> backward);

  // Seeds d(root)/d(root) = 1; root must be 1x1.
  void backward(const Var& root);

  // Visits (slot, grad) for every parameter leaf that received a gradient.
  void for_each_param_grad(const std::function<void(int, const Matrix&)>& fn) const;

 private:
  bool record_;
  std::vector<std::shared_ptr<Node>> nodes_;
  std::vector<std::shared_ptr<Node>> params_;
};

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// a (T x n) + row (1 x n) broadcast over rows
Var add_row(const Var& a, const Var& row);
// Repeats a 1 x n row T times.
Var repeat_rows(const Var& row, Eigen::Index times);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
// Exact (erf) GELU.
Var gelu(const Var& a);
Var layer_norm_rows(const Var& a, const Var& gain, const Var& offset, double eps = 1e-5);
Var softmax_rows(const Var& a);
Var cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var hcat(std::span<const Var> parts);
// out.row(t) = a.row(t - shift); rows shifted in from outside are zero unless circular.
Var time_shift(const Var& a, Eigen::Index shift, bool circular);
// out(i, j) = table(row, index(i, j))
Var gather_row(const Var& table, Eigen::Index row, const IndexMatrix& index);
// mean((a - target)^2) as a 1x1 value
Var mean_squared_error(const Var& a, const Matrix& target);

inline Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

}  // namespace motiondiff::ag
