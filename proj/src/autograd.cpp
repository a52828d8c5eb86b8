#include "motiondiff/autograd.hpp"

#include <cmath>
#include <numbers>

#include "motiondiff/errors.hpp"

namespace motiondiff::ag {

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0)
    grad = g;
  else
    grad += g;
}

Var Tape::constant(Matrix m) {
  auto node = std::make_shared<Node>();
  node->value = std::move(m);
  return Var(this, std::move(node));
}

Var Tape::param(const Matrix& m, int slot) {
  auto node = std::make_shared<Node>();
  node->external = &m;
  node->needs_grad = record_;
  node->param_slot = slot;
  if (record_) params_.push_back(node);
  return Var(this, std::move(node));
}

Var Tape::make(Matrix value, std::initializer_list<const Var*> parents,
               std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (record_) {
    for (const Var* p : parents) node->needs_grad = node->needs_grad || p->node()->needs_grad;
    if (node->needs_grad) {
      node->backward = std::move(backward);
      nodes_.push_back(node);
    }
  }
  return Var(this, std::move(node));
}

void Tape::backward(const Var& root) {
  if (!record_) throw ContractViolation("backward on a non-recording tape");
  if (root.rows() != 1 || root.cols() != 1) throw ContractViolation("backward root must be 1x1");
  root.node()->grad = Matrix::Ones(1, 1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.grad.size() != 0 && n.backward) n.backward(n);
  }
}

void Tape::for_each_param_grad(const std::function<void(int, const Matrix&)>& fn) const {
  for (const auto& p : params_)
    if (p->grad.size() != 0) fn(p->param_slot, p->grad);
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractViolation(std::string(op) + ": shape mismatch");
}

void push(const std::shared_ptr<Node>& parent, const Matrix& g) {
  if (parent->needs_grad) parent->accumulate(g);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ContractViolation("matmul: inner dimension mismatch");
  Matrix out;
  out.noalias() = a.value() * b.value();
  auto pa = a.node(), pb = b.node();
  return a.tape()->make(std::move(out), {&a, &b}, [pa, pb](Node& n) {
    if (pa->needs_grad) pa->accumulate(n.grad * pb->val().transpose());
    if (pb->needs_grad) pb->accumulate(pa->val().transpose() * n.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw ContractViolation("matmul_nt: inner dimension mismatch");
  Matrix out;
  out.noalias() = a.value() * b.value().transpose();
  auto pa = a.node(), pb = b.node();
  return a.tape()->make(std::move(out), {&a, &b}, [pa, pb](Node& n) {
    if (pa->needs_grad) pa->accumulate(n.grad * pb->val());
    if (pb->needs_grad) pb->accumulate(n.grad.transpose() * pa->val());
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  auto pa = a.node(), pb = b.node();
  return a.tape()->make(a.value() + b.value(), {&a, &b}, [pa, pb](Node& n) {
    push(pa, n.grad);
    push(pb, n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  auto pa = a.node(), pb = b.node();
  return a.tape()->make(a.value() - b.value(), {&a, &b}, [pa, pb](Node& n) {
    push(pa, n.grad);
    if (pb->needs_grad) pb->accumulate(-n.grad);
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape(a, b, "hadamard");
  auto pa = a.node(), pb = b.node();
  return a.tape()->make(a.value().cwiseProduct(b.value()), {&a, &b}, [pa, pb](Node& n) {
    if (pa->needs_grad) pa->accumulate(n.grad.cwiseProduct(pb->val()));
    if (pb->needs_grad) pb->accumulate(n.grad.cwiseProduct(pa->val()));
  });
}

Var scale(const Var& a, double s) {
  auto pa = a.node();
  return a.tape()->make(a.value() * s, {&a}, [pa, s](Node& n) { push(pa, n.grad * s); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ContractViolation("add_row: shape mismatch");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  auto pa = a.node(), pr = row.node();
  return a.tape()->make(std::move(out), {&a, &row}, [pa, pr](Node& n) {
    push(pa, n.grad);
    if (pr->needs_grad) pr->accumulate(n.grad.colwise().sum());
  });
}

Var repeat_rows(const Var& row, Eigen::Index times) {
  if (row.rows() != 1) throw ContractViolation("repeat_rows: expects a single row");
  Matrix out = row.value().replicate(times, 1);
  auto pr = row.node();
  return row.tape()->make(std::move(out), {&row}, [pr](Node& n) {
    if (pr->needs_grad) pr->accumulate(n.grad.colwise().sum());
  });
}

Var tanh(const Var& a) {
  Matrix out = a.value().array().tanh().matrix();
  auto pa = a.node();
  return a.tape()->make(std::move(out), {&a}, [pa](Node& n) {
    if (pa->needs_grad)
      pa->accumulate((n.grad.array() * (1.0 - n.value.array().square())).matrix());
  });
}

Var sigmoid(const Var& a) {
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  auto pa = a.node();
  return a.tape()->make(std::move(out), {&a}, [pa](Node& n) {
    if (pa->needs_grad)
      pa->accumulate((n.grad.array() * n.value.array() * (1.0 - n.value.array())).matrix());
  });
}

Var gelu(const Var& a) {
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix out = a.value().unaryExpr([inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  auto pa = a.node();
  return a.tape()->make(std::move(out), {&a}, [pa, inv_sqrt2](Node& n) {
    if (!pa->needs_grad) return;
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    Matrix d = pa->val().unaryExpr([&](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    pa->accumulate(n.grad.cwiseProduct(d));
  });
}

Var layer_norm_rows(const Var& a, const Var& gain, const Var& offset, double eps) {
  const Matrix& x = a.value();
  const Eigen::Index width = x.cols();
  if (gain.rows() != 1 || gain.cols() != width || offset.rows() != 1 || offset.cols() != width)
    throw ContractViolation("layer_norm_rows: gain/offset shape mismatch");
  Eigen::VectorXd mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / double(width)) + eps).rsqrt().matrix();
  Matrix normed = centered.array().colwise() * inv_std.array();
  Matrix out = normed.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += offset.value().row(0);
  auto pa = a.node(), pg = gain.node(), pb = offset.node();
  return a.tape()->make(std::move(out), {&a, &gain, &offset},
                        [pa, pg, pb, normed = std::move(normed), inv_std, width](Node& n) {
    if (pg->needs_grad) pg->accumulate(n.grad.cwiseProduct(normed).colwise().sum());
    if (pb->needs_grad) pb->accumulate(n.grad.colwise().sum());
    if (!pa->needs_grad) return;
    Matrix dn = n.grad.array().rowwise() * pg->val().row(0).array();
    Eigen::VectorXd mean_dn = dn.rowwise().mean();
    Eigen::VectorXd mean_dn_n = dn.cwiseProduct(normed).rowwise().sum() / double(width);
    Matrix dx = dn.colwise() - mean_dn;
    dx -= (normed.array().colwise() * mean_dn_n.array()).matrix();
    dx = dx.array().colwise() * inv_std.array();
    pa->accumulate(dx);
  });
}

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  auto pa = a.node();
  return a.tape()->make(std::move(out), {&a}, [pa](Node& n) {
    if (!pa->needs_grad) return;
    Eigen::VectorXd dot = n.grad.cwiseProduct(n.value).rowwise().sum();
    Matrix d = (n.grad.colwise() - dot).cwiseProduct(n.value);
    pa->accumulate(d);
  });
}

Var cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ContractViolation("cols: range out of bounds");
  Matrix out = a.value().middleCols(start, count);
  auto pa = a.node();
  const Eigen::Index rows = a.rows(), total = a.cols();
  return a.tape()->make(std::move(out), {&a}, [pa, start, count, rows, total](Node& n) {
    if (!pa->needs_grad) return;
    Matrix g = Matrix::Zero(rows, total);
    g.middleCols(start, count) = n.grad;
    pa->accumulate(g);
  });
}

Var hcat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("hcat: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ContractViolation("hcat: row count mismatch");
    total += p.cols();
  }
  Matrix out(rows, total);
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<Eigen::Index> widths;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    nodes.push_back(p.node());
    widths.push_back(p.cols());
  }
  // make() only inspects parents for needs_grad; pass the first that needs it.
  const Var* marker = &parts[0];
  for (const Var& p : parts)
    if (p.node()->needs_grad) marker = &p;
  return parts[0].tape()->make(std::move(out), {marker}, [nodes, widths](Node& n) {
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->needs_grad) nodes[k]->accumulate(n.grad.middleCols(off, widths[k]));
      off += widths[k];
    }
  });
}

Var time_shift(const Var& a, Eigen::Index shift, bool circular) {
  const Matrix& x = a.value();
  const Eigen::Index T = x.rows();
  Matrix out = Matrix::Zero(T, x.cols());
  auto source = [T, shift, circular](Eigen::Index t) -> Eigen::Index {
    Eigen::Index s = t - shift;
    if (circular) return ((s % T) + T) % T;
    return (s >= 0 && s < T) ? s : -1;
  };
  for (Eigen::Index t = 0; t < T; ++t) {
    const Eigen::Index s = source(t);
    if (s >= 0) out.row(t) = x.row(s);
  }
  auto pa = a.node();
  return a.tape()->make(std::move(out), {&a}, [pa, source, T](Node& n) {
    if (!pa->needs_grad) return;
    Matrix g = Matrix::Zero(T, n.grad.cols());
    for (Eigen::Index t = 0; t < T; ++t) {
      const Eigen::Index s = source(t);
      if (s >= 0) g.row(s) += n.grad.row(t);
    }
    pa->accumulate(g);
  });
}

Var gather_row(const Var& table, Eigen::Index row, const IndexMatrix& index) {
  const Matrix& tab = table.value();
  if (row < 0 || row >= tab.rows()) throw ContractViolation("gather_row: row out of range");
  Matrix out(index.rows(), index.cols());
  for (Eigen::Index j = 0; j < index.cols(); ++j)
    for (Eigen::Index i = 0; i < index.rows(); ++i) out(i, j) = tab(row, index(i, j));
  auto pt = table.node();
  return table.tape()->make(std::move(out), {&table}, [pt, row, index](Node& n) {
    if (!pt->needs_grad) return;
    Matrix g = Matrix::Zero(pt->val().rows(), pt->val().cols());
    for (Eigen::Index j = 0; j < index.cols(); ++j)
      for (Eigen::Index i = 0; i < index.rows(); ++i) g(row, index(i, j)) += n.grad(i, j);
    pt->accumulate(g);
  });
}

Var mean_squared_error(const Var& a, const Matrix& target) {
  if (a.rows() != target.rows() || a.cols() != target.cols())
    throw ContractViolation("mean_squared_error: shape mismatch");
  Matrix diff = a.value() - target;
  const double count = double(diff.size());
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / count;
  auto pa = a.node();
  return a.tape()->make(std::move(out), {&a}, [pa, diff = std::move(diff), count](Node& n) {
    if (pa->needs_grad) pa->accumulate(diff * (2.0 * n.grad(0, 0) / count));
  });
}

}  // namespace motiondiff::ag
