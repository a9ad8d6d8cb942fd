#include "pkode/numcore/diff_graph.hpp"

#include <cmath>
#include <string>

#include "pkode/numcore/errors.hpp"

namespace pkode::numcore {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                            shape_str(b));
  }
}

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const DiffGraph::Node& DiffGraph::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ContractViolation("DiffGraph: invalid variable handle");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var DiffGraph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var DiffGraph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var DiffGraph::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var DiffGraph::parameter(const ParameterStore& store, std::string_view name) {
  std::string key(name);
  if (auto it = params_.find(key); it != params_.end()) return Var{it->second};
  Node n;
  n.value = store.get(name);
  n.needs_grad = true;
  Var v = push(std::move(n));
  params_.emplace(std::move(key), v.id);
  return v;
}

const Matrix& DiffGraph::value(Var v) const { return node(v).value; }

Matrix DiffGraph::adjoint(Var v) const {
  const Node& n = node(v);
  if (n.adjoint.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.adjoint;
}

bool DiffGraph::requires_grad(Var v) const { return node(v).needs_grad; }

Var DiffGraph::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Node n;
  n.op = Op::Add;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.value = value(a) + value(b);
  return push(std::move(n));
}

Var DiffGraph::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Node n;
  n.op = Op::Sub;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.value = value(a) - value(b);
  return push(std::move(n));
}

Var DiffGraph::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Node n;
  n.op = Op::Mul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.value = value(a).cwiseProduct(value(b));
  return push(std::move(n));
}

Var DiffGraph::div(Var a, Var b) {
  require_same_shape(value(a), value(b), "div");
  Node n;
  n.op = Op::Div;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.value = value(a).cwiseQuotient(value(b));
  return push(std::move(n));
}

Var DiffGraph::add_row(Var a, Var row) {
  const Matrix& av = value(a);
  const Matrix& rv = value(row);
  require(rv.rows() == 1 && rv.cols() == av.cols(),
          "add_row: expected 1x" + std::to_string(av.cols()) + " row, got " + shape_str(rv));
  Node n;
  n.op = Op::AddRow;
  n.a = a.id;
  n.b = row.id;
  n.needs_grad = node(a).needs_grad || node(row).needs_grad;
  n.value = av.rowwise() + rv.row(0);
  return push(std::move(n));
}

Var DiffGraph::mul_row(Var a, Var row) {
  const Matrix& av = value(a);
  const Matrix& rv = value(row);
  require(rv.rows() == 1 && rv.cols() == av.cols(),
          "mul_row: expected 1x" + std::to_string(av.cols()) + " row, got " + shape_str(rv));
  Node n;
  n.op = Op::MulRow;
  n.a = a.id;
  n.b = row.id;
  n.needs_grad = node(a).needs_grad || node(row).needs_grad;
  n.value = av.array().rowwise() * rv.row(0).array();
  return push(std::move(n));
}

Var DiffGraph::mul_col(Var a, Var col) {
  const Matrix& av = value(a);
  const Matrix& cv = value(col);
  require(cv.cols() == 1 && cv.rows() == av.rows(),
          "mul_col: expected " + std::to_string(av.rows()) + "x1 column, got " + shape_str(cv));
  Node n;
  n.op = Op::MulCol;
  n.a = a.id;
  n.b = col.id;
  n.needs_grad = node(a).needs_grad || node(col).needs_grad;
  n.value = av.array().colwise() * cv.col(0).array();
  return push(std::move(n));
}

Var DiffGraph::scale(Var a, double s) {
  Node n;
  n.op = Op::Scale;
  n.a = a.id;
  n.scalar = s;
  n.needs_grad = node(a).needs_grad;
  n.value = value(a) * s;
  return push(std::move(n));
}

Var DiffGraph::add_scalar(Var a, double s) {
  Node n;
  n.op = Op::AddScalar;
  n.a = a.id;
  n.scalar = s;
  n.needs_grad = node(a).needs_grad;
  n.value = value(a).array() + s;
  return push(std::move(n));
}

Var DiffGraph::matmul(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  require(av.cols() == bv.rows(), "matmul: shape mismatch " + shape_str(av) + " * " + shape_str(bv));
  Node n;
  n.op = Op::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.value.noalias() = av * bv;
  return push(std::move(n));
}

Var DiffGraph::affine(Var x, Var w, Var bias) {
  const Matrix& xv = value(x);
  const Matrix& wv = value(w);
  const Matrix& bv = value(bias);
  require(xv.cols() == wv.rows(), "affine: shape mismatch " + shape_str(xv) + " * " + shape_str(wv));
  require(bv.rows() == 1 && bv.cols() == wv.cols(),
          "affine: bias must be 1x" + std::to_string(wv.cols()) + ", got " + shape_str(bv));
  Node n;
  n.op = Op::Affine;
  n.a = x.id;
  n.b = w.id;
  n.c = bias.id;
  n.needs_grad = node(x).needs_grad || node(w).needs_grad || node(bias).needs_grad;
  n.value.noalias() = xv * wv;
  n.value.rowwise() += bv.row(0);
  return push(std::move(n));
}

Var DiffGraph::tanh(Var a) {
  Node n;
  n.op = Op::Tanh;
  n.a = a.id;
  n.needs_grad = node(a).needs_grad;
  n.value = value(a).array().tanh();
  return push(std::move(n));
}

Var DiffGraph::sigmoid(Var a) {
  Node n;
  n.op = Op::Sigmoid;
  n.a = a.id;
  n.needs_grad = node(a).needs_grad;
  n.value = value(a).unaryExpr(&sigmoid_scalar);
  return push(std::move(n));
}

Var DiffGraph::exp(Var a) {
  Node n;
  n.op = Op::Exp;
  n.a = a.id;
  n.needs_grad = node(a).needs_grad;
  n.value = value(a).array().exp();
  return push(std::move(n));
}

Var DiffGraph::log(Var a) {
  Node n;
  n.op = Op::Log;
  n.a = a.id;
  n.needs_grad = node(a).needs_grad;
  n.value = value(a).array().log();
  return push(std::move(n));
}

Var DiffGraph::softplus(Var a) {
  Node n;
  n.op = Op::Softplus;
  n.a = a.id;
  n.needs_grad = node(a).needs_grad;
  n.value = value(a).unaryExpr(&softplus_scalar);
  return push(std::move(n));
}

Var DiffGraph::square(Var a) {
  Node n;
  n.op = Op::Square;
  n.a = a.id;
  n.needs_grad = node(a).needs_grad;
  n.value = value(a).array().square();
  return push(std::move(n));
}

Var DiffGraph::sum(Var a) {
  Node n;
  n.op = Op::Sum;
  n.a = a.id;
  n.needs_grad = node(a).needs_grad;
  n.value = Matrix::Constant(1, 1, value(a).sum());
  return push(std::move(n));
}

Var DiffGraph::row_sum(Var a) {
  Node n;
  n.op = Op::RowSum;
  n.a = a.id;
  n.needs_grad = node(a).needs_grad;
  n.value = value(a).rowwise().sum();
  return push(std::move(n));
}

Var DiffGraph::row_logsumexp(Var a) {
  const Matrix& av = value(a);
  require(av.cols() >= 1, "row_logsumexp: empty rows");
  Node n;
  n.op = Op::RowLogSumExp;
  n.a = a.id;
  n.needs_grad = node(a).needs_grad;
  const Vector m = av.rowwise().maxCoeff();
  const Vector s = (av.colwise() - m).array().exp().rowwise().sum();
  n.value = m.array() + s.array().log();
  return push(std::move(n));
}

Var DiffGraph::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  Node n;
  n.op = Op::Concat;
  for (Var p : parts) {
    const Matrix& pv = value(p);
    require(pv.rows() == rows, "concat_cols: row mismatch " + shape_str(pv));
    cols += pv.cols();
    n.many.push_back(p.id);
    n.needs_grad = n.needs_grad || node(p).needs_grad;
  }
  n.value.resize(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    const Matrix& pv = value(p);
    n.value.middleCols(at, pv.cols()) = pv;
    at += pv.cols();
  }
  return push(std::move(n));
}

Var DiffGraph::slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  const Matrix& av = value(a);
  require(start >= 0 && count >= 0 && start + count <= av.cols(),
          "slice_cols: range out of bounds for " + shape_str(av));
  Node n;
  n.op = Op::Slice;
  n.a = a.id;
  n.i0 = start;
  n.i1 = count;
  n.needs_grad = node(a).needs_grad;
  n.value = av.middleCols(start, count);
  return push(std::move(n));
}

Var DiffGraph::weighted_sum(std::span<const Var> terms, std::span<const double> coeffs) {
  require(!terms.empty() && terms.size() == coeffs.size(), "weighted_sum: bad arity");
  Node n;
  n.op = Op::WeightedSum;
  n.value = coeffs[0] * value(terms[0]);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i > 0) {
      require_same_shape(value(terms[0]), value(terms[i]), "weighted_sum");
      n.value += coeffs[i] * value(terms[i]);
    }
    n.many.push_back(terms[i].id);
    n.needs_grad = n.needs_grad || node(terms[i]).needs_grad;
  }
  n.coeffs.assign(coeffs.begin(), coeffs.end());
  return push(std::move(n));
}

void DiffGraph::accumulate(std::int32_t id, const Matrix& contribution) {
  accumulate_expr(id, contribution);
}

template <class Expr>
void DiffGraph::accumulate_expr(std::int32_t id, const Expr& contribution) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return;
  if (n.adjoint.size() == 0) {
    n.adjoint = contribution;
  } else {
    n.adjoint += contribution;
  }
}

void DiffGraph::backprop_node(const Node& n) {
  const Matrix& g = n.adjoint;
  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Add:
      accumulate(n.a, g);
      accumulate(n.b, g);
      break;
    case Op::Sub:
      accumulate(n.a, g);
      accumulate_expr(n.b, -g);
      break;
    case Op::Mul:
      accumulate_expr(n.a, g.cwiseProduct(nodes_[n.b].value));
      accumulate_expr(n.b, g.cwiseProduct(nodes_[n.a].value));
      break;
    case Op::Div: {
      const Matrix& bv = nodes_[n.b].value;
      accumulate_expr(n.a, g.cwiseQuotient(bv));
      accumulate_expr(n.b, -(g.cwiseProduct(n.value)).cwiseQuotient(bv));
      break;
    }
    case Op::AddRow:
      accumulate(n.a, g);
      accumulate_expr(n.b, g.colwise().sum());
      break;
    case Op::MulRow:
      accumulate_expr(n.a, Matrix(g.array().rowwise() * nodes_[n.b].value.row(0).array()));
      accumulate_expr(n.b, g.cwiseProduct(nodes_[n.a].value).colwise().sum());
      break;
    case Op::MulCol:
      accumulate_expr(n.a, Matrix(g.array().colwise() * nodes_[n.b].value.col(0).array()));
      accumulate_expr(n.b, g.cwiseProduct(nodes_[n.a].value).rowwise().sum());
      break;
    case Op::Scale:
      accumulate_expr(n.a, n.scalar * g);
      break;
    case Op::AddScalar:
      accumulate(n.a, g);
      break;
    case Op::MatMul:
      if (nodes_[n.a].needs_grad) accumulate_expr(n.a, g * nodes_[n.b].value.transpose());
      if (nodes_[n.b].needs_grad) accumulate_expr(n.b, nodes_[n.a].value.transpose() * g);
      break;
    case Op::Affine:
      if (nodes_[n.a].needs_grad) accumulate_expr(n.a, g * nodes_[n.b].value.transpose());
      if (nodes_[n.b].needs_grad) accumulate_expr(n.b, nodes_[n.a].value.transpose() * g);
      accumulate_expr(n.c, g.colwise().sum());
      break;
    case Op::Tanh:
      accumulate_expr(n.a, Matrix(g.array() * (1.0 - n.value.array().square())));
      break;
    case Op::Sigmoid:
      accumulate_expr(n.a, Matrix(g.array() * n.value.array() * (1.0 - n.value.array())));
      break;
    case Op::Exp:
      accumulate_expr(n.a, g.cwiseProduct(n.value));
      break;
    case Op::Log:
      accumulate_expr(n.a, g.cwiseQuotient(nodes_[n.a].value));
      break;
    case Op::Softplus:
      accumulate_expr(n.a, g.cwiseProduct(nodes_[n.a].value.unaryExpr(&sigmoid_scalar)));
      break;
    case Op::Square:
      accumulate_expr(n.a, 2.0 * g.cwiseProduct(nodes_[n.a].value));
      break;
    case Op::Sum: {
      const Matrix& av = nodes_[n.a].value;
      accumulate_expr(n.a, Matrix::Constant(av.rows(), av.cols(), g(0, 0)));
      break;
    }
    case Op::RowSum:
      accumulate_expr(n.a, g.replicate(1, nodes_[n.a].value.cols()));
      break;
    case Op::RowLogSumExp: {
      const Matrix& av = nodes_[n.a].value;
      Matrix soft = (av.colwise() - n.value.col(0)).array().exp();
      soft.array().colwise() *= g.col(0).array();
      accumulate_expr(n.a, soft);
      break;
    }
    case Op::Concat: {
      Eigen::Index at = 0;
      for (std::int32_t id : n.many) {
        const Eigen::Index cols = nodes_[id].value.cols();
        accumulate_expr(id, g.middleCols(at, cols));
        at += cols;
      }
      break;
    }
    case Op::Slice: {
      Node& src = nodes_[n.a];
      if (!src.needs_grad) break;
      if (src.adjoint.size() == 0) src.adjoint = Matrix::Zero(src.value.rows(), src.value.cols());
      src.adjoint.middleCols(n.i0, n.i1) += g;
      break;
    }
    case Op::WeightedSum:
      for (std::size_t i = 0; i < n.many.size(); ++i) accumulate_expr(n.many[i], n.coeffs[i] * g);
      break;
  }
}

void DiffGraph::backward(Var output) {
  const Node& out = node(output);
  if (out.value.rows() != 1 || out.value.cols() != 1) {
    throw ContractViolation("backward: output must be a scalar (1x1) node, got " +
                            shape_str(out.value));
  }
  for (Node& n : nodes_) n.adjoint.resize(0, 0);
  nodes_[output.id].adjoint = Matrix::Ones(1, 1);
  for (std::int32_t id = output.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.adjoint.size() == 0 || n.op == Op::Leaf) continue;
    backprop_node(n);
  }
}

std::map<std::string, Matrix> gradient(DiffGraph& graph, Var output, const ParameterStore& params) {
  graph.backward(output);
  std::map<std::string, Matrix> grads;
  const auto& bound = graph.parameter_nodes();
  for (const auto& entry : params.entries()) {
    if (auto it = bound.find(entry.name); it != bound.end()) {
      grads.emplace(entry.name, graph.adjoint(Var{it->second}));
    } else {
      grads.emplace(entry.name, Matrix::Zero(entry.value.rows(), entry.value.cols()));
    }
  }
  return grads;
}

}  // namespace pkode::numcore
