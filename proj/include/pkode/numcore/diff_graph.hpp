#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pkode/numcore/parameter_store.hpp"

namespace pkode::numcore {

/// Handle to a node of a DiffGraph. Cheap to copy; only meaningful for the
/// graph that created it.
struct Var {
  std::int32_t id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode tape over dense 2-D arrays. Rows conventionally index the
/// batch, columns the features. Nodes are appended in evaluation order, so the
/// node list is always topologically sorted.
///
/// A graph is single-writer. Build one per thread.
class DiffGraph {
 public:
  enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddRow,
    MulRow,
    MulCol,
    Scale,
    AddScalar,
    MatMul,
    Affine,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softplus,
    Square,
    Sum,
    RowSum,
    RowLogSumExp,
    Concat,
    Slice,
    WeightedSum,
  };

  DiffGraph() = default;
  DiffGraph(const DiffGraph&) = delete;
  DiffGraph& operator=(const DiffGraph&) = delete;
  DiffGraph(DiffGraph&&) = default;
  DiffGraph& operator=(DiffGraph&&) = default;

  Var constant(Matrix value);
  Var constant(double value);
  /// Leaf bound to a store entry. Repeated calls with the same name return
  /// the same node so gradients accumulate in one place.
  Var parameter(const ParameterStore& store, std::string_view name);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  /// a (r x c) + row (1 x c), broadcast down the rows.
  Var add_row(Var a, Var row);
  Var mul_row(Var a, Var row);
  /// a (r x c) * col (r x 1), broadcast across the columns.
  Var mul_col(Var a, Var col);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var matmul(Var a, Var b);
  /// x * w + bias, bias broadcast as a row.
  Var affine(Var x, Var w, Var bias);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var softplus(Var a);
  Var square(Var a);
  Var sum(Var a);
  Var row_sum(Var a);
  Var row_logsumexp(Var a);
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
  /// sum_i coeffs[i] * terms[i]; all terms share one shape.
  Var weighted_sum(std::span<const Var> terms, std::span<const double> coeffs);

  const Matrix& value(Var v) const;
  /// Adjoint after backward(); a zero array of the value's shape if the node
  /// was not reached.
  Matrix adjoint(Var v) const;

  /// Propagates d(output)/d(node) to every node. Throws ContractViolation if
  /// the output is not 1x1.
  void backward(Var output);

  std::size_t node_count() const noexcept { return nodes_.size(); }
  bool requires_grad(Var v) const;

  /// Names of parameter leaves recorded on this graph, with their node ids.
  const std::unordered_map<std::string, std::int32_t>& parameter_nodes() const noexcept {
    return params_;
  }

 private:
  struct Node {
    Op op = Op::Leaf;
    bool needs_grad = false;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::int32_t c = -1;
    double scalar = 0.0;
    Eigen::Index i0 = 0;
    Eigen::Index i1 = 0;
    std::vector<std::int32_t> many;
    std::vector<double> coeffs;
    Matrix value;
    Matrix adjoint;
  };

  const Node& node(Var v) const;
  Var push(Node n);
  void accumulate(std::int32_t id, const Matrix& contribution);
  template <class Expr>
  void accumulate_expr(std::int32_t id, const Expr& contribution);
  void backprop_node(const Node& n);

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::int32_t> params_;
};

/// d(output)/d(entry) for every entry of `params`; entries not reached by the
/// output get zero arrays. Runs backward() on the graph.
std::map<std::string, Matrix> gradient(DiffGraph& graph, Var output, const ParameterStore& params);

}  // namespace pkode::numcore
