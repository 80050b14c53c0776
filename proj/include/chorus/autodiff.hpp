#pragma once

// Define-by-run reverse-mode differentiation over dense matrices.
//
// A Graph is a tape: every operation appends one Node whose value is computed
// eagerly. backward() walks the tape in reverse creation order, which is a
// valid reverse topological order because parents always precede children.
// Rows are samples and columns are features throughout; a "scalar" is a 1x1
// matrix.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace chorus::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A trainable array. The graph never owns parameters; leaf nodes created by
// Graph::parameter() add their gradient into `grad` during backward().
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

enum class Op {
  kConstant,
  kParameter,
  kMatMul,
  kAddBias,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kReciprocal,
  kRelu,
  kSigmoid,
  kLog,
  kClamp,
  kBce,
  kGatherRows,
  kConcatCols,
  kWeightedSum,
  kSum,
  kStopGradient,
};

const char* op_name(Op op);

struct Node {
  Matrix value;
  Matrix grad;  // sized and zeroed by Graph::backward()
  Op op = Op::kConstant;
  std::vector<std::size_t> parents;
  bool grad_blocked = false;

  // Op payloads; only the fields relevant to `op` are populated.
  double scalar = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<Eigen::Index> indices;
  Vector coeffs;
  Parameter* param = nullptr;
};

class Graph;

// Lightweight handle to a node on a graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  const Node& node() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  Var scalar_constant(double value);
  // Leaf bound to `p`; backward() accumulates into p.grad.
  Var parameter(Parameter& p);

  // Appends a node; used by the free-function operations below.
  Var push(Node node);

  // Propagates d(root)/d(node) to every reachable node and accumulates the
  // result into the bound parameters. Root must be 1x1.
  void backward(Var root);

  const Node& node(std::size_t id) const { return nodes_[id]; }
  Node& node(std::size_t id) { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

 private:
  void propagate(std::size_t id);

  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
// Adds a 1 x cols row vector to every row of `a`.
Var add_bias(Var a, Var bias);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var one_minus(Var a);
Var reciprocal(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var log(Var a);
// Elementwise clamp into [lo, hi]; gradient passes only where lo < x < hi.
Var clamp(Var a, double lo, double hi);
// Elementwise -[y ln p + (1-y) ln(1-p)]. Both operands receive gradient;
// wrap `y` in stop_gradient() to treat it as a label.
Var bce(Var p, Var y);
Var gather_rows(Var table, std::span<const Eigen::Index> rows);
Var concat_cols(std::span<const Var> parts);
// Scalar sum_i c_i * a_i over a column vector.
Var weighted_sum(Var a, const Vector& coeffs);
Var sum(Var a);
Var mean(Var a);
// Identity on values; blocks all gradient to its input.
Var stop_gradient(Var a);

}  // namespace chorus::ad
