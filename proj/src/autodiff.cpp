#include "chorus/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace chorus::ad {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_graph(Var a, Var b, const char* what) {
  if (a.graph() != b.graph() || a.graph() == nullptr) {
    throw std::invalid_argument(std::string(what) + ": operands belong to different graphs");
  }
}

void require_same_shape(Var a, Var b, const char* what) {
  require_same_graph(a, b, what);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
}

Node unary(Op op, Var a, Matrix value) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.parents = {a.id()};
  return n;
}

Node binary(Op op, Var a, Var b, Matrix value) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.parents = {a.id(), b.id()};
  return n;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kMatMul: return "matmul";
    case Op::kAddBias: return "add_bias";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kReciprocal: return "reciprocal";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kLog: return "log";
    case Op::kClamp: return "clamp";
    case Op::kBce: return "bce";
    case Op::kGatherRows: return "gather_rows";
    case Op::kConcatCols: return "concat_cols";
    case Op::kWeightedSum: return "weighted_sum";
    case Op::kSum: return "sum";
    case Op::kStopGradient: return "stop_gradient";
  }
  return "unknown";
}

const Node& Var::node() const { return graph_->node(id_); }
const Matrix& Var::value() const { return node().value; }
const Matrix& Var::grad() const { return node().grad; }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar(): node is " + shape_str(v));
  return v(0, 0);
}

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Matrix value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::scalar_constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Graph::parameter(Parameter& p) {
  Node n;
  n.op = Op::kParameter;
  n.value = p.value;
  n.param = &p;
  return push(std::move(n));
}

void Graph::backward(Var root) {
  if (root.graph() != this) throw std::invalid_argument("backward: root belongs to another graph");
  if (root.value().size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_str(root.value()));
  }
  for (std::size_t i = 0; i <= root.id(); ++i) {
    Node& n = nodes_[i];
    n.grad.setZero(n.value.rows(), n.value.cols());
  }
  nodes_[root.id()].grad(0, 0) = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) propagate(i);
}

void Graph::propagate(std::size_t id) {
  Node& n = nodes_[id];
  if (n.op == Op::kParameter) {
    n.param->grad += n.grad;
    return;
  }
  if (n.grad_blocked || n.parents.empty()) return;

  const Matrix& g = n.grad;
  auto parent = [&](std::size_t k) -> Node& { return nodes_[n.parents[k]]; };

  switch (n.op) {
    case Op::kConstant:
    case Op::kParameter:
    case Op::kStopGradient:
      break;
    case Op::kMatMul: {
      Node& a = parent(0);
      Node& b = parent(1);
      a.grad.noalias() += g * b.value.transpose();
      b.grad.noalias() += a.value.transpose() * g;
      break;
    }
    case Op::kAddBias:
      parent(0).grad += g;
      parent(1).grad += g.colwise().sum();
      break;
    case Op::kAdd:
      parent(0).grad += g;
      parent(1).grad += g;
      break;
    case Op::kSub:
      parent(0).grad += g;
      parent(1).grad -= g;
      break;
    case Op::kMul: {
      Node& a = parent(0);
      Node& b = parent(1);
      a.grad.array() += g.array() * b.value.array();
      b.grad.array() += g.array() * a.value.array();
      break;
    }
    case Op::kDiv: {
      Node& a = parent(0);
      Node& b = parent(1);
      a.grad.array() += g.array() / b.value.array();
      b.grad.array() -= g.array() * a.value.array() / b.value.array().square();
      break;
    }
    case Op::kScale:
      parent(0).grad += n.scalar * g;
      break;
    case Op::kAddScalar:
      parent(0).grad += g;
      break;
    case Op::kReciprocal:
      parent(0).grad.array() -= g.array() * n.value.array().square();
      break;
    case Op::kRelu:
      parent(0).grad.array() += (parent(0).value.array() > 0.0).select(g.array(), 0.0);
      break;
    case Op::kSigmoid:
      parent(0).grad.array() += g.array() * n.value.array() * (1.0 - n.value.array());
      break;
    case Op::kLog:
      parent(0).grad.array() += g.array() / parent(0).value.array();
      break;
    case Op::kClamp: {
      const auto x = parent(0).value.array();
      parent(0).grad.array() += (x > n.lo && x < n.hi).select(g.array(), 0.0);
      break;
    }
    case Op::kBce: {
      Node& p = parent(0);
      Node& y = parent(1);
      const auto pv = p.value.array();
      const auto yv = y.value.array();
      // d/dp = (p - y) / (p (1 - p)); d/dy = ln(1-p) - ln(p)
      p.grad.array() += g.array() * (pv - yv) / (pv * (1.0 - pv));
      y.grad.array() += g.array() * ((1.0 - pv).log() - pv.log());
      break;
    }
    case Op::kGatherRows: {
      Node& table = parent(0);
      for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n.indices.size()); ++i) {
        table.grad.row(n.indices[static_cast<std::size_t>(i)]) += g.row(i);
      }
      break;
    }
    case Op::kConcatCols: {
      Eigen::Index offset = 0;
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        Node& part = parent(k);
        part.grad += g.middleCols(offset, part.value.cols());
        offset += part.value.cols();
      }
      break;
    }
    case Op::kWeightedSum:
      parent(0).grad.col(0) += g(0, 0) * n.coeffs;
      break;
    case Op::kSum:
      parent(0).grad.array() += g(0, 0);
      break;
  }
}

Var matmul(Var a, Var b) {
  require_same_graph(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.value()) + " * " +
                     shape_str(b.value()));
  }
  Matrix v = a.value() * b.value();
  return a.graph()->push(binary(Op::kMatMul, a, b, std::move(v)));
}

Var add_bias(Var a, Var bias) {
  require_same_graph(a, bias, "add_bias");
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_bias: bias " + shape_str(bias.value()) + " does not fit " +
                     shape_str(a.value()));
  }
  Matrix v = a.value().rowwise() + bias.value().row(0);
  return a.graph()->push(binary(Op::kAddBias, a, bias, std::move(v)));
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  return a.graph()->push(binary(Op::kAdd, a, b, a.value() + b.value()));
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return a.graph()->push(binary(Op::kSub, a, b, a.value() - b.value()));
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  return a.graph()->push(binary(Op::kMul, a, b, a.value().cwiseProduct(b.value())));
}

Var div(Var a, Var b) {
  require_same_shape(a, b, "div");
  return a.graph()->push(binary(Op::kDiv, a, b, a.value().cwiseQuotient(b.value())));
}

Var scale(Var a, double c) {
  Node n = unary(Op::kScale, a, c * a.value());
  n.scalar = c;
  return a.graph()->push(std::move(n));
}

Var add_scalar(Var a, double c) {
  Node n = unary(Op::kAddScalar, a, (a.value().array() + c).matrix());
  n.scalar = c;
  return a.graph()->push(std::move(n));
}

Var one_minus(Var a) { return add_scalar(scale(a, -1.0), 1.0); }

Var reciprocal(Var a) {
  return a.graph()->push(unary(Op::kReciprocal, a, a.value().array().inverse().matrix()));
}

Var relu(Var a) {
  return a.graph()->push(unary(Op::kRelu, a, a.value().cwiseMax(0.0)));
}

Var sigmoid(Var a) {
  Matrix v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return a.graph()->push(unary(Op::kSigmoid, a, std::move(v)));
}

Var log(Var a) {
  return a.graph()->push(unary(Op::kLog, a, a.value().array().log().matrix()));
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
  Node n = unary(Op::kClamp, a, a.value().cwiseMax(lo).cwiseMin(hi));
  n.lo = lo;
  n.hi = hi;
  return a.graph()->push(std::move(n));
}

Var bce(Var p, Var y) {
  require_same_shape(p, y, "bce");
  const auto pv = p.value().array();
  const auto yv = y.value().array();
  Matrix v = (-(yv * pv.log() + (1.0 - yv) * (1.0 - pv).log())).matrix();
  return p.graph()->push(binary(Op::kBce, p, y, std::move(v)));
}

Var gather_rows(Var table, std::span<const Eigen::Index> rows) {
  const Matrix& t = table.value();
  Matrix v(static_cast<Eigen::Index>(rows.size()), t.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= t.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " outside table of " +
                       std::to_string(t.rows()) + " rows");
    }
    v.row(static_cast<Eigen::Index>(i)) = t.row(rows[i]);
  }
  Node n = unary(Op::kGatherRows, table, std::move(v));
  n.indices.assign(rows.begin(), rows.end());
  return table.graph()->push(std::move(n));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require_same_graph(parts.front(), p, "concat_cols");
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Node n;
  n.op = Op::kConcatCols;
  n.value.resize(rows, cols);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    n.value.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
    n.parents.push_back(p.id());
  }
  return parts.front().graph()->push(std::move(n));
}

Var weighted_sum(Var a, const Vector& coeffs) {
  if (a.cols() != 1 || a.rows() != coeffs.size()) {
    throw ShapeError("weighted_sum: expects a column of " + std::to_string(coeffs.size()) +
                     " rows, got " + shape_str(a.value()));
  }
  Node n = unary(Op::kWeightedSum, a, Matrix::Constant(1, 1, a.value().col(0).dot(coeffs)));
  n.coeffs = coeffs;
  return a.graph()->push(std::move(n));
}

Var sum(Var a) {
  return a.graph()->push(unary(Op::kSum, a, Matrix::Constant(1, 1, a.value().sum())));
}

Var mean(Var a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var stop_gradient(Var a) {
  Node n = unary(Op::kStopGradient, a, a.value());
  n.grad_blocked = true;
  return a.graph()->push(std::move(n));
}

}  // namespace chorus::ad
