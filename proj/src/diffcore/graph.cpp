#include "dhh/diffcore/graph.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace dhh::diffcore {

std::string to_string(Shape shape) { return fmt::format("{}x{}", shape.rows, shape.cols); }

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kSubtract: return "subtract";
    case Op::kMultiply: return "multiply";
    case Op::kDivide: return "divide";
    case Op::kNegate: return "negate";
    case Op::kPowInt: return "pow_int";
    case Op::kTanh: return "tanh";
    case Op::kCos: return "cos";
    case Op::kSin: return "sin";
    case Op::kSquare: return "square";
    case Op::kScale: return "scale";
    case Op::kReduceSum: return "reduce_sum";
    case Op::kBroadcast: return "broadcast";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kConcatRows: return "concat_rows";
    case Op::kSliceRows: return "slice_rows";
  }
  return "unknown";
}

namespace {

void require_same_shape(std::string_view what, Shape a, Shape b) {
  if (a != b) {
    throw ShapeError(fmt::format("{}: operand shapes differ ({} vs {})", what, to_string(a),
                                 to_string(b)));
  }
}

// Reduction/broadcast pairs only move between a full shape and one of its
// 1x1, rows x 1 or 1 x cols marginals.
bool is_marginal_of(Shape small, Shape full) {
  if (small == full) return true;
  if (small.is_scalar()) return true;
  if (small.cols == 1 && small.rows == full.rows) return true;
  if (small.rows == 1 && small.cols == full.cols) return true;
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// Builder

NodeId Graph::push(Node node) {
  if (nodes_.size() >= NodeId::kInvalid) throw Error("graph too large");
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Node& Graph::node(NodeId id) const {
  if (!id.valid() || id.index >= nodes_.size()) {
    throw Error(fmt::format("node id {} out of range", id.index));
  }
  return nodes_[id.index];
}

bool Graph::is_zero(NodeId id) const {
  const Node& n = node(id);
  return n.op == Op::kConstant && n.const_kind == ConstKind::kZeros;
}

bool Graph::is_ones(NodeId id) const {
  const Node& n = node(id);
  return n.op == Op::kConstant && n.const_kind == ConstKind::kOnes;
}

NodeId Graph::find_input(std::string_view name) const {
  auto it = inputs_by_name_.find(std::string(name));
  if (it == inputs_by_name_.end()) return NodeId{};
  return it->second;
}

std::vector<NodeId> Graph::inputs() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::kInput) out.push_back(NodeId{static_cast<std::uint32_t>(i)});
  }
  return out;
}

NodeId Graph::input(std::string name, Shape shape) {
  if (shape.rows <= 0 || shape.cols <= 0) {
    throw ShapeError(fmt::format("input '{}' has empty shape {}", name, to_string(shape)));
  }
  if (inputs_by_name_.contains(name)) throw Error(fmt::format("duplicate input '{}'", name));
  Node n;
  n.op = Op::kInput;
  n.shape = shape;
  n.name = name;
  NodeId id = push(std::move(n));
  inputs_by_name_.emplace(std::move(name), id);
  return id;
}

NodeId Graph::constant(Matrix value) {
  Node n;
  n.op = Op::kConstant;
  n.shape = {value.rows(), value.cols()};
  if (n.shape.size() == 0) throw ShapeError("constant with empty shape");
  if ((value.array() == 0.0).all()) {
    n.const_kind = ConstKind::kZeros;
  } else if ((value.array() == 1.0).all()) {
    n.const_kind = ConstKind::kOnes;
  } else {
    n.value = std::make_shared<const Matrix>(std::move(value));
  }
  return push(std::move(n));
}

NodeId Graph::scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

NodeId Graph::zeros(Shape shape) {
  Node n;
  n.op = Op::kConstant;
  n.shape = shape;
  n.const_kind = ConstKind::kZeros;
  return push(std::move(n));
}

NodeId Graph::ones(Shape shape) {
  Node n;
  n.op = Op::kConstant;
  n.shape = shape;
  n.const_kind = ConstKind::kOnes;
  return push(std::move(n));
}

namespace {

Node make_node(Op op, Shape shape, std::vector<NodeId> args) {
  Node n;
  n.op = op;
  n.shape = shape;
  n.args = std::move(args);
  return n;
}

}  // namespace

NodeId Graph::add(NodeId a, NodeId b) {
  require_same_shape("add", shape(a), shape(b));
  if (is_zero(a)) return b;
  if (is_zero(b)) return a;
  return push(make_node(Op::kAdd, shape(a), {a, b}));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  require_same_shape("subtract", shape(a), shape(b));
  if (is_zero(b)) return a;
  if (is_zero(a)) return neg(b);
  return push(make_node(Op::kSubtract, shape(a), {a, b}));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  require_same_shape("multiply", shape(a), shape(b));
  if (is_zero(a) || is_zero(b)) return zeros(shape(a));
  if (is_ones(a)) return b;
  if (is_ones(b)) return a;
  return push(make_node(Op::kMultiply, shape(a), {a, b}));
}

NodeId Graph::div(NodeId a, NodeId b) {
  require_same_shape("divide", shape(a), shape(b));
  if (is_zero(a)) return zeros(shape(a));
  if (is_ones(b)) return a;
  return push(make_node(Op::kDivide, shape(a), {a, b}));
}

NodeId Graph::neg(NodeId a) {
  if (is_zero(a)) return a;
  const Node& n = node(a);
  if (n.op == Op::kNegate) return n.args[0];
  return push(make_node(Op::kNegate, n.shape, {a}));
}

NodeId Graph::pow_int(NodeId a, int exponent) {
  if (exponent == 0) return ones(shape(a));
  if (exponent == 1) return a;
  if (exponent == 2) return square(a);
  if (is_zero(a) && exponent > 0) return a;
  Node n = make_node(Op::kPowInt, shape(a), {a});
  n.exponent = exponent;
  return push(std::move(n));
}

NodeId Graph::tanh(NodeId a) {
  if (is_zero(a)) return a;
  return push(make_node(Op::kTanh, shape(a), {a}));
}

NodeId Graph::cos(NodeId a) {
  if (is_zero(a)) return ones(shape(a));
  return push(make_node(Op::kCos, shape(a), {a}));
}

NodeId Graph::sin(NodeId a) {
  if (is_zero(a)) return a;
  return push(make_node(Op::kSin, shape(a), {a}));
}

NodeId Graph::square(NodeId a) {
  if (is_zero(a) || is_ones(a)) return a;
  return push(make_node(Op::kSquare, shape(a), {a}));
}

NodeId Graph::scale(NodeId a, double factor) {
  if (factor == 0.0 || is_zero(a)) return zeros(shape(a));
  if (factor == 1.0) return a;
  const Node& n = node(a);
  if (n.op == Op::kScale) {
    Node s = make_node(Op::kScale, n.shape, {n.args[0]});
    s.factor = n.factor * factor;
    return push(std::move(s));
  }
  Node s = make_node(Op::kScale, n.shape, {a});
  s.factor = factor;
  return push(std::move(s));
}

NodeId Graph::sum(NodeId a) { return reduce_sum(a, {1, 1}); }

NodeId Graph::reduce_sum(NodeId a, Shape target) {
  const Shape from = shape(a);
  if (!is_marginal_of(target, from)) {
    throw ShapeError(
        fmt::format("reduce_sum: cannot reduce {} to {}", to_string(from), to_string(target)));
  }
  if (target == from) return a;
  if (is_zero(a)) return zeros(target);
  return push(make_node(Op::kReduceSum, target, {a}));
}

NodeId Graph::broadcast(NodeId a, Shape target) {
  const Shape from = shape(a);
  if (!is_marginal_of(from, target)) {
    throw ShapeError(
        fmt::format("broadcast: cannot broadcast {} to {}", to_string(from), to_string(target)));
  }
  if (target == from) return a;
  if (is_zero(a)) return zeros(target);
  if (is_ones(a)) return ones(target);
  return push(make_node(Op::kBroadcast, target, {a}));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Shape sa = shape(a);
  const Shape sb = shape(b);
  if (sa.cols != sb.rows) {
    throw ShapeError(
        fmt::format("matmul: inner dimensions differ ({} * {})", to_string(sa), to_string(sb)));
  }
  const Shape out{sa.rows, sb.cols};
  if (is_zero(a) || is_zero(b)) return zeros(out);
  return push(make_node(Op::kMatMul, out, {a, b}));
}

NodeId Graph::transpose(NodeId a) {
  const Node& n = node(a);
  const Shape out{n.shape.cols, n.shape.rows};
  if (n.op == Op::kTranspose) return n.args[0];
  if (n.op == Op::kConstant && n.const_kind == ConstKind::kZeros) return zeros(out);
  if (n.op == Op::kConstant && n.const_kind == ConstKind::kOnes) return ones(out);
  if (n.shape.rows == 1 && n.shape.cols == 1) return a;
  return push(make_node(Op::kTranspose, out, {a}));
}

NodeId Graph::concat_rows(std::span<const NodeId> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  if (parts.size() == 1) return parts[0];
  const Index cols = shape(parts[0]).cols;
  Index rows = 0;
  bool all_zero = true;
  for (NodeId p : parts) {
    if (shape(p).cols != cols) {
      throw ShapeError(fmt::format("concat_rows: column counts differ ({} vs {})", cols,
                                   shape(p).cols));
    }
    rows += shape(p).rows;
    all_zero = all_zero && is_zero(p);
  }
  if (all_zero) return zeros({rows, cols});
  return push(make_node(Op::kConcatRows, {rows, cols}, {parts.begin(), parts.end()}));
}

NodeId Graph::slice_rows(NodeId a, Index offset, Index count) {
  const Shape from = shape(a);
  if (offset < 0 || count <= 0 || offset + count > from.rows) {
    throw ShapeError(fmt::format("slice_rows: rows [{}, {}) out of range for {}", offset,
                                 offset + count, to_string(from)));
  }
  if (offset == 0 && count == from.rows) return a;
  const Shape out{count, from.cols};
  if (is_zero(a)) return zeros(out);
  if (is_ones(a)) return ones(out);
  Node n = make_node(Op::kSliceRows, out, {a});
  n.offset = offset;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Reverse mode

void Graph::accumulate(std::vector<NodeId>& adjoint, NodeId target, NodeId contribution) {
  NodeId& slot = adjoint[target.index];
  slot = slot.valid() ? add(slot, contribution) : contribution;
}

void Graph::propagate(NodeId id, NodeId adj, const std::vector<char>& active,
                      std::vector<NodeId>& adjoint) {
  // Copy: building nodes below may reallocate nodes_.
  const Node n = nodes_[id.index];
  auto wants = [&](std::size_t i) { return active[n.args[i].index] != 0; };

  switch (n.op) {
    case Op::kInput:
    case Op::kConstant:
      return;
    case Op::kAdd:
      if (wants(0)) accumulate(adjoint, n.args[0], adj);
      if (wants(1)) accumulate(adjoint, n.args[1], adj);
      return;
    case Op::kSubtract:
      if (wants(0)) accumulate(adjoint, n.args[0], adj);
      if (wants(1)) accumulate(adjoint, n.args[1], neg(adj));
      return;
    case Op::kMultiply:
      if (wants(0)) accumulate(adjoint, n.args[0], mul(adj, n.args[1]));
      if (wants(1)) accumulate(adjoint, n.args[1], mul(adj, n.args[0]));
      return;
    case Op::kDivide:
      if (wants(0)) accumulate(adjoint, n.args[0], div(adj, n.args[1]));
      if (wants(1)) accumulate(adjoint, n.args[1], neg(div(mul(adj, id), n.args[1])));
      return;
    case Op::kNegate:
      accumulate(adjoint, n.args[0], neg(adj));
      return;
    case Op::kPowInt: {
      NodeId lower = pow_int(n.args[0], n.exponent - 1);
      accumulate(adjoint, n.args[0], scale(mul(adj, lower), n.exponent));
      return;
    }
    case Op::kTanh:
      // d tanh = 1 - tanh^2, written without a ones constant
      accumulate(adjoint, n.args[0], sub(adj, mul(adj, square(id))));
      return;
    case Op::kCos:
      accumulate(adjoint, n.args[0], neg(mul(adj, sin(n.args[0]))));
      return;
    case Op::kSin:
      accumulate(adjoint, n.args[0], mul(adj, cos(n.args[0])));
      return;
    case Op::kSquare:
      accumulate(adjoint, n.args[0], scale(mul(adj, n.args[0]), 2.0));
      return;
    case Op::kScale:
      accumulate(adjoint, n.args[0], scale(adj, n.factor));
      return;
    case Op::kReduceSum:
      accumulate(adjoint, n.args[0], broadcast(adj, shape(n.args[0])));
      return;
    case Op::kBroadcast:
      accumulate(adjoint, n.args[0], reduce_sum(adj, shape(n.args[0])));
      return;
    case Op::kMatMul:
      if (wants(0)) accumulate(adjoint, n.args[0], matmul(adj, transpose(n.args[1])));
      if (wants(1)) accumulate(adjoint, n.args[1], matmul(transpose(n.args[0]), adj));
      return;
    case Op::kTranspose:
      accumulate(adjoint, n.args[0], transpose(adj));
      return;
    case Op::kConcatRows: {
      Index offset = 0;
      for (std::size_t i = 0; i < n.args.size(); ++i) {
        const Index rows = shape(n.args[i]).rows;
        if (wants(i)) accumulate(adjoint, n.args[i], slice_rows(adj, offset, rows));
        offset += rows;
      }
      return;
    }
    case Op::kSliceRows: {
      const Shape full = shape(n.args[0]);
      std::vector<NodeId> parts;
      if (n.offset > 0) parts.push_back(zeros({n.offset, full.cols}));
      parts.push_back(adj);
      const Index tail = full.rows - n.offset - n.shape.rows;
      if (tail > 0) parts.push_back(zeros({tail, full.cols}));
      accumulate(adjoint, n.args[0], concat_rows(parts));
      return;
    }
  }
  throw Error(fmt::format("no derivative registered for '{}'", op_name(n.op)));
}

std::vector<NodeId> Graph::gradient(NodeId target, std::span<const NodeId> wrt) {
  if (!shape(target).is_scalar()) {
    throw NonScalarTargetError(fmt::format("gradient target must be 1x1, got {}",
                                           to_string(shape(target))));
  }
  const std::size_t limit = target.index + 1;

  // active[i]: node i depends on some requested node.
  std::vector<char> active(limit, 0);
  for (NodeId w : wrt) {
    (void)node(w);
    if (w.index < limit) active[w.index] = 1;
  }
  for (std::size_t i = 0; i < limit; ++i) {
    if (active[i]) continue;
    for (NodeId a : nodes_[i].args) {
      if (active[a.index]) {
        active[i] = 1;
        break;
      }
    }
  }

  std::vector<NodeId> adjoint(limit);
  if (active[target.index]) adjoint[target.index] = ones({1, 1});
  for (std::size_t i = limit; i-- > 0;) {
    if (!active[i] || !adjoint[i].valid()) continue;
    propagate(NodeId{static_cast<std::uint32_t>(i)}, adjoint[i], active, adjoint);
  }

  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) {
    if (w.index < limit && adjoint[w.index].valid()) {
      out.push_back(adjoint[w.index]);
    } else {
      out.push_back(zeros(shape(w)));
    }
  }
  return out;
}

Derivative derive(const Graph& graph, const GradientRequest& request) {
  Derivative result{graph, {}};
  result.gradients = result.graph.gradient(request.target, request.with_respect_to);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

void Bindings::bind(NodeId slot, Matrix value) { values_[slot.index] = std::move(value); }

void Bindings::bind(const Graph& graph, std::string_view name, Matrix value) {
  NodeId id = graph.find_input(name);
  if (!id.valid()) throw Error(fmt::format("graph has no input named '{}'", name));
  bind(id, std::move(value));
}

const Matrix* Bindings::find(NodeId slot) const {
  auto it = values_.find(slot.index);
  return it == values_.end() ? nullptr : &it->second;
}

Matrix& Bindings::at(NodeId slot) {
  auto it = values_.find(slot.index);
  if (it == values_.end()) throw UnboundLeafError(fmt::format("slot {} is unbound", slot.index));
  return it->second;
}

const Matrix& Values::operator[](NodeId id) const {
  if (!has(id)) throw Error(fmt::format("node {} was not evaluated", id.index));
  return values_[id.index];
}

bool Values::has(NodeId id) const {
  return id.valid() && id.index < values_.size() && values_[id.index].size() > 0;
}

namespace {

void compute_node(const Node& n, NodeId id, const Bindings& bindings, std::vector<Matrix>& ws) {
  auto arg = [&](std::size_t i) -> const Matrix& { return ws[n.args[i].index]; };
  Matrix& out = ws[id.index];
  switch (n.op) {
    case Op::kInput: {
      const Matrix* bound = bindings.find(id);
      if (bound == nullptr) throw UnboundLeafError(fmt::format("input '{}' is unbound", n.name));
      if (bound->rows() != n.shape.rows || bound->cols() != n.shape.cols) {
        throw ShapeError(fmt::format("input '{}' expects {}, bound value is {}x{}", n.name,
                                     to_string(n.shape), bound->rows(), bound->cols()));
      }
      out = *bound;
      return;
    }
    case Op::kConstant:
      switch (n.const_kind) {
        case ConstKind::kZeros: out = Matrix::Zero(n.shape.rows, n.shape.cols); return;
        case ConstKind::kOnes: out = Matrix::Ones(n.shape.rows, n.shape.cols); return;
        case ConstKind::kGeneral: out = *n.value; return;
      }
      return;
    case Op::kAdd: out = arg(0) + arg(1); return;
    case Op::kSubtract: out = arg(0) - arg(1); return;
    case Op::kMultiply: out = arg(0).cwiseProduct(arg(1)); return;
    case Op::kDivide: out = arg(0).cwiseQuotient(arg(1)); return;
    case Op::kNegate: out = -arg(0); return;
    case Op::kPowInt: {
      const double e = n.exponent;
      out = arg(0).unaryExpr([e](double x) { return std::pow(x, e); });
      return;
    }
    case Op::kTanh: {
      // vectorized exp instead of scalar libm tanh; saturates cleanly at +-1
      const auto e = (2.0 * arg(0).array()).exp();
      out = (1.0 - 2.0 / (e + 1.0)).matrix();
      return;
    }
    case Op::kCos: out = arg(0).array().cos().matrix(); return;
    case Op::kSin: out = arg(0).array().sin().matrix(); return;
    case Op::kSquare: out = arg(0).array().square().matrix(); return;
    case Op::kScale: out = n.factor * arg(0); return;
    case Op::kReduceSum: {
      const Matrix& a = arg(0);
      if (n.shape.is_scalar()) {
        out = Matrix::Constant(1, 1, a.sum());
      } else if (n.shape.cols == 1) {
        out = a.rowwise().sum();
      } else {
        out = a.colwise().sum();
      }
      return;
    }
    case Op::kBroadcast: {
      const Matrix& a = arg(0);
      if (a.rows() == 1 && a.cols() == 1) {
        out = Matrix::Constant(n.shape.rows, n.shape.cols, a(0, 0));
      } else if (a.cols() == 1) {
        out = a.replicate(1, n.shape.cols);
      } else {
        out = a.replicate(n.shape.rows, 1);
      }
      return;
    }
    case Op::kMatMul:
      out.resize(n.shape.rows, n.shape.cols);
      out.noalias() = arg(0) * arg(1);
      return;
    case Op::kTranspose: out = arg(0).transpose(); return;
    case Op::kConcatRows: {
      out.resize(n.shape.rows, n.shape.cols);
      Index offset = 0;
      for (std::size_t i = 0; i < n.args.size(); ++i) {
        const Matrix& part = arg(i);
        out.middleRows(offset, part.rows()) = part;
        offset += part.rows();
      }
      return;
    }
    case Op::kSliceRows: out = arg(0).middleRows(n.offset, n.shape.rows); return;
  }
  throw Error(fmt::format("cannot evaluate '{}'", op_name(n.op)));
}

std::vector<NodeId> pruned_order(const Graph& graph, std::span<const NodeId> outputs) {
  std::vector<char> needed(graph.size(), 0);
  std::uint32_t top = 0;
  for (NodeId o : outputs) {
    (void)graph.node(o);
    needed[o.index] = 1;
    top = std::max(top, o.index + 1);
  }
  for (std::uint32_t i = top; i-- > 0;) {
    if (!needed[i]) continue;
    for (NodeId a : graph.node(NodeId{i}).args) needed[a.index] = 1;
  }
  std::vector<NodeId> order;
  for (std::uint32_t i = 0; i < top; ++i) {
    if (needed[i]) order.push_back(NodeId{i});
  }
  return order;
}

}  // namespace

Values evaluate(const Graph& graph, const Bindings& bindings) {
  std::vector<Matrix> ws(graph.size());
  for (std::uint32_t i = 0; i < graph.size(); ++i) {
    compute_node(graph.node(NodeId{i}), NodeId{i}, bindings, ws);
  }
  return Values(std::move(ws));
}

std::vector<Matrix> evaluate(const Graph& graph, const Bindings& bindings,
                             std::span<const NodeId> outputs) {
  std::vector<Matrix> ws(graph.size());
  for (NodeId id : pruned_order(graph, outputs)) compute_node(graph.node(id), id, bindings, ws);
  std::vector<Matrix> out;
  out.reserve(outputs.size());
  for (NodeId o : outputs) out.push_back(ws[o.index]);
  return out;
}

Program::Program(std::shared_ptr<const Graph> graph, std::vector<NodeId> outputs)
    : graph_(std::move(graph)), outputs_(std::move(outputs)) {
  if (!graph_) throw Error("program needs a graph");
  order_ = pruned_order(*graph_, outputs_);
}

std::vector<Matrix> Program::run(const Bindings& bindings) const {
  std::vector<Matrix> ws(graph_->size());
  for (NodeId id : order_) compute_node(graph_->node(id), id, bindings, ws);
  std::vector<Matrix> out;
  out.reserve(outputs_.size());
  for (NodeId o : outputs_) out.push_back(ws[o.index]);
  return out;
}

// ---------------------------------------------------------------------------

double finite_difference_check(const Graph& graph, const GradientRequest& request,
                               const Bindings& bindings, double step, double abs_floor) {
  if (step <= 0.0) throw Error("finite_difference_check: step must be positive");
  if (request.with_respect_to.empty()) return 0.0;
  for (NodeId w : request.with_respect_to) {
    if (graph.node(w).op != Op::kInput) {
      throw Error("finite_difference_check: only input leaves can be perturbed");
    }
  }

  Derivative d = derive(graph, request);
  const std::vector<Matrix> analytic = evaluate(d.graph, bindings, d.gradients);

  const NodeId target[] = {request.target};
  Bindings probe = bindings;
  double worst = 0.0;
  for (std::size_t k = 0; k < request.with_respect_to.size(); ++k) {
    const NodeId leaf = request.with_respect_to[k];
    Matrix& value = probe.at(leaf);
    for (Index j = 0; j < value.cols(); ++j) {
      for (Index i = 0; i < value.rows(); ++i) {
        const double saved = value(i, j);
        value(i, j) = saved + step;
        const double up = evaluate(graph, probe, target)[0](0, 0);
        value(i, j) = saved - step;
        const double down = evaluate(graph, probe, target)[0](0, 0);
        value(i, j) = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double exact = analytic[k](i, j);
        const double denom = std::max({std::abs(exact), std::abs(numeric), abs_floor});
        worst = std::max(worst, std::abs(exact - numeric) / denom);
      }
    }
  }
  return worst;
}

}  // namespace dhh::diffcore
