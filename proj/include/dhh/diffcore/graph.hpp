#pragma once

// Source-transformation automatic differentiation over dense matrices.
//
// A Graph is an append-only list of primitive nodes. Arguments always refer
// to earlier nodes, so node order is a topological order. Differentiating a
// graph appends the adjoint computation as ordinary nodes, which means the
// result can itself be differentiated again.
//
// Every value is a dense double matrix. Batches are laid out as columns, so
// a network applied to K inputs is one matmul per layer.

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace dhh::diffcore {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Shape {
  Index rows = 0;
  Index cols = 0;

  [[nodiscard]] bool is_scalar() const { return rows == 1 && cols == 1; }
  [[nodiscard]] Index size() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(Shape shape);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnboundLeafError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NonScalarTargetError : public Error {
 public:
  using Error::Error;
};

struct NodeId {
  static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t index = kInvalid;

  [[nodiscard]] bool valid() const { return index != kInvalid; }
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class Op : std::uint8_t {
  kInput,
  kConstant,
  kAdd,
  kSubtract,
  kMultiply,  // elementwise
  kDivide,    // elementwise
  kNegate,
  kPowInt,
  kTanh,
  kCos,
  kSin,
  kSquare,
  kScale,      // multiply by a compile-time scalar
  kReduceSum,  // sum down to 1x1, rows x 1 or 1 x cols
  kBroadcast,  // inverse of kReduceSum
  kMatMul,
  kTranspose,
  kConcatRows,
  kSliceRows,
};

std::string_view op_name(Op op);

// Constants that are known to be all zeros or all ones are tagged so the
// builder can fold them away; derivative graphs are full of them.
enum class ConstKind : std::uint8_t { kGeneral, kZeros, kOnes };

struct Node {
  Op op = Op::kConstant;
  Shape shape;
  std::vector<NodeId> args;
  int exponent = 0;     // kPowInt
  Index offset = 0;     // kSliceRows
  double factor = 1.0;  // kScale
  ConstKind const_kind = ConstKind::kGeneral;
  std::shared_ptr<const Matrix> value;  // kConstant with kGeneral
  std::string name;                     // kInput
};

class Graph {
 public:
  // Leaves.
  NodeId input(std::string name, Shape shape);
  NodeId constant(Matrix value);
  NodeId scalar(double value);
  NodeId zeros(Shape shape);
  NodeId ones(Shape shape);

  // Primitives.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId neg(NodeId a);
  NodeId pow_int(NodeId a, int exponent);
  NodeId tanh(NodeId a);
  NodeId cos(NodeId a);
  NodeId sin(NodeId a);
  NodeId square(NodeId a);
  NodeId scale(NodeId a, double factor);
  NodeId sum(NodeId a);
  NodeId reduce_sum(NodeId a, Shape target);
  NodeId broadcast(NodeId a, Shape target);
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId concat_rows(std::span<const NodeId> parts);
  NodeId slice_rows(NodeId a, Index offset, Index count);

  // Appends the reverse-mode derivative of `target` (must be 1x1) with
  // respect to each node in `wrt`. The returned ids are nodes of this graph
  // with the same shapes as the corresponding `wrt` nodes. Interior nodes are
  // allowed in `wrt`; their gradient is the total derivative of the target
  // with respect to a perturbation of that node's value.
  std::vector<NodeId> gradient(NodeId target, std::span<const NodeId> wrt);

  [[nodiscard]] const Node& node(NodeId id) const;
  [[nodiscard]] Shape shape(NodeId id) const { return node(id).shape; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] NodeId find_input(std::string_view name) const;
  [[nodiscard]] std::vector<NodeId> inputs() const;
  [[nodiscard]] bool is_zero(NodeId id) const;
  [[nodiscard]] bool is_ones(NodeId id) const;

 private:
  NodeId push(Node node);
  void accumulate(std::vector<NodeId>& adjoint, NodeId target, NodeId contribution);
  void propagate(NodeId id, NodeId adj, const std::vector<char>& active,
                 std::vector<NodeId>& adjoint);

  std::vector<Node> nodes_;
  std::unordered_map<std::string, NodeId> inputs_by_name_;
};

struct GradientRequest {
  NodeId target;
  std::vector<NodeId> with_respect_to;
};

struct Derivative {
  Graph graph;                     // superset of the source graph
  std::vector<NodeId> gradients;   // one per requested node
};

// Returns a new graph containing the source graph plus the gradient nodes.
// Node ids of the source graph remain valid in the result.
Derivative derive(const Graph& graph, const GradientRequest& request);

class Bindings {
 public:
  Bindings() = default;

  void bind(NodeId slot, Matrix value);
  void bind(const Graph& graph, std::string_view name, Matrix value);
  [[nodiscard]] const Matrix* find(NodeId slot) const;
  [[nodiscard]] Matrix& at(NodeId slot);

 private:
  std::unordered_map<std::uint32_t, Matrix> values_;
};

class Values {
 public:
  explicit Values(std::vector<Matrix> values) : values_(std::move(values)) {}

  [[nodiscard]] const Matrix& operator[](NodeId id) const;
  [[nodiscard]] double scalar(NodeId id) const { return (*this)[id](0, 0); }
  [[nodiscard]] bool has(NodeId id) const;

 private:
  std::vector<Matrix> values_;
};

// Evaluates every node of the graph.
Values evaluate(const Graph& graph, const Bindings& bindings);

// Evaluates only what the requested outputs depend on.
std::vector<Matrix> evaluate(const Graph& graph, const Bindings& bindings,
                             std::span<const NodeId> outputs);

// A pruned evaluation order for a fixed set of outputs. Immutable once built;
// every run() uses its own workspace, so one Program can be shared across
// threads.
class Program {
 public:
  Program(std::shared_ptr<const Graph> graph, std::vector<NodeId> outputs);

  [[nodiscard]] std::vector<Matrix> run(const Bindings& bindings) const;
  [[nodiscard]] const Graph& graph() const { return *graph_; }
  [[nodiscard]] std::span<const NodeId> outputs() const { return outputs_; }
  // Number of nodes executed per run.
  [[nodiscard]] std::size_t length() const { return order_.size(); }

 private:
  std::shared_ptr<const Graph> graph_;
  std::vector<NodeId> outputs_;
  std::vector<NodeId> order_;
};

// Maximum relative deviation between derive() and central differences over
// every entry of every requested leaf. Entrywise deviation is
// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
// Only input leaves can be perturbed; an empty request returns 0.
double finite_difference_check(const Graph& graph, const GradientRequest& request,
                               const Bindings& bindings, double step,
                               double abs_floor = 1e-6);

}  // namespace dhh::diffcore
