#pragma once

// Multilayer perceptrons used for the Hamiltonian net H(q, p), the solution
// net s(t) = (q(t), p(t)) and the black-box dynamics net f(s).
//
// Parameters live outside the graph. A network is placed into a graph by
// declaring one input slot per weight and bias, so the same graph can be
// re-evaluated with updated parameters and differentiated w.r.t. them.

#include <cstdint>
#include <mutex>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dhh/diffcore/graph.hpp"

namespace dhh::nets {

using diffcore::Matrix;
using diffcore::NodeId;
using Vector = Eigen::VectorXd;

enum class Activation { kTanh };

struct MlpConfig {
  int input_dim = 1;
  int output_dim = 1;
  std::vector<int> hidden;
  Activation activation = Activation::kTanh;

  // Throws std::invalid_argument on non-positive dimensions or widths.
  void validate() const;
  [[nodiscard]] std::size_t layer_count() const { return hidden.size() + 1; }
  [[nodiscard]] int fan_in(std::size_t layer) const;
  [[nodiscard]] int fan_out(std::size_t layer) const;

  friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

struct Layer {
  Matrix weight;  // fan_out x fan_in
  Vector bias;    // fan_out
};

struct NetworkParams {
  std::vector<Layer> layers;

  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] bool all_finite() const;
};

// Glorot-uniform weights, zero biases.
NetworkParams init_params(const MlpConfig& config, std::uint64_t seed);

// Throws std::invalid_argument when params do not match the config.
void check_params(const MlpConfig& config, const NetworkParams& params);

// Input slots of one network inside a graph.
struct MlpSlots {
  std::vector<NodeId> weights;
  std::vector<NodeId> biases;

  // weights and biases interleaved layer by layer: W0, b0, W1, b1, ...
  [[nodiscard]] std::vector<NodeId> all() const;
};

MlpSlots declare_params(diffcore::Graph& graph, const MlpConfig& config,
                        std::string_view prefix);
void bind_params(diffcore::Bindings& bindings, const MlpSlots& slots,
                 const NetworkParams& params);

// Applies the network to `input` (input_dim x batch); returns
// output_dim x batch. Hidden layers are affine + activation, the last layer
// is affine only.
NodeId forward(diffcore::Graph& graph, const MlpConfig& config, const MlpSlots& slots,
               NodeId input);

// Jacobian of a batched map output = F(input) where columns are
// independent samples. Entry k of the result is d output_k / d input, a node
// of shape input_dim x batch. Built with one reverse pass per component.
std::vector<NodeId> input_jacobian(diffcore::Graph& graph, NodeId output, NodeId input);

// Jacobian-vector product d output / d input * direction, per column, via
// two nested reverse passes. Cost does not grow with the output dimension.
NodeId input_jvp(diffcore::Graph& graph, NodeId output, NodeId input, NodeId direction);

// Flattens params into a single gradient-ordered list (W0, b0, W1, b1, ...)
// and back. Biases travel as column matrices.
std::vector<Matrix> flatten(const NetworkParams& params);
NetworkParams unflatten(const MlpConfig& config, const std::vector<Matrix>& flat);

// Eager evaluation of a fixed network. Graphs are compiled per batch size
// and cached; the object is safe to share between threads.
class CompiledMlp {
 public:
  CompiledMlp(MlpConfig config, NetworkParams params);

  // inputs: input_dim x batch -> output_dim x batch
  [[nodiscard]] Matrix forward(const Matrix& inputs) const;
  // Row k of the per-sample Jacobian for every sample: entry k is
  // input_dim x batch.
  [[nodiscard]] std::vector<Matrix> jacobian(const Matrix& inputs) const;

  [[nodiscard]] Vector forward(const Vector& input) const;
  // output_dim x input_dim
  [[nodiscard]] Matrix jacobian(const Vector& input) const;

  [[nodiscard]] const MlpConfig& config() const { return config_; }
  [[nodiscard]] const NetworkParams& params() const { return params_; }

 private:
  struct Compiled {
    std::unique_ptr<diffcore::Program> program;
    MlpSlots slots;
    NodeId input;
  };
  const Compiled& compiled(diffcore::Index batch) const;
  [[nodiscard]] diffcore::Bindings bindings(const Compiled& c, const Matrix& inputs) const;

  MlpConfig config_;
  NetworkParams params_;
  mutable std::mutex mutex_;
  mutable std::map<diffcore::Index, std::unique_ptr<Compiled>> cache_;
};

// Checkpoint serialization. Row-major nested arrays; doubles round-trip
// exactly.
nlohmann::json to_json(const MlpConfig& config);
MlpConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MlpConfig& config, const NetworkParams& params);
NetworkParams params_from_json(const nlohmann::json& j, const MlpConfig& config);

}  // namespace dhh::nets
