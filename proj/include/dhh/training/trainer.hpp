#pragma once

// Training loop for DHH and the baselines. The objective of each method is
// built once as a graph together with its parameter gradient; every
// optimization step only rebinds parameters and freshly drawn collocation
// points and re-runs the compiled program.

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dhh/common/rng.hpp"
#include "dhh/data/dataset.hpp"
#include "dhh/diffcore/graph.hpp"
#include "dhh/nets/mlp.hpp"

namespace dhh::training {

using diffcore::Matrix;

enum class Method { kDhh, kHnnFd, kHnnOracle, kDhpm, kNeuralOde };

std::string_view method_name(Method method);
// Throws std::invalid_argument naming the allowed set.
Method method_from_name(std::string_view name);

struct NetworkSizes {
  std::vector<int> hamiltonian{64, 64};
  std::vector<int> solution{64, 64, 64};
  std::vector<int> dynamics{64, 64};
};

struct TrainConfig {
  Method method = Method::kDhh;
  double lambda_fit = 1.0;
  double lambda_ham = 0.1;
  double lambda_extra = 0.01;
  double lambda_ode = 1.0;  // weight of the ODE residual for dhpm
  double lr_dynamics = 1e-4;  // Hamiltonian and dynamics nets
  double lr_solution = 1e-2;
  int steps = 20000;
  int collocation_points = 128;  // K
  int energy_pairs = 32;         // M
  double max_substep = 0.1;      // neural_ode RK2 sub-step bound, raw time
  std::uint64_t seed = 0;
  NetworkSizes sizes;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// Defaults with the Hamiltonian-residual weight of the target system:
// 0.1 for mass-spring and pendulum, 1 for the n-body systems.
TrainConfig default_config(Method method, const systems::SystemSpec& system);

nlohmann::json to_json(const TrainConfig& config);
// Missing fields keep their defaults; unknown or ill-typed fields throw
// std::invalid_argument with the field name.
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});

// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState zeros_like(const std::vector<Matrix>& params);
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, long step, std::string term)
      : std::runtime_error(what), step_(step), term_(std::move(term)) {}
  [[nodiscard]] long step() const { return step_; }
  [[nodiscard]] const std::string& term() const { return term_; }

 private:
  long step_;
  std::string term_;
};

// Bias-corrected Adam update in place. `term` names the loss the gradient
// belongs to, for the error raised on non-finite gradients.
void adam_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, AdamState& state,
               double lr, std::string_view term = "total");

// ---------------------------------------------------------------------------

enum class Role { kSolution, kHamiltonian, kDynamics };
std::string_view role_name(Role role);

struct Network {
  nets::MlpConfig config;
  nets::NetworkParams params;
};

struct TrainedModel {
  Method method = Method::kDhh;
  std::string system;
  int dof = 1;
  data::TimeMap time_map;
  std::optional<Network> solution;
  std::optional<Network> hamiltonian;
  std::optional<Network> dynamics;

  [[nodiscard]] std::optional<Network>& net(Role role);
  [[nodiscard]] const std::optional<Network>& net(Role role) const;
};

nlohmann::json to_json(const TrainedModel& model);
TrainedModel model_from_json(const nlohmann::json& j);

// Which networks a method trains.
std::vector<Role> roles_for(Method method);
nets::MlpConfig network_config(Role role, int dof, const NetworkSizes& sizes);
// Fresh parameters for every role of the method, seeded from the config.
TrainedModel initial_model(const TrainConfig& config, const data::Dataset& dataset);

struct StepInputs {
  Matrix collocation;  // 1 x K
  Matrix first_times;  // 1 x M, in [-1, 0]
  Matrix second_times; // 1 x M, in [0, 1]
};

Matrix sample_collocation(int count, Rng& rng);
std::pair<Matrix, Matrix> sample_pairs(int count, Rng& rng);

struct Evaluation {
  double total = 0.0;
  double fit = 0.0;
  double ham = 0.0;    // Hamilton / ODE residual; 0 for neural_ode
  double extra = 0.0;
  std::vector<std::vector<Matrix>> gradients;  // per role, flattened W0,b0,...
};

// Compiled objective of one method on one dataset.
class Objective {
 public:
  Objective(const TrainConfig& config, const data::Dataset& dataset);

  [[nodiscard]] StepInputs draw(Rng& rng) const;
  [[nodiscard]] diffcore::Bindings bind(const TrainedModel& model, const StepInputs& inputs) const;
  [[nodiscard]] Evaluation run(const diffcore::Bindings& bindings) const;

  [[nodiscard]] const diffcore::Graph& graph() const { return *graph_; }
  [[nodiscard]] diffcore::NodeId total() const { return total_; }
  [[nodiscard]] const std::vector<Role>& roles() const { return roles_; }
  // All parameter slots, role by role.
  [[nodiscard]] std::vector<diffcore::NodeId> parameter_slots() const;

 private:
  TrainConfig config_;
  std::vector<Role> roles_;
  std::vector<nets::MlpSlots> slots_;
  std::shared_ptr<diffcore::Graph> graph_;
  std::unique_ptr<diffcore::Program> program_;
  diffcore::NodeId total_, fit_, ham_, extra_;
  diffcore::NodeId collocation_, first_times_, second_times_;
  diffcore::Bindings fixed_;  // data-dependent inputs bound once
};

struct LossRecord {
  long step = 0;
  double total = 0.0;
  double fit = 0.0;
  double ham = 0.0;
  double extra = 0.0;
};

struct TrainResult {
  TrainedModel model;
  std::vector<LossRecord> curve;
};

// Runs config.steps Adam iterations. A non-finite loss or gradient aborts
// with NonFiniteError carrying the step and the loss term.
TrainResult train(const TrainConfig& config, const data::Dataset& dataset);

// Continues from a given model (used for warm starts in tests).
TrainResult train_from(const TrainConfig& config, const data::Dataset& dataset,
                       TrainedModel model);

std::string loss_curve_csv(const std::vector<LossRecord>& curve);

}  // namespace dhh::training
