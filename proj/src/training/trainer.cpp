#include "dhh/training/trainer.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "dhh/training/losses.hpp"

namespace dhh::training {

using diffcore::Bindings;
using diffcore::Graph;
using diffcore::Index;
using diffcore::NodeId;
using diffcore::Shape;

std::string_view method_name(Method method) {
  switch (method) {
    case Method::kDhh: return "dhh";
    case Method::kHnnFd: return "hnn_fd";
    case Method::kHnnOracle: return "hnn_oracle";
    case Method::kDhpm: return "dhpm";
    case Method::kNeuralOde: return "neural_ode";
  }
  return "unknown";
}

Method method_from_name(std::string_view name) {
  for (Method m : {Method::kDhh, Method::kHnnFd, Method::kHnnOracle, Method::kDhpm,
                   Method::kNeuralOde}) {
    if (method_name(m) == name) return m;
  }
  throw std::invalid_argument(fmt::format(
      "unknown method '{}' (allowed: dhh, hnn_fd, hnn_oracle, dhpm, neural_ode)", name));
}

std::string_view role_name(Role role) {
  switch (role) {
    case Role::kSolution: return "solution";
    case Role::kHamiltonian: return "hamiltonian";
    case Role::kDynamics: return "dynamics";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  auto fail = [](std::string_view field, std::string_view why) {
    throw std::invalid_argument(fmt::format("config field '{}' {}", field, why));
  };
  if (!(lambda_fit >= 0.0)) fail("lambda_fit", "must be >= 0");
  if (!(lambda_ham >= 0.0)) fail("lambda_ham", "must be >= 0");
  if (!(lambda_extra >= 0.0)) fail("lambda_extra", "must be >= 0");
  if (!(lambda_ode >= 0.0)) fail("lambda_ode", "must be >= 0");
  if (!(lr_dynamics > 0.0)) fail("lr_dynamics", "must be > 0");
  if (!(lr_solution > 0.0)) fail("lr_solution", "must be > 0");
  if (steps < 0) fail("steps", "must be >= 0");
  if (collocation_points < 1) fail("collocation_points", "must be >= 1");
  if (energy_pairs < 1) fail("energy_pairs", "must be >= 1");
  if (!(max_substep > 0.0)) fail("max_substep", "must be > 0");
  for (const auto* widths : {&sizes.hamiltonian, &sizes.solution, &sizes.dynamics}) {
    for (int w : *widths) {
      if (w <= 0) fail("sizes", "layer widths must be positive");
    }
  }
}

TrainConfig default_config(Method method, const systems::SystemSpec& system) {
  TrainConfig c;
  c.method = method;
  c.lambda_ham = system.kind == systems::SystemKind::kNBody ? 1.0 : 0.1;
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"method", method_name(c.method)},
      {"lambda_fit", c.lambda_fit},
      {"lambda_ham", c.lambda_ham},
      {"lambda_extra", c.lambda_extra},
      {"lambda_ode", c.lambda_ode},
      {"lr_dynamics", c.lr_dynamics},
      {"lr_solution", c.lr_solution},
      {"steps", c.steps},
      {"collocation_points", c.collocation_points},
      {"energy_pairs", c.energy_pairs},
      {"max_substep", c.max_substep},
      {"seed", c.seed},
      {"sizes",
       {{"hamiltonian", c.sizes.hamiltonian},
        {"solution", c.sizes.solution},
        {"dynamics", c.sizes.dynamics}}},
  };
}

TrainConfig config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "method") c.method = method_from_name(value.get<std::string>());
      else if (key == "lambda_fit") c.lambda_fit = value.get<double>();
      else if (key == "lambda_ham") c.lambda_ham = value.get<double>();
      else if (key == "lambda_extra") c.lambda_extra = value.get<double>();
      else if (key == "lambda_ode") c.lambda_ode = value.get<double>();
      else if (key == "lr_dynamics") c.lr_dynamics = value.get<double>();
      else if (key == "lr_solution") c.lr_solution = value.get<double>();
      else if (key == "steps") c.steps = value.get<int>();
      else if (key == "collocation_points") c.collocation_points = value.get<int>();
      else if (key == "energy_pairs") c.energy_pairs = value.get<int>();
      else if (key == "max_substep") c.max_substep = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "sizes") {
        for (const auto& [net, widths] : value.items()) {
          if (net == "hamiltonian") c.sizes.hamiltonian = widths.get<std::vector<int>>();
          else if (net == "solution") c.sizes.solution = widths.get<std::vector<int>>();
          else if (net == "dynamics") c.sizes.dynamics = widths.get<std::vector<int>>();
          else throw std::invalid_argument(fmt::format("unknown config field 'sizes.{}'", net));
        }
      } else {
        throw std::invalid_argument(fmt::format("unknown config field '{}'", key));
      }
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(fmt::format("config field '{}' has the wrong type: {}", key,
                                              e.what()));
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

AdamState AdamState::zeros_like(const std::vector<Matrix>& params) {
  AdamState s;
  for (const Matrix& p : params) {
    s.first.push_back(Matrix::Zero(p.rows(), p.cols()));
    s.second.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  return s;
}

void adam_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, AdamState& state,
               double lr, std::string_view term) {
  if (params.size() != grads.size() || params.size() != state.first.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols()) {
      throw std::invalid_argument(fmt::format("adam_step: gradient block {} has the wrong shape", i));
    }
    if (!grads[i].allFinite()) {
      throw NonFiniteError(fmt::format("non-finite gradient of loss term '{}' at Adam step {}",
                                       term, state.step + 1),
                           state.step + 1, std::string(term));
    }
  }
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.first[i] = state.beta1 * state.first[i] + (1.0 - state.beta1) * grads[i];
    state.second[i] =
        state.beta2 * state.second[i] + (1.0 - state.beta2) * grads[i].cwiseProduct(grads[i]);
    const auto m_hat = state.first[i].array() / c1;
    const auto v_hat = state.second[i].array() / c2;
    params[i].array() -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
  }
}

// ---------------------------------------------------------------------------

std::optional<Network>& TrainedModel::net(Role role) {
  switch (role) {
    case Role::kSolution: return solution;
    case Role::kHamiltonian: return hamiltonian;
    case Role::kDynamics: return dynamics;
  }
  throw std::logic_error("unhandled role");
}

const std::optional<Network>& TrainedModel::net(Role role) const {
  return const_cast<TrainedModel*>(this)->net(role);
}

nlohmann::json to_json(const TrainedModel& model) {
  nlohmann::json j{{"method", method_name(model.method)},
                   {"system", model.system},
                   {"dof", model.dof},
                   {"time_map", {{"scale", model.time_map.scale}, {"offset", model.time_map.offset}}}};
  for (Role r : {Role::kSolution, Role::kHamiltonian, Role::kDynamics}) {
    const auto& net = model.net(r);
    if (net) j[std::string(role_name(r))] = nets::to_json(net->config, net->params);
  }
  return j;
}

TrainedModel model_from_json(const nlohmann::json& j) {
  TrainedModel m;
  try {
    m.method = method_from_name(j.at("method").get<std::string>());
    m.system = j.at("system").get<std::string>();
    m.dof = j.at("dof").get<int>();
    m.time_map = {j.at("time_map").at("scale").get<double>(),
                  j.at("time_map").at("offset").get<double>()};
    for (Role r : roles_for(m.method)) {
      const nlohmann::json& nj = j.at(std::string(role_name(r)));
      nets::MlpConfig cfg = nets::config_from_json(nj.at("config"));
      m.net(r) = Network{cfg, nets::params_from_json(nj, cfg)};
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(fmt::format("checkpoint field error: {}", e.what()));
  }
  return m;
}

std::vector<Role> roles_for(Method method) {
  switch (method) {
    case Method::kDhh: return {Role::kSolution, Role::kHamiltonian};
    case Method::kDhpm: return {Role::kSolution, Role::kDynamics};
    case Method::kHnnFd:
    case Method::kHnnOracle: return {Role::kHamiltonian};
    case Method::kNeuralOde: return {Role::kDynamics};
  }
  return {};
}

nets::MlpConfig network_config(Role role, int dof, const NetworkSizes& sizes) {
  switch (role) {
    case Role::kSolution: return {1, 2 * dof, sizes.solution, nets::Activation::kTanh};
    case Role::kHamiltonian: return {2 * dof, 1, sizes.hamiltonian, nets::Activation::kTanh};
    case Role::kDynamics: return {2 * dof, 2 * dof, sizes.dynamics, nets::Activation::kTanh};
  }
  throw std::logic_error("unhandled role");
}

TrainedModel initial_model(const TrainConfig& config, const data::Dataset& dataset) {
  TrainedModel m;
  m.method = config.method;
  m.system = dataset.system.name();
  m.dof = dataset.dof();
  m.time_map = dataset.time_map;
  for (Role r : roles_for(config.method)) {
    nets::MlpConfig cfg = network_config(r, m.dof, config.sizes);
    const std::uint64_t seed = derive_seed(config.seed, fmt::format("init/{}", role_name(r)));
    m.net(r) = Network{cfg, nets::init_params(cfg, seed)};
  }
  return m;
}

Matrix sample_collocation(int count, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix t(1, count);
  for (int k = 0; k < count; ++k) t(0, k) = u(rng);
  return t;
}

std::pair<Matrix, Matrix> sample_pairs(int count, Rng& rng) {
  std::uniform_real_distribution<double> left(-1.0, 0.0);
  std::uniform_real_distribution<double> right(0.0, 1.0);
  Matrix a(1, count), b(1, count);
  for (int k = 0; k < count; ++k) {
    a(0, k) = left(rng);
    b(0, k) = right(rng);
  }
  return {a, b};
}

// ---------------------------------------------------------------------------

namespace {

Matrix row_matrix(const Eigen::VectorXd& v) { return v.transpose(); }

void require_full_observation(const data::Dataset& ds, Method method) {
  if (!ds.fully_observed()) {
    throw std::invalid_argument(fmt::format(
        "method '{}' needs every coordinate observed; only dhh and dhpm accept masks",
        method_name(method)));
  }
}

}  // namespace

Objective::Objective(const TrainConfig& config, const data::Dataset& dataset)
    : config_(config), roles_(roles_for(config.method)), graph_(std::make_shared<Graph>()) {
  config_.validate();
  dataset.validate();
  Graph& g = *graph_;
  const int dof = dataset.dof();
  const Index n = dataset.size();

  std::vector<GraphFunction> functions;
  for (Role r : roles_) {
    const nets::MlpConfig cfg = network_config(r, dof, config_.sizes);
    slots_.push_back(nets::declare_params(g, cfg, role_name(r)));
    functions.push_back(mlp_function(cfg, slots_.back()));
  }
  auto function_of = [&](Role r) -> const GraphFunction& {
    for (std::size_t i = 0; i < roles_.size(); ++i) {
      if (roles_[i] == r) return functions[i];
    }
    throw std::logic_error("role not part of this method");
  };

  const NodeId zero = g.zeros({1, 1});
  fit_ = ham_ = extra_ = zero;
  const double scale = dataset.time_map.scale;

  auto bind_observations = [&]() {
    const std::vector<Index> rows = dataset.observed_rows();
    NodeId times = g.input("obs.times", {1, n});
    NodeId observed = g.input("obs.states", {static_cast<Index>(rows.size()), n});
    Matrix picked(static_cast<Index>(rows.size()), n);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      picked.row(static_cast<Index>(i)) = dataset.observations.states.row(rows[i]);
    }
    fixed_.bind(times, row_matrix(dataset.normalized_times()));
    fixed_.bind(observed, picked);
    return loss_fit(g, function_of(Role::kSolution), times, observed, rows);
  };

  switch (config_.method) {
    case Method::kDhh: {
      collocation_ = g.input("collocation", {1, config_.collocation_points});
      first_times_ = g.input("pairs.first", {1, config_.energy_pairs});
      second_times_ = g.input("pairs.second", {1, config_.energy_pairs});
      fit_ = bind_observations();
      ham_ = loss_hnn_residual(g, function_of(Role::kSolution), function_of(Role::kHamiltonian),
                               collocation_, scale);
      extra_ = loss_extra(g, function_of(Role::kSolution), function_of(Role::kHamiltonian),
                          first_times_, second_times_);
      total_ = g.add(g.add(g.scale(fit_, config_.lambda_fit), g.scale(ham_, config_.lambda_ham)),
                     g.scale(extra_, config_.lambda_extra));
      break;
    }
    case Method::kDhpm: {
      collocation_ = g.input("collocation", {1, config_.collocation_points});
      fit_ = bind_observations();
      ham_ = loss_ode_residual(g, function_of(Role::kSolution), function_of(Role::kDynamics),
                               collocation_, scale);
      total_ = g.add(g.scale(fit_, config_.lambda_fit), g.scale(ham_, config_.lambda_ode));
      break;
    }
    case Method::kHnnFd:
    case Method::kHnnOracle: {
      require_full_observation(dataset, config_.method);
      Matrix targets;
      if (config_.method == Method::kHnnFd) {
        targets = data::finite_difference_targets(dataset.observations);
      } else {
        // simulator derivatives at the clean states behind each observation
        targets.resize(2 * dof, n);
        for (Index c = 0; c < n; ++c) {
          const auto clean = systems::PhaseState::from_flat(
              dataset.ground_truth.states.col(dataset.observation_indices[c]));
          targets.col(c) = systems::hamilton_rhs(dataset.system, clean).flat();
        }
      }
      NodeId states = g.input("obs.states", {2 * dof, n});
      NodeId rates = g.input("obs.rates", {2 * dof, n});
      fixed_.bind(states, dataset.observations.states);
      fixed_.bind(rates, targets);
      ham_ = loss_hnn_targets(g, function_of(Role::kHamiltonian), states, rates);
      total_ = ham_;
      break;
    }
    case Method::kNeuralOde: {
      require_full_observation(dataset, config_.method);
      if (n < 2) throw std::invalid_argument("neural_ode needs at least two observations");
      const Index pairs = n - 1;
      Eigen::VectorXd gaps = dataset.observations.times.tail(pairs) -
                             dataset.observations.times.head(pairs);
      const int substeps =
          std::max(1, static_cast<int>(std::ceil(gaps.maxCoeff() / config_.max_substep - 1e-9)));
      NodeId start = g.input("obs.start", {2 * dof, pairs});
      NodeId next = g.input("obs.next", {2 * dof, pairs});
      NodeId substep = g.input("obs.substep", {1, pairs});
      fixed_.bind(start, dataset.observations.states.leftCols(pairs));
      fixed_.bind(next, dataset.observations.states.rightCols(pairs));
      fixed_.bind(substep, row_matrix(gaps / static_cast<double>(substeps)));
      fit_ = loss_one_step(g, function_of(Role::kDynamics), start, next, substep, substeps);
      total_ = fit_;
      break;
    }
  }

  std::vector<NodeId> outputs{total_, fit_, ham_, extra_};
  const std::vector<NodeId> params = parameter_slots();
  for (NodeId grad : g.gradient(total_, params)) outputs.push_back(grad);
  program_ = std::make_unique<diffcore::Program>(graph_, std::move(outputs));
}

std::vector<NodeId> Objective::parameter_slots() const {
  std::vector<NodeId> all;
  for (const nets::MlpSlots& s : slots_) {
    for (NodeId id : s.all()) all.push_back(id);
  }
  return all;
}

StepInputs Objective::draw(Rng& rng) const {
  StepInputs in;
  in.collocation = sample_collocation(config_.collocation_points, rng);
  std::tie(in.first_times, in.second_times) = sample_pairs(config_.energy_pairs, rng);
  return in;
}

Bindings Objective::bind(const TrainedModel& model, const StepInputs& inputs) const {
  Bindings b = fixed_;
  for (std::size_t i = 0; i < roles_.size(); ++i) {
    const auto& net = model.net(roles_[i]);
    if (!net) {
      throw std::invalid_argument(
          fmt::format("model lacks the {} network", role_name(roles_[i])));
    }
    nets::bind_params(b, slots_[i], net->params);
  }
  if (collocation_.valid()) b.bind(collocation_, inputs.collocation);
  if (first_times_.valid()) b.bind(first_times_, inputs.first_times);
  if (second_times_.valid()) b.bind(second_times_, inputs.second_times);
  return b;
}

Evaluation Objective::run(const Bindings& bindings) const {
  std::vector<Matrix> out = program_->run(bindings);
  Evaluation ev;
  ev.total = out[0](0, 0);
  ev.fit = out[1](0, 0);
  ev.ham = out[2](0, 0);
  ev.extra = out[3](0, 0);
  std::size_t next = 4;
  for (const nets::MlpSlots& s : slots_) {
    std::vector<Matrix> grads;
    const std::size_t count = s.weights.size() * 2;
    for (std::size_t k = 0; k < count; ++k) grads.push_back(std::move(out[next++]));
    ev.gradients.push_back(std::move(grads));
  }
  return ev;
}

// ---------------------------------------------------------------------------

TrainResult train(const TrainConfig& config, const data::Dataset& dataset) {
  return train_from(config, dataset, initial_model(config, dataset));
}

TrainResult train_from(const TrainConfig& config, const data::Dataset& dataset,
                       TrainedModel model) {
  const Objective objective(config, dataset);
  Rng sampler = make_rng(config.seed, "collocation");

  std::vector<AdamState> adam;
  for (Role r : objective.roles()) adam.push_back(AdamState::zeros_like(nets::flatten(model.net(r)->params)));

  TrainResult result;
  result.curve.reserve(static_cast<std::size_t>(config.steps));
  for (long step = 0; step < config.steps; ++step) {
    const StepInputs inputs = objective.draw(sampler);
    const Evaluation ev = objective.run(objective.bind(model, inputs));
    if (!std::isfinite(ev.total)) {
      std::string term = "total";
      if (!std::isfinite(ev.fit)) term = "fit";
      else if (!std::isfinite(ev.ham)) term = "ham";
      else if (!std::isfinite(ev.extra)) term = "extra";
      throw NonFiniteError(
          fmt::format("{} diverged: loss term '{}' is not finite at step {}",
                      method_name(config.method), term, step),
          step, term);
    }
    result.curve.push_back({step, ev.total, ev.fit, ev.ham, ev.extra});

    for (std::size_t i = 0; i < objective.roles().size(); ++i) {
      const Role r = objective.roles()[i];
      Network& net = *model.net(r);
      std::vector<Matrix> flat = nets::flatten(net.params);
      const double lr = r == Role::kSolution ? config.lr_solution : config.lr_dynamics;
      try {
        adam_step(flat, ev.gradients[i], adam[i], lr, "total");
      } catch (const NonFiniteError& e) {
        throw NonFiniteError(fmt::format("{} diverged at step {}: {} ({} network)",
                                         method_name(config.method), step, e.what(), role_name(r)),
                             step, e.term());
      }
      net.params = nets::unflatten(net.config, flat);
    }
  }
  result.model = std::move(model);
  return result;
}

std::string loss_curve_csv(const std::vector<LossRecord>& curve) {
  std::string out = "step,loss_total,loss_fit,loss_ham,loss_extra\n";
  for (const LossRecord& r : curve) {
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.step, r.total, r.fit, r.ham,
                       r.extra);
  }
  return out;
}

}  // namespace dhh::training
