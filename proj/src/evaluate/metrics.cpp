#include "dhh/evaluate/metrics.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include <fmt/format.h>

namespace dhh::evaluate {

using training::Method;
using training::Role;
using training::TrainedModel;

std::string_view readout_name(ReadOut readout) {
  switch (readout) {
    case ReadOut::kSolution: return "solution";
    case ReadOut::kEuler: return "euler";
    case ReadOut::kRk2: return "rk2";
    case ReadOut::kRk4: return "rk4";
  }
  return "unknown";
}

ReadOut readout_from_name(std::string_view name) {
  for (ReadOut r : {ReadOut::kSolution, ReadOut::kEuler, ReadOut::kRk2, ReadOut::kRk4}) {
    if (readout_name(r) == name) return r;
  }
  throw std::invalid_argument(
      fmt::format("unknown scheme '{}' (allowed: solution, euler, rk2, rk4)", name));
}

ReadOut default_readout(Method method) {
  return method == Method::kDhh || method == Method::kDhpm ? ReadOut::kSolution : ReadOut::kRk4;
}

std::string_view initial_state_name(InitialState initial) {
  switch (initial) {
    case InitialState::kFirstObservation: return "first_observation";
    case InitialState::kSolutionNet: return "solution_net";
    case InitialState::kTrue: return "true";
  }
  return "unknown";
}

InitialState initial_state_from_name(std::string_view name) {
  for (InitialState s :
       {InitialState::kFirstObservation, InitialState::kSolutionNet, InitialState::kTrue}) {
    if (initial_state_name(s) == name) return s;
  }
  throw std::invalid_argument(fmt::format(
      "unknown initial state '{}' (allowed: first_observation, solution_net, true)", name));
}

VectorXd evaluation_grid(const data::Dataset& dataset, int points) {
  if (points < 2) throw std::invalid_argument("evaluation grid needs at least two points");
  const VectorXd& t = dataset.observations.times;
  return VectorXd::LinSpaced(points, t(0), t(t.size() - 1));
}

namespace {

std::shared_ptr<nets::CompiledMlp> compile(const std::optional<training::Network>& net,
                                           Role role) {
  if (!net) {
    throw std::invalid_argument(fmt::format("model has no {} network", training::role_name(role)));
  }
  return std::make_shared<nets::CompiledMlp>(net->config, net->params);
}

MatrixXd solution_states(const TrainedModel& model, const VectorXd& raw_times) {
  const auto net = compile(model.solution, Role::kSolution);
  return net->forward(MatrixXd(model.time_map.forward(raw_times).transpose()));
}

}  // namespace

systems::GradientFn learned_gradient(const nets::CompiledMlp& hamiltonian) {
  return [&hamiltonian](const systems::PhaseState& s) {
    const MatrixXd jac = hamiltonian.jacobian(VectorXd(s.flat()));
    return systems::PhaseState::from_flat(jac.row(0).transpose());
  };
}

integrators::Rhs learned_rhs(const TrainedModel& model) {
  if (model.hamiltonian) {
    auto net = compile(model.hamiltonian, Role::kHamiltonian);
    return [net](double, const VectorXd& x) {
      return systems::hamilton_rhs(learned_gradient(*net), systems::PhaseState::from_flat(x)).flat();
    };
  }
  auto net = compile(model.dynamics, Role::kDynamics);
  return [net](double, const VectorXd& x) { return VectorXd(net->forward(x)); };
}

Trajectory truth_at(const data::Dataset& dataset, const VectorXd& times) {
  return data::interpolate(dataset.ground_truth, times);
}

Reconstruction reconstruct_trajectory(const TrainedModel& model, const data::Dataset& dataset,
                                      const VectorXd& times, const ReconstructOptions& options) {
  if (times.size() == 0) throw std::invalid_argument("no evaluation times");
  Reconstruction out;
  if (options.readout == ReadOut::kSolution) {
    out.trajectory = {times, solution_states(model, times)};
    return out;
  }

  const double t0 = dataset.observations.times(0);
  if (times.minCoeff() < t0 - 1e-9) {
    throw std::invalid_argument("evaluation times start before the first observation");
  }
  VectorXd initial;
  switch (options.initial) {
    case InitialState::kFirstObservation:
      initial = dataset.observations.states.col(0);
      if (!initial.allFinite()) {
        throw std::invalid_argument(
            "first observation is partially masked; start from the solution net instead");
      }
      break;
    case InitialState::kSolutionNet:
      initial = solution_states(model, VectorXd::Constant(1, t0)).col(0);
      break;
    case InitialState::kTrue:
      initial = truth_at(dataset, VectorXd::Constant(1, t0)).states.col(0);
      break;
  }

  const integrators::Rhs field = learned_rhs(model);
  std::size_t calls = 0;
  const integrators::Rhs counted = [&](double t, const VectorXd& x) {
    ++calls;
    return field(t, x);
  };
  integrators::RolloutSpec spec;
  spec.t_start = t0;
  spec.t_end = std::max(times.maxCoeff(), t0 + options.step);
  spec.step = options.step;
  switch (options.readout) {
    case ReadOut::kEuler: spec.scheme = integrators::Scheme::kEuler; break;
    case ReadOut::kRk2: spec.scheme = integrators::Scheme::kRk2; break;
    default: spec.scheme = integrators::Scheme::kRk4; break;
  }
  const Trajectory dense = integrators::rollout(counted, initial, spec);
  out.trajectory = data::interpolate(dense, times);
  out.rhs_evaluations = calls;
  return out;
}

double log_floor(double mse) {
  if (!std::isfinite(mse)) return std::numeric_limits<double>::infinity();
  return std::log(std::max(mse, 1e-12));
}

TrajectoryError traj_log_mse(const Trajectory& estimate, const Trajectory& truth) {
  if (estimate.size() != truth.size() || estimate.dimension() != truth.dimension()) {
    throw std::invalid_argument(fmt::format("trajectories are misaligned: {}x{} vs {}x{}",
                                            estimate.dimension(), estimate.size(),
                                            truth.dimension(), truth.size()));
  }
  if (estimate.size() == 0) throw std::invalid_argument("empty trajectories");
  const double span = std::max(1.0, truth.times.cwiseAbs().maxCoeff());
  if ((estimate.times - truth.times).cwiseAbs().maxCoeff() > 1e-9 * span) {
    throw std::invalid_argument("trajectories are sampled at different times");
  }
  TrajectoryError e;
  const MatrixXd sq = (estimate.states - truth.states).array().square().matrix();
  e.per_coordinate = sq.rowwise().mean();
  e.mse = sq.mean();
  e.log_mse = log_floor(e.mse);
  return e;
}

ProbeBox visited_box(const Trajectory& truth, double pad) {
  ProbeBox box{truth.states.rowwise().minCoeff(), truth.states.rowwise().maxCoeff()};
  for (Eigen::Index i = 0; i < box.lower.size(); ++i) {
    double extent = box.upper(i) - box.lower(i);
    if (extent <= 0.0) extent = 1.0;
    box.lower(i) -= pad * extent;
    box.upper(i) += pad * extent;
  }
  return box;
}

MatrixXd probe_grid(const ProbeBox& box, std::size_t budget) {
  const auto dims = box.lower.size();
  if (dims == 0) throw std::invalid_argument("probe box has no dimensions");
  const double root = std::pow(static_cast<double>(budget), 1.0 / static_cast<double>(dims));
  const auto per_axis = std::max<Eigen::Index>(2, static_cast<Eigen::Index>(root + 1e-9));
  Eigen::Index total = 1;
  for (Eigen::Index d = 0; d < dims; ++d) total *= per_axis;
  MatrixXd grid(dims, total);
  for (Eigen::Index c = 0; c < total; ++c) {
    Eigen::Index rest = c;
    for (Eigen::Index d = 0; d < dims; ++d) {
      const Eigen::Index k = rest % per_axis;
      rest /= per_axis;
      const double frac = static_cast<double>(k) / static_cast<double>(per_axis - 1);
      grid(d, c) = box.lower(d) + frac * (box.upper(d) - box.lower(d));
    }
  }
  return grid;
}

HamiltonianComparison compare_hamiltonian(const systems::SystemSpec& system,
                                          const std::function<double(const VectorXd&)>& energy,
                                          const systems::GradientFn& gradient,
                                          const MatrixXd& probes) {
  HamiltonianComparison out;
  std::vector<double> offsets;
  double cosine_sum = 0.0;
  for (Eigen::Index c = 0; c < probes.cols(); ++c) {
    const auto state = systems::PhaseState::from_flat(probes.col(c));
    if (system.kind == systems::SystemKind::kNBody &&
        systems::min_pairwise_distance(system, state) < kSingularDistance) {
      ++out.excluded;
      continue;
    }
    offsets.push_back(energy(probes.col(c)) - systems::hamiltonian_true(system, state));
    const VectorXd a = gradient(state).flat();
    const VectorXd b = systems::hamiltonian_gradient_true(system, state).flat();
    const double norms = a.norm() * b.norm();
    cosine_sum += norms > 0.0 ? a.dot(b) / norms : 0.0;
  }
  out.points = offsets.size();
  if (out.points == 0) throw std::invalid_argument("no usable probe points");
  // copy into aligned storage: reductions over a Map of std::vector memory
  // depend on the buffer address once vectorized
  const VectorXd diff = Eigen::Map<const VectorXd>(offsets.data(), static_cast<Eigen::Index>(offsets.size()));
  out.rmse = std::sqrt((diff.array() - diff.mean()).square().mean());
  out.cosine = cosine_sum / static_cast<double>(out.points);
  return out;
}

HamiltonianComparison compare_hamiltonian(const TrainedModel& model, const data::Dataset& dataset) {
  const auto net = compile(model.hamiltonian, Role::kHamiltonian);
  const auto energy = [&net](const VectorXd& x) { return net->forward(x)(0); };
  return compare_hamiltonian(dataset.system, energy, learned_gradient(*net),
                             probe_grid(visited_box(dataset.ground_truth)));
}

OffsetCorrected compare_up_to_constant(const VectorXd& estimate, const VectorXd& truth) {
  if (estimate.size() != truth.size() || estimate.size() == 0) {
    throw std::invalid_argument("signals must be non-empty and of equal length");
  }
  OffsetCorrected out;
  const VectorXd diff = estimate - truth;
  out.rmse = std::sqrt((diff.array() - diff.mean()).square().mean());
  const VectorXd a = estimate.array() - estimate.mean();
  const VectorXd b = truth.array() - truth.mean();
  const double norms = a.norm() * b.norm();
  if (!(norms > 0.0)) {
    out.degenerate = true;
    out.correlation = 0.0;
  } else {
    out.correlation = a.dot(b) / norms;
  }
  return out;
}

HiddenCoordinateReport check_hidden_coordinate(const TrainedModel& model,
                                               const data::Dataset& dataset,
                                               const VectorXd& times) {
  HiddenCoordinateReport report;
  for (std::size_t i = 0; i < dataset.mask.size(); ++i) {
    if (!dataset.mask[i]) report.rows.push_back(static_cast<Eigen::Index>(i));
  }
  if (report.rows.empty()) throw std::invalid_argument("dataset has no hidden coordinate");
  const MatrixXd estimate = solution_states(model, times);
  const Trajectory truth = truth_at(dataset, times);
  report.worst_correlation = std::numeric_limits<double>::infinity();
  for (Eigen::Index r : report.rows) {
    report.per_row.push_back(compare_up_to_constant(estimate.row(r).transpose(),
                                                    truth.states.row(r).transpose()));
    report.worst_correlation = std::min(report.worst_correlation, report.per_row.back().correlation);
    report.worst_rmse = std::max(report.worst_rmse, report.per_row.back().rmse);
  }
  return report;
}

}  // namespace dhh::evaluate
