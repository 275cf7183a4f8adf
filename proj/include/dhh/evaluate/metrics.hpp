#pragma once

// Trajectory reconstruction from trained models and the error measures used
// to compare methods.

#include <cstddef>
#include <optional>
#include <string_view>

#include <Eigen/Dense>

#include "dhh/data/dataset.hpp"
#include "dhh/integrators/integrators.hpp"
#include "dhh/nets/mlp.hpp"
#include "dhh/systems/systems.hpp"
#include "dhh/training/trainer.hpp"

namespace dhh::evaluate {

using data::Trajectory;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// How a trajectory is read out of a model: straight from the solution net,
// or by integrating the learned vector field with a fixed-step scheme.
enum class ReadOut { kSolution, kEuler, kRk2, kRk4 };

std::string_view readout_name(ReadOut readout);
ReadOut readout_from_name(std::string_view name);
// Solution net for dhh and dhpm, RK4 for the vector-field methods.
ReadOut default_readout(training::Method method);

// Where integration starts.
enum class InitialState { kFirstObservation, kSolutionNet, kTrue };

std::string_view initial_state_name(InitialState initial);
InitialState initial_state_from_name(std::string_view name);

struct ReconstructOptions {
  ReadOut readout = ReadOut::kSolution;
  InitialState initial = InitialState::kFirstObservation;
  double step = 1e-3;  // integration step, raw time
};

struct Reconstruction {
  Trajectory trajectory;
  std::size_t rhs_evaluations = 0;  // vector-field calls spent integrating
};

// evaluation_points evenly spaced times over the observed interval.
VectorXd evaluation_grid(const data::Dataset& dataset, int points = 500);

// Learned Hamiltonian gradient (dH/dq, dH/dp) of a model with an H-net.
systems::GradientFn learned_gradient(const nets::CompiledMlp& hamiltonian);

// Vector field of the model: Hamilton's equations of the H-net, or the
// dynamics net as is.
integrators::Rhs learned_rhs(const training::TrainedModel& model);

// Throws std::invalid_argument when the model cannot provide the requested
// read-out, and integrators::IntegrationError when a rollout blows up.
Reconstruction reconstruct_trajectory(const training::TrainedModel& model,
                                      const data::Dataset& dataset, const VectorXd& times,
                                      const ReconstructOptions& options);

// Dense ground truth interpolated at the given times.
Trajectory truth_at(const data::Dataset& dataset, const VectorXd& times);

struct TrajectoryError {
  double mse = 0.0;
  double log_mse = 0.0;          // ln(max(mse, 1e-12))
  VectorXd per_coordinate;       // mean squared error of each phase coordinate
};

// Both trajectories must share their time stamps.
TrajectoryError traj_log_mse(const Trajectory& estimate, const Trajectory& truth);

double log_floor(double mse);

struct HamiltonianComparison {
  double rmse = 0.0;    // of H_learned - H_true after removing the mean offset
  double cosine = 0.0;  // mean cosine between learned and true gradient fields
  std::size_t points = 0;
  std::size_t excluded = 0;  // n-body grid points too close to a collision
};

struct ProbeBox {
  VectorXd lower;
  VectorXd upper;
};

// Box visited by the dense ground truth, padded by `pad` of its extent on
// each side.
ProbeBox visited_box(const Trajectory& truth, double pad = 0.1);

// Regular grid over the box with about `budget` points in total.
MatrixXd probe_grid(const ProbeBox& box, std::size_t budget = 4096);

// Grid points closer than this to a collision are skipped for n-body systems.
inline constexpr double kSingularDistance = 0.1;

HamiltonianComparison compare_hamiltonian(const systems::SystemSpec& system,
                                          const std::function<double(const VectorXd&)>& energy,
                                          const systems::GradientFn& gradient,
                                          const MatrixXd& probes);

HamiltonianComparison compare_hamiltonian(const training::TrainedModel& model,
                                          const data::Dataset& dataset);

struct OffsetCorrected {
  double rmse = 0.0;
  double correlation = 0.0;
  bool degenerate = false;  // zero variance somewhere; correlation reported as 0
};

// Compares two signals up to an additive constant.
OffsetCorrected compare_up_to_constant(const VectorXd& estimate, const VectorXd& truth);

struct HiddenCoordinateReport {
  std::vector<Eigen::Index> rows;          // masked phase coordinates
  std::vector<OffsetCorrected> per_row;
  double worst_correlation = 0.0;
  double worst_rmse = 0.0;
};

// Reconstructs every masked coordinate from the solution net on the grid
// and compares it with the ground truth up to a constant.
HiddenCoordinateReport check_hidden_coordinate(const training::TrainedModel& model,
                                               const data::Dataset& dataset,
                                               const VectorXd& times);

}  // namespace dhh::evaluate
