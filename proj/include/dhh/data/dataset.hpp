#pragma once

// Training datasets: dense ground truth from RK4, subsampled observations,
// additive Gaussian noise, time normalization to [-1, 1] and observability
// masks.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dhh/common/rng.hpp"
#include "dhh/data/trajectory.hpp"
#include "dhh/systems/systems.hpp"

namespace dhh::data {

enum class SamplingMode { kRegular, kIrregular };

std::string_view mode_name(SamplingMode mode);
SamplingMode mode_from_name(std::string_view name);

// normalized = scale * raw + offset
struct TimeMap {
  double scale = 1.0;
  double offset = 0.0;

  [[nodiscard]] double forward(double raw) const { return scale * raw + offset; }
  [[nodiscard]] double inverse(double normalized) const { return (normalized - offset) / scale; }
  [[nodiscard]] Eigen::VectorXd forward(const Eigen::VectorXd& raw) const;
};

struct Dataset {
  systems::SystemSpec system;
  Trajectory observations;  // raw times; unobserved coordinates hold NaN
  std::vector<bool> mask;   // 2d flags, true = observed
  double noise_sigma = 0.0;
  SamplingMode mode = SamplingMode::kRegular;
  std::uint64_t seed = 0;
  TimeMap time_map;
  // Dense clean trajectory, kept for evaluation and the simulator-derivative
  // baseline only. observation_indices are its columns that were observed.
  Trajectory ground_truth;
  std::vector<Eigen::Index> observation_indices;
  double ground_truth_step = 1e-3;

  [[nodiscard]] int dof() const { return system.dof(); }
  [[nodiscard]] Eigen::Index size() const { return observations.size(); }
  [[nodiscard]] Eigen::VectorXd normalized_times() const;
  [[nodiscard]] std::vector<Eigen::Index> observed_rows() const;
  [[nodiscard]] bool fully_observed() const;
  // Throws std::invalid_argument when an invariant is broken.
  void validate() const;
};

struct DatasetSpec {
  systems::SystemSpec system = systems::mass_spring();
  int n_points = 20;
  SamplingMode mode = SamplingMode::kRegular;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<bool> mask;  // empty: everything observed
  double t_end = 0.0;      // 0: system default
  double step = 1e-3;
};

// Raw observation horizon [0, T] per system.
double default_time_span(const systems::SystemSpec& system);

// Mask hiding every momentum coordinate.
std::vector<bool> position_only_mask(int dof);

// Dense RK4 ground truth on [0, t_end] from a sampled initial state. n-body
// trajectories whose bodies come closer than 0.1 are redrawn, at most 100
// times.
Trajectory generate_ground_truth(const systems::SystemSpec& system, std::uint64_t seed,
                                 double t_end, double step = 1e-3);

// Pure function of its argument: equal DatasetSpecs give bit-identical datasets.
Dataset make_dataset(const DatasetSpec& spec);

// Column indices chosen by subsample(); regular spacing or endpoints plus
// sorted interior draws without replacement.
std::vector<Eigen::Index> subsample_indices(Eigen::Index length, int n, SamplingMode mode,
                                            Rng& rng);
Trajectory subsample(const Trajectory& traj, int n, SamplingMode mode, Rng& rng);

Trajectory add_noise(const Trajectory& traj, double sigma, Rng& rng);

// Affine map sending (t_min, t_max) to (-1, 1); returns the mapped
// trajectory and the map.
std::pair<Trajectory, TimeMap> normalize_time(const Trajectory& traj);

// d state / dt at every observation: 3-point non-uniform central differences
// inside, 3-point one-sided at both ends. Exact for quadratics in t.
Eigen::MatrixXd finite_difference_targets(const Trajectory& traj);

// CSV "t,q1..qd,p1..pd" (17 significant digits) plus a JSON sidecar at the
// same path with extension ".json".
void write_dataset(const Dataset& dataset, const std::filesystem::path& csv_path);
Dataset read_dataset(const std::filesystem::path& csv_path);
std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);
nlohmann::json sidecar_json(const Dataset& dataset);

}  // namespace dhh::data
