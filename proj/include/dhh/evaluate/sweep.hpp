#pragma once

// Single experiments (generate, train, reconstruct, score) and sweeps over
// systems, methods, sampling rates, noise levels and seeds.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dhh/data/dataset.hpp"
#include "dhh/evaluate/metrics.hpp"
#include "dhh/training/trainer.hpp"

namespace dhh::evaluate {

struct ExperimentSpec {
  data::DatasetSpec data;
  training::TrainConfig train;
  std::optional<ReadOut> readout;  // default_readout(method) when empty
  int grid_points = 500;
};

struct ExperimentResult {
  std::string method;  // label; ablation runs carry the lambda_extra value
  std::string system;
  int n_points = 0;
  double noise_sigma = 0.0;
  double lambda_extra = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;  // diagnostic of a failed run
  double mse = 0.0;
  double log_mse = 0.0;
  VectorXd per_coordinate;
  double wall_seconds = 0.0;  // kept out of result files so reruns stay byte-identical
};

// Never throws for training or integration failures; they come back as
// failed results with +inf errors.
ExperimentResult run_experiment(const ExperimentSpec& spec);

struct SweepConfig {
  std::vector<std::string> systems{"mass_spring"};
  std::vector<training::Method> methods{training::Method::kDhh};
  std::vector<int> n_points{20};
  std::vector<double> sigmas{0.0};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  data::SamplingMode mode = data::SamplingMode::kRegular;
  // Non-empty switches to ablation: every dhh run is repeated per value.
  std::vector<double> lambda_extra;
  // Applied on top of each system's default TrainConfig.
  nlohmann::json train_overrides = nlohmann::json::object();
  int grid_points = 500;
  int jobs = 1;

  void validate() const;
};

nlohmann::json to_json(const SweepConfig& config);
SweepConfig sweep_config_from_json(const nlohmann::json& j);

struct CellStats {
  std::string system;
  std::string method;
  int n_points = 0;
  double sigma = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;  // +inf when any run of the cell failed
  int runs = 0;
  int failures = 0;
};

struct SweepReport {
  std::vector<ExperimentResult> runs;  // in expansion order
  std::vector<CellStats> cells;
};

// Training config of one run in a sweep.
training::TrainConfig run_config(const SweepConfig& config, const std::string& system,
                                 training::Method method, std::uint64_t seed,
                                 std::optional<double> lambda_extra);

// Full cross product of runs, executed on up to config.jobs threads.
SweepReport sweep(const SweepConfig& config);

// Groups runs by (system, method, n_points, sigma), keeping first-seen order.
std::vector<CellStats> aggregate(const std::vector<ExperimentResult>& runs);

// Nested system -> method -> n_points -> list of cells (one per sigma).
nlohmann::json report_json(const SweepReport& report);
SweepReport report_from_json(const nlohmann::json& j);
// system,method,n_points,sigma,seed,mse,log_mse
std::string report_csv(const SweepReport& report);

std::string ablation_label(double lambda_extra);

}  // namespace dhh::evaluate
