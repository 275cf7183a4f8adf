#include "dhh/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "dhh/integrators/integrators.hpp"

namespace dhh::data {

using Eigen::Index;

std::string_view mode_name(SamplingMode mode) {
  return mode == SamplingMode::kRegular ? "regular" : "irregular";
}

SamplingMode mode_from_name(std::string_view name) {
  if (name == "regular") return SamplingMode::kRegular;
  if (name == "irregular") return SamplingMode::kIrregular;
  throw std::invalid_argument(
      fmt::format("unknown sampling mode '{}' (expected regular, irregular)", name));
}

Eigen::VectorXd TimeMap::forward(const Eigen::VectorXd& raw) const {
  return (scale * raw.array() + offset).matrix();
}

Eigen::VectorXd Dataset::normalized_times() const { return time_map.forward(observations.times); }

std::vector<Index> Dataset::observed_rows() const {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) rows.push_back(static_cast<Index>(i));
  }
  return rows;
}

bool Dataset::fully_observed() const {
  return std::all_of(mask.begin(), mask.end(), [](bool b) { return b; });
}

void Dataset::validate() const {
  observations.validate();
  if (observations.dimension() != 2 * dof()) {
    throw std::invalid_argument(fmt::format("dataset states have {} rows, system needs {}",
                                            observations.dimension(), 2 * dof()));
  }
  if (mask.size() != static_cast<std::size_t>(2 * dof())) {
    throw std::invalid_argument(
        fmt::format("mask has {} flags, expected {}", mask.size(), 2 * dof()));
  }
  if (observed_rows().empty()) throw std::invalid_argument("mask hides every coordinate");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise sigma must be non-negative");
  const Eigen::VectorXd tau = normalized_times();
  for (Index i = 0; i < tau.size(); ++i) {
    if (tau[i] < -1.0 - 1e-12 || tau[i] > 1.0 + 1e-12) {
      throw std::invalid_argument(fmt::format("observation time {} maps outside [-1, 1]",
                                              observations.times[i]));
    }
  }
}

double default_time_span(const systems::SystemSpec& system) {
  if (system.kind == systems::SystemKind::kNBody && system.bodies() >= 3) return 5.0;
  return 10.0;
}

std::vector<bool> position_only_mask(int dof) {
  std::vector<bool> mask(static_cast<std::size_t>(2 * dof), false);
  std::fill(mask.begin(), mask.begin() + dof, true);
  return mask;
}

namespace {

double trajectory_min_distance(const systems::SystemSpec& system, const Trajectory& traj) {
  double best = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < traj.size(); ++c) {
    best = std::min(best, systems::min_pairwise_distance(
                              system, systems::PhaseState::from_flat(traj.states.col(c))));
  }
  return best;
}

}  // namespace

Trajectory generate_ground_truth(const systems::SystemSpec& system, std::uint64_t seed,
                                 double t_end, double step) {
  Rng rng = make_rng(seed, "initial_state");
  integrators::RolloutSpec spec{0.0, t_end, step, integrators::Scheme::kRk4};
  auto rhs = [&system](double, const Eigen::VectorXd& s) {
    return systems::hamilton_rhs(system, systems::PhaseState::from_flat(s)).flat();
  };
  constexpr int kMaxRetries = 100;
  constexpr double kMinDistance = 0.1;
  for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
    const systems::PhaseState initial = systems::sample_initial_state(system, rng);
    try {
      Trajectory traj = integrators::rollout(rhs, initial.flat(), spec);
      if (system.kind != systems::SystemKind::kNBody ||
          trajectory_min_distance(system, traj) >= kMinDistance) {
        return traj;
      }
    } catch (const integrators::IntegrationError&) {
      // close encounter blew up; redraw
    } catch (const systems::SingularityError&) {
    }
  }
  throw std::runtime_error(fmt::format(
      "no {} trajectory kept bodies {} apart after {} retries", system.name(), kMinDistance,
      kMaxRetries));
}

std::vector<Index> subsample_indices(Index length, int n, SamplingMode mode, Rng& rng) {
  if (n < 2) throw std::invalid_argument(fmt::format("need at least 2 samples, got {}", n));
  if (n > length) {
    throw std::invalid_argument(fmt::format("cannot take {} samples from {} points", n, length));
  }
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(n));
  if (mode == SamplingMode::kRegular) {
    for (int i = 0; i < n; ++i) {
      idx.push_back(static_cast<Index>(
          std::llround(static_cast<double>(i) * static_cast<double>(length - 1) / (n - 1))));
    }
    return idx;
  }
  std::vector<Index> interior(static_cast<std::size_t>(length - 2));
  std::iota(interior.begin(), interior.end(), Index{1});
  idx.push_back(0);
  std::sample(interior.begin(), interior.end(), std::back_inserter(idx), n - 2, rng);
  idx.push_back(length - 1);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

Trajectory take_columns(const Trajectory& traj, const std::vector<Index>& idx) {
  Trajectory out{Eigen::VectorXd(static_cast<Index>(idx.size())),
                 Eigen::MatrixXd(traj.dimension(), static_cast<Index>(idx.size()))};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.times[static_cast<Index>(k)] = traj.times[idx[k]];
    out.states.col(static_cast<Index>(k)) = traj.states.col(idx[k]);
  }
  return out;
}

}  // namespace

Trajectory subsample(const Trajectory& traj, int n, SamplingMode mode, Rng& rng) {
  traj.validate();
  return take_columns(traj, subsample_indices(traj.size(), n, mode, rng));
}

Trajectory add_noise(const Trajectory& traj, double sigma, Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("noise sigma must be non-negative");
  Trajectory out = traj;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (Index c = 0; c < out.states.cols(); ++c) {
    for (Index r = 0; r < out.states.rows(); ++r) out.states(r, c) += noise(rng);
  }
  return out;
}

std::pair<Trajectory, TimeMap> normalize_time(const Trajectory& traj) {
  if (traj.size() < 2) throw std::invalid_argument("time normalization needs two times");
  const double lo = traj.times.minCoeff();
  const double hi = traj.times.maxCoeff();
  if (!(hi > lo)) throw std::invalid_argument("time normalization needs distinct times");
  TimeMap map{2.0 / (hi - lo), -(hi + lo) / (hi - lo)};
  Trajectory out = traj;
  out.times = map.forward(traj.times);
  return {std::move(out), map};
}

Eigen::MatrixXd finite_difference_targets(const Trajectory& traj) {
  traj.validate();
  const Index n = traj.size();
  if (n < 3) throw std::invalid_argument("finite differences need at least 3 observations");
  const Eigen::VectorXd& t = traj.times;
  const Eigen::MatrixXd& s = traj.states;
  Eigen::MatrixXd d(s.rows(), n);

  // Derivative of the quadratic through (t0, t1, t2) evaluated at `at`.
  auto three_point = [&](Index i0, Index i1, Index i2, double at) {
    const double t0 = t[i0], t1 = t[i1], t2 = t[i2];
    const double w0 = ((at - t1) + (at - t2)) / ((t0 - t1) * (t0 - t2));
    const double w1 = ((at - t0) + (at - t2)) / ((t1 - t0) * (t1 - t2));
    const double w2 = ((at - t0) + (at - t1)) / ((t2 - t0) * (t2 - t1));
    return Eigen::VectorXd(w0 * s.col(i0) + w1 * s.col(i1) + w2 * s.col(i2));
  };
  d.col(0) = three_point(0, 1, 2, t[0]);
  for (Index i = 1; i + 1 < n; ++i) d.col(i) = three_point(i - 1, i, i + 1, t[i]);
  d.col(n - 1) = three_point(n - 3, n - 2, n - 1, t[n - 1]);
  return d;
}

Dataset make_dataset(const DatasetSpec& spec) {
  const int dof = spec.system.dof();
  const double t_end = spec.t_end > 0.0 ? spec.t_end : default_time_span(spec.system);

  Dataset ds;
  ds.system = spec.system;
  ds.noise_sigma = spec.sigma;
  ds.mode = spec.mode;
  ds.seed = spec.seed;
  ds.ground_truth_step = spec.step;
  ds.mask = spec.mask.empty() ? std::vector<bool>(static_cast<std::size_t>(2 * dof), true)
                              : spec.mask;
  ds.ground_truth = generate_ground_truth(spec.system, spec.seed, t_end, spec.step);

  Rng pick = make_rng(spec.seed, "subsample");
  ds.observation_indices = subsample_indices(ds.ground_truth.size(), spec.n_points, spec.mode, pick);
  Trajectory clean = take_columns(ds.ground_truth, ds.observation_indices);

  Rng noise = make_rng(spec.seed, "noise");
  ds.observations = add_noise(clean, spec.sigma, noise);
  ds.time_map = normalize_time(ds.observations).second;

  for (std::size_t r = 0; r < ds.mask.size(); ++r) {
    if (!ds.mask[r]) {
      ds.observations.states.row(static_cast<Index>(r))
          .setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Files

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_extension(".json");
  return p;
}

namespace {

nlohmann::json system_json(const systems::SystemSpec& s) {
  nlohmann::json j{{"name", s.name()}};
  switch (s.kind) {
    case systems::SystemKind::kMassSpring:
      j["mass"] = s.mass;
      j["stiffness"] = s.stiffness;
      break;
    case systems::SystemKind::kPendulum:
      j["mass"] = s.mass;
      j["length"] = s.length;
      j["gravity"] = s.gravity;
      break;
    case systems::SystemKind::kNBody:
      j["gravitational_constant"] = s.gravitational_constant;
      j["masses"] = s.masses;
      break;
  }
  return j;
}

systems::SystemSpec system_from_json(const nlohmann::json& j) {
  systems::SystemSpec s = systems::system_from_name(j.at("name").get<std::string>());
  s.mass = j.value("mass", s.mass);
  s.stiffness = j.value("stiffness", s.stiffness);
  s.length = j.value("length", s.length);
  s.gravity = j.value("gravity", s.gravity);
  s.gravitational_constant = j.value("gravitational_constant", s.gravitational_constant);
  if (j.contains("masses")) s.masses = j.at("masses").get<std::vector<double>>();
  return s;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{:.17g}", v);
}

}  // namespace

nlohmann::json sidecar_json(const Dataset& ds) {
  std::vector<Index> idx = ds.observation_indices;
  return {
      {"system", ds.system.name()},
      {"params", system_json(ds.system)},
      {"sigma", ds.noise_sigma},
      {"mode", mode_name(ds.mode)},
      {"seed", ds.seed},
      {"n_points", ds.size()},
      {"time_map", {{"scale", ds.time_map.scale}, {"offset", ds.time_map.offset}}},
      {"mask", ds.mask},
      {"t_end", ds.ground_truth.times[ds.ground_truth.size() - 1]},
      {"ground_truth_step", ds.ground_truth_step},
      {"observation_indices", idx},
  };
}

void write_dataset(const Dataset& ds, const std::filesystem::path& csv_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error(fmt::format("cannot write '{}'", csv_path.string()));
  const int d = ds.dof();
  csv << "t";
  for (int i = 1; i <= d; ++i) csv << ",q" << i;
  for (int i = 1; i <= d; ++i) csv << ",p" << i;
  csv << '\n';
  for (Index c = 0; c < ds.size(); ++c) {
    csv << format_double(ds.observations.times[c]);
    for (Index r = 0; r < ds.observations.dimension(); ++r) {
      csv << ',' << format_double(ds.observations.states(r, c));
    }
    csv << '\n';
  }
  if (!csv) throw std::runtime_error(fmt::format("failed writing '{}'", csv_path.string()));

  std::ofstream side(sidecar_path(csv_path));
  if (!side) {
    throw std::runtime_error(fmt::format("cannot write '{}'", sidecar_path(csv_path).string()));
  }
  side << sidecar_json(ds).dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& csv_path) {
  std::ifstream side(sidecar_path(csv_path));
  if (!side) {
    throw std::runtime_error(
        fmt::format("missing dataset sidecar '{}'", sidecar_path(csv_path).string()));
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(side);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(fmt::format("dataset sidecar is not valid JSON: {}", e.what()));
  }

  Dataset ds;
  try {
    ds.system = system_from_json(meta.at("params"));
    ds.noise_sigma = meta.at("sigma").get<double>();
    ds.mode = mode_from_name(meta.at("mode").get<std::string>());
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.time_map = {meta.at("time_map").at("scale").get<double>(),
                   meta.at("time_map").at("offset").get<double>()};
    ds.mask = meta.at("mask").get<std::vector<bool>>();
    ds.ground_truth_step = meta.at("ground_truth_step").get<double>();
    ds.observation_indices = meta.at("observation_indices").get<std::vector<Index>>();
    ds.ground_truth = generate_ground_truth(ds.system, ds.seed, meta.at("t_end").get<double>(),
                                            ds.ground_truth_step);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(fmt::format("dataset sidecar field error: {}", e.what()));
  }

  std::ifstream csv(csv_path);
  if (!csv) throw std::runtime_error(fmt::format("cannot read '{}'", csv_path.string()));
  std::string line;
  std::getline(csv, line);
  const int d = ds.dof();
  std::vector<double> times;
  std::vector<std::vector<double>> rows;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) values.push_back(std::strtod(cell.c_str(), nullptr));
    if (values.size() != static_cast<std::size_t>(2 * d + 1)) {
      throw std::runtime_error(fmt::format("dataset row has {} columns, expected {}",
                                           values.size(), 2 * d + 1));
    }
    times.push_back(values[0]);
    rows.emplace_back(values.begin() + 1, values.end());
  }
  const auto n = static_cast<Index>(times.size());
  ds.observations.times = Eigen::Map<Eigen::VectorXd>(times.data(), n);
  ds.observations.states.resize(2 * d, n);
  for (Index c = 0; c < n; ++c) {
    for (Index r = 0; r < 2 * d; ++r) ds.observations.states(r, c) = rows[c][r];
  }
  if (ds.observation_indices.size() != static_cast<std::size_t>(n)) {
    throw std::runtime_error("dataset sidecar and CSV disagree on the number of observations");
  }
  ds.validate();
  return ds;
}

}  // namespace dhh::data
