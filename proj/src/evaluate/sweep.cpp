#include "dhh/evaluate/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>

namespace dhh::evaluate {

using nlohmann::json;
using training::Method;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

json number_or_marker(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

double number_from(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw std::invalid_argument(fmt::format("bad number marker '{}'", s));
  }
  return j.get<double>();
}

}  // namespace

std::string ablation_label(double lambda_extra) {
  return fmt::format("dhh/lambda_extra={}", lambda_extra);
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  const auto started = std::chrono::steady_clock::now();
  ExperimentResult r;
  r.method = std::string(training::method_name(spec.train.method));
  r.system = spec.data.system.name();
  r.n_points = spec.data.n_points;
  r.noise_sigma = spec.data.sigma;
  r.lambda_extra = spec.train.lambda_extra;
  r.seed = spec.data.seed;
  try {
    const data::Dataset dataset = data::make_dataset(spec.data);
    const training::TrainResult trained = training::train(spec.train, dataset);
    ReconstructOptions options;
    options.readout = spec.readout.value_or(default_readout(spec.train.method));
    const VectorXd grid = evaluation_grid(dataset, spec.grid_points);
    const Reconstruction rec = reconstruct_trajectory(trained.model, dataset, grid, options);
    const TrajectoryError err = traj_log_mse(rec.trajectory, truth_at(dataset, grid));
    r.mse = err.mse;
    r.log_mse = err.log_mse;
    r.per_coordinate = err.per_coordinate;
    if (!std::isfinite(r.mse)) throw integrators::IntegrationError("non-finite reconstruction", 0.0);
  } catch (const std::exception& e) {
    r.failed = true;
    r.failure = e.what();
    r.mse = kInf;
    r.log_mse = kInf;
    r.per_coordinate.resize(0);
  }
  r.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return r;
}

void SweepConfig::validate() const {
  if (systems.empty() || methods.empty() || n_points.empty() || sigmas.empty() || seeds.empty()) {
    throw std::invalid_argument("sweep grids must be non-empty");
  }
  for (const auto& s : systems) (void)systems::system_from_name(s);
  for (int n : n_points) {
    if (n < 3) throw std::invalid_argument("sweep n_points entries must be >= 3");
  }
  for (double s : sigmas) {
    if (!(s >= 0.0)) throw std::invalid_argument("sweep sigmas must be >= 0");
  }
  for (double l : lambda_extra) {
    if (!(l >= 0.0)) throw std::invalid_argument("sweep lambda_extra values must be >= 0");
  }
  if (!lambda_extra.empty() &&
      std::find(methods.begin(), methods.end(), Method::kDhh) == methods.end()) {
    throw std::invalid_argument("lambda_extra ablation needs the dhh method");
  }
  if (!train_overrides.is_object()) throw std::invalid_argument("sweep 'train' must be an object");
  for (const char* reserved : {"method", "seed"}) {
    if (train_overrides.contains(reserved)) {
      throw std::invalid_argument(
          fmt::format("sweep 'train' must not set '{}'; it is set per run", reserved));
    }
  }
  if (grid_points < 2) throw std::invalid_argument("sweep grid_points must be >= 2");
  if (jobs < 1) throw std::invalid_argument("sweep jobs must be >= 1");
}

json to_json(const SweepConfig& c) {
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(training::method_name(m));
  return {{"systems", c.systems},
          {"methods", methods},
          {"n_points", c.n_points},
          {"sigmas", c.sigmas},
          {"seeds", c.seeds},
          {"mode", data::mode_name(c.mode)},
          {"lambda_extra", c.lambda_extra},
          {"train", c.train_overrides},
          {"grid_points", c.grid_points},
          {"jobs", c.jobs}};
}

SweepConfig sweep_config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("sweep config must be a JSON object");
  SweepConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "systems") c.systems = value.get<std::vector<std::string>>();
      else if (key == "methods") {
        c.methods.clear();
        for (const auto& m : value) c.methods.push_back(training::method_from_name(m.get<std::string>()));
      } else if (key == "n_points") c.n_points = value.get<std::vector<int>>();
      else if (key == "sigmas") c.sigmas = value.get<std::vector<double>>();
      else if (key == "seeds") c.seeds = value.get<std::vector<std::uint64_t>>();
      else if (key == "mode") c.mode = data::mode_from_name(value.get<std::string>());
      else if (key == "lambda_extra") c.lambda_extra = value.get<std::vector<double>>();
      else if (key == "train") c.train_overrides = value;
      else if (key == "grid_points") c.grid_points = value.get<int>();
      else if (key == "jobs") c.jobs = value.get<int>();
      else throw std::invalid_argument(fmt::format("unknown sweep field '{}'", key));
    } catch (const json::exception& e) {
      throw std::invalid_argument(fmt::format("sweep field '{}' has the wrong type: {}", key,
                                              e.what()));
    }
  }
  c.validate();
  return c;
}

training::TrainConfig run_config(const SweepConfig& config, const std::string& system,
                                 Method method, std::uint64_t seed,
                                 std::optional<double> lambda_extra) {
  training::TrainConfig t = training::default_config(method, systems::system_from_name(system));
  t = training::config_from_json(config.train_overrides, t);
  if (lambda_extra) t.lambda_extra = *lambda_extra;
  t.seed = seed;
  t.validate();
  return t;
}

SweepReport sweep(const SweepConfig& config) {
  config.validate();
  struct Planned {
    ExperimentSpec spec;
    std::string label;
  };
  std::vector<Planned> plan;
  for (const auto& system : config.systems) {
    for (Method method : config.methods) {
      std::vector<std::optional<double>> lambdas{std::nullopt};
      if (method == Method::kDhh && !config.lambda_extra.empty()) {
        lambdas.assign(config.lambda_extra.begin(), config.lambda_extra.end());
      }
      for (int n : config.n_points) {
        for (double sigma : config.sigmas) {
          for (const auto& lambda : lambdas) {
            for (std::uint64_t seed : config.seeds) {
              Planned p;
              p.spec.data.system = systems::system_from_name(system);
              p.spec.data.n_points = n;
              p.spec.data.mode = config.mode;
              p.spec.data.sigma = sigma;
              p.spec.data.seed = seed;
              p.spec.train = run_config(config, system, method, seed, lambda);
              p.spec.grid_points = config.grid_points;
              p.label = lambda ? ablation_label(*lambda)
                               : std::string(training::method_name(method));
              plan.push_back(std::move(p));
            }
          }
        }
      }
    }
  }

  SweepReport report;
  report.runs.resize(plan.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < plan.size(); i = next++) {
      report.runs[i] = run_experiment(plan[i].spec);
      report.runs[i].method = plan[i].label;
    }
  };
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(config.jobs), plan.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  report.cells = aggregate(report.runs);
  return report;
}

std::vector<CellStats> aggregate(const std::vector<ExperimentResult>& runs) {
  std::vector<CellStats> cells;
  std::vector<std::vector<const ExperimentResult*>> members;
  for (const ExperimentResult& r : runs) {
    auto it = std::find_if(cells.begin(), cells.end(), [&](const CellStats& c) {
      return c.system == r.system && c.method == r.method && c.n_points == r.n_points &&
             c.sigma == r.noise_sigma;
    });
    if (it == cells.end()) {
      cells.push_back({r.system, r.method, r.n_points, r.noise_sigma});
      members.emplace_back();
      it = cells.end() - 1;
    }
    members[static_cast<std::size_t>(it - cells.begin())].push_back(&r);
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CellStats& c = cells[i];
    double sum = 0.0;
    int ok = 0;
    c.min = kInf;
    c.max = -kInf;
    for (const ExperimentResult* r : members[i]) {
      ++c.runs;
      if (r->failed) {
        ++c.failures;
        continue;
      }
      ++ok;
      sum += r->log_mse;
      c.min = std::min(c.min, r->log_mse);
      c.max = std::max(c.max, r->log_mse);
    }
    if (ok == 0) {
      c.mean = c.min = c.max = kInf;
    } else {
      c.mean = sum / ok;
      if (c.failures > 0) c.max = kInf;
    }
  }
  return cells;
}

json report_json(const SweepReport& report) {
  json runs = json::array();
  for (const ExperimentResult& r : report.runs) {
    json per = json::array();
    for (Eigen::Index i = 0; i < r.per_coordinate.size(); ++i) per.push_back(r.per_coordinate(i));
    runs.push_back({{"system", r.system},
                    {"method", r.method},
                    {"n_points", r.n_points},
                    {"sigma", r.noise_sigma},
                    {"lambda_extra", r.lambda_extra},
                    {"seed", r.seed},
                    {"failed", r.failed},
                    {"failure", r.failure},
                    {"mse", number_or_marker(r.mse)},
                    {"log_mse", number_or_marker(r.log_mse)},
                    {"per_coordinate_mse", per}});
  }
  // nlohmann::json objects sort keys; rates are zero-padded so they stay numeric-ordered
  json nested = json::object();
  for (const CellStats& c : report.cells) {
    nested[c.system][c.method][fmt::format("{:06d}", c.n_points)].push_back(
        {{"sigma", c.sigma},
         {"mean", number_or_marker(c.mean)},
         {"min", number_or_marker(c.min)},
         {"max", number_or_marker(c.max)},
         {"runs", c.runs},
         {"failures", c.failures}});
  }
  return {{"cells", nested}, {"runs", runs}};
}

SweepReport report_from_json(const json& j) {
  SweepReport report;
  try {
    for (const json& r : j.at("runs")) {
      ExperimentResult e;
      e.system = r.at("system").get<std::string>();
      e.method = r.at("method").get<std::string>();
      e.n_points = r.at("n_points").get<int>();
      e.noise_sigma = r.at("sigma").get<double>();
      e.lambda_extra = r.at("lambda_extra").get<double>();
      e.seed = r.at("seed").get<std::uint64_t>();
      e.failed = r.at("failed").get<bool>();
      e.failure = r.at("failure").get<std::string>();
      e.mse = number_from(r.at("mse"));
      e.log_mse = number_from(r.at("log_mse"));
      const auto per = r.at("per_coordinate_mse").get<std::vector<double>>();
      e.per_coordinate = Eigen::Map<const VectorXd>(per.data(), static_cast<Eigen::Index>(per.size()));
      report.runs.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("malformed sweep report: {}", e.what()));
  }
  report.cells = aggregate(report.runs);
  return report;
}

std::string report_csv(const SweepReport& report) {
  std::string out = "system,method,n_points,sigma,seed,mse,log_mse\n";
  for (const ExperimentResult& r : report.runs) {
    out += fmt::format("{},{},{},{},{},{:.17g},{:.17g}\n", r.system, r.method, r.n_points,
                       r.noise_sigma, r.seed, r.mse, r.log_mse);
  }
  return out;
}

}  // namespace dhh::evaluate
