#include "dhh/cli/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <openssl/evp.h>

#include "dhh/data/dataset.hpp"
#include "dhh/evaluate/metrics.hpp"
#include "dhh/evaluate/plot.hpp"
#include "dhh/evaluate/sweep.hpp"
#include "dhh/training/trainer.hpp"

namespace dhh::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error(fmt::format("'{}' is not valid JSON: {}", path.string(), e.what()));
  }
}

fs::path default_out_dir() {
  const char* env = std::getenv(kOutDirVariable);
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("out");
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::string trajectory_csv(const data::Trajectory& traj) {
  const auto dof = traj.dimension() / 2;
  std::string out = "t";
  for (Eigen::Index i = 1; i <= dof; ++i) out += fmt::format(",q{}", i);
  for (Eigen::Index i = 1; i <= dof; ++i) out += fmt::format(",p{}", i);
  out += '\n';
  for (Eigen::Index c = 0; c < traj.size(); ++c) {
    out += fmt::format("{:.17g}", traj.times(c));
    for (Eigen::Index r = 0; r < traj.dimension(); ++r) {
      out += fmt::format(",{:.17g}", traj.states(r, c));
    }
    out += '\n';
  }
  return out;
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

void write_manifest(const fs::path& path, const RunManifest& manifest) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  out << to_json(manifest).dump(2) << '\n';
}

}  // namespace

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

ManifestEntry file_entry(const fs::path& path) {
  return {path.generic_string(), sha256_file(path)};
}

ManifestEntry write_text(const fs::path& path, std::string_view text) {
  ensure_parent(path);
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    out << text;
    if (!out) throw std::runtime_error(fmt::format("failed writing '{}'", path.string()));
  }
  return {path.generic_string(), sha256_hex(text)};
}

json to_json(const RunManifest& m) {
  auto entries = [](const std::vector<ManifestEntry>& list) {
    json a = json::array();
    for (const auto& e : list) a.push_back({{"path", e.path}, {"sha256", e.sha256}});
    return a;
  };
  return {{"tool", "dhh"},
          {"version", kToolVersion},
          {"command", m.command},
          {"config", m.config},
          {"seeds", m.seeds},
          {"inputs", entries(m.inputs)},
          {"outputs", entries(m.outputs)}};
}

namespace {

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::string system;
  int n = 20;
  std::string mode = "regular";
  double sigma = 0.0;
  std::uint64_t seed = 0;
  double t_end = 0.0;
  bool hide_momenta = false;
  std::string out;
};

void cmd_generate(const GenerateArgs& a, std::ostream& out) {
  data::DatasetSpec spec;
  spec.system = systems::system_from_name(a.system);
  spec.n_points = a.n;
  spec.mode = data::mode_from_name(a.mode);
  spec.sigma = a.sigma;
  spec.seed = a.seed;
  spec.t_end = a.t_end;
  if (a.hide_momenta) spec.mask = data::position_only_mask(spec.system.dof());
  const fs::path csv =
      a.out.empty() ? default_out_dir() / fmt::format("{}_n{}_seed{}.csv", a.system, a.n, a.seed)
                    : fs::path(a.out);
  ensure_parent(csv);
  const data::Dataset ds = data::make_dataset(spec);
  data::write_dataset(ds, csv);

  RunManifest m;
  m.command = "generate";
  m.config = {{"system", a.system}, {"n", a.n},         {"mode", a.mode},
              {"sigma", a.sigma},   {"t_end", a.t_end}, {"hide_momenta", a.hide_momenta}};
  m.seeds = {{"seed", a.seed},
             {"initial_state", derive_seed(a.seed, "initial_state")},
             {"subsample", derive_seed(a.seed, "subsample")},
             {"noise", derive_seed(a.seed, "noise")}};
  m.outputs = {file_entry(csv), file_entry(data::sidecar_path(csv))};
  fs::path manifest = csv;
  manifest.replace_extension(".manifest.json");
  write_manifest(manifest, m);
  out << fmt::format("wrote {} ({} observations)\n", csv.generic_string(), ds.size());
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
};

training::TrainConfig resolve_config(const json& j, const data::Dataset& ds) {
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  training::Method method = training::Method::kDhh;
  if (j.contains("method")) {
    if (!j.at("method").is_string()) throw std::invalid_argument("config field 'method' must be a string");
    method = training::method_from_name(j.at("method").get<std::string>());
  }
  return training::config_from_json(j, training::default_config(method, ds.system));
}

void cmd_train(const TrainArgs& a, std::ostream& out) {
  const data::Dataset ds = data::read_dataset(a.data);
  const json raw = a.config.empty() ? json::object() : read_json(a.config);
  training::TrainConfig cfg = resolve_config(raw, ds);
  if (a.steps) cfg.steps = *a.steps;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const fs::path dir = a.out.empty() ? default_out_dir() : fs::path(a.out);

  const training::TrainResult result = training::train(cfg, ds);

  RunManifest m;
  m.command = "train";
  m.config = training::to_json(cfg);
  m.seeds = {{"seed", cfg.seed}, {"collocation", derive_seed(cfg.seed, "collocation")}};
  for (training::Role r : training::roles_for(cfg.method)) {
    const std::string role = fmt::format("init/{}", training::role_name(r));
    m.seeds[role] = derive_seed(cfg.seed, role);
  }
  m.inputs = {file_entry(a.data), file_entry(data::sidecar_path(a.data))};
  if (!a.config.empty()) m.inputs.push_back(file_entry(a.config));
  m.outputs.push_back(write_text(dir / "checkpoint.json", training::to_json(result.model).dump(2) + "\n"));
  m.outputs.push_back(write_text(dir / "loss.csv", training::loss_curve_csv(result.curve)));
  write_manifest(dir / "train_manifest.json", m);
  const auto& last = result.curve.empty() ? training::LossRecord{} : result.curve.back();
  out << fmt::format("trained {} for {} steps, final loss {:.6g}; wrote {}\n",
                     training::method_name(cfg.method), cfg.steps, last.total, dir.generic_string());
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string scheme;
  std::string initial = "first_observation";
  int grid = 500;
  std::string out;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (!fs::exists(a.checkpoint)) {
    throw std::runtime_error(fmt::format("checkpoint '{}' does not exist", a.checkpoint));
  }
  const training::TrainedModel model = training::model_from_json(read_json(a.checkpoint));
  const data::Dataset ds = data::read_dataset(a.data);
  if (model.system != ds.system.name()) {
    throw std::invalid_argument(fmt::format("checkpoint was trained on '{}' but the dataset is '{}'",
                                            model.system, ds.system.name()));
  }
  evaluate::ReconstructOptions options;
  options.readout = a.scheme.empty() ? evaluate::default_readout(model.method)
                                     : evaluate::readout_from_name(a.scheme);
  options.initial = evaluate::initial_state_from_name(a.initial);
  const std::string scheme(evaluate::readout_name(options.readout));

  const Eigen::VectorXd grid = evaluate::evaluation_grid(ds, a.grid);
  const evaluate::Reconstruction rec = evaluate::reconstruct_trajectory(model, ds, grid, options);
  const evaluate::TrajectoryError err =
      evaluate::traj_log_mse(rec.trajectory, evaluate::truth_at(ds, grid));

  json result{{"method", training::method_name(model.method)},
              {"system", model.system},
              {"n_points", ds.size()},
              {"sigma", ds.noise_sigma},
              {"seed", ds.seed},
              {"scheme", scheme},
              {"initial", options.readout == evaluate::ReadOut::kSolution
                              ? json(nullptr)
                              : json(evaluate::initial_state_name(options.initial))},
              {"grid_points", a.grid},
              {"mse", err.mse},
              {"log_mse", err.log_mse},
              {"per_coordinate_mse", vector_json(err.per_coordinate)},
              {"rhs_evaluations", rec.rhs_evaluations}};
  if (model.hamiltonian) {
    const auto h = evaluate::compare_hamiltonian(model, ds);
    result["hamiltonian"] = {{"offset_corrected_rmse", h.rmse},
                             {"gradient_cosine", h.cosine},
                             {"probe_points", h.points},
                             {"excluded_points", h.excluded}};
  }
  if (!ds.fully_observed() && model.solution) {
    const auto hidden = evaluate::check_hidden_coordinate(model, ds, grid);
    json rows = json::array();
    for (std::size_t i = 0; i < hidden.rows.size(); ++i) {
      rows.push_back({{"row", hidden.rows[i]},
                      {"offset_corrected_rmse", hidden.per_row[i].rmse},
                      {"correlation", hidden.per_row[i].correlation},
                      {"degenerate", hidden.per_row[i].degenerate}});
    }
    result["hidden"] = rows;
  }

  const fs::path dir = a.out.empty() ? default_out_dir() : fs::path(a.out);
  RunManifest m;
  m.command = "eval";
  m.config = {{"scheme", scheme}, {"initial", a.initial}, {"grid_points", a.grid}};
  m.seeds = {{"dataset_seed", ds.seed}};
  m.inputs = {file_entry(a.checkpoint), file_entry(a.data), file_entry(data::sidecar_path(a.data))};
  m.outputs.push_back(write_text(dir / fmt::format("trajectory_{}.csv", scheme),
                                 trajectory_csv(rec.trajectory)));
  m.outputs.push_back(write_text(dir / fmt::format("result_{}.json", scheme), result.dump(2) + "\n"));
  write_manifest(dir / fmt::format("eval_{}_manifest.json", scheme), m);
  out << fmt::format("{} read-out: mse {:.6g}, log mse {:.6g}; wrote {}\n", scheme, err.mse,
                     err.log_mse, dir.generic_string());
}

// ---------------------------------------------------------------------------
// sweep and plot

std::vector<ManifestEntry> write_charts(const evaluate::SweepReport& report, const fs::path& dir) {
  std::vector<ManifestEntry> written;
  for (const evaluate::Chart& chart : evaluate::charts_from_report(report)) {
    written.push_back(write_text(dir / (chart.stem + ".svg"), evaluate::render_svg(chart)));
  }
  return written;
}

struct SweepArgs {
  std::string config;
  std::string out;
  std::optional<int> jobs;
};

void cmd_sweep(const SweepArgs& a, std::ostream& out) {
  json raw = read_json(a.config);
  if (a.jobs && raw.is_object()) raw["jobs"] = *a.jobs;
  const evaluate::SweepConfig cfg = evaluate::sweep_config_from_json(raw);
  const fs::path dir = a.out.empty() ? default_out_dir() : fs::path(a.out);

  const evaluate::SweepReport report = evaluate::sweep(cfg);

  RunManifest m;
  m.command = "sweep";
  json snapshot = evaluate::to_json(cfg);
  snapshot.erase("jobs");  // scheduling only; results do not depend on it
  m.config = snapshot;
  m.seeds = {{"seeds", cfg.seeds}};
  m.inputs = {file_entry(a.config)};
  m.outputs.push_back(write_text(dir / "report.json", evaluate::report_json(report).dump(2) + "\n"));
  m.outputs.push_back(write_text(dir / "report.csv", evaluate::report_csv(report)));
  for (auto& e : write_charts(report, dir)) m.outputs.push_back(std::move(e));
  write_manifest(dir / "sweep_manifest.json", m);
  const auto failed = std::count_if(report.runs.begin(), report.runs.end(),
                                    [](const auto& r) { return r.failed; });
  out << fmt::format("{} runs in {} cells ({} failed); wrote {}\n", report.runs.size(),
                     report.cells.size(), failed, dir.generic_string());
}

void cmd_plot(const std::string& report_path, const std::string& out_dir, std::ostream& out) {
  const evaluate::SweepReport report = evaluate::report_from_json(read_json(report_path));
  const fs::path dir = out_dir.empty() ? default_out_dir() : fs::path(out_dir);
  const auto written = write_charts(report, dir);
  out << fmt::format("wrote {} chart(s) to {}\n", written.size(), dir.generic_string());
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep hidden Hamiltonian learning: data generation, training and evaluation", "dhh"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Simulate a system and write an observation dataset");
  generate->add_option("--system", gen.system, "mass_spring, pendulum, two_body or three_body")
      ->required();
  generate->add_option("--n", gen.n, "Number of observations")->capture_default_str();
  generate->add_option("--mode", gen.mode, "regular or irregular sampling")->capture_default_str();
  generate->add_option("--sigma", gen.sigma, "Observation noise standard deviation")
      ->capture_default_str();
  generate->add_option("--seed", gen.seed, "Run seed")->capture_default_str();
  generate->add_option("--t-end", gen.t_end, "Observation horizon (0: system default)");
  generate->add_flag("--hide-momenta", gen.hide_momenta, "Observe positions only");
  generate->add_option("--out", gen.out, "Output CSV path");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  train->add_option("--config", tr.config, "Training config JSON");
  train->add_option("--data", tr.data, "Dataset CSV")->required();
  train->add_option("--out", tr.out, "Output directory");
  train->add_option("--steps", tr.steps, "Override the step count");
  train->add_option("--seed", tr.seed, "Override the seed");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Reconstruct a trajectory and score it");
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint JSON")->required();
  eval->add_option("--data", ev.data, "Dataset CSV")->required();
  eval->add_option("--scheme", ev.scheme, "solution, euler, rk2 or rk4");
  eval->add_option("--initial", ev.initial, "first_observation, solution_net or true")
      ->capture_default_str();
  eval->add_option("--grid", ev.grid, "Evaluation grid size")->capture_default_str();
  eval->add_option("--out", ev.out, "Output directory");

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Run a grid of experiments");
  sweep->add_option("--config", sw.config, "Sweep config JSON")->required();
  sweep->add_option("--out", sw.out, "Output directory");
  sweep->add_option("--jobs", sw.jobs, "Concurrent runs");

  std::string report_path, plot_out;
  auto* plot = app.add_subcommand("plot", "Render SVG charts from a sweep report");
  plot->add_option("--report", report_path, "report.json of a sweep")->required();
  plot->add_option("--out", plot_out, "Output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*generate) cmd_generate(gen, out);
    else if (*train) cmd_train(tr, out);
    else if (*eval) cmd_eval(ev, out);
    else if (*sweep) cmd_sweep(sw, out);
    else if (*plot) cmd_plot(report_path, plot_out, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace dhh::cli
