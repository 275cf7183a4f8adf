#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "dhh/evaluate/metrics.hpp"
#include "dhh/evaluate/plot.hpp"
#include "dhh/evaluate/sweep.hpp"

namespace dhh::evaluate {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Trajectory traj(const VectorXd& t, const MatrixXd& s) { return {t, s}; }

TEST(LogMse, Examples) {
  const VectorXd t = VectorXd::LinSpaced(4, 0.0, 1.0);
  const MatrixXd zero = MatrixXd::Zero(2, 4);
  const TrajectoryError same = traj_log_mse(traj(t, zero), traj(t, zero));
  EXPECT_EQ(same.mse, 0.0);
  EXPECT_DOUBLE_EQ(same.log_mse, std::log(1e-12));

  MatrixXd shifted = MatrixXd::Constant(2, 4, 0.1);
  EXPECT_NEAR(traj_log_mse(traj(t, shifted), traj(t, zero)).mse, 0.01, 1e-15);

  // mean over samples of the squared norm
  MatrixXd one(2, 1);
  one << 0.3, 0.4;
  const TrajectoryError e = traj_log_mse(traj(VectorXd::Zero(1), one), traj(VectorXd::Zero(1), MatrixXd::Zero(2, 1)));
  EXPECT_NEAR(e.mse, 0.125, 1e-15);
  EXPECT_NEAR(e.per_coordinate(0), 0.09, 1e-15);
  EXPECT_NEAR(e.per_coordinate(1), 0.16, 1e-15);
}

TEST(LogMse, ScalesQuadratically) {
  const VectorXd t = VectorXd::LinSpaced(30, 0.0, 3.0);
  const MatrixXd a = MatrixXd::Random(4, 30), b = MatrixXd::Random(4, 30);
  const double base = traj_log_mse(traj(t, a), traj(t, b)).mse;
  for (double c : {0.5, 2.0, 10.0}) {
    const double scaled = traj_log_mse(traj(t, c * a), traj(t, c * b)).mse;
    EXPECT_NEAR(scaled, c * c * base, 1e-12 * c * c * base);
  }
}

TEST(LogMse, MisalignedThrows) {
  const MatrixXd s = MatrixXd::Zero(2, 3);
  EXPECT_THROW(traj_log_mse(traj(VectorXd::LinSpaced(3, 0, 1), s), traj(VectorXd::LinSpaced(3, 0, 2), s)),
               std::invalid_argument);
  EXPECT_THROW(traj_log_mse(traj(VectorXd::LinSpaced(3, 0, 1), s),
                            traj(VectorXd::LinSpaced(2, 0, 1), MatrixXd::Zero(2, 2))),
               std::invalid_argument);
}

TEST(LogMse, FloorAndNonFinite) {
  EXPECT_DOUBLE_EQ(log_floor(1e-20), std::log(1e-12));
  EXPECT_DOUBLE_EQ(log_floor(1.0), 0.0);
  EXPECT_EQ(log_floor(NAN), kInf);
  EXPECT_EQ(log_floor(kInf), kInf);
}

// ---------------------------------------------------------------------------

TEST(HamiltonianComparison, OffsetAndSign) {
  const systems::SystemSpec spec = systems::mass_spring();
  const MatrixXd probes = probe_grid({VectorXd::Constant(2, -1.5), VectorXd::Constant(2, 1.5)}, 400);
  const auto energy = [&](const VectorXd& x) {
    return systems::hamiltonian_true(spec, systems::PhaseState::from_flat(x));
  };
  const systems::GradientFn grad = [&](const systems::PhaseState& s) {
    return systems::hamiltonian_gradient_true(spec, s);
  };
  const HamiltonianComparison shifted =
      compare_hamiltonian(spec, [&](const VectorXd& x) { return energy(x) + 5.0; }, grad, probes);
  EXPECT_LT(shifted.rmse, 1e-12);
  EXPECT_NEAR(shifted.cosine, 1.0, 1e-12);
  EXPECT_EQ(shifted.points, 400u);

  const systems::GradientFn flipped = [&](const systems::PhaseState& s) {
    systems::PhaseState g = grad(s);
    g.q = -g.q;
    g.p = -g.p;
    return g;
  };
  EXPECT_NEAR(compare_hamiltonian(spec, [&](const VectorXd& x) { return -energy(x); }, flipped, probes).cosine,
              -1.0, 1e-12);
}

TEST(HamiltonianComparison, NBodyCollisionsExcluded) {
  const systems::SystemSpec spec = systems::n_body(2);
  // a line of probes through coincident positions
  MatrixXd probes = MatrixXd::Zero(8, 3);
  probes.col(0) << 0, 0, 1, 0, 0, 0, 0, 0;
  probes.col(1) << 0, 0, 0.05, 0, 0, 0, 0, 0;
  probes.col(2) << 0, 0, 2, 0, 0, 0, 0, 0;
  const auto energy = [&](const VectorXd& x) {
    return systems::hamiltonian_true(spec, systems::PhaseState::from_flat(x));
  };
  const systems::GradientFn grad = [&](const systems::PhaseState& s) {
    return systems::hamiltonian_gradient_true(spec, s);
  };
  const HamiltonianComparison c = compare_hamiltonian(spec, energy, grad, probes);
  EXPECT_EQ(c.points, 2u);
  EXPECT_EQ(c.excluded, 1u);
}

TEST(Probes, BoxAndGrid) {
  Trajectory t{VectorXd::LinSpaced(3, 0, 1), MatrixXd(2, 3)};
  t.states << -1, 0, 1, 2, 2, 2;
  const ProbeBox box = visited_box(t);
  EXPECT_DOUBLE_EQ(box.lower(0), -1.2);
  EXPECT_DOUBLE_EQ(box.upper(0), 1.2);
  EXPECT_DOUBLE_EQ(box.lower(1), 1.9);  // zero extent pads by 0.1 of unit width
  EXPECT_DOUBLE_EQ(box.upper(1), 2.1);
  const MatrixXd g = probe_grid(box, 4096);
  EXPECT_EQ(g.cols(), 4096);
  EXPECT_DOUBLE_EQ(g.row(0).minCoeff(), -1.2);
  EXPECT_DOUBLE_EQ(g.row(0).maxCoeff(), 1.2);
  EXPECT_EQ(probe_grid({VectorXd::Zero(8), VectorXd::Ones(8)}, 4096).cols(), 2 * 2 * 2 * 2 * 2 * 2 * 2 * 2);
}

TEST(UpToConstant, Examples) {
  const VectorXd p = VectorXd::LinSpaced(50, -1.0, 2.0).array().sin();
  const OffsetCorrected same = compare_up_to_constant(p.array() + 3.0, p);
  EXPECT_LT(same.rmse, 1e-14);
  EXPECT_NEAR(same.correlation, 1.0, 1e-12);
  EXPECT_FALSE(same.degenerate);
  EXPECT_NEAR(compare_up_to_constant(-p, p).correlation, -1.0, 1e-12);
  const OffsetCorrected flat = compare_up_to_constant(VectorXd::Constant(50, 2.0), p);
  EXPECT_TRUE(flat.degenerate);
  EXPECT_EQ(flat.correlation, 0.0);
}

// ---------------------------------------------------------------------------

data::Dataset clean_spring() {
  data::DatasetSpec spec;
  spec.seed = 1;
  return data::make_dataset(spec);
}

training::TrainConfig tiny(training::Method method) {
  training::TrainConfig c = training::default_config(method, systems::mass_spring());
  c.sizes = {{8}, {8}, {8}};
  c.steps = 0;
  return c;
}

// H = q^2 + p^2 from a symmetric tanh pair per coordinate
training::TrainedModel exact_spring_model(const data::Dataset& ds) {
  training::TrainConfig c = tiny(training::Method::kHnnOracle);
  c.sizes.hamiltonian = {4};
  training::TrainedModel m = training::initial_model(c, ds);
  const double centre = 0.65, eps = 1e-4, t = std::tanh(centre);
  const double a = 1.0 / (-2.0 * t * (1.0 - t * t) * eps * eps);
  nets::NetworkParams& p = m.hamiltonian->params;
  p.layers[0].weight << eps, 0, -eps, 0, 0, eps, 0, -eps;
  p.layers[0].bias.setConstant(centre);
  p.layers[1].weight.setConstant(a);
  p.layers[1].bias(0) = -4.0 * a * t;
  return m;
}

TEST(Reconstruction, SolutionReadOutSpendsNoFieldCalls) {
  const data::Dataset ds = clean_spring();
  const training::TrainedModel m = training::initial_model(tiny(training::Method::kDhh), ds);
  const VectorXd grid = evaluation_grid(ds, 50);
  const Reconstruction r = reconstruct_trajectory(m, ds, grid, {ReadOut::kSolution});
  EXPECT_EQ(r.rhs_evaluations, 0u);
  ASSERT_EQ(r.trajectory.size(), 50);
  const nets::CompiledMlp s(m.solution->config, m.solution->params);
  const VectorXd x = s.forward(VectorXd(VectorXd::Constant(1, ds.time_map.forward(grid(7)))));
  EXPECT_LT((r.trajectory.states.col(7) - x).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Reconstruction, ExactHamiltonianFollowsClosedForm) {
  const data::Dataset ds = clean_spring();
  const VectorXd grid = evaluation_grid(ds);
  const Reconstruction r =
      reconstruct_trajectory(exact_spring_model(ds), ds, grid, {ReadOut::kRk4, InitialState::kTrue, 1e-3});
  // H = q^2 + p^2: q = q0 cos 2t + p0 sin 2t, p = p0 cos 2t - q0 sin 2t
  const double q0 = ds.ground_truth.states(0, 0), p0 = ds.ground_truth.states(1, 0);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const double t = grid(i) - ds.ground_truth.times(0);
    worst = std::max({worst,
                      std::abs(r.trajectory.states(0, i) - (q0 * std::cos(2 * t) + p0 * std::sin(2 * t))),
                      std::abs(r.trajectory.states(1, i) - (p0 * std::cos(2 * t) - q0 * std::sin(2 * t)))});
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Reconstruction, HigherOrderSchemesAreMoreAccurate) {
  const data::Dataset ds = clean_spring();
  const training::TrainedModel m = exact_spring_model(ds);
  const VectorXd grid = evaluation_grid(ds, 100);
  const Trajectory truth = truth_at(ds, grid);
  auto score = [&](ReadOut readout) {
    const Reconstruction r = reconstruct_trajectory(m, ds, grid, {readout, InitialState::kTrue, 1e-2});
    return std::pair{traj_log_mse(r.trajectory, truth).mse, r.rhs_evaluations};
  };
  const auto [euler, euler_calls] = score(ReadOut::kEuler);
  const auto [rk2, rk2_calls] = score(ReadOut::kRk2);
  const auto [rk4, rk4_calls] = score(ReadOut::kRk4);
  EXPECT_GT(euler, rk2);
  EXPECT_GT(rk2, rk4);
  EXPECT_EQ(rk2_calls, 2 * euler_calls);
  EXPECT_EQ(rk4_calls, 4 * euler_calls);
}

TEST(Reconstruction, UnsupportedRequestsThrow) {
  data::DatasetSpec spec;
  spec.mask = data::position_only_mask(1);
  const data::Dataset hidden = data::make_dataset(spec);
  const training::TrainedModel dhh = training::initial_model(tiny(training::Method::kDhh), hidden);
  EXPECT_THROW(reconstruct_trajectory(dhh, hidden, evaluation_grid(hidden, 10), {ReadOut::kRk4}),
               std::invalid_argument);
  EXPECT_NO_THROW(reconstruct_trajectory(dhh, hidden, evaluation_grid(hidden, 10),
                                         {ReadOut::kRk4, InitialState::kSolutionNet}));
  const data::Dataset ds = clean_spring();
  const training::TrainedModel hnn = training::initial_model(tiny(training::Method::kHnnFd), ds);
  EXPECT_THROW(reconstruct_trajectory(hnn, ds, evaluation_grid(ds, 10), {ReadOut::kSolution}),
               std::invalid_argument);
}

TEST(Readouts, Names) {
  for (ReadOut r : {ReadOut::kSolution, ReadOut::kEuler, ReadOut::kRk2, ReadOut::kRk4}) {
    EXPECT_EQ(readout_from_name(readout_name(r)), r);
  }
  EXPECT_THROW(readout_from_name("rk45"), std::invalid_argument);
  EXPECT_EQ(default_readout(training::Method::kDhh), ReadOut::kSolution);
  EXPECT_EQ(default_readout(training::Method::kNeuralOde), ReadOut::kRk4);
}

// ---------------------------------------------------------------------------

SweepConfig quick_sweep() {
  SweepConfig c;
  c.systems = {"mass_spring", "pendulum"};
  c.methods = {training::Method::kDhh, training::Method::kHnnFd, training::Method::kNeuralOde};
  c.train_overrides = {{"steps", 2},
                       {"sizes", {{"hamiltonian", {4}}, {"solution", {4}}, {"dynamics", {4}}}}};
  c.grid_points = 20;
  c.jobs = 2;
  return c;
}

TEST(Sweep, ExpandsTheFullGrid) {
  const SweepReport r = sweep(quick_sweep());
  EXPECT_EQ(r.runs.size(), 30u);
  ASSERT_EQ(r.cells.size(), 6u);
  EXPECT_EQ(r.cells[0].system, "mass_spring");
  EXPECT_EQ(r.cells[0].method, "dhh");
  EXPECT_EQ(r.cells[1].method, "hnn_fd");
  for (const CellStats& c : r.cells) {
    EXPECT_EQ(c.runs, 5);
    EXPECT_LE(c.min, c.mean);
    EXPECT_LE(c.mean, c.max);
  }
  // threads do not change results
  SweepConfig serial = quick_sweep();
  serial.jobs = 1;
  EXPECT_EQ(report_csv(sweep(serial)), report_csv(r));
}

TEST(Sweep, IdenticalSeedsCollapseTheBand) {
  SweepConfig c = quick_sweep();
  c.systems = {"mass_spring"};
  c.methods = {training::Method::kHnnFd};
  c.seeds = {3, 3, 3};
  const SweepReport r = sweep(c);
  ASSERT_EQ(r.cells.size(), 1u);
  EXPECT_EQ(r.cells[0].min, r.cells[0].mean);
  EXPECT_EQ(r.cells[0].max, r.cells[0].mean);
}

TEST(Sweep, AblationLabels) {
  SweepConfig c = quick_sweep();
  c.systems = {"mass_spring"};
  c.methods = {training::Method::kDhh};
  c.seeds = {0};
  c.lambda_extra = {0.0, 0.01};
  const SweepReport r = sweep(c);
  ASSERT_EQ(r.cells.size(), 2u);
  EXPECT_EQ(r.cells[0].method, ablation_label(0.0));
  EXPECT_EQ(r.cells[1].method, ablation_label(0.01));
  EXPECT_EQ(r.runs[1].lambda_extra, 0.01);
}

TEST(Sweep, ConfigErrorsNameTheField) {
  try {
    (void)sweep_config_from_json({{"systems", {"mass_spring"}}, {"sigma", {0.1}}});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("sigma"), std::string::npos);
  }
  SweepConfig c;
  c.train_overrides = {{"seed", 4}};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  const SweepConfig back = sweep_config_from_json(to_json(quick_sweep()));
  EXPECT_EQ(to_json(back), to_json(quick_sweep()));
}

ExperimentResult result(std::uint64_t seed, double log_mse, bool failed = false) {
  ExperimentResult r;
  r.method = "dhh";
  r.system = "pendulum";
  r.n_points = 20;
  r.noise_sigma = 0.1;
  r.seed = seed;
  r.failed = failed;
  r.log_mse = failed ? kInf : log_mse;
  r.mse = failed ? kInf : std::exp(log_mse);
  if (failed) r.failure = "diverged";
  return r;
}

TEST(Aggregate, FailuresMarkTheCell) {
  const auto cells = aggregate({result(0, -3.0), result(1, -1.0), result(2, 0.0, true)});
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_EQ(cells[0].failures, 1);
  EXPECT_EQ(cells[0].runs, 3);
  EXPECT_EQ(cells[0].max, kInf);
  EXPECT_EQ(cells[0].min, -3.0);
  EXPECT_DOUBLE_EQ(cells[0].mean, -2.0);  // over the runs that finished
  const auto all_failed = aggregate({result(0, 0.0, true)});
  EXPECT_EQ(all_failed[0].mean, kInf);
  EXPECT_EQ(all_failed[0].min, kInf);
}

TEST(Aggregate, ReportJsonRoundTrip) {
  SweepReport r;
  r.runs = {result(0, -3.0), result(1, -1.0), result(2, 0.0, true)};
  r.cells = aggregate(r.runs);
  const nlohmann::json j = report_json(r);
  EXPECT_EQ(j["cells"]["pendulum"]["dhh"]["000020"][0]["max"], "inf");
  const SweepReport back = report_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(report_json(back), j);
  EXPECT_EQ(report_csv(back), report_csv(r));
  EXPECT_EQ(report_csv(r).substr(0, report_csv(r).find('\n')), "system,method,n_points,sigma,seed,mse,log_mse");
}

// ---------------------------------------------------------------------------

std::size_t count(const std::string& text, const std::string& what) {
  std::size_t n = 0;
  for (std::size_t at = text.find(what); at != std::string::npos; at = text.find(what, at + 1)) ++n;
  return n;
}

TEST(Charts, OneLineAndOneBandPerSeries) {
  Chart c{"mass_spring, sigma 0.1", "mass_spring_sigma0.1"};
  c.series.push_back({"dhh", {10, 20, 50}, {-3, -4, -5}, {-3.5, -4.5, -6}, {-2.5, -3.5, kInf}});
  const std::string svg = render_svg(c);
  EXPECT_EQ(count(svg, "<polyline"), 1u);
  EXPECT_EQ(count(svg, "<polygon"), 1u);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_EQ(render_svg(c), svg);
  c.series.push_back({"hnn_fd", {10, 20, 50}, {1, 0, -1}, {0, -1, -2}, {2, 1, 0}});
  EXPECT_EQ(count(render_svg(c), "<polyline"), 2u);
}

TEST(Charts, OnePerSystemAndSigma) {
  SweepReport r;
  r.runs = {result(0, -3.0), result(1, -1.0)};
  ExperimentResult other = result(0, -2.0);
  other.noise_sigma = 0.0;
  r.runs.push_back(other);
  r.cells = aggregate(r.runs);
  const auto charts = charts_from_report(r);
  ASSERT_EQ(charts.size(), 2u);
  EXPECT_EQ(charts[0].series.size(), 1u);
}

}  // namespace
}  // namespace dhh::evaluate
