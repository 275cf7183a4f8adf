#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "dhh/data/dataset.hpp"

namespace dhh::data {
namespace {

Trajectory ramp(int n) {
  Trajectory t{Eigen::VectorXd::LinSpaced(n, 0.0, 1.0), Eigen::MatrixXd(2, n)};
  t.states.row(0) = t.times.transpose();
  t.states.row(1) = -t.times.transpose();
  return t;
}

TEST(Trajectories, ValidateRejectsNonIncreasingTimes) {
  Trajectory t = ramp(4);
  t.times(2) = t.times(1);
  EXPECT_THROW(t.validate(), std::invalid_argument);
  Trajectory u = ramp(4);
  u.states.resize(2, 3);
  EXPECT_THROW(u.validate(), std::invalid_argument);
}

TEST(Trajectories, LinearInterpolation) {
  const Trajectory t = ramp(3);  // times 0, 0.5, 1
  const Trajectory i = interpolate(t, (Eigen::VectorXd(3) << 0.0, 0.25, 1.0).finished());
  EXPECT_DOUBLE_EQ(i.states(0, 1), 0.25);
  EXPECT_DOUBLE_EQ(i.states(1, 2), -1.0);
  EXPECT_THROW(interpolate(t, Eigen::VectorXd::Constant(1, 1.5)), std::invalid_argument);
}

TEST(Subsample, FullLengthRegularIsIdentity) {
  Rng rng(1);
  const Trajectory t = ramp(11);
  const Trajectory s = subsample(t, 11, SamplingMode::kRegular, rng);
  EXPECT_EQ(s.times, t.times);
  EXPECT_EQ(s.states, t.states);
}

TEST(Subsample, TwoRegularPointsAreEndpoints) {
  Rng rng(1);
  const Trajectory s = subsample(ramp(11), 2, SamplingMode::kRegular, rng);
  ASSERT_EQ(s.size(), 2);
  EXPECT_EQ(s.times(0), 0.0);
  EXPECT_EQ(s.times(1), 1.0);
}

TEST(Subsample, InvalidCountsThrow) {
  Rng rng(1);
  EXPECT_THROW(subsample(ramp(5), 1, SamplingMode::kRegular, rng), std::invalid_argument);
  EXPECT_THROW(subsample(ramp(5), 6, SamplingMode::kIrregular, rng), std::invalid_argument);
}

TEST(Subsample, IrregularIsReproducibleAndIncreasing) {
  const Trajectory t = ramp(201);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng a(seed), b(seed);
    const Trajectory s = subsample(t, 15, SamplingMode::kIrregular, a);
    EXPECT_EQ(s.times, subsample(t, 15, SamplingMode::kIrregular, b).times);
    ASSERT_EQ(s.size(), 15);
    EXPECT_EQ(s.times(0), 0.0);
    EXPECT_EQ(s.times(14), 1.0);
    for (Eigen::Index i = 1; i < s.size(); ++i) EXPECT_GT(s.times(i), s.times(i - 1));
  }
}

TEST(Noise, ZeroSigmaIsIdentity) {
  Rng rng(2);
  const Trajectory t = ramp(10);
  EXPECT_EQ(add_noise(t, 0.0, rng).states, t.states);
}

TEST(Noise, SampleMoments) {
  Rng rng(3);
  Trajectory t{Eigen::VectorXd::LinSpaced(5000, 0.0, 1.0), Eigen::MatrixXd::Zero(2, 5000)};
  const Trajectory n = add_noise(t, 0.1, rng);
  EXPECT_EQ(n.times, t.times);
  const Eigen::MatrixXd e = n.states - t.states;
  const double sd = std::sqrt(e.array().square().mean() - e.mean() * e.mean());
  EXPECT_NEAR(sd, 0.1, 0.005);
  const Eigen::VectorXd q = e.row(0).transpose().array() - e.row(0).mean();
  const Eigen::VectorXd p = e.row(1).transpose().array() - e.row(1).mean();
  EXPECT_LT(std::abs(q.dot(p) / (q.norm() * p.norm())), 0.05);
}

TEST(TimeMaps, MapsSpanOntoUnitInterval) {
  Trajectory t{Eigen::VectorXd::LinSpaced(11, 0.0, 10.0), Eigen::MatrixXd::Zero(2, 11)};
  const auto [mapped, map] = normalize_time(t);
  EXPECT_NEAR(map.forward(5.0), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(map.forward(10.0), 1.0);
  EXPECT_DOUBLE_EQ(mapped.times(0), -1.0);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng);
    EXPECT_LT(std::abs(map.inverse(map.forward(x)) - x), 1e-12);
  }
}

TEST(TimeMaps, EqualTimesThrow) {
  Trajectory t{Eigen::VectorXd::Constant(1, 2.0), Eigen::MatrixXd::Zero(2, 1)};
  EXPECT_THROW(normalize_time(t), std::invalid_argument);
}

TEST(FiniteDifferences, ExactOnLinearSignal) {
  Trajectory t{(Eigen::VectorXd(5) << 0.0, 0.1, 0.35, 0.4, 1.0).finished(), Eigen::MatrixXd(2, 5)};
  t.states.row(0) = 3.0 * t.times.transpose();
  t.states.row(1).setConstant(2.0);
  const Eigen::MatrixXd d = finite_difference_targets(t);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(d(0, i), 3.0, 1e-12);
    EXPECT_NEAR(d(1, i), 0.0, 1e-12);
  }
}

TEST(FiniteDifferences, EvenSignalAtCentre) {
  Trajectory t{(Eigen::VectorXd(3) << -0.1, 0.0, 0.1).finished(), Eigen::MatrixXd(2, 3)};
  for (int i = 0; i < 3; ++i) {
    t.states(0, i) = std::cos(2 * t.times(i));
    t.states(1, i) = 0.0;
  }
  EXPECT_NEAR(finite_difference_targets(t)(0, 1), 0.0, 1e-14);
}

TEST(FiniteDifferences, ExactOnQuadraticNonUniformStencil) {
  Trajectory t{(Eigen::VectorXd(3) << 0.0, 0.1, 0.3).finished(), Eigen::MatrixXd(2, 3)};
  t.states.row(0) = t.times.array().square().transpose();
  t.states.row(1).setZero();
  const Eigen::MatrixXd d = finite_difference_targets(t);
  EXPECT_NEAR(d(0, 1), 0.2, 1e-14);
  EXPECT_NEAR(d(0, 0), 0.0, 1e-14);  // one-sided ends are exact on quadratics too
  EXPECT_NEAR(d(0, 2), 0.6, 1e-14);
}

TEST(FiniteDifferences, NeedThreePoints) {
  EXPECT_THROW(finite_difference_targets(ramp(2)), std::invalid_argument);
}

TEST(Datasets, DeterministicForEqualInputs) {
  DatasetSpec spec;
  spec.sigma = 0.1;
  spec.mode = SamplingMode::kIrregular;
  spec.seed = 9;
  const Dataset a = make_dataset(spec);
  const Dataset b = make_dataset(spec);
  EXPECT_EQ(a.observations.times, b.observations.times);
  EXPECT_EQ(a.observations.states, b.observations.states);
  EXPECT_EQ(a.ground_truth.states, b.ground_truth.states);
  spec.seed = 10;
  EXPECT_NE(make_dataset(spec).observations.states, a.observations.states);
}

TEST(Datasets, InvariantsHold) {
  DatasetSpec spec;
  spec.system = systems::pendulum();
  spec.n_points = 30;
  const Dataset ds = make_dataset(spec);
  EXPECT_EQ(ds.size(), 30);
  EXPECT_EQ(ds.observations.times(0), 0.0);
  EXPECT_NEAR(ds.observations.times(29), 10.0, 1e-9);
  const Eigen::VectorXd tau = ds.normalized_times();
  EXPECT_DOUBLE_EQ(tau(0), -1.0);
  EXPECT_DOUBLE_EQ(tau(29), 1.0);
  EXPECT_TRUE(ds.fully_observed());
  // clean observations are ground-truth columns
  for (Eigen::Index k = 0; k < ds.size(); ++k) {
    EXPECT_EQ(Eigen::VectorXd(ds.observations.states.col(k)),
              Eigen::VectorXd(ds.ground_truth.states.col(ds.observation_indices[k])));
  }
}

TEST(Datasets, NoiseLeavesTimesUntouched) {
  DatasetSpec spec;
  spec.seed = 4;
  const Dataset clean = make_dataset(spec);
  spec.sigma = 0.1;
  const Dataset noisy = make_dataset(spec);
  EXPECT_EQ(clean.observations.times, noisy.observations.times);
  EXPECT_NE(clean.observations.states, noisy.observations.states);
  EXPECT_EQ(clean.ground_truth.states, noisy.ground_truth.states);
}

TEST(Datasets, PositionOnlyMaskHidesMomenta) {
  DatasetSpec spec;
  spec.mask = position_only_mask(1);
  const Dataset ds = make_dataset(spec);
  EXPECT_FALSE(ds.fully_observed());
  EXPECT_EQ(ds.observed_rows(), std::vector<Eigen::Index>{0});
  EXPECT_TRUE(ds.observations.states.row(1).array().isNaN().all());
  spec.mask = {false, false};
  EXPECT_THROW(make_dataset(spec), std::invalid_argument);
}

TEST(Datasets, ThreeBodyDefaultsAndSeparation) {
  DatasetSpec spec;
  spec.system = systems::n_body(3);
  spec.step = 1e-2;  // coarser ground truth keeps the test fast
  const Dataset ds = make_dataset(spec);
  EXPECT_NEAR(ds.observations.times(ds.size() - 1), 5.0, 1e-9);
  for (Eigen::Index c = 0; c < ds.ground_truth.size(); ++c) {
    EXPECT_GE(systems::min_pairwise_distance(
                  ds.system, systems::PhaseState::from_flat(ds.ground_truth.states.col(c))),
              0.1);
  }
}

class DatasetFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("dhh_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(DatasetFiles, CsvAndSidecarRoundTrip) {
  DatasetSpec spec;
  spec.sigma = 0.1;
  spec.seed = 5;
  spec.mask = position_only_mask(1);
  const Dataset ds = make_dataset(spec);
  const auto csv = dir_ / "ds.csv";
  write_dataset(ds, csv);
  EXPECT_TRUE(std::filesystem::exists(sidecar_path(csv)));

  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t,q1,p1");

  const Dataset back = read_dataset(csv);
  EXPECT_EQ(back.observations.times, ds.observations.times);
  EXPECT_EQ(back.observations.states.row(0), ds.observations.states.row(0));
  EXPECT_TRUE(back.observations.states.row(1).array().isNaN().all());
  EXPECT_EQ(back.mask, ds.mask);
  EXPECT_EQ(back.time_map.scale, ds.time_map.scale);
  EXPECT_EQ(back.time_map.offset, ds.time_map.offset);
  EXPECT_EQ(back.ground_truth.states, ds.ground_truth.states);
  EXPECT_EQ(back.observation_indices, ds.observation_indices);
}

TEST_F(DatasetFiles, MissingSidecarIsReported) {
  const auto csv = dir_ / "lonely.csv";
  std::ofstream(csv) << "t,q1,p1\n0,1,2\n";
  EXPECT_THROW(read_dataset(csv), std::runtime_error);
}

}  // namespace
}  // namespace dhh::data
