#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dhh/nets/mlp.hpp"

namespace dhh::nets {
namespace {

using diffcore::Bindings;
using diffcore::Graph;

MlpConfig tiny(int in, int out, std::vector<int> hidden) {
  return {in, out, std::move(hidden), Activation::kTanh};
}

NetworkParams zero_params(const MlpConfig& c) {
  NetworkParams p = init_params(c, 0);
  for (Layer& l : p.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return p;
}

// Gives every parameter a random value, biases included.
NetworkParams random_params(const MlpConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.7);
  NetworkParams p = init_params(c, seed);
  for (Layer& l : p.layers) {
    l.weight = Matrix::NullaryExpr(l.weight.rows(), l.weight.cols(), [&] { return n(rng); });
    l.bias = Vector::NullaryExpr(l.bias.size(), [&] { return n(rng); });
  }
  return p;
}

TEST(Init, SameSeedGivesIdenticalParams) {
  const MlpConfig c = tiny(2, 1, {8, 8});
  const auto a = init_params(c, 7);
  const auto b = init_params(c, 7);
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    EXPECT_EQ(a.layers[k].weight, b.layers[k].weight);
    EXPECT_EQ(a.layers[k].bias, b.layers[k].bias);
  }
  EXPECT_NE(init_params(c, 8).layers[0].weight, a.layers[0].weight);
}

TEST(Init, LayerShapes) {
  const auto p = init_params(tiny(1, 1, {64, 64}), 1);
  ASSERT_EQ(p.layers.size(), 3u);
  EXPECT_EQ(p.layers[0].weight.rows(), 64);
  EXPECT_EQ(p.layers[0].weight.cols(), 1);
  EXPECT_EQ(p.layers[1].weight.rows(), 64);
  EXPECT_EQ(p.layers[1].weight.cols(), 64);
  EXPECT_EQ(p.layers[2].weight.rows(), 1);
  EXPECT_EQ(p.layers[2].weight.cols(), 64);
  EXPECT_EQ(p.layers[0].bias.size(), 64);
  EXPECT_EQ(p.layers[2].bias.size(), 1);
  EXPECT_TRUE(p.layers[1].bias.isZero());
}

TEST(Init, GlorotMoments) {
  const auto p = init_params(tiny(64, 64, {64}), 3);
  const Matrix& w = p.layers[1].weight;
  const double a = std::sqrt(6.0 / 128.0);
  const double mean = w.mean();
  const double sd = std::sqrt((w.array() - mean).square().mean());
  EXPECT_NEAR(sd, a / std::sqrt(3.0), 0.1 * a / std::sqrt(3.0));
  EXPECT_LE(w.cwiseAbs().maxCoeff(), a);
}

TEST(Init, ZeroWidthRejected) {
  EXPECT_THROW(init_params(tiny(1, 1, {4, 0}), 1), std::invalid_argument);
  EXPECT_THROW(init_params(tiny(0, 1, {4}), 1), std::invalid_argument);
}

TEST(Forward, ZeroParamsGiveZero) {
  const MlpConfig c = tiny(3, 2, {5, 5});
  CompiledMlp net(c, zero_params(c));
  EXPECT_TRUE(net.forward(Vector(Vector::Constant(3, 0.8))).isZero());
}

TEST(Forward, ZeroWeightsGiveFinalBias) {
  const MlpConfig c = tiny(2, 2, {4});
  NetworkParams p = zero_params(c);
  p.layers.back().bias << 0.25, -1.5;
  CompiledMlp net(c, p);
  for (double x : {-3.0, 0.0, 2.0}) {
    const Vector out = net.forward(Vector(Vector::Constant(2, x)));
    EXPECT_EQ(out(0), 0.25);
    EXPECT_EQ(out(1), -1.5);
  }
}

TEST(Forward, SingleAffineLayer) {
  const MlpConfig c = tiny(1, 1, {});
  NetworkParams p = zero_params(c);
  p.layers[0].weight(0, 0) = 1.75;
  p.layers[0].bias(0) = -0.5;
  CompiledMlp net(c, p);
  EXPECT_DOUBLE_EQ(net.forward(Vector(Vector::Constant(1, 2.0)))(0), 1.75 * 2.0 - 0.5);
}

TEST(Forward, HiddenLayersUseTanh) {
  const MlpConfig c = tiny(1, 1, {1});
  NetworkParams p = zero_params(c);
  p.layers[0].weight(0, 0) = 2.0;
  p.layers[0].bias(0) = 0.1;
  p.layers[1].weight(0, 0) = 3.0;
  p.layers[1].bias(0) = 0.5;
  CompiledMlp net(c, p);
  EXPECT_NEAR(net.forward(Vector(Vector::Constant(1, 0.3)))(0), 3.0 * std::tanh(0.7) + 0.5, 1e-15);
}

TEST(Forward, ShapeMismatchThrows) {
  const MlpConfig c = tiny(2, 1, {3});
  CompiledMlp net(c, init_params(c, 1));
  EXPECT_THROW((void)net.forward(Matrix(Matrix::Zero(3, 4))), diffcore::ShapeError);
  Graph g;
  const MlpSlots s = declare_params(g, c, "h");
  EXPECT_THROW(forward(g, c, s, g.input("x", {3, 1})), diffcore::ShapeError);
}

TEST(Forward, BatchMatchesColumns) {
  const MlpConfig c = tiny(2, 3, {6, 6});
  CompiledMlp net(c, random_params(c, 4));
  const Matrix x = Matrix::Random(2, 5);
  const Matrix batch = net.forward(x);
  for (int j = 0; j < 5; ++j) {
    EXPECT_TRUE(batch.col(j).isApprox(net.forward(Vector(x.col(j))), 1e-14));
  }
}

TEST(Forward, DoesNotMutateParams) {
  const MlpConfig c = tiny(2, 2, {4});
  const NetworkParams p = random_params(c, 2);
  CompiledMlp net(c, p);
  (void)net.forward(Matrix(Matrix::Random(2, 3)));
  (void)net.jacobian(Vector(Vector::Random(2)));
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    EXPECT_EQ(net.params().layers[k].weight, p.layers[k].weight);
    EXPECT_EQ(net.params().layers[k].bias, p.layers[k].bias);
  }
}

TEST(InputJacobian, QuadraticSpringEnergy) {
  // H(q, p) = k q^2 / 2 + p^2 / (2 m) with m = 1/2, k = 2: gradient (2q, 2p)
  Graph g;
  const auto x = g.input("x", {2, 1});
  const auto h = g.add(g.square(g.slice_rows(x, 0, 1)), g.square(g.slice_rows(x, 1, 1)));
  const auto jac = input_jacobian(g, h, x);
  Bindings b;
  b.bind(x, (Matrix(2, 1) << 1.0, 0.0).finished());
  const Matrix grad = diffcore::evaluate(g, b)[jac[0]];
  EXPECT_EQ(grad(0, 0), 2.0);
  EXPECT_EQ(grad(1, 0), 0.0);
}

TEST(InputJacobian, ConstantNetworkHasZeroJacobian) {
  const MlpConfig c = tiny(2, 3, {4});
  NetworkParams p = zero_params(c);
  p.layers.back().bias.setConstant(1.0);
  CompiledMlp net(c, p);
  EXPECT_TRUE(net.jacobian(Vector(Vector::Random(2))).isZero());
}

double central_jacobian_error(const CompiledMlp& net, const Vector& x, double step) {
  const Matrix jac = net.jacobian(x);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector up = x, down = x;
    up(i) += step;
    down(i) -= step;
    const Vector fd = (net.forward(up) - net.forward(down)) / (2.0 * step);
    for (Eigen::Index k = 0; k < fd.size(); ++k) {
      const double scale = std::max({std::abs(fd(k)), std::abs(jac(k, i)), 1e-6});
      worst = std::max(worst, std::abs(fd(k) - jac(k, i)) / scale);
    }
  }
  return worst;
}

TEST(InputJacobian, MatchesCentralDifferences) {
  const MlpConfig c = tiny(3, 2, {8, 8});
  CompiledMlp net(c, random_params(c, 11));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector x = Vector::NullaryExpr(3, [&] { return u(rng); });
    EXPECT_LT(central_jacobian_error(net, x, 1e-5), 1e-4) << "trial " << trial;
  }
}

TEST(InputJacobian, BatchedRowsMatchSingleSamples) {
  const MlpConfig c = tiny(2, 2, {5});
  CompiledMlp net(c, random_params(c, 6));
  const Matrix x = Matrix::Random(2, 4);
  const auto rows = net.jacobian(x);
  ASSERT_EQ(rows.size(), 2u);
  for (int j = 0; j < 4; ++j) {
    const Matrix single = net.jacobian(Vector(x.col(j)));
    for (int k = 0; k < 2; ++k) {
      EXPECT_TRUE(rows[k].col(j).isApprox(single.row(k).transpose(), 1e-13));
    }
  }
}

TEST(InputJacobian, ParameterGradientOfJacobianMatchesDifferences) {
  // scalar function of the input Jacobian, differentiated w.r.t. every weight
  const MlpConfig c = tiny(2, 1, {4, 4});
  Graph g;
  const MlpSlots s = declare_params(g, c, "h");
  const auto x = g.input("x", {2, 6});
  const auto out = forward(g, c, s, x);
  const auto jac = input_jacobian(g, out, x);
  const auto target = g.sum(g.square(g.sub(jac[0], g.constant(Matrix::Constant(2, 6, 0.3)))));

  Bindings b;
  bind_params(b, s, random_params(c, 21));
  b.bind(x, Matrix::Random(2, 6));
  const double err = diffcore::finite_difference_check(g, {target, s.all()}, b, 1e-5);
  EXPECT_LT(err, 1e-3);
}

TEST(InputJvp, MatchesJacobianTimesDirection) {
  const MlpConfig c = tiny(1, 4, {6, 6});
  Graph g;
  const MlpSlots s = declare_params(g, c, "s");
  const auto t = g.input("t", {1, 7});
  const auto out = forward(g, c, s, t);
  const auto jvp = input_jvp(g, out, t, g.ones({1, 7}));
  const auto jac = input_jacobian(g, out, t);

  Bindings b;
  const NetworkParams p = random_params(c, 8);
  bind_params(b, s, p);
  b.bind(t, Matrix::Random(1, 7));
  const auto v = diffcore::evaluate(g, b);
  for (int k = 0; k < 4; ++k) {
    EXPECT_TRUE(v[jvp].row(k).isApprox(v[jac[k]], 1e-12)) << "row " << k;
  }
}

TEST(Params, FlattenRoundTrip) {
  const MlpConfig c = tiny(2, 3, {4, 5});
  const NetworkParams p = random_params(c, 9);
  const auto flat = flatten(p);
  ASSERT_EQ(flat.size(), 6u);
  const NetworkParams q = unflatten(c, flat);
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    EXPECT_EQ(q.layers[k].weight, p.layers[k].weight);
    EXPECT_EQ(q.layers[k].bias, p.layers[k].bias);
  }
  EXPECT_EQ(p.parameter_count(), 2u * 4 + 4 + 4 * 5 + 5 + 5 * 3 + 3);
}

TEST(Params, CheckRejectsWrongShapes) {
  const MlpConfig c = tiny(2, 1, {3});
  NetworkParams p = init_params(c, 1);
  p.layers[0].weight.resize(3, 3);
  EXPECT_THROW(check_params(c, p), std::invalid_argument);
}

TEST(Checkpoint, JsonRoundTripIsBitExact) {
  const MlpConfig c = tiny(2, 2, {3, 3});
  NetworkParams p = random_params(c, 10);
  p.layers[0].weight(0, 0) = 0.1 + 0.2;  // not representable in short decimal form
  const auto text = to_json(c, p).dump();
  const auto j = nlohmann::json::parse(text);
  const MlpConfig c2 = config_from_json(j.at("config"));
  EXPECT_EQ(c2, c);
  const NetworkParams q = params_from_json(j, c2);
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    EXPECT_EQ(q.layers[k].weight, p.layers[k].weight);
    EXPECT_EQ(q.layers[k].bias, p.layers[k].bias);
  }
}

}  // namespace
}  // namespace dhh::nets
