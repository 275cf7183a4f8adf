#include "dhh/training/losses.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace dhh::training {

using diffcore::Index;
using diffcore::Shape;

GraphFunction mlp_function(const nets::MlpConfig& config, const nets::MlpSlots& slots) {
  return [config, slots](Graph& g, NodeId input) { return nets::forward(g, config, slots, input); };
}

namespace {

NodeId mean_over_columns(Graph& g, NodeId squared_sum, Index columns) {
  return g.scale(squared_sum, 1.0 / static_cast<double>(columns));
}

void require_times(const Graph& g, NodeId times, std::string_view what) {
  if (g.shape(times).rows != 1) {
    throw diffcore::ShapeError(fmt::format("{}: times must be a 1 x K row", what));
  }
}

}  // namespace

NodeId loss_fit(Graph& g, const GraphFunction& solution, NodeId times, NodeId observed,
                std::span<const Index> observed_rows) {
  require_times(g, times, "loss_fit");
  if (observed_rows.empty()) throw std::invalid_argument("loss_fit: no observed coordinates");
  const NodeId states = solution(g, times);
  std::vector<NodeId> picked;
  picked.reserve(observed_rows.size());
  for (Index r : observed_rows) picked.push_back(g.slice_rows(states, r, 1));
  const NodeId predicted = g.concat_rows(picked);
  const NodeId residual = g.sub(predicted, observed);
  return mean_over_columns(g, g.sum(g.square(residual)), g.shape(times).cols);
}

NodeId solution_time_derivative(Graph& g, const GraphFunction& solution, NodeId times,
                                double time_scale, NodeId* states_out) {
  require_times(g, times, "solution_time_derivative");
  const NodeId states = solution(g, times);
  if (states_out != nullptr) *states_out = states;
  const NodeId rate = nets::input_jvp(g, states, times, g.ones(g.shape(times)));
  return g.scale(rate, time_scale);
}

namespace {

struct HalfRows {
  NodeId q;
  NodeId p;
};

HalfRows halves(Graph& g, NodeId stacked) {
  const Index rows = g.shape(stacked).rows;
  if (rows % 2 != 0) throw diffcore::ShapeError("phase batch needs an even number of rows");
  return {g.slice_rows(stacked, 0, rows / 2), g.slice_rows(stacked, rows / 2, rows / 2)};
}

// sum over columns of (dq/dt - dH/dp)^2 + (dp/dt + dH/dq)^2
NodeId hamilton_mismatch(Graph& g, const GraphFunction& hamiltonian, NodeId states,
                         NodeId rates) {
  const NodeId energy = hamiltonian(g, states);
  if (g.shape(energy).rows != 1) {
    throw diffcore::ShapeError("hamiltonian must return one energy per column");
  }
  const NodeId wrt[] = {states};
  const NodeId grad = g.gradient(g.sum(energy), wrt)[0];
  const HalfRows dh = halves(g, grad);
  const HalfRows ds = halves(g, rates);
  const NodeId rq = g.sub(ds.q, dh.p);
  const NodeId rp = g.add(ds.p, dh.q);
  return g.add(g.sum(g.square(rq)), g.sum(g.square(rp)));
}

}  // namespace

NodeId loss_hnn_residual(Graph& g, const GraphFunction& solution,
                         const GraphFunction& hamiltonian, NodeId collocation,
                         double time_scale) {
  NodeId states;
  const NodeId rates = solution_time_derivative(g, solution, collocation, time_scale, &states);
  return mean_over_columns(g, hamilton_mismatch(g, hamiltonian, states, rates),
                           g.shape(collocation).cols);
}

NodeId loss_hnn_targets(Graph& g, const GraphFunction& hamiltonian, NodeId states,
                        NodeId targets) {
  if (g.shape(states) != g.shape(targets)) {
    throw diffcore::ShapeError("loss_hnn_targets: states and targets differ in shape");
  }
  return mean_over_columns(g, hamilton_mismatch(g, hamiltonian, states, targets),
                           g.shape(states).cols);
}

NodeId loss_ode_residual(Graph& g, const GraphFunction& solution, const GraphFunction& dynamics,
                         NodeId collocation, double time_scale) {
  NodeId states;
  const NodeId rates = solution_time_derivative(g, solution, collocation, time_scale, &states);
  const NodeId field = dynamics(g, states);
  return mean_over_columns(g, g.sum(g.square(g.sub(rates, field))), g.shape(collocation).cols);
}

NodeId loss_extra(Graph& g, const GraphFunction& solution, const GraphFunction& hamiltonian,
                  NodeId first_times, NodeId second_times) {
  require_times(g, first_times, "loss_extra");
  if (g.shape(first_times) != g.shape(second_times)) {
    throw diffcore::ShapeError("loss_extra: pair rows differ in length");
  }
  const NodeId e1 = hamiltonian(g, solution(g, first_times));
  const NodeId e2 = hamiltonian(g, solution(g, second_times));
  return mean_over_columns(g, g.sum(g.square(g.sub(e1, e2))), g.shape(first_times).cols);
}

NodeId rk2_unroll(Graph& g, const GraphFunction& dynamics, NodeId start, NodeId substep,
                  int substeps) {
  if (substeps < 1) throw std::invalid_argument("rk2_unroll needs at least one sub-step");
  const Shape s = g.shape(start);
  if (g.shape(substep) != Shape{1, s.cols}) {
    throw diffcore::ShapeError("rk2_unroll: substep must be 1 x columns");
  }
  const NodeId h = g.broadcast(substep, s);
  const NodeId half_h = g.scale(h, 0.5);
  NodeId x = start;
  for (int i = 0; i < substeps; ++i) {
    const NodeId k1 = dynamics(g, x);
    const NodeId mid = g.add(x, g.mul(half_h, k1));
    const NodeId k2 = dynamics(g, mid);
    x = g.add(x, g.mul(h, k2));
  }
  return x;
}

NodeId loss_one_step(Graph& g, const GraphFunction& dynamics, NodeId start, NodeId next,
                     NodeId substep, int substeps) {
  const NodeId predicted = rk2_unroll(g, dynamics, start, substep, substeps);
  return mean_over_columns(g, g.sum(g.square(g.sub(predicted, next))), g.shape(start).cols);
}

}  // namespace dhh::training
