#pragma once

// Loss terms as graph builders. Every builder appends nodes to a graph and
// returns a 1x1 node, so the terms can be summed and differentiated w.r.t.
// network parameters afterwards.
//
// Functions are passed as GraphFunction so the same losses apply to MLPs and
// to closed-form expressions (used by the tests).

#include <functional>
#include <span>

#include "dhh/diffcore/graph.hpp"
#include "dhh/nets/mlp.hpp"

namespace dhh::training {

using diffcore::Graph;
using diffcore::NodeId;

// Maps a batch (rows = input dim, cols = samples) to a batch of outputs.
using GraphFunction = std::function<NodeId(Graph&, NodeId)>;

GraphFunction mlp_function(const nets::MlpConfig& config, const nets::MlpSlots& slots);

// mean_i || s(t_i) - y_i ||^2 over the observed rows only.
// times: 1 x N normalized; observed: |rows| x N, rows given by observed_rows.
NodeId loss_fit(Graph& g, const GraphFunction& solution, NodeId times, NodeId observed,
                std::span<const Eigen::Index> observed_rows);

// d s / d t_raw at the given normalized times: d s / d tau * time_scale.
NodeId solution_time_derivative(Graph& g, const GraphFunction& solution, NodeId times,
                                double time_scale, NodeId* states_out = nullptr);

// Hamilton residual from the solution net:
// mean_k (dq/dt - dH/dp)^2 + (dp/dt + dH/dq)^2 at collocation times (1 x K).
NodeId loss_hnn_residual(Graph& g, const GraphFunction& solution,
                         const GraphFunction& hamiltonian, NodeId collocation, double time_scale);

// Same residual with given state derivatives (finite differences or the
// simulator): states and targets are 2d x N in raw time.
NodeId loss_hnn_targets(Graph& g, const GraphFunction& hamiltonian, NodeId states,
                        NodeId targets);

// mean_k || ds/dt - f(s(t_k)) ||^2 with a black-box dynamics function.
NodeId loss_ode_residual(Graph& g, const GraphFunction& solution, const GraphFunction& dynamics,
                         NodeId collocation, double time_scale);

// mean_m (H(s(t_i)) - H(s(t_j)))^2 for paired times (both 1 x M).
NodeId loss_extra(Graph& g, const GraphFunction& solution, const GraphFunction& hamiltonian,
                  NodeId first_times, NodeId second_times);

// Unrolled explicit-midpoint prediction from each start column to the next
// observation: `substeps` RK2 steps of per-column size `substep` (1 x P).
// Returns the predicted 2d x P states.
NodeId rk2_unroll(Graph& g, const GraphFunction& dynamics, NodeId start, NodeId substep,
                  int substeps);

// mean_p || rk2_unroll(x_p) - x_{p+1} ||^2
NodeId loss_one_step(Graph& g, const GraphFunction& dynamics, NodeId start, NodeId next,
                     NodeId substep, int substeps);

}  // namespace dhh::training
