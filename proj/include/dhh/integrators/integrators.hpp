#pragma once

// Fixed-step explicit integrators on flat phase vectors.

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "dhh/data/trajectory.hpp"

namespace dhh::integrators {

using Vector = Eigen::VectorXd;
using Rhs = std::function<Vector(double t, const Vector& state)>;

enum class Scheme { kEuler, kRk2, kRk4 };

std::string_view scheme_name(Scheme scheme);
Scheme scheme_from_name(std::string_view name);
int stages(Scheme scheme);

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, double time)
      : std::runtime_error(what), time_(time) {}
  [[nodiscard]] double time() const { return time_; }

 private:
  double time_;
};

struct RolloutSpec {
  double t_start = 0.0;
  double t_end = 1.0;
  double step = 1e-3;
  Scheme scheme = Scheme::kRk4;

  // ceil((t_end - t_start) / step), tolerant to rounding in the quotient.
  [[nodiscard]] std::size_t steps() const;
  void validate() const;
};

// One explicit step. Euler: s + dt f; RK2: explicit midpoint; RK4: classical.
Vector step(Scheme scheme, const Rhs& rhs, const Vector& state, double t, double dt);

// Dense trajectory at every step, endpoints included. The interval is split
// into steps() equal sub-intervals, so the last time is exactly t_end and
// the actual step never exceeds spec.step.
data::Trajectory rollout(const Rhs& rhs, const Vector& initial, const RolloutSpec& spec);

}  // namespace dhh::integrators
