#include "dhh/integrators/integrators.hpp"

#include <cmath>

#include <fmt/format.h>

namespace dhh::integrators {

std::string_view scheme_name(Scheme scheme) {
  switch (scheme) {
    case Scheme::kEuler: return "euler";
    case Scheme::kRk2: return "rk2";
    case Scheme::kRk4: return "rk4";
  }
  return "unknown";
}

Scheme scheme_from_name(std::string_view name) {
  if (name == "euler") return Scheme::kEuler;
  if (name == "rk2") return Scheme::kRk2;
  if (name == "rk4") return Scheme::kRk4;
  throw std::invalid_argument(fmt::format("unknown scheme '{}' (expected euler, rk2, rk4)", name));
}

int stages(Scheme scheme) {
  switch (scheme) {
    case Scheme::kEuler: return 1;
    case Scheme::kRk2: return 2;
    case Scheme::kRk4: return 4;
  }
  return 0;
}

std::size_t RolloutSpec::steps() const {
  validate();
  const double ratio = (t_end - t_start) / step;
  return static_cast<std::size_t>(std::ceil(ratio - 1e-9 * ratio));
}

void RolloutSpec::validate() const {
  if (!(step > 0.0)) throw std::invalid_argument("rollout step must be positive");
  if (!(t_end > t_start)) throw std::invalid_argument("rollout needs t_end > t_start");
}

namespace {

Vector checked(const Rhs& rhs, double t, const Vector& s) {
  Vector v = rhs(t, s);
  if (v.size() != s.size()) {
    throw IntegrationError(fmt::format("rhs returned {} components for a {}-state", v.size(),
                                       s.size()),
                           t);
  }
  if (!v.allFinite()) throw IntegrationError(fmt::format("non-finite rhs at t={}", t), t);
  return v;
}

}  // namespace

Vector step(Scheme scheme, const Rhs& rhs, const Vector& state, double t, double dt) {
  switch (scheme) {
    case Scheme::kEuler:
      return state + dt * checked(rhs, t, state);
    case Scheme::kRk2: {
      const Vector k1 = checked(rhs, t, state);
      const Vector k2 = checked(rhs, t + 0.5 * dt, state + 0.5 * dt * k1);
      return state + dt * k2;
    }
    case Scheme::kRk4: {
      const Vector k1 = checked(rhs, t, state);
      const Vector k2 = checked(rhs, t + 0.5 * dt, state + 0.5 * dt * k1);
      const Vector k3 = checked(rhs, t + 0.5 * dt, state + 0.5 * dt * k2);
      const Vector k4 = checked(rhs, t + dt, state + dt * k3);
      return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  throw std::logic_error("unhandled scheme");
}

data::Trajectory rollout(const Rhs& rhs, const Vector& initial, const RolloutSpec& spec) {
  const std::size_t n = spec.steps();
  const double span = spec.t_end - spec.t_start;
  const double dt = span / static_cast<double>(n);
  const auto cols = static_cast<Eigen::Index>(n + 1);

  data::Trajectory traj{Eigen::VectorXd(cols), Eigen::MatrixXd(initial.size(), cols)};
  traj.times[0] = spec.t_start;
  traj.states.col(0) = initial;
  Vector s = initial;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = spec.t_start + span * static_cast<double>(i) / static_cast<double>(n);
    s = step(spec.scheme, rhs, s, t, dt);
    const auto c = static_cast<Eigen::Index>(i + 1);
    traj.times[c] = (i + 1 == n) ? spec.t_end
                                 : spec.t_start + span * static_cast<double>(i + 1) /
                                                      static_cast<double>(n);
    traj.states.col(c) = s;
  }
  return traj;
}

}  // namespace dhh::integrators
