#include "dhh/systems/systems.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

namespace dhh::systems {

Vector PhaseState::flat() const {
  Vector out(q.size() + p.size());
  out << q, p;
  return out;
}

PhaseState PhaseState::from_flat(const Vector& flat) {
  if (flat.size() == 0 || flat.size() % 2 != 0) {
    throw std::invalid_argument(fmt::format("phase vector needs even length, got {}", flat.size()));
  }
  const Eigen::Index d = flat.size() / 2;
  return {flat.head(d), flat.tail(d)};
}

void PhaseState::validate() const {
  if (q.size() == 0 || q.size() != p.size()) {
    throw std::invalid_argument(
        fmt::format("phase state needs equal non-empty halves (q={}, p={})", q.size(), p.size()));
  }
  if (!q.allFinite() || !p.allFinite()) throw std::invalid_argument("phase state is not finite");
}

int SystemSpec::dof() const { return kind == SystemKind::kNBody ? 2 * bodies() : 1; }

std::string SystemSpec::name() const {
  switch (kind) {
    case SystemKind::kMassSpring: return "mass_spring";
    case SystemKind::kPendulum: return "pendulum";
    case SystemKind::kNBody:
      if (bodies() == 2) return "two_body";
      if (bodies() == 3) return "three_body";
      return fmt::format("{}_body", bodies());
  }
  return "unknown";
}

SystemSpec mass_spring(double mass, double stiffness) {
  SystemSpec s;
  s.kind = SystemKind::kMassSpring;
  s.mass = mass;
  s.stiffness = stiffness;
  return s;
}

SystemSpec pendulum(double mass, double length, double gravity) {
  SystemSpec s;
  s.kind = SystemKind::kPendulum;
  s.mass = mass;
  s.length = length;
  s.gravity = gravity;
  return s;
}

SystemSpec n_body(int bodies, double gravitational_constant, double mass) {
  if (bodies < 2) throw std::invalid_argument("n-body system needs at least two bodies");
  SystemSpec s;
  s.kind = SystemKind::kNBody;
  s.gravitational_constant = gravitational_constant;
  s.masses.assign(static_cast<std::size_t>(bodies), mass);
  return s;
}

SystemSpec system_from_name(std::string_view name) {
  if (name == "mass_spring") return mass_spring();
  if (name == "pendulum") return pendulum();
  if (name == "two_body") return n_body(2);
  if (name == "three_body") return n_body(3);
  throw std::invalid_argument(fmt::format(
      "unknown system '{}' (expected mass_spring, pendulum, two_body, three_body)", name));
}

namespace {

void check_dimension(const SystemSpec& spec, const PhaseState& state) {
  state.validate();
  if (state.dof() != spec.dof()) {
    throw std::invalid_argument(fmt::format("{} expects {} coordinates per half, got {}",
                                            spec.name(), spec.dof(), state.dof()));
  }
}

Eigen::Vector2d body(const Vector& q, int i) { return q.segment<2>(2 * i); }

}  // namespace

double hamiltonian_true(const SystemSpec& spec, const PhaseState& state) {
  check_dimension(spec, state);
  switch (spec.kind) {
    case SystemKind::kMassSpring: {
      const double q = state.q[0];
      const double p = state.p[0];
      return 0.5 * spec.stiffness * q * q + p * p / (2.0 * spec.mass);
    }
    case SystemKind::kPendulum: {
      const double q = state.q[0];
      const double p = state.p[0];
      const double l = spec.length;
      return 2.0 * spec.mass * spec.gravity * l * (1.0 - std::cos(q)) +
             l * l * p * p / (2.0 * spec.mass);
    }
    case SystemKind::kNBody: {
      double kinetic = 0.0;
      double potential = 0.0;
      for (int i = 0; i < spec.bodies(); ++i) {
        kinetic += body(state.p, i).squaredNorm() / (2.0 * spec.masses[i]);
        for (int j = i + 1; j < spec.bodies(); ++j) {
          const double r = (body(state.q, i) - body(state.q, j)).norm();
          if (r == 0.0) throw SingularityError(fmt::format("bodies {} and {} coincide", i, j));
          potential -= spec.gravitational_constant * spec.masses[i] * spec.masses[j] / r;
        }
      }
      return kinetic + potential;
    }
  }
  throw std::logic_error("unhandled system kind");
}

PhaseState hamiltonian_gradient_true(const SystemSpec& spec, const PhaseState& state) {
  check_dimension(spec, state);
  PhaseState g{Vector::Zero(state.q.size()), Vector::Zero(state.p.size())};
  switch (spec.kind) {
    case SystemKind::kMassSpring:
      g.q[0] = spec.stiffness * state.q[0];
      g.p[0] = state.p[0] / spec.mass;
      return g;
    case SystemKind::kPendulum: {
      const double l = spec.length;
      g.q[0] = 2.0 * spec.mass * spec.gravity * l * std::sin(state.q[0]);
      g.p[0] = l * l * state.p[0] / spec.mass;
      return g;
    }
    case SystemKind::kNBody:
      for (int i = 0; i < spec.bodies(); ++i) {
        g.p.segment<2>(2 * i) = body(state.p, i) / spec.masses[i];
        for (int j = 0; j < spec.bodies(); ++j) {
          if (j == i) continue;
          const Eigen::Vector2d diff = body(state.q, i) - body(state.q, j);
          const double r = diff.norm();
          if (r == 0.0) throw SingularityError(fmt::format("bodies {} and {} coincide", i, j));
          g.q.segment<2>(2 * i) += spec.gravitational_constant * spec.masses[i] *
                                   spec.masses[j] * diff / (r * r * r);
        }
      }
      return g;
  }
  throw std::logic_error("unhandled system kind");
}

PhaseState hamilton_rhs(const GradientFn& gradient, const PhaseState& state) {
  PhaseState g = gradient(state);
  return {std::move(g.p), -g.q};
}

PhaseState hamilton_rhs(const SystemSpec& spec, const PhaseState& state) {
  return hamilton_rhs([&spec](const PhaseState& s) { return hamiltonian_gradient_true(spec, s); },
                      state);
}

double conservation_residual(const PhaseState& gradient) {
  // dH/dt = dH/dq . dq/dt + dH/dp . dp/dt with (dq/dt, dp/dt) = (dH/dp, -dH/dq)
  return gradient.q.dot(gradient.p) + gradient.p.dot(-gradient.q);
}

double min_pairwise_distance(const SystemSpec& spec, const PhaseState& state) {
  if (spec.kind != SystemKind::kNBody) return std::numeric_limits<double>::infinity();
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < spec.bodies(); ++i) {
    for (int j = i + 1; j < spec.bodies(); ++j) {
      best = std::min(best, (body(state.q, i) - body(state.q, j)).norm());
    }
  }
  return best;
}

PhaseState sample_initial_state(const SystemSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr double kTwoPi = 2.0 * std::numbers::pi;

  if (spec.kind != SystemKind::kNBody) {
    // area-uniform radius on [0.5, 1.5]
    const double r = std::sqrt(0.25 + unit(rng) * (2.25 - 0.25));
    const double angle = kTwoPi * unit(rng);
    PhaseState s{Vector::Constant(1, r * std::cos(angle)), Vector::Constant(1, r * std::sin(angle))};
    return s;
  }

  const int n = spec.bodies();
  const double radius = 0.9 + 0.2 * unit(rng);
  const double phase = kTwoPi * unit(rng);
  PhaseState s{Vector::Zero(2 * n), Vector::Zero(2 * n)};
  for (int i = 0; i < n; ++i) {
    const double a = phase + kTwoPi * i / n;
    s.q.segment<2>(2 * i) = radius * Eigen::Vector2d(std::cos(a), std::sin(a));
  }

  double total_mass = 0.0;
  for (double m : spec.masses) total_mass += m;
  Eigen::Vector2d centre = Eigen::Vector2d::Zero();
  for (int i = 0; i < n; ++i) centre += spec.masses[i] * body(s.q, i);
  centre /= total_mass;
  for (int i = 0; i < n; ++i) s.q.segment<2>(2 * i) -= centre;

  const PhaseState force = hamiltonian_gradient_true(spec, s);  // dH/dq = -force
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d pos = body(s.q, i);
    const double r = pos.norm();
    const Eigen::Vector2d inward = -pos / r;
    const double pull = (-force.q.segment<2>(2 * i)).dot(inward);
    const double speed = std::sqrt(std::max(pull, 0.0) * r / spec.masses[i]);
    const Eigen::Vector2d tangent(-inward.y(), inward.x());
    const double jitter = 0.9 + 0.2 * unit(rng);
    s.p.segment<2>(2 * i) = spec.masses[i] * speed * jitter * tangent;
  }

  Eigen::Vector2d momentum = Eigen::Vector2d::Zero();
  for (int i = 0; i < n; ++i) momentum += body(s.p, i);
  for (int i = 0; i < n; ++i) s.p.segment<2>(2 * i) -= spec.masses[i] / total_mass * momentum;
  return s;
}

}  // namespace dhh::systems
