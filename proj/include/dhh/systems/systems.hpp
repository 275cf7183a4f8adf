#pragma once

// Ground-truth Hamiltonian systems: mass-spring, pendulum and planar
// gravitational n-body, together with Hamilton's vector field.

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dhh/common/rng.hpp"

namespace dhh::systems {

using Vector = Eigen::VectorXd;

// Canonical coordinates. The flat layout used by integrators and networks
// is (q_1..q_d, p_1..p_d).
struct PhaseState {
  Vector q;
  Vector p;

  [[nodiscard]] int dof() const { return static_cast<int>(q.size()); }
  [[nodiscard]] Vector flat() const;
  static PhaseState from_flat(const Vector& flat);
  // Throws std::invalid_argument on mismatched or empty halves, or
  // non-finite entries.
  void validate() const;
};

enum class SystemKind { kMassSpring, kPendulum, kNBody };

struct SystemSpec {
  SystemKind kind = SystemKind::kMassSpring;
  double mass = 0.5;    // mass-spring, pendulum
  double stiffness = 2.0;
  double length = 1.0;
  double gravity = 3.0;
  double gravitational_constant = 1.0;  // n-body
  std::vector<double> masses;           // n-body, one per body

  [[nodiscard]] int bodies() const { return static_cast<int>(masses.size()); }
  // Phase-space half dimension d: 1 for the 1-dof systems, 2N for planar N bodies.
  [[nodiscard]] int dof() const;
  [[nodiscard]] std::string name() const;
};

SystemSpec mass_spring(double mass = 0.5, double stiffness = 2.0);
SystemSpec pendulum(double mass = 0.5, double length = 1.0, double gravity = 3.0);
SystemSpec n_body(int bodies, double gravitational_constant = 1.0, double mass = 1.0);

// Accepts "mass_spring", "pendulum", "two_body", "three_body".
SystemSpec system_from_name(std::string_view name);

class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double hamiltonian_true(const SystemSpec& spec, const PhaseState& state);

// (dH/dq, dH/dp) packed as a PhaseState.
PhaseState hamiltonian_gradient_true(const SystemSpec& spec, const PhaseState& state);

using GradientFn = std::function<PhaseState(const PhaseState&)>;

// (dq/dt, dp/dt) = (dH/dp, -dH/dq) for any Hamiltonian exposed through its
// gradient, whether analytic or learned.
PhaseState hamilton_rhs(const GradientFn& gradient, const PhaseState& state);
PhaseState hamilton_rhs(const SystemSpec& spec, const PhaseState& state);

// dH/dt along the Hamiltonian flow of H itself, evaluated from one gradient:
// dH/dq . dH/dp + dH/dp . (-dH/dq). Algebraically zero.
double conservation_residual(const PhaseState& gradient);

// Smallest distance between two bodies; +inf for the 1-dof systems.
double min_pairwise_distance(const SystemSpec& spec, const PhaseState& state);

// Mass-spring and pendulum: area-uniform on the annulus 0.5 <= |(q,p)| <= 1.5.
// n-body: bodies evenly spaced on a circle of radius ~1 around the origin,
// randomly rotated, with circular-orbit tangential momenta scaled by
// U(0.9, 1.1) per body; positions and momenta are re-centred so the
// barycentre is at rest at the origin.
PhaseState sample_initial_state(const SystemSpec& spec, Rng& rng);

}  // namespace dhh::systems
