#pragma once

#include <Eigen/Dense>

namespace dhh::data {

// Time series of flat phase vectors; column i of `states` belongs to times[i].
struct Trajectory {
  Eigen::VectorXd times;
  Eigen::MatrixXd states;  // 2d x n

  [[nodiscard]] Eigen::Index size() const { return times.size(); }
  [[nodiscard]] Eigen::Index dimension() const { return states.rows(); }
  // Throws std::invalid_argument unless lengths agree and times strictly increase.
  void validate() const;
};

// Linear interpolation of `traj` at `times` (which must lie inside its span).
Trajectory interpolate(const Trajectory& traj, const Eigen::VectorXd& times);

}  // namespace dhh::data
