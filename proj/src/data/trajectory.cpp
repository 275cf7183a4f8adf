#include "dhh/data/trajectory.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

namespace dhh::data {

void Trajectory::validate() const {
  if (times.size() != states.cols()) {
    throw std::invalid_argument(fmt::format("trajectory has {} times but {} states", times.size(),
                                            states.cols()));
  }
  for (Eigen::Index i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) {
      throw std::invalid_argument(fmt::format("trajectory times not increasing at index {}", i));
    }
  }
}

Trajectory interpolate(const Trajectory& traj, const Eigen::VectorXd& times) {
  traj.validate();
  if (traj.size() == 0) throw std::invalid_argument("cannot interpolate an empty trajectory");
  const double lo = traj.times[0];
  const double hi = traj.times[traj.size() - 1];
  const double slack = 1e-9 * std::max(1.0, hi - lo);

  Trajectory out{times, Eigen::MatrixXd(traj.dimension(), times.size())};
  const double* begin = traj.times.data();
  const double* end = begin + traj.size();
  for (Eigen::Index k = 0; k < times.size(); ++k) {
    const double t = times[k];
    if (t < lo - slack || t > hi + slack) {
      throw std::invalid_argument(
          fmt::format("interpolation time {} outside [{}, {}]", t, lo, hi));
    }
    if (traj.size() == 1) {
      out.states.col(k) = traj.states.col(0);
      continue;
    }
    auto it = std::upper_bound(begin, end, t);
    Eigen::Index hi_idx = std::clamp<Eigen::Index>(it - begin, 1, traj.size() - 1);
    Eigen::Index lo_idx = hi_idx - 1;
    const double t0 = traj.times[lo_idx];
    const double t1 = traj.times[hi_idx];
    const double w = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
    out.states.col(k) = (1.0 - w) * traj.states.col(lo_idx) + w * traj.states.col(hi_idx);
  }
  return out;
}

}  // namespace dhh::data
