#include "zlik/core.hpp"

#include <cmath>
#include <string>

#include "zlik/errors.hpp"

namespace zlik {

State State::from_array(std::span<const double> a) {
  if (a.size() != kPoseDim) {
    throw LengthError("state needs 6 values, got " + std::to_string(a.size()));
  }
  return State{a[0], a[1], a[2], a[3], a[4], a[5]};
}

std::array<double, kHistoryDim> HistoryStep::channels() const {
  return {pose.dx, pose.dy, pose.dz, pose.droll, pose.dpitch, pose.dyaw, action.v, action.omega};
}

double wrap_angle(double a) {
  if (!std::isfinite(a)) {
    throw DomainError("wrap_angle: non-finite angle");
  }
  double r = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

bool is_valid(const State& s) {
  for (double v : s.to_array()) {
    if (!std::isfinite(v)) return false;
  }
  auto in_range = [](double a) { return a > -kPi && a <= kPi; };
  return in_range(s.roll) && in_range(s.pitch) && in_range(s.yaw);
}

bool within_limits(const Action& u, double v_max, double omega_max) {
  return std::isfinite(u.v) && std::isfinite(u.omega) && std::abs(u.v) <= v_max &&
         std::abs(u.omega) <= omega_max;
}

void Trajectory::validate() const {
  if (states.size() != actions.size()) {
    throw LengthError("trajectory has " + std::to_string(states.size()) + " states but " +
                      std::to_string(actions.size()) + " actions");
  }
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw DomainError("trajectory dt must be positive");
  }
  for (const auto& s : states) {
    if (!is_valid(s)) throw DomainError("trajectory contains an invalid state");
  }
}

RelativeStep relative_step(const State& prev, const State& next) {
  const double ex = next.x - prev.x;
  const double ey = next.y - prev.y;
  const double c = std::cos(prev.yaw);
  const double s = std::sin(prev.yaw);
  RelativeStep r;
  r.dx = c * ex + s * ey;
  r.dy = -s * ex + c * ey;
  r.dz = next.z - prev.z;
  r.droll = wrap_angle(next.roll - prev.roll);
  r.dpitch = wrap_angle(next.pitch - prev.pitch);
  r.dyaw = wrap_angle(next.yaw - prev.yaw);
  return r;
}

std::vector<HistoryStep> to_relative_history(const Trajectory& traj) {
  if (traj.states.size() < 2) {
    throw LengthError("relative history needs at least 2 states");
  }
  if (traj.actions.size() != traj.states.size()) {
    throw LengthError("relative history needs one action per state");
  }
  std::vector<HistoryStep> out;
  out.reserve(traj.states.size() - 1);
  for (std::size_t i = 0; i + 1 < traj.states.size(); ++i) {
    out.push_back({relative_step(traj.states[i], traj.states[i + 1]), traj.actions[i + 1]});
  }
  return out;
}

std::vector<std::array<double, kPoseDim>> to_relative_targets(const State& anchor,
                                                              std::span<const State> future) {
  if (future.empty()) {
    throw LengthError("relative targets need a non-empty future");
  }
  std::vector<std::array<double, kPoseDim>> out;
  out.reserve(future.size());
  for (const auto& s : future) out.push_back(relative_step(anchor, s).to_array());
  return out;
}

std::vector<State> integrate_relative_history(const State& start,
                                              std::span<const HistoryStep> history) {
  std::vector<State> out;
  out.reserve(history.size() + 1);
  out.push_back(start);
  for (const auto& h : history) {
    const State& p = out.back();
    const double c = std::cos(p.yaw);
    const double s = std::sin(p.yaw);
    State n;
    n.x = p.x + c * h.pose.dx - s * h.pose.dy;
    n.y = p.y + s * h.pose.dx + c * h.pose.dy;
    n.z = p.z + h.pose.dz;
    n.roll = wrap_angle(p.roll + h.pose.droll);
    n.pitch = wrap_angle(p.pitch + h.pose.dpitch);
    n.yaw = wrap_angle(p.yaw + h.pose.dyaw);
    out.push_back(n);
  }
  return out;
}

}  // namespace zlik
