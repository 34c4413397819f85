#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace zlik {

inline constexpr double kPi = 3.14159265358979323846;

// Number of pose channels and history channels (pose deltas + action).
inline constexpr std::size_t kPoseDim = 6;
inline constexpr std::size_t kActionDim = 2;
inline constexpr std::size_t kHistoryDim = kPoseDim + kActionDim;

inline constexpr double kDefaultDt = 0.05;

// 6-DoF pose. Angles are kept in (-pi, pi].
struct State {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;

  std::array<double, kPoseDim> to_array() const { return {x, y, z, roll, pitch, yaw}; }
  static State from_array(std::span<const double> a);
  bool operator==(const State&) const = default;
};

// Commanded linear (m/s) and angular (rad/s) velocity.
struct Action {
  double v = 0.0;
  double omega = 0.0;

  bool operator==(const Action&) const = default;
};

struct Trajectory {
  std::vector<State> states;
  std::vector<Action> actions;
  double dt = kDefaultDt;

  std::size_t size() const { return states.size(); }
  // Throws DomainError / LengthError when an invariant is broken.
  void validate() const;
};

// Pose change expressed in the previous pose's heading frame.
struct RelativeStep {
  double dx = 0.0;
  double dy = 0.0;
  double dz = 0.0;
  double droll = 0.0;
  double dpitch = 0.0;
  double dyaw = 0.0;

  std::array<double, kPoseDim> to_array() const { return {dx, dy, dz, droll, dpitch, dyaw}; }
};

// One element of a relative history: the pose change arriving at a state and
// the action executed at that state. Channel order is
// (dx, dy, dz, droll, dpitch, dyaw, v, omega).
struct HistoryStep {
  RelativeStep pose;
  Action action;

  std::array<double, kHistoryDim> channels() const;
};

// Wraps an angle into (-pi, pi]. Throws DomainError for non-finite input.
double wrap_angle(double a);

bool is_valid(const State& s);
bool within_limits(const Action& u, double v_max, double omega_max);

RelativeStep relative_step(const State& prev, const State& next);

// Element i (0-based) pairs relative_step(states[i], states[i+1]) with
// actions[i+1]: the history ends with the action applied at the last state.
std::vector<HistoryStep> to_relative_history(const Trajectory& traj);

// Each future state expressed relative to the fixed anchor pose.
std::vector<std::array<double, kPoseDim>> to_relative_targets(const State& anchor,
                                                              std::span<const State> future);

// Inverse of to_relative_history for the planar channels: re-integrates
// (dx, dy, dyaw) from a starting pose. z, roll and pitch are chained by plain
// differences.
std::vector<State> integrate_relative_history(const State& start,
                                              std::span<const HistoryStep> history);

}  // namespace zlik
