#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "zlik/core.hpp"

namespace zlik {

enum class DamageClass : int {
  kNoDamage = 0,
  kTirePuncture = 1,
  kTireAndSpring = 2,
  kMtpsb = 3,  // multiple tires punctured & suspensions broken
  kBrokenAxle = 4,
  kFall = 5,
};

inline constexpr std::size_t kNumClasses = 6;
inline constexpr std::array<DamageClass, kNumClasses> kAllClasses = {
    DamageClass::kNoDamage, DamageClass::kTirePuncture, DamageClass::kTireAndSpring,
    DamageClass::kMtpsb,    DamageClass::kBrokenAxle,   DamageClass::kFall};

std::string_view class_name(DamageClass c);
std::optional<DamageClass> parse_class(std::string_view name);
inline int class_index(DamageClass c) { return static_cast<int>(c); }

// Wheel order used by every per-wheel array.
enum Wheel : int { kFL = 0, kFR = 1, kRL = 2, kRR = 3 };
inline constexpr bool is_left(int w) { return w == kFL || w == kRL; }
inline constexpr bool is_front(int w) { return w == kFL || w == kFR; }

struct DamageSpec {
  DamageClass cls = DamageClass::kNoDamage;
  std::array<double, 4> tire{};    // puncture severity per wheel, [0, 1]
  std::array<double, 4> spring{};  // suspension severity per wheel, [0, 1]
  std::array<bool, 2> axle_broken{};  // (front, rear)

  // Throws DomainError when the severities do not match the class rules.
  void validate() const;
  double tire_total() const;
  bool any_axle() const { return axle_broken[0] || axle_broken[1]; }
  // Number of damaged components (severities > 0 plus broken axles).
  int component_count() const;
  bool operator==(const DamageSpec&) const = default;
};

struct SimConfig {
  double dt = kDefaultDt;
  int episode_len = 400;

  double k_v = 0.2;          // speed loss per unit of summed tire severity
  double k_omega = 0.3;      // rad per meter of yaw bias per unit severity imbalance
  double k_z = 0.02;         // m, heave amplitude per unit corner severity
  double k_rp = 0.05;        // rad, roll/pitch amplitude per unit corner severity
  double axle_factor = 0.4;  // speed multiplier with a broken axle
  double v_cap_mtpsb = 1.0;  // m/s
  double omega_wheel = 8.0;  // oscillation phase advance, rad per meter travelled

  // Per-step Gaussian noise std for (x, y, z, roll, pitch, yaw).
  std::array<double, kPoseDim> noise_std = {0.002, 0.002, 0.002, 0.005, 0.005, 0.005};

  double v_max = 5.0;
  double omega_max = 1.5;

  // Ornstein-Uhlenbeck random-walk policy.
  double ou_theta = 0.5;
  double ou_sigma_v = 1.0;
  double ou_sigma_omega = 0.6;

  // Discrete classes use severity 1.0 unless this is set, then U[0.5, 1].
  bool random_severity = false;

  void validate() const;
};

using Rng = std::mt19937_64;

struct StepResult {
  State state;
  double phase = 0.0;
};

// Speed actually achieved for commanded v under damage d.
double effective_speed(double v, const DamageSpec& d, const SimConfig& cfg);
// Yaw rate actually achieved for command u under damage d.
double effective_yaw_rate(const Action& u, const DamageSpec& d, const SimConfig& cfg);

// One dt of the damage-aware kinodynamics. `phase` is the wheel-oscillation
// accumulator carried between steps.
StepResult step(const State& s, const Action& u, const DamageSpec& d, double phase, Rng& rng,
                const SimConfig& cfg);

// Clamped OU actions, cfg.episode_len of them, starting from zero.
std::vector<Action> random_walk_policy(Rng& rng, const SimConfig& cfg);

// Samples a damage of the given class (severity rules per class).
DamageSpec sample_damage(DamageClass c, Rng& rng, const SimConfig& cfg);

// Natural-language rendering of a damage; synonyms are drawn from rng.
std::string describe(const DamageSpec& d, Rng& rng);

// Rolls out policy actions from the origin. Reproducible from (d, seed, cfg).
Trajectory simulate(const DamageSpec& d, std::uint64_t seed, const SimConfig& cfg);
Trajectory simulate(const DamageSpec& d, const std::vector<Action>& actions, std::uint64_t seed,
                    const SimConfig& cfg);

struct EpisodeRecord {
  std::string episode_id;
  DamageSpec damage;
  std::string description;
  Trajectory trajectory;
  std::uint64_t seed = 0;
};

// Damage, description and trajectory all derive from `seed` via independent
// child streams.
EpisodeRecord make_episode(std::string episode_id, DamageClass c, std::uint64_t seed,
                           const SimConfig& cfg);

// Per-episode statistics that expose the damage signal:
// [|yaw bias slope|, speed ratio, max |forward speed|, 4 corner oscillation RMS
// sorted descending]. Slopes come from least squares against commanded v.
std::vector<double> summary_features(const Trajectory& traj, const SimConfig& cfg);

}  // namespace zlik
