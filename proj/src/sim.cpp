#include "zlik/sim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "zlik/errors.hpp"
#include "zlik/hashing.hpp"

namespace zlik {

namespace {

constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "NoDamage", "TirePuncture", "TireAndSpring", "MTPSB", "BrokenAxle", "Fall"};

// Child streams of an episode seed.
constexpr std::uint64_t kDamageStream = 1;
constexpr std::uint64_t kDescribeStream = 2;
constexpr std::uint64_t kPolicyStream = 3;
constexpr std::uint64_t kNoiseStream = 4;

bool positive(double s) { return s > 0.0; }

bool in_unit(double s) { return std::isfinite(s) && s >= 0.0 && s <= 1.0; }

// Adjacent wheel pairs: front axle, rear axle, left side, right side.
constexpr std::array<std::array<int, 2>, 4> kAdjacentPairs = {
    {{kFL, kFR}, {kRL, kRR}, {kFL, kRL}, {kFR, kRR}}};

double draw_uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t pick(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

}  // namespace

std::string_view class_name(DamageClass c) { return kClassNames.at(static_cast<std::size_t>(c)); }

std::optional<DamageClass> parse_class(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kClassNames[i] == name) return static_cast<DamageClass>(i);
  }
  return std::nullopt;
}

double DamageSpec::tire_total() const { return tire[0] + tire[1] + tire[2] + tire[3]; }

int DamageSpec::component_count() const {
  int n = 0;
  for (int w = 0; w < 4; ++w) n += positive(tire[w]) + positive(spring[w]);
  return n + axle_broken[0] + axle_broken[1];
}

void DamageSpec::validate() const {
  for (int w = 0; w < 4; ++w) {
    if (!in_unit(tire[w]) || !in_unit(spring[w])) {
      throw DomainError("damage severities must lie in [0, 1]");
    }
  }
  auto fail = [this](const char* rule) {
    throw DomainError(std::string("invalid ") + std::string(class_name(cls)) + " damage: " + rule);
  };
  int tires = 0, springs = 0;
  for (int w = 0; w < 4; ++w) {
    tires += positive(tire[w]);
    springs += positive(spring[w]);
  }
  const int axles = axle_broken[0] + axle_broken[1];
  switch (cls) {
    case DamageClass::kNoDamage:
      if (tires || springs || axles) fail("no component may be damaged");
      break;
    case DamageClass::kTirePuncture:
      if (tires != 1 || springs || axles) fail("exactly one punctured tire and nothing else");
      break;
    case DamageClass::kTireAndSpring: {
      if (tires != 1 || springs != 1 || axles) fail("one tire and one spring on the same wheel");
      for (int w = 0; w < 4; ++w) {
        if (positive(tire[w]) != positive(spring[w])) fail("tire and spring must share a wheel");
      }
      break;
    }
    case DamageClass::kMtpsb: {
      if (axles) fail("axles must be intact");
      bool adjacent = false;
      for (const auto& p : kAdjacentPairs) {
        if (positive(tire[p[0]]) && positive(spring[p[0]]) && positive(tire[p[1]]) &&
            positive(spring[p[1]])) {
          adjacent = true;
        }
      }
      if (!adjacent) fail("needs two adjacent wheels with tire and spring damage");
      break;
    }
    case DamageClass::kBrokenAxle:
      if (axles != 1 || tires || springs) fail("exactly one broken axle and nothing else");
      break;
    case DamageClass::kFall:
      break;
  }
}

void SimConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("sim.dt must be positive");
  if (episode_len < 2) throw ConfigError("sim.episode_len must be at least 2");
  for (double c : {k_v, k_omega, k_z, k_rp, axle_factor, v_cap_mtpsb, omega_wheel, v_max, omega_max,
                   ou_theta, ou_sigma_v, ou_sigma_omega}) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw ConfigError("sim coefficients must be >= 0");
  }
  for (double s : noise_std) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("sim.noise_std must be >= 0");
  }
}

double effective_speed(double v, const DamageSpec& d, const SimConfig& cfg) {
  double v_eff = v * (1.0 - cfg.k_v * d.tire_total()) * (d.any_axle() ? cfg.axle_factor : 1.0);
  if (d.cls == DamageClass::kMtpsb) {
    v_eff = std::clamp(v_eff, -cfg.v_cap_mtpsb, cfg.v_cap_mtpsb);
  }
  return v_eff;
}

double effective_yaw_rate(const Action& u, const DamageSpec& d, const SimConfig& cfg) {
  const auto& t = d.tire;
  const double imbalance = (t[kFL] + t[kRL]) - (t[kFR] + t[kRR]);
  return u.omega + cfg.k_omega * u.v * imbalance;
}

StepResult step(const State& s, const Action& u, const DamageSpec& d, double phase, Rng& rng,
                const SimConfig& cfg) {
  d.validate();
  if (!within_limits(u, cfg.v_max, cfg.omega_max)) {
    throw DomainError("action outside actuator limits");
  }
  const double dt = cfg.dt;
  const double v_eff = effective_speed(u.v, d, cfg);
  const double w_eff = effective_yaw_rate(u, d, cfg);

  StepResult out;
  State& n = out.state;
  n.x = s.x + v_eff * std::cos(s.yaw) * dt;
  n.y = s.y + v_eff * std::sin(s.yaw) * dt;
  n.yaw = s.yaw + w_eff * dt;

  out.phase = std::fmod(phase + std::abs(v_eff) * cfg.omega_wheel * dt, 2.0 * kPi);
  const double wave = std::sin(out.phase);
  // Corner vertical displacement; a damaged corner dips on the positive half-wave.
  double heave = 0.0, roll = 0.0, pitch = 0.0;
  for (int w = 0; w < 4; ++w) {
    const double dip = -(d.tire[w] + d.spring[w]) * wave;
    heave += dip;
    roll += (is_left(w) ? 1.0 : -1.0) * dip;    // left corner down -> negative roll
    pitch -= (is_front(w) ? 1.0 : -1.0) * dip;  // front corner down -> nose-down pitch
  }
  n.z = cfg.k_z * heave;
  n.roll = cfg.k_rp * roll;
  n.pitch = cfg.k_rp * pitch;

  std::array<double*, kPoseDim> channels = {&n.x, &n.y, &n.z, &n.roll, &n.pitch, &n.yaw};
  for (std::size_t i = 0; i < kPoseDim; ++i) {
    if (cfg.noise_std[i] > 0.0) {
      *channels[i] += std::normal_distribution<double>(0.0, cfg.noise_std[i])(rng);
    }
  }
  n.roll = wrap_angle(n.roll);
  n.pitch = wrap_angle(n.pitch);
  n.yaw = wrap_angle(n.yaw);
  return out;
}

std::vector<Action> random_walk_policy(Rng& rng, const SimConfig& cfg) {
  if (cfg.episode_len <= 0) throw DomainError("episode_len must be positive");
  // Exact discretisation of dx = -theta x dt + sigma dW.
  const double decay = std::exp(-cfg.ou_theta * cfg.dt);
  const double scale = cfg.ou_theta > 0.0
                           ? std::sqrt((1.0 - decay * decay) / (2.0 * cfg.ou_theta))
                           : std::sqrt(cfg.dt);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Action> actions;
  actions.reserve(static_cast<std::size_t>(cfg.episode_len));
  double v = 0.0, w = 0.0;
  for (int k = 0; k < cfg.episode_len; ++k) {
    actions.push_back(
        {std::clamp(v, -cfg.v_max, cfg.v_max), std::clamp(w, -cfg.omega_max, cfg.omega_max)});
    const double nv = normal(rng);
    const double nw = normal(rng);
    v = decay * v + cfg.ou_sigma_v * scale * nv;
    w = decay * w + cfg.ou_sigma_omega * scale * nw;
  }
  return actions;
}

DamageSpec sample_damage(DamageClass c, Rng& rng, const SimConfig& cfg) {
  auto severity = [&]() { return cfg.random_severity ? draw_uniform(rng, 0.5, 1.0) : 1.0; };
  DamageSpec d;
  d.cls = c;
  switch (c) {
    case DamageClass::kNoDamage:
      break;
    case DamageClass::kTirePuncture:
      d.tire[pick(rng, 4)] = severity();
      break;
    case DamageClass::kTireAndSpring: {
      const auto w = pick(rng, 4);
      d.tire[w] = severity();
      d.spring[w] = severity();
      break;
    }
    case DamageClass::kMtpsb: {
      for (int w : kAdjacentPairs[pick(rng, kAdjacentPairs.size())]) {
        d.tire[w] = severity();
        d.spring[w] = severity();
      }
      break;
    }
    case DamageClass::kBrokenAxle:
      d.axle_broken[pick(rng, 2)] = true;
      break;
    case DamageClass::kFall: {
      // Random multi-damage: redraw until at least two components fail.
      do {
        d = DamageSpec{};
        d.cls = c;
        for (int w = 0; w < 4; ++w) {
          if (draw_uniform(rng, 0.0, 1.0) < 0.5) d.tire[w] = draw_uniform(rng, 0.3, 1.0);
          if (draw_uniform(rng, 0.0, 1.0) < 0.5) d.spring[w] = draw_uniform(rng, 0.3, 1.0);
        }
        for (int a = 0; a < 2; ++a) d.axle_broken[a] = draw_uniform(rng, 0.0, 1.0) < 0.25;
      } while (d.component_count() < 2);
      break;
    }
  }
  d.validate();
  return d;
}

namespace {

struct VerbForm {
  std::string_view aux;
  std::string_view participle;
};

constexpr std::array<std::string_view, 4> kWheelWords = {"front left", "front right", "rear left",
                                                         "rear right"};
constexpr std::array<std::string_view, 2> kAxleWords = {"front", "rear"};

constexpr std::array<VerbForm, 3> kTireVerbs = {
    {{"is", "punctured"}, {"has", "burst"}, {"is", "flat"}}};
constexpr std::array<std::string_view, 3> kSpringNouns = {"spring", "suspension", "coil spring"};
constexpr std::array<VerbForm, 3> kSpringVerbs = {
    {{"is", "broken"}, {"has", "snapped"}, {"is", "cracked"}}};
constexpr std::array<std::string_view, 3> kAxleNouns = {"axle", "half-shaft", "drive shaft"};
constexpr std::array<VerbForm, 3> kAxleVerbs = {
    {{"is", "broken"}, {"has", "snapped"}, {"is", "fractured"}}};
constexpr std::array<std::string_view, 3> kFallPrefixes = {
    "After a fall, ", "Following a drop, ", "After tumbling down a slope, "};

std::string_view qualifier(double severity) {
  if (severity < 0.55) return "slightly ";
  if (severity < 0.8) return "partially ";
  return "";
}

std::string clause(std::string_view where, std::string_view noun, const VerbForm& verb,
                   double severity) {
  std::string s = "the ";
  s += where;
  s += ' ';
  s += noun;
  s += ' ';
  s += verb.aux;
  s += ' ';
  s += qualifier(severity);
  s += verb.participle;
  return s;
}

}  // namespace

std::string describe(const DamageSpec& d, Rng& rng) {
  d.validate();
  if (d.cls == DamageClass::kNoDamage) {
    return "The vehicle is healthy with no structural damage.";
  }
  std::vector<std::string> clauses;
  for (int w = 0; w < 4; ++w) {
    if (positive(d.tire[w])) {
      clauses.push_back(clause(kWheelWords[w], "tire", kTireVerbs[pick(rng, kTireVerbs.size())],
                               d.tire[w]));
    }
  }
  for (int w = 0; w < 4; ++w) {
    if (positive(d.spring[w])) {
      const auto noun = kSpringNouns[pick(rng, kSpringNouns.size())];
      clauses.push_back(
          clause(kWheelWords[w], noun, kSpringVerbs[pick(rng, kSpringVerbs.size())], d.spring[w]));
    }
  }
  for (int a = 0; a < 2; ++a) {
    if (d.axle_broken[a]) {
      const auto noun = kAxleNouns[pick(rng, kAxleNouns.size())];
      clauses.push_back(clause(kAxleWords[a], noun, kAxleVerbs[pick(rng, kAxleVerbs.size())], 1.0));
    }
  }

  std::string text;
  if (d.cls == DamageClass::kFall) text = kFallPrefixes[pick(rng, kFallPrefixes.size())];
  for (std::size_t i = 0; i < clauses.size(); ++i) {
    if (i > 0) text += (i + 1 == clauses.size()) ? " and " : ", ";
    text += clauses[i];
  }
  text += '.';
  text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
  return text;
}

Trajectory simulate(const DamageSpec& d, const std::vector<Action>& actions, std::uint64_t seed,
                    const SimConfig& cfg) {
  d.validate();
  Rng noise(derive_seed(seed, kNoiseStream));
  Trajectory traj;
  traj.dt = cfg.dt;
  traj.actions = actions;
  traj.states.reserve(actions.size());
  State s;
  double phase = 0.0;
  for (std::size_t k = 0; k < actions.size(); ++k) {
    traj.states.push_back(s);
    if (k + 1 < actions.size()) {
      auto r = step(s, actions[k], d, phase, noise, cfg);
      s = r.state;
      phase = r.phase;
    }
  }
  return traj;
}

Trajectory simulate(const DamageSpec& d, std::uint64_t seed, const SimConfig& cfg) {
  Rng policy(derive_seed(seed, kPolicyStream));
  return simulate(d, random_walk_policy(policy, cfg), seed, cfg);
}

EpisodeRecord make_episode(std::string episode_id, DamageClass c, std::uint64_t seed,
                           const SimConfig& cfg) {
  EpisodeRecord ep;
  ep.episode_id = std::move(episode_id);
  ep.seed = seed;
  Rng damage_rng(derive_seed(seed, kDamageStream));
  ep.damage = sample_damage(c, damage_rng, cfg);
  Rng text_rng(derive_seed(seed, kDescribeStream));
  ep.description = describe(ep.damage, text_rng);
  ep.trajectory = simulate(ep.damage, seed, cfg);
  return ep;
}

std::vector<double> summary_features(const Trajectory& traj, const SimConfig& cfg) {
  const auto& st = traj.states;
  const auto& ac = traj.actions;
  if (st.size() < 2 || ac.size() != st.size()) {
    throw LengthError("summary_features needs a paired trajectory of at least 2 states");
  }
  double vv = 0.0, fv = 0.0, rv = 0.0, max_fwd = 0.0;
  for (std::size_t i = 0; i + 1 < st.size(); ++i) {
    const auto rel = relative_step(st[i], st[i + 1]);
    const double v = ac[i].v;
    const double fwd = rel.dx / traj.dt;
    const double yaw_residual = rel.dyaw / traj.dt - ac[i].omega;
    vv += v * v;
    fv += fwd * v;
    rv += yaw_residual * v;
    max_fwd = std::max(max_fwd, std::abs(fwd));
  }
  const double yaw_slope = vv > 0.0 ? rv / vv : 0.0;
  const double speed_ratio = vv > 0.0 ? fv / vv : 0.0;

  std::array<double, 4> corner_sq{};
  const double kz = cfg.k_z > 0.0 ? cfg.k_z : 1.0;
  const double krp = cfg.k_rp > 0.0 ? cfg.k_rp : 1.0;
  for (const auto& s : st) {
    for (int w = 0; w < 4; ++w) {
      const double g = (s.z / kz + (is_left(w) ? 1.0 : -1.0) * s.roll / krp -
                        (is_front(w) ? 1.0 : -1.0) * s.pitch / krp) /
                       3.0;
      corner_sq[w] += g * g;
    }
  }
  std::array<double, 4> corner_rms{};
  for (int w = 0; w < 4; ++w) corner_rms[w] = std::sqrt(corner_sq[w] / st.size());
  std::sort(corner_rms.begin(), corner_rms.end(), std::greater<>());

  std::vector<double> f = {std::abs(yaw_slope), speed_ratio, max_fwd};
  f.insert(f.end(), corner_rms.begin(), corner_rms.end());
  return f;
}

}  // namespace zlik
