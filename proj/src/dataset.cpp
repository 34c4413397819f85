#include "zlik/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_set>

#include "zlik/errors.hpp"
#include "zlik/hashing.hpp"

namespace zlik {

namespace {

constexpr std::uint64_t kTestStreamOffset = 1ULL << 40;
constexpr std::uint64_t kSplitStream = (1ULL << 41) + 1;

template <class T>
T field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad field '") + key + "': " + e.what());
  }
}

DamageClass class_field(const json& j, const char* key) {
  const auto name = field<std::string>(j, key);
  auto c = parse_class(name);
  if (!c) throw FormatError("unknown damage class '" + name + "'");
  return *c;
}

std::string episode_id(std::string_view prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*s-%06zu", static_cast<int>(prefix.size()), prefix.data(),
                index);
  return buf;
}

std::array<int, kNumClasses> counts_field(const json& j, const char* key) {
  std::array<int, kNumClasses> out{};
  const auto obj = field<json>(j, key);
  for (auto c : kAllClasses) out[class_index(c)] = field<int>(obj, std::string(class_name(c)).c_str());
  return out;
}

ordered_json counts_json(const std::array<int, kNumClasses>& counts) {
  ordered_json o = ordered_json::object();
  for (auto c : kAllClasses) o[std::string(class_name(c))] = counts[class_index(c)];
  return o;
}

}  // namespace

ordered_json to_json(const DamageSpec& d) {
  return {{"class", class_name(d.cls)},
          {"tire_severity", d.tire},
          {"spring_severity", d.spring},
          {"axle_broken", d.axle_broken}};
}

DamageSpec damage_from_json(const json& j) {
  DamageSpec d;
  d.cls = class_field(j, "class");
  d.tire = field<std::array<double, 4>>(j, "tire_severity");
  d.spring = field<std::array<double, 4>>(j, "spring_severity");
  d.axle_broken = field<std::array<bool, 2>>(j, "axle_broken");
  try {
    d.validate();
  } catch (const DomainError& e) {
    throw FormatError(e.what());
  }
  return d;
}

ordered_json to_json(const EpisodeRecord& ep) {
  ordered_json states = ordered_json::array();
  for (const auto& s : ep.trajectory.states) states.push_back(s.to_array());
  ordered_json actions = ordered_json::array();
  for (const auto& a : ep.trajectory.actions) actions.push_back({a.v, a.omega});
  return {{"episode_id", ep.episode_id},
          {"class", class_name(ep.damage.cls)},
          {"damage", to_json(ep.damage)},
          {"description", ep.description},
          {"seed", ep.seed},
          {"dt", ep.trajectory.dt},
          {"states", std::move(states)},
          {"actions", std::move(actions)}};
}

EpisodeRecord episode_from_json(const json& j) {
  EpisodeRecord ep;
  ep.episode_id = field<std::string>(j, "episode_id");
  ep.damage = damage_from_json(field<json>(j, "damage"));
  if (class_field(j, "class") != ep.damage.cls) {
    throw FormatError("episode " + ep.episode_id + ": class disagrees with damage.class");
  }
  ep.description = field<std::string>(j, "description");
  ep.seed = field<std::uint64_t>(j, "seed");
  ep.trajectory.dt = field<double>(j, "dt");
  const auto& states = j.at("states");
  const auto& actions = j.at("actions");
  if (!states.is_array() || !actions.is_array()) throw FormatError("states/actions must be arrays");
  ep.trajectory.states.reserve(states.size());
  for (const auto& s : states) {
    const auto a = s.get<std::vector<double>>();
    if (a.size() != kPoseDim) throw FormatError("episode " + ep.episode_id + ": state needs 6 values");
    ep.trajectory.states.push_back(State::from_array(a));
  }
  ep.trajectory.actions.reserve(actions.size());
  for (const auto& a : actions) {
    const auto v = a.get<std::vector<double>>();
    if (v.size() != kActionDim) throw FormatError("episode " + ep.episode_id + ": action needs 2 values");
    ep.trajectory.actions.push_back({v[0], v[1]});
  }
  try {
    ep.trajectory.validate();
  } catch (const Error& e) {
    throw FormatError("episode " + ep.episode_id + ": " + e.what());
  }
  return ep;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<EpisodeRecord>& episodes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& ep : episodes) out << to_json(ep).dump() << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

std::vector<EpisodeRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open dataset file " + path.string());
  std::vector<EpisodeRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

ordered_json to_json(const Manifest& m) {
  return {{"format_version", m.format_version},
          {"seed", m.seed},
          {"config", to_json(m.sim)},
          {"plan", to_json(m.plan)},
          {"config_hash", m.config_hash},
          {"class_counts", counts_json(m.class_counts)},
          {"test_class_counts", counts_json(m.test_class_counts)},
          {"files", {{"episodes", kEpisodesFile}, {"test", kTestFile}}},
          {"splits",
           {{"train", m.train_ids}, {"validation", m.validation_ids}, {"test", m.test_ids}}}};
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  m.format_version = field<std::string>(j, "format_version");
  if (m.format_version != kDatasetFormat) {
    throw FormatError("dataset format '" + m.format_version + "' is not supported (expected '" +
                      std::string(kDatasetFormat) + "')");
  }
  m.seed = field<std::uint64_t>(j, "seed");
  try {
    m.sim = sim_config_from_json(field<json>(j, "config"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("manifest config: ") + e.what());
  }
  m.config_hash = field<std::string>(j, "config_hash");
  m.class_counts = counts_field(j, "class_counts");
  m.test_class_counts = counts_field(j, "test_class_counts");
  const auto plan = field<json>(j, "plan");
  m.plan.episodes_per_class = counts_field(plan, "episodes_per_class");
  m.plan.test_episodes_per_class = counts_field(plan, "test_episodes_per_class");
  m.plan.val_fraction = field<double>(plan, "val_fraction");
  const auto splits = field<json>(j, "splits");
  m.train_ids = field<std::vector<std::string>>(splits, "train");
  m.validation_ids = field<std::vector<std::string>>(splits, "validation");
  m.test_ids = field<std::vector<std::string>>(splits, "test");
  return m;
}

Manifest generate_dataset(const SimConfig& cfg, const DatasetPlan& plan, std::uint64_t seed,
                          const std::filesystem::path& out_dir) {
  cfg.validate();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (plan.episodes_per_class[c] < 0 || plan.test_episodes_per_class[c] < 0) {
      throw ConfigError("episode counts must be >= 0");
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw Error("cannot create output directory " + out_dir.string());
  }

  Manifest m;
  m.seed = seed;
  m.sim = cfg;
  m.plan = plan;
  ordered_json echo = to_json(cfg);
  echo["dataset"] = to_json(plan);
  m.config_hash = config_hash(echo);

  std::vector<EpisodeRecord> pool, test;
  std::unordered_set<std::string> ids;
  std::set<std::uint64_t> pool_seeds;
  auto add = [&](std::vector<EpisodeRecord>& into, std::string id, DamageClass c, std::uint64_t s) {
    if (!ids.insert(id).second) throw Error("duplicate episode_id " + id);
    into.push_back(make_episode(std::move(id), c, s, cfg));
  };

  std::size_t index = 0;
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (auto c : kAllClasses) {
    for (int k = 0; k < plan.episodes_per_class[class_index(c)]; ++k, ++index) {
      const auto s = derive_seed(seed, index);
      pool_seeds.insert(s);
      by_class[class_index(c)].push_back(pool.size());
      add(pool, episode_id("ep", index), c, s);
    }
    m.class_counts[class_index(c)] = plan.episodes_per_class[class_index(c)];
  }
  index = 0;
  for (auto c : kAllClasses) {
    for (int k = 0; k < plan.test_episodes_per_class[class_index(c)]; ++k, ++index) {
      const auto s = derive_seed(seed, kTestStreamOffset + index);
      if (pool_seeds.count(s)) throw Error("test seed collides with a training seed");
      add(test, episode_id("test", index), c, s);
    }
    m.test_class_counts[class_index(c)] = plan.test_episodes_per_class[class_index(c)];
  }

  // Stratified 80-20 style split by episode.
  Rng split_rng(derive_seed(seed, kSplitStream));
  std::vector<bool> is_val(pool.size(), false);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), split_rng);
    const auto n_val =
        static_cast<std::size_t>(plan.val_fraction * static_cast<double>(members.size()) + 0.5);
    for (std::size_t i = 0; i < n_val && i < members.size(); ++i) is_val[members[i]] = true;
  }
  for (std::size_t i = 0; i < pool.size(); ++i) {
    (is_val[i] ? m.validation_ids : m.train_ids).push_back(pool[i].episode_id);
  }
  for (const auto& ep : test) m.test_ids.push_back(ep.episode_id);

  write_jsonl(out_dir / kEpisodesFile, pool);
  write_jsonl(out_dir / kTestFile, test);
  std::ofstream mf(out_dir / kManifestFile, std::ios::binary | std::ios::trunc);
  if (!mf) throw Error("cannot write manifest in " + out_dir.string());
  mf << to_json(m).dump(2) << '\n';
  return m;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestFile;
  std::ifstream mf(manifest_path);
  if (!mf) throw MissingArtifactError("dataset manifest not found: " + manifest_path.string());
  Dataset ds;
  try {
    ds.manifest = manifest_from_json(json::parse(mf));
  } catch (const json::exception& e) {
    throw FormatError("manifest " + manifest_path.string() + ": " + e.what());
  }
  auto pool = read_jsonl(dir / kEpisodesFile);
  std::unordered_set<std::string> val(ds.manifest.validation_ids.begin(),
                                      ds.manifest.validation_ids.end());
  std::unordered_set<std::string> seen;
  for (auto& ep : pool) {
    if (!seen.insert(ep.episode_id).second) throw FormatError("duplicate episode_id " + ep.episode_id);
    (val.count(ep.episode_id) ? ds.validation : ds.train).push_back(std::move(ep));
  }
  if (ds.train.size() != ds.manifest.train_ids.size() ||
      ds.validation.size() != ds.manifest.validation_ids.size()) {
    throw FormatError("episodes.jsonl does not match the manifest split lists");
  }
  ds.test = read_jsonl(dir / kTestFile);
  if (ds.test.size() != ds.manifest.test_ids.size()) {
    throw FormatError("test.jsonl does not match the manifest test list");
  }
  return ds;
}

std::vector<std::string> distinct_descriptions(const std::vector<const EpisodeRecord*>& episodes) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto* ep : episodes) {
    if (seen.insert(ep->description).second) out.push_back(ep->description);
  }
  return out;
}

}  // namespace zlik
