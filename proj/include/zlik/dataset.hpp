#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "zlik/config.hpp"
#include "zlik/sim.hpp"

namespace zlik {

inline constexpr std::string_view kDatasetFormat = "zlik-ds-1";
inline constexpr std::string_view kEpisodesFile = "episodes.jsonl";
inline constexpr std::string_view kTestFile = "test.jsonl";
inline constexpr std::string_view kManifestFile = "manifest.json";

ordered_json to_json(const DamageSpec& d);
DamageSpec damage_from_json(const json& j);

ordered_json to_json(const EpisodeRecord& ep);
// Throws FormatError on missing fields or inconsistent arrays.
EpisodeRecord episode_from_json(const json& j);

// One episode per line; doubles use the shortest round-trip representation.
void write_jsonl(const std::filesystem::path& path, const std::vector<EpisodeRecord>& episodes);
std::vector<EpisodeRecord> read_jsonl(const std::filesystem::path& path);

struct Manifest {
  std::string format_version{kDatasetFormat};
  std::uint64_t seed = 0;
  SimConfig sim;
  DatasetPlan plan;
  std::string config_hash;
  std::array<int, kNumClasses> class_counts{};
  std::array<int, kNumClasses> test_class_counts{};
  std::vector<std::string> train_ids;
  std::vector<std::string> validation_ids;
  std::vector<std::string> test_ids;
};

ordered_json to_json(const Manifest& m);
Manifest manifest_from_json(const json& j);

// Writes episodes.jsonl (train + validation), test.jsonl and manifest.json into
// out_dir. Episode seeds are child seeds of `seed`; the test set draws from a
// disjoint stream range. Validation episodes are a per-class stratified
// fraction chosen deterministically from `seed`.
Manifest generate_dataset(const SimConfig& cfg, const DatasetPlan& plan, std::uint64_t seed,
                          const std::filesystem::path& out_dir);

struct Dataset {
  Manifest manifest;
  std::vector<EpisodeRecord> train;
  std::vector<EpisodeRecord> validation;
  std::vector<EpisodeRecord> test;
};

// Reads a dataset directory. Throws MissingArtifactError if files are absent
// and FormatError on a format-version mismatch or malformed content.
Dataset load_dataset(const std::filesystem::path& dir);

// Distinct descriptions in first-appearance order.
std::vector<std::string> distinct_descriptions(const std::vector<const EpisodeRecord*>& episodes);

}  // namespace zlik
