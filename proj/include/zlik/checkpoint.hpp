#pragma once

#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "json.hpp"

namespace zlik {

inline constexpr std::string_view kWeightsFile = "weights.pt";
inline constexpr std::string_view kCheckpointConfigFile = "config.json";
inline constexpr std::string_view kMetricsFile = "metrics.json";

// Flat named-tensor container: every parameter and buffer of `m` under its
// dotted name.
void save_named_tensors(const std::filesystem::path& path, const torch::nn::Module& m);

// Loads every parameter and buffer of `m` by name. Throws MissingArtifactError
// if the file is absent and FormatError if a name is missing or a shape differs.
void load_named_tensors(const std::filesystem::path& path, torch::nn::Module& m);

void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j);
// Throws MissingArtifactError when absent, FormatError when unparsable.
nlohmann::json read_json_file(const std::filesystem::path& path);

// In-memory copy of every parameter and buffer, for best-epoch tracking.
using StateCopy = std::vector<std::pair<std::string, torch::Tensor>>;
StateCopy snapshot_state(const torch::nn::Module& m);
void restore_state(torch::nn::Module& m, const StateCopy& s);

torch::Tensor to_tensor(const std::vector<double>& v);
std::vector<double> to_vector(const torch::Tensor& t);

}  // namespace zlik
