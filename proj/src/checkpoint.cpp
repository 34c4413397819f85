#include "zlik/checkpoint.hpp"

#include <fstream>

#include "zlik/errors.hpp"

namespace zlik {

void save_named_tensors(const std::filesystem::path& path, const torch::nn::Module& m) {
  torch::serialize::OutputArchive archive;
  for (const auto& p : m.named_parameters()) archive.write(p.key(), p.value().detach());
  for (const auto& b : m.named_buffers()) archive.write(b.key(), b.value(), /*is_buffer=*/true);
  archive.save_to(path.string());
}

void load_named_tensors(const std::filesystem::path& path, torch::nn::Module& m) {
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError("missing weights file " + path.string());
  }
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw FormatError("unreadable weights file " + path.string());
  }
  torch::NoGradGuard no_grad;
  auto load = [&](const std::string& name, torch::Tensor& dst, bool buffer) {
    torch::Tensor src;
    if (!archive.try_read(name, src, buffer)) {
      throw FormatError(path.string() + ": missing tensor '" + name + "'");
    }
    if (!src.sizes().equals(dst.sizes())) {
      throw FormatError(path.string() + ": shape mismatch for '" + name + "'");
    }
    dst.copy_(src);
  };
  for (auto& p : m.named_parameters()) load(p.key(), p.value(), false);
  for (auto& b : m.named_buffers()) load(b.key(), b.value(), true);
}

void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("missing file " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

StateCopy snapshot_state(const torch::nn::Module& m) {
  StateCopy s;
  for (const auto& p : m.named_parameters()) s.emplace_back(p.key(), p.value().detach().clone());
  for (const auto& b : m.named_buffers()) s.emplace_back(b.key(), b.value().detach().clone());
  return s;
}

void restore_state(torch::nn::Module& m, const StateCopy& s) {
  if (s.empty()) return;
  torch::NoGradGuard no_grad;
  auto params = m.named_parameters();
  auto buffers = m.named_buffers();
  for (const auto& [name, value] : s) {
    if (auto* p = params.find(name)) {
      p->copy_(value);
    } else if (auto* b = buffers.find(name)) {
      b->copy_(value);
    }
  }
}

torch::Tensor to_tensor(const std::vector<double>& v) {
  return torch::tensor(v, torch::kFloat32);
}

std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace zlik
