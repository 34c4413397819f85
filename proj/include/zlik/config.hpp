#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "zlik/sim.hpp"

namespace zlik {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// How many episodes of each class to generate.
struct DatasetPlan {
  std::array<int, kNumClasses> episodes_per_class{600, 600, 600, 600, 600, 600};
  std::array<int, kNumClasses> test_episodes_per_class{120, 120, 120, 120, 120, 120};
  double val_fraction = 0.2;
};

struct EmbedConfig {
  std::string provider = "hashed";  // "hashed" | "table"
  int dim = 768;
  std::string table_path;
};

struct OptimConfig {
  double lr = 1e-3;
  int batch = 256;
  int epochs = 50;
  int steps_per_epoch = 0;  // 0: one full pass over the training samples
  double grad_clip = 0.0;   // 0: disabled
  double weight_decay = 0.0;
  bool cosine_decay = true;
};

struct TrajEncoderConfig {
  int layers = 3;
  int heads = 8;
  int hidden = 128;
  int ff = 512;
  double dropout = 0.2;
};

struct ProjectionConfig {
  std::vector<int> hidden{256, 256};
  int out = 128;  // K
};

struct VicregWeights {
  double lambda = 25.0;  // invariance
  double mu = 10.0;      // variance
  double nu = 0.1;       // covariance
  double gamma = 1.0;    // target std
  double eps = 1e-4;
};

struct AlignConfig {
  int H_align = 200;
  TrajEncoderConfig encoder;
  ProjectionConfig projection;
  VicregWeights vicreg;
  OptimConfig optim{1e-3, 256, 50, 0, 0.0, 0.0, true};

  int stride() const { return H_align / 2 > 0 ? H_align / 2 : 1; }
  void validate() const;
};

enum class KinoVariant { kZlik, kClean, kMonolithic };
std::string_view variant_name(KinoVariant v);
KinoVariant parse_variant(std::string_view name);

struct KinoConfig {
  int H = 40;
  int P = 10;
  int L_seg = 4;
  int d_model = 256;
  int enc_layers = 3;
  int dec_layers = 4;
  int heads = 4;
  int router_count = 10;
  int d_ff = 512;
  double dropout = 0.2;
  int W_size = 2;
  int d_damage = 128;
  int D = 8;
  // Cross-dimension stage of the two-stage encoder; off only for ablation probes.
  bool dimension_stage = true;
  // Feed-forward width of the monolithic baseline's encoder; 0 picks the width
  // that matches the two-stage model's parameter count.
  int monolithic_ff = 0;
  KinoVariant variant = KinoVariant::kZlik;

  OptimConfig optim{5e-4, 256, 30, 0, 1.0, 0.0, true};
  // Training windows slide over episodes with this stride.
  int window_stride = 1;
  // Validation windows per epoch, an evenly spaced subset; 0 keeps all.
  int val_windows = 0;
  // Classes the clean (description-free) baseline is trained on.
  std::vector<DamageClass> clean_classes{DamageClass::kNoDamage};

  int segments() const { return H / L_seg; }
  void validate() const;
};

struct EvalConfig {
  std::vector<std::string> models{"zlik", "clean", "monolithic"};
  std::vector<DamageClass> confusion_classes{DamageClass::kBrokenAxle, DamageClass::kFall,
                                             DamageClass::kNoDamage, DamageClass::kMtpsb};
  std::vector<DamageClass> finetune_classes{DamageClass::kFall, DamageClass::kBrokenAxle};
  std::vector<double> finetune_seconds{20.0, 300.0, 600.0};
  int finetune_steps = 300;
  double finetune_lr = 2e-4;
  int finetune_batch = 64;
  int window_stride = 1;
  int batch = 256;
};

struct Config {
  SimConfig sim;
  DatasetPlan data;
  EmbedConfig embed;
  AlignConfig align;
  KinoConfig kino;
  EvalConfig eval;

  void validate() const;
};

// Strict parsing: unknown keys and wrong types raise ConfigError.
Config config_from_json(const json& j);
Config load_config(const std::filesystem::path& path);
ordered_json to_json(const Config& c);

SimConfig sim_config_from_json(const json& j);
ordered_json to_json(const SimConfig& c);
ordered_json to_json(const DatasetPlan& p);
AlignConfig align_config_from_json(const json& j);
ordered_json to_json(const AlignConfig& c);
KinoConfig kino_config_from_json(const json& j);
ordered_json to_json(const KinoConfig& c);

// FNV-1a of the compact JSON dump, as hex.
std::string config_hash(const ordered_json& j);

}  // namespace zlik
