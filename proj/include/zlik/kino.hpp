#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "zlik/alignment.hpp"
#include "zlik/config.hpp"
#include "zlik/dataset.hpp"
#include "zlik/nn.hpp"
#include "zlik/windows.hpp"

namespace zlik {

// One layer of the two-stage encoder over (B, L, D, d_model) arrays.
class TwoStageLayerImpl : public torch::nn::Module {
 public:
  explicit TwoStageLayerImpl(const KinoConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

  // Temporal stage. Keys/values are W_size adjacent segments merged into one
  // (LayerNorm + linear); with W_size == 1 this is plain self-attention.
  nn::MultiHeadAttention time_attn{nullptr};
  torch::nn::LayerNorm merge_norm{nullptr};
  torch::nn::Linear merge{nullptr};
  nn::FeedForward time_ff{nullptr};
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};

  // Dimension stage: routers gather from the D cells of a segment, then the
  // cells read back from the routers.
  torch::Tensor router;  // (L, c, d_model)
  nn::MultiHeadAttention dim_sender{nullptr}, dim_receiver{nullptr};
  nn::FeedForward dim_ff{nullptr};
  torch::nn::LayerNorm norm3{nullptr}, norm4{nullptr};

 private:
  torch::Tensor merged_segments(const torch::Tensor& x);

  int64_t w_size_;
  bool dimension_stage_;
  torch::nn::Dropout drop_{nullptr};
};
TORCH_MODULE(TwoStageLayer);

struct KinoNormalization {
  std::vector<double> hist_mean, hist_std;      // D
  std::vector<double> target_mean, target_std;  // P * 6, row-major
};

class KinoModelImpl : public torch::nn::Module {
 public:
  explicit KinoModelImpl(const KinoConfig& cfg);

  // (B, H, D) -> (B, L, D, d_model)
  torch::Tensor segment_embed(const torch::Tensor& history);
  // Adds E_pos and W_d z to every cell. `damage` (B, d_damage) is ignored by
  // the clean variant and may be undefined there.
  torch::Tensor inject_context(const torch::Tensor& h_feat, const torch::Tensor& damage);
  // (B, L, D, d_model) -> same shape
  torch::Tensor encode(const torch::Tensor& z0);
  // memory (B, L, D, d_model) or (B, T, d_model); future_actions (B, P-1, 2)
  // in raw units -> (B, P, 6) raw relative poses.
  torch::Tensor decode(const torch::Tensor& memory, const torch::Tensor& future_actions);
  torch::Tensor forward(const torch::Tensor& history, const torch::Tensor& future_actions,
                        const torch::Tensor& damage);

  void set_normalization(const KinoNormalization& n);
  const KinoConfig& config() const { return cfg_; }
  bool uses_damage() const { return cfg_.variant != KinoVariant::kClean; }

  // Shared pieces.
  torch::Tensor hist_mean, hist_std, act_mean, act_std, target_mean, target_std;
  torch::nn::Linear damage_proj{nullptr};  // W_d, absent in the clean variant

  // Two-stage path.
  torch::nn::Linear seg_proj{nullptr};
  torch::Tensor enc_pos;  // (L, D, d_model)
  torch::nn::ModuleList enc_layers{nullptr};

  // Monolithic path.
  torch::nn::Linear token_proj{nullptr};
  torch::Tensor token_pos;  // (H, d_model)
  torch::nn::ModuleList mono_layers{nullptr};

  // Decoder.
  torch::Tensor query_pos;              // (P, d_model)
  torch::nn::Linear action_proj{nullptr};  // W_u
  torch::nn::ModuleList dec_layers{nullptr};
  torch::nn::Linear head{nullptr};

 private:
  torch::Tensor check_damage(const torch::Tensor& damage, int64_t batch) const;

  KinoConfig cfg_;
};
TORCH_MODULE(KinoModel);

// Feed-forward width that brings the monolithic encoder's parameter count
// closest to the two-stage model's under the same config.
int monolithic_ff_for(const KinoConfig& cfg);
// The config with monolithic_ff resolved (unchanged if already set).
KinoConfig resolve_config(KinoConfig cfg);

// Windows of a set of episodes plus each episode's damage embedding.
struct WindowSet {
  std::vector<PreparedEpisode> episodes;
  std::vector<WindowRef> windows;
  std::vector<std::vector<float>> damage;  // per episode; empty if unused
};

struct KinoBatch {
  torch::Tensor history;         // (B, H, D)
  torch::Tensor future_actions;  // (B, P-1, 2)
  torch::Tensor target;          // (B, P, 6)
  torch::Tensor damage;          // (B, K) or undefined
};

KinoBatch make_batch(const WindowSet& set, std::size_t begin, std::size_t end, int H, int P);
KinoBatch make_batch(const WindowSet& set, const std::vector<WindowRef>& windows,
                     std::size_t begin, std::size_t end, int H, int P);

// Per-episode damage vectors from the episode descriptions.
std::vector<std::vector<float>> damage_vectors(const std::vector<const EpisodeRecord*>& episodes,
                                               const DamageEncoder& encoder);

// Normalisation statistics over the history rows and the targets of `set`.
KinoNormalization compute_normalization(const WindowSet& set, int H, int P);

struct KinoEpoch {
  int epoch = 0;
  double lr = 0.0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct KinoArtifact {
  KinoConfig config;
  KinoModel model{nullptr};
  std::string config_hash;
  std::string dataset_hash;
  std::string alignment_hash;  // empty for the clean variant
  int best_epoch = -1;
  std::vector<KinoEpoch> metrics;
};

// Trains one variant. The zlik and monolithic variants need `encoder` (the
// frozen h_sigma) and throw ConfigError without it; the clean variant trains
// only on cfg.clean_classes and never touches the encoder.
KinoArtifact train_kino(const Dataset& data, const DamageEncoder* encoder, const KinoConfig& cfg,
                        std::uint64_t seed, const std::string& alignment_hash = {},
                        const ProgressFn& progress = {});

struct FineTuneOptions {
  int steps = 300;
  double lr = 2e-4;
  int batch = 64;
  std::uint64_t seed = 0;
};

// Anchors drawn contiguously from the start of each episode in order until
// `count` windows are collected.
std::vector<WindowRef> contiguous_windows(const std::vector<PreparedEpisode>& eps, int H, int P,
                                          std::size_t count);

// Continues MSE training on `data` only. Returns a new artifact; `base` is
// untouched. Zero steps returns an exact copy. Throws DomainError on empty
// data.
KinoArtifact fine_tune(const KinoArtifact& base, const WindowSet& data,
                       const FineTuneOptions& opt);

KinoArtifact copy_artifact(const KinoArtifact& a);

void save_kino(const KinoArtifact& a, const std::filesystem::path& dir);
KinoArtifact load_kino(const std::filesystem::path& dir);

// Mean squared error of `model` over every window of `set` (eval mode).
double mean_squared_error(KinoModel& model, const WindowSet& set, int batch);

}  // namespace zlik
