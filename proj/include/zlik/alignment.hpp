#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <torch/torch.h>

#include "zlik/config.hpp"
#include "zlik/dataset.hpp"
#include "zlik/nn.hpp"
#include "zlik/text_embed.hpp"
#include "zlik/windows.hpp"

namespace zlik {

// h_zeta's backbone: per-step linear lift plus learnable positions, a stack of
// self-attention layers, mean over time. Inputs are standardised with the
// in_mean / in_std buffers (identity until set).
class TrajectoryEncoderImpl : public torch::nn::Module {
 public:
  TrajectoryEncoderImpl(int64_t history_len, const TrajEncoderConfig& cfg);
  // (B, H_align, 8) -> (B, hidden)
  torch::Tensor forward(const torch::Tensor& history);
  void set_input_stats(const ChannelStats& stats);

  int64_t history_len() const { return history_len_; }
  int64_t out_dim() const { return hidden_; }

  torch::nn::Linear input{nullptr};
  torch::Tensor pos, in_mean, in_std;
  torch::nn::ModuleList blocks{nullptr};

 private:
  int64_t history_len_;
  int64_t hidden_;
};
TORCH_MODULE(TrajectoryEncoder);

// MLP in -> hidden... -> out with batch-norm and ReLU between layers and a
// plain linear output layer.
class ProjectionHeadImpl : public torch::nn::Module {
 public:
  ProjectionHeadImpl(int64_t in_dim, const ProjectionConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t in_dim() const { return in_dim_; }
  int64_t out_dim() const { return out_dim_; }

  torch::nn::Sequential net{nullptr};

 private:
  int64_t in_dim_;
  int64_t out_dim_;
};
TORCH_MODULE(ProjectionHead);

struct VicregTerms {
  torch::Tensor total, s, v_x, v_t, c_x, c_t;
};

// Works in the dtype of the inputs. Throws DomainError if N < 2 and
// ShapeError if the two batches differ in shape.
VicregTerms vicreg_loss(const torch::Tensor& y_x, const torch::Tensor& y_t,
                        const VicregWeights& w);

class AlignmentModelImpl : public torch::nn::Module {
 public:
  AlignmentModelImpl(const AlignConfig& cfg, int64_t text_dim);
  // z_tau for a batch of history windows.
  torch::Tensor embed_trajectory(const torch::Tensor& history);
  // z_x for a batch of sentence embeddings.
  torch::Tensor embed_text(const torch::Tensor& text);

  TrajectoryEncoder encoder{nullptr};
  ProjectionHead traj_head{nullptr};  // h_zeta
  ProjectionHead text_head{nullptr};  // h_sigma
};
TORCH_MODULE(AlignmentModel);

struct AlignEpoch {
  int epoch = 0;
  double lr = 0.0;
  double s = 0.0, v = 0.0, c = 0.0, total = 0.0;  // training means
  double val_s = 0.0, val_v = 0.0, val_c = 0.0, val_total = 0.0;
};

struct AlignmentArtifact {
  AlignConfig config;
  AlignmentModel model{nullptr};
  int text_dim = kDefaultEmbedDim;
  std::string provider;
  std::string config_hash;
  std::string dataset_hash;
  int best_epoch = -1;
  std::vector<AlignEpoch> metrics;
};

using ProgressFn = std::function<void(const std::string&)>;

// Pairs every training window (stride H_align/2) with its episode's
// description and minimises the VICReg loss. Keeps the weights of the epoch
// with the lowest validation total (the last epoch if there is no validation
// split). Throws ConfigError if there are fewer windows than one batch.
AlignmentArtifact train_alignment(const Dataset& data, const EmbeddingProvider& provider,
                                  const AlignConfig& cfg, std::uint64_t seed,
                                  const ProgressFn& progress = {});

void save_alignment(const AlignmentArtifact& a, const std::filesystem::path& dir);
// Throws MissingArtifactError / FormatError.
AlignmentArtifact load_alignment(const std::filesystem::path& dir);
// Identity of a saved checkpoint: hash of its weights file.
std::string alignment_hash(const std::filesystem::path& dir);

// The frozen h_sigma o phi used downstream. Thread-safe; caches one z_x per
// distinct text.
class DamageEncoder {
 public:
  DamageEncoder(ProjectionHead head, std::shared_ptr<const EmbeddingProvider> provider);
  std::vector<float> encode(const std::string& text) const;
  // (B, K) float tensor, rows in the order of `texts`.
  torch::Tensor encode_batch(const std::vector<std::string>& texts) const;
  int dim() const { return static_cast<int>(head_->out_dim()); }
  const EmbeddingProvider& provider() const { return *provider_; }

 private:
  mutable ProjectionHead head_;
  std::shared_ptr<const EmbeddingProvider> provider_;
  mutable std::mutex mu_;
  mutable std::unordered_map<std::string, std::vector<float>> cache_;
};

// (B, H, 8) float tensor of history rows for the given windows.
torch::Tensor gather_history(const std::vector<PreparedEpisode>& eps,
                             const std::vector<WindowRef>& windows, std::size_t begin,
                             std::size_t end, int length);

struct RetrievalReport {
  std::size_t samples = 0;
  double accuracy = 0.0;  // z_x nearest z_tau class centroid == true class
  std::array<std::size_t, kNumClasses> per_class_total{};
  std::array<std::size_t, kNumClasses> per_class_correct{};
  std::vector<double> z_x_std;  // per-dimension std of z_x over the windows
  std::vector<std::vector<double>> centroids;  // per class, empty if absent
};

// Retrieval over all windows (stride H_align/2) of `episodes`.
RetrievalReport evaluate_retrieval(AlignmentModel& model, const EmbeddingProvider& provider,
                                   const std::vector<const EpisodeRecord*>& episodes);

// Index of the centroid nearest to z (Euclidean); absent centroids skipped.
int nearest_centroid(const std::vector<std::vector<double>>& centroids,
                     const std::vector<double>& z);

}  // namespace zlik
