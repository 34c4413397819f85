#include "zlik/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "zlik/checkpoint.hpp"
#include "zlik/errors.hpp"
#include "zlik/hashing.hpp"

namespace zlik {

TrajectoryEncoderImpl::TrajectoryEncoderImpl(int64_t history_len, const TrajEncoderConfig& cfg)
    : history_len_(history_len), hidden_(cfg.hidden) {
  input = register_module("input", torch::nn::Linear(kHistoryDim, cfg.hidden));
  pos = register_parameter("pos", torch::randn({1, history_len, cfg.hidden}) * 0.02);
  in_mean = register_buffer("in_mean", torch::zeros({kHistoryDim}));
  in_std = register_buffer("in_std", torch::ones({kHistoryDim}));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < cfg.layers; ++i) {
    blocks->push_back(nn::EncoderBlock(cfg.hidden, cfg.heads, cfg.ff, cfg.dropout));
  }
}

torch::Tensor TrajectoryEncoderImpl::forward(const torch::Tensor& history) {
  if (history.dim() != 3 || history.size(1) != history_len_ || history.size(2) != kHistoryDim) {
    throw ShapeError("trajectory encoder expects (B, " + std::to_string(history_len_) + ", " +
                     std::to_string(kHistoryDim) + ") history");
  }
  auto h = input->forward((history - in_mean) / in_std) + pos;
  for (auto& b : *blocks) h = b->as<nn::EncoderBlock>()->forward(h);
  return h.mean(1);
}

void TrajectoryEncoderImpl::set_input_stats(const ChannelStats& stats) {
  torch::NoGradGuard no_grad;
  in_mean.copy_(to_tensor(stats.mean));
  in_std.copy_(to_tensor(stats.std));
}

ProjectionHeadImpl::ProjectionHeadImpl(int64_t in_dim, const ProjectionConfig& cfg)
    : in_dim_(in_dim), out_dim_(cfg.out) {
  net = register_module("net", torch::nn::Sequential());
  int64_t prev = in_dim;
  for (int h : cfg.hidden) {
    net->push_back(torch::nn::Linear(prev, h));
    net->push_back(torch::nn::BatchNorm1d(h));
    net->push_back(torch::nn::ReLU());
    prev = h;
  }
  net->push_back(torch::nn::Linear(prev, cfg.out));
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 2 || x.size(1) != in_dim_) {
    throw ShapeError("projection head expects (B, " + std::to_string(in_dim_) + ") input");
  }
  return net->forward(x);
}

VicregTerms vicreg_loss(const torch::Tensor& y_x, const torch::Tensor& y_t,
                        const VicregWeights& w) {
  if (y_x.dim() != 2 || !y_x.sizes().equals(y_t.sizes())) {
    throw ShapeError("vicreg batches must both be (N, K) of equal shape");
  }
  const auto n = y_x.size(0);
  const auto k = y_x.size(1);
  if (n < 2) throw DomainError("vicreg needs at least two samples per batch");

  auto variance = [&](const torch::Tensor& y) {
    auto std = torch::sqrt(y.var(0, /*unbiased=*/true) + w.eps);
    return torch::relu(w.gamma - std).mean();
  };
  auto covariance = [&](const torch::Tensor& y) {
    auto yc = y - y.mean(0, true);
    auto c = yc.t().mm(yc) / static_cast<double>(n - 1);
    auto off = c - torch::diag(torch::diag(c));
    return off.pow(2).sum() / static_cast<double>(k);
  };

  VicregTerms t;
  t.s = (y_x - y_t).pow(2).sum(1).mean();
  t.v_x = variance(y_x);
  t.v_t = variance(y_t);
  t.c_x = covariance(y_x);
  t.c_t = covariance(y_t);
  t.total = w.lambda * t.s + w.mu * (t.v_x + t.v_t) + w.nu * (t.c_x + t.c_t);
  return t;
}

AlignmentModelImpl::AlignmentModelImpl(const AlignConfig& cfg, int64_t text_dim) {
  encoder = register_module("encoder", TrajectoryEncoder(cfg.H_align, cfg.encoder));
  traj_head = register_module("traj_head", ProjectionHead(cfg.encoder.hidden, cfg.projection));
  text_head = register_module("text_head", ProjectionHead(text_dim, cfg.projection));
}

torch::Tensor AlignmentModelImpl::embed_trajectory(const torch::Tensor& history) {
  return traj_head->forward(encoder->forward(history));
}

torch::Tensor AlignmentModelImpl::embed_text(const torch::Tensor& text) {
  return text_head->forward(text);
}

torch::Tensor gather_history(const std::vector<PreparedEpisode>& eps,
                             const std::vector<WindowRef>& windows, std::size_t begin,
                             std::size_t end, int length) {
  const auto b = static_cast<int64_t>(end - begin);
  auto out = torch::empty({b, length, static_cast<int64_t>(kHistoryDim)});
  float* dst = out.data_ptr<float>();
  const std::size_t row = static_cast<std::size_t>(length) * kHistoryDim;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& w = windows[i];
    std::copy_n(eps[w.episode].row(w.start), row, dst + (i - begin) * row);
  }
  return out;
}

namespace {

std::vector<const EpisodeRecord*> pointers(const std::vector<EpisodeRecord>& v) {
  std::vector<const EpisodeRecord*> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(&e);
  return out;
}

// Sentence embeddings for every distinct description, plus each episode's row.
struct TextTable {
  torch::Tensor embeddings;  // (num_texts, dim)
  std::vector<int64_t> episode_row;
};

TextTable embed_descriptions(const std::vector<PreparedEpisode>& eps,
                             const EmbeddingProvider& provider) {
  TextTable t;
  std::unordered_map<std::string, int64_t> index;
  std::vector<float> flat;
  for (const auto& p : eps) {
    const auto& text = p.episode->description;
    auto it = index.find(text);
    if (it == index.end()) {
      const auto e = provider.embed(text);
      it = index.emplace(text, static_cast<int64_t>(index.size())).first;
      flat.insert(flat.end(), e.vector.begin(), e.vector.end());
    }
    t.episode_row.push_back(it->second);
  }
  const auto n = static_cast<int64_t>(index.size());
  t.embeddings = torch::from_blob(flat.data(), {n, provider.dim()}, torch::kFloat32).clone();
  return t;
}

torch::Tensor text_rows(const TextTable& t, const std::vector<WindowRef>& windows,
                        std::size_t begin, std::size_t end) {
  std::vector<int64_t> idx;
  idx.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) idx.push_back(t.episode_row[windows[i].episode]);
  return t.embeddings.index_select(0, torch::tensor(idx, torch::kInt64));
}

struct TermSums {
  double s = 0, v = 0, c = 0, total = 0;
  int batches = 0;
  void add(const VicregTerms& t) {
    s += t.s.item<double>();
    v += (t.v_x + t.v_t).item<double>();
    c += (t.c_x + t.c_t).item<double>();
    total += t.total.item<double>();
    ++batches;
  }
  double mean(double x) const { return batches ? x / batches : 0.0; }
};

ordered_json to_json(const AlignEpoch& e) {
  return {{"epoch", e.epoch}, {"lr", e.lr},       {"s", e.s},         {"v", e.v},
          {"c", e.c},         {"total", e.total}, {"val_s", e.val_s}, {"val_v", e.val_v},
          {"val_c", e.val_c}, {"val_total", e.val_total}};
}

AlignEpoch epoch_from_json(const json& j) {
  AlignEpoch e;
  e.epoch = j.at("epoch").get<int>();
  e.lr = j.at("lr").get<double>();
  e.s = j.at("s").get<double>();
  e.v = j.at("v").get<double>();
  e.c = j.at("c").get<double>();
  e.total = j.at("total").get<double>();
  e.val_s = j.at("val_s").get<double>();
  e.val_v = j.at("val_v").get<double>();
  e.val_c = j.at("val_c").get<double>();
  e.val_total = j.at("val_total").get<double>();
  return e;
}

}  // namespace

AlignmentArtifact train_alignment(const Dataset& data, const EmbeddingProvider& provider,
                                  const AlignConfig& cfg, std::uint64_t seed,
                                  const ProgressFn& progress) {
  cfg.validate();
  torch::manual_seed(seed);
  std::mt19937_64 rng(derive_seed(seed, 0xA11));

  const auto train_ptrs = pointers(data.train);
  const auto val_ptrs = pointers(data.validation);
  const auto train_eps = prepare_episodes(train_ptrs);
  const auto val_eps = prepare_episodes(val_ptrs);
  auto train_w = history_windows(train_eps, cfg.H_align, cfg.stride());
  auto val_w = history_windows(val_eps, cfg.H_align, cfg.stride());
  // Episodes are stored class by class; unshuffled validation batches would be
  // single-class and the variance term meaningless.
  std::shuffle(val_w.begin(), val_w.end(), std::mt19937_64(derive_seed(seed, 0xA12)));
  const auto batch = static_cast<std::size_t>(cfg.optim.batch);
  if (train_w.size() < batch || batch < 2) {
    throw ConfigError("alignment needs at least one batch of " + std::to_string(batch) +
                      " windows, dataset gives " + std::to_string(train_w.size()));
  }
  const auto train_text = embed_descriptions(train_eps, provider);
  const auto val_text = embed_descriptions(val_eps, provider);

  AlignmentArtifact art;
  art.config = cfg;
  art.text_dim = provider.dim();
  art.provider = provider.name();
  art.config_hash = config_hash(to_json(cfg));
  art.dataset_hash = config_hash(to_json(data.manifest));
  art.model = AlignmentModel(cfg, provider.dim());
  art.model->encoder->set_input_stats(history_stats(train_eps));

  const std::size_t full_steps = train_w.size() / batch;
  const std::size_t steps_per_epoch =
      cfg.optim.steps_per_epoch > 0 ? static_cast<std::size_t>(cfg.optim.steps_per_epoch)
                                    : full_steps;
  const double total_steps = static_cast<double>(steps_per_epoch) * cfg.optim.epochs;
  torch::optim::Adam opt(art.model->parameters(),
                         torch::optim::AdamOptions(cfg.optim.lr).weight_decay(cfg.optim.weight_decay));

  StateCopy best;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t step = 0;
  std::size_t cursor = train_w.size();  // forces a shuffle on first use
  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    art.model->train();
    TermSums tr;
    double lr = cfg.optim.lr;
    for (std::size_t it = 0; it < steps_per_epoch; ++it, ++step) {
      if (cursor + batch > train_w.size()) {
        std::shuffle(train_w.begin(), train_w.end(), rng);
        cursor = 0;
      }
      lr = cfg.optim.cosine_decay
               ? cfg.optim.lr * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) / total_steps))
               : cfg.optim.lr;
      for (auto& g : opt.param_groups()) g.options().set_lr(lr);

      auto hist = gather_history(train_eps, train_w, cursor, cursor + batch, cfg.H_align);
      auto text = text_rows(train_text, train_w, cursor, cursor + batch);
      cursor += batch;
      auto terms = vicreg_loss(art.model->embed_text(text), art.model->embed_trajectory(hist),
                               cfg.vicreg);
      opt.zero_grad();
      terms.total.backward();
      if (cfg.optim.grad_clip > 0) {
        torch::nn::utils::clip_grad_norm_(art.model->parameters(), cfg.optim.grad_clip);
      }
      opt.step();
      tr.add(terms);
    }

    AlignEpoch m;
    m.epoch = epoch;
    m.lr = lr;
    m.s = tr.mean(tr.s);
    m.v = tr.mean(tr.v);
    m.c = tr.mean(tr.c);
    m.total = tr.mean(tr.total);

    art.model->eval();
    TermSums va;
    {
      torch::NoGradGuard no_grad;
      for (std::size_t b = 0; b + 2 <= val_w.size(); b += batch) {
        const auto e = std::min(b + batch, val_w.size());
        if (e - b < 2) break;
        auto hist = gather_history(val_eps, val_w, b, e, cfg.H_align);
        auto text = text_rows(val_text, val_w, b, e);
        va.add(vicreg_loss(art.model->embed_text(text), art.model->embed_trajectory(hist),
                           cfg.vicreg));
      }
    }
    m.val_s = va.mean(va.s);
    m.val_v = va.mean(va.v);
    m.val_c = va.mean(va.c);
    m.val_total = va.batches ? va.mean(va.total) : m.total;
    art.metrics.push_back(m);

    if (va.batches == 0 || m.val_total < best_val) {
      best_val = m.val_total;
      best = snapshot_state(*art.model);
      art.best_epoch = epoch;
    }
    if (progress) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "align epoch %d  s %.4f v %.4f c %.4f total %.4f  val %.4f",
                    epoch, m.s, m.v, m.c, m.total, m.val_total);
      progress(buf);
    }
  }
  restore_state(*art.model, best);
  art.model->eval();
  return art;
}

void save_alignment(const AlignmentArtifact& a, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ordered_json cfg = {{"kind", "alignment"},
                      {"align", to_json(a.config)},
                      {"text_dim", a.text_dim},
                      {"provider", a.provider},
                      {"config_hash", a.config_hash},
                      {"dataset_hash", a.dataset_hash},
                      {"best_epoch", a.best_epoch}};
  write_json_file(dir / kCheckpointConfigFile, cfg);
  save_named_tensors(dir / kWeightsFile, *a.model);
  ordered_json metrics = ordered_json::array();
  for (const auto& e : a.metrics) metrics.push_back(to_json(e));
  write_json_file(dir / kMetricsFile, metrics);
}

AlignmentArtifact load_alignment(const std::filesystem::path& dir) {
  const auto cfg = read_json_file(dir / kCheckpointConfigFile);
  AlignmentArtifact a;
  try {
    if (cfg.at("kind").get<std::string>() != "alignment") {
      throw FormatError(dir.string() + " is not an alignment checkpoint");
    }
    a.config = align_config_from_json(cfg.at("align"));
    a.text_dim = cfg.at("text_dim").get<int>();
    a.provider = cfg.at("provider").get<std::string>();
    a.config_hash = cfg.at("config_hash").get<std::string>();
    a.dataset_hash = cfg.at("dataset_hash").get<std::string>();
    a.best_epoch = cfg.at("best_epoch").get<int>();
    const auto metrics = read_json_file(dir / kMetricsFile);
    for (const auto& e : metrics) a.metrics.push_back(epoch_from_json(e));
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
  a.model = AlignmentModel(a.config, a.text_dim);
  load_named_tensors(dir / kWeightsFile, *a.model);
  a.model->eval();
  return a;
}

std::string alignment_hash(const std::filesystem::path& dir) {
  return hash_file(dir / kWeightsFile);
}

DamageEncoder::DamageEncoder(ProjectionHead head, std::shared_ptr<const EmbeddingProvider> provider)
    : head_(std::move(head)), provider_(std::move(provider)) {
  if (!provider_) throw ConfigError("damage encoder needs an embedding provider");
  if (provider_->dim() != head_->in_dim()) {
    throw ShapeError("embedding provider dimension " + std::to_string(provider_->dim()) +
                     " does not match the projection head input " +
                     std::to_string(head_->in_dim()));
  }
  head_->eval();
  for (auto& p : head_->parameters()) p.set_requires_grad(false);
}

std::vector<float> DamageEncoder::encode(const std::string& text) const {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (auto it = cache_.find(text); it != cache_.end()) return it->second;
  }
  auto e = provider_->embed(text);
  torch::NoGradGuard no_grad;
  auto in = torch::from_blob(e.vector.data(), {1, provider_->dim()}, torch::kFloat32);
  auto z = head_->forward(in).contiguous();
  std::vector<float> out(z.data_ptr<float>(), z.data_ptr<float>() + z.numel());
  std::lock_guard<std::mutex> lock(mu_);
  cache_.emplace(text, out);
  return out;
}

torch::Tensor DamageEncoder::encode_batch(const std::vector<std::string>& texts) const {
  auto out = torch::empty({static_cast<int64_t>(texts.size()), head_->out_dim()});
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto z = encode(texts[i]);
    std::copy(z.begin(), z.end(), out.data_ptr<float>() + i * z.size());
  }
  return out;
}

int nearest_centroid(const std::vector<std::vector<double>>& centroids,
                     const std::vector<double>& z) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    if (centroids[c].empty()) continue;
    double d = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) d += (z[k] - centroids[c][k]) * (z[k] - centroids[c][k]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

RetrievalReport evaluate_retrieval(AlignmentModel& model, const EmbeddingProvider& provider,
                                   const std::vector<const EpisodeRecord*>& episodes) {
  model->eval();
  torch::NoGradGuard no_grad;
  const int H = static_cast<int>(model->encoder->history_len());
  const auto eps = prepare_episodes(episodes);
  const auto windows = history_windows(eps, H, std::max(H / 2, 1));
  const auto text = embed_descriptions(eps, provider);
  const auto z_text = model->embed_text(text.embeddings).to(torch::kFloat64);

  RetrievalReport r;
  r.samples = windows.size();
  if (windows.empty()) return r;
  const auto K = static_cast<std::size_t>(z_text.size(1));

  std::vector<std::vector<double>> sums(kNumClasses, std::vector<double>(K, 0.0));
  std::array<std::size_t, kNumClasses> counts{};
  constexpr std::size_t kChunk = 256;
  for (std::size_t b = 0; b < windows.size(); b += kChunk) {
    const auto e = std::min(b + kChunk, windows.size());
    auto z = model->embed_trajectory(gather_history(eps, windows, b, e, H)).to(torch::kFloat64);
    auto acc = z.accessor<double, 2>();
    for (std::size_t i = b; i < e; ++i) {
      const auto cls = class_index(eps[windows[i].episode].episode->damage.cls);
      for (std::size_t k = 0; k < K; ++k) sums[cls][k] += acc[i - b][k];
      ++counts[cls];
    }
  }
  r.centroids.assign(kNumClasses, {});
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0) continue;
    r.centroids[c] = sums[c];
    for (auto& v : r.centroids[c]) v /= static_cast<double>(counts[c]);
  }

  auto zt = z_text.accessor<double, 2>();
  std::vector<double> mean(K, 0.0), sq(K, 0.0);
  std::size_t correct = 0;
  for (const auto& w : windows) {
    const auto row = text.episode_row[w.episode];
    std::vector<double> z(K);
    for (std::size_t k = 0; k < K; ++k) {
      z[k] = zt[row][k];
      mean[k] += z[k];
      sq[k] += z[k] * z[k];
    }
    const auto cls = class_index(eps[w.episode].episode->damage.cls);
    ++r.per_class_total[cls];
    if (nearest_centroid(r.centroids, z) == static_cast<int>(cls)) {
      ++r.per_class_correct[cls];
      ++correct;
    }
  }
  const double n = static_cast<double>(windows.size());
  r.accuracy = static_cast<double>(correct) / n;
  r.z_x_std.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double m = mean[k] / n;
    const double var = n > 1 ? std::max(sq[k] - n * m * m, 0.0) / (n - 1) : 0.0;
    r.z_x_std[k] = std::sqrt(var);
  }
  return r;
}

}  // namespace zlik
