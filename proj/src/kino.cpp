#include "zlik/kino.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "zlik/checkpoint.hpp"
#include "zlik/errors.hpp"
#include "zlik/hashing.hpp"

namespace zlik {

namespace {

torch::Tensor small_normal(std::vector<int64_t> shape) { return torch::randn(shape) * 0.02; }

}  // namespace

TwoStageLayerImpl::TwoStageLayerImpl(const KinoConfig& cfg)
    : w_size_(cfg.W_size), dimension_stage_(cfg.dimension_stage) {
  const int64_t dm = cfg.d_model;
  time_attn = register_module("time_attn", nn::MultiHeadAttention(dm, cfg.heads, cfg.dropout));
  if (w_size_ > 1) {
    merge_norm = register_module(
        "merge_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({w_size_ * dm})));
    merge = register_module("merge", torch::nn::Linear(w_size_ * dm, dm));
  }
  time_ff = register_module("time_ff", nn::FeedForward(dm, cfg.d_ff, cfg.dropout));
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dm})));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dm})));
  if (dimension_stage_) {
    router = register_parameter("router", small_normal({cfg.segments(), cfg.router_count, dm}));
    dim_sender = register_module("dim_sender", nn::MultiHeadAttention(dm, cfg.heads, cfg.dropout));
    dim_receiver =
        register_module("dim_receiver", nn::MultiHeadAttention(dm, cfg.heads, cfg.dropout));
    dim_ff = register_module("dim_ff", nn::FeedForward(dm, cfg.d_ff, cfg.dropout));
    norm3 = register_module("norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dm})));
    norm4 = register_module("norm4", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dm})));
  }
  drop_ = register_module("drop", torch::nn::Dropout(cfg.dropout));
}

torch::Tensor TwoStageLayerImpl::merged_segments(const torch::Tensor& x) {
  if (w_size_ <= 1) return x;
  const auto n = x.size(0);
  const auto l = x.size(1);
  const auto e = x.size(2);
  auto t = x;
  if (const auto pad = (w_size_ - l % w_size_) % w_size_; pad > 0) {
    t = torch::cat({t, t.slice(1, l - 1, l).expand({n, pad, e})}, 1);
  }
  t = t.reshape({n, t.size(1) / w_size_, w_size_ * e});
  return merge->forward(merge_norm->forward(t));
}

torch::Tensor TwoStageLayerImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0);
  const auto l = x.size(1);
  const auto d = x.size(2);
  const auto e = x.size(3);

  // Across time, one sequence per channel.
  auto t = x.permute({0, 2, 1, 3}).reshape({b * d, l, e});
  t = norm1->forward(t + drop_->forward(time_attn->forward(t, merged_segments(t))));
  t = norm2->forward(t + drop_->forward(time_ff->forward(t)));
  auto out = t.reshape({b, d, l, e}).permute({0, 2, 1, 3});
  if (!dimension_stage_) return out.contiguous();

  // Across channels, one group per segment, through the routers.
  auto c = out.reshape({b * l, d, e});
  auto r = router.unsqueeze(0).expand({b, l, router.size(1), e}).reshape({b * l, router.size(1), e});
  auto buffer = dim_sender->forward(r, c);
  c = norm3->forward(c + drop_->forward(dim_receiver->forward(c, buffer)));
  c = norm4->forward(c + drop_->forward(dim_ff->forward(c)));
  return c.reshape({b, l, d, e});
}

KinoModelImpl::KinoModelImpl(const KinoConfig& cfg) : cfg_(resolve_config(cfg)) {
  cfg_.validate();
  const int64_t dm = cfg_.d_model;
  const int64_t D = cfg_.D;
  hist_mean = register_buffer("hist_mean", torch::zeros({D}));
  hist_std = register_buffer("hist_std", torch::ones({D}));
  act_mean = register_buffer("act_mean", torch::zeros({kActionDim}));
  act_std = register_buffer("act_std", torch::ones({kActionDim}));
  target_mean = register_buffer("target_mean", torch::zeros({cfg_.P, kPoseDim}));
  target_std = register_buffer("target_std", torch::ones({cfg_.P, kPoseDim}));

  if (cfg_.variant != KinoVariant::kClean) {
    damage_proj = register_module(
        "damage_proj", torch::nn::Linear(torch::nn::LinearOptions(cfg_.d_damage, dm).bias(false)));
  }
  if (cfg_.variant == KinoVariant::kMonolithic) {
    token_proj = register_module("token_proj", torch::nn::Linear(D, dm));
    token_pos = register_parameter("token_pos", small_normal({cfg_.H, dm}));
    mono_layers = register_module("mono_layers", torch::nn::ModuleList());
    for (int i = 0; i < cfg_.enc_layers; ++i) {
      mono_layers->push_back(nn::EncoderBlock(dm, cfg_.heads, cfg_.monolithic_ff, cfg_.dropout));
    }
  } else {
    seg_proj = register_module("seg_proj", torch::nn::Linear(cfg_.L_seg, dm));
    enc_pos = register_parameter("enc_pos", small_normal({cfg_.segments(), D, dm}));
    enc_layers = register_module("enc_layers", torch::nn::ModuleList());
    for (int i = 0; i < cfg_.enc_layers; ++i) enc_layers->push_back(TwoStageLayer(cfg_));
  }

  query_pos = register_parameter("query_pos", small_normal({cfg_.P, dm}));
  action_proj = register_module(
      "action_proj", torch::nn::Linear(torch::nn::LinearOptions(kActionDim, dm).bias(false)));
  dec_layers = register_module("dec_layers", torch::nn::ModuleList());
  for (int i = 0; i < cfg_.dec_layers; ++i) {
    dec_layers->push_back(nn::DecoderBlock(dm, cfg_.heads, cfg_.d_ff, cfg_.dropout));
  }
  head = register_module("head", torch::nn::Linear(dm, kPoseDim));
}

torch::Tensor KinoModelImpl::check_damage(const torch::Tensor& damage, int64_t batch) const {
  if (!damage.defined() || damage.dim() != 2 || damage.size(0) != batch ||
      damage.size(1) != cfg_.d_damage) {
    throw ShapeError("damage embedding must be (B, " + std::to_string(cfg_.d_damage) + ")");
  }
  return damage;
}

torch::Tensor KinoModelImpl::segment_embed(const torch::Tensor& history) {
  if (!seg_proj) throw ShapeError("the monolithic variant has no segment embedding");
  if (history.dim() != 3 || history.size(2) != cfg_.D) {
    throw ShapeError("history must be (B, H, " + std::to_string(cfg_.D) + ")");
  }
  const auto b = history.size(0);
  const auto h = history.size(1);
  if (h % cfg_.L_seg != 0) {
    throw ShapeError("history length " + std::to_string(h) + " is not a multiple of L_seg " +
                     std::to_string(cfg_.L_seg));
  }
  auto x = ((history - hist_mean) / hist_std).transpose(1, 2);  // (B, D, H)
  x = x.reshape({b, cfg_.D, h / cfg_.L_seg, cfg_.L_seg});
  return seg_proj->forward(x).permute({0, 2, 1, 3});  // (B, L, D, d_model)
}

torch::Tensor KinoModelImpl::inject_context(const torch::Tensor& h_feat,
                                            const torch::Tensor& damage) {
  auto z = h_feat + enc_pos;
  if (!uses_damage()) return z;
  const auto b = h_feat.size(0);
  return z + damage_proj->forward(check_damage(damage, b)).view({b, 1, 1, cfg_.d_model});
}

torch::Tensor KinoModelImpl::encode(const torch::Tensor& z0) {
  auto x = z0;
  for (auto& layer : *enc_layers) x = layer->as<TwoStageLayer>()->forward(x);
  return x;
}

torch::Tensor KinoModelImpl::decode(const torch::Tensor& memory,
                                    const torch::Tensor& future_actions) {
  const auto b = memory.size(0);
  const auto P = cfg_.P;
  if (future_actions.dim() != 3 || future_actions.size(0) != b ||
      future_actions.size(1) != P - 1 || future_actions.size(2) != kActionDim) {
    throw ShapeError("future actions must be (B, " + std::to_string(P - 1) + ", 2)");
  }
  auto mem = memory.dim() == 4 ? memory.reshape({b, -1, cfg_.d_model}) : memory;
  auto a = action_proj->forward((future_actions - act_mean) / act_std);
  // The last query carries no action.
  a = torch::cat({a, torch::zeros({b, 1, cfg_.d_model}, a.options())}, 1);
  auto q = query_pos.unsqueeze(0) + a;
  for (auto& layer : *dec_layers) q = layer->as<nn::DecoderBlock>()->forward(q, mem);
  return head->forward(q) * target_std + target_mean;
}

torch::Tensor KinoModelImpl::forward(const torch::Tensor& history,
                                     const torch::Tensor& future_actions,
                                     const torch::Tensor& damage) {
  if (cfg_.variant != KinoVariant::kMonolithic) {
    return decode(encode(inject_context(segment_embed(history), damage)), future_actions);
  }
  if (history.dim() != 3 || history.size(1) != cfg_.H || history.size(2) != cfg_.D) {
    throw ShapeError("history must be (B, " + std::to_string(cfg_.H) + ", " +
                     std::to_string(cfg_.D) + ")");
  }
  const auto b = history.size(0);
  auto x = token_proj->forward((history - hist_mean) / hist_std) + token_pos;
  x = x + damage_proj->forward(check_damage(damage, b)).unsqueeze(1);
  for (auto& layer : *mono_layers) x = layer->as<nn::EncoderBlock>()->forward(x);
  return decode(x, future_actions);
}

void KinoModelImpl::set_normalization(const KinoNormalization& n) {
  torch::NoGradGuard no_grad;
  hist_mean.copy_(to_tensor(n.hist_mean));
  hist_std.copy_(to_tensor(n.hist_std));
  // Actions are the last two history channels.
  act_mean.copy_(hist_mean.slice(0, cfg_.D - kActionDim));
  act_std.copy_(hist_std.slice(0, cfg_.D - kActionDim));
  target_mean.copy_(to_tensor(n.target_mean).view({cfg_.P, kPoseDim}));
  target_std.copy_(to_tensor(n.target_std).view({cfg_.P, kPoseDim}));
}

int monolithic_ff_for(const KinoConfig& cfg) {
  KinoConfig z = cfg;
  z.variant = KinoVariant::kZlik;
  const auto target = nn::parameter_count(*KinoModel(z));
  KinoConfig m = cfg;
  m.variant = KinoVariant::kMonolithic;
  m.monolithic_ff = 1;
  const auto p1 = nn::parameter_count(*KinoModel(m));
  m.monolithic_ff = 2;
  const auto slope = nn::parameter_count(*KinoModel(m)) - p1;
  const auto ff = 1 + std::llround(static_cast<double>(target - p1) / static_cast<double>(slope));
  return static_cast<int>(std::max<long long>(ff, 1));
}

KinoConfig resolve_config(KinoConfig cfg) {
  if (cfg.variant == KinoVariant::kMonolithic && cfg.monolithic_ff <= 0) {
    cfg.monolithic_ff = monolithic_ff_for(cfg);
  }
  return cfg;
}

KinoBatch make_batch(const WindowSet& set, std::size_t begin, std::size_t end, int H, int P) {
  return make_batch(set, set.windows, begin, end, H, P);
}

KinoBatch make_batch(const WindowSet& set, const std::vector<WindowRef>& windows,
                     std::size_t begin, std::size_t end, int H, int P) {
  const auto b = static_cast<int64_t>(end - begin);
  KinoBatch out;
  out.history = torch::empty({b, H, static_cast<int64_t>(kHistoryDim)});
  out.future_actions = torch::empty({b, P - 1, static_cast<int64_t>(kActionDim)});
  out.target = torch::empty({b, P, static_cast<int64_t>(kPoseDim)});
  const bool with_damage = !set.damage.empty();
  const auto k = with_damage ? static_cast<int64_t>(set.damage.front().size()) : 0;
  if (with_damage) out.damage = torch::empty({b, k});

  float* hist = out.history.data_ptr<float>();
  float* act = out.future_actions.data_ptr<float>();
  float* tgt = out.target.data_ptr<float>();
  const std::size_t hist_row = static_cast<std::size_t>(H) * kHistoryDim;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& w = windows[i];
    const auto& ep = set.episodes[w.episode];
    const auto& traj = ep.episode->trajectory;
    const auto t = static_cast<std::size_t>(w.start);
    const auto j = i - begin;
    std::copy_n(ep.row(w.start - H), hist_row, hist + j * hist_row);
    for (int p = 0; p + 1 < P; ++p) {
      const auto& u = traj.actions[t + 1 + p];
      act[(j * (P - 1) + p) * kActionDim] = static_cast<float>(u.v);
      act[(j * (P - 1) + p) * kActionDim + 1] = static_cast<float>(u.omega);
    }
    const auto rel = to_relative_targets(
        traj.states[t], std::span<const State>(traj.states.data() + t + 1, static_cast<std::size_t>(P)));
    for (int p = 0; p < P; ++p) {
      for (std::size_t c = 0; c < kPoseDim; ++c) {
        tgt[(j * P + p) * kPoseDim + c] = static_cast<float>(rel[p][c]);
      }
    }
    if (with_damage) {
      const auto& z = set.damage[w.episode];
      std::copy(z.begin(), z.end(), out.damage.data_ptr<float>() + j * k);
    }
  }
  return out;
}

std::vector<std::vector<float>> damage_vectors(const std::vector<const EpisodeRecord*>& episodes,
                                               const DamageEncoder& encoder) {
  std::vector<std::vector<float>> out;
  out.reserve(episodes.size());
  for (const auto* ep : episodes) out.push_back(encoder.encode(ep->description));
  return out;
}

KinoNormalization compute_normalization(const WindowSet& set, int /*H*/, int P) {
  KinoNormalization n;
  const auto hs = history_stats(set.episodes);
  n.hist_mean = hs.mean;
  n.hist_std = hs.std;
  const std::size_t cells = static_cast<std::size_t>(P) * kPoseDim;
  std::vector<double> sum(cells, 0.0), sq(cells, 0.0);
  // A strided subset keeps this cheap on large sets.
  const std::size_t step = std::max<std::size_t>(1, set.windows.size() / 20000);
  double count = 0.0;
  for (std::size_t i = 0; i < set.windows.size(); i += step) {
    const auto& w = set.windows[i];
    const auto& traj = set.episodes[w.episode].episode->trajectory;
    const auto t = static_cast<std::size_t>(w.start);
    const auto rel = to_relative_targets(
        traj.states[t], std::span<const State>(traj.states.data() + t + 1, static_cast<std::size_t>(P)));
    for (int p = 0; p < P; ++p) {
      for (std::size_t c = 0; c < kPoseDim; ++c) {
        sum[p * kPoseDim + c] += rel[p][c];
        sq[p * kPoseDim + c] += rel[p][c] * rel[p][c];
      }
    }
    count += 1.0;
  }
  n.target_mean.assign(cells, 0.0);
  n.target_std.assign(cells, 1.0);
  if (count > 0.0) {
    for (std::size_t c = 0; c < cells; ++c) {
      n.target_mean[c] = sum[c] / count;
      n.target_std[c] =
          std::max(std::sqrt(std::max(sq[c] / count - n.target_mean[c] * n.target_mean[c], 0.0)), 1e-6);
    }
  }
  return n;
}

namespace {

std::vector<const EpisodeRecord*> select(const std::vector<EpisodeRecord>& eps,
                                         const std::vector<DamageClass>* classes) {
  std::vector<const EpisodeRecord*> out;
  for (const auto& e : eps) {
    if (!classes || std::find(classes->begin(), classes->end(), e.damage.cls) != classes->end()) {
      out.push_back(&e);
    }
  }
  return out;
}

WindowSet make_set(const std::vector<const EpisodeRecord*>& eps, const KinoConfig& cfg, int stride,
                   const DamageEncoder* encoder) {
  WindowSet s;
  s.episodes = prepare_episodes(eps);
  s.windows = kino_windows(s.episodes, cfg.H, cfg.P, stride);
  if (encoder) s.damage = damage_vectors(eps, *encoder);
  return s;
}

double cosine_lr(const OptimConfig& o, double step, double total) {
  if (!o.cosine_decay || total <= 0.0) return o.lr;
  return o.lr * 0.5 * (1.0 + std::cos(kPi * std::min(step / total, 1.0)));
}

// Shuffled minibatch stream over a window set.
class BatchStream {
 public:
  BatchStream(const WindowSet& set, std::size_t batch, std::uint64_t seed)
      : set_(set), order_(set.windows), cursor_(set.windows.size()), rng_(seed),
        batch_(std::min(batch, set.windows.size())) {}

  KinoBatch next(int H, int P) {
    if (cursor_ + batch_ > order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    auto b = make_batch(set_, order_, cursor_, cursor_ + batch_, H, P);
    cursor_ += batch_;
    return b;
  }

 private:
  const WindowSet& set_;
  std::vector<WindowRef> order_;
  std::size_t cursor_;
  std::mt19937_64 rng_;
  std::size_t batch_;
};

double train_step(KinoModel& model, torch::optim::Adam& opt, const KinoBatch& b, double lr,
                  double clip) {
  for (auto& g : opt.param_groups()) g.options().set_lr(lr);
  auto loss = torch::mse_loss(model->forward(b.history, b.future_actions, b.damage), b.target);
  opt.zero_grad();
  loss.backward();
  if (clip > 0.0) torch::nn::utils::clip_grad_norm_(model->parameters(), clip);
  opt.step();
  return loss.item<double>();
}

ordered_json to_json(const KinoEpoch& e) {
  return {{"epoch", e.epoch}, {"lr", e.lr}, {"train_mse", e.train_mse}, {"val_mse", e.val_mse}};
}

}  // namespace

double mean_squared_error(KinoModel& model, const WindowSet& set, int batch) {
  if (set.windows.empty()) return std::numeric_limits<double>::quiet_NaN();
  model->eval();
  torch::NoGradGuard no_grad;
  const auto& cfg = model->config();
  double sum = 0.0;
  for (std::size_t b = 0; b < set.windows.size(); b += static_cast<std::size_t>(batch)) {
    const auto e = std::min(b + static_cast<std::size_t>(batch), set.windows.size());
    auto kb = make_batch(set, b, e, cfg.H, cfg.P);
    auto err = (model->forward(kb.history, kb.future_actions, kb.damage) - kb.target).pow(2);
    sum += err.sum().item<double>();
  }
  return sum / (static_cast<double>(set.windows.size()) * cfg.P * kPoseDim);
}

KinoArtifact train_kino(const Dataset& data, const DamageEncoder* encoder, const KinoConfig& cfg_in,
                        std::uint64_t seed, const std::string& alignment_hash,
                        const ProgressFn& progress) {
  torch::manual_seed(seed);
  const KinoConfig cfg = resolve_config(cfg_in);
  cfg.validate();
  if (cfg.D != static_cast<int>(kHistoryDim)) {
    throw ConfigError("kino D must be " + std::to_string(kHistoryDim) + " for simulator data");
  }
  const bool conditioned = cfg.variant != KinoVariant::kClean;
  if (conditioned && !encoder) {
    throw ConfigError(std::string(variant_name(cfg.variant)) +
                      " variant needs an alignment checkpoint");
  }
  if (conditioned && encoder->dim() != cfg.d_damage) {
    throw ConfigError("alignment output dimension " + std::to_string(encoder->dim()) +
                      " differs from kino d_damage " + std::to_string(cfg.d_damage));
  }
  const auto* classes = conditioned ? nullptr : &cfg.clean_classes;
  const auto* enc = conditioned ? encoder : nullptr;
  const WindowSet train = make_set(select(data.train, classes), cfg, cfg.window_stride, enc);
  // Validation every P-th anchor: enough to rank epochs at a fraction of the cost.
  WindowSet val = make_set(select(data.validation, classes), cfg, cfg.P, enc);
  if (cfg.val_windows > 0 && val.windows.size() > static_cast<std::size_t>(cfg.val_windows)) {
    const auto n = val.windows.size();
    const auto k = static_cast<std::size_t>(cfg.val_windows);
    std::vector<WindowRef> kept;
    for (std::size_t i = 0; i < k; ++i) kept.push_back(val.windows[i * n / k]);
    val.windows = std::move(kept);
  }
  if (train.windows.empty()) throw ConfigError("no training windows for the kino model");

  KinoArtifact art;
  art.config = cfg;
  art.config_hash = config_hash(to_json(cfg));
  art.dataset_hash = config_hash(to_json(data.manifest));
  art.alignment_hash = conditioned ? alignment_hash : std::string();
  art.model = KinoModel(cfg);
  art.model->set_normalization(compute_normalization(train, cfg.H, cfg.P));

  const auto batch = static_cast<std::size_t>(cfg.optim.batch);
  const std::size_t steps_per_epoch =
      cfg.optim.steps_per_epoch > 0
          ? static_cast<std::size_t>(cfg.optim.steps_per_epoch)
          : std::max<std::size_t>(1, train.windows.size() / std::max<std::size_t>(batch, 1));
  const double total = static_cast<double>(steps_per_epoch) * cfg.optim.epochs;
  torch::optim::Adam opt(art.model->parameters(),
                         torch::optim::AdamOptions(cfg.optim.lr).weight_decay(cfg.optim.weight_decay));
  BatchStream stream(train, batch, derive_seed(seed, 0xB01));

  StateCopy best;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    art.model->train();
    double lr = cfg.optim.lr, sum = 0.0;
    for (std::size_t i = 0; i < steps_per_epoch; ++i, ++step) {
      lr = cosine_lr(cfg.optim, static_cast<double>(step), total);
      sum += train_step(art.model, opt, stream.next(cfg.H, cfg.P), lr, cfg.optim.grad_clip);
    }
    KinoEpoch m{epoch, lr, sum / static_cast<double>(steps_per_epoch), 0.0};
    m.val_mse = val.windows.empty() ? m.train_mse : mean_squared_error(art.model, val, 512);
    art.metrics.push_back(m);
    if (m.val_mse < best_val) {
      best_val = m.val_mse;
      best = snapshot_state(*art.model);
      art.best_epoch = epoch;
    }
    if (progress) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s epoch %d  train %.5f  val %.5f",
                    std::string(variant_name(cfg.variant)).c_str(), epoch, m.train_mse, m.val_mse);
      progress(buf);
    }
  }
  restore_state(*art.model, best);
  art.model->eval();
  return art;
}

std::vector<WindowRef> contiguous_windows(const std::vector<PreparedEpisode>& eps, int H, int P,
                                          std::size_t count) {
  std::vector<WindowRef> out;
  for (int e = 0; e < static_cast<int>(eps.size()) && out.size() < count; ++e) {
    const int n = static_cast<int>(eps[e].episode->trajectory.states.size());
    for (int t = H; t <= n - 1 - P && out.size() < count; ++t) out.push_back({e, t});
  }
  return out;
}

KinoArtifact copy_artifact(const KinoArtifact& a) {
  KinoArtifact c = a;
  c.model = KinoModel(a.config);
  nn::copy_shared_state(*a.model, *c.model);
  c.model->eval();
  return c;
}

KinoArtifact fine_tune(const KinoArtifact& base, const WindowSet& data,
                       const FineTuneOptions& opt) {
  if (data.windows.empty()) throw DomainError("fine-tuning needs at least one window");
  auto out = copy_artifact(base);
  if (opt.steps <= 0) return out;
  if (out.model->uses_damage() && data.damage.empty()) {
    throw ConfigError("fine-tuning a conditioned model needs damage embeddings");
  }
  torch::manual_seed(opt.seed);
  const auto& cfg = out.config;
  torch::optim::Adam adam(out.model->parameters(),
                          torch::optim::AdamOptions(opt.lr).weight_decay(cfg.optim.weight_decay));
  BatchStream stream(data, static_cast<std::size_t>(std::max(opt.batch, 1)),
                     derive_seed(opt.seed, 0xF1));
  out.model->train();
  for (int s = 0; s < opt.steps; ++s) {
    train_step(out.model, adam, stream.next(cfg.H, cfg.P), opt.lr, cfg.optim.grad_clip);
  }
  out.model->eval();
  return out;
}

void save_kino(const KinoArtifact& a, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ordered_json cfg = {{"kind", "kino"},
                      {"variant", variant_name(a.config.variant)},
                      {"kino", to_json(a.config)},
                      {"config_hash", a.config_hash},
                      {"dataset_hash", a.dataset_hash},
                      {"alignment_hash", a.alignment_hash},
                      {"best_epoch", a.best_epoch}};
  write_json_file(dir / kCheckpointConfigFile, cfg);
  save_named_tensors(dir / kWeightsFile, *a.model);
  ordered_json metrics = ordered_json::array();
  for (const auto& e : a.metrics) metrics.push_back(to_json(e));
  write_json_file(dir / kMetricsFile, metrics);
}

KinoArtifact load_kino(const std::filesystem::path& dir) {
  const auto cfg = read_json_file(dir / kCheckpointConfigFile);
  KinoArtifact a;
  try {
    if (cfg.at("kind").get<std::string>() != "kino") {
      throw FormatError(dir.string() + " is not a kinodynamics checkpoint");
    }
    a.config = kino_config_from_json(cfg.at("kino"));
    if (variant_name(a.config.variant) != cfg.at("variant").get<std::string>()) {
      throw FormatError(dir.string() + ": variant tag disagrees with the stored config");
    }
    a.config_hash = cfg.at("config_hash").get<std::string>();
    a.dataset_hash = cfg.at("dataset_hash").get<std::string>();
    a.alignment_hash = cfg.at("alignment_hash").get<std::string>();
    a.best_epoch = cfg.at("best_epoch").get<int>();
    for (const auto& e : read_json_file(dir / kMetricsFile)) {
      a.metrics.push_back({e.at("epoch").get<int>(), e.at("lr").get<double>(),
                           e.at("train_mse").get<double>(), e.at("val_mse").get<double>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
  a.model = KinoModel(a.config);
  load_named_tensors(dir / kWeightsFile, *a.model);
  a.model->eval();
  return a;
}

}  // namespace zlik
