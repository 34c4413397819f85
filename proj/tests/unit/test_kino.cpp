#include "../support/torch_doctest.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "zlik/checkpoint.hpp"
#include "zlik/errors.hpp"
#include "zlik/kino.hpp"

using namespace zlik;
namespace fs = std::filesystem;

namespace {

KinoConfig tiny(KinoVariant v = KinoVariant::kZlik) {
  KinoConfig c;
  c.H = 8;
  c.P = 4;
  c.L_seg = 2;
  c.d_model = 16;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.heads = 2;
  c.router_count = 2;
  c.d_ff = 32;
  c.dropout = 0.0;
  c.d_damage = 6;
  c.variant = v;
  c.optim.batch = 16;
  c.optim.epochs = 2;
  c.optim.steps_per_epoch = 4;
  c.window_stride = 3;
  return resolve_config(c);
}

double max_abs(const torch::Tensor& t) { return t.abs().max().item<double>(); }

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("zlik_kn_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

struct Fixture {
  std::vector<EpisodeRecord> episodes;
  WindowSet set;
};

Fixture windows_of(const KinoConfig& cfg, int per_class = 1, int len = 60) {
  SimConfig sim;
  sim.episode_len = len;
  Fixture f;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (int k = 0; k < per_class; ++k) {
      f.episodes.push_back(make_episode("e" + std::to_string(c) + "_" + std::to_string(k),
                                        static_cast<DamageClass>(c), 100 + 10 * c + k, sim));
    }
  }
  std::vector<const EpisodeRecord*> ptr;
  for (const auto& e : f.episodes) ptr.push_back(&e);
  f.set.episodes = prepare_episodes(ptr);
  f.set.windows = kino_windows(f.set.episodes, cfg.H, cfg.P, 1);
  torch::manual_seed(9);
  if (cfg.variant != KinoVariant::kClean) {
    for (std::size_t i = 0; i < ptr.size(); ++i) {
      const auto z = torch::randn({cfg.d_damage});
      f.set.damage.emplace_back(z.data_ptr<float>(), z.data_ptr<float>() + cfg.d_damage);
    }
  }
  return f;
}

Dataset tiny_dataset(const fs::path& dir) {
  SimConfig cfg;
  cfg.episode_len = 60;
  DatasetPlan plan;
  plan.episodes_per_class.fill(3);
  plan.test_episodes_per_class.fill(1);
  plan.val_fraction = 0.34;
  generate_dataset(cfg, plan, 5, dir);
  return load_dataset(dir);
}

DamageEncoder tiny_encoder(int out) {
  torch::manual_seed(2);
  ProjectionHead head(32, ProjectionConfig{{16}, out});
  return DamageEncoder(head, std::make_shared<HashedEmbedder>(32));
}

}  // namespace

TEST_CASE("segment embedding shapes at the default sizes") {
  KinoConfig cfg;
  KinoModel m(resolve_config(cfg));
  m->eval();
  torch::manual_seed(1);
  const auto h = m->segment_embed(torch::randn({3, 40, 8}));
  CHECK(h.sizes() == torch::IntArrayRef({3, 10, 8, 256}));
  const auto z = m->inject_context(h, torch::randn({3, 128}));
  const auto e = m->encode(z);
  CHECK(e.sizes() == h.sizes());
  const auto y = m->decode(e, torch::randn({3, 9, 2}));
  CHECK(y.sizes() == torch::IntArrayRef({3, 10, 6}));
  CHECK_THROWS_AS(m->segment_embed(torch::randn({3, 40, 7})), ShapeError);
  CHECK_THROWS_AS(m->segment_embed(torch::randn({3, 42, 8})), ShapeError);
  CHECK_THROWS_AS(m->decode(e, torch::randn({3, 10, 2})), ShapeError);
}

TEST_CASE("segment embedding: zero input gives the bias, channels stay separate") {
  const auto cfg = tiny();
  KinoModel m(cfg);
  m->eval();
  torch::NoGradGuard ng;
  const auto zero = m->segment_embed(torch::zeros({2, cfg.H, 8}));
  const auto bias = m->seg_proj->bias.view({1, 1, 1, cfg.d_model}).expand_as(zero);
  CHECK(max_abs(zero - bias) < 1e-7);

  torch::manual_seed(3);
  const auto x = torch::randn({2, cfg.H, 8});
  auto y = x.clone();
  y.select(2, 5) += torch::randn({2, cfg.H});
  const auto dx = m->segment_embed(y) - m->segment_embed(x);
  for (int d = 0; d < 8; ++d) {
    const double change = max_abs(dx.select(2, d));
    if (d == 5) {
      CHECK(change > 1e-4);
    } else {
      CHECK(change == 0.0);
    }
  }
}

TEST_CASE("damage injection is affine in z and vanishes with the projection") {
  const auto cfg = tiny();
  KinoModel m(cfg);
  m->eval();
  torch::NoGradGuard ng;
  torch::manual_seed(4);
  const auto h = torch::randn({3, cfg.segments(), 8, cfg.d_model});
  const auto z1 = torch::randn({3, cfg.d_damage});
  const auto z2 = torch::randn({3, cfg.d_damage});
  const auto zero = torch::zeros({3, cfg.d_damage});
  const auto base = m->inject_context(h, zero);
  const auto lhs = m->inject_context(h, z1 + z2) - base;
  const auto rhs = (m->inject_context(h, z1) - base) + (m->inject_context(h, z2) - base);
  CHECK(max_abs(lhs - rhs) < 1e-5);

  nn::zero_parameters(*m, {"damage_proj"});
  CHECK(max_abs(m->inject_context(h, z1) - (h + m->enc_pos)) < 1e-6);
  CHECK_THROWS_AS(m->inject_context(h, torch::randn({2, cfg.d_damage})), ShapeError);
}

TEST_CASE("zlik with a zero damage embedding equals the clean model with shared weights") {
  const auto cfg = tiny();
  auto clean_cfg = cfg;
  clean_cfg.variant = KinoVariant::kClean;
  torch::manual_seed(5);
  KinoModel zl(cfg);
  KinoModel cl(clean_cfg);
  CHECK(nn::copy_shared_state(*zl, *cl) > 0);
  zl->eval();
  cl->eval();
  torch::NoGradGuard ng;
  const auto h = torch::randn({4, cfg.H, 8});
  const auto a = torch::randn({4, cfg.P - 1, 2});
  const auto y0 = zl->forward(h, a, torch::zeros({4, cfg.d_damage}));
  const auto y1 = cl->forward(h, a, torch::Tensor());
  CHECK(max_abs(y0 - y1) < 1e-6);
}

TEST_CASE("dimension stage is the only cross-channel path in the encoder") {
  auto cfg = tiny();
  for (bool stage : {false, true}) {
    cfg.dimension_stage = stage;
    torch::manual_seed(6);
    KinoModel m(cfg);
    m->eval();
    torch::NoGradGuard ng;
    const auto x = torch::randn({2, cfg.segments(), 8, cfg.d_model});
    auto y = x.clone();
    y.select(2, 0) += torch::randn({2, cfg.segments(), cfg.d_model});
    const auto d = m->encode(y) - m->encode(x);
    const double other = max_abs(d.slice(2, 1));
    if (stage) {
      CHECK(other > 1e-4);
    } else {
      CHECK(other == 0.0);
    }
    CHECK(max_abs(d.select(2, 0)) > 1e-4);
  }
}

TEST_CASE("attention is unmasked in both directions") {
  const auto cfg = tiny();
  torch::manual_seed(7);
  KinoModel m(cfg);
  m->eval();
  torch::NoGradGuard ng;
  // Encoder: changing the last segment reaches the first one.
  const auto x = torch::randn({2, cfg.segments(), 8, cfg.d_model});
  auto y = x.clone();
  y.select(1, cfg.segments() - 1) += 1.0;
  CHECK(max_abs((m->encode(y) - m->encode(x)).select(1, 0)) > 1e-4);
  // Decoder: a later action changes the first predicted step.
  const auto mem = m->encode(x);
  const auto a = torch::randn({2, cfg.P - 1, 2});
  auto b = a.clone();
  b.select(1, cfg.P - 2) += 1.0;
  CHECK(max_abs((m->decode(mem, b) - m->decode(mem, a)).select(1, 0)) > 1e-5);
}

TEST_CASE("decoder without cross-attention ignores the memory") {
  const auto cfg = tiny();
  torch::manual_seed(8);
  KinoModel m(cfg);
  m->eval();
  nn::zero_parameters(*m, {"cross_attn"});
  torch::NoGradGuard ng;
  const auto a = torch::randn({2, cfg.P - 1, 2});
  const auto m1 = torch::randn({2, cfg.segments(), 8, cfg.d_model});
  const auto m2 = torch::randn({2, cfg.segments(), 8, cfg.d_model}) * 5.0;
  CHECK(max_abs(m->decode(m1, a) - m->decode(m2, a)) == 0.0);
}

TEST_CASE("monolithic baseline matches the two-stage parameter budget") {
  KinoConfig z;
  auto mono = z;
  mono.variant = KinoVariant::kMonolithic;
  mono = resolve_config(mono);
  const auto nz = nn::parameter_count(*KinoModel(z));
  const auto nm = nn::parameter_count(*KinoModel(mono));
  CHECK(std::abs(static_cast<double>(nm - nz)) / static_cast<double>(nz) < 0.15);
  CHECK(mono.monolithic_ff > 0);

  KinoModel m(mono);
  m->eval();
  torch::NoGradGuard ng;
  const auto y = m->forward(torch::randn({2, 40, 8}), torch::randn({2, 9, 2}), torch::randn({2, 128}));
  CHECK(y.sizes() == torch::IntArrayRef({2, 10, 6}));
  CHECK_THROWS_AS(m->forward(torch::randn({2, 36, 8}), torch::randn({2, 9, 2}), torch::randn({2, 128})),
                  ShapeError);
  CHECK_THROWS_AS(m->segment_embed(torch::randn({2, 40, 8})), ShapeError);
}

TEST_CASE("parameter gradients match central differences") {
  auto cfg = tiny();
  cfg.H = 4;
  cfg.P = 3;
  torch::manual_seed(10);
  KinoModel m(cfg);
  m->to(torch::kFloat64);
  m->eval();
  const auto h = torch::randn({3, cfg.H, 8}, torch::kFloat64);
  const auto a = torch::randn({3, cfg.P - 1, 2}, torch::kFloat64);
  const auto z = torch::randn({3, cfg.d_damage}, torch::kFloat64);
  const auto target = torch::randn({3, cfg.P, 6}, torch::kFloat64);
  auto loss = [&] { return torch::mse_loss(m->forward(h, a, z), target); };

  m->zero_grad();
  loss().backward();
  auto params = m->named_parameters();
  std::mt19937_64 rng(4);
  std::vector<double> analytic, numeric;
  const double eps = 1e-6;
  for (int probe = 0; probe < 20; ++probe) {
    const auto& item = params[rng() % params.size()];
    auto p = item.value();
    const auto i = static_cast<int64_t>(rng() % static_cast<std::uint64_t>(p.numel()));
    analytic.push_back(p.grad().view(-1)[i].item<double>());
    torch::NoGradGuard ng;
    auto flat = p.view(-1);
    const double orig = flat[i].item<double>();
    flat[i] = orig + eps;
    const double up = loss().item<double>();
    flat[i] = orig - eps;
    const double dn = loss().item<double>();
    flat[i] = orig;
    numeric.push_back((up - dn) / (2 * eps));
  }
  double diff = 0.0, na = 0.0, nn_ = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn_ += numeric[i] * numeric[i];
  }
  CHECK(std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn_), 1e-12}) < 1e-4);
}

TEST_CASE("overfits a handful of windows") {
  auto cfg = tiny();
  cfg.d_model = 64;
  cfg.heads = 4;
  cfg.d_ff = 128;
  cfg.enc_layers = 2;
  cfg.dec_layers = 2;
  const auto f = windows_of(cfg);
  WindowSet small = f.set;
  small.windows.clear();
  for (std::size_t i = 0; i < 32; ++i) small.windows.push_back(f.set.windows[i * f.set.windows.size() / 32]);
  torch::manual_seed(11);
  KinoModel m(cfg);
  m->set_normalization(compute_normalization(small, cfg.H, cfg.P));
  const auto b = make_batch(small, 0, small.windows.size(), cfg.H, cfg.P);
  torch::optim::Adam opt(m->parameters(), torch::optim::AdamOptions(3e-3));
  m->train();
  auto standardized = [&] {
    const auto e = (m->forward(b.history, b.future_actions, b.damage) - b.target) / m->target_std;
    return e.pow(2).mean();
  };
  for (int s = 0; s < 500; ++s) {
    for (auto& g : opt.param_groups()) g.options().set_lr(3e-3 * 0.5 * (1.0 + std::cos(kPi * s / 500)));
    auto loss = standardized();
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  m->eval();
  torch::NoGradGuard ng;
  const double final_loss = standardized().item<double>();
  MESSAGE("standardized training mse " << final_loss);
  CHECK(final_loss < 1e-3);
}

TEST_CASE("training, fine-tuning and checkpoints") {
  const auto dir = scratch("ds");
  const auto ds = tiny_dataset(dir);

  auto zcfg = tiny();
  CHECK_THROWS_AS(train_kino(ds, nullptr, zcfg, 1), ConfigError);

  auto ccfg = tiny(KinoVariant::kClean);
  auto clean = train_kino(ds, nullptr, ccfg, 1);
  CHECK(clean.metrics.size() == 2u);
  CHECK(clean.alignment_hash.empty());
  for (const auto& e : clean.metrics) CHECK(std::isfinite(e.val_mse));

  const auto enc = tiny_encoder(zcfg.d_damage);
  auto zl = train_kino(ds, &enc, zcfg, 1, "abc");
  CHECK(zl.alignment_hash == "abc");
  CHECK(std::isfinite(zl.metrics.back().train_mse));

  // Fine-tuning leaves the base alone.
  const auto f = windows_of(ccfg);
  WindowSet data = f.set;
  const auto before = snapshot_state(*clean.model);
  const double base_err = mean_squared_error(clean.model, data, 64);
  auto same = fine_tune(clean, data, {0, 1e-3, 16, 3});
  CHECK(mean_squared_error(same.model, data, 64) == base_err);
  auto tuned = fine_tune(clean, data, {30, 1e-3, 16, 3});
  const auto after = snapshot_state(*clean.model);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(torch::equal(before[i].second, after[i].second));
  CHECK(mean_squared_error(tuned.model, data, 64) != base_err);
  WindowSet empty = data;
  empty.windows.clear();
  CHECK_THROWS_AS(fine_tune(clean, empty, {10, 1e-3, 16, 3}), DomainError);

  // Save / load.
  const auto out = scratch("ckpt");
  save_kino(zl, out);
  auto back = load_kino(out);
  CHECK(back.config.variant == KinoVariant::kZlik);
  CHECK(back.alignment_hash == "abc");
  CHECK(back.metrics.size() == zl.metrics.size());
  const auto zf = windows_of(zcfg);
  zl.model->eval();
  CHECK(mean_squared_error(back.model, zf.set, 64) == mean_squared_error(zl.model, zf.set, 64));

  auto j = read_json_file(out / kCheckpointConfigFile);
  j["variant"] = "clean";
  std::ofstream(out / kCheckpointConfigFile) << j.dump();
  CHECK_THROWS_AS(load_kino(out), FormatError);
  fs::remove(out / kCheckpointConfigFile);
  CHECK_THROWS_AS(load_kino(out), MissingArtifactError);
  fs::remove_all(out);
  fs::remove_all(dir);
}
