#include "../support/torch_doctest.hpp"

#include <cmath>
#include <filesystem>
#include <random>

#include <unistd.h>

#include "zlik/alignment.hpp"
#include "zlik/checkpoint.hpp"
#include "zlik/dataset.hpp"
#include "zlik/errors.hpp"

using namespace zlik;
namespace fs = std::filesystem;

namespace {

const VicregWeights kW{};

torch::Tensor dbl(std::vector<std::vector<double>> rows) {
  const auto n = static_cast<int64_t>(rows.size());
  const auto k = static_cast<int64_t>(rows.front().size());
  auto t = torch::empty({n, k}, torch::kFloat64);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j) t[i][j] = rows[i][j];
  return t;
}

double item(const torch::Tensor& t) { return t.item<double>(); }

// Loop-based VICReg, written independently of the tensor version.
struct Brute {
  double total, s, vx, vt, cx, ct;
};

Brute brute_vicreg(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& t,
                   const VicregWeights& w) {
  const std::size_t n = x.size(), k = x[0].size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) s += (x[i][j] - t[i][j]) * (x[i][j] - t[i][j]);
  s /= n;
  auto branch = [&](const std::vector<std::vector<double>>& y, double& v, double& c) {
    std::vector<double> mean(k, 0.0);
    for (const auto& r : y)
      for (std::size_t j = 0; j < k; ++j) mean[j] += r[j] / n;
    v = 0.0;
    c = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        double cov = 0.0;
        for (const auto& r : y) cov += (r[a] - mean[a]) * (r[b] - mean[b]);
        cov /= (n - 1);
        if (a == b) {
          v += std::max(0.0, w.gamma - std::sqrt(cov + w.eps));
        } else {
          c += cov * cov;
        }
      }
    }
    v /= k;
    c /= k;
  };
  Brute b{};
  b.s = s;
  branch(x, b.vx, b.cx);
  branch(t, b.vt, b.ct);
  b.total = w.lambda * s + w.mu * (b.vx + b.vt) + w.nu * (b.cx + b.ct);
  return b;
}

std::vector<std::vector<double>> rows_of(const torch::Tensor& t) {
  std::vector<std::vector<double>> r(t.size(0), std::vector<double>(t.size(1)));
  auto a = t.accessor<double, 2>();
  for (int64_t i = 0; i < t.size(0); ++i)
    for (int64_t j = 0; j < t.size(1); ++j) r[i][j] = a[i][j];
  return r;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("zlik_al_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

Dataset tiny_dataset(const fs::path& dir, int per_class = 4, int len = 80) {
  SimConfig cfg;
  cfg.episode_len = len;
  DatasetPlan plan;
  plan.episodes_per_class.fill(per_class);
  plan.test_episodes_per_class.fill(1);
  plan.val_fraction = 0.25;
  generate_dataset(cfg, plan, 3, dir);
  return load_dataset(dir);
}

AlignConfig tiny_align() {
  AlignConfig c;
  c.H_align = 10;
  c.encoder = {1, 2, 16, 32, 0.0};
  c.projection = {{16}, 8};
  c.optim.batch = 16;
  c.optim.epochs = 2;
  return c;
}

}  // namespace

TEST_CASE("vicreg worked examples") {
  const auto y = dbl({{0.3, -1.2, 2.0}, {1.1, 0.4, -0.7}, {0.0, 0.5, 0.9}});
  CHECK(item(vicreg_loss(y, y, kW).s) == 0.0);

  const auto flat = dbl({{0.7, -0.2}, {0.7, -0.2}, {0.7, -0.2}, {0.7, -0.2}});
  const auto tf = vicreg_loss(flat, flat, kW);
  CHECK(std::abs(item(tf.v_x) - 0.99) < 1e-9);
  CHECK(std::abs(item(tf.v_t) - 0.99) < 1e-9);
  CHECK(item(tf.c_x) == 0.0);

  const auto two = dbl({{1.0, 0.0}, {-1.0, 0.0}});
  const auto t2 = vicreg_loss(two, two, kW);
  CHECK(std::abs(item(t2.c_x)) < 1e-9);
  CHECK(std::abs(item(t2.v_x) - 0.495) < 1e-9);
  CHECK(std::abs(item(t2.total) - 10.0 * 2 * 0.495) < 1e-9);
}

TEST_CASE("vicreg matches an independent loop implementation") {
  torch::manual_seed(1);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 2 + rep % 7, k = 1 + rep % 5;
    auto x = torch::randn({n, k}, torch::kFloat64) * (0.2 + 0.3 * (rep % 4));
    auto t = torch::randn({n, k}, torch::kFloat64);
    const auto got = vicreg_loss(x, t, kW);
    const auto want = brute_vicreg(rows_of(x), rows_of(t), kW);
    CHECK(item(got.s) == doctest::Approx(want.s).epsilon(1e-12));
    CHECK(item(got.v_x) == doctest::Approx(want.vx).epsilon(1e-12));
    CHECK(item(got.v_t) == doctest::Approx(want.vt).epsilon(1e-12));
    CHECK(item(got.c_x) == doctest::Approx(want.cx).epsilon(1e-12));
    CHECK(item(got.c_t) == doctest::Approx(want.ct).epsilon(1e-12));
    CHECK(item(got.total) == doctest::Approx(want.total).epsilon(1e-12));
  }
}

TEST_CASE("vicreg properties: non-negative and permutation equivariant") {
  torch::manual_seed(2);
  for (int rep = 0; rep < 30; ++rep) {
    auto x = torch::randn({6, 4}, torch::kFloat64) * 3.0;
    auto t = torch::randn({6, 4}, torch::kFloat64);
    const auto a = vicreg_loss(x, t, kW);
    for (const auto* c : {&a.total, &a.s, &a.v_x, &a.v_t, &a.c_x, &a.c_t}) CHECK(item(*c) >= 0.0);
    const auto perm = torch::randperm(6, torch::kLong);
    const auto b = vicreg_loss(x.index_select(0, perm), t.index_select(0, perm), kW);
    CHECK(item(b.total) == doctest::Approx(item(a.total)).epsilon(1e-12));
    CHECK(item(b.c_t) == doctest::Approx(item(a.c_t)).epsilon(1e-12));
  }
}

TEST_CASE("vicreg gradients match central differences") {
  torch::manual_seed(3);
  const double h = 1e-5;
  for (int probe = 0; probe < 20; ++probe) {
    auto x = (torch::randn({4, 3}, torch::kFloat64) * 0.5).requires_grad_(true);
    auto t = (torch::randn({4, 3}, torch::kFloat64) * 0.5).requires_grad_(true);
    vicreg_loss(x, t, kW).total.backward();
    for (auto* p : {&x, &t}) {
      const auto analytic = p->grad().clone();
      auto numeric = torch::zeros_like(analytic);
      auto base = p->detach().clone();
      for (int64_t i = 0; i < base.numel(); ++i) {
        auto up = base.clone(), dn = base.clone();
        up.view(-1)[i] += h;
        dn.view(-1)[i] -= h;
        const auto& other = p == &x ? t.detach() : x.detach();
        const double fu = item(p == &x ? vicreg_loss(up, other, kW).total : vicreg_loss(other, up, kW).total);
        const double fd = item(p == &x ? vicreg_loss(dn, other, kW).total : vicreg_loss(other, dn, kW).total);
        numeric.view(-1)[i] = (fu - fd) / (2 * h);
      }
      const double rel = item((analytic - numeric).norm()) /
                         std::max({item(analytic.norm()), item(numeric.norm()), 1e-12});
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("vicreg errors") {
  const auto one = torch::ones({1, 3}, torch::kFloat64);
  CHECK_THROWS_AS(vicreg_loss(one, one, kW), DomainError);
  CHECK_THROWS_AS(vicreg_loss(torch::ones({4, 3}), torch::ones({4, 2}), kW), ShapeError);
}

TEST_CASE("trajectory encoder and projection heads") {
  torch::manual_seed(4);
  TrajEncoderConfig ec;  // paper sizes
  TrajectoryEncoder enc(200, ec);
  enc->eval();
  const auto x = torch::randn({3, 200, 8});
  const auto y = enc->forward(x);
  CHECK(y.sizes() == torch::IntArrayRef({3, 128}));
  CHECK(torch::equal(y, enc->forward(x)));
  CHECK_THROWS_AS(enc->forward(torch::randn({3, 199, 8})), ShapeError);
  CHECK_THROWS_AS(enc->forward(torch::randn({3, 200, 7})), ShapeError);

  ProjectionConfig pc;  // 256, 256, 128
  ProjectionHead text(768, pc);
  text->eval();
  const auto z = text->forward(torch::randn({5, 768}));
  CHECK(z.sizes() == torch::IntArrayRef({5, 128}));
  CHECK(text->forward(torch::randn({1, 768})).sizes() == torch::IntArrayRef({1, 128}));
  const auto zero = text->forward(torch::zeros({4, 768}));
  CHECK(torch::allclose(zero[0], zero[3]));
  CHECK_THROWS_AS(text->forward(torch::randn({2, 767})), ShapeError);
}

TEST_CASE("encoder output is invariant to rigid transforms of the source trajectory") {
  torch::manual_seed(5);
  SimConfig cfg;
  cfg.episode_len = 60;
  auto ep = make_episode("a", DamageClass::kTirePuncture, 8, cfg);
  auto moved = ep;
  const double rot = 1.1, tx = 4.0, ty = -7.0;
  for (auto& s : moved.trajectory.states) {
    const double x = s.x, y = s.y;
    s.x = std::cos(rot) * x - std::sin(rot) * y + tx;
    s.y = std::sin(rot) * x + std::cos(rot) * y + ty;
    s.yaw = wrap_angle(s.yaw + rot);
  }
  const auto pa = prepare_episodes({&ep});
  const auto pb = prepare_episodes({&moved});
  const std::vector<WindowRef> w = {{0, 0}, {0, 20}};
  const auto ha = gather_history(pa, w, 0, 2, 30);
  const auto hb = gather_history(pb, w, 0, 2, 30);
  CHECK(torch::allclose(ha, hb, 1e-5, 1e-6));
  TrajectoryEncoder enc(30, TrajEncoderConfig{1, 2, 16, 32, 0.0});
  enc->eval();
  CHECK(torch::allclose(enc->forward(ha), enc->forward(hb), 1e-5, 1e-6));
}

TEST_CASE("alignment training smoke run, checkpoint and frozen head") {
  const auto dir = scratch("ds");
  const auto ds = tiny_dataset(dir);
  const HashedEmbedder provider(64);
  auto cfg = tiny_align();
  auto art = train_alignment(ds, provider, cfg, 11);
  REQUIRE(art.metrics.size() == 2u);
  for (const auto& m : art.metrics) {
    CHECK(std::isfinite(m.total));
    CHECK(std::isfinite(m.val_total));
  }
  CHECK(art.text_dim == 64);
  CHECK(art.provider == "hashed");

  const auto out = scratch("ckpt");
  save_alignment(art, out);
  auto back = load_alignment(out);
  CHECK(back.best_epoch == art.best_epoch);
  CHECK(back.config_hash == art.config_hash);
  CHECK(alignment_hash(out).size() == 16u);

  std::vector<const EpisodeRecord*> test;
  for (const auto& e : ds.test) test.push_back(&e);
  const auto prep = prepare_episodes(test);
  const auto win = history_windows(prep, cfg.H_align, cfg.stride());
  const auto hist = gather_history(prep, win, 0, 4, cfg.H_align);
  torch::NoGradGuard ng;
  art.model->eval();
  back.model->eval();
  CHECK(torch::allclose(art.model->embed_trajectory(hist), back.model->embed_trajectory(hist)));

  // The frozen h_sigma equals the eval-mode text head, one sentence at a time.
  const auto shared = std::make_shared<HashedEmbedder>(64);
  DamageEncoder enc(back.model->text_head, shared);
  CHECK(enc.dim() == 8);
  const std::string s = ds.test.front().description;
  const auto e1 = enc.encode(s);
  const auto e2 = enc.encode(s);
  CHECK(e1 == e2);
  auto phi = torch::tensor(shared->embed(s).vector).view({1, 64});
  const auto direct = back.model->text_head->forward(phi);
  for (int k = 0; k < 8; ++k) CHECK(e1[k] == doctest::Approx(direct[0][k].item<float>()).epsilon(1e-5));
  const auto batch = enc.encode_batch({s, ds.test.back().description});
  CHECK(batch.sizes() == torch::IntArrayRef({2, 8}));
  for (const auto& p : back.model->text_head->parameters()) CHECK_FALSE(p.requires_grad());

  const auto r = evaluate_retrieval(back.model, provider, test);
  CHECK(r.samples == win.size());
  CHECK(r.accuracy >= 0.0);
  CHECK(r.accuracy <= 1.0);
  CHECK(r.z_x_std.size() == 8u);

  CHECK_THROWS_AS(load_alignment(out / "nope"), MissingArtifactError);
  fs::remove(out / kWeightsFile);
  CHECK_THROWS_AS(load_alignment(out), MissingArtifactError);
  fs::remove_all(out);
  fs::remove_all(dir);
}

TEST_CASE("alignment training rejects a dataset smaller than one batch") {
  const auto dir = scratch("small");
  const auto ds = tiny_dataset(dir, 1, 30);
  auto cfg = tiny_align();
  cfg.optim.batch = 4096;
  CHECK_THROWS_AS(train_alignment(ds, HashedEmbedder(64), cfg, 1), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("nearest centroid") {
  const std::vector<std::vector<double>> c = {{0.0, 0.0}, {}, {3.0, 0.0}};
  CHECK(nearest_centroid(c, {0.4, 0.1}) == 0);
  CHECK(nearest_centroid(c, {2.0, 0.0}) == 2);
}
