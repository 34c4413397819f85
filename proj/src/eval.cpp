#include "zlik/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "zlik/checkpoint.hpp"
#include "zlik/errors.hpp"
#include "zlik/hashing.hpp"

namespace zlik {

CellStats cell_stats(const std::vector<double>& values) {
  CellStats c;
  c.count = values.size();
  if (c.count == 0) return c;
  double sum = 0.0;
  for (double v : values) sum += v;
  c.mean = sum / static_cast<double>(c.count);
  if (c.count > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - c.mean) * (v - c.mean);
    c.std = std::sqrt(sq / static_cast<double>(c.count - 1));
  }
  return c;
}

EvalReport evaluate(const Predictor& predict, const WindowSet& set, int H, int P, int batch) {
  EvalReport r;
  r.windows.reserve(set.windows.size());
  const auto step = static_cast<std::size_t>(std::max(batch, 1));
  for (std::size_t b = 0; b < set.windows.size(); b += step) {
    const auto e = std::min(b + step, set.windows.size());
    const auto kb = make_batch(set, b, e, H, P);
    const auto err = (predict(kb).to(torch::kFloat64) - kb.target.to(torch::kFloat64)).pow(2);
    const auto acc = err.accessor<double, 3>();
    for (std::size_t i = b; i < e; ++i) {
      WindowError w;
      w.cls = class_index(set.episodes[set.windows[i].episode].episode->damage.cls);
      double total = 0.0;
      for (std::size_t c = 0; c < kPoseDim; ++c) {
        double s = 0.0;
        for (int p = 0; p < P; ++p) s += acc[i - b][p][c];
        total += s;
        w.per_dim[c] = s / P;
      }
      w.mse = total / (static_cast<double>(P) * kPoseDim);
      r.windows.push_back(w);
    }
  }

  std::vector<double> all, damaged;
  std::array<std::vector<double>, kPoseDim> dim_all;
  for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
    std::vector<double> v;
    std::array<std::vector<double>, kPoseDim> dims;
    for (const auto& w : r.windows) {
      if (w.cls != static_cast<int>(cls)) continue;
      v.push_back(w.mse);
      for (std::size_t c = 0; c < kPoseDim; ++c) dims[c].push_back(w.per_dim[c]);
    }
    r.per_class[cls] = cell_stats(v);
    for (std::size_t c = 0; c < kPoseDim; ++c) r.per_class_dim[cls][c] = cell_stats(dims[c]);
  }
  for (const auto& w : r.windows) {
    all.push_back(w.mse);
    if (w.cls != class_index(DamageClass::kNoDamage)) damaged.push_back(w.mse);
    for (std::size_t c = 0; c < kPoseDim; ++c) dim_all[c].push_back(w.per_dim[c]);
  }
  r.overall = cell_stats(all);
  r.damaged = cell_stats(damaged);
  for (std::size_t c = 0; c < kPoseDim; ++c) r.per_dim[c] = cell_stats(dim_all[c]);
  return r;
}

namespace {

Predictor model_predictor(KinoModel& model) {
  return [&model](const KinoBatch& b) { return model->forward(b.history, b.future_actions, b.damage); };
}

WindowSet window_set(const std::vector<const EpisodeRecord*>& episodes, int H, int P, int stride) {
  WindowSet s;
  s.episodes = prepare_episodes(episodes);
  s.windows = kino_windows(s.episodes, H, P, stride);
  return s;
}

EvalReport run_eval(KinoModel& model, const WindowSet& set, int batch) {
  model->eval();
  torch::NoGradGuard no_grad;
  const auto& cfg = model->config();
  return evaluate(model_predictor(model), set, cfg.H, cfg.P, batch);
}

}  // namespace

EvalReport evaluate_model(KinoModel& model, const std::vector<const EpisodeRecord*>& episodes,
                          const DamageEncoder* encoder, int stride, int batch) {
  const auto& cfg = model->config();
  auto set = window_set(episodes, cfg.H, cfg.P, stride);
  if (model->uses_damage()) {
    if (!encoder) throw ConfigError("evaluating a conditioned model needs the alignment head");
    set.damage = damage_vectors(episodes, *encoder);
  }
  auto r = run_eval(model, set, batch);
  r.model = std::string(variant_name(cfg.variant));
  r.config_hash = config_hash(to_json(cfg));
  return r;
}

int ConfusionMatrix::diagonal_minimal_columns() const {
  int n = 0;
  for (std::size_t j = 0; j < classes.size(); ++j) {
    bool minimal = cells[j][j].present();
    for (std::size_t i = 0; i < classes.size() && minimal; ++i) {
      if (i != j && cells[i][j].present() && cells[i][j].mean < cells[j][j].mean) minimal = false;
    }
    n += minimal ? 1 : 0;
  }
  return n;
}

double ConfusionMatrix::max_row_deviation() const {
  double worst = 0.0;
  for (std::size_t j = 0; j < classes.size(); ++j) {
    for (std::size_t i = 0; i < classes.size(); ++i) {
      for (std::size_t k = 0; k < classes.size(); ++k) {
        worst = std::max(worst, std::abs(cells[i][j].mean - cells[k][j].mean));
      }
    }
  }
  return worst;
}

ConfusionMatrix confusion_experiment(KinoModel& model,
                                     const std::vector<const EpisodeRecord*>& episodes,
                                     const std::vector<DamageClass>& classes,
                                     const DamageEncoder* encoder, std::uint64_t seed, int stride,
                                     int batch) {
  if (classes.size() < 2) throw DomainError("confusion needs at least two classes");
  const bool conditioned = model->uses_damage();
  if (conditioned && !encoder) throw ConfigError("confusion on a conditioned model needs h_sigma");
  const auto& cfg = model->config();
  const auto m = classes.size();

  std::vector<std::vector<const EpisodeRecord*>> by_class(m);
  std::vector<std::vector<std::string>> pools(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (const auto* ep : episodes) {
      if (ep->damage.cls == classes[i]) by_class[i].push_back(ep);
    }
    pools[i] = distinct_descriptions(by_class[i]);
    if (pools[i].empty()) {
      throw DomainError(std::string("no episodes of class ") + std::string(class_name(classes[i])));
    }
  }

  ConfusionMatrix cm;
  cm.classes = classes;
  cm.cells.assign(m, std::vector<CellStats>(m));
  for (std::size_t j = 0; j < m; ++j) {
    auto set = window_set(by_class[j], cfg.H, cfg.P, stride);
    for (std::size_t i = 0; i < m; ++i) {
      if (conditioned) {
        std::mt19937_64 rng(derive_seed(seed, i * 1009 + j));
        set.damage.clear();
        for (const auto* ep : by_class[j]) {
          const auto& text = i == j ? ep->description : pools[i][rng() % pools[i].size()];
          set.damage.push_back(encoder->encode(text));
        }
      }
      cm.cells[i][j] = run_eval(model, set, batch).overall;
    }
  }
  return cm;
}

std::unique_ptr<EmbeddingProvider> make_provider(const EmbedConfig& cfg) {
  if (cfg.provider == "hashed") return std::make_unique<HashedEmbedder>(cfg.dim);
  if (cfg.provider == "table") {
    auto t = load_embedding_table(cfg.table_path, cfg.dim);
    if (t->dim() != cfg.dim) {
      throw ConfigError("embedding table dimension " + std::to_string(t->dim()) +
                        " differs from embed.dim " + std::to_string(cfg.dim));
    }
    return t;
  }
  throw ConfigError("unknown embedding provider '" + cfg.provider + "'");
}

ordered_json to_json(const CellStats& c) {
  if (!c.present()) return {{"count", 0}, {"absent", true}};
  return {{"count", c.count}, {"mean", c.mean}, {"std", c.std}};
}

ordered_json to_json(const EvalReport& r, bool include_windows) {
  ordered_json j = {{"protocol", r.protocol}, {"model", r.model}, {"config_hash", r.config_hash}};
  ordered_json classes = ordered_json::array();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    ordered_json dims = ordered_json::array();
    for (const auto& d : r.per_class_dim[c]) dims.push_back(to_json(d));
    classes.push_back({{"class", class_name(kAllClasses[c])},
                       {"mse", to_json(r.per_class[c])},
                       {"per_dim", dims}});
  }
  j["classes"] = classes;
  ordered_json dims = ordered_json::array();
  for (const auto& d : r.per_dim) dims.push_back(to_json(d));
  j["per_dim"] = dims;
  j["overall"] = to_json(r.overall);
  j["damaged"] = to_json(r.damaged);
  if (include_windows) {
    ordered_json w = ordered_json::array();
    for (const auto& e : r.windows) {
      w.push_back({{"class", class_name(kAllClasses[e.cls])}, {"mse", e.mse}, {"per_dim", e.per_dim}});
    }
    j["windows"] = w;
  }
  return j;
}

ordered_json to_json(const ConfusionMatrix& m) {
  ordered_json names = ordered_json::array();
  for (auto c : m.classes) names.push_back(class_name(c));
  ordered_json rows = ordered_json::array();
  for (const auto& row : m.cells) {
    ordered_json r = ordered_json::array();
    for (const auto& c : row) r.push_back(to_json(c));
    rows.push_back(r);
  }
  return {{"classes", names},
          {"layout", "cells[supplied][true]"},
          {"cells", rows},
          {"diagonal_minimal_columns", m.diagonal_minimal_columns()},
          {"max_row_deviation", m.max_row_deviation()}};
}

std::string budget_label(double seconds) {
  char buf[32];
  if (seconds >= 60.0 && std::fmod(seconds, 60.0) == 0.0) {
    std::snprintf(buf, sizeof buf, "%gm", seconds / 60.0);
  } else {
    std::snprintf(buf, sizeof buf, "%gs", seconds);
  }
  return buf;
}

std::vector<EpisodeRecord> finetune_episodes(const SimConfig& sim, DamageClass cls,
                                             std::uint64_t seed, std::size_t windows, int H,
                                             int P) {
  std::vector<EpisodeRecord> fresh;
  std::size_t available = 0;
  const auto span = static_cast<std::size_t>(H + P);
  for (std::size_t k = 0; available < windows; ++k) {
    char id[48];
    std::snprintf(id, sizeof id, "ft-%s-%04zu", std::string(class_name(cls)).c_str(), k);
    fresh.push_back(make_episode(
        id, cls, derive_seed(seed, (std::uint64_t{1} << 42) + class_index(cls) * 100000 + k), sim));
    const auto n = fresh.back().trajectory.states.size();
    if (n <= span) throw ConfigError("episodes are too short for fine-tuning windows");
    available += n - span;
  }
  return fresh;
}

namespace {

std::vector<const EpisodeRecord*> pointers(const std::vector<EpisodeRecord>& v) {
  std::vector<const EpisodeRecord*> out;
  for (const auto& e : v) out.push_back(&e);
  return out;
}

std::vector<const EpisodeRecord*> of_class(const std::vector<const EpisodeRecord*>& v,
                                           DamageClass c) {
  std::vector<const EpisodeRecord*> out;
  for (const auto* e : v) {
    if (e->damage.cls == c) out.push_back(e);
  }
  return out;
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << s;
}

}  // namespace

ordered_json compare_to_json(const CompareResult& r) {
  ordered_json j;
  j["protocol"] = "compare";
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["dataset_hash"] = r.dataset_manifest_hash;

  ordered_json models = ordered_json::array();
  for (const auto& [name, n] : r.parameter_counts) models.push_back({{"name", name}, {"parameters", n}});
  j["models"] = models;

  ordered_json retrieval = {{"samples", r.retrieval.samples}, {"accuracy", r.retrieval.accuracy}};
  ordered_json per = ordered_json::object();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    per[std::string(class_name(kAllClasses[c]))] = {{"correct", r.retrieval.per_class_correct[c]},
                                                   {"total", r.retrieval.per_class_total[c]}};
  }
  retrieval["per_class"] = per;
  retrieval["z_x_std"] = r.retrieval.z_x_std;
  j["retrieval"] = retrieval;

  auto row = [](const std::string& model, const CellStats& c) {
    ordered_json o = {{"model", model}};
    o.update(to_json(c));
    return o;
  };
  ordered_json classes = ordered_json::array();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    ordered_json rows = ordered_json::array();
    for (const auto& [name, rep] : r.reports) {
      auto o = row(name, rep.per_class[c]);
      ordered_json dims = ordered_json::array();
      for (const auto& d : rep.per_class_dim[c]) dims.push_back(to_json(d));
      o["per_dim"] = dims;
      rows.push_back(o);
    }
    for (const auto& f : r.finetune) {
      if (class_index(f.cls) == static_cast<int>(c)) {
        auto o = row("clean+ft " + budget_label(f.seconds), f.on_class);
        o["windows"] = f.windows;
        rows.push_back(o);
      }
    }
    classes.push_back({{"class", class_name(kAllClasses[c])}, {"rows", rows}});
  }
  j["classes"] = classes;

  ordered_json agg_all = ordered_json::array(), agg_dmg = ordered_json::array();
  ordered_json dims = ordered_json::object();
  for (const auto& [name, rep] : r.reports) {
    agg_all.push_back(row(name, rep.overall));
    agg_dmg.push_back(row(name, rep.damaged));
    ordered_json d = ordered_json::array();
    for (const auto& s : rep.per_dim) d.push_back(to_json(s));
    dims[name] = d;
  }
  j["aggregate"] = {{"all", agg_all}, {"damaged", agg_dmg}};
  j["per_dim"] = dims;

  ordered_json ft = ordered_json::array();
  for (const auto& f : r.finetune) {
    ft.push_back({{"class", class_name(f.cls)},
                  {"seconds", f.seconds},
                  {"windows", f.windows},
                  {"on_class", to_json(f.on_class)},
                  {"on_healthy", to_json(f.on_healthy)}});
  }
  j["finetune"] = ft;
  ordered_json t = ordered_json::object();
  for (const auto& [stage, s] : r.timings) t[stage] = s;
  j["timings_s"] = t;
  return j;
}

namespace {

std::string fmt2(const json& cell, double scale) {
  if (!cell.contains("mean")) return "absent";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", cell.at("mean").get<double>() * scale,
                cell.at("std").get<double>() * scale);
  return buf;
}

// Desk-scale errors are far below 1, so tables print in units of 10^-k with k
// chosen to bring the largest mean into [1, 10).
int display_exponent(const std::vector<double>& means) {
  double top = 0.0;
  for (double m : means) top = std::max(top, m);
  if (!(top > 0.0) || top >= 1.0) return 0;
  return static_cast<int>(std::ceil(-std::log10(top) - 1e-12));
}

void collect_means(const json& j, std::vector<double>& out) {
  if (j.is_object()) {
    if (j.contains("mean") && j.at("mean").is_number()) out.push_back(j.at("mean").get<double>());
    for (const auto& [k, v] : j.items()) {
      if (k != "windows") collect_means(v, out);
    }
  } else if (j.is_array()) {
    for (const auto& v : j) collect_means(v, out);
  }
}

std::string unit_note(int k) {
  return k == 0 ? std::string() : " [x 1e-" + std::to_string(k) + "]";
}

// Display width, counting each UTF-8 code point once.
std::size_t width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

std::string pad(const std::string& s, std::size_t w) {
  return s + std::string(w > width(s) ? w - width(s) : 0, ' ');
}

std::string table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w;
  for (const auto& r : rows) {
    if (w.size() < r.size()) w.resize(r.size(), 0);
    for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], width(r[i]));
  }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) {
      line += i + 1 < r.size() ? pad(r[i], w[i] + 2) : r[i];
    }
    out += line + "\n";
  }
  return out;
}

}  // namespace

std::string format_report(const ordered_json& report) {
  std::ostringstream out;
  std::vector<double> means;
  collect_means(report.at("classes"), means);
  collect_means(report.at("aggregate"), means);
  const int k = display_exponent(means);
  const double scale = std::pow(10.0, k);
  out << "Trajectory prediction MSE (relative frame, mean ± std over windows)" << unit_note(k)
      << "\n\n";
  std::vector<std::vector<std::string>> rows = {{"Damage class", "Model", "MSE ± Std", "Windows"}};
  for (const auto& c : report.at("classes")) {
    bool first = true;
    for (const auto& r : c.at("rows")) {
      rows.push_back({first ? c.at("class").get<std::string>() : "", r.at("model").get<std::string>(),
                      fmt2(r, scale), std::to_string(r.at("count").get<std::size_t>())});
      first = false;
    }
  }
  out << table(rows) << "\n";

  rows = {{"Aggregate", "Model", "MSE ± Std", "Windows"}};
  for (const char* key : {"damaged", "all"}) {
    bool first = true;
    for (const auto& r : report.at("aggregate").at(key)) {
      rows.push_back({first ? key : "", r.at("model").get<std::string>(), fmt2(r, scale),
                      std::to_string(r.at("count").get<std::size_t>())});
      first = false;
    }
  }
  out << table(rows) << "\n";

  std::vector<double> dmeans;
  collect_means(report.at("per_dim"), dmeans);
  const int dk = display_exponent(dmeans);
  const double dscale = std::pow(10.0, dk);
  out << "Per-dimension MSE" << unit_note(dk) << "\n\n";
  rows = {{"Model", "dx", "dy", "dz", "droll", "dpitch", "dyaw"}};
  for (const auto& [name, dims] : report.at("per_dim").items()) {
    std::vector<std::string> r = {name};
    for (const auto& d : dims) r.push_back(fmt2(d, dscale));
    rows.push_back(r);
  }
  out << table(rows);

  if (report.contains("retrieval")) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "\nRetrieval (z_x to z_tau class centroid): %.2f over %zu windows\n",
                  report.at("retrieval").at("accuracy").get<double>(),
                  report.at("retrieval").at("samples").get<std::size_t>());
    out << buf;
  }
  if (report.contains("models")) {
    out << "\nParameters:";
    for (const auto& m : report.at("models")) {
      out << " " << m.at("name").get<std::string>() << "=" << m.at("parameters").get<std::int64_t>();
    }
    out << "\n";
  }
  return out.str();
}

std::string format_confusion(const ordered_json& confusion) {
  std::ostringstream out;
  for (const auto& [name, m] : confusion.items()) {
    std::vector<double> means;
    collect_means(m.at("cells"), means);
    const int k = display_exponent(means);
    const double scale = std::pow(10.0, k);
    out << "Confusion (" << name << "): rows = supplied description, columns = true class"
        << unit_note(k) << "\n\n";
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header = {""};
    for (const auto& c : m.at("classes")) header.push_back(c.get<std::string>());
    rows.push_back(header);
    for (std::size_t i = 0; i < m.at("cells").size(); ++i) {
      std::vector<std::string> r = {m.at("classes")[i].get<std::string>()};
      for (const auto& cell : m.at("cells")[i]) r.push_back(fmt2(cell, scale));
      rows.push_back(r);
    }
    out << table(rows);
    char buf[160];
    std::snprintf(buf, sizeof buf, "diagonal column-minimal in %d of %zu columns\n\n",
                  m.at("diagonal_minimal_columns").get<int>(), m.at("classes").size());
    out << buf;
  }
  return out.str();
}

CompareResult compare_protocol(const Config& cfg, std::uint64_t seed,
                               const std::filesystem::path& out_dir, const ProgressFn& progress) {
  cfg.validate();
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  CompareResult res;
  res.out_dir = out_dir;
  res.seed = seed;
  res.config_hash = config_hash(to_json(cfg));
  std::filesystem::create_directories(out_dir);
  Stopwatch clock;

  say("generating dataset");
  const auto manifest = generate_dataset(cfg.sim, cfg.data, seed, out_dir / "data");
  res.dataset_manifest_hash = hash_file(out_dir / "data" / kManifestFile);
  const auto ds = load_dataset(out_dir / "data");
  res.timings.emplace_back("gen-data", clock.lap());

  std::shared_ptr<const EmbeddingProvider> provider = make_provider(cfg.embed);
  say("training alignment");
  auto align = train_alignment(ds, *provider, cfg.align, derive_seed(seed, 1), progress);
  save_alignment(align, out_dir / "align");
  const auto align_hash = alignment_hash(out_dir / "align");
  const auto test = pointers(ds.test);
  res.retrieval = evaluate_retrieval(align.model, *provider, test);
  res.timings.emplace_back("train-align", clock.lap());
  const DamageEncoder encoder(align.model->text_head, provider);

  std::vector<std::pair<std::string, KinoArtifact>> models;
  for (std::size_t i = 0; i < cfg.eval.models.size(); ++i) {
    const auto& name = cfg.eval.models[i];
    KinoConfig kc = cfg.kino;
    kc.variant = parse_variant(name);
    say("training " + name);
    auto art = train_kino(ds, &encoder, kc, derive_seed(seed, 10 + i), align_hash, progress);
    save_kino(art, out_dir / "models" / name);
    res.parameter_counts.emplace_back(name, nn::parameter_count(*art.model));
    models.emplace_back(name, std::move(art));
    res.timings.emplace_back("train-" + name, clock.lap());
  }

  for (auto& [name, art] : models) {
    auto rep = evaluate_model(art.model, test, &encoder, cfg.eval.window_stride, cfg.eval.batch);
    rep.protocol = "compare";
    res.reports.emplace_back(name, std::move(rep));
  }
  res.timings.emplace_back("evaluate", clock.lap());

  KinoArtifact* clean = nullptr;
  KinoArtifact* zlik = nullptr;
  for (auto& [name, art] : models) {
    if (art.config.variant == KinoVariant::kClean) clean = &art;
    if (art.config.variant == KinoVariant::kZlik) zlik = &art;
  }

  if (clean && !cfg.eval.finetune_classes.empty() && !cfg.eval.finetune_seconds.empty()) {
    const auto healthy = of_class(test, DamageClass::kNoDamage);
    const auto& kc = clean->config;
    const double max_seconds =
        *std::max_element(cfg.eval.finetune_seconds.begin(), cfg.eval.finetune_seconds.end());
    const auto max_windows = static_cast<std::size_t>(std::llround(max_seconds / cfg.sim.dt));
    for (std::size_t ci = 0; ci < cfg.eval.finetune_classes.size(); ++ci) {
      const auto cls = cfg.eval.finetune_classes[ci];
      say("fine-tuning clean on " + std::string(class_name(cls)));
      const auto fresh = finetune_episodes(cfg.sim, cls, seed, max_windows, kc.H, kc.P);
      WindowSet pool;
      pool.episodes = prepare_episodes(pointers(fresh));
      const auto cls_test = of_class(test, cls);
      for (double seconds : cfg.eval.finetune_seconds) {
        WindowSet data{pool.episodes, {}, {}};
        data.windows = contiguous_windows(
            data.episodes, kc.H, kc.P, static_cast<std::size_t>(std::llround(seconds / cfg.sim.dt)));
        FineTuneOptions opt{cfg.eval.finetune_steps, cfg.eval.finetune_lr, cfg.eval.finetune_batch,
                            derive_seed(seed, 0xF7000 + ci)};
        auto tuned = fine_tune(*clean, data, opt);
        FineTuneRow row{cls, seconds, data.windows.size(), {}, {}};
        row.on_class =
            evaluate_model(tuned.model, cls_test, nullptr, cfg.eval.window_stride, cfg.eval.batch).overall;
        row.on_healthy =
            evaluate_model(tuned.model, healthy, nullptr, cfg.eval.window_stride, cfg.eval.batch).overall;
        res.finetune.push_back(row);
      }
    }
    res.timings.emplace_back("finetune", clock.lap());
  }

  ordered_json conf = ordered_json::object();
  if (zlik) {
    say("confusion");
    res.confusion = confusion_experiment(zlik->model, test, cfg.eval.confusion_classes, &encoder,
                                         derive_seed(seed, 0xC0), cfg.eval.window_stride, cfg.eval.batch);
    conf["zlik"] = to_json(*res.confusion);
  }
  if (clean) {
    res.confusion_control = confusion_experiment(clean->model, test, cfg.eval.confusion_classes,
                                                 &encoder, derive_seed(seed, 0xC0),
                                                 cfg.eval.window_stride, cfg.eval.batch);
    conf["clean"] = to_json(*res.confusion_control);
  }
  res.timings.emplace_back("confusion", clock.lap());

  const auto report = compare_to_json(res);
  write_json_file(out_dir / "report.json", report);
  write_text(out_dir / "report.txt", format_report(report));
  write_json_file(out_dir / "confusion.json", conf);
  write_text(out_dir / "confusion.txt", format_confusion(conf));
  (void)manifest;
  return res;
}

}  // namespace zlik
