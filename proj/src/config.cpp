#include "zlik/config.hpp"

#include <fstream>
#include <set>

#include "zlik/errors.hpp"
#include "zlik/hashing.hpp"

namespace zlik {

namespace {

// Reads known keys from one JSON object and rejects everything else.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
  }

  template <class T>
  void read(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  void read_classes(const char* key, std::vector<DamageClass>& out) {
    std::vector<std::string> names;
    auto it = j_.find(key);
    if (it == j_.end()) return;
    read(key, names);
    out.clear();
    for (const auto& n : names) {
      auto c = parse_class(n);
      if (!c) throw ConfigError(path_ + "." + key + ": unknown damage class '" + n + "'");
      out.push_back(*c);
    }
  }

  const json* sub(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  std::string child(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown config key " + path_ + "." + item.key());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<std::string> class_names(const std::vector<DamageClass>& cs) {
  std::vector<std::string> out;
  for (auto c : cs) out.emplace_back(class_name(c));
  return out;
}

void read_optim(ObjectReader& r, const char* key, OptimConfig& o) {
  const json* j = r.sub(key);
  if (!j) return;
  ObjectReader s(*j, r.child(key));
  s.read("lr", o.lr);
  s.read("batch", o.batch);
  s.read("epochs", o.epochs);
  s.read("steps_per_epoch", o.steps_per_epoch);
  s.read("grad_clip", o.grad_clip);
  s.read("weight_decay", o.weight_decay);
  s.read("cosine_decay", o.cosine_decay);
  s.finish();
  if (!(o.lr > 0.0) || o.batch < 1 || o.epochs < 0 || o.steps_per_epoch < 0 || o.grad_clip < 0.0 ||
      o.weight_decay < 0.0) {
    throw ConfigError(r.child(key) + ": invalid optimizer settings");
  }
}

ordered_json optim_json(const OptimConfig& o) {
  return {{"lr", o.lr},
          {"batch", o.batch},
          {"epochs", o.epochs},
          {"steps_per_epoch", o.steps_per_epoch},
          {"grad_clip", o.grad_clip},
          {"weight_decay", o.weight_decay},
          {"cosine_decay", o.cosine_decay}};
}

void read_sim(ObjectReader& r, SimConfig& c, DatasetPlan& plan) {
  r.read("dt", c.dt);
  r.read("episode_len", c.episode_len);
  r.read("k_v", c.k_v);
  r.read("k_omega", c.k_omega);
  r.read("k_z", c.k_z);
  r.read("k_rp", c.k_rp);
  r.read("axle_factor", c.axle_factor);
  r.read("v_cap_mtpsb", c.v_cap_mtpsb);
  r.read("omega_wheel", c.omega_wheel);
  r.read("noise_std", c.noise_std);
  r.read("v_max", c.v_max);
  r.read("omega_max", c.omega_max);
  r.read("ou_theta", c.ou_theta);
  r.read("ou_sigma_v", c.ou_sigma_v);
  r.read("ou_sigma_omega", c.ou_sigma_omega);
  r.read("random_severity", c.random_severity);
  if (const json* d = r.sub("dataset")) {
    ObjectReader s(*d, r.child("dataset"));
    auto read_counts = [&](const char* key, std::array<int, kNumClasses>& out) {
      const json* v = s.sub(key);
      if (!v) return;
      if (v->is_number_integer()) {
        out.fill(v->get<int>());
      } else if (v->is_object()) {
        ObjectReader counts(*v, s.child(key));
        for (auto cls : kAllClasses) {
          counts.read(std::string(class_name(cls)).c_str(), out[class_index(cls)]);
        }
        counts.finish();
      } else {
        throw ConfigError(s.child(key) + " must be an integer or a per-class object");
      }
      for (int n : out) {
        if (n < 0) throw ConfigError(s.child(key) + ": counts must be >= 0");
      }
    };
    read_counts("episodes_per_class", plan.episodes_per_class);
    read_counts("test_episodes_per_class", plan.test_episodes_per_class);
    s.read("val_fraction", plan.val_fraction);
    s.finish();
    if (!(plan.val_fraction >= 0.0 && plan.val_fraction < 1.0)) {
      throw ConfigError("sim.dataset.val_fraction must lie in [0, 1)");
    }
  }
}

}  // namespace

std::string_view variant_name(KinoVariant v) {
  switch (v) {
    case KinoVariant::kZlik:
      return "zlik";
    case KinoVariant::kClean:
      return "clean";
    case KinoVariant::kMonolithic:
      return "monolithic";
  }
  return "zlik";
}

KinoVariant parse_variant(std::string_view name) {
  if (name == "zlik") return KinoVariant::kZlik;
  if (name == "clean") return KinoVariant::kClean;
  if (name == "monolithic") return KinoVariant::kMonolithic;
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

void AlignConfig::validate() const {
  if (H_align < 1) throw ConfigError("align.H_align must be >= 1");
  if (projection.out < 1) throw ConfigError("align.projection.out must be > 0");
  for (int h : projection.hidden) {
    if (h < 1) throw ConfigError("align.projection.hidden sizes must be > 0");
  }
  if (encoder.layers < 0 || encoder.heads < 1 || encoder.hidden < 1 || encoder.ff < 1 ||
      encoder.hidden % encoder.heads != 0) {
    throw ConfigError("align.encoder: hidden must be a positive multiple of heads");
  }
  if (!(encoder.dropout >= 0.0 && encoder.dropout < 1.0)) {
    throw ConfigError("align.encoder.dropout must lie in [0, 1)");
  }
  const auto& v = vicreg;
  if (v.lambda < 0 || v.mu < 0 || v.nu < 0 || v.gamma < 0 || !(v.eps > 0)) {
    throw ConfigError("align.vicreg weights must be >= 0 and eps > 0");
  }
}

void KinoConfig::validate() const {
  if (H < 1 || P < 1 || L_seg < 1 || H % L_seg != 0) {
    throw ConfigError("kino.H must be a positive multiple of kino.L_seg");
  }
  if (d_model < 1 || heads < 1 || d_model % heads != 0) {
    throw ConfigError("kino.d_model must be a positive multiple of kino.heads");
  }
  if (enc_layers < 0 || dec_layers < 0 || router_count < 1 || d_ff < 1 || W_size < 1 ||
      d_damage < 1 || monolithic_ff < 0) {
    throw ConfigError("kino: layer counts, router_count, d_ff, W_size, d_damage must be positive");
  }
  if (D != static_cast<int>(kHistoryDim)) {
    throw ConfigError("kino.D must equal the history channel count (8)");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("kino.dropout must lie in [0, 1)");
  if (window_stride < 1) throw ConfigError("kino.window_stride must be >= 1");
  if (val_windows < 0) throw ConfigError("kino.val_windows must be >= 0");
}

void Config::validate() const {
  sim.validate();
  align.validate();
  kino.validate();
  if (embed.provider != "hashed" && embed.provider != "table") {
    throw ConfigError("embed.provider must be 'hashed' or 'table'");
  }
  if (embed.dim < 1) throw ConfigError("embed.dim must be positive");
  if (embed.provider == "table" && embed.table_path.empty()) {
    throw ConfigError("embed.table_path is required for the table provider");
  }
  if (eval.window_stride < 1 || eval.batch < 1 || eval.finetune_steps < 0 ||
      eval.finetune_batch < 1 || !(eval.finetune_lr > 0.0)) {
    throw ConfigError("eval: strides, batches and learning rates must be positive");
  }
  if (eval.confusion_classes.size() < 2) {
    throw ConfigError("eval.confusion_classes needs at least two classes");
  }
  for (const auto& m : eval.models) parse_variant(m);
  for (double s : eval.finetune_seconds) {
    if (!(s > 0.0)) throw ConfigError("eval.finetune_seconds must be positive");
  }
}

SimConfig sim_config_from_json(const json& j) {
  SimConfig c;
  DatasetPlan unused;
  ObjectReader r(j, "sim");
  read_sim(r, c, unused);
  r.finish();
  c.validate();
  return c;
}

ordered_json to_json(const SimConfig& c) {
  return {{"dt", c.dt},
          {"episode_len", c.episode_len},
          {"k_v", c.k_v},
          {"k_omega", c.k_omega},
          {"k_z", c.k_z},
          {"k_rp", c.k_rp},
          {"axle_factor", c.axle_factor},
          {"v_cap_mtpsb", c.v_cap_mtpsb},
          {"omega_wheel", c.omega_wheel},
          {"noise_std", c.noise_std},
          {"v_max", c.v_max},
          {"omega_max", c.omega_max},
          {"ou_theta", c.ou_theta},
          {"ou_sigma_v", c.ou_sigma_v},
          {"ou_sigma_omega", c.ou_sigma_omega},
          {"random_severity", c.random_severity}};
}

ordered_json to_json(const DatasetPlan& p) {
  ordered_json train = ordered_json::object(), test = ordered_json::object();
  for (auto c : kAllClasses) {
    train[std::string(class_name(c))] = p.episodes_per_class[class_index(c)];
    test[std::string(class_name(c))] = p.test_episodes_per_class[class_index(c)];
  }
  return {{"episodes_per_class", train},
          {"test_episodes_per_class", test},
          {"val_fraction", p.val_fraction}};
}

AlignConfig align_config_from_json(const json& j) {
  AlignConfig c;
  ObjectReader r(j, "align");
  r.read("H_align", c.H_align);
  if (const json* e = r.sub("traj_encoder")) {
    ObjectReader s(*e, r.child("traj_encoder"));
    s.read("layers", c.encoder.layers);
    s.read("heads", c.encoder.heads);
    s.read("hidden", c.encoder.hidden);
    s.read("ff", c.encoder.ff);
    s.read("dropout", c.encoder.dropout);
    s.finish();
  }
  if (const json* p = r.sub("projection")) {
    ObjectReader s(*p, r.child("projection"));
    s.read("hidden", c.projection.hidden);
    s.read("out", c.projection.out);
    s.finish();
  }
  if (const json* v = r.sub("vicreg")) {
    ObjectReader s(*v, r.child("vicreg"));
    s.read("lambda", c.vicreg.lambda);
    s.read("mu", c.vicreg.mu);
    s.read("nu", c.vicreg.nu);
    s.read("gamma", c.vicreg.gamma);
    s.read("eps", c.vicreg.eps);
    s.finish();
  }
  read_optim(r, "optimizer", c.optim);
  r.finish();
  c.validate();
  return c;
}

ordered_json to_json(const AlignConfig& c) {
  return {{"H_align", c.H_align},
          {"traj_encoder",
           {{"layers", c.encoder.layers},
            {"heads", c.encoder.heads},
            {"hidden", c.encoder.hidden},
            {"ff", c.encoder.ff},
            {"dropout", c.encoder.dropout}}},
          {"projection", {{"hidden", c.projection.hidden}, {"out", c.projection.out}}},
          {"vicreg",
           {{"lambda", c.vicreg.lambda},
            {"mu", c.vicreg.mu},
            {"nu", c.vicreg.nu},
            {"gamma", c.vicreg.gamma},
            {"eps", c.vicreg.eps}}},
          {"optimizer", optim_json(c.optim)}};
}

KinoConfig kino_config_from_json(const json& j) {
  KinoConfig c;
  ObjectReader r(j, "kino");
  r.read("H", c.H);
  r.read("P", c.P);
  r.read("L_seg", c.L_seg);
  r.read("d_model", c.d_model);
  r.read("enc_layers", c.enc_layers);
  r.read("dec_layers", c.dec_layers);
  r.read("heads", c.heads);
  r.read("router_count", c.router_count);
  r.read("d_ff", c.d_ff);
  r.read("dropout", c.dropout);
  r.read("W_size", c.W_size);
  r.read("d_damage", c.d_damage);
  r.read("D", c.D);
  r.read("dimension_stage", c.dimension_stage);
  r.read("monolithic_ff", c.monolithic_ff);
  std::string variant(variant_name(c.variant));
  r.read("variant", variant);
  c.variant = parse_variant(variant);
  read_optim(r, "optimizer", c.optim);
  r.read("window_stride", c.window_stride);
  r.read("val_windows", c.val_windows);
  r.read_classes("clean_classes", c.clean_classes);
  r.finish();
  c.validate();
  return c;
}

ordered_json to_json(const KinoConfig& c) {
  return {{"H", c.H},
          {"P", c.P},
          {"L_seg", c.L_seg},
          {"d_model", c.d_model},
          {"enc_layers", c.enc_layers},
          {"dec_layers", c.dec_layers},
          {"heads", c.heads},
          {"router_count", c.router_count},
          {"d_ff", c.d_ff},
          {"dropout", c.dropout},
          {"W_size", c.W_size},
          {"d_damage", c.d_damage},
          {"D", c.D},
          {"dimension_stage", c.dimension_stage},
          {"monolithic_ff", c.monolithic_ff},
          {"variant", variant_name(c.variant)},
          {"optimizer", optim_json(c.optim)},
          {"window_stride", c.window_stride},
          {"val_windows", c.val_windows},
          {"clean_classes", class_names(c.clean_classes)}};
}

Config config_from_json(const json& j) {
  Config c;
  ObjectReader r(j, "config");
  if (const json* s = r.sub("sim")) {
    ObjectReader sr(*s, "sim");
    read_sim(sr, c.sim, c.data);
    sr.finish();
  }
  if (const json* e = r.sub("embed")) {
    ObjectReader s(*e, "embed");
    s.read("provider", c.embed.provider);
    s.read("dim", c.embed.dim);
    s.read("table_path", c.embed.table_path);
    s.finish();
  }
  if (const json* a = r.sub("align")) c.align = align_config_from_json(*a);
  if (const json* k = r.sub("kino")) c.kino = kino_config_from_json(*k);
  if (const json* e = r.sub("eval")) {
    ObjectReader s(*e, "eval");
    s.read("models", c.eval.models);
    s.read_classes("confusion_classes", c.eval.confusion_classes);
    s.read_classes("finetune_classes", c.eval.finetune_classes);
    s.read("finetune_seconds", c.eval.finetune_seconds);
    s.read("finetune_steps", c.eval.finetune_steps);
    s.read("finetune_lr", c.eval.finetune_lr);
    s.read("finetune_batch", c.eval.finetune_batch);
    s.read("window_stride", c.eval.window_stride);
    s.read("batch", c.eval.batch);
    s.finish();
  }
  r.finish();
  c.validate();
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

ordered_json to_json(const Config& c) {
  ordered_json sim = to_json(c.sim);
  sim["dataset"] = to_json(c.data);
  ordered_json eval = {{"models", c.eval.models},
                       {"confusion_classes", class_names(c.eval.confusion_classes)},
                       {"finetune_classes", class_names(c.eval.finetune_classes)},
                       {"finetune_seconds", c.eval.finetune_seconds},
                       {"finetune_steps", c.eval.finetune_steps},
                       {"finetune_lr", c.eval.finetune_lr},
                       {"finetune_batch", c.eval.finetune_batch},
                       {"window_stride", c.eval.window_stride},
                       {"batch", c.eval.batch}};
  return {{"sim", sim},
          {"embed",
           {{"provider", c.embed.provider},
            {"dim", c.embed.dim},
            {"table_path", c.embed.table_path}}},
          {"align", to_json(c.align)},
          {"kino", to_json(c.kino)},
          {"eval", eval}};
}

std::string config_hash(const ordered_json& j) { return hex64(fnv1a64(j.dump())); }

}  // namespace zlik
