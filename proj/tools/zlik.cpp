#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "zlik/alignment.hpp"
#include "zlik/checkpoint.hpp"
#include "zlik/config.hpp"
#include "zlik/dataset.hpp"
#include "zlik/errors.hpp"
#include "zlik/eval.hpp"
#include "zlik/hashing.hpp"
#include "zlik/kino.hpp"
#include "zlik/nn.hpp"

#ifndef ZLIK_GIT_REV
#define ZLIK_GIT_REV "unknown"
#endif

namespace fs = std::filesystem;
using namespace zlik;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
  bool quiet = false;
};

struct Args {
  std::string dataset, align, model, input, variant, cls;
  double seconds = 0.0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config (defaults built in when omitted)")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "master seed")->required();
  sub->add_option("--out", c.out, "output directory")->required();
  sub->add_flag("--force", c.force, "replace an existing output directory");
  sub->add_flag("-q,--quiet", c.quiet, "no progress on stderr");
}

// Everything a command writes goes to a staging directory next to --out,
// which is renamed into place only when the command succeeds.
class Run {
 public:
  Run(std::string command, const Common& common, Config cfg)
      : command_(std::move(command)), common_(common), cfg_(std::move(cfg)) {
    out_ = fs::absolute(common_.out).lexically_normal();
    if (out_.filename().empty()) out_ = out_.parent_path();
    if (fs::exists(out_) && !fs::is_empty(out_) && !common_.force) {
      throw ConfigError(out_.string() + " exists and is not empty (use --force)");
    }
    fs::create_directories(out_.parent_path());
    stage_ = out_.parent_path() / ("." + out_.filename().string() + ".partial");
    fs::remove_all(stage_);
    fs::create_directories(stage_);
  }

  ~Run() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(stage_, ec);
    }
  }

  const fs::path& dir() const { return stage_; }
  const Config& config() const { return cfg_; }
  std::uint64_t seed() const { return common_.seed; }

  void lap(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    timings_[stage] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }
  void note(const std::string& key, ordered_json value) { extra_[key] = std::move(value); }

  void progress(const std::string& s) const {
    if (!common_.quiet) std::cerr << "[" << command_ << "] " << s << std::endl;
  }
  ProgressFn progress_fn() const {
    return [this](const std::string& s) { progress(s); };
  }

  void commit() {
    ordered_json m;
    m["command"] = command_;
    m["seed"] = common_.seed;
    m["config_path"] = common_.config;
    m["config_hash"] = config_hash(to_json(cfg_));
    m["config"] = to_json(cfg_);
    m["git_rev"] = ZLIK_GIT_REV;
    m["torch_version"] = TORCH_VERSION;
    for (const auto& [k, v] : extra_.items()) m[k] = v;
    m["timings_s"] = timings_;
    write_json_file(stage_ / "run-manifest.json", m);
    if (fs::exists(out_)) fs::remove_all(out_);
    fs::rename(stage_, out_);
    committed_ = true;
  }

 private:
  std::string command_;
  Common common_;
  Config cfg_;
  fs::path out_, stage_;
  bool committed_ = false;
  ordered_json timings_ = ordered_json::object();
  ordered_json extra_ = ordered_json::object();
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

Config read_config(const Common& c) {
  if (c.config.empty()) {
    Config cfg;
    cfg.validate();
    return cfg;
  }
  return load_config(c.config);
}

std::vector<const EpisodeRecord*> pointers(const std::vector<EpisodeRecord>& v) {
  std::vector<const EpisodeRecord*> out;
  for (const auto& e : v) out.push_back(&e);
  return out;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << s;
}

Dataset need_dataset(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--dataset is required");
  return load_dataset(dir);
}

std::shared_ptr<const EmbeddingProvider> provider_for(const Config& cfg) {
  return make_provider(cfg.embed);
}

// Alignment checkpoint plus the frozen h_sigma built on the configured
// provider.
struct Aligned {
  AlignmentArtifact artifact;
  std::string hash;
  std::unique_ptr<DamageEncoder> encoder;
};

Aligned load_aligned(const std::string& dir, const Config& cfg) {
  if (dir.empty()) throw ConfigError("--align is required");
  Aligned a{load_alignment(dir), alignment_hash(dir), nullptr};
  auto provider = provider_for(cfg);
  if (provider->dim() != a.artifact.text_dim) {
    throw ConfigError("alignment was trained on " + std::to_string(a.artifact.text_dim) +
                      "-d text embeddings, provider gives " + std::to_string(provider->dim()));
  }
  if (provider->name() != a.artifact.provider) {
    throw ConfigError("alignment was trained with the '" + a.artifact.provider +
                      "' provider, config selects '" + provider->name() + "'");
  }
  a.encoder = std::make_unique<DamageEncoder>(a.artifact.model->text_head, provider);
  return a;
}

// Conditioned models refuse to run against a different alignment checkpoint.
void check_alignment(const KinoArtifact& m, const Aligned* a) {
  if (m.config.variant == KinoVariant::kClean) return;
  if (!a) throw ConfigError("the " + std::string(variant_name(m.config.variant)) +
                            " model needs --align");
  if (m.alignment_hash != a->hash) {
    throw ConfigError("model was trained against alignment " + m.alignment_hash + ", --align is " +
                      a->hash);
  }
}

DamageClass need_class(const std::string& s) {
  const auto c = parse_class(s);
  if (!c) throw ConfigError("unknown damage class '" + s + "'");
  return *c;
}

int cmd_gen_data(const Common& c, const Args&) {
  Run run("gen-data", c, read_config(c));
  run.progress("generating");
  const auto m = generate_dataset(run.config().sim, run.config().data, c.seed, run.dir());
  run.note("dataset_hash", hash_file(run.dir() / kManifestFile));
  run.note("episodes", m.train_ids.size() + m.validation_ids.size() + m.test_ids.size());
  run.lap("gen-data");
  run.commit();
  return 0;
}

int cmd_embed_export(const Common& c, const Args& a) {
  Run run("embed-export", c, read_config(c));
  const auto ds = need_dataset(a.dataset);
  std::vector<const EpisodeRecord*> all = pointers(ds.train);
  for (const auto& v : {&ds.validation, &ds.test}) {
    for (const auto& e : *v) all.push_back(&e);
  }
  const auto texts = distinct_descriptions(all);
  const auto provider = provider_for(run.config());
  write_embedding_table(run.dir() / "embeddings.jsonl", *provider, texts);
  run.note("descriptions", texts.size());
  run.note("provider", provider->name());
  run.lap("embed-export");
  run.commit();
  return 0;
}

int cmd_train_align(const Common& c, const Args& a) {
  Run run("train-align", c, read_config(c));
  const auto ds = need_dataset(a.dataset);
  const auto provider = provider_for(run.config());
  auto art = train_alignment(ds, *provider, run.config().align, derive_seed(c.seed, 1),
                             run.progress_fn());
  run.lap("train");
  save_alignment(art, run.dir());
  const auto r = evaluate_retrieval(art.model, *provider, pointers(ds.test));
  run.note("retrieval", {{"accuracy", r.accuracy}, {"samples", r.samples}, {"z_x_std", r.z_x_std}});
  run.progress("retrieval " + std::to_string(r.accuracy));
  run.lap("retrieval");
  run.commit();
  return 0;
}

int cmd_train_kino(const Common& c, const Args& a) {
  Run run("train-kino", c, read_config(c));
  const auto ds = need_dataset(a.dataset);
  KinoConfig kc = run.config().kino;
  if (!a.variant.empty()) kc.variant = parse_variant(a.variant);
  std::optional<Aligned> al;
  if (kc.variant != KinoVariant::kClean) al = load_aligned(a.align, run.config());
  auto art = train_kino(ds, al ? al->encoder.get() : nullptr, kc, derive_seed(c.seed, 10),
                        al ? al->hash : std::string{}, run.progress_fn());
  save_kino(art, run.dir());
  run.note("parameters", nn::parameter_count(*art.model));
  run.lap("train");
  run.commit();
  return 0;
}

int cmd_finetune(const Common& c, const Args& a) {
  Run run("finetune", c, read_config(c));
  const auto& cfg = run.config();
  if (a.model.empty()) throw ConfigError("--model is required");
  const auto base = load_kino(a.model);
  if (base.config.variant != KinoVariant::kClean) {
    throw ConfigError("fine-tuning is defined for the clean variant");
  }
  const auto cls = need_class(a.cls);
  if (!(a.seconds > 0.0)) throw ConfigError("--seconds must be positive");
  const auto count = static_cast<std::size_t>(std::llround(a.seconds / cfg.sim.dt));
  const auto fresh = finetune_episodes(cfg.sim, cls, c.seed, count, base.config.H, base.config.P);
  WindowSet data;
  data.episodes = prepare_episodes(pointers(fresh));
  data.windows = contiguous_windows(data.episodes, base.config.H, base.config.P, count);
  FineTuneOptions opt{cfg.eval.finetune_steps, cfg.eval.finetune_lr, cfg.eval.finetune_batch,
                      derive_seed(c.seed, 0xF7000)};
  auto tuned = fine_tune(base, data, opt);
  save_kino(tuned, run.dir());
  run.note("class", class_name(cls));
  run.note("seconds", a.seconds);
  run.note("windows", data.windows.size());
  run.lap("finetune");
  run.commit();
  return 0;
}

int cmd_eval(const Common& c, const Args& a) {
  Run run("eval", c, read_config(c));
  const auto& cfg = run.config();
  const auto ds = need_dataset(a.dataset);
  if (a.model.empty()) throw ConfigError("--model is required");
  auto m = load_kino(a.model);
  std::optional<Aligned> al;
  if (m.config.variant != KinoVariant::kClean) al = load_aligned(a.align, cfg);
  check_alignment(m, al ? &*al : nullptr);
  auto rep = evaluate_model(m.model, pointers(ds.test), al ? al->encoder.get() : nullptr,
                            cfg.eval.window_stride, cfg.eval.batch);
  write_json_file(run.dir() / "eval.json", to_json(rep, true));
  // Single-model view in the same layout as the compare report.
  CompareResult cr;
  cr.seed = c.seed;
  cr.config_hash = rep.config_hash;
  cr.reports.emplace_back(rep.model, rep);
  cr.parameter_counts.emplace_back(rep.model, nn::parameter_count(*m.model));
  auto j = compare_to_json(cr);
  j.erase("retrieval");
  write_text(run.dir() / "eval.txt", format_report(j));
  run.lap("eval");
  run.commit();
  return 0;
}

int cmd_confusion(const Common& c, const Args& a) {
  Run run("confusion", c, read_config(c));
  const auto& cfg = run.config();
  const auto ds = need_dataset(a.dataset);
  if (a.model.empty()) throw ConfigError("--model is required");
  auto m = load_kino(a.model);
  std::optional<Aligned> al;
  if (m.config.variant != KinoVariant::kClean || !a.align.empty()) al = load_aligned(a.align, cfg);
  check_alignment(m, al ? &*al : nullptr);
  const auto cm = confusion_experiment(m.model, pointers(ds.test), cfg.eval.confusion_classes,
                                       al ? al->encoder.get() : nullptr, derive_seed(c.seed, 0xC0),
                                       cfg.eval.window_stride, cfg.eval.batch);
  ordered_json j = ordered_json::object();
  j[std::string(variant_name(m.config.variant))] = to_json(cm);
  write_json_file(run.dir() / "confusion.json", j);
  write_text(run.dir() / "confusion.txt", format_confusion(j));
  run.lap("confusion");
  run.commit();
  return 0;
}

int cmd_compare(const Common& c, const Args&) {
  Run run("compare", c, read_config(c));
  const auto r = compare_protocol(run.config(), c.seed, run.dir(), run.progress_fn());
  for (const auto& [stage, s] : r.timings) {
    run.note("stage_" + stage + "_s", s);
  }
  run.note("dataset_hash", r.dataset_manifest_hash);
  run.lap("compare");
  run.commit();
  if (!c.quiet) std::cout << format_report(compare_to_json(r));
  return 0;
}

int cmd_report(const Common& c, const Args& a) {
  Run run("report", c, read_config(c));
  if (a.input.empty()) throw ConfigError("--input is required");
  const fs::path in(a.input);
  const auto report = read_json_file(fs::is_directory(in) ? in / "report.json" : in);
  for (const char* key : {"classes", "aggregate", "per_dim"}) {
    if (!report.contains(key)) throw FormatError(in.string() + ": not a report (no '" + key + "')");
  }
  const ordered_json ordered = ordered_json::parse(report.dump());
  write_text(run.dir() / "report.txt", format_report(ordered));
  const auto conf = fs::is_directory(in) ? in / "confusion.json" : in.parent_path() / "confusion.json";
  if (fs::exists(conf)) {
    write_text(run.dir() / "confusion.txt",
               format_confusion(ordered_json::parse(read_json_file(conf).dump())));
  }
  run.lap("report");
  run.commit();
  if (!c.quiet) std::cout << format_report(ordered);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"zlik: language-conditioned kinodynamics for damaged vehicles"};
  app.require_subcommand(1);
  Common common;
  Args args;

  auto* gen = app.add_subcommand("gen-data", "simulate and write a dataset");
  add_common(gen, common);

  auto* exp = app.add_subcommand("embed-export", "write the embedding table of a dataset's descriptions");
  add_common(exp, common);
  exp->add_option("--dataset", args.dataset)->required();

  auto* ta = app.add_subcommand("train-align", "train the trajectory/text alignment");
  add_common(ta, common);
  ta->add_option("--dataset", args.dataset)->required();

  auto* tk = app.add_subcommand("train-kino", "train a kinodynamics model");
  add_common(tk, common);
  tk->add_option("--dataset", args.dataset)->required();
  tk->add_option("--align", args.align, "alignment checkpoint (conditioned variants)");
  tk->add_option("--variant", args.variant, "zlik | clean | monolithic (default: config)");

  auto* ft = app.add_subcommand("finetune", "fine-tune a clean model on fresh damaged data");
  add_common(ft, common);
  ft->add_option("--model", args.model)->required();
  ft->add_option("--class", args.cls)->required();
  ft->add_option("--seconds", args.seconds)->required();

  auto* ev = app.add_subcommand("eval", "evaluate a model on a dataset's test split");
  add_common(ev, common);
  ev->add_option("--dataset", args.dataset)->required();
  ev->add_option("--model", args.model)->required();
  ev->add_option("--align", args.align);

  auto* cf = app.add_subcommand("confusion", "description/true-class confusion matrix");
  add_common(cf, common);
  cf->add_option("--dataset", args.dataset)->required();
  cf->add_option("--model", args.model)->required();
  cf->add_option("--align", args.align);

  auto* cmp = app.add_subcommand("compare", "full pipeline and comparison report");
  add_common(cmp, common);

  auto* rep = app.add_subcommand("report", "render report.txt from a report.json");
  add_common(rep, common);
  rep->add_option("--input", args.input, "report.json or a compare output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kConfig);
  }

  const std::vector<std::pair<CLI::App*, int (*)(const Common&, const Args&)>> commands = {
      {gen, cmd_gen_data},   {exp, cmd_embed_export}, {ta, cmd_train_align},
      {tk, cmd_train_kino},  {ft, cmd_finetune},      {ev, cmd_eval},
      {cf, cmd_confusion},   {cmp, cmd_compare},      {rep, cmd_report},
  };
  try {
    for (const auto& [sub, fn] : commands) {
      if (sub->parsed()) return fn(common, args);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return static_cast<int>(ExitCode::kFailure);
  }
  return static_cast<int>(ExitCode::kFailure);
}
