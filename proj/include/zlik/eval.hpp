#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "zlik/alignment.hpp"
#include "zlik/config.hpp"
#include "zlik/kino.hpp"

namespace zlik {

// Mean and sample std of a set of per-window errors. count == 0 marks an
// absent cell, which is never reported as zero.
struct CellStats {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;

  bool present() const { return count > 0; }
};

// Sequential two-pass statistics (deterministic summation order).
CellStats cell_stats(const std::vector<double>& values);

struct WindowError {
  int cls = 0;
  double mse = 0.0;                        // over the P x 6 grid
  std::array<double, kPoseDim> per_dim{};  // over P, per channel
};

struct EvalReport {
  std::string protocol = "evaluate";
  std::string model;
  std::string config_hash;
  std::array<CellStats, kNumClasses> per_class{};
  std::array<std::array<CellStats, kPoseDim>, kNumClasses> per_class_dim{};
  std::array<CellStats, kPoseDim> per_dim{};
  CellStats overall;
  CellStats damaged;  // every class except NoDamage
  std::vector<WindowError> windows;
};

using Predictor = std::function<torch::Tensor(const KinoBatch&)>;

// Scores every window of `set`; the class of a window is its episode's class.
EvalReport evaluate(const Predictor& predict, const WindowSet& set, int H, int P, int batch);

// Builds the window set for `episodes` (anchors every `stride` steps) with
// z_x from `encoder` when the model uses damage, then evaluates.
EvalReport evaluate_model(KinoModel& model, const std::vector<const EpisodeRecord*>& episodes,
                          const DamageEncoder* encoder, int stride, int batch);

struct ConfusionMatrix {
  std::vector<DamageClass> classes;
  // cells[i][j]: description of classes[i] supplied, true class classes[j].
  std::vector<std::vector<CellStats>> cells;

  // Columns whose diagonal is no larger than any other cell in the column.
  int diagonal_minimal_columns() const;
  // Largest |cell(i, j).mean - cell(k, j).mean| over rows i, k.
  double max_row_deviation() const;
};

// Mismatched descriptions are drawn per episode, seed-deterministically, from
// the distinct descriptions of the supplied class within `episodes`.
ConfusionMatrix confusion_experiment(KinoModel& model,
                                     const std::vector<const EpisodeRecord*>& episodes,
                                     const std::vector<DamageClass>& classes,
                                     const DamageEncoder* encoder, std::uint64_t seed, int stride,
                                     int batch);

struct FineTuneRow {
  DamageClass cls;
  double seconds = 0.0;
  std::size_t windows = 0;
  CellStats on_class;
  CellStats on_healthy;  // recorded, not asserted
};

struct CompareResult {
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  std::string config_hash;
  RetrievalReport retrieval;
  std::vector<std::pair<std::string, EvalReport>> reports;  // model name -> report
  std::vector<std::pair<std::string, std::int64_t>> parameter_counts;
  std::vector<FineTuneRow> finetune;
  std::optional<ConfusionMatrix> confusion;          // zlik model
  std::optional<ConfusionMatrix> confusion_control;  // clean model
  std::vector<std::pair<std::string, double>> timings;  // stage -> seconds
  std::string dataset_manifest_hash;
};

// "20s", "5m", ...
std::string budget_label(double seconds);

// Fresh post-damage episodes of `cls` from a seed stream disjoint from the
// dataset's, enough for `windows` contiguous (H, P) windows.
std::vector<EpisodeRecord> finetune_episodes(const SimConfig& sim, DamageClass cls,
                                             std::uint64_t seed, std::size_t windows, int H,
                                             int P);

// Full pipeline: dataset, alignment, kinodynamics variants, fine-tuned clean
// baselines, evaluation and confusion. Writes report.json / report.txt /
// confusion.json / confusion.txt (plus all intermediate artifacts) into
// out_dir.
CompareResult compare_protocol(const Config& cfg, std::uint64_t seed,
                               const std::filesystem::path& out_dir,
                               const ProgressFn& progress = {});

ordered_json to_json(const CellStats& c);
ordered_json to_json(const EvalReport& r, bool include_windows = false);
ordered_json to_json(const ConfusionMatrix& m);
ordered_json compare_to_json(const CompareResult& r);

// Aligned text tables, two decimals after scaling to a shared power of ten.
std::string format_report(const ordered_json& report);
std::string format_confusion(const ordered_json& confusion);

std::unique_ptr<EmbeddingProvider> make_provider(const EmbedConfig& cfg);

}  // namespace zlik
