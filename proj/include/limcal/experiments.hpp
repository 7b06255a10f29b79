#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "limcal/backbone.hpp"
#include "limcal/calibration.hpp"
#include "limcal/checkpoint.hpp"
#include "limcal/config_file.hpp"
#include "limcal/lim.hpp"
#include "limcal/rng.hpp"
#include "limcal/synth_data.hpp"
#include "limcal/training.hpp"

namespace limcal {

enum class AblationKind { zero, whitespace, random_scaled, random_gauss, blank_image };

inline constexpr std::array<AblationKind, 5> kAllAblations = {
    AblationKind::zero, AblationKind::whitespace, AblationKind::random_scaled,
    AblationKind::random_gauss, AblationKind::blank_image};

std::string_view to_string(AblationKind kind);
AblationKind parse_ablation(std::string_view text);

struct EvalMode {
  enum class Kind { paired, text_only, lim, lim_mse, ablate };
  Kind kind = Kind::paired;
  AblationKind ablation = AblationKind::zero;  // only for Kind::ablate

  static EvalMode paired() { return {Kind::paired}; }
  static EvalMode text_only() { return {Kind::text_only}; }
  static EvalMode lim() { return {Kind::lim}; }
  static EvalMode lim_mse() { return {Kind::lim_mse}; }
  static EvalMode ablate(AblationKind k) { return {Kind::ablate, k}; }

  // paired, text_only, lim, lim_mse or ablate:<kind>
  std::string name() const;
  bool operator==(const EvalMode&) const = default;
};

EvalMode parse_mode(std::string_view text);

// Substitute visual rows for the ablation ladder. Only the random kinds draw
// from `rng`; the text is accepted so every kind shares one signature.
VisualEmbeddings make_substitute(AblationKind kind, const BackboneParams& backbone,
                                 std::span<const std::uint32_t> text, Rng& rng);

struct ModelBundle {
  BackboneParams backbone;
  std::optional<LimParams> lim;
  std::optional<LimParams> lim_mse;

  static ModelBundle from_checkpoint(Checkpoint checkpoint);
  Checkpoint to_checkpoint() const;
  // Throws ConfigError if `mode` needs a module the bundle lacks or shapes
  // disagree.
  void require(const EvalMode& mode) const;
};

// One forward pass per example. Random substitutes are drawn sequentially
// from Rng(seed) in example order.
std::vector<PredictionRecord> predict(const EvalMode& mode, const ModelBundle& bundle,
                                      const Dataset& data, std::uint64_t seed);

struct ExperimentReport {
  std::string mode;  // EvalMode::name() or a sweep label
  Family family = Family::in_domain;
  std::uint64_t seed = 0;
  std::size_t bins = 10;
  std::vector<CalibrationReport> reports;  // one per estimator, kAllEstimators order
  std::size_t examples = 0;
  std::size_t dropped = 0;          // drop sweeps only
  double wall_clock_seconds = 0.0;  // kept out of report files

  const CalibrationReport& for_estimator(Estimator e) const;
};

ExperimentReport make_report(std::string mode, Family family, std::uint64_t seed,
                             std::span<const PredictionRecord> records, std::size_t bins);

ExperimentReport evaluate(const EvalMode& mode, const ModelBundle& bundle, const Dataset& data,
                          std::size_t bins = 10, std::uint64_t seed = 0);

struct DropSweepConfig {
  std::vector<double> probabilities = {0.25, 0.50, 0.75, 1.00};
  EvalMode fallback = EvalMode::text_only();
  std::uint64_t seed = 0;

  void validate() const;
};

// A single uniform per example is drawn from Rng(seed); the example loses its
// image when u < p. Dropped sets are therefore identical across fallback arms
// and nested across probabilities.
std::vector<ExperimentReport> drop_sweep(const DropSweepConfig& config, const ModelBundle& bundle,
                                         const Dataset& data, std::size_t bins = 10);

std::vector<bool> drop_mask(std::uint64_t seed, std::size_t n, double p);

struct BenchEntry {
  std::string mode;
  double median_us = 0.0;
  double p95_us = 0.0;
  std::size_t flops = 0;  // analytic matmul FLOPs per sample
};

struct BenchReport {
  std::vector<BenchEntry> entries;  // text_only, lim, paired
  std::size_t text_len = 0;
  std::size_t lim_forward_flops = 0;
  std::size_t backbone_paired_flops = 0;
  double flop_ratio = 0.0;  // lim_forward / backbone paired
};

// Times `trials` single-example forwards per mode after a warm-up pass.
BenchReport bench(const ModelBundle& bundle, const Dataset& data, std::size_t trials = 200);

// Per report and estimator: <label>_<estimator>.csv and .svg, plus
// summary.csv (`mode,estimator,acc,ece`) and report.json.
void emit_reports(std::span<const ExperimentReport> reports, const std::filesystem::path& out_dir,
                  const KeyValues& config_echo = {});

std::string reliability_svg(const CalibrationReport& report, std::string_view title);
void write_bench_csv(const std::filesystem::path& path, const BenchReport& report);

// Every knob of the pipeline, settable from a flat `key = value` file.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  TaskConfig task;
  SplitSizes sizes;
  BackboneConfig backbone;
  LimConfig lim;
  TrainConfig backbone_train;
  double backbone_min_accuracy = 0.95;
  TrainConfig lim_train;
  std::size_t bins = 10;
  std::vector<double> drop_probabilities = {0.25, 0.50, 0.75, 1.00};
  std::size_t bench_trials = 200;

  ExperimentConfig();
  static ExperimentConfig from(const KeyValues& kv);
  KeyValues to_key_values() const;
  void validate() const;
};

// Dataset seeds derived from the experiment seed, one per family.
std::uint64_t family_seed(std::uint64_t seed, Family family);

struct PipelineData {
  DatasetSplit mixed, in_domain, held_out;
};

PipelineData generate_data(const ExperimentConfig& config);

struct PipelineModels {
  ModelBundle bundle;
  PretrainResult pretrain_log;  // params moved into bundle
  LimTrainResult lim_log, lim_mse_log;
};

// Pretrains the backbone on the mixed family, then trains both LIM variants
// on the in-domain family.
PipelineModels train_models(const ExperimentConfig& config, const PipelineData& data,
                            bool with_mse = true);

}  // namespace limcal
