// limcal: command line driver for data generation, training, evaluation and
// report emission. Exit codes: 0 success, 1 validation error, 2 I/O error.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "limcal/errors.hpp"
#include "limcal/experiments.hpp"

namespace fs = std::filesystem;
using namespace limcal;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string ckpt = "limcal.ckpt";
  std::string data_dir;  // empty: regenerate from the config
};

ExperimentConfig load_config(const Globals& g) {
  KeyValues kv;
  if (!g.config_path.empty()) kv = KeyValues::load(g.config_path);
  if (g.seed) kv.set("seed", std::to_string(*g.seed));
  return ExperimentConfig::from(kv);
}

std::string split_file(Family family, std::string_view split) {
  return std::string(to_string(family)) + "_" + std::string(split) + ".txt";
}

PipelineData load_data(const Globals& g, const ExperimentConfig& config) {
  if (g.data_dir.empty()) return generate_data(config);
  PipelineData d;
  const auto read = [&](Family f, DatasetSplit& out) {
    out.train = load_dataset(fs::path(g.data_dir) / split_file(f, "train"), f);
    out.validation = load_dataset(fs::path(g.data_dir) / split_file(f, "val"), f);
    out.test = load_dataset(fs::path(g.data_dir) / split_file(f, "test"), f);
  };
  read(Family::mixed, d.mixed);
  read(Family::in_domain, d.in_domain);
  read(Family::held_out, d.held_out);
  return d;
}

const DatasetSplit& family_split(const PipelineData& d, Family f) {
  switch (f) {
    case Family::mixed: return d.mixed;
    case Family::in_domain: return d.in_domain;
    case Family::held_out: return d.held_out;
  }
  return d.in_domain;
}

Family parse_family_arg(const std::string& s) {
  if (s == "in_domain") return Family::in_domain;
  if (s == "held_out") return Family::held_out;
  if (s == "mixed") return Family::mixed;
  throw ConfigError("unknown family '" + s + "' (in_domain, held_out, mixed)");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (item.empty()) throw ConfigError("empty item in list '" + s + "'");
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

void print_report(const ExperimentReport& r, std::optional<Estimator> only = std::nullopt) {
  for (const CalibrationReport& c : r.reports) {
    if (only && c.estimator != *only) continue;
    std::printf("%-28s %-9s %-8s acc=%.4f ece=%.4f n=%zu", r.mode.c_str(),
                std::string(to_string(r.family)).c_str(), std::string(to_string(c.estimator)).c_str(),
                c.accuracy, c.ece, c.total);
    if (r.dropped) std::printf(" dropped=%zu", r.dropped);
    std::printf("\n");
  }
}

ModelBundle load_bundle(const Globals& g) { return ModelBundle::from_checkpoint(load_checkpoint(g.ckpt)); }

int run(int argc, char** argv) {
  CLI::App app{"Latent imagination calibration experiments on a synthetic VQA task"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Flat key = value config file");
  app.add_option("--seed", g.seed, "Experiment seed (overrides the config)");
  app.add_option("--ckpt", g.ckpt, "Checkpoint path")->capture_default_str();
  app.add_option("--data", g.data_dir, "Directory written by gen-data (default: regenerate)");

  std::string out_dir;
  auto* gen = app.add_subcommand("gen-data", "Write all dataset families and splits");
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* train_bb = app.add_subcommand("train-backbone", "Pretrain and freeze the backbone on paired inputs");

  std::string objective = "nll";
  auto* train_lim_cmd = app.add_subcommand("train-lim", "Train a LIM through the frozen backbone");
  train_lim_cmd->add_option("--objective", objective, "nll or mse")->capture_default_str();

  std::string mode = "lim", estimator = "msp", family = "held_out";
  std::optional<std::size_t> bins;
  auto* eval = app.add_subcommand("eval", "Evaluate one mode on a test split");
  eval->add_option("--mode", mode, "paired, text_only, lim, lim_mse, ablate:<kind>")->capture_default_str();
  eval->add_option("--estimator", estimator, "msp, entropy, margin or all")->capture_default_str();
  eval->add_option("--bins", bins, "ECE bin count");
  eval->add_option("--family", family, "in_domain, held_out or mixed")->capture_default_str();
  eval->add_option("--out", out_dir, "Also emit report files here");

  std::string fallback = "text_only", p_list;
  auto* drop = app.add_subcommand("drop-sweep", "Drop images with probability p and fall back");
  drop->add_option("--fallback", fallback, "text_only or lim")->capture_default_str();
  drop->add_option("--p", p_list, "Comma-separated drop probabilities");
  drop->add_option("--family", family, "Dataset family")->capture_default_str();
  drop->add_option("--bins", bins, "ECE bin count");
  drop->add_option("--out", out_dir, "Also emit report files here");

  std::string kinds = "zero,whitespace,random_scaled,random_gauss,blank_image";
  auto* ablate = app.add_subcommand("ablate", "Substitute-embedding ladder against LIM");
  ablate->add_option("--kinds", kinds, "Comma-separated substitute kinds")->capture_default_str();
  ablate->add_option("--family", family, "Dataset family")->capture_default_str();
  ablate->add_option("--bins", bins, "ECE bin count");
  ablate->add_option("--out", out_dir, "Also emit report files here");

  std::string ts_mode = "text_only";
  auto* ts = app.add_subcommand("temp-scale", "Fit a temperature on the validation split");
  ts->add_option("--mode", ts_mode, "Mode whose logits are scaled")->capture_default_str();
  ts->add_option("--family", family, "Dataset family")->capture_default_str();
  ts->add_option("--bins", bins, "ECE bin count");

  std::optional<std::size_t> trials;
  auto* bench_cmd = app.add_subcommand("bench", "Per-sample latency and analytic FLOPs");
  bench_cmd->add_option("--trials", trials, "Timed forwards per mode (>= 100)");
  bench_cmd->add_option("--out", out_dir, "CSV output path");

  auto* report = app.add_subcommand("report", "Every mode, sweep and ablation for both families");
  report->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const ExperimentConfig config = load_config(g);
  const std::size_t k = bins.value_or(config.bins);
  if (k == 0) throw ConfigError("--bins must be positive");

  if (*gen) {
    const PipelineData d = generate_data(config);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
    for (Family f : {Family::mixed, Family::in_domain, Family::held_out}) {
      const DatasetSplit& s = family_split(d, f);
      save_dataset(fs::path(out_dir) / split_file(f, "train"), s.train);
      save_dataset(fs::path(out_dir) / split_file(f, "val"), s.validation);
      save_dataset(fs::path(out_dir) / split_file(f, "test"), s.test);
    }
    std::printf("wrote 9 splits to %s\n", out_dir.c_str());
    return 0;
  }

  if (*train_bb) {
    const PipelineData d = load_data(g, config);
    TrainConfig t = config.backbone_train;
    t.seed = config.seed;
    PretrainResult r = pretrain_backbone(d.mixed.train, config.backbone, t, config.backbone_min_accuracy);
    for (std::size_t e = 0; e < r.epoch_nll.size(); ++e) std::printf("epoch %zu nll %.6f\n", e + 1, r.epoch_nll[e]);
    std::printf("train accuracy %.4f digest %016llx\n", r.train_accuracy,
                static_cast<unsigned long long>(r.params.frozen_digest()));
    Checkpoint c;
    c.backbone = std::move(r.params);
    save_checkpoint(g.ckpt, c);
    return 0;
  }

  if (*train_lim_cmd) {
    const Objective obj = parse_objective(objective);
    ModelBundle b = load_bundle(g);
    const PipelineData d = load_data(g, config);
    TrainConfig t = config.lim_train;
    t.seed = config.seed;
    t.objective = obj;
    const std::uint64_t before = b.backbone.digest();
    LimTrainResult r = train_lim(init_lim(config.lim, config.seed + 1), b.backbone, d.in_domain.train, t);
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) std::printf("epoch %zu loss %.6f\n", e + 1, r.epoch_loss[e]);
    std::printf("loss %.6f -> %.6f, backbone digest %s\n", r.initial_loss, r.final_loss,
                before == b.backbone.digest() ? "unchanged" : "CHANGED");
    (obj == Objective::nll ? b.lim : b.lim_mse) = std::move(r.params);
    save_checkpoint(g.ckpt, b.to_checkpoint());
    return 0;
  }

  const ModelBundle b = load_bundle(g);
  const PipelineData d = load_data(g, config);
  const Family fam = parse_family_arg(family);
  const Dataset& test = family_split(d, fam).test;
  std::vector<ExperimentReport> reports;

  if (*eval) {
    const EvalMode m = parse_mode(mode);
    std::optional<Estimator> only;
    if (estimator != "all") only = parse_estimator(estimator);
    reports.push_back(evaluate(m, b, test, k, config.seed));
    print_report(reports.back(), only);
  } else if (*drop) {
    DropSweepConfig dc;
    if (!p_list.empty()) {
      dc.probabilities.clear();
      for (const auto& s : split_list(p_list)) {
        try {
          std::size_t used = 0;
          dc.probabilities.push_back(std::stod(s, &used));
          if (used != s.size()) throw std::invalid_argument(s);
        } catch (const std::logic_error&) {
          throw ConfigError("bad probability '" + s + "'");
        }
      }
    } else {
      dc.probabilities = config.drop_probabilities;
    }
    dc.fallback = parse_mode(fallback);
    dc.seed = config.seed;
    reports = drop_sweep(dc, b, test, k);
    for (const auto& r : reports) print_report(r, Estimator::msp);
  } else if (*ablate) {
    std::vector<EvalMode> modes;
    for (const auto& s : split_list(kinds)) modes.push_back(EvalMode::ablate(parse_ablation(s)));
    if (b.lim) modes.push_back(EvalMode::lim());
    for (const EvalMode& m : modes) {
      reports.push_back(evaluate(m, b, test, k, config.seed));
      print_report(reports.back(), Estimator::msp);
    }
  } else if (*ts) {
    const EvalMode m = parse_mode(ts_mode);
    const auto val = predict(m, b, family_split(d, fam).validation, config.seed);
    const auto raw = predict(m, b, test, config.seed);
    const TemperatureScaler scaler = fit_temperature(val);
    const auto scaled = scaler.apply(raw);
    std::printf("T=%.6f val_nll %.6f -> %.6f%s\n", scaler.temperature, scaler.nll_before,
                scaler.nll_after, scaler.warning ? " (warning: optimum at search boundary)" : "");
    reports.push_back(make_report(m.name(), fam, config.seed, raw, k));
    reports.push_back(make_report(m.name() + "+ts", fam, config.seed, scaled, k));
    for (const auto& r : reports) print_report(r, Estimator::msp);
    return 0;
  } else if (*bench_cmd) {
    const BenchReport r = bench(b, test, trials.value_or(config.bench_trials));
    for (const auto& e : r.entries)
      std::printf("%-10s median %9.1f us  p95 %9.1f us  flops %zu\n", e.mode.c_str(), e.median_us, e.p95_us, e.flops);
    std::printf("lim_forward / backbone_paired flops = %.4f\n", r.flop_ratio);
    if (!out_dir.empty()) write_bench_csv(out_dir, r);
    return 0;
  } else if (*report) {
    for (Family f : {Family::in_domain, Family::held_out}) {
      const Dataset& t = family_split(d, f).test;
      std::vector<EvalMode> modes = {EvalMode::paired(), EvalMode::text_only()};
      if (b.lim) modes.push_back(EvalMode::lim());
      if (b.lim_mse) modes.push_back(EvalMode::lim_mse());
      for (AblationKind a : kAllAblations) modes.push_back(EvalMode::ablate(a));
      for (const EvalMode& m : modes) reports.push_back(evaluate(m, b, t, k, config.seed));
      const auto val = predict(EvalMode::text_only(), b, family_split(d, f).validation, config.seed);
      const auto scaler = fit_temperature(val);
      reports.push_back(make_report("text_only+ts", f, config.seed,
                                    scaler.apply(predict(EvalMode::text_only(), b, t, config.seed)), k));
      std::vector<EvalMode> fallbacks = {EvalMode::text_only()};
      if (b.lim) fallbacks.push_back(EvalMode::lim());
      for (const EvalMode& fb : fallbacks) {
        for (auto& r : drop_sweep({config.drop_probabilities, fb, config.seed}, b, t, k)) reports.push_back(std::move(r));
      }
    }
    for (const auto& r : reports) print_report(r, Estimator::msp);
    emit_reports(reports, out_dir, config.to_key_values());
    if (b.lim) write_bench_csv(fs::path(out_dir) / "bench.csv", bench(b, d.in_domain.test, config.bench_trials));
    std::printf("wrote %s\n", out_dir.c_str());
    return 0;
  }

  if (!out_dir.empty()) emit_reports(reports, out_dir, config.to_key_values());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
