#include "limcal/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "limcal/errors.hpp"
#include "text_format.hpp"

namespace limcal {

std::string_view to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::zero: return "zero";
    case AblationKind::whitespace: return "whitespace";
    case AblationKind::random_scaled: return "random_scaled";
    case AblationKind::random_gauss: return "random_gauss";
    case AblationKind::blank_image: return "blank_image";
  }
  return "unknown";
}

AblationKind parse_ablation(std::string_view text) {
  for (AblationKind k : kAllAblations) {
    if (text == to_string(k)) return k;
  }
  throw ConfigError("unknown ablation kind '" + std::string(text) + "'");
}

std::string EvalMode::name() const {
  switch (kind) {
    case Kind::paired: return "paired";
    case Kind::text_only: return "text_only";
    case Kind::lim: return "lim";
    case Kind::lim_mse: return "lim_mse";
    case Kind::ablate: return "ablate:" + std::string(to_string(ablation));
  }
  return "unknown";
}

EvalMode parse_mode(std::string_view text) {
  if (text == "paired") return EvalMode::paired();
  if (text == "text_only") return EvalMode::text_only();
  if (text == "lim") return EvalMode::lim();
  if (text == "lim_mse") return EvalMode::lim_mse();
  constexpr std::string_view prefix = "ablate:";
  if (text.substr(0, prefix.size()) == prefix) {
    return EvalMode::ablate(parse_ablation(text.substr(prefix.size())));
  }
  throw ConfigError("unknown mode '" + std::string(text) +
                    "' (paired, text_only, lim, lim_mse, ablate:<kind>)");
}

VisualEmbeddings make_substitute(AblationKind kind, const BackboneParams& backbone,
                                 std::span<const std::uint32_t>, Rng& rng) {
  const std::size_t n = backbone.config.slots, d = backbone.config.dim;
  Matrix rows(n, d);
  switch (kind) {
    case AblationKind::zero:
      break;
    case AblationKind::whitespace:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) rows(i, j) = backbone.text_embed(vocab::kPad, j);
      break;
    case AblationKind::random_scaled: {
      // Column statistics of the text embedding table.
      const Matrix& table = backbone.text_embed;
      const double count = static_cast<double>(table.rows());
      std::vector<double> mean(d, 0.0), sd(d, 0.0);
      for (std::size_t r = 0; r < table.rows(); ++r)
        for (std::size_t j = 0; j < d; ++j) mean[j] += table(r, j) / count;
      for (std::size_t r = 0; r < table.rows(); ++r)
        for (std::size_t j = 0; j < d; ++j) sd[j] += std::pow(table(r, j) - mean[j], 2) / count;
      for (double& s : sd) s = std::sqrt(s);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) rows(i, j) = rng.normal(mean[j], sd[j]);
      break;
    }
    case AblationKind::random_gauss:
      for (double& v : rows.values()) v = rng.normal();
      break;
    case AblationKind::blank_image:
      return encode_image(backbone, TokenIds(n, vocab::kBlankImage));
  }
  return VisualEmbeddings{std::move(rows)};
}

ModelBundle ModelBundle::from_checkpoint(Checkpoint checkpoint) {
  if (!checkpoint.backbone) throw ConfigError("checkpoint has no backbone section");
  ModelBundle b{std::move(*checkpoint.backbone), std::move(checkpoint.lim),
                std::move(checkpoint.lim_mse)};
  return b;
}

Checkpoint ModelBundle::to_checkpoint() const {
  Checkpoint c;
  c.backbone = backbone;
  c.lim = lim;
  c.lim_mse = lim_mse;
  return c;
}

void ModelBundle::require(const EvalMode& mode) const {
  const LimParams* needed = nullptr;
  if (mode.kind == EvalMode::Kind::lim) {
    if (!lim) throw ConfigError("mode lim needs a trained LIM in the checkpoint");
    needed = &*lim;
  } else if (mode.kind == EvalMode::Kind::lim_mse) {
    if (!lim_mse) throw ConfigError("mode lim_mse needs an mse-trained LIM in the checkpoint");
    needed = &*lim_mse;
  }
  if (needed) needed->config.require_compatible(backbone.config);
}

namespace {

void check_dataset(const BackboneConfig& config, const Dataset& data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Example& ex = data.examples[i];
    try {
      validate_text(config, ex.text());
      validate_image(config, ex.image_tokens);
    } catch (const InputError& e) {
      throw InputError("example " + std::to_string(i) + ": " + e.what());
    }
    if (ex.answer >= config.choices) {
      throw InputError("example " + std::to_string(i) + ": answer outside the choices");
    }
  }
}

AnswerDistribution run_mode(const EvalMode& mode, const ModelBundle& b, const Example& ex,
                            Rng& rng) {
  const TokenIds text = ex.text();
  switch (mode.kind) {
    case EvalMode::Kind::paired:
      return forward(b.backbone, Paired{encode_image(b.backbone, ex.image_tokens)}, text);
    case EvalMode::Kind::text_only:
      return forward(b.backbone, TextOnly{}, text);
    case EvalMode::Kind::lim:
      return imagine(*b.lim, b.backbone, text);
    case EvalMode::Kind::lim_mse:
      return imagine(*b.lim_mse, b.backbone, text);
    case EvalMode::Kind::ablate: {
      static constexpr InjectionSource sources[] = {
          InjectionSource::zero, InjectionSource::trivial_token, InjectionSource::random_scaled,
          InjectionSource::random_gauss, InjectionSource::blank_image};
      return forward(b.backbone,
                     Injected{make_substitute(mode.ablation, b.backbone, text, rng),
                              sources[static_cast<std::size_t>(mode.ablation)]},
                     text);
    }
  }
  throw ConfigError("unknown mode");
}

}  // namespace

std::vector<PredictionRecord> predict(const EvalMode& mode, const ModelBundle& bundle,
                                      const Dataset& data, std::uint64_t seed) {
  bundle.require(mode);
  check_dataset(bundle.backbone.config, data);
  Rng rng(seed);
  std::vector<PredictionRecord> out;
  out.reserve(data.size());
  for (const Example& ex : data.examples) out.push_back(make_record(run_mode(mode, bundle, ex, rng), ex.answer));
  return out;
}

const CalibrationReport& ExperimentReport::for_estimator(Estimator e) const {
  for (const auto& r : reports) {
    if (r.estimator == e) return r;
  }
  throw ConfigError("report lacks estimator " + std::string(to_string(e)));
}

ExperimentReport make_report(std::string mode, Family family, std::uint64_t seed,
                             std::span<const PredictionRecord> records, std::size_t bins) {
  ExperimentReport r;
  r.mode = std::move(mode);
  r.family = family;
  r.seed = seed;
  r.bins = bins;
  r.examples = records.size();
  for (Estimator e : kAllEstimators) r.reports.push_back(compute_ece(records, e, bins));
  return r;
}

ExperimentReport evaluate(const EvalMode& mode, const ModelBundle& bundle, const Dataset& data,
                          std::size_t bins, std::uint64_t seed) {
  if (bins == 0) throw ConfigError("bin count must be positive");
  const auto start = std::chrono::steady_clock::now();
  const auto records = predict(mode, bundle, data, seed);
  ExperimentReport r = make_report(mode.name(), data.family, seed, records, bins);
  r.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void DropSweepConfig::validate() const {
  if (probabilities.empty()) throw ConfigError("drop sweep needs at least one probability");
  for (double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("drop probability " + std::to_string(p) + " outside [0, 1]");
  }
  if (fallback.kind != EvalMode::Kind::text_only && fallback.kind != EvalMode::Kind::lim) {
    throw ConfigError("drop sweep fallback must be text_only or lim");
  }
}

std::vector<bool> drop_mask(std::uint64_t seed, std::size_t n, double p) {
  Rng rng(seed);
  std::vector<bool> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = rng.bernoulli(p);
  return out;
}

std::vector<ExperimentReport> drop_sweep(const DropSweepConfig& config, const ModelBundle& bundle,
                                         const Dataset& data, std::size_t bins) {
  config.validate();
  bundle.require(config.fallback);
  const auto start = std::chrono::steady_clock::now();
  const auto kept = predict(EvalMode::paired(), bundle, data, config.seed);
  const auto fallback = predict(config.fallback, bundle, data, config.seed);
  std::vector<ExperimentReport> out;
  for (double p : config.probabilities) {
    const std::vector<bool> dropped = drop_mask(config.seed, data.size(), p);
    std::vector<PredictionRecord> records;
    records.reserve(data.size());
    std::size_t n_dropped = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      records.push_back(dropped[i] ? fallback[i] : kept[i]);
      n_dropped += dropped[i] ? 1 : 0;
    }
    ExperimentReport r = make_report("drop_" + text::fixed(p, 2) + "_" + config.fallback.name(),
                                     data.family, config.seed, records, bins);
    r.dropped = n_dropped;
    r.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.push_back(std::move(r));
  }
  return out;
}

BenchReport bench(const ModelBundle& bundle, const Dataset& data, std::size_t trials) {
  if (trials < 100) throw ConfigError("bench needs at least 100 trials");
  if (data.examples.empty()) throw InputError("bench needs at least one example");
  bundle.require(EvalMode::lim());
  check_dataset(bundle.backbone.config, data);

  BenchReport report;
  const BackboneConfig& bc = bundle.backbone.config;
  report.text_len = data.examples.front().text().size();
  report.lim_forward_flops = lim_forward_flops(bundle.lim->config, report.text_len);
  const std::size_t encode = matmul_flops(bc.slots, bc.dim, bc.dim);
  report.backbone_paired_flops = backbone_forward_flops(bc, bc.slots + report.text_len);
  report.flop_ratio = static_cast<double>(report.lim_forward_flops) /
                      static_cast<double>(report.backbone_paired_flops);

  const std::vector<std::pair<EvalMode, std::size_t>> modes = {
      {EvalMode::text_only(), backbone_forward_flops(bc, report.text_len)},
      {EvalMode::lim(), report.lim_forward_flops + report.backbone_paired_flops},
      {EvalMode::paired(), encode + report.backbone_paired_flops}};
  Rng rng(0);
  for (const auto& [mode, flops] : modes) {
    for (std::size_t i = 0; i < std::min<std::size_t>(10, data.size()); ++i) {
      (void)run_mode(mode, bundle, data.examples[i], rng);
    }
    std::vector<double> us;
    us.reserve(trials);
    for (std::size_t t = 0; t < trials; ++t) {
      const Example& ex = data.examples[t % data.size()];
      const auto start = std::chrono::steady_clock::now();
      (void)run_mode(mode, bundle, ex, rng);
      us.push_back(std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count());
    }
    std::sort(us.begin(), us.end());
    const auto at = [&](double q) {
      return us[std::min(us.size() - 1, static_cast<std::size_t>(q * static_cast<double>(us.size())))];
    };
    report.entries.push_back({mode.name(), at(0.5), at(0.95), flops});
  }
  return report;
}

namespace {

std::string file_label(std::string_view mode) {
  std::string out(mode);
  for (char& c : out) {
    if (c == ':' || c == '.' || c == '/') c = '_';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string reliability_svg(const CalibrationReport& report, std::string_view title) {
  constexpr double size = 360.0, left = 50.0, top = 40.0;
  const auto x = [&](double v) { return text::fixed(left + v * size, 2); };
  const auto y = [&](double v) { return text::fixed(top + (1.0 - v) * size, 2); };
  std::size_t max_count = 0;
  for (const auto& b : report.bins) max_count = std::max(max_count, b.count);

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"440\" height=\"450\" viewBox=\"0 0 440 450\">\n";
  s += "  <title>" + xml_escape(title) + "</title>\n";
  s += "  <rect x=\"0\" y=\"0\" width=\"440\" height=\"450\" fill=\"white\"/>\n";
  s += "  <text x=\"220\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
       xml_escape(title) + " (ECE " + text::fixed(report.ece, 4) + ", ACC " +
       text::fixed(report.accuracy, 4) + ")</text>\n";
  for (const auto& b : report.bins) {
    if (b.count == 0) continue;
    const double opacity = 0.15 + 0.85 * static_cast<double>(b.count) / static_cast<double>(max_count);
    s += "  <rect class=\"bar\" x=\"" + x(b.lo) + "\" y=\"" + y(b.mean_accuracy) + "\" width=\"" +
         text::fixed((b.hi - b.lo) * size, 2) + "\" height=\"" +
         text::fixed(b.mean_accuracy * size, 2) + "\" fill=\"#1f5fa8\" fill-opacity=\"" +
         text::fixed(opacity, 3) + "\" stroke=\"#0b2f57\" stroke-width=\"0.5\" data-count=\"" +
         std::to_string(b.count) + "\"/>\n";
  }
  s += "  <line class=\"diagonal\" x1=\"" + x(0) + "\" y1=\"" + y(0) + "\" x2=\"" + x(1) + "\" y2=\"" + y(1) +
       "\" stroke=\"#b22222\" stroke-dasharray=\"6,4\"/>\n";
  s += "  <rect x=\"" + x(0) + "\" y=\"" + y(1) + "\" width=\"" + text::fixed(size, 2) + "\" height=\"" +
       text::fixed(size, 2) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    s += "  <text x=\"" + x(v) + "\" y=\"" + text::fixed(top + size + 16, 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + text::fixed(v, 2) +
         "</text>\n";
    s += "  <text x=\"" + text::fixed(left - 6, 2) + "\" y=\"" + y(v) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + text::fixed(v, 2) +
         "</text>\n";
  }
  s += "  <text x=\"" + x(0.5) + "\" y=\"" + text::fixed(top + size + 34, 2) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">confidence</text>\n";
  s += "  <text x=\"14\" y=\"" + y(0.5) + "\" transform=\"rotate(-90 14 " + y(0.5) +
       ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">accuracy</text>\n";
  s += "</svg>\n";
  return s;
}

void emit_reports(std::span<const ExperimentReport> reports, const std::filesystem::path& out_dir,
                  const KeyValues& config_echo) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::string summary = "mode,estimator,acc,ece\n";
  nlohmann::ordered_json json;
  json["config"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config_echo.entries()) json["config"][k] = v;
  json["reports"] = nlohmann::ordered_json::array();
  for (const ExperimentReport& r : reports) {
    const std::string label = file_label(std::string(to_string(r.family)) + "_" + r.mode);
    nlohmann::ordered_json jr;
    jr["mode"] = r.mode;
    jr["family"] = std::string(to_string(r.family));
    jr["seed"] = r.seed;
    jr["bins"] = r.bins;
    jr["examples"] = r.examples;
    jr["dropped"] = r.dropped;
    jr["estimators"] = nlohmann::ordered_json::object();
    for (const CalibrationReport& c : r.reports) {
      const std::string est(to_string(c.estimator));
      write_reliability_csv(out_dir / (label + "_" + est + ".csv"), c);
      write_text(out_dir / (label + "_" + est + ".svg"),
                 reliability_svg(c, r.mode + " / " + std::string(to_string(r.family)) + " / " + est));
      summary += r.mode + "," + est + "," + text::fixed(c.accuracy) + "," + text::fixed(c.ece) + "\n";
      jr["estimators"][est] = {{"acc", c.accuracy}, {"ece", c.ece}};
    }
    json["reports"].push_back(std::move(jr));
  }
  write_text(out_dir / "summary.csv", summary);
  write_text(out_dir / "report.json", json.dump(2) + "\n");
}

void write_bench_csv(const std::filesystem::path& path, const BenchReport& report) {
  std::string s = "mode,median_us,p95_us,flops\n";
  for (const auto& e : report.entries) {
    s += e.mode + "," + text::fixed(e.median_us, 2) + "," + text::fixed(e.p95_us, 2) + "," +
         std::to_string(e.flops) + "\n";
  }
  s += "# text_len=" + std::to_string(report.text_len) + "\n";
  s += "# lim_forward_flops=" + std::to_string(report.lim_forward_flops) + "\n";
  s += "# backbone_paired_flops=" + std::to_string(report.backbone_paired_flops) + "\n";
  s += "# flop_ratio=" + text::fixed(report.flop_ratio) + "\n";
  write_text(path, s);
}

ExperimentConfig::ExperimentConfig() {
  backbone_train.learning_rate = 1e-3;
  backbone_train.epochs = 20;
  lim = lim_config_for(backbone);
}

namespace {

std::vector<double> parse_list(std::string_view key, std::string_view text) {
  std::vector<double> out;
  if (text.empty()) return out;
  for (;;) {
    const auto comma = text.find(',');
    std::string_view item = text.substr(0, comma);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError("key '" + std::string(key) + "' needs a comma-separated number list");
    }
    out.push_back(v);
    if (comma == std::string_view::npos) return out;
    text = text.substr(comma + 1);
  }
}

std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + text::fixed(v[i], 4);
  return out;
}

const std::set<std::string, std::less<>>& config_keys() {
  static const std::set<std::string, std::less<>> keys = {
      "seed", "shapes", "colors", "objects", "in_domain_shapes", "train_size", "val_size",
      "test_size", "vocab_text", "vocab_image", "dim", "slots", "max_text_len", "backbone_layers",
      "backbone_heads", "backbone_ffn_mult", "choices", "lim_layers", "lim_heads", "lim_ffn_mult",
      "lim_projected", "pe_max_len", "backbone_lr", "backbone_weight_decay", "backbone_batch",
      "backbone_epochs", "backbone_min_accuracy", "lim_lr", "lim_weight_decay", "lim_batch",
      "lim_epochs", "objective", "beta1", "beta2", "adam_eps", "bins", "drop_p", "bench_trials"};
  return keys;
}

}  // namespace

ExperimentConfig ExperimentConfig::from(const KeyValues& kv) {
  kv.reject_unknown(config_keys());
  ExperimentConfig c;
  std::size_t seed = c.seed;
  kv.read("seed", seed);
  c.seed = seed;
  kv.read("shapes", c.task.shapes);
  kv.read("colors", c.task.colors);
  kv.read("objects", c.task.objects);
  kv.read("in_domain_shapes", c.task.in_domain_shapes);
  kv.read("train_size", c.sizes.train);
  kv.read("val_size", c.sizes.validation);
  kv.read("test_size", c.sizes.test);
  kv.read("vocab_text", c.backbone.vocab_text);
  kv.read("vocab_image", c.backbone.vocab_image);
  kv.read("dim", c.backbone.dim);
  kv.read("slots", c.backbone.slots);
  kv.read("max_text_len", c.backbone.max_text_len);
  kv.read("backbone_layers", c.backbone.layers);
  kv.read("backbone_heads", c.backbone.heads);
  kv.read("backbone_ffn_mult", c.backbone.ffn_mult);
  kv.read("choices", c.backbone.choices);
  c.task.slots = c.backbone.slots;
  c.lim = lim_config_for(c.backbone);
  kv.read("lim_layers", c.lim.layers);
  kv.read("lim_heads", c.lim.heads);
  kv.read("lim_ffn_mult", c.lim.ffn_mult);
  kv.read("lim_projected", c.lim.projected);
  kv.read("pe_max_len", c.lim.pe_max_len);
  kv.read("backbone_lr", c.backbone_train.learning_rate);
  kv.read("backbone_weight_decay", c.backbone_train.weight_decay);
  kv.read("backbone_batch", c.backbone_train.batch_size);
  kv.read("backbone_epochs", c.backbone_train.epochs);
  kv.read("backbone_min_accuracy", c.backbone_min_accuracy);
  kv.read("lim_lr", c.lim_train.learning_rate);
  kv.read("lim_weight_decay", c.lim_train.weight_decay);
  kv.read("lim_batch", c.lim_train.batch_size);
  kv.read("lim_epochs", c.lim_train.epochs);
  std::string objective;
  if (kv.read("objective", objective)) c.lim_train.objective = parse_objective(objective);
  for (TrainConfig* t : {&c.backbone_train, &c.lim_train}) {
    kv.read("beta1", t->beta1);
    kv.read("beta2", t->beta2);
    kv.read("adam_eps", t->eps);
  }
  kv.read("bins", c.bins);
  std::string drop;
  if (kv.read("drop_p", drop)) c.drop_probabilities = parse_list("drop_p", drop);
  kv.read("bench_trials", c.bench_trials);
  c.validate();
  return c;
}

KeyValues ExperimentConfig::to_key_values() const {
  KeyValues kv;
  const auto n = [](std::size_t v) { return std::to_string(v); };
  const auto r = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  kv.set("seed", std::to_string(seed));
  kv.set("shapes", n(task.shapes));
  kv.set("colors", n(task.colors));
  kv.set("objects", n(task.objects));
  kv.set("in_domain_shapes", n(task.in_domain_shapes));
  kv.set("train_size", n(sizes.train));
  kv.set("val_size", n(sizes.validation));
  kv.set("test_size", n(sizes.test));
  kv.set("vocab_text", n(backbone.vocab_text));
  kv.set("vocab_image", n(backbone.vocab_image));
  kv.set("dim", n(backbone.dim));
  kv.set("slots", n(backbone.slots));
  kv.set("max_text_len", n(backbone.max_text_len));
  kv.set("backbone_layers", n(backbone.layers));
  kv.set("backbone_heads", n(backbone.heads));
  kv.set("backbone_ffn_mult", n(backbone.ffn_mult));
  kv.set("choices", n(backbone.choices));
  kv.set("lim_layers", n(lim.layers));
  kv.set("lim_heads", n(lim.heads));
  kv.set("lim_ffn_mult", n(lim.ffn_mult));
  kv.set("lim_projected", lim.projected ? "true" : "false");
  kv.set("pe_max_len", n(lim.pe_max_len));
  kv.set("backbone_lr", r(backbone_train.learning_rate));
  kv.set("backbone_weight_decay", r(backbone_train.weight_decay));
  kv.set("backbone_batch", n(backbone_train.batch_size));
  kv.set("backbone_epochs", n(backbone_train.epochs));
  kv.set("backbone_min_accuracy", r(backbone_min_accuracy));
  kv.set("lim_lr", r(lim_train.learning_rate));
  kv.set("lim_weight_decay", r(lim_train.weight_decay));
  kv.set("lim_batch", n(lim_train.batch_size));
  kv.set("lim_epochs", n(lim_train.epochs));
  kv.set("objective", std::string(to_string(lim_train.objective)));
  kv.set("beta1", r(lim_train.beta1));
  kv.set("beta2", r(lim_train.beta2));
  kv.set("adam_eps", r(lim_train.eps));
  kv.set("bins", n(bins));
  kv.set("drop_p", format_list(drop_probabilities));
  kv.set("bench_trials", n(bench_trials));
  return kv;
}

void ExperimentConfig::validate() const {
  task.validate();
  backbone.validate();
  lim.validate();
  lim.require_compatible(backbone);
  backbone_train.validate();
  lim_train.validate();
  if (task.slots != backbone.slots) throw ConfigError("task slots must equal backbone slots");
  if (task.text_vocab_needed() > backbone.vocab_text) {
    throw ConfigError("vocab_text " + std::to_string(backbone.vocab_text) + " < " +
                      std::to_string(task.text_vocab_needed()) + " ids the task needs");
  }
  if (task.image_vocab_needed() > backbone.vocab_image) {
    throw ConfigError("vocab_image " + std::to_string(backbone.vocab_image) + " < " +
                      std::to_string(task.image_vocab_needed()) + " ids the task needs");
  }
  if (task.colors != backbone.choices) throw ConfigError("choices must equal the number of colors");
  if (2 * task.objects + 5 > backbone.max_text_len) throw ConfigError("max_text_len too short for captions");
  if (2 * task.objects + 5 > lim.pe_max_len) throw ConfigError("pe_max_len too short for captions");
  if (bins == 0) throw ConfigError("bins must be positive");
  if (bench_trials < 100) throw ConfigError("bench_trials must be >= 100");
  DropSweepConfig{drop_probabilities}.validate();
}

std::uint64_t family_seed(std::uint64_t seed, Family family) {
  Rng rng(seed * 3 + static_cast<std::uint64_t>(family) + 0x5eedULL);
  return rng.next_u64();
}

PipelineData generate_data(const ExperimentConfig& c) {
  c.validate();
  PipelineData d;
  d.mixed = gen_dataset(family_seed(c.seed, Family::mixed), c.task, c.sizes, Family::mixed);
  d.in_domain = gen_dataset(family_seed(c.seed, Family::in_domain), c.task, c.sizes, Family::in_domain);
  d.held_out = gen_dataset(family_seed(c.seed, Family::held_out), c.task, c.sizes, Family::held_out);
  return d;
}

PipelineModels train_models(const ExperimentConfig& c, const PipelineData& data, bool with_mse) {
  c.validate();
  PipelineModels m;
  TrainConfig bt = c.backbone_train;
  bt.seed = c.seed;
  m.pretrain_log = pretrain_backbone(data.mixed.train, c.backbone, bt, c.backbone_min_accuracy);
  m.bundle.backbone = std::move(m.pretrain_log.params);

  TrainConfig lt = c.lim_train;
  lt.seed = c.seed;
  lt.objective = Objective::nll;
  m.lim_log = train_lim(init_lim(c.lim, c.seed + 1), m.bundle.backbone, data.in_domain.train, lt);
  m.bundle.lim = m.lim_log.params;
  if (with_mse) {
    m.lim_mse_log = train_lim_mse(init_lim(c.lim, c.seed + 1), m.bundle.backbone, data.in_domain.train, lt);
    m.bundle.lim_mse = m.lim_mse_log.params;
  }
  return m;
}

}  // namespace limcal
