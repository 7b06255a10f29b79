#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "fixtures.hpp"
#include "limcal/errors.hpp"
#include "limcal/experiments.hpp"

using namespace limcal;
namespace fs = std::filesystem;

namespace {

ModelBundle random_bundle(std::uint64_t seed) {
  ModelBundle b{fixtures::random_backbone(seed), std::nullopt, std::nullopt};
  b.lim = fixtures::random_lim(seed + 1, lim_config_for(b.backbone.config));
  b.lim_mse = fixtures::random_lim(seed + 2, lim_config_for(b.backbone.config));
  // Checkpoints store f32, as training leaves every tensor.
  BackboneParams::visit(b.backbone, [](const std::string&, Matrix& m) { round_to_f32(m); });
  for (LimParams* l : {&*b.lim, &*b.lim_mse})
    LimParams::visit(*l, [](const std::string&, Matrix& m) { round_to_f32(m); });
  b.backbone.freeze();
  return b;
}

Dataset small_data(std::uint64_t seed, std::size_t n, Family family = Family::in_domain) {
  return gen_dataset(seed, TaskConfig{}, SplitSizes{n, 1, 1}, family).train;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("limcal_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Modes, NamesRoundTrip) {
  std::vector<EvalMode> modes = {EvalMode::paired(), EvalMode::text_only(), EvalMode::lim(),
                                 EvalMode::lim_mse()};
  for (AblationKind k : kAllAblations) modes.push_back(EvalMode::ablate(k));
  for (const EvalMode& m : modes) EXPECT_EQ(parse_mode(m.name()), m) << m.name();
  EXPECT_THROW(parse_mode("vision"), ConfigError);
  EXPECT_THROW(parse_mode("ablate:noise"), ConfigError);
  EXPECT_THROW(parse_ablation(""), ConfigError);
}

TEST(Substitute, ZeroAndWhitespace) {
  const BackboneParams bb = fixtures::random_backbone(3);
  Rng rng(1);
  const TokenIds text = {5, 6, 7};
  const auto zero = make_substitute(AblationKind::zero, bb, text, rng);
  ASSERT_EQ(zero.rows.rows(), bb.config.slots);
  ASSERT_EQ(zero.rows.cols(), bb.config.dim);
  for (double v : zero.rows.values()) EXPECT_EQ(v, 0.0);

  const auto ws = make_substitute(AblationKind::whitespace, bb, text, rng);
  for (std::size_t i = 0; i < bb.config.slots; ++i)
    for (std::size_t j = 0; j < bb.config.dim; ++j) EXPECT_EQ(ws.rows(i, j), bb.text_embed(0, j));
}

TEST(Substitute, BlankImageGoesThroughEncoder) {
  const BackboneParams bb = fixtures::random_backbone(4);
  Rng rng(1);
  const auto blank = make_substitute(AblationKind::blank_image, bb, TokenIds{3}, rng);
  const auto encoded = encode_image(bb, TokenIds(bb.config.slots, 0));
  EXPECT_EQ(blank.rows.values()[0], encoded.rows.values()[0]);
  for (std::size_t i = 0; i < blank.rows.values().size(); ++i)
    ASSERT_EQ(blank.rows.values()[i], encoded.rows.values()[i]);
}

TEST(Substitute, RandomScaledMatchesTableStatistics) {
  const BackboneParams bb = fixtures::random_backbone(5);
  const std::size_t d = bb.config.dim, vocab = bb.text_embed.rows();
  std::vector<double> mean(d), sd(d);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t r = 0; r < vocab; ++r) mean[j] += bb.text_embed(r, j) / vocab;
    for (std::size_t r = 0; r < vocab; ++r) sd[j] += std::pow(bb.text_embed(r, j) - mean[j], 2) / vocab;
    sd[j] = std::sqrt(sd[j]);
  }
  Rng rng(11);
  std::vector<double> s1(d), s2(d);
  const std::size_t draws = 10000 / bb.config.slots;
  std::size_t n = 0;
  for (std::size_t t = 0; t < draws; ++t) {
    const auto sub = make_substitute(AblationKind::random_scaled, bb, TokenIds{1}, rng);
    for (std::size_t i = 0; i < bb.config.slots; ++i, ++n)
      for (std::size_t j = 0; j < d; ++j) {
        s1[j] += sub.rows(i, j);
        s2[j] += sub.rows(i, j) * sub.rows(i, j);
      }
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double m = s1[j] / n, s = std::sqrt(s2[j] / n - m * m);
    // 5% of the column spread: the sample mean of 10k draws sits well inside.
    EXPECT_NEAR(m, mean[j], 0.05 * sd[j]) << j;
    EXPECT_NEAR(s, sd[j], 0.05 * sd[j]) << j;
  }
}

TEST(Substitute, RandomGaussIsStandard) {
  const BackboneParams bb = fixtures::random_backbone(6);
  Rng rng(2);
  double s1 = 0, s2 = 0;
  std::size_t n = 0;
  for (int t = 0; t < 500; ++t) {
    for (double v : make_substitute(AblationKind::random_gauss, bb, TokenIds{1}, rng).rows.values()) {
      s1 += v;
      s2 += v * v;
      ++n;
    }
  }
  EXPECT_NEAR(s1 / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.03);
}

TEST(Predict, ModeIsolation) {
  const ModelBundle b = random_bundle(7);
  Dataset data = small_data(3, 40);
  Dataset scrambled = data;
  Rng rng(9);
  for (auto& ex : scrambled.examples)
    for (auto& t : ex.image_tokens) t = static_cast<std::uint32_t>(rng.below(b.backbone.config.vocab_image));

  std::vector<EvalMode> invariant = {EvalMode::text_only(), EvalMode::lim()};
  for (AblationKind k : kAllAblations) invariant.push_back(EvalMode::ablate(k));
  for (const EvalMode& m : invariant) {
    const auto a = predict(m, b, data, 4), c = predict(m, b, scrambled, 4);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i].logits, c[i].logits) << m.name();
  }
  const auto a = predict(EvalMode::paired(), b, data, 4), c = predict(EvalMode::paired(), b, scrambled, 4);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].logits != c[i].logits;
  EXPECT_TRUE(differs);
}

TEST(Predict, MissingModuleIsRejectedBeforeForward) {
  ModelBundle b = random_bundle(8);
  b.lim.reset();
  const Dataset data = small_data(3, 5);
  EXPECT_THROW(predict(EvalMode::lim(), b, data, 0), ConfigError);
  EXPECT_NO_THROW(predict(EvalMode::lim_mse(), b, data, 0));
  Dataset bad = data;
  bad.examples[2].image_tokens.pop_back();
  EXPECT_THROW(predict(EvalMode::paired(), b, bad, 0), InputError);
}

TEST(Evaluate, ReportsAllEstimatorsAndIsDeterministic) {
  const ModelBundle b = random_bundle(9);
  const Dataset data = small_data(4, 60);
  const auto r1 = evaluate(EvalMode::ablate(AblationKind::random_gauss), b, data, 10, 5);
  const auto r2 = evaluate(EvalMode::ablate(AblationKind::random_gauss), b, data, 10, 5);
  ASSERT_EQ(r1.reports.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(r1.reports[e].estimator, kAllEstimators[e]);
    EXPECT_EQ(r1.reports[e].ece, r2.reports[e].ece);
    EXPECT_EQ(r1.reports[e].accuracy, r1.reports[0].accuracy);
    EXPECT_EQ(r1.reports[e].total, 60u);
  }
  EXPECT_THROW(evaluate(EvalMode::paired(), b, data, 0), ConfigError);
}

TEST(DropSweep, DegeneratePointsMatchPureModes) {
  const ModelBundle b = random_bundle(10);
  const Dataset data = small_data(5, 200);
  for (EvalMode fb : {EvalMode::text_only(), EvalMode::lim()}) {
    const auto sweep = drop_sweep({{0.0, 1.0}, fb, 3}, b, data);
    const auto paired = evaluate(EvalMode::paired(), b, data);
    const auto pure = evaluate(fb, b, data);
    ASSERT_EQ(sweep.size(), 2u);
    EXPECT_EQ(sweep[0].dropped, 0u);
    EXPECT_EQ(sweep[1].dropped, data.size());
    for (std::size_t e = 0; e < 3; ++e) {
      EXPECT_EQ(sweep[0].reports[e].ece, paired.reports[e].ece);
      EXPECT_EQ(sweep[0].reports[e].accuracy, paired.reports[e].accuracy);
      EXPECT_EQ(sweep[1].reports[e].ece, pure.reports[e].ece);
      EXPECT_EQ(sweep[1].reports[e].accuracy, pure.reports[e].accuracy);
    }
  }
}

TEST(DropSweep, HalfDropWithinBinomialBound) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const auto mask = drop_mask(seed, 2000, 0.5);
    const double frac = static_cast<double>(std::count(mask.begin(), mask.end(), true)) / 2000.0;
    EXPECT_NEAR(frac, 0.5, 0.034) << seed;
  }
}

TEST(DropSweep, MasksNestedAndSharedAcrossArms) {
  const auto a = drop_mask(8, 500, 0.25), c = drop_mask(8, 500, 0.75);
  for (std::size_t i = 0; i < 500; ++i) {
    if (a[i]) EXPECT_TRUE(c[i]) << i;
  }
  const ModelBundle b = random_bundle(11);
  const Dataset data = small_data(6, 100);
  const auto text_arm = drop_sweep({{0.5}, EvalMode::text_only(), 8}, b, data);
  const auto lim_arm = drop_sweep({{0.5}, EvalMode::lim(), 8}, b, data);
  EXPECT_EQ(text_arm[0].dropped, lim_arm[0].dropped);
}

TEST(DropSweep, Validation) {
  EXPECT_THROW((DropSweepConfig{{1.5}}.validate()), ConfigError);
  EXPECT_THROW((DropSweepConfig{{-0.1}}.validate()), ConfigError);
  EXPECT_THROW((DropSweepConfig{{}}.validate()), ConfigError);
  EXPECT_THROW((DropSweepConfig{{0.5}, EvalMode::paired()}.validate()), ConfigError);
}

TEST(Bench, FlopRatioAndEntries) {
  const ModelBundle b = random_bundle(12);
  const Dataset data = small_data(7, 20);
  const BenchReport r = bench(b, data, 100);
  ASSERT_EQ(r.entries.size(), 3u);
  EXPECT_EQ(r.entries[0].mode, "text_only");
  EXPECT_EQ(r.entries[1].mode, "lim");
  EXPECT_EQ(r.entries[2].mode, "paired");
  EXPECT_LT(r.flop_ratio, 0.5);
  for (const auto& e : r.entries) {
    EXPECT_GT(e.median_us, 0.0);
    EXPECT_GE(e.p95_us, e.median_us);
  }
  EXPECT_THROW(bench(b, data, 99), ConfigError);
}

TEST(Emit, FilesAreConsistentAndDeterministic) {
  const ModelBundle b = random_bundle(13);
  const Dataset data = small_data(8, 150);
  std::vector<ExperimentReport> reports = {evaluate(EvalMode::paired(), b, data),
                                           evaluate(EvalMode::text_only(), b, data),
                                           evaluate(EvalMode::ablate(AblationKind::zero), b, data)};
  const fs::path d1 = fresh_dir("emit1"), d2 = fresh_dir("emit2");
  emit_reports(reports, d1, ExperimentConfig().to_key_values());
  reports[0].wall_clock_seconds += 5.0;
  emit_reports(reports, d2, ExperimentConfig().to_key_values());

  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(d1)) {
    ++files;
    EXPECT_EQ(slurp(entry.path()), slurp(d2 / entry.path().filename())) << entry.path();
  }
  EXPECT_EQ(files, 3u * 3u * 2u + 2u);

  const std::string summary = slurp(d1 / "summary.csv");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 1 + 3 * 3);

  const std::string csv = slurp(d1 / "in_domain_paired_msp.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "bin_lo,bin_hi,count,avg_conf,avg_acc");
  std::size_t total = 0, rows = 0;
  while (std::getline(in, line) && line[0] != '#') {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 5u);
    total += std::stoul(cells[2]);
    ++rows;
  }
  EXPECT_EQ(rows, 10u);
  EXPECT_EQ(total, data.size());
}

TEST(Emit, SvgHasOneBarPerNonEmptyBin) {
  std::vector<Scored> s = {{0.05, true}, {0.07, false}, {0.55, true}, {1.0, true}};
  const auto report = compute_ece(s, 10);
  const std::string svg = reliability_svg(report, "a & b");
  const std::regex bar("<rect class=\"bar\"");
  EXPECT_EQ(std::distance(std::sregex_iterator(svg.begin(), svg.end(), bar), std::sregex_iterator()), 3);
  EXPECT_NE(svg.find("class=\"diagonal\""), std::string::npos);
  EXPECT_NE(svg.find("a &amp; b"), std::string::npos);
  // Tags balance: every opened element closes or self-closes.
  const std::regex open("<([a-z]+)[^>]*[^/]>"), close("</([a-z]+)>");
  const auto count = [&](const std::regex& r) {
    return std::distance(std::sregex_iterator(svg.begin(), svg.end(), r), std::sregex_iterator());
  };
  EXPECT_EQ(count(open), count(close));
}

TEST(Emit, UnwritableDirectoryIsIoError) {
  const fs::path file = fresh_dir("emit_blocker");
  std::ofstream(file) << "x";
  const std::vector<ExperimentReport> none;
  EXPECT_THROW(emit_reports(none, file / "sub"), IoError);
}

TEST(Config, DefaultsRoundTrip) {
  const ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  const ExperimentConfig back = ExperimentConfig::from(c.to_key_values());
  EXPECT_EQ(back.to_key_values().serialize(), c.to_key_values().serialize());
  EXPECT_EQ(back.backbone, c.backbone);
  EXPECT_EQ(back.lim, c.lim);
}

TEST(Config, ParsesOverridesAndRejectsUnknownKeys) {
  const auto kv = KeyValues::parse("# toy\nseed = 9\nlim_layers = 1\ndrop_p = 0.1, 0.9\nobjective = mse\n");
  const ExperimentConfig c = ExperimentConfig::from(kv);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.lim.layers, 1u);
  EXPECT_EQ(c.drop_probabilities, (std::vector<double>{0.1, 0.9}));
  EXPECT_EQ(c.lim_train.objective, Objective::mse_to_oracle);

  EXPECT_THROW(ExperimentConfig::from(KeyValues::parse("sead = 1\n")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from(KeyValues::parse("dim = many\n")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from(KeyValues::parse("drop_p = 0.5,\n")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from(KeyValues::parse("drop_p = 2\n")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from(KeyValues::parse("vocab_image = 20\n")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from(KeyValues::parse("bins = 0\n")), ConfigError);
}

TEST(Pipeline, DataFamiliesAreSeededAndDistinct) {
  ExperimentConfig c;
  c.sizes = {50, 10, 10};
  const PipelineData a = generate_data(c), b = generate_data(c);
  EXPECT_EQ(a.held_out.test.examples.size(), 10u);
  EXPECT_EQ(a.in_domain.train.examples[0].image_tokens, b.in_domain.train.examples[0].image_tokens);
  EXPECT_EQ(a.mixed.train.family, Family::mixed);
  EXPECT_NE(family_seed(1, Family::in_domain), family_seed(1, Family::held_out));
  EXPECT_NE(family_seed(1, Family::in_domain), family_seed(2, Family::in_domain));
}

TEST(Bundle, CheckpointRoundTrip) {
  const ModelBundle b = random_bundle(14);
  const ModelBundle back = ModelBundle::from_checkpoint(from_bytes(to_bytes(b.to_checkpoint())));
  EXPECT_EQ(back.backbone.digest(), b.backbone.digest());
  ASSERT_TRUE(back.lim && back.lim_mse);
  EXPECT_THROW(ModelBundle::from_checkpoint(Checkpoint{}), ConfigError);
}
