#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "limcal/errors.hpp"
#include "limcal/training.hpp"

using namespace limcal;
using fixtures::random_backbone;

namespace {

BackboneConfig small_backbone() {
  BackboneConfig c;
  c.dim = 16;
  c.layers = 1;
  c.heads = 2;
  c.ffn_mult = 2;
  return c;
}

LimConfig small_lim() {
  LimConfig c = lim_config_for(small_backbone());
  c.layers = 1;
  c.heads = 2;
  c.ffn_mult = 2;
  return c;
}

BackboneParams frozen_random_backbone(std::uint64_t seed) {
  BackboneParams p = random_backbone(seed, small_backbone());
  BackboneParams::visit(p, [](const std::string&, Matrix& m) { round_to_f32(m); });
  p.freeze();
  return p;
}

}  // namespace

TEST(AdamW, ZeroGradientNoDecayLeavesParams) {
  Matrix p = Matrix::from_rows({{0.5, -2.0}, {3.0, 0.25}});
  const Matrix before = p;
  std::vector<Matrix*> params = {&p};
  AdamState s = make_adam_state(params);
  TrainConfig c;
  c.weight_decay = 0.0;
  const std::vector<Matrix> grads = {Matrix(2, 2)};
  for (int i = 0; i < 5; ++i) adamw_step(params, grads, s, c);
  EXPECT_EQ(p, before);
}

TEST(AdamW, ZeroGradientDecayShrinksGeometrically) {
  Matrix p = Matrix::from_rows({{1.0, -4.0, 0.5}});
  std::vector<Matrix*> params = {&p};
  AdamState s = make_adam_state(params);
  TrainConfig c;
  c.learning_rate = 0.01;
  c.weight_decay = 0.1;
  const std::vector<Matrix> grads = {Matrix(1, 3)};
  for (int step = 1; step <= 20; ++step) {
    adamw_step(params, grads, s, c);
    const double factor = std::pow(1.0 - 0.01 * 0.1, step);
    EXPECT_NEAR(p(0, 0), 1.0 * factor, 1e-14);
    EXPECT_NEAR(p(0, 1), -4.0 * factor, 1e-14);
  }
}

TEST(AdamW, QuadraticBowlConverges) {
  Matrix p(1, 4, 1.0);
  std::vector<Matrix*> params = {&p};
  AdamState s = make_adam_state(params);
  TrainConfig c;
  c.learning_rate = 0.05;
  c.weight_decay = 0.0;
  for (int step = 0; step < 500; ++step) {
    const std::vector<Matrix> grads = {p * 2.0};
    adamw_step(params, grads, s, c);
  }
  double norm = 0.0;
  for (double v : p.values()) norm += v * v;
  EXPECT_LT(std::sqrt(norm), 1e-3);
}

TEST(AdamW, MatchesScalarOracleOnRecordedTrace) {
  const std::vector<double> trace = {0.3, -1.2, 0.05, 2.0, -0.7, 0.0, 1.1, -0.02, 0.6, -3.0};
  TrainConfig c;
  c.learning_rate = 0.01;
  c.weight_decay = 0.05;
  Matrix p(1, 1, 0.8);
  std::vector<Matrix*> params = {&p};
  AdamState s = make_adam_state(params);

  double theta = 0.8, m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= trace.size(); ++t) {
    const double g = trace[t - 1];
    adamw_step(params, std::vector<Matrix>{Matrix(1, 1, g)}, s, c);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, static_cast<double>(t)));
    const double vh = v / (1.0 - std::pow(0.999, static_cast<double>(t)));
    theta = theta - 0.01 * (mh / (std::sqrt(vh) + 1e-8) + 0.05 * theta);
    EXPECT_NEAR(p(0, 0), theta, 1e-6) << "step " << t;
  }
}

TEST(AdamW, ShapeMismatchThrows) {
  Matrix p(2, 2);
  std::vector<Matrix*> params = {&p};
  AdamState s = make_adam_state(params);
  EXPECT_THROW(adamw_step(params, std::vector<Matrix>{Matrix(2, 3)}, s, TrainConfig{}), ShapeError);
  EXPECT_THROW(adamw_step(params, std::vector<Matrix>{}, s, TrainConfig{}), ShapeError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.learning_rate = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_objective("mse_to_oracle"), Objective::mse_to_oracle);
  EXPECT_THROW(parse_objective("l1"), ConfigError);
}

TEST(PretrainBackbone, LossFallsAndResultIsFrozen) {
  const auto data = gen_dataset(1, TaskConfig{}, {300, 10, 10}, Family::mixed);
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.epochs = 8;
  t.seed = 1;
  const PretrainResult r = pretrain_backbone(data.train, small_backbone(), t, 0.0);
  ASSERT_EQ(r.epoch_nll.size(), 8u);
  int non_increasing = 0;
  for (std::size_t e = 1; e < r.epoch_nll.size(); ++e) non_increasing += r.epoch_nll[e] <= r.epoch_nll[e - 1];
  EXPECT_GE(non_increasing, 6);
  EXPECT_TRUE(r.params.frozen());
  EXPECT_NO_THROW(r.params.assert_frozen());
}

TEST(PretrainBackbone, UnreachableThresholdIsTrainingFailure) {
  const auto data = gen_dataset(2, TaskConfig{}, {40, 10, 10}, Family::mixed);
  TrainConfig t;
  t.epochs = 1;
  EXPECT_THROW(pretrain_backbone(data.train, small_backbone(), t, 1.01), TrainingFailure);
}

TEST(TrainLim, BackboneUntouchedAndLossFalls) {
  const BackboneParams backbone = frozen_random_backbone(3);
  const std::uint64_t before = backbone.digest();
  const auto data = gen_dataset(3, TaskConfig{}, {96, 10, 10}, Family::in_domain);
  TrainConfig t;
  t.learning_rate = 3e-3;
  t.epochs = 3;
  const LimTrainResult r = train_lim(init_lim(small_lim(), 3), backbone, data.train, t);
  EXPECT_EQ(backbone.digest(), before);
  EXPECT_NO_THROW(backbone.assert_frozen());
  EXPECT_LT(r.final_loss, r.initial_loss);
}

TEST(TrainLim, RequiresFrozenBackbone) {
  BackboneParams backbone = random_backbone(4, small_backbone());
  const auto data = gen_dataset(4, TaskConfig{}, {8, 2, 2}, Family::in_domain);
  EXPECT_THROW(train_lim(init_lim(small_lim(), 4), backbone, data.train, TrainConfig{}),
               FrozenViolation);
}

TEST(TrainLim, DeterministicPerSeed) {
  const BackboneParams backbone = frozen_random_backbone(5);
  const auto data = gen_dataset(5, TaskConfig{}, {40, 2, 2}, Family::in_domain);
  TrainConfig t;
  t.seed = 17;
  const auto a = train_lim(init_lim(small_lim(), 5), backbone, data.train, t);
  const auto b = train_lim(init_lim(small_lim(), 5), backbone, data.train, t);
  EXPECT_EQ(a.params.digest(), b.params.digest());
  t.seed = 18;
  EXPECT_NE(train_lim(init_lim(small_lim(), 5), backbone, data.train, t).params.digest(),
            a.params.digest());
}

TEST(TrainLim, WeightDecayShrinksNorm) {
  const BackboneParams backbone = frozen_random_backbone(6);
  const auto data = gen_dataset(6, TaskConfig{}, {64, 2, 2}, Family::in_domain);
  TrainConfig t;
  t.learning_rate = 1e-2;
  t.epochs = 2;
  t.weight_decay = 0.0;
  const double free_norm = train_lim(init_lim(small_lim(), 6), backbone, data.train, t).params.squared_norm();
  t.weight_decay = 0.01;
  const double decayed = train_lim(init_lim(small_lim(), 6), backbone, data.train, t).params.squared_norm();
  EXPECT_NE(free_norm, decayed);
  EXPECT_LT(decayed, free_norm);
}

TEST(TrainLim, BatchGradientMatchesFiniteDifferences) {
  const BackboneParams backbone = frozen_random_backbone(7);
  const LimParams lim = fixtures::random_lim(7, small_lim());
  const auto data = gen_dataset(7, TaskConfig{}, {1, 1, 1}, Family::in_domain);
  const std::span<const Example> batch(data.train.examples);
  for (Objective obj : {Objective::nll, Objective::mse_to_oracle}) {
    const auto grads = lim_batch_gradients(lim, backbone, batch, obj);
    LimParams probe = lim;
    const auto tensors = probe.tensors();
    Rng rng(7);
    double worst = 0.0;
    for (int k = 0; k < 60; ++k) {
      const std::size_t ti = rng.below(tensors.size());
      auto vals = tensors[ti]->values();
      const std::size_t j = rng.below(vals.size());
      const double orig = vals[j], h = 1e-4;
      vals[j] = orig + h;
      const double up = mean_lim_loss(probe, backbone, batch, obj);
      vals[j] = orig - h;
      const double down = mean_lim_loss(probe, backbone, batch, obj);
      vals[j] = orig;
      const double numeric = (up - down) / (2 * h), analytic = grads[ti].values()[j];
      worst = std::max(worst, std::abs(numeric - analytic) /
                                  std::max({1.0, std::abs(numeric), std::abs(analytic)}));
    }
    EXPECT_LT(worst, 1e-4) << to_string(obj);
  }
}

TEST(TrainLimMse, LossFallsAndCollapsesToTheMeanImage) {
  const BackboneParams backbone = frozen_random_backbone(8);
  const TaskConfig task;
  Example a = gen_dataset(8, task, {1, 1, 1}, Family::in_domain).train.examples[0];
  Example b = a;
  std::rotate(b.image_tokens.begin(), b.image_tokens.begin() + 3, b.image_tokens.end());
  ASSERT_NE(a.image_tokens, b.image_tokens);
  Dataset data;
  data.examples = {a, b};

  TrainConfig t;
  t.learning_rate = 1e-2;
  t.epochs = 150;
  t.batch_size = 2;
  t.weight_decay = 0.0;
  const auto r = train_lim_mse(init_lim(small_lim(), 8), backbone, data, t);
  EXPECT_LT(r.final_loss, r.initial_loss);

  const Matrix za = encode_image(backbone, a.image_tokens).rows;
  const Matrix zb = encode_image(backbone, b.image_tokens).rows;
  const Matrix mean = (za + zb) * 0.5;
  const Matrix z = lim_forward(r.params, embed_text(backbone, a.text())).rows;
  const auto dist = [](const Matrix& x, const Matrix& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.values().size(); ++i) s += std::pow(x.values()[i] - y.values()[i], 2);
    return std::sqrt(s);
  };
  EXPECT_LT(dist(z, mean), dist(z, za));
  EXPECT_LT(dist(z, mean), dist(z, zb));
}
