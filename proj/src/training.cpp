#include "limcal/training.hpp"

#include <cmath>
#include <numeric>

#include "limcal/errors.hpp"
#include "limcal/rng.hpp"

namespace limcal {

std::string_view to_string(Objective objective) {
  return objective == Objective::nll ? "nll" : "mse_to_oracle";
}

Objective parse_objective(std::string_view text) {
  if (text == "nll") return Objective::nll;
  if (text == "mse_to_oracle" || text == "mse") return Objective::mse_to_oracle;
  throw ConfigError("unknown objective '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
}

AdamState make_adam_state(std::span<Matrix* const> params) {
  AdamState s;
  for (const Matrix* p : params) {
    s.first_moment.emplace_back(p->rows(), p->cols());
    s.second_moment.emplace_back(p->rows(), p->cols());
  }
  return s;
}

void adamw_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
                const TrainConfig& config) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ShapeError("adamw_step: " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " +
                     std::to_string(state.first_moment.size()) + " moment slots");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw ShapeError("adamw_step: gradient " + shape_string(g) + " for parameter " +
                       shape_string(p));
    }
    auto pv = p.values();
    auto gv = g.values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    for (std::size_t j = 0; j < pv.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gv[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gv[j] * gv[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      pv[j] -= config.learning_rate * (mhat / (std::sqrt(vhat) + config.eps) +
                                       config.weight_decay * pv[j]);
    }
  }
}

namespace {

std::vector<Matrix> zero_like(std::span<Matrix* const> params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const Matrix* p : params) out.emplace_back(p->rows(), p->cols());
  return out;
}

void accumulate(std::vector<Matrix>& into, Tape& tape, std::span<const Var> vars) {
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (!tape.needs_grad(vars[i])) continue;
    auto dst = into[i].values();
    auto src = tape.grad(vars[i]).values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

// Index batches of a shuffled epoch; the last partial batch is kept.
std::vector<std::vector<std::size_t>> epoch_batches(Rng& rng, std::size_t n,
                                                    std::size_t batch_size) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

double paired_accuracy(const BackboneParams& params, const Dataset& data) {
  std::size_t correct = 0;
  for (const auto& ex : data.examples) {
    const auto dist =
        forward(params, Paired{encode_image(params, ex.image_tokens)}, ex.text());
    correct += dist.argmax() == ex.answer ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace

PretrainResult pretrain_backbone(const Dataset& data, const BackboneConfig& config,
                                 const TrainConfig& train, double min_accuracy) {
  train.validate();
  if (data.examples.empty()) throw InputError("pretrain_backbone: empty dataset");
  PretrainResult result;
  result.params = init_backbone(config, train.seed);
  BackboneParams& params = result.params;
  const std::vector<Matrix*> tensors = params.trainable_tensors();
  AdamState state = make_adam_state(tensors);
  Rng rng(train.seed ^ 0x5ca1ab1eULL);

  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const auto& batch : epoch_batches(rng, data.size(), train.batch_size)) {
      std::vector<Matrix> grads = zero_like(tensors);
      const double weight = 1.0 / static_cast<double>(batch.size());
      for (std::size_t idx : batch) {
        const Example& ex = data.examples[idx];
        Tape tape;
        const BackboneGraph g(tape, params, BackboneGraph::Mode::parameter);
        const TokenIds text = ex.text();
        const Var logits = g.logits(g.encode_image(ex.image_tokens), text);
        const Var loss = tape.cross_entropy(logits, ex.answer);
        loss_sum += tape.value(loss)(0, 0);
        tape.backward(loss, weight);
        accumulate(grads, tape, g.vars());
      }
      adamw_step(tensors, grads, state, train);
      for (Matrix* t : tensors) round_to_f32(*t);
    }
    result.epoch_nll.push_back(loss_sum / static_cast<double>(data.size()));
  }

  result.train_accuracy = paired_accuracy(params, data);
  if (result.train_accuracy < min_accuracy) {
    throw TrainingFailure("backbone reached training accuracy " +
                          std::to_string(result.train_accuracy) + " < required " +
                          std::to_string(min_accuracy) +
                          "; try another seed or more epochs");
  }
  params.freeze();
  return result;
}

Var lim_example_loss(Tape& tape, const LimGraph& lim, const BackboneGraph& backbone,
                     const Example& example, Objective objective) {
  const TokenIds text = example.text();
  const Var slots = lim.forward(backbone.embed_text(text));
  if (objective == Objective::mse_to_oracle) {
    const Var target = backbone.encode_image(example.image_tokens);
    return tape.mse(slots, tape.value(target));
  }
  return tape.cross_entropy(backbone.logits(slots, text), example.answer);
}

std::vector<Matrix> lim_batch_gradients(const LimParams& lim, const BackboneParams& backbone,
                                        std::span<const Example> batch, Objective objective,
                                        double* mean_loss) {
  std::vector<Matrix> grads;
  lim.for_each([&](const std::string&, const Matrix& m) { grads.emplace_back(m.rows(), m.cols()); });
  const double weight = 1.0 / static_cast<double>(batch.size());
  double loss_sum = 0.0;
  for (const Example& ex : batch) {
    Tape tape;
    const BackboneGraph bg(tape, backbone, BackboneGraph::Mode::constant);
    const LimGraph lg(tape, lim, LimGraph::Mode::parameter);
    const Var loss = lim_example_loss(tape, lg, bg, ex, objective);
    loss_sum += tape.value(loss)(0, 0);
    tape.backward(loss, weight);
    accumulate(grads, tape, lg.vars());
  }
  if (mean_loss) *mean_loss = loss_sum * weight;
  return grads;
}

double mean_lim_loss(const LimParams& lim, const BackboneParams& backbone,
                     std::span<const Example> data, Objective objective) {
  double sum = 0.0;
  for (const Example& ex : data) {
    Tape tape;
    const BackboneGraph bg(tape, backbone, BackboneGraph::Mode::constant);
    const LimGraph lg(tape, lim, LimGraph::Mode::constant);
    sum += tape.value(lim_example_loss(tape, lg, bg, ex, objective))(0, 0);
  }
  return sum / static_cast<double>(data.size());
}

LimTrainResult train_lim(LimParams lim, const BackboneParams& backbone, const Dataset& data,
                         const TrainConfig& config) {
  config.validate();
  if (data.examples.empty()) throw InputError("train_lim: empty dataset");
  lim.config.require_compatible(backbone.config);
  backbone.assert_frozen();

  LimTrainResult result;
  result.initial_loss = mean_lim_loss(lim, backbone, data.examples, config.objective);
  const std::vector<Matrix*> tensors = lim.tensors();
  AdamState state = make_adam_state(tensors);
  Rng rng(config.seed ^ 0x11a7e5ULL);
  std::vector<Example> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const auto& idx : epoch_batches(rng, data.size(), config.batch_size)) {
      batch.clear();
      for (std::size_t i : idx) batch.push_back(data.examples[i]);
      double batch_loss = 0.0;
      const auto grads = lim_batch_gradients(lim, backbone, batch, config.objective, &batch_loss);
      loss_sum += batch_loss * static_cast<double>(batch.size());
      adamw_step(tensors, grads, state, config);
      for (Matrix* t : tensors) round_to_f32(*t);
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(data.size()));
    backbone.assert_frozen();
  }
  result.final_loss = mean_lim_loss(lim, backbone, data.examples, config.objective);
  result.params = std::move(lim);
  return result;
}

LimTrainResult train_lim_mse(LimParams lim, const BackboneParams& backbone, const Dataset& data,
                             TrainConfig config) {
  config.objective = Objective::mse_to_oracle;
  return train_lim(std::move(lim), backbone, data, config);
}

}  // namespace limcal
