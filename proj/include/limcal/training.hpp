#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "limcal/backbone.hpp"
#include "limcal/lim.hpp"
#include "limcal/matrix.hpp"
#include "limcal/synth_data.hpp"

namespace limcal {

enum class Objective { nll, mse_to_oracle };

std::string_view to_string(Objective objective);
Objective parse_objective(std::string_view text);

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 8;
  std::size_t epochs = 3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  Objective objective = Objective::nll;

  void validate() const;
};

struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::uint64_t step = 0;
};

AdamState make_adam_state(std::span<Matrix* const> params);

// One AdamW update with bias correction and decoupled decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
void adamw_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
                const TrainConfig& config);

struct PretrainResult {
  BackboneParams params;  // frozen
  std::vector<double> epoch_nll;
  double train_accuracy = 0.0;
};

// Minimizes NLL over paired inputs only, then freezes. Throws TrainingFailure
// if training-set accuracy stays below `min_accuracy`.
PretrainResult pretrain_backbone(const Dataset& data, const BackboneConfig& config,
                                 const TrainConfig& train, double min_accuracy = 0.95);

// Mean NLL (or MSE to the oracle image embedding) of one example; the tape
// gradients of `lim_vars` come from this same graph.
Var lim_example_loss(Tape& tape, const LimGraph& lim, const BackboneGraph& backbone,
                     const Example& example, Objective objective);

// Averaged per-tensor gradients of the LIM loss over `batch`, in LimParams
// visit order.
std::vector<Matrix> lim_batch_gradients(const LimParams& lim, const BackboneParams& backbone,
                                        std::span<const Example> batch, Objective objective,
                                        double* mean_loss = nullptr);

double mean_lim_loss(const LimParams& lim, const BackboneParams& backbone,
                     std::span<const Example> data, Objective objective);

struct LimTrainResult {
  LimParams params;
  std::vector<double> epoch_loss;  // running mean over each epoch
  double initial_loss = 0.0;       // full pass before the first update
  double final_loss = 0.0;         // full pass after the last update
};

// Trains LIM through the frozen backbone; assert_frozen() runs after every
// epoch and aborts with FrozenViolation on any change.
LimTrainResult train_lim(LimParams lim, const BackboneParams& backbone, const Dataset& data,
                         const TrainConfig& config);

// Same loop with the reconstruction objective (MSE to encode_image(x_V)).
LimTrainResult train_lim_mse(LimParams lim, const BackboneParams& backbone, const Dataset& data,
                             TrainConfig config);

}  // namespace limcal
