#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "limcal/backbone.hpp"
#include "limcal/matrix.hpp"
#include "limcal/numerics.hpp"
#include "limcal/tape.hpp"

namespace limcal {

struct LimConfig {
  std::size_t slots = 8;  // must match the backbone
  std::size_t dim = 32;   // must match the backbone
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t pe_max_len = 24;
  // false selects the literal single-head form softmax(Q K^T / sqrt(D)) V
  // with no W_Q/W_K/W_V/W_O.
  bool projected = true;

  void validate() const;
  void require_compatible(const BackboneConfig& backbone) const;
  bool operator==(const LimConfig&) const = default;
};

LimConfig lim_config_for(const BackboneConfig& backbone);

struct LimLayer {
  Matrix lnq_gamma, lnq_beta;  // query stream
  Matrix lnt_gamma, lnt_beta;  // text stream
  Matrix wq, wk, wv, wo;       // empty when !projected
  Matrix lnf_gamma, lnf_beta;  // before the FFN
  Matrix ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Trainable state of the imagination module: learned queries plus the
// cross-attention stack.
struct LimParams {
  LimConfig config;
  Matrix queries;  // N x D
  std::vector<LimLayer> layers;

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn);

  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  std::vector<Matrix*> tensors();
  std::uint64_t digest() const;
  // Sum of squared entries over every tensor.
  double squared_norm() const;
};

template <typename Self, typename Fn>
void LimParams::visit(Self& self, Fn&& fn) {
  fn(std::string("queries"), self.queries);
  for (std::size_t l = 0; l < self.layers.size(); ++l) {
    auto& y = self.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    fn(p + "lnq_gamma", y.lnq_gamma);
    fn(p + "lnq_beta", y.lnq_beta);
    fn(p + "lnt_gamma", y.lnt_gamma);
    fn(p + "lnt_beta", y.lnt_beta);
    if (self.config.projected) {
      fn(p + "wq", y.wq);
      fn(p + "wk", y.wk);
      fn(p + "wv", y.wv);
      fn(p + "wo", y.wo);
    }
    fn(p + "lnf_gamma", y.lnf_gamma);
    fn(p + "lnf_beta", y.lnf_beta);
    fn(p + "ffn_w1", y.ffn_w1);
    fn(p + "ffn_b1", y.ffn_b1);
    fn(p + "ffn_w2", y.ffn_w2);
    fn(p + "ffn_b2", y.ffn_b2);
  }
}

// Xavier-uniform projections and FFN weights, zero biases, LayerNorm (1, 0),
// queries ~ N(0, 0.02^2). Rounded to 32-bit floats.
LimParams init_lim(const LimConfig& config, std::uint64_t seed);

// Tape bindings of LimParams.
class LimGraph {
 public:
  enum class Mode { constant, parameter };

  LimGraph(Tape& tape, const LimParams& params, Mode mode);
  LimGraph(Tape& tape, const LimParams& params, std::span<const Var> vars);

  std::span<const Var> vars() const { return vars_; }

  // text_embeddings: L x D. Returns the N x D imagined slots.
  Var forward(Var text_embeddings) const;

 private:
  struct LayerVars {
    Var lnq_gamma, lnq_beta, lnt_gamma, lnt_beta, wq, wk, wv, wo, lnf_gamma, lnf_beta, w1, b1,
        w2, b2;
  };
  void assign(std::span<const Var> vars);

  Tape* tape_;
  const LimParams* params_;
  SinusoidalTable positions_;
  std::vector<Var> vars_;
  Var queries_;
  std::vector<LayerVars> layers_;
};

VisualEmbeddings lim_forward(const LimParams& params, const Matrix& text_embeddings);

// Imagined slots injected into the frozen backbone for a text-only input.
AnswerDistribution imagine(const LimParams& lim, const BackboneParams& backbone,
                           std::span<const std::uint32_t> text);

// Analytic matmul FLOPs of lim_forward for `text_len` text rows.
std::size_t lim_forward_flops(const LimConfig& config, std::size_t text_len);

}  // namespace limcal
