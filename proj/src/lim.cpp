#include "limcal/lim.hpp"

#include <algorithm>

#include "init.hpp"
#include "limcal/digest.hpp"
#include "limcal/errors.hpp"
#include "limcal/rng.hpp"

namespace limcal {

void LimConfig::validate() const {
  if (slots < 1 || dim < 1) throw ConfigError("lim: slots and dim must be positive");
  if (projected && (heads == 0 || dim % heads != 0)) {
    throw ConfigError("lim: dim " + std::to_string(dim) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (ffn_mult < 1) throw ConfigError("lim: ffn_mult must be >= 1");
  if (pe_max_len < slots) throw ConfigError("lim: pe_max_len must cover every query slot");
}

void LimConfig::require_compatible(const BackboneConfig& backbone) const {
  if (slots != backbone.slots || dim != backbone.dim) {
    throw ConfigError("lim shape " + std::to_string(slots) + "x" + std::to_string(dim) +
                      " does not match backbone " + std::to_string(backbone.slots) + "x" +
                      std::to_string(backbone.dim));
  }
}

LimConfig lim_config_for(const BackboneConfig& backbone) {
  LimConfig c;
  c.slots = backbone.slots;
  c.dim = backbone.dim;
  c.pe_max_len = std::max(backbone.slots, backbone.max_text_len);
  return c;
}

LimParams init_lim(const LimConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.dim, f = config.ffn_mult * config.dim;
  LimParams p;
  p.config = config;
  p.queries = init::normal(rng, config.slots, d, 0.02);
  for (std::size_t l = 0; l < config.layers; ++l) {
    LimLayer y;
    y.lnq_gamma = Matrix(1, d, 1.0);
    y.lnq_beta = Matrix(1, d, 0.0);
    y.lnt_gamma = Matrix(1, d, 1.0);
    y.lnt_beta = Matrix(1, d, 0.0);
    if (config.projected) {
      y.wq = init::xavier(rng, d, d);
      y.wk = init::xavier(rng, d, d);
      y.wv = init::xavier(rng, d, d);
      y.wo = init::xavier(rng, d, d);
    }
    y.lnf_gamma = Matrix(1, d, 1.0);
    y.lnf_beta = Matrix(1, d, 0.0);
    y.ffn_w1 = init::xavier(rng, d, f);
    y.ffn_b1 = Matrix(1, f, 0.0);
    y.ffn_w2 = init::xavier(rng, f, d);
    y.ffn_b2 = Matrix(1, d, 0.0);
    p.layers.push_back(std::move(y));
  }
  LimParams::visit(p, [](const std::string&, Matrix& m) { round_to_f32(m); });
  return p;
}

std::vector<Matrix*> LimParams::tensors() {
  std::vector<Matrix*> out;
  visit(*this, [&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::uint64_t LimParams::digest() const {
  Fnv1a h;
  for_each([&](const std::string& name, const Matrix& m) { h.tensor(name, m); });
  return h.value();
}

double LimParams::squared_norm() const {
  double s = 0.0;
  for_each([&](const std::string&, const Matrix& m) {
    for (double v : m.values()) s += v * v;
  });
  return s;
}

LimGraph::LimGraph(Tape& tape, const LimParams& params, Mode mode)
    : tape_(&tape), params_(&params), positions_(params.config.pe_max_len, params.config.dim) {
  std::vector<Var> vars;
  params.for_each([&](const std::string&, const Matrix& m) {
    vars.push_back(mode == Mode::parameter ? tape.parameter_view(m) : tape.constant_view(m));
  });
  assign(vars);
}

LimGraph::LimGraph(Tape& tape, const LimParams& params, std::span<const Var> vars)
    : tape_(&tape), params_(&params), positions_(params.config.pe_max_len, params.config.dim) {
  assign(vars);
}

void LimGraph::assign(std::span<const Var> vars) {
  const bool projected = params_->config.projected;
  const std::size_t per_layer = projected ? 14 : 10;
  const std::size_t expected = 1 + per_layer * params_->layers.size();
  if (vars.size() != expected) {
    throw ShapeError("lim graph expects " + std::to_string(expected) + " tensors, got " +
                     std::to_string(vars.size()));
  }
  vars_.assign(vars.begin(), vars.end());
  std::size_t i = 0;
  queries_ = vars[i++];
  layers_.clear();
  for (std::size_t l = 0; l < params_->layers.size(); ++l) {
    LayerVars y;
    y.lnq_gamma = vars[i++];
    y.lnq_beta = vars[i++];
    y.lnt_gamma = vars[i++];
    y.lnt_beta = vars[i++];
    if (projected) {
      y.wq = vars[i++];
      y.wk = vars[i++];
      y.wv = vars[i++];
      y.wo = vars[i++];
    }
    y.lnf_gamma = vars[i++];
    y.lnf_beta = vars[i++];
    y.w1 = vars[i++];
    y.b1 = vars[i++];
    y.w2 = vars[i++];
    y.b2 = vars[i++];
    layers_.push_back(y);
  }
}

Var LimGraph::forward(Var text_embeddings) const {
  Tape& t = *tape_;
  const LimConfig& cfg = params_->config;
  const Matrix& et = t.value(text_embeddings);
  if (et.cols() != cfg.dim) {
    throw ShapeError("lim_forward: text embeddings " + shape_string(et) + " need " +
                     std::to_string(cfg.dim) + " columns");
  }
  if (et.rows() < 1 || et.rows() > cfg.pe_max_len) {
    throw ShapeError("lim_forward: text length " + std::to_string(et.rows()) + " outside [1, " +
                     std::to_string(cfg.pe_max_len) + "]");
  }
  Var q = t.add(queries_, t.constant(positions_.prefix(cfg.slots)));
  const Var text = t.add(text_embeddings, t.constant(positions_.prefix(et.rows())));
  for (const LayerVars& y : layers_) {
    const Var qn = t.layer_norm(q, y.lnq_gamma, y.lnq_beta, kLayerNormEps);
    const Var tn = t.layer_norm(text, y.lnt_gamma, y.lnt_beta, kLayerNormEps);
    Var att;
    if (cfg.projected) {
      att = attention(t, t.matmul(qn, y.wq), t.matmul(tn, y.wk), t.matmul(tn, y.wv), cfg.heads);
      att = t.matmul(att, y.wo);
    } else {
      att = attention(t, qn, tn, tn, 1);
    }
    const Var qhat = t.add(q, att);
    const Var f = t.layer_norm(qhat, y.lnf_gamma, y.lnf_beta, kLayerNormEps);
    const Var hidden = t.gelu(t.add_row(t.matmul(f, y.w1), y.b1));
    q = t.add(qhat, t.add_row(t.matmul(hidden, y.w2), y.b2));
  }
  return q;
}

VisualEmbeddings lim_forward(const LimParams& params, const Matrix& text_embeddings) {
  Tape tape;
  const LimGraph g(tape, params, LimGraph::Mode::constant);
  return VisualEmbeddings{tape.value(g.forward(tape.constant_view(text_embeddings)))};
}

AnswerDistribution imagine(const LimParams& lim, const BackboneParams& backbone,
                           std::span<const std::uint32_t> text) {
  lim.config.require_compatible(backbone.config);
  Tape tape;
  const BackboneGraph bg(tape, backbone, BackboneGraph::Mode::constant);
  const LimGraph lg(tape, lim, LimGraph::Mode::constant);
  const Var slots = lg.forward(bg.embed_text(text));
  const Var logits = bg.logits(slots, text);
  return make_distribution(tape.value(logits), backbone.config.slots + text.size());
}

std::size_t lim_forward_flops(const LimConfig& config, std::size_t text_len) {
  const std::size_t n = config.slots, d = config.dim, f = config.ffn_mult * config.dim;
  const std::size_t l = text_len;
  std::size_t per_layer = 0;
  if (config.projected) {
    per_layer += 2 * matmul_flops(n, d, d);  // query and output projections
    per_layer += 2 * matmul_flops(l, d, d);  // key and value projections
  }
  per_layer += 2 * matmul_flops(n, d, l);  // scores and weighted values, all heads
  per_layer += matmul_flops(n, d, f) + matmul_flops(n, f, d);
  return config.layers * per_layer;
}

}  // namespace limcal
