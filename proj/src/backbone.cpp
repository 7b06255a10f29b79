#include "limcal/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "limcal/errors.hpp"
#include "limcal/numerics.hpp"
#include "limcal/rng.hpp"
#include "init.hpp"

namespace limcal {

void BackboneConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("backbone: dim " + std::to_string(dim) +
                      " must be a positive multiple of heads " + std::to_string(heads));
  }
  if (slots < 1) throw ConfigError("backbone: slots must be >= 1");
  if (choices < 2) throw ConfigError("backbone: choices must be >= 2");
  if (vocab_text < 1 || vocab_image < 1) throw ConfigError("backbone: empty vocabulary");
  if (max_text_len < 1) throw ConfigError("backbone: max_text_len must be >= 1");
  if (ffn_mult < 1) throw ConfigError("backbone: ffn_mult must be >= 1");
}

BackboneParams init_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.dim, f = config.ffn_mult * config.dim;
  BackboneParams p;
  p.config = config;
  p.text_embed = init::normal(rng, config.vocab_text, d, 0.1);
  p.image_embed = init::normal(rng, config.vocab_image, d, 0.1);
  p.vision_proj = init::xavier(rng, d, d);
  p.pos_embed = init::normal(rng, config.slots + config.max_text_len, d, 0.1);
  for (std::size_t l = 0; l < config.layers; ++l) {
    BackboneBlock b;
    b.ln1_gamma = Matrix(1, d, 1.0);
    b.ln1_beta = Matrix(1, d, 0.0);
    b.wq = init::xavier(rng, d, d);
    b.wk = init::xavier(rng, d, d);
    b.wv = init::xavier(rng, d, d);
    b.wo = init::xavier(rng, d, d);
    b.ln2_gamma = Matrix(1, d, 1.0);
    b.ln2_beta = Matrix(1, d, 0.0);
    b.ffn_w1 = init::xavier(rng, d, f);
    b.ffn_b1 = Matrix(1, f, 0.0);
    b.ffn_w2 = init::xavier(rng, f, d);
    b.ffn_b2 = Matrix(1, d, 0.0);
    p.blocks.push_back(std::move(b));
  }
  p.final_gamma = Matrix(1, d, 1.0);
  p.final_beta = Matrix(1, d, 0.0);
  p.head_w = init::xavier(rng, d, config.choices);
  p.head_b = Matrix(1, config.choices, 0.0);
  BackboneParams::visit(p, [](const std::string&, Matrix& m) { round_to_f32(m); });
  return p;
}

std::uint64_t BackboneParams::digest() const {
  Fnv1a h;
  for_each([&](const std::string& name, const Matrix& m) { h.tensor(name, m); });
  return h.value();
}

void BackboneParams::freeze() {
  frozen_ = true;
  frozen_digest_ = digest();
}

void BackboneParams::assert_frozen() const {
  if (!frozen_) throw FrozenViolation("backbone is not frozen");
  if (digest() != frozen_digest_) {
    throw FrozenViolation("backbone weights changed after freeze (digest mismatch)");
  }
}

std::vector<Matrix*> BackboneParams::trainable_tensors() {
  if (frozen_) throw FrozenViolation("refusing to update frozen backbone weights");
  std::vector<Matrix*> out;
  visit(*this, [&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::string_view to_string(InjectionSource source) {
  switch (source) {
    case InjectionSource::lim: return "lim";
    case InjectionSource::zero: return "zero";
    case InjectionSource::trivial_token: return "trivial_token";
    case InjectionSource::random_scaled: return "random_scaled";
    case InjectionSource::random_gauss: return "random_gauss";
    case InjectionSource::blank_image: return "blank_image";
  }
  return "unknown";
}

std::size_t AnswerDistribution::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

BackboneGraph::BackboneGraph(Tape& tape, const BackboneParams& params, Mode mode)
    : tape_(&tape), params_(&params) {
  std::vector<Var> vars;
  params.for_each([&](const std::string&, const Matrix& m) {
    vars.push_back(mode == Mode::parameter ? tape.parameter_view(m) : tape.constant_view(m));
  });
  assign(vars);
}

BackboneGraph::BackboneGraph(Tape& tape, const BackboneParams& params, std::span<const Var> vars)
    : tape_(&tape), params_(&params) {
  assign(vars);
}

void BackboneGraph::assign(std::span<const Var> vars) {
  const std::size_t expected = 8 + 12 * params_->blocks.size();
  if (vars.size() != expected) {
    throw ShapeError("backbone graph expects " + std::to_string(expected) + " tensors, got " +
                     std::to_string(vars.size()));
  }
  vars_.assign(vars.begin(), vars.end());
  std::size_t i = 0;
  text_embed_ = vars[i++];
  image_embed_ = vars[i++];
  vision_proj_ = vars[i++];
  pos_embed_ = vars[i++];
  blocks_.clear();
  for (std::size_t l = 0; l < params_->blocks.size(); ++l) {
    BlockVars b;
    b.ln1_gamma = vars[i++];
    b.ln1_beta = vars[i++];
    b.wq = vars[i++];
    b.wk = vars[i++];
    b.wv = vars[i++];
    b.wo = vars[i++];
    b.ln2_gamma = vars[i++];
    b.ln2_beta = vars[i++];
    b.w1 = vars[i++];
    b.b1 = vars[i++];
    b.w2 = vars[i++];
    b.b2 = vars[i++];
    blocks_.push_back(b);
  }
  final_gamma_ = vars[i++];
  final_beta_ = vars[i++];
  head_w_ = vars[i++];
  head_b_ = vars[i++];
}

void validate_text(const BackboneConfig& config, std::span<const std::uint32_t> text) {
  if (text.empty() || text.size() > config.max_text_len) {
    throw InputError("text length " + std::to_string(text.size()) + " outside [1, " +
                     std::to_string(config.max_text_len) + "]");
  }
  for (auto id : text) {
    if (id >= config.vocab_text) {
      throw InputError("text token " + std::to_string(id) + " out of vocabulary (size " +
                       std::to_string(config.vocab_text) + ")");
    }
  }
}

void validate_image(const BackboneConfig& config, std::span<const std::uint32_t> image) {
  if (image.size() != config.slots) {
    throw InputError("expected " + std::to_string(config.slots) + " image tokens, got " +
                     std::to_string(image.size()));
  }
  for (auto id : image) {
    if (id >= config.vocab_image) {
      throw InputError("image token " + std::to_string(id) + " out of vocabulary (size " +
                       std::to_string(config.vocab_image) + ")");
    }
  }
}

Var BackboneGraph::embed_text(std::span<const std::uint32_t> text) const {
  validate_text(config(), text);
  return tape_->gather_rows(text_embed_, text);
}

Var BackboneGraph::encode_image(std::span<const std::uint32_t> image) const {
  validate_image(config(), image);
  return tape_->matmul(tape_->gather_rows(image_embed_, image), vision_proj_);
}

Var BackboneGraph::logits(std::optional<Var> visual, std::span<const std::uint32_t> text) const {
  Tape& t = *tape_;
  const BackboneConfig& cfg = config();
  Var seq = embed_text(text);
  if (visual) {
    const Matrix& vv = t.value(*visual);
    if (vv.rows() != cfg.slots || vv.cols() != cfg.dim) {
      throw InputError("visual rows must be " + std::to_string(cfg.slots) + "x" +
                       std::to_string(cfg.dim) + ", got " + shape_string(vv));
    }
    seq = t.concat_rows(*visual, seq);
  }
  const std::size_t len = t.value(seq).rows();
  Var h = t.add(seq, t.slice_rows(pos_embed_, 0, len));
  for (const BlockVars& b : blocks_) {
    const Var a = t.layer_norm(h, b.ln1_gamma, b.ln1_beta, kLayerNormEps);
    const Var att = attention(t, t.matmul(a, b.wq), t.matmul(a, b.wk), t.matmul(a, b.wv), cfg.heads);
    h = t.add(h, t.matmul(att, b.wo));
    const Var f = t.layer_norm(h, b.ln2_gamma, b.ln2_beta, kLayerNormEps);
    const Var hidden = t.gelu(t.add_row(t.matmul(f, b.w1), b.b1));
    h = t.add(h, t.add_row(t.matmul(hidden, b.w2), b.b2));
  }
  h = t.layer_norm(h, final_gamma_, final_beta_, kLayerNormEps);
  return t.add_row(t.matmul(t.mean_rows(h), head_w_), head_b_);
}

VisualEmbeddings encode_image(const BackboneParams& params, std::span<const std::uint32_t> image) {
  Tape tape;
  const BackboneGraph g(tape, params, BackboneGraph::Mode::constant);
  return VisualEmbeddings{tape.value(g.encode_image(image))};
}

Matrix embed_text(const BackboneParams& params, std::span<const std::uint32_t> text) {
  Tape tape;
  const BackboneGraph g(tape, params, BackboneGraph::Mode::constant);
  return tape.value(g.embed_text(text));
}

AnswerDistribution make_distribution(const Matrix& logits, std::size_t sequence_length) {
  AnswerDistribution out;
  out.logits.assign(logits.values().begin(), logits.values().end());
  const Matrix probs = softmax_rows(logits);
  out.probs.assign(probs.values().begin(), probs.values().end());
  out.sequence_length = sequence_length;
  return out;
}

AnswerDistribution forward(const BackboneParams& params, const ModalityInput& input,
                           std::span<const std::uint32_t> text) {
  Tape tape;
  const BackboneGraph g(tape, params, BackboneGraph::Mode::constant);
  std::optional<Var> visual;
  if (const auto* p = std::get_if<Paired>(&input)) {
    visual = tape.constant_view(p->visual.rows);
  } else if (const auto* inj = std::get_if<Injected>(&input)) {
    visual = tape.constant_view(inj->visual.rows);
  }
  const Var logits = g.logits(visual, text);
  const std::size_t len = text.size() + (visual ? params.config.slots : 0);
  return make_distribution(tape.value(logits), len);
}

std::size_t backbone_forward_flops(const BackboneConfig& config, std::size_t seq_len) {
  const std::size_t d = config.dim, f = config.ffn_mult * config.dim, s = seq_len;
  std::size_t per_block = 4 * matmul_flops(s, d, d);  // q, k, v, o projections
  per_block += 2 * matmul_flops(s, d, s);             // scores and weighted values, all heads
  per_block += matmul_flops(s, d, f) + matmul_flops(s, f, d);
  return config.layers * per_block + matmul_flops(1, d, config.choices);
}

}  // namespace limcal
