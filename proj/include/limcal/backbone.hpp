#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "limcal/digest.hpp"
#include "limcal/matrix.hpp"
#include "limcal/tape.hpp"

namespace limcal {

using TokenIds = std::vector<std::uint32_t>;

struct BackboneConfig {
  std::size_t vocab_text = 64;
  // One blank id plus one id per (shape, color) pair of the synthetic task.
  std::size_t vocab_image = 33;
  std::size_t dim = 32;
  std::size_t slots = 8;
  std::size_t max_text_len = 24;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t choices = 4;

  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

struct BackboneBlock {
  Matrix ln1_gamma, ln1_beta;
  Matrix wq, wk, wv, wo;
  Matrix ln2_gamma, ln2_beta;
  Matrix ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Weights of the toy multimodal transformer.
//
// Once frozen, trainable_tensors() refuses to hand out mutable references and
// assert_frozen() compares the current content digest to the one taken at
// freeze time.
class BackboneParams {
 public:
  BackboneConfig config;
  Matrix text_embed;   // vocab_text x D
  Matrix image_embed;  // vocab_image x D
  Matrix vision_proj;  // D x D
  Matrix pos_embed;    // (slots + max_text_len) x D, learned
  std::vector<BackboneBlock> blocks;
  Matrix final_gamma, final_beta;
  Matrix head_w;  // D x C
  Matrix head_b;  // 1 x C

  // Visits every tensor in a fixed order with a stable name.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn);

  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  void freeze();
  bool frozen() const { return frozen_; }
  std::uint64_t frozen_digest() const { return frozen_digest_; }
  void assert_frozen() const;
  std::uint64_t digest() const;

  // Mutable tensor pointers in visit order; throws FrozenViolation if frozen.
  std::vector<Matrix*> trainable_tensors();

 private:
  bool frozen_ = false;
  std::uint64_t frozen_digest_ = 0;
};

template <typename Self, typename Fn>
void BackboneParams::visit(Self& self, Fn&& fn) {
  fn(std::string("text_embed"), self.text_embed);
  fn(std::string("image_embed"), self.image_embed);
  fn(std::string("vision_proj"), self.vision_proj);
  fn(std::string("pos_embed"), self.pos_embed);
  for (std::size_t l = 0; l < self.blocks.size(); ++l) {
    auto& b = self.blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    fn((p + "ln1_gamma"), b.ln1_gamma);
    fn((p + "ln1_beta"), b.ln1_beta);
    fn((p + "wq"), b.wq);
    fn((p + "wk"), b.wk);
    fn((p + "wv"), b.wv);
    fn((p + "wo"), b.wo);
    fn((p + "ln2_gamma"), b.ln2_gamma);
    fn((p + "ln2_beta"), b.ln2_beta);
    fn((p + "ffn_w1"), b.ffn_w1);
    fn((p + "ffn_b1"), b.ffn_b1);
    fn((p + "ffn_w2"), b.ffn_w2);
    fn((p + "ffn_b2"), b.ffn_b2);
  }
  fn(std::string("final_gamma"), self.final_gamma);
  fn(std::string("final_beta"), self.final_beta);
  fn(std::string("head_w"), self.head_w);
  fn(std::string("head_b"), self.head_b);
}

// Randomly initialized backbone; tensors are rounded to 32-bit floats.
BackboneParams init_backbone(const BackboneConfig& config, std::uint64_t seed);

// N x D visual-slot embeddings.
struct VisualEmbeddings {
  Matrix rows;
};

enum class InjectionSource { lim, zero, trivial_token, random_scaled, random_gauss, blank_image };

std::string_view to_string(InjectionSource source);

struct Paired {
  VisualEmbeddings visual;
};
struct TextOnly {};
struct Injected {
  VisualEmbeddings visual;
  InjectionSource source = InjectionSource::lim;
};

using ModalityInput = std::variant<Paired, TextOnly, Injected>;

struct AnswerDistribution {
  std::vector<double> logits;
  std::vector<double> probs;
  // Length of the sequence the transformer stack consumed.
  std::size_t sequence_length = 0;

  // Lowest index wins ties.
  std::size_t argmax() const;
};

// Tape bindings of the backbone weights. Bound as constants (frozen use) or
// parameters (pretraining); the backward pass reaches injected visual rows
// either way.
class BackboneGraph {
 public:
  enum class Mode { constant, parameter };

  BackboneGraph(Tape& tape, const BackboneParams& params, Mode mode);
  // Binds caller-made vars (one per tensor, visit order) instead.
  BackboneGraph(Tape& tape, const BackboneParams& params, std::span<const Var> vars);

  Tape& tape() const { return *tape_; }
  const BackboneConfig& config() const { return params_->config; }
  // Parameter vars in BackboneParams visit order.
  std::span<const Var> vars() const { return vars_; }

  Var embed_text(std::span<const std::uint32_t> text) const;
  Var encode_image(std::span<const std::uint32_t> image) const;
  // visual == nullopt is the text-only path (no slots at all).
  Var logits(std::optional<Var> visual, std::span<const std::uint32_t> text) const;

 private:
  struct BlockVars {
    Var ln1_gamma, ln1_beta, wq, wk, wv, wo, ln2_gamma, ln2_beta, w1, b1, w2, b2;
  };

  void assign(std::span<const Var> vars);

  Tape* tape_;
  const BackboneParams* params_;
  std::vector<Var> vars_;
  Var text_embed_, image_embed_, vision_proj_, pos_embed_;
  std::vector<BlockVars> blocks_;
  Var final_gamma_, final_beta_, head_w_, head_b_;
};

void validate_text(const BackboneConfig& config, std::span<const std::uint32_t> text);
void validate_image(const BackboneConfig& config, std::span<const std::uint32_t> image);

VisualEmbeddings encode_image(const BackboneParams& params, std::span<const std::uint32_t> image);
Matrix embed_text(const BackboneParams& params, std::span<const std::uint32_t> text);
AnswerDistribution forward(const BackboneParams& params, const ModalityInput& input,
                           std::span<const std::uint32_t> text);

AnswerDistribution make_distribution(const Matrix& logits, std::size_t sequence_length);

// Analytic matmul FLOPs of one forward pass over a sequence of `seq_len` rows.
std::size_t backbone_forward_flops(const BackboneConfig& config, std::size_t seq_len);

}  // namespace limcal
