#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "limcal/backbone.hpp"
#include "limcal/errors.hpp"
#include "limcal/numerics.hpp"
#include "oracles.hpp"

using namespace limcal;
using fixtures::random_backbone;
using fixtures::random_tokens;

namespace {

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(BackboneConfig, RejectsIndivisibleHeads) {
  BackboneConfig c;
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.choices = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EncodeImage, BlankTokensGiveIdenticalRows) {
  const BackboneParams p = random_backbone(1);
  const VisualEmbeddings v = encode_image(p, TokenIds(8, 0));
  ASSERT_EQ(v.rows.rows(), 8u);
  for (std::size_t i = 1; i < 8; ++i)
    for (std::size_t j = 0; j < v.rows.cols(); ++j) EXPECT_EQ(v.rows(i, j), v.rows(0, j));
}

TEST(EncodeImage, OneTokenChangeTouchesOneRow) {
  const BackboneParams p = random_backbone(2);
  TokenIds a = {1, 2, 3, 0, 0, 5, 0, 7};
  TokenIds b = a;
  b[5] = 9;
  const Matrix va = encode_image(p, a).rows, vb = encode_image(p, b).rows;
  for (std::size_t i = 0; i < 8; ++i) {
    bool same = true;
    for (std::size_t j = 0; j < va.cols(); ++j) same = same && va(i, j) == vb(i, j);
    EXPECT_EQ(same, i != 5) << "row " << i;
  }
}

TEST(EncodeImage, DeterministicAndMatchesOracle) {
  const BackboneParams p = random_backbone(3);
  const TokenIds img = {1, 0, 4, 0, 32, 0, 0, 3};
  EXPECT_EQ(encode_image(p, img).rows, encode_image(p, img).rows);
  EXPECT_LT(max_abs_diff(encode_image(p, img).rows, oracle::encode_image(p, img)), 1e-12);
}

TEST(EncodeImage, RejectsWrongCountAndVocabulary) {
  const BackboneParams p = random_backbone(4);
  EXPECT_THROW(encode_image(p, TokenIds(7, 0)), InputError);
  TokenIds bad(8, 0);
  bad[2] = 33;
  EXPECT_THROW(encode_image(p, bad), InputError);
}

TEST(EmbedText, RowsAreTableLookups) {
  const BackboneParams p = random_backbone(5);
  const Matrix one = embed_text(p, TokenIds{9});
  ASSERT_EQ(one.rows(), 1u);
  for (std::size_t j = 0; j < one.cols(); ++j) EXPECT_EQ(one(0, j), p.text_embed(9, j));

  const Matrix rep = embed_text(p, TokenIds{4, 4, 4});
  for (std::size_t j = 0; j < rep.cols(); ++j) {
    EXPECT_EQ(rep(0, j), rep(1, j));
    EXPECT_EQ(rep(1, j), rep(2, j));
  }

  const Matrix ab = embed_text(p, TokenIds{3, 7, 11}), ba = embed_text(p, TokenIds{11, 3, 7});
  for (std::size_t j = 0; j < ab.cols(); ++j) {
    EXPECT_EQ(ab(0, j), ba(1, j));
    EXPECT_EQ(ab(2, j), ba(0, j));
  }
}

TEST(EmbedText, RejectsBadInput) {
  const BackboneParams p = random_backbone(6);
  EXPECT_THROW(embed_text(p, TokenIds{}), InputError);
  EXPECT_THROW(embed_text(p, TokenIds(25, 1)), InputError);
  EXPECT_THROW(embed_text(p, TokenIds{64}), InputError);
}

TEST(Forward, SequenceLengthContract) {
  const BackboneParams p = random_backbone(7);
  const TokenIds text = {8, 32, 9, 33, 1, 2, 3, 8, 4};
  const auto visual = encode_image(p, TokenIds(8, 0));
  EXPECT_EQ(forward(p, TextOnly{}, text).sequence_length, text.size());
  EXPECT_EQ(forward(p, Paired{visual}, text).sequence_length, 8 + text.size());
  EXPECT_EQ(forward(p, Injected{visual, InjectionSource::zero}, text).sequence_length,
            8 + text.size());
}

TEST(Forward, InjectionOfEncodedImageEqualsPairedBitExactly) {
  const BackboneParams p = random_backbone(8);
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const TokenIds img = random_tokens(rng, 8, 33);
    const TokenIds text = random_tokens(rng, 13, 64);
    const auto z = encode_image(p, img);
    EXPECT_EQ(forward(p, Paired{z}, text).logits,
              forward(p, Injected{z, InjectionSource::blank_image}, text).logits);
  }
}

TEST(Forward, MatchesStraightLineOracle) {
  const BackboneParams p = random_backbone(9);
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const TokenIds img = random_tokens(rng, 8, 33);
    const TokenIds text = random_tokens(rng, 1 + rng.below(24), 64);
    const Matrix z = oracle::encode_image(p, img);
    EXPECT_LT(max_diff(forward(p, Paired{encode_image(p, img)}, text).logits,
                       oracle::backbone_logits(p, &z, text)),
              1e-10);
    EXPECT_LT(max_diff(forward(p, TextOnly{}, text).logits, oracle::backbone_logits(p, nullptr, text)),
              1e-10);
  }
}

TEST(Forward, ProbsNormalizedAndArgmaxLowestOnTies) {
  const BackboneParams p = random_backbone(10);
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const auto d = forward(p, TextOnly{}, random_tokens(rng, 1 + rng.below(24), 64));
    double s = 0.0;
    for (double v : d.probs) s += v;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  const auto tie = make_distribution(Matrix::from_rows({{0.5, 2.0, 2.0, -1.0}}), 1);
  EXPECT_EQ(tie.argmax(), 1u);
}

TEST(Forward, RejectsMisshapenInjection) {
  const BackboneParams p = random_backbone(11);
  EXPECT_THROW(forward(p, Injected{VisualEmbeddings{Matrix(7, 32)}}, TokenIds{1, 2}), InputError);
  EXPECT_THROW(forward(p, Injected{VisualEmbeddings{Matrix(8, 31)}}, TokenIds{1, 2}), InputError);
}

TEST(Forward, TextOnlyIgnoresImageData) {
  const BackboneParams p = random_backbone(12);
  const TokenIds text = {8, 33, 10, 34, 1, 2, 3, 10, 4};
  const auto a = forward(p, TextOnly{}, text);
  // The text-only path has no image input at all; repeated calls with
  // different images in flight must not perturb it.
  (void)forward(p, Paired{encode_image(p, TokenIds{1, 2, 3, 4, 5, 6, 7, 8})}, text);
  EXPECT_EQ(a.logits, forward(p, TextOnly{}, text).logits);
}

TEST(Freeze, DigestStableAcrossForwardCalls) {
  BackboneParams p = random_backbone(13);
  p.freeze();
  Rng rng(13);
  for (int i = 0; i < 10000; ++i) (void)forward(p, TextOnly{}, random_tokens(rng, 3, 64));
  EXPECT_NO_THROW(p.assert_frozen());
  EXPECT_EQ(p.digest(), p.frozen_digest());
}

TEST(Freeze, PerturbationIsDetected) {
  BackboneParams p = random_backbone(14);
  EXPECT_THROW(p.assert_frozen(), FrozenViolation);
  p.freeze();
  EXPECT_THROW(p.trainable_tensors(), FrozenViolation);
  p.blocks[1].wv(3, 4) += 1e-7;
  EXPECT_THROW(p.assert_frozen(), FrozenViolation);
}

TEST(Flops, ClosedFormSquareMatmul) {
  EXPECT_EQ(matmul_flops(32, 32, 32), 2u * 32 * 32 * 32);
}
