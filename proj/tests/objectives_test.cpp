#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace rosita;

namespace {

ModelParams zero_heads(int vocab = 6, int classes = 4) {
  ModelConfig c;
  c.hidden = 4;
  c.heads = 2;
  c.ffn = 4;
  c.visual_dim = 3;
  c.vocab_size = vocab;
  c.num_classes = classes;
  c.max_regions = 3;
  c.max_tokens = 4;
  return ModelParams::zeros(c);
}

Matrix hidden(const ModelConfig& c, double fill = 0.3) {
  Matrix h(c.seq_len(), c.hidden);
  h.fill(fill);
  return h;
}

}  // namespace

TEST(Objectives, UniformWordHeadGivesLogV) {
  const ModelParams p = zero_heads(6);
  const auto r = word_prediction_loss(hidden(p.config), {5, 6}, {1, 3}, p);
  EXPECT_NEAR(r.loss, std::log(6.0), 1e-12);
  EXPECT_EQ(r.count, 2);
}

TEST(Objectives, HandSetWordLogits) {
  ModelParams p = zero_heads(3);
  p.word_head_b = Matrix::from_rows({{2.0, 0.0, -1.0}});
  const auto r = word_prediction_loss(hidden(p.config), {4, 5}, {0, 2}, p);
  const double z = std::log(std::exp(2.0) + 1.0 + std::exp(-1.0));
  EXPECT_NEAR(r.loss, 0.5 * ((z - 2.0) + (z + 1.0)), 1e-12);
  EXPECT_EQ(r.correct, 1);
}

TEST(Objectives, ItmHandLogits) {
  ModelParams p = zero_heads();
  p.itm_b = Matrix::from_rows({{2.0, 0.0}});
  const auto r = itm_prediction_loss(hidden(p.config), p.config.cls_index(), kMatched, p);
  EXPECT_NEAR(r.loss, 0.1269, 5e-5);
  EXPECT_NEAR(itm_prediction_loss(hidden(p.config), p.config.cls_index(), kMismatched, zero_heads()).loss,
              std::log(2.0), 1e-12);
}

TEST(Objectives, RegionLossZeroOutputUnitTarget) {
  const ModelParams p = zero_heads(6, 4);
  Region t;
  t.visual_feature = {0.6, 0.8, 0.0};
  t.class_distribution = {0, 1, 0, 0};
  EXPECT_NEAR(region_prediction_loss(hidden(p.config), {0}, {&t}, p).loss, 1.0 + std::log(4.0), 1e-12);
  Region doubled = t;
  for (auto& x : doubled.visual_feature) x *= 2;
  EXPECT_NEAR(region_prediction_loss(hidden(p.config), {0}, {&doubled}, p).loss, 4.0 + std::log(4.0), 1e-12);
}

TEST(Objectives, RegionLossFloorIsTargetEntropy) {
  ModelParams p = zero_heads(6, 2);
  const std::vector<double> q{0.25, 0.75};
  p.region_cls_b = Matrix::from_rows({{std::log(q[0]), std::log(q[1])}});
  Region t;
  t.visual_feature = {0, 0, 0};
  t.class_distribution = q;
  const double entropy = -(q[0] * std::log(q[0]) + q[1] * std::log(q[1]));
  EXPECT_NEAR(region_prediction_loss(hidden(p.config), {1}, {&t}, p).loss, entropy, 1e-12);
}

TEST(Objectives, LossOnlyReadsMaskedPositions) {
  ModelParams p = ModelParams::initialize(zero_heads().config, 2);
  Matrix h = hidden(p.config);
  Rng rng(3);
  for (auto& x : h.data()) x = rng.normal();
  const double before = word_prediction_loss(h, {5}, {2}, p).loss;
  for (std::size_t k = 0; k < h.cols(); ++k) h(4, k) += 3.0;
  EXPECT_EQ(word_prediction_loss(h, {5}, {2}, p).loss, before);
}

TEST(Objectives, EmptyMasksRejected) {
  const ModelParams p = zero_heads();
  EXPECT_THROW(word_prediction_loss(hidden(p.config), {}, {}, p), Error);
  EXPECT_THROW(region_prediction_loss(hidden(p.config), {}, {}, p), Error);
}

TEST(Objectives, FallbackWhenNoAnchor) {
  SynthSpec spec;
  spec.num_pairs = 4;
  Corpus corpus = generate_synthetic(spec, 2);
  // strip every object word so no entry exists
  for (auto& pair : corpus.pairs) {
    pair.gold_alignments.reset();
    for (auto& r : pair.regions) r.tag = "nothing-matches";
  }
  const SynthWorld world = make_synth_world(spec, 2);
  const EmbeddingTable table = [] {
    EmbeddingTable t;
    t.add("unused", {1.0});
    return t;
  }();
  const KnowledgeBase kb(corpus, synthetic_lexicon(world), table, MaskingStrategy{});
  PlanCounters counters;
  const auto batch = plan_batch(Task::Skmlm, {0, 1, 2}, kb, {}, 5, &counters);
  for (const auto& ex : batch) {
    EXPECT_TRUE(ex.fallback);
    EXPECT_EQ(ex.task, Task::Mlm);
  }
  ModelConfig c;
  const auto loss = multitask_step(Task::Skmlm, batch, ModelParams::initialize(c, 1));
  EXPECT_EQ(loss.fallbacks, 3);
  EXPECT_TRUE(std::isfinite(loss.loss));
}
