#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "test_support.hpp"

using namespace rosita;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.synthetic = SynthSpec{};
  c.synthetic->num_pairs = 24;
  c.synthetic->validation_pairs = 12;
  c.model.hidden = 16;
  c.model.heads = 2;
  c.model.ffn = 32;
  c.batch_size = 4;
  c.steps = 30;
  c.eval_repeats = 1;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("rosita_" + std::to_string(::getpid()) + "_" + name)).string();
}

}  // namespace

TEST(Trainer, StrategyNamesRoundTrip) {
  for (const std::string s : {"full", "no-cross", "no-intra", "no-knowledge", "identical:0.30"})
    EXPECT_EQ(MaskingStrategy::parse(s).name(), s);
  EXPECT_EQ(MaskingStrategy::parse("identical-prob(0.45)").identical_p, 0.45);
  EXPECT_THROW(MaskingStrategy::parse("identical:1.5"), Error);
  EXPECT_THROW(MaskingStrategy::parse("sometimes"), Error);
}

TEST(Trainer, OverridesReachNestedKeys) {
  const TrainConfig c =
      load_train_config("", {"model.hidden=16", "alpha=0.5", "strategy=no-intra", "synthetic.num_pairs=7"});
  EXPECT_EQ(c.model.hidden, 16);
  EXPECT_EQ(c.alpha, 0.5);
  EXPECT_EQ(c.strategy.mode, MaskingMode::NoIntra);
  ASSERT_TRUE(c.synthetic);
  EXPECT_EQ(c.synthetic->num_pairs, 7);
  EXPECT_THROW(load_train_config("", {"alpha"}), Error);
}

TEST(Trainer, ConfigRejectsBadValues) {
  TrainConfig c = small_config();
  c.alpha = 1.2;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.random_rate = -0.1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Trainer, ZeroStepsWritesInitialCheckpointOnly) {
  TrainConfig c = small_config();
  c.steps = 0;
  c.checkpoint = temp_path("zero.ckpt");
  const TrainingData d = load_training_data(c);
  std::ostringstream log;
  const TrainResult r = train(c, d, &log);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(log.str(), std::string(kMetricsHeader) + "\n");
  const Checkpoint ck = load_checkpoint(c.checkpoint);
  EXPECT_EQ(ck.step, 0u);
  EXPECT_TRUE(ck.params == ModelParams::initialize(c.model, derive_seed(c.seed, 1)));
  std::remove(c.checkpoint.c_str());
}

TEST(Trainer, SameSeedSameMetricsLog) {
  const TrainConfig c = small_config();
  const TrainingData d = load_training_data(c);
  std::ostringstream a, b;
  train(c, d, &a);
  train(c, d, &b);
  EXPECT_EQ(a.str(), b.str());
  TrainConfig other = c;
  other.seed = 2;
  std::ostringstream o;
  train(other, d, &o);
  EXPECT_NE(a.str(), o.str());
}

TEST(Trainer, CheckpointRoundTripIsBitwise) {
  const TrainConfig c = small_config();
  const TrainingData d = load_training_data(c);
  const TrainResult r = train(c, d);
  std::stringstream buf;
  write_checkpoint(buf, r.params, 30);
  const std::string bytes = buf.str();
  const Checkpoint ck = read_checkpoint(buf);
  EXPECT_TRUE(ck.params == r.params);
  std::stringstream again;
  write_checkpoint(again, ck.params, 30);
  EXPECT_EQ(again.str(), bytes);
  const KnowledgeBase kb(d.validation, d.lexicon, d.embeddings, MaskingStrategy{});
  EXPECT_EQ(evaluate(r.params, kb), evaluate(ck.params, kb));
}

TEST(Trainer, CorruptCheckpointRejected) {
  std::stringstream bad("NOTACKPT");
  EXPECT_THROW(read_checkpoint(bad), Error);
  const TrainConfig c = small_config();
  std::stringstream buf;
  write_checkpoint(buf, ModelParams::initialize(c.model, 1), 0);
  std::string s = buf.str();
  s.resize(s.size() / 2);
  std::stringstream truncated(s);
  EXPECT_THROW(read_checkpoint(truncated), Error);
}

TEST(Trainer, DivergenceSavesLastGoodCheckpoint) {
  TrainConfig c = small_config();
  c.learning_rate = 1e4;
  c.clip_norm = 0;
  c.warmup_steps = 0;
  c.steps = 200;
  c.checkpoint = temp_path("diverge.ckpt");
  const TrainingData d = load_training_data(c);
  EXPECT_THROW(train(c, d), TrainingError);
  const Checkpoint ck = load_checkpoint(c.checkpoint + ".last-good");
  EXPECT_TRUE(ck.params.all_finite());
  std::remove(c.checkpoint.c_str());
  std::remove((c.checkpoint + ".last-good").c_str());
}

TEST(Trainer, UntrainedModelNearChance) {
  TrainConfig c = small_config();
  c.synthetic->validation_pairs = 60;
  const TrainingData d = load_training_data(c);
  const KnowledgeBase kb(d.validation, d.lexicon, d.embeddings, MaskingStrategy{});
  const EvalReport r = evaluate(ModelParams::initialize(c.model, 3), kb, {0.9, 2, 1});
  ASSERT_TRUE(r.skmlm && r.skmrm && r.itm);
  EXPECT_LT(r.skmlm->percent(), 12.0);
  EXPECT_EQ(r.itm->total, 120);
  for (const auto& a : {*r.itm, *r.skmlm, *r.skmrm}) {
    EXPECT_GE(a.percent(), 0.0);
    EXPECT_LE(a.percent(), 100.0);
  }
}

TEST(Trainer, SplitWithoutAnchorsReportsAbsent) {
  TrainConfig c = small_config();
  TrainingData d = load_training_data(c);
  for (auto& p : d.validation.pairs)
    for (auto& r : p.regions) r.tag = "unmatched";
  const KnowledgeBase kb(d.validation, d.lexicon, d.embeddings, MaskingStrategy{});
  const EvalReport r = evaluate(ModelParams::initialize(c.model, 3), kb, {0.9, 1, 1});
  EXPECT_TRUE(r.itm);
  EXPECT_FALSE(r.skmlm);
  EXPECT_FALSE(r.skmrm);
}

TEST(Trainer, NoCrossModeNeverUsesCrossEdges) {
  TrainConfig c = small_config();
  c.strategy = MaskingStrategy::parse("no-cross");
  const TrainingData d = load_training_data(c);
  const TrainResult r = train(c, d);
  EXPECT_GT(r.counters.skm_plans, 0);
  EXPECT_EQ(r.counters.cross_edges_used, 0);
  EXPECT_GT(r.counters.intra_edges_used, 0);

  c.strategy = MaskingStrategy{};
  EXPECT_GT(train(c, d).counters.cross_edges_used, 0);
}

TEST(Trainer, NoKnowledgeModeOnlyRandomMasks) {
  TrainConfig c = small_config();
  c.strategy = MaskingStrategy::parse("no-knowledge");
  const TrainingData d = load_training_data(c);
  const TrainResult r = train(c, d);
  EXPECT_EQ(r.counters.skm_plans, 0);
  for (const auto& s : r.history) {
    if (s.task == Task::Skmlm || s.task == Task::Skmrm) {
      EXPECT_EQ(s.fallbacks, c.batch_size);
    }
  }
}

TEST(Trainer, IdenticalModeMasksContextsAtP) {
  const rosita::testing::Fig2 f;
  const KnowledgeBase kb(f.corpus, f.lexicon, f.embeddings, MaskingStrategy::parse("identical:0.45"));
  const auto& entry = kb[0].word_entries.front();
  const MaskPlan plan = plan_for_entry(entry, kb.strategy(), 0.9, 1);
  EXPECT_EQ(plan.probabilities.front(), 1.0);
  for (std::size_t i = 1; i < plan.probabilities.size(); ++i) EXPECT_EQ(plan.probabilities[i], 0.45);
}

TEST(Trainer, ParallelPreparationMatchesSerial) {
  const TrainConfig c = small_config();
  const TrainingData d = load_training_data(c);
  const KnowledgeBase a(d.train, d.lexicon, d.embeddings, MaskingStrategy{}, kCrossModalThreshold, 1);
  const KnowledgeBase b(d.train, d.lexicon, d.embeddings, MaskingStrategy{}, kCrossModalThreshold, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].graph.S, b[i].graph.S);
    EXPECT_EQ(a[i].word_entries.size(), b[i].word_entries.size());
  }
}

TEST(Trainer, AttentionExportRows) {
  const TrainConfig c = small_config();
  const TrainingData d = load_training_data(c);
  const ModelParams p = ModelParams::initialize(c.model, 4);
  const auto& pair = d.validation.pairs.front();
  const AttentionExport one = export_attention(p, pair, {2}, {});
  ASSERT_EQ(one.rows.size(), 1u);
  EXPECT_EQ(one.rows[0].direction, "word-to-regions");
  EXPECT_EQ(one.rows[0].weights.size(), pair.regions.size());
  double s = 0;
  for (double w : one.rows[0].weights) s += w;
  EXPECT_NEAR(s, 1.0, 1e-12);
  const AttentionExport none = export_attention(p, pair, {}, {});
  EXPECT_TRUE(none.rows.empty());
  EXPECT_EQ(none.aggregated.rows(), static_cast<std::size_t>(c.model.seq_len()));
  const AttentionExport both = export_attention(p, pair, {1, 3}, {0});
  EXPECT_EQ(both.rows.size(), 3u);
  EXPECT_EQ(both.rows[2].direction, "region-to-words");
  EXPECT_THROW(export_attention(p, pair, {99}, {}), Error);
}

TEST(Trainer, AblationReportHasOneRowPerMode) {
  TrainConfig c = small_config();
  c.steps = 5;
  const TrainingData d = load_training_data(c);
  const std::vector<MaskingStrategy> modes{MaskingStrategy::parse("full"), MaskingStrategy::parse("no-knowledge"),
                                           MaskingStrategy::parse("identical:0.15")};
  const auto rows = run_ablation(c, d, modes);
  ASSERT_EQ(rows.size(), 3u);
  const std::string table = format_ablation_table(rows);
  EXPECT_NE(table.find("identical:0.15"), std::string::npos);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 4);
}
