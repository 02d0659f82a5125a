#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace rosita;
using rosita::testing::data_path;

namespace {

const char* kHeader =
    R"({"format":"rosita-corpus","version":1,"vocab":["[UNK]","a","dog"],"detector_classes":["dog","cat"]})";

std::string pair_line(const std::string& box, const std::string& dist = "[0.9,0.1]") {
  return R"({"pair_id":"p","image":{"width":100,"height":50,"regions":[{"box":)" + box +
         R"(,"tag":"dog","class_distribution":)" + dist +
         R"(,"visual_feature":[1,2]}]},"text":{"raw":"a dog"}})";
}

}  // namespace

TEST(Corpus, PositionalFeatureOfFullImage) {
  const auto f = positional_feature({0, 0, 100, 50}, 100, 50);
  EXPECT_EQ(f, (PositionalFeature{0, 0, 1, 1, 1}));
  const auto g = positional_feature({10, 10, 60, 30}, 100, 50);
  EXPECT_DOUBLE_EQ(g[0], 0.1);
  EXPECT_DOUBLE_EQ(g[3], 0.6);
  EXPECT_DOUBLE_EQ(g[4], 50.0 * 20.0 / 5000.0);
}

TEST(Corpus, DegenerateBoxesRejected) {
  EXPECT_THROW(positional_feature({10, 10, 10, 20}, 100, 100), Error);
  EXPECT_THROW(positional_feature({0, 0, 120, 20}, 100, 100), Error);
}

TEST(Corpus, ReadsHeaderAndPairs) {
  std::istringstream in(std::string(kHeader) + "\n" + pair_line("[0,0,50,50]") + "\n");
  const Corpus c = read_corpus(in);
  ASSERT_EQ(c.pairs.size(), 1u);
  const auto& p = c.pairs[0];
  EXPECT_EQ(p.tokens.size(), 2u);
  EXPECT_EQ(p.tokens[1].vocab_id, 2);
  EXPECT_DOUBLE_EQ(p.regions[0].positional_feature[4], 0.5);
}

TEST(Corpus, ParseErrorsCarryLineNumbers) {
  std::istringstream in(std::string(kHeader) + "\n{not json\n");
  try {
    read_corpus(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Corpus, ValidationNamesPairAndField) {
  std::istringstream in(std::string(kHeader) + "\n" + pair_line("[0,0,50,50]", "[0.5,0.2]") + "\n");
  try {
    read_corpus(in);
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("'p'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("class_distribution"), std::string::npos) << msg;
  }
  std::istringstream bad_box(std::string(kHeader) + "\n" + pair_line("[0,0,150,50]") + "\n");
  EXPECT_THROW(read_corpus(bad_box), Error);
}

TEST(Corpus, UnknownWordsMapToUnk) {
  const Vocabulary v({"[UNK]", "dog"});
  const auto toks = tokenize("A Zebra, dog!", v);
  ASSERT_EQ(toks.size(), 3u);
  EXPECT_EQ(toks[0].vocab_id, 0);
  EXPECT_EQ(toks[1].surface, "zebra");
  EXPECT_EQ(toks[2].vocab_id, 1);
}

TEST(Corpus, TrimKeepsMostConfidentRegionsInOrder) {
  ImageTextPair p;
  p.pair_id = "t";
  for (double conf : {0.2, 0.9, 0.5, 0.7}) {
    Region r;
    r.tag_confidence = conf;
    p.regions.push_back(r);
  }
  for (int i = 0; i < 5; ++i) p.tokens.push_back({"w", 0, i});
  p.gold_alignments = std::vector<Alignment>{{0, 0}, {1, 4}, {3, 1}};
  trim_pair(p, {2, 3});
  ASSERT_EQ(p.regions.size(), 2u);
  EXPECT_DOUBLE_EQ(p.regions[0].tag_confidence, 0.9);
  EXPECT_DOUBLE_EQ(p.regions[1].tag_confidence, 0.7);
  EXPECT_EQ(p.tokens.size(), 3u);
  // region 3 became region 1; token 4 was cut
  ASSERT_EQ(p.gold_alignments->size(), 1u);
  EXPECT_EQ(p.gold_alignments->front(), (Alignment{1, 1}));
}

TEST(Corpus, RoundTripsThroughText) {
  const Corpus c = load_corpus(data_path("fig2_pair.jsonl"));
  std::ostringstream out;
  write_corpus(out, c);
  std::istringstream in(out.str());
  EXPECT_EQ(read_corpus(in), c);
}

TEST(Corpus, SyntheticCorpusIsValidAndSeeded) {
  SynthSpec spec;
  spec.num_pairs = 20;
  const Corpus a = generate_synthetic(spec, 4);
  EXPECT_NO_THROW(validate_corpus(a));
  EXPECT_EQ(a.vocab.size(), 50u);
  EXPECT_EQ(a.detector_classes.size(), 10u);
  EXPECT_EQ(a, generate_synthetic(spec, 4));
  EXPECT_NE(a, generate_synthetic(spec, 5));
  for (const auto& p : a.pairs) {
    ASSERT_TRUE(p.gold_alignments);
    EXPECT_EQ(static_cast<int>(p.gold_alignments->size()), spec.aligned_per_pair());
    for (const auto& al : *p.gold_alignments)
      EXPECT_EQ(p.tokens[al.token].surface, p.regions[al.region].tag);
  }
}

TEST(Corpus, InfeasibleSyntheticSpecRejected) {
  SynthSpec spec;
  spec.regions_per_pair = 12;
  EXPECT_THROW(generate_synthetic(spec, 1), Error);
  spec = {};
  spec.tokens_per_pair = 3;
  EXPECT_THROW(generate_synthetic(spec, 1), Error);
}
