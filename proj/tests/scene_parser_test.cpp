#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace rosita;

namespace {

Lexicon lexicon() {
  std::istringstream in("dog\tobject\nball\tobject\nman\tobject\nbrown\tattribute\nred\tattribute\n"
                        "chasing\trelation\nnear\trelation\n");
  return read_lexicon(in);
}

std::vector<Token> toks(const std::string& text) {
  const auto words = split_words(text);
  std::vector<Token> out;
  for (std::size_t i = 0; i < words.size(); ++i) out.push_back({words[i], 0, static_cast<int>(i)});
  return out;
}

}  // namespace

TEST(SceneParser, AttributeAndRelationTriples) {
  const auto t = toks("a brown dog chasing a red ball");
  const auto triples = parse_text(t, lexicon());
  ASSERT_EQ(triples.size(), 3u);
  EXPECT_EQ(triples[0], (SceneTriple{2, 1, TripleKind::ObjectAttribute, std::nullopt}));
  EXPECT_EQ(triples[1], (SceneTriple{2, 3, TripleKind::ObjectRelation, 6}));
  EXPECT_EQ(triples[2], (SceneTriple{6, 5, TripleKind::ObjectAttribute, std::nullopt}));
}

TEST(SceneParser, NoKeywordsNoTriples) {
  EXPECT_TRUE(parse_text(toks("it is what it is"), lexicon()).empty());
}

TEST(SceneParser, DistantRelationIgnored) {
  EXPECT_TRUE(parse_text(toks("dog one two three near four five six ball"), lexicon()).empty());
}

TEST(SceneParser, PreParsedTriplesWin) {
  ImageTextPair p;
  p.tokens = toks("a brown dog");
  p.pre_parsed_triples = std::vector<SceneTriple>{};
  EXPECT_TRUE(triples_for(p, lexicon()).empty());
}

TEST(SceneParser, CooccurrenceCountsAndFloor) {
  std::vector<ImageTextPair> pairs(3);
  pairs[0].tokens = toks("a brown dog");
  pairs[1].tokens = toks("the brown dog near the man");
  pairs[2].tokens = toks("red ball");
  const auto stats = accumulate_cooccurrence(pairs, lexicon());
  EXPECT_EQ(stats.count({"dog", "brown", TripleKind::ObjectAttribute}), 2);
  EXPECT_EQ(stats.count({"dog", "near", TripleKind::ObjectRelation}), 1);
  EXPECT_EQ(stats.total(TripleKind::ObjectAttribute), 3);
  const auto t = parse_text(pairs[2].tokens, lexicon());
  EXPECT_EQ(triple_similarity(t[0], pairs[2].tokens, stats), 1.0);
  EXPECT_EQ(triple_similarity(t[0], pairs[2].tokens, CooccurrenceStats{}), 1.0);  // floor
}

TEST(SceneParser, StatsAreOrderIndependent) {
  std::vector<ImageTextPair> pairs(2);
  pairs[0].tokens = toks("a brown dog chasing a red ball");
  pairs[1].tokens = toks("red ball near the man");
  const auto a = accumulate_cooccurrence(pairs, lexicon());
  std::swap(pairs[0], pairs[1]);
  EXPECT_EQ(a, accumulate_cooccurrence(pairs, lexicon()));
}
