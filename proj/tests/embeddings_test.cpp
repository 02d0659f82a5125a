#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace rosita;

namespace {

EmbeddingTable small_table() {
  std::istringstream in("dog 1 0 0\ncat 0.6 0.8 0\nsky 0 0 -2\nbig 0 1 0\n");
  return read_embeddings(in);
}

}  // namespace

TEST(Embeddings, CosineOfKnownVectors) {
  const auto t = small_table();
  EXPECT_NEAR(*cosine_similarity("dog", "cat", t), 0.6, 1e-12);
  EXPECT_NEAR(*cosine_similarity("DOG", "dog", t), 1.0, 1e-12);
  EXPECT_NEAR(*cosine_similarity("dog", "sky", t), 0.0, 1e-12);
  EXPECT_FALSE(cosine_similarity("dog", "zebra", t));
}

TEST(Embeddings, AlignmentSimilarityClampsNegatives) {
  std::istringstream in("up 1 0\ndown -1 0\n");
  const auto t = read_embeddings(in);
  EXPECT_EQ(alignment_similarity("up", "down", t), 0.0);
  EXPECT_EQ(alignment_similarity("up", "missing", t), 0.0);
}

TEST(Embeddings, PhraseVectorAverages) {
  const auto t = small_table();
  const auto v = t.phrase_vector("big dog");
  ASSERT_TRUE(v);
  EXPECT_NEAR((*v)[0], 0.5, 1e-12);
  EXPECT_NEAR((*v)[1], 0.5, 1e-12);
}

TEST(Embeddings, MalformedFilesReportLine) {
  std::istringstream in("dog 1 0\ncat 1 0 0\n");
  try {
    read_embeddings(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::istringstream zero("dog 0 0\n");
  EXPECT_THROW(read_embeddings(zero), Error);
}

TEST(Embeddings, TagMatchingUsesThreshold) {
  const auto t = small_table();
  const auto m = match_tag_to_words("dog", {"cat", "sky", "dog"}, t, 0.5);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].word_index, 0u);
  EXPECT_EQ(m[1].word_index, 2u);
  EXPECT_TRUE(match_tag_to_words("dog", {"cat"}, t, 0.61).empty());
}

TEST(Embeddings, ToyTableSynonymSimilarity) {
  const auto t = load_embeddings(rosita::testing::data_path("toy_embeddings.txt"));
  EXPECT_NEAR(*cosine_similarity("grass", "steppe", t), 0.62, 1e-6);
  EXPECT_LT(*cosine_similarity("tree", "steppe", t), 0.5);
}
