#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace rosita;
using rosita::testing::Fig2;

namespace {

// Counts unit cells covered by integer boxes.
double grid_iou(const Box& a, const Box& b) {
  long inter = 0, uni = 0;
  for (int x = 0; x < 40; ++x)
    for (int y = 0; y < 40; ++y) {
      const bool ia = x >= a.x1 && x < a.x2 && y >= a.y1 && y < a.y2;
      const bool ib = x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
      inter += ia && ib;
      uni += ia || ib;
    }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

TEST(Graph, IouMatchesGridCount) {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    auto box = [&] {
      const auto x1 = rng.below(35), y1 = rng.below(35);
      const auto x2 = x1 + 1 + rng.below(39 - x1), y2 = y1 + 1 + rng.below(39 - y1);
      return Box{double(x1), double(y1), double(x2), double(y2)};
    };
    const Box a = box(), b = box();
    EXPECT_NEAR(iou(a, b), grid_iou(a, b), 1e-12);
  }
}

TEST(Graph, IouEdgeCases) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {10, 0, 20, 10}), 0.0);  // touching
  EXPECT_THROW(iou({0, 0, 0, 10}, {0, 0, 10, 10}), Error);
}

TEST(Graph, Fig2Structure) {
  const Fig2 f;
  const auto g = f.graph();
  // regions 0..2, then vast, steppe, blue, sky
  ASSERT_EQ(g.size(), 7u);
  EXPECT_EQ(*g.token_vertex(2), 4);
  EXPECT_EQ(g.vertices[3].role, VertexRole::AttributeWord);
  EXPECT_FALSE(g.token_vertex(0));  // "a" is not a keyword
  EXPECT_EQ(g.edge_kind(0, 1), EdgeKind::IntraImage);
  EXPECT_FALSE(g.edge_kind(0, 2));
  EXPECT_EQ(g.edge_kind(0, 4), EdgeKind::CrossModal);
  EXPECT_EQ(g.edge_kind(2, 6), EdgeKind::CrossModal);
  EXPECT_FALSE(g.edge_kind(1, 4));  // tree vs steppe below threshold
  EXPECT_EQ(g.edge_kind(3, 4), EdgeKind::IntraText);
  EXPECT_NEAR(g.S(0, 4), 0.62, 1e-6);
  EXPECT_NEAR(g.S(2, 6), 1.0, 1e-12);
  EXPECT_NEAR(g.S(0, 1), 1.0, 1e-12);  // the only intra edge of both endpoints
  EXPECT_NEAR(g.S(3, 4), 1.0, 1e-12);
}

TEST(Graph, NormalizationAveragesDirectedShares) {
  const std::vector<WordRole> roles;
  const auto g = normalize_and_assemble(3, roles, {{0, 1, 0.2}, {1, 2, 0.6}}, {}, {});
  // vertex 1 sums 0.8: shares 0.25, 0.75; vertices 0 and 2 each own one edge
  EXPECT_NEAR(g.S(0, 1), 0.5 * (1.0 + 0.25), 1e-12);
  EXPECT_NEAR(g.S(1, 2), 0.5 * (1.0 + 0.75), 1e-12);
  EXPECT_EQ(g.S(0, 2), 0.0);
}

TEST(Graph, CrossEdgesOnlyForObjectWords) {
  const std::vector<WordRole> roles{WordRole::Attribute, WordRole::Object};
  const auto g = normalize_and_assemble(1, roles, {}, {}, {{0, 0, 0.9}, {0, 1, 0.7}});
  ASSERT_EQ(g.edges.size(), 1u);
  EXPECT_EQ(g.edges[0].kind, EdgeKind::CrossModal);
  EXPECT_NEAR(g.S(0, 2), 0.7, 1e-12);
}

TEST(Graph, ThresholdBoundaryInclusive) {
  std::istringstream in("tag 1 0\nword 0.5 0.8660254037844386\n");
  const auto t = read_embeddings(in);
  std::vector<Region> regions(1);
  regions[0].tag = "tag";
  const std::vector<Token> tokens{{"word", 0, 0}};
  const auto links = build_cross_edges(regions, tokens, {WordRole::Object}, t, 0.5 - 1e-12);
  EXPECT_EQ(links.size(), 1u);
  EXPECT_TRUE(build_cross_edges(regions, tokens, {WordRole::Object}, t, 0.5 + 1e-9).empty());
}

TEST(Graph, SymmetricAndDeterministic) {
  const Fig2 f;
  const auto a = f.graph(), b = f.graph();
  EXPECT_EQ(a.S, b.S);
  EXPECT_EQ(a.S, a.S.transposed());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.S(i, i), 0.0);
}

TEST(Graph, AblationOptionsDropBlocks) {
  const Fig2 f;
  GraphOptions no_cross;
  no_cross.cross_edges = false;
  for (const auto& e : build_graph(f.pair(), f.sources(), no_cross).edges) EXPECT_NE(e.kind, EdgeKind::CrossModal);
  GraphOptions no_intra;
  no_intra.intra_edges = false;
  for (const auto& e : build_graph(f.pair(), f.sources(), no_intra).edges) EXPECT_EQ(e.kind, EdgeKind::CrossModal);
}
