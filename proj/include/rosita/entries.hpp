#pragma once

// Anchor selection and anchor-centred knowledge entries:
//   g(v) = cross(v) ∪ intra(v) ∪ intra(cross(v))

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosita/graph.hpp"

namespace rosita {

struct EntryEdge {
  int i = 0;  // local indices into KnowledgeEntry::vertices, i < j
  int j = 0;
  EdgeKind kind = EdgeKind::IntraImage;

  bool operator==(const EntryEdge&) const = default;
};

struct KnowledgeEntry {
  int anchor = 0;             // vertex id in the source graph
  std::vector<Vertex> vertices;  // anchor first
  Matrix S_hat;               // N×N, zero where the entry has no edge
  std::vector<EntryEdge> edges;

  std::size_t size() const noexcept { return vertices.size(); }
  const Vertex& anchor_vertex() const { return vertices.front(); }
  bool word_anchored() const { return anchor_vertex().modality == Modality::Text; }
};

inline std::vector<int> neighbors(const UnifiedGraph& g, int v, bool cross) {
  std::vector<int> out;
  for (const auto& e : g.edges) {
    if ((e.kind == EdgeKind::CrossModal) != cross) continue;
    if (e.u == v) out.push_back(e.v);
    else if (e.v == v) out.push_back(e.u);
  }
  return out;
}

// Vertices incident to at least one cross-modal edge, ascending id.
inline std::vector<int> select_anchors(const UnifiedGraph& g) {
  std::set<int> out;
  for (const auto& e : g.edges)
    if (e.kind == EdgeKind::CrossModal) {
      out.insert(e.u);
      out.insert(e.v);
    }
  return {out.begin(), out.end()};
}

namespace detail {

// Builds the entry around `center` without checking that it is an anchor.
inline KnowledgeEntry assemble_entry(const UnifiedGraph& g, int center) {
  struct Ranked {
    int id;
    double score;
  };
  auto by_score = [](const Ranked& a, const Ranked& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  };

  std::vector<Ranked> cross;
  for (int c : neighbors(g, center, true)) cross.push_back({c, g.S(center, c)});
  std::sort(cross.begin(), cross.end(), by_score);

  // Intra contexts ranked by the similarity of the edge that licenses them.
  std::vector<Ranked> intra;
  std::vector<std::pair<int, int>> licensed;  // vertex-id pairs
  for (int x : neighbors(g, center, false)) {
    intra.push_back({x, g.S(center, x)});
    licensed.emplace_back(center, x);
  }
  for (const auto& c : cross) {
    licensed.emplace_back(center, c.id);
    for (int y : neighbors(g, c.id, false)) {
      intra.push_back({y, g.S(c.id, y)});
      licensed.emplace_back(c.id, y);
    }
  }
  std::sort(intra.begin(), intra.end(), by_score);

  KnowledgeEntry entry;
  entry.anchor = center;
  std::vector<int> local(g.size(), -1);
  auto include = [&](int id) {
    if (local[id] >= 0) return;
    local[id] = static_cast<int>(entry.vertices.size());
    entry.vertices.push_back(g.vertices[id]);
  };
  include(center);
  for (const auto& c : cross) include(c.id);
  for (const auto& x : intra) include(x.id);

  const std::size_t n = entry.vertices.size();
  entry.S_hat = Matrix(n, n);
  std::set<std::pair<int, int>> seen;
  for (auto [a, b] : licensed) {
    const int i = local[a], j = local[b];
    const auto key = std::minmax(i, j);
    if (!seen.insert(key).second) continue;
    entry.S_hat(i, j) = entry.S_hat(j, i) = g.S(a, b);
    entry.edges.push_back({key.first, key.second, *g.edge_kind(a, b)});
  }
  std::sort(entry.edges.begin(), entry.edges.end(), [](const EntryEdge& x, const EntryEdge& y) {
    return std::tie(x.i, x.j) < std::tie(y.i, y.j);
  });
  return entry;
}

}  // namespace detail

inline KnowledgeEntry extract_entry(const UnifiedGraph& g, int anchor) {
  if (anchor < 0 || static_cast<std::size_t>(anchor) >= g.size())
    throw Error("extract_entry: vertex " + std::to_string(anchor) + " does not exist");
  if (neighbors(g, anchor, true).empty())
    throw Error("extract_entry: vertex " + std::to_string(anchor) + " is not an anchor (no cross-modal edge)");
  return detail::assemble_entry(g, anchor);
}

// Entry around an object vertex that need not be an anchor; used when
// cross-modal knowledge is ablated and entries reduce to intra-modal context.
inline KnowledgeEntry extract_context_entry(const UnifiedGraph& g, int center) {
  if (center < 0 || static_cast<std::size_t>(center) >= g.size() || !g.vertices[center].is_object())
    throw Error("extract_context_entry: vertex " + std::to_string(center) + " is not an object vertex");
  return detail::assemble_entry(g, center);
}

inline std::vector<KnowledgeEntry> extract_all_entries(const UnifiedGraph& g) {
  std::vector<KnowledgeEntry> out;
  for (int a : select_anchors(g)) out.push_back(extract_entry(g, a));
  return out;
}

// Hop distance from the anchor inside the entry's own edges (-1 if unreachable).
inline std::vector<int> entry_hops(const KnowledgeEntry& e) {
  std::vector<int> dist(e.size(), -1);
  if (e.size() == 0) return dist;
  dist[0] = 0;
  std::vector<int> frontier{0};
  while (!frontier.empty()) {
    std::vector<int> next;
    for (int u : frontier)
      for (const auto& ed : e.edges) {
        const int w = ed.i == u ? ed.j : ed.j == u ? ed.i : -1;
        if (w >= 0 && dist[w] < 0) {
          dist[w] = dist[u] + 1;
          next.push_back(w);
        }
      }
    frontier = std::move(next);
  }
  return dist;
}

inline nlohmann::json entry_to_json(const KnowledgeEntry& e, const ImageTextPair* pair = nullptr) {
  using nlohmann::json;
  json vs = json::array();
  for (const auto& v : e.vertices) {
    json vj = {{"id", v.id}, {"modality", to_string(v.modality)}, {"payload", v.payload}, {"role", to_string(v.role)}};
    if (pair)
      vj["label"] = v.modality == Modality::Image ? pair->regions.at(v.payload).tag : pair->tokens.at(v.payload).surface;
    vs.push_back(vj);
  }
  json edges = json::array();
  for (const auto& ed : e.edges) edges.push_back({{"i", ed.i}, {"j", ed.j}, {"kind", to_string(ed.kind)}});
  json s = json::array();
  for (std::size_t r = 0; r < e.S_hat.rows(); ++r)
    s.push_back(std::vector<double>(e.S_hat.row(r).begin(), e.S_hat.row(r).end()));
  return {{"anchor", e.anchor}, {"vertices", vs}, {"edges", edges}, {"S_hat", s}};
}

}  // namespace rosita
