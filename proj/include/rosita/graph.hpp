#pragma once

// Unified scene graph over one image-text pair: regions and keyword tokens as
// vertices; IoU edges between regions, co-occurrence edges between words, and
// embedding-similarity edges across modalities.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosita/corpus.hpp"
#include "rosita/embeddings.hpp"
#include "rosita/matrix.hpp"
#include "rosita/scene_parser.hpp"

namespace rosita {

enum class Modality { Image, Text };
enum class VertexRole { ObjectRegion, ObjectWord, AttributeWord, RelationWord };
enum class EdgeKind { IntraImage, IntraText, CrossModal };

inline const char* to_string(Modality m) { return m == Modality::Image ? "image" : "text"; }

inline const char* to_string(VertexRole r) {
  switch (r) {
    case VertexRole::ObjectRegion: return "object-region";
    case VertexRole::ObjectWord: return "object-word";
    case VertexRole::AttributeWord: return "attribute-word";
    case VertexRole::RelationWord: return "relation-word";
  }
  return "";
}

inline const char* to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::IntraImage: return "intra-image";
    case EdgeKind::IntraText: return "intra-text";
    case EdgeKind::CrossModal: return "cross-modal";
  }
  return "";
}

struct Vertex {
  int id = 0;
  Modality modality = Modality::Image;
  int payload = 0;  // region index or token index
  VertexRole role = VertexRole::ObjectRegion;

  bool is_object() const { return role == VertexRole::ObjectRegion || role == VertexRole::ObjectWord; }
  bool operator==(const Vertex&) const = default;
};

// Undirected, stored with u < v.
struct Edge {
  int u = 0;
  int v = 0;
  EdgeKind kind = EdgeKind::IntraImage;
  double raw_similarity = 0.0;

  bool operator==(const Edge&) const = default;
};

struct UnifiedGraph {
  std::vector<Vertex> vertices;
  std::vector<Edge> edges;
  Matrix S;

  std::size_t size() const noexcept { return vertices.size(); }

  std::optional<int> region_vertex(int region) const {
    for (const auto& v : vertices)
      if (v.modality == Modality::Image && v.payload == region) return v.id;
    return std::nullopt;
  }
  std::optional<int> token_vertex(int token) const {
    for (const auto& v : vertices)
      if (v.modality == Modality::Text && v.payload == token) return v.id;
    return std::nullopt;
  }

  std::optional<EdgeKind> edge_kind(int a, int b) const {
    const auto [u, v] = std::minmax(a, b);
    for (const auto& e : edges)
      if (e.u == u && e.v == v) return e.kind;
    return std::nullopt;
  }
};

// Intersection over union; 0 for disjoint boxes.
inline double iou(const Box& a, const Box& b) {
  if (!a.finite() || !b.finite() || !a.ordered() || !b.ordered()) throw Error("iou: degenerate box");
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

// Weighted edge between two payload indices of the same modality.
struct LocalEdge {
  int a = 0;
  int b = 0;
  double weight = 0.0;

  bool operator==(const LocalEdge&) const = default;
};

struct CrossLink {
  int region = 0;
  int token = 0;
  double similarity = 0.0;

  bool operator==(const CrossLink&) const = default;
};

inline std::vector<LocalEdge> build_image_block(const std::vector<Region>& regions) {
  std::vector<LocalEdge> out;
  const int n = static_cast<int>(regions.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double s = iou(regions[i].box, regions[j].box);
      if (s > 0.0) out.push_back({i, j, s});
    }
  return out;
}

// One edge per triple endpoint pair, weighted by dataset co-occurrence;
// duplicates keep the maximum.
inline std::vector<LocalEdge> build_text_block(const std::vector<SceneTriple>& triples,
                                               const std::vector<Token>& tokens,
                                               const CooccurrenceStats& stats) {
  std::map<std::pair<int, int>, double> best;
  auto put = [&](int a, int b, double w) {
    if (a == b) return;
    auto key = std::minmax(a, b);
    auto [it, fresh] = best.emplace(key, w);
    if (!fresh) it->second = std::max(it->second, w);
  };
  for (const auto& t : triples) {
    const double w = triple_similarity(t, tokens, stats);
    put(t.head, t.dependent, w);
    if (t.kind == TripleKind::ObjectRelation && t.object) put(t.dependent, *t.object, w);
  }
  std::vector<LocalEdge> out;
  for (const auto& [k, w] : best) out.push_back({k.first, k.second, w});
  return out;
}

inline constexpr double kCrossModalThreshold = 0.5;

// Region tag × object word pairs whose clamped cosine reaches the threshold.
// Attribute and relation words never receive cross edges.
inline std::vector<CrossLink> build_cross_edges(const std::vector<Region>& regions, const std::vector<Token>& tokens,
                                                const std::vector<WordRole>& roles, const EmbeddingTable& table,
                                                double threshold = kCrossModalThreshold) {
  std::vector<std::string> object_words;
  std::vector<int> object_tokens;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (roles[i] == WordRole::Object) {
      object_words.push_back(tokens[i].surface);
      object_tokens.push_back(static_cast<int>(i));
    }
  std::vector<CrossLink> out;
  for (std::size_t r = 0; r < regions.size(); ++r)
    for (const auto& m : match_tag_to_words(regions[r].tag, object_words, table, threshold))
      out.push_back({static_cast<int>(r), object_tokens[m.word_index], m.similarity});
  return out;
}

// Per-vertex division of intra-modal weights by their incident sum, then
// averaging of the two directed values. Cross similarities are kept raw.
inline UnifiedGraph normalize_and_assemble(std::size_t num_regions, const std::vector<WordRole>& roles,
                                           const std::vector<LocalEdge>& image_edges,
                                           const std::vector<LocalEdge>& text_edges,
                                           const std::vector<CrossLink>& cross) {
  UnifiedGraph g;
  std::vector<int> token_to_vertex(roles.size(), -1);
  for (std::size_t r = 0; r < num_regions; ++r)
    g.vertices.push_back({static_cast<int>(r), Modality::Image, static_cast<int>(r), VertexRole::ObjectRegion});
  for (std::size_t t = 0; t < roles.size(); ++t) {
    VertexRole role;
    switch (roles[t]) {
      case WordRole::Object: role = VertexRole::ObjectWord; break;
      case WordRole::Attribute: role = VertexRole::AttributeWord; break;
      case WordRole::Relation: role = VertexRole::RelationWord; break;
      default: continue;
    }
    token_to_vertex[t] = static_cast<int>(g.vertices.size());
    g.vertices.push_back({token_to_vertex[t], Modality::Text, static_cast<int>(t), role});
  }
  const std::size_t n = g.vertices.size();
  Matrix raw(n, n);
  auto add_edge = [&](int u, int v, EdgeKind kind, double w) {
    if (u < 0 || v < 0 || u == v || !(w > 0.0)) return;
    const auto [a, b] = std::minmax(u, v);
    for (auto& e : g.edges)
      if (e.u == a && e.v == b) {
        e.raw_similarity = std::max(e.raw_similarity, w);
        raw(a, b) = raw(b, a) = e.raw_similarity;
        return;
      }
    g.edges.push_back({a, b, kind, w});
    raw(a, b) = raw(b, a) = w;
  };
  for (const auto& e : image_edges) add_edge(e.a, e.b, EdgeKind::IntraImage, e.weight);
  for (const auto& e : text_edges) {
    if (static_cast<std::size_t>(e.a) >= roles.size() || static_cast<std::size_t>(e.b) >= roles.size()) continue;
    add_edge(token_to_vertex[e.a], token_to_vertex[e.b], EdgeKind::IntraText, e.weight);
  }
  for (const auto& c : cross) {
    if (static_cast<std::size_t>(c.token) >= roles.size() || roles[c.token] != WordRole::Object) continue;
    add_edge(c.region, token_to_vertex[c.token], EdgeKind::CrossModal, std::min(c.similarity, 1.0));
  }
  std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) {
    return std::tie(a.u, a.v) < std::tie(b.u, b.v);
  });

  std::vector<double> intra_sum(n, 0.0);
  for (const auto& e : g.edges)
    if (e.kind != EdgeKind::CrossModal) {
      intra_sum[e.u] += e.raw_similarity;
      intra_sum[e.v] += e.raw_similarity;
    }
  g.S = Matrix(n, n);
  for (const auto& e : g.edges) {
    double s;
    if (e.kind == EdgeKind::CrossModal) {
      s = e.raw_similarity;
    } else {
      s = 0.5 * (e.raw_similarity / intra_sum[e.u] + e.raw_similarity / intra_sum[e.v]);
    }
    g.S(e.u, e.v) = g.S(e.v, e.u) = s;
  }
  return g;
}

struct GraphOptions {
  double cross_threshold = kCrossModalThreshold;
  bool intra_edges = true;
  bool cross_edges = true;
};

// Everything a graph needs from the surrounding corpus.
struct KnowledgeSources {
  const Lexicon* lexicon = nullptr;
  const CooccurrenceStats* stats = nullptr;
  const EmbeddingTable* embeddings = nullptr;
};

inline UnifiedGraph build_graph(const ImageTextPair& pair, const KnowledgeSources& src,
                                const GraphOptions& opt = {}) {
  if (!src.lexicon || !src.stats || !src.embeddings) throw Error("build_graph: missing knowledge source");
  const auto roles = token_roles(pair.tokens, *src.lexicon);
  std::vector<LocalEdge> image_edges, text_edges;
  std::vector<CrossLink> cross;
  if (opt.intra_edges) {
    image_edges = build_image_block(pair.regions);
    text_edges = build_text_block(triples_for(pair, *src.lexicon), pair.tokens, *src.stats);
  }
  if (opt.cross_edges) cross = build_cross_edges(pair.regions, pair.tokens, roles, *src.embeddings, opt.cross_threshold);
  return normalize_and_assemble(pair.regions.size(), roles, image_edges, text_edges, cross);
}

inline nlohmann::json graph_to_json(const UnifiedGraph& g, const ImageTextPair* pair = nullptr) {
  using nlohmann::json;
  json vertices = json::array();
  for (const auto& v : g.vertices) {
    json vj = {{"id", v.id}, {"modality", to_string(v.modality)}, {"payload", v.payload}, {"role", to_string(v.role)}};
    if (pair) {
      vj["label"] = v.modality == Modality::Image ? pair->regions.at(v.payload).tag
                                                  : pair->tokens.at(v.payload).surface;
    }
    vertices.push_back(vj);
  }
  json edges = json::array();
  for (const auto& e : g.edges)
    edges.push_back({{"u", e.u}, {"v", e.v}, {"kind", to_string(e.kind)}, {"raw_similarity", e.raw_similarity}});
  json s = json::array();
  for (std::size_t r = 0; r < g.S.rows(); ++r) s.push_back(std::vector<double>(g.S.row(r).begin(), g.S.row(r).end()));
  return {{"vertices", vertices}, {"edges", edges}, {"S", s}};
}

}  // namespace rosita
