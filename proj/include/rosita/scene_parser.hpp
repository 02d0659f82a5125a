#pragma once

// Text scene graphs: a lexicon-driven heuristic parser and dataset-level
// co-occurrence statistics used as intra-text edge weights.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "rosita/corpus.hpp"
#include "rosita/error.hpp"

namespace rosita {

enum class WordRole { Object, Attribute, Relation, Other };

inline const char* to_string(WordRole r) {
  switch (r) {
    case WordRole::Object: return "object";
    case WordRole::Attribute: return "attribute";
    case WordRole::Relation: return "relation";
    case WordRole::Other: return "other";
  }
  return "other";
}

inline WordRole word_role_from_string(const std::string& s) {
  if (s == "object") return WordRole::Object;
  if (s == "attribute") return WordRole::Attribute;
  if (s == "relation") return WordRole::Relation;
  if (s == "other") return WordRole::Other;
  throw Error("unknown word role '" + s + "'");
}

// word → role; unknown words are Other.
class Lexicon {
 public:
  void set(const std::string& word, WordRole role) { roles_[to_lower(word)] = role; }

  WordRole role(const std::string& word) const {
    auto it = roles_.find(to_lower(word));
    return it == roles_.end() ? WordRole::Other : it->second;
  }

  std::size_t size() const noexcept { return roles_.size(); }

 private:
  std::unordered_map<std::string, WordRole> roles_;
};

// `word<TAB>role` per line.
inline Lexicon read_lexicon(std::istream& in) {
  Lexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(lineno, "expected word<TAB>role");
    std::string role = line.substr(tab + 1);
    while (!role.empty() && (role.back() == '\r' || role.back() == ' ')) role.pop_back();
    try {
      lex.set(line.substr(0, tab), word_role_from_string(role));
    } catch (const Error& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return lex;
}

inline Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon '" + path + "'");
  return read_lexicon(in);
}

inline std::vector<WordRole> token_roles(const std::vector<Token>& tokens, const Lexicon& lexicon) {
  std::vector<WordRole> roles;
  roles.reserve(tokens.size());
  for (const auto& t : tokens) roles.push_back(lexicon.role(t.surface));
  return roles;
}

inline constexpr int kRelationWindow = 4;

// Heuristic parser:
//  - attribute immediately before an object -> object-attribute
//  - object .. relation .. object with the two objects at most kRelationWindow
//    positions apart (nearest object on each side of the relation) -> object-relation
inline std::vector<SceneTriple> parse_text(const std::vector<Token>& tokens, const Lexicon& lexicon) {
  const auto roles = token_roles(tokens, lexicon);
  const int n = static_cast<int>(tokens.size());
  std::vector<SceneTriple> out;
  for (int i = 0; i < n; ++i) {
    if (roles[i] == WordRole::Attribute && i + 1 < n && roles[i + 1] == WordRole::Object)
      out.push_back({i + 1, i, TripleKind::ObjectAttribute, std::nullopt});
    if (roles[i] != WordRole::Relation) continue;
    int left = -1, right = -1;
    for (int k = i - 1; k >= 0 && i - k < kRelationWindow; --k)
      if (roles[k] == WordRole::Object) {
        left = k;
        break;
      }
    for (int k = i + 1; k < n && k - i < kRelationWindow; ++k)
      if (roles[k] == WordRole::Object) {
        right = k;
        break;
      }
    if (left >= 0 && right >= 0 && right - left <= kRelationWindow)
      out.push_back({left, i, TripleKind::ObjectRelation, right});
  }
  return out;
}

// Pre-parsed triples win over the heuristic parser.
inline std::vector<SceneTriple> triples_for(const ImageTextPair& pair, const Lexicon& lexicon) {
  if (pair.pre_parsed_triples) return *pair.pre_parsed_triples;
  return parse_text(pair.tokens, lexicon);
}

struct CooccurrenceKey {
  std::string head;
  std::string dependent;
  TripleKind kind = TripleKind::ObjectAttribute;

  auto operator<=>(const CooccurrenceKey&) const = default;
};

class CooccurrenceStats {
 public:
  void add(const CooccurrenceKey& key, long count = 1) {
    counts_[key] += count;
    totals_[key.kind] += count;
  }

  long count(const CooccurrenceKey& key) const {
    auto it = counts_.find(key);
    return it == counts_.end() ? 0 : it->second;
  }

  long total(TripleKind kind) const {
    auto it = totals_.find(kind);
    return it == totals_.end() ? 0 : it->second;
  }

  std::size_t entries() const noexcept { return counts_.size(); }
  bool empty() const noexcept { return counts_.empty(); }
  const std::map<CooccurrenceKey, long>& counts() const noexcept { return counts_; }

  CooccurrenceStats& merge(const CooccurrenceStats& other) {
    for (const auto& [k, c] : other.counts_) add(k, c);
    return *this;
  }

  bool operator==(const CooccurrenceStats&) const = default;

 private:
  std::map<CooccurrenceKey, long> counts_;
  std::map<TripleKind, long> totals_;
};

inline CooccurrenceKey key_of(const SceneTriple& t, const std::vector<Token>& tokens) {
  return {tokens.at(t.head).surface, tokens.at(t.dependent).surface, t.kind};
}

inline CooccurrenceStats accumulate_cooccurrence(const std::vector<ImageTextPair>& pairs, const Lexicon& lexicon) {
  CooccurrenceStats stats;
  for (const auto& p : pairs)
    for (const auto& t : triples_for(p, lexicon)) stats.add(key_of(t, p.tokens));
  return stats;
}

inline CooccurrenceStats accumulate_cooccurrence(const Corpus& corpus, const Lexicon& lexicon) {
  return accumulate_cooccurrence(corpus.pairs, lexicon);
}

inline constexpr double kCooccurrenceFloor = 1.0;

// Raw dataset count of the triple's (head, dependent, kind); triples that were
// parsed but never counted get the floor so their edge survives.
inline double triple_similarity(const SceneTriple& t, const std::vector<Token>& tokens,
                                const CooccurrenceStats& stats) {
  return std::max(static_cast<double>(stats.count(key_of(t, tokens))), kCooccurrenceFloor);
}

inline void write_stats(std::ostream& out, const CooccurrenceStats& stats) {
  out << "head\tdependent\tkind\tcount\n";
  for (const auto& [k, c] : stats.counts()) out << k.head << '\t' << k.dependent << '\t' << to_string(k.kind) << '\t' << c << '\n';
}

}  // namespace rosita
