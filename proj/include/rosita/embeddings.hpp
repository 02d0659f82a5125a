#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rosita/corpus.hpp"
#include "rosita/error.hpp"

namespace rosita {

// Immutable word → vector table loaded from `word v1 ... vD` text lines.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  void add(const std::string& word, std::vector<double> vec) {
    const std::string key = to_lower(word);
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_ || dim_ == 0)
      throw Error("embedding for '" + word + "' has dimension " + std::to_string(vec.size()) +
                  ", expected " + std::to_string(dim_));
    double sq = 0.0;
    for (double x : vec) sq += x * x;
    if (!(sq > 0.0) || !std::isfinite(sq)) throw Error("embedding for '" + word + "' has zero norm");
    if (index_.count(key)) throw Error("duplicate embedding word '" + word + "'");
    index_.emplace(key, words_.size());
    words_.push_back(key);
    norms_.push_back(std::sqrt(sq));
    vectors_.push_back(std::move(vec));
  }

  std::size_t size() const noexcept { return words_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::string>& words() const noexcept { return words_; }

  // Case-insensitive lookup.
  const std::vector<double>* find(const std::string& word) const {
    auto it = index_.find(to_lower(word));
    return it == index_.end() ? nullptr : &vectors_[it->second];
  }

  // Mean vector of the resolvable whitespace-separated words of `phrase`.
  std::optional<std::vector<double>> phrase_vector(const std::string& phrase) const {
    std::istringstream in(phrase);
    std::string w;
    std::vector<double> sum(dim_, 0.0);
    int found = 0;
    while (in >> w) {
      if (const auto* v = find(w)) {
        for (std::size_t i = 0; i < dim_; ++i) sum[i] += (*v)[i];
        ++found;
      }
    }
    if (found == 0) return std::nullopt;
    for (auto& x : sum) x /= found;
    return sum;
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::vector<double>> vectors_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t dim_ = 0;
};

inline EmbeddingTable read_embeddings(std::istream& in) {
  EmbeddingTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    std::vector<double> vec;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        vec.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError(lineno, "bad number '" + tok + "'");
      }
    }
    try {
      table.add(word, std::move(vec));
    } catch (const Error& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embedding file '" + path + "'");
  return read_embeddings(in);
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

// Raw cosine in [-1,1]; nullopt when either side cannot be resolved.
// Multi-word inputs are averaged.
inline std::optional<double> cosine_similarity(const std::string& a, const std::string& b,
                                               const EmbeddingTable& table) {
  if (to_lower(a) == to_lower(b) && table.phrase_vector(a)) return 1.0;
  auto va = table.phrase_vector(a);
  auto vb = table.phrase_vector(b);
  if (!va || !vb) return std::nullopt;
  return cosine(*va, *vb);
}

// Cosine clamped to [0,1]; unresolvable pairs score 0.
inline double alignment_similarity(const std::string& a, const std::string& b, const EmbeddingTable& table) {
  return std::max(0.0, cosine_similarity(a, b, table).value_or(0.0));
}

struct TagMatch {
  std::size_t word_index = 0;
  double similarity = 0.0;

  bool operator==(const TagMatch&) const = default;
};

inline std::vector<TagMatch> match_tag_to_words(const std::string& tag, const std::vector<std::string>& object_words,
                                                const EmbeddingTable& table, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error("match_tag_to_words: threshold must lie in [0,1]");
  std::vector<TagMatch> out;
  for (std::size_t i = 0; i < object_words.size(); ++i) {
    const double s = alignment_similarity(tag, object_words[i], table);
    if (s > 0.0 && s >= threshold) out.push_back({i, s});
  }
  return out;
}

}  // namespace rosita
