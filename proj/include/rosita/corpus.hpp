#pragma once

// Image-text pair data model and the line-oriented corpus file format.
//
// A corpus file is JSON Lines. The first record is a header:
//   {"format":"rosita-corpus","version":1,"vocab":[...],"detector_classes":[...]}
// Every following non-empty line is one pair:
//   {"pair_id":"p1",
//    "image":{"width":W,"height":H,"regions":[
//       {"box":[x1,y1,x2,y2],"tag":"dog","tag_confidence":0.9,
//        "class_distribution":[...],"visual_feature":[...]}]},
//    "text":{"raw":"a small dog","tokens":["a","small","dog"]},
//    "triples":[{"head":2,"relation_or_attribute":1,"kind":"object-attribute"},
//               {"head":0,"relation_or_attribute":1,"kind":"object-relation","object":2}],
//    "gold_alignments":[[0,2]]}
// "text.tokens", "triples" and "gold_alignments" are optional.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosita/error.hpp"

namespace rosita {

inline constexpr const char* kUnknownToken = "[UNK]";
inline constexpr int kCorpusFormatVersion = 1;

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool finite() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2);
  }
  bool ordered() const { return x1 < x2 && y1 < y2; }

  bool operator==(const Box&) const = default;
};

using PositionalFeature = std::array<double, 5>;

// (x1/W, y1/H, x2/W, y2/H, area/(W·H)).
inline PositionalFeature positional_feature(const Box& box, double image_w, double image_h) {
  if (!(image_w > 0) || !(image_h > 0)) throw Error("positional_feature: image size must be positive");
  if (!box.finite() || !box.ordered()) throw Error("positional_feature: degenerate box");
  if (box.x1 < 0 || box.y1 < 0 || box.x2 > image_w || box.y2 > image_h)
    throw Error("positional_feature: box outside image bounds");
  return {box.x1 / image_w, box.y1 / image_h, box.x2 / image_w, box.y2 / image_h,
          box.area() / (image_w * image_h)};
}

struct Region {
  Box box;
  std::vector<double> visual_feature;
  PositionalFeature positional_feature{};
  std::string tag;
  double tag_confidence = 1.0;
  std::vector<double> class_distribution;

  std::size_t argmax_class() const {
    return static_cast<std::size_t>(
        std::max_element(class_distribution.begin(), class_distribution.end()) -
        class_distribution.begin());
  }

  bool operator==(const Region&) const = default;
};

struct Token {
  std::string surface;
  int vocab_id = 0;
  int index = 0;

  bool operator==(const Token&) const = default;
};

enum class TripleKind { ObjectAttribute, ObjectRelation };

inline const char* to_string(TripleKind k) {
  return k == TripleKind::ObjectAttribute ? "object-attribute" : "object-relation";
}

inline TripleKind triple_kind_from_string(const std::string& s) {
  if (s == "object-attribute") return TripleKind::ObjectAttribute;
  if (s == "object-relation") return TripleKind::ObjectRelation;
  throw Error("unknown triple kind '" + s + "'");
}

// Token indices into the owning pair. `object` is the second object of a relation.
struct SceneTriple {
  int head = 0;
  int dependent = 0;
  TripleKind kind = TripleKind::ObjectAttribute;
  std::optional<int> object;

  bool operator==(const SceneTriple&) const = default;
};

struct Alignment {
  int region = 0;
  int token = 0;

  bool operator==(const Alignment&) const = default;
};

struct ImageTextPair {
  std::string pair_id;
  double image_width = 0;
  double image_height = 0;
  std::vector<Region> regions;
  std::vector<Token> tokens;
  std::string raw_text;
  std::optional<std::vector<SceneTriple>> pre_parsed_triples;
  std::optional<std::vector<Alignment>> gold_alignments;

  bool operator==(const ImageTextPair&) const = default;
};

struct CorpusLimits {
  std::size_t max_regions = 36;
  std::size_t max_tokens = 50;
};

// Fixed vocabulary with case-folded lookup and an [UNK] fallback.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], static_cast<int>(i)).second)
        throw Error("vocabulary: duplicate word '" + words_[i] + "'");
    }
  }

  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

  std::optional<int> find(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  int id_or_unknown(const std::string& w) const {
    if (auto id = find(w)) return *id;
    if (auto unk = find(kUnknownToken)) return *unk;
    throw Error("token '" + w + "' is not in the vocabulary and there is no " + kUnknownToken);
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

inline std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Whitespace + punctuation split, lowercased. Punctuation is dropped.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '\'' || c == '-' || c == '_' || c == '[' || c == ']') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::vector<Token> tokenize(const std::vector<std::string>& words, const Vocabulary& vocab) {
  std::vector<Token> tokens;
  tokens.reserve(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string w = to_lower(words[i]);
    tokens.push_back({w, vocab.id_or_unknown(w), static_cast<int>(i)});
  }
  return tokens;
}

inline std::vector<Token> tokenize(const std::string& text, const Vocabulary& vocab) {
  return tokenize(split_words(text), vocab);
}

struct Corpus {
  std::vector<ImageTextPair> pairs;
  std::vector<std::string> vocab;
  std::vector<std::string> detector_classes;

  const ImageTextPair& find(const std::string& pair_id) const {
    for (const auto& p : pairs)
      if (p.pair_id == pair_id) return p;
    throw Error("no pair with id '" + pair_id + "'");
  }

  bool operator==(const Corpus&) const = default;
};

namespace detail {

inline void fail_field(const ImageTextPair& p, const std::string& field, const std::string& why) {
  throw Error("pair '" + p.pair_id + "': field " + field + ": " + why);
}

}  // namespace detail

// Checks every documented invariant of one pair; throws naming the pair and field.
inline void validate_pair(const ImageTextPair& p, const Vocabulary& vocab, std::size_t num_classes,
                          std::optional<std::size_t> visual_dim = std::nullopt) {
  using detail::fail_field;
  if (p.regions.empty()) fail_field(p, "image.regions", "at least one region required");
  if (p.tokens.empty()) fail_field(p, "text.tokens", "at least one token required");
  if (!(p.image_width > 0) || !(p.image_height > 0))
    fail_field(p, "image.width/height", "must be positive");
  for (std::size_t r = 0; r < p.regions.size(); ++r) {
    const Region& reg = p.regions[r];
    const std::string at = "image.regions[" + std::to_string(r) + "]";
    if (!reg.box.finite() || !reg.box.ordered()) fail_field(p, at + ".box", "must be finite with x1<x2, y1<y2");
    if (reg.box.x1 < 0 || reg.box.y1 < 0 || reg.box.x2 > p.image_width || reg.box.y2 > p.image_height)
      fail_field(p, at + ".box", "outside image bounds");
    if (!(reg.tag_confidence >= 0 && reg.tag_confidence <= 1))
      fail_field(p, at + ".tag_confidence", "must lie in [0,1]");
    if (reg.class_distribution.size() != num_classes)
      fail_field(p, at + ".class_distribution",
                 "has " + std::to_string(reg.class_distribution.size()) + " entries, expected " +
                     std::to_string(num_classes));
    double sum = 0.0;
    for (double q : reg.class_distribution) {
      if (!(q >= 0) || !std::isfinite(q)) fail_field(p, at + ".class_distribution", "negative or non-finite entry");
      sum += q;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      std::ostringstream os;
      os << "sums to " << sum << ", expected 1";
      fail_field(p, at + ".class_distribution", os.str());
    }
    if (visual_dim && reg.visual_feature.size() != *visual_dim)
      fail_field(p, at + ".visual_feature", "dimension " + std::to_string(reg.visual_feature.size()) +
                                                " differs from corpus dimension " + std::to_string(*visual_dim));
    for (double f : reg.visual_feature)
      if (!std::isfinite(f)) fail_field(p, at + ".visual_feature", "non-finite value");
  }
  for (std::size_t i = 0; i < p.tokens.size(); ++i) {
    const Token& t = p.tokens[i];
    if (t.index != static_cast<int>(i)) fail_field(p, "text.tokens", "token indices must be 0..n-1");
    if (t.vocab_id < 0 || static_cast<std::size_t>(t.vocab_id) >= vocab.size())
      fail_field(p, "text.tokens[" + std::to_string(i) + "]", "vocab id out of range");
  }
  const int nr = static_cast<int>(p.regions.size());
  const int nt = static_cast<int>(p.tokens.size());
  if (p.pre_parsed_triples) {
    for (const auto& tr : *p.pre_parsed_triples) {
      const bool ok = tr.head >= 0 && tr.head < nt && tr.dependent >= 0 && tr.dependent < nt &&
                      (!tr.object || (*tr.object >= 0 && *tr.object < nt));
      if (!ok) fail_field(p, "triples", "token index out of range");
    }
  }
  if (p.gold_alignments) {
    for (const auto& a : *p.gold_alignments)
      if (a.region < 0 || a.region >= nr || a.token < 0 || a.token >= nt)
        fail_field(p, "gold_alignments", "index out of range");
  }
}

// Keeps the `max_regions` most confident regions (original order preserved)
// and the first `max_tokens` tokens, remapping triples and alignments.
inline void trim_pair(ImageTextPair& p, const CorpusLimits& limits) {
  if (p.regions.size() > limits.max_regions) {
    std::vector<std::size_t> order(p.regions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return p.regions[a].tag_confidence > p.regions[b].tag_confidence;
    });
    order.resize(limits.max_regions);
    std::sort(order.begin(), order.end());
    std::vector<int> remap(p.regions.size(), -1);
    std::vector<Region> kept;
    for (std::size_t i : order) {
      remap[i] = static_cast<int>(kept.size());
      kept.push_back(std::move(p.regions[i]));
    }
    p.regions = std::move(kept);
    if (p.gold_alignments) {
      std::vector<Alignment> a;
      for (auto al : *p.gold_alignments)
        if (remap[al.region] >= 0) a.push_back({remap[al.region], al.token});
      p.gold_alignments = std::move(a);
    }
  }
  if (p.tokens.size() > limits.max_tokens) {
    const int n = static_cast<int>(limits.max_tokens);
    p.tokens.resize(limits.max_tokens);
    if (p.pre_parsed_triples) {
      std::erase_if(*p.pre_parsed_triples, [n](const SceneTriple& t) {
        return t.head >= n || t.dependent >= n || (t.object && *t.object >= n);
      });
    }
    if (p.gold_alignments)
      std::erase_if(*p.gold_alignments, [n](const Alignment& a) { return a.token >= n; });
  }
}

// ---- JSON mapping ---------------------------------------------------------

inline nlohmann::json pair_to_json(const ImageTextPair& p) {
  using nlohmann::json;
  json regions = json::array();
  for (const auto& r : p.regions) {
    regions.push_back({{"box", {r.box.x1, r.box.y1, r.box.x2, r.box.y2}},
                       {"tag", r.tag},
                       {"tag_confidence", r.tag_confidence},
                       {"class_distribution", r.class_distribution},
                       {"visual_feature", r.visual_feature}});
  }
  json tokens = json::array();
  for (const auto& t : p.tokens) tokens.push_back(t.surface);
  json j = {{"pair_id", p.pair_id},
            {"image", {{"width", p.image_width}, {"height", p.image_height}, {"regions", regions}}},
            {"text", {{"raw", p.raw_text}, {"tokens", tokens}}}};
  if (p.pre_parsed_triples) {
    json triples = json::array();
    for (const auto& t : *p.pre_parsed_triples) {
      json tj = {{"head", t.head}, {"relation_or_attribute", t.dependent}, {"kind", to_string(t.kind)}};
      if (t.object) tj["object"] = *t.object;
      triples.push_back(tj);
    }
    j["triples"] = triples;
  }
  if (p.gold_alignments) {
    json al = json::array();
    for (const auto& a : *p.gold_alignments) al.push_back({a.region, a.token});
    j["gold_alignments"] = al;
  }
  return j;
}

inline ImageTextPair pair_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  ImageTextPair p;
  p.pair_id = j.at("pair_id").get<std::string>();
  const auto& image = j.at("image");
  p.image_width = image.at("width").get<double>();
  p.image_height = image.at("height").get<double>();
  for (const auto& rj : image.at("regions")) {
    Region r;
    const auto box = rj.at("box").get<std::vector<double>>();
    if (box.size() != 4) throw Error("pair '" + p.pair_id + "': field box: expected 4 numbers");
    r.box = {box[0], box[1], box[2], box[3]};
    r.tag = to_lower(rj.at("tag").get<std::string>());
    r.tag_confidence = rj.value("tag_confidence", 1.0);
    r.class_distribution = rj.at("class_distribution").get<std::vector<double>>();
    r.visual_feature = rj.at("visual_feature").get<std::vector<double>>();
    p.regions.push_back(std::move(r));
  }
  const auto& text = j.at("text");
  p.raw_text = text.value("raw", std::string{});
  if (text.contains("tokens"))
    p.tokens = tokenize(text.at("tokens").get<std::vector<std::string>>(), vocab);
  else
    p.tokens = tokenize(p.raw_text, vocab);
  if (j.contains("triples")) {
    std::vector<SceneTriple> triples;
    for (const auto& tj : j.at("triples")) {
      SceneTriple t;
      t.head = tj.at("head").get<int>();
      t.dependent = tj.at("relation_or_attribute").get<int>();
      t.kind = triple_kind_from_string(tj.at("kind").get<std::string>());
      if (tj.contains("object")) t.object = tj.at("object").get<int>();
      triples.push_back(t);
    }
    p.pre_parsed_triples = std::move(triples);
  }
  if (j.contains("gold_alignments")) {
    std::vector<Alignment> al;
    for (const auto& aj : j.at("gold_alignments")) al.push_back({aj.at(0).get<int>(), aj.at(1).get<int>()});
    p.gold_alignments = std::move(al);
  }
  return p;
}

// Fills the derived positional features of every region.
inline void derive_positional_features(ImageTextPair& p) {
  for (std::size_t r = 0; r < p.regions.size(); ++r) {
    try {
      p.regions[r].positional_feature = positional_feature(p.regions[r].box, p.image_width, p.image_height);
    } catch (const Error& e) {
      detail::fail_field(p, "image.regions[" + std::to_string(r) + "].box", e.what());
    }
  }
}

inline void validate_corpus(const Corpus& c) {
  const Vocabulary vocab(c.vocab);
  std::optional<std::size_t> dim;
  if (!c.pairs.empty() && !c.pairs.front().regions.empty())
    dim = c.pairs.front().regions.front().visual_feature.size();
  for (const auto& p : c.pairs) validate_pair(p, vocab, c.detector_classes.size(), dim);
}

inline Corpus read_corpus(std::istream& in, const CorpusLimits& limits = {}) {
  Corpus c;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  Vocabulary vocab;
  std::optional<std::size_t> dim;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
    if (!have_header) {
      try {
        if (j.value("format", std::string{}) != "rosita-corpus")
          throw ParseError(lineno, "first record must be the rosita-corpus header");
        if (j.value("version", 0) != kCorpusFormatVersion)
          throw ParseError(lineno, "unsupported corpus version");
        c.vocab = j.at("vocab").get<std::vector<std::string>>();
        c.detector_classes = j.at("detector_classes").get<std::vector<std::string>>();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(lineno, e.what());
      }
      vocab = Vocabulary(c.vocab);
      have_header = true;
      continue;
    }
    ImageTextPair p;
    try {
      p = pair_from_json(j, vocab);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
    derive_positional_features(p);
    if (!dim && !p.regions.empty()) dim = p.regions.front().visual_feature.size();
    validate_pair(p, vocab, c.detector_classes.size(), dim);
    trim_pair(p, limits);
    c.pairs.push_back(std::move(p));
  }
  if (!have_header) throw ParseError(lineno, "missing corpus header");
  return c;
}

inline Corpus load_corpus(const std::string& path, const CorpusLimits& limits = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus '" + path + "'");
  return read_corpus(in, limits);
}

inline void write_corpus(std::ostream& out, const Corpus& c) {
  nlohmann::json header = {{"format", "rosita-corpus"},
                           {"version", kCorpusFormatVersion},
                           {"vocab", c.vocab},
                           {"detector_classes", c.detector_classes}};
  out << header.dump() << '\n';
  for (const auto& p : c.pairs) out << pair_to_json(p).dump() << '\n';
}

inline void save_corpus(const std::string& path, const Corpus& c) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write corpus '" + path + "'");
  write_corpus(out, c);
}

}  // namespace rosita
