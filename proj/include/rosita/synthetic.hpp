#pragma once

// Synthetic image-text corpora with known region-word alignments.
//
// Each class has a feature centre and each attribute a feature direction, so a
// region's visual feature encodes both what it is and how it looks. Captions
// mention the aligned regions' class words, often preceded by the region's
// attribute and linked by relation words; related regions overlap.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosita/corpus.hpp"
#include "rosita/rng.hpp"
#include "rosita/scene_parser.hpp"

namespace rosita {

struct SynthSpec {
  int vocab_size = 50;
  int num_classes = 10;
  int num_pairs = 200;
  int validation_pairs = 200;
  int regions_per_pair = 6;
  int tokens_per_pair = 12;
  double alignment_rate = 0.8;
  int visual_dim = 16;
  double image_width = 100;
  double image_height = 100;
  double feature_noise = 0.2;
  double attribute_prob = 0.8;   // an aligned object word gets its region's attribute
  double relation_prob = 0.5;    // consecutive object phrases joined by a relation word
  double preferred_attribute_prob = 0.6;  // region attribute is its class's usual one
  double attribute_scale = 0.6;  // norm of an attribute's feature direction, class centres have 2
  bool distinct_attributes = false;  // no two regions of a pair share an attribute

  void validate() const {
    auto bad = [](const std::string& what) { throw Error("infeasible synthetic spec: " + what); };
    if (num_classes < 1) bad("num_classes must be positive");
    if (regions_per_pair < 1) bad("regions_per_pair must be positive");
    if (tokens_per_pair < 1) bad("tokens_per_pair must be positive");
    if (num_pairs < 0 || validation_pairs < 0) bad("pair counts must be non-negative");
    if (!(alignment_rate >= 0.0 && alignment_rate <= 1.0)) bad("alignment_rate must lie in [0,1]");
    if (regions_per_pair > num_classes) bad("regions_per_pair exceeds num_classes");
    if (aligned_per_pair() > tokens_per_pair) bad("more aligned objects than tokens");
    if (visual_dim < 1) bad("visual_dim must be positive");
    if (!(image_width > 0 && image_height > 0)) bad("image size must be positive");
    for (double p : {attribute_prob, relation_prob, preferred_attribute_prob})
      if (!(p >= 0.0 && p <= 1.0)) bad("probabilities must lie in [0,1]");
    if (vocab_size < num_classes + 4) bad("vocab_size too small for the class count");
    if (!(attribute_scale >= 0.0)) bad("attribute_scale must be non-negative");
  }

  int aligned_per_pair() const { return static_cast<int>(std::lround(alignment_rate * regions_per_pair)); }
};

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = {{"vocab_size", s.vocab_size},       {"num_classes", s.num_classes},
       {"num_pairs", s.num_pairs},         {"validation_pairs", s.validation_pairs},
       {"regions_per_pair", s.regions_per_pair}, {"tokens_per_pair", s.tokens_per_pair},
       {"alignment_rate", s.alignment_rate}, {"visual_dim", s.visual_dim},
       {"image_width", s.image_width},     {"image_height", s.image_height},
       {"feature_noise", s.feature_noise}, {"attribute_prob", s.attribute_prob},
       {"relation_prob", s.relation_prob}, {"preferred_attribute_prob", s.preferred_attribute_prob},
       {"attribute_scale", s.attribute_scale}, {"distinct_attributes", s.distinct_attributes}};
}

inline void from_json(const nlohmann::json& j, SynthSpec& s) {
  const SynthSpec d;
  s.vocab_size = j.value("vocab_size", d.vocab_size);
  s.num_classes = j.value("num_classes", d.num_classes);
  s.num_pairs = j.value("num_pairs", d.num_pairs);
  s.validation_pairs = j.value("validation_pairs", d.validation_pairs);
  s.regions_per_pair = j.value("regions_per_pair", d.regions_per_pair);
  s.tokens_per_pair = j.value("tokens_per_pair", d.tokens_per_pair);
  s.alignment_rate = j.value("alignment_rate", d.alignment_rate);
  s.visual_dim = j.value("visual_dim", d.visual_dim);
  s.image_width = j.value("image_width", d.image_width);
  s.image_height = j.value("image_height", d.image_height);
  s.feature_noise = j.value("feature_noise", d.feature_noise);
  s.attribute_prob = j.value("attribute_prob", d.attribute_prob);
  s.relation_prob = j.value("relation_prob", d.relation_prob);
  s.preferred_attribute_prob = j.value("preferred_attribute_prob", d.preferred_attribute_prob);
  s.attribute_scale = j.value("attribute_scale", d.attribute_scale);
  s.distinct_attributes = j.value("distinct_attributes", d.distinct_attributes);
}

inline SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open synthetic spec '" + path + "'");
  try {
    return nlohmann::json::parse(in).get<SynthSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("synthetic spec '" + path + "': " + e.what());
  }
}

namespace synth_words {

// All of these appear in data/toy_embeddings.txt and data/toy_lexicon.tsv.
inline const std::vector<std::string> kObjects = {
    "dog", "cat", "horse", "car", "tree", "ball", "man", "woman", "bike", "bird", "boat", "chair",
    "table", "cup", "sky", "grass", "bus", "train", "kite", "umbrella", "bench", "clock", "bottle",
    "pizza", "cake", "bed", "sheep", "cow", "elephant", "giraffe"};
inline const std::vector<std::string> kAttributes = {
    "red", "blue", "green", "white", "black", "yellow", "brown", "small", "big", "tall", "old",
    "young", "wooden", "metal", "bright", "dark", "wet", "dry", "striped", "furry", "shiny", "round",
    "pink", "purple", "gray", "long", "tiny", "open", "clean", "heavy"};
inline const std::vector<std::string> kRelations = {
    "on", "near", "under", "behind", "beside", "holding", "chases", "riding", "wearing", "watching",
    "above", "over", "along", "carrying", "against"};
inline const std::vector<std::string> kFillers = {
    "and", "the", "a", "there", "is", "of", "some", "this", "two", "very", "while", "at"};

}  // namespace synth_words

// Fixed generative structure shared by every pair drawn from one seed.
struct SynthWorld {
  std::vector<std::string> vocab;  // [UNK], objects, attributes, relations, fillers
  int first_object = 1, num_objects = 0;
  int first_attribute = 0, num_attributes = 0;
  int first_relation = 0, num_relations = 0;
  int first_filler = 0, num_fillers = 0;
  std::vector<std::vector<double>> class_centres;
  std::vector<std::vector<double>> attribute_directions;

  const std::string& object(int c) const { return vocab[first_object + c]; }
  const std::string& attribute(int a) const { return vocab[first_attribute + a]; }
};

inline SynthWorld make_synth_world(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  using namespace synth_words;
  if (spec.num_classes > static_cast<int>(kObjects.size()))
    throw Error("infeasible synthetic spec: at most " + std::to_string(kObjects.size()) + " classes");
  SynthWorld w;
  const int rest = spec.vocab_size - 1 - spec.num_classes;
  w.num_attributes = std::min<int>(rest * 2 / 5, kAttributes.size());
  w.num_relations = std::min<int>(rest / 4, kRelations.size());
  w.num_fillers = rest - w.num_attributes - w.num_relations;
  // Overflow beyond the filler list goes to attributes, then relations.
  int overflow = std::max(0, w.num_fillers - static_cast<int>(kFillers.size()));
  w.num_fillers -= overflow;
  const int more_attr = std::min<int>(overflow, kAttributes.size() - w.num_attributes);
  w.num_attributes += more_attr;
  overflow -= more_attr;
  const int more_rel = std::min<int>(overflow, kRelations.size() - w.num_relations);
  w.num_relations += more_rel;
  if (w.num_attributes < 1 || w.num_relations < 1 || w.num_fillers < 1 ||
      1 + spec.num_classes + w.num_attributes + w.num_relations + w.num_fillers != spec.vocab_size)
    throw Error("infeasible synthetic spec: vocab_size " + std::to_string(spec.vocab_size) +
                " cannot be filled from the built-in word lists");
  w.vocab.push_back(kUnknownToken);
  w.num_objects = spec.num_classes;
  for (int i = 0; i < w.num_objects; ++i) w.vocab.push_back(kObjects[i]);
  w.first_attribute = static_cast<int>(w.vocab.size());
  for (int i = 0; i < w.num_attributes; ++i) w.vocab.push_back(kAttributes[i]);
  w.first_relation = static_cast<int>(w.vocab.size());
  for (int i = 0; i < w.num_relations; ++i) w.vocab.push_back(kRelations[i]);
  w.first_filler = static_cast<int>(w.vocab.size());
  for (int i = 0; i < w.num_fillers; ++i) w.vocab.push_back(kFillers[i]);

  Rng rng(derive_seed(seed, 0));
  const double dim = spec.visual_dim;
  auto draw = [&](double scale) {
    std::vector<double> v(spec.visual_dim);
    for (auto& x : v) x = rng.normal() * scale / std::sqrt(dim);
    return v;
  };
  for (int c = 0; c < spec.num_classes; ++c) w.class_centres.push_back(draw(2.0));
  for (int a = 0; a < w.num_attributes; ++a) w.attribute_directions.push_back(draw(spec.attribute_scale));
  if (spec.distinct_attributes && w.num_attributes < spec.regions_per_pair)
    throw Error("infeasible synthetic spec: distinct attributes need at least regions_per_pair attribute words");
  return w;
}

inline Lexicon synthetic_lexicon(const SynthWorld& w) {
  Lexicon lex;
  for (int i = 0; i < w.num_objects; ++i) lex.set(w.vocab[w.first_object + i], WordRole::Object);
  for (int i = 0; i < w.num_attributes; ++i) lex.set(w.vocab[w.first_attribute + i], WordRole::Attribute);
  for (int i = 0; i < w.num_relations; ++i) lex.set(w.vocab[w.first_relation + i], WordRole::Relation);
  for (int i = 0; i < w.num_fillers; ++i) lex.set(w.vocab[w.first_filler + i], WordRole::Other);
  return lex;
}

namespace detail {

inline Box random_box(Rng& rng, const SynthSpec& spec) {
  const double bw = rng.uniform(0.15, 0.45) * spec.image_width;
  const double bh = rng.uniform(0.15, 0.45) * spec.image_height;
  const double x1 = rng.uniform(0.0, spec.image_width - bw);
  const double y1 = rng.uniform(0.0, spec.image_height - bh);
  return {x1, y1, x1 + bw, y1 + bh};
}

// A box guaranteed to overlap `anchor`.
inline Box overlapping_box(Rng& rng, const SynthSpec& spec, const Box& anchor) {
  const double bw = rng.uniform(0.15, 0.45) * spec.image_width;
  const double bh = rng.uniform(0.15, 0.45) * spec.image_height;
  const double cx = rng.uniform(anchor.x1, anchor.x2);
  const double cy = rng.uniform(anchor.y1, anchor.y2);
  const double x1 = std::clamp(cx - bw / 2, 0.0, spec.image_width - bw);
  const double y1 = std::clamp(cy - bh / 2, 0.0, spec.image_height - bh);
  Box b{x1, y1, x1 + bw, y1 + bh};
  return b;
}

inline ImageTextPair make_pair(const SynthSpec& spec, const SynthWorld& w, const Vocabulary& vocab,
                               const std::string& id, std::uint64_t seed) {
  Rng rng(seed);
  const int R = spec.regions_per_pair;
  const int k = spec.aligned_per_pair();

  std::vector<int> classes(spec.num_classes);
  for (int c = 0; c < spec.num_classes; ++c) classes[c] = c;
  rng.shuffle(classes);
  classes.resize(R);

  ImageTextPair p;
  p.pair_id = id;
  p.image_width = spec.image_width;
  p.image_height = spec.image_height;

  std::vector<int> attrs(R);
  std::vector<int> pool(w.num_attributes);
  for (int a = 0; a < w.num_attributes; ++a) pool[a] = a;
  if (spec.distinct_attributes) rng.shuffle(pool);
  std::vector<char> used(w.num_attributes, 0);
  for (int r = 0; r < R; ++r) {
    const int c = classes[r];
    int a = rng.bernoulli(spec.preferred_attribute_prob) ? c % w.num_attributes
                                                         : static_cast<int>(rng.below(w.num_attributes));
    if (spec.distinct_attributes && used[a]) {
      a = *std::find_if(pool.begin(), pool.end(), [&](int x) { return !used[x]; });
    }
    used[a] = 1;
    attrs[r] = a;
    Region reg;
    reg.box = random_box(rng, spec);
    reg.visual_feature = w.class_centres[c];
    for (int d = 0; d < spec.visual_dim; ++d)
      reg.visual_feature[d] += w.attribute_directions[attrs[r]][d] +
                               rng.normal() * spec.feature_noise / std::sqrt(static_cast<double>(spec.visual_dim));
    std::vector<double> logits(spec.num_classes);
    for (auto& l : logits) l = 0.5 * rng.normal();
    logits[c] += 3.0;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (auto& l : logits) z += (l = std::exp(l - mx));
    for (auto& l : logits) l /= z;
    reg.class_distribution = logits;
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.size(); ++j)
      if (logits[j] > logits[best]) best = j;
    reg.tag = w.object(static_cast<int>(best));
    reg.tag_confidence = logits[best];
    p.regions.push_back(std::move(reg));
  }

  // Regions 0..k-1 are mentioned in the caption, in a random order.
  std::vector<int> order(k);
  for (int i = 0; i < k; ++i) order[i] = i;
  rng.shuffle(order);

  int budget = spec.tokens_per_pair - k;
  std::vector<bool> with_attr(k, false);
  for (int i = 0; i < k; ++i)
    if (budget > 0 && rng.bernoulli(spec.attribute_prob)) {
      with_attr[i] = true;
      --budget;
    }
  std::vector<int> connector(k, -1);  // -1 none, -2 filler "and", else relation index
  for (int i = 1; i < k; ++i)
    if (budget > 0) {
      connector[i] = rng.bernoulli(spec.relation_prob) ? static_cast<int>(rng.below(w.num_relations)) : -2;
      --budget;
    }
  const bool lead = budget > 0 && k > 0;
  if (lead) --budget;

  std::vector<std::string> words;
  std::vector<Alignment> gold;
  if (lead) words.push_back(w.vocab[w.first_filler + std::min(1, w.num_fillers - 1)]);
  for (int i = 0; i < k; ++i) {
    const int r = order[i];
    if (connector[i] >= 0) {
      words.push_back(w.vocab[w.first_relation + connector[i]]);
      const Box& prev = p.regions[order[i - 1]].box;
      p.regions[r].box = overlapping_box(rng, spec, prev);
    } else if (connector[i] == -2) {
      words.push_back(w.vocab[w.first_filler]);
    }
    if (with_attr[i]) words.push_back(w.attribute(attrs[r]));
    gold.push_back({r, static_cast<int>(words.size())});
    words.push_back(w.object(classes[r]));
  }
  while (budget-- > 0) words.push_back(w.vocab[w.first_filler + rng.below(w.num_fillers)]);

  p.tokens = tokenize(words, vocab);
  for (std::size_t i = 0; i < words.size(); ++i) p.raw_text += (i ? " " : "") + words[i];
  p.gold_alignments = std::move(gold);
  derive_positional_features(p);
  return p;
}

inline Corpus make_split(const SynthSpec& spec, const SynthWorld& w, std::uint64_t seed, int count,
                         const std::string& prefix, std::uint64_t stream) {
  Corpus c;
  c.vocab = w.vocab;
  for (int i = 0; i < spec.num_classes; ++i) c.detector_classes.push_back(w.object(i));
  const Vocabulary vocab(c.vocab);
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%s-%04d", prefix.c_str(), i);
    c.pairs.push_back(make_pair(spec, w, vocab, id, derive_seed(seed, stream, static_cast<std::uint64_t>(i))));
  }
  return c;
}

}  // namespace detail

// Training split of the synthetic corpus; a pure function of (spec, seed).
inline Corpus generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  const SynthWorld w = make_synth_world(spec, seed);
  return detail::make_split(spec, w, seed, spec.num_pairs, "train", 1);
}

// Held-out pairs drawn from the same world but a disjoint random stream.
inline Corpus generate_synthetic_validation(const SynthSpec& spec, std::uint64_t seed) {
  const SynthWorld w = make_synth_world(spec, seed);
  return detail::make_split(spec, w, seed, spec.validation_pairs, "val", 2);
}

}  // namespace rosita
