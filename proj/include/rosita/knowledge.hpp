#pragma once

// Per-pair knowledge preparation (graph + entries, cached) and mask planning
// under the masking strategies used for training and ablations.

#include <algorithm>
#include <cstdint>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include "rosita/entries.hpp"
#include "rosita/objectives.hpp"
#include "rosita/skm.hpp"

namespace rosita {

enum class MaskingMode { Full, NoCross, NoIntra, NoKnowledge, Identical };

struct MaskingStrategy {
  MaskingMode mode = MaskingMode::Full;
  double identical_p = 0.0;

  // full | independent-skm | no-cross | no-intra | no-knowledge | identical:<p> | identical-prob:<p>
  static MaskingStrategy parse(const std::string& s) {
    MaskingStrategy m;
    if (s == "full" || s == "independent-skm" || s == "independent") return m;
    if (s == "no-cross") return m.mode = MaskingMode::NoCross, m;
    if (s == "no-intra") return m.mode = MaskingMode::NoIntra, m;
    if (s == "no-knowledge") return m.mode = MaskingMode::NoKnowledge, m;
    for (const std::string prefix : {"identical:", "identical-prob:", "identical-prob(", "identical("}) {
      if (s.rfind(prefix, 0) != 0) continue;
      std::string num = s.substr(prefix.size());
      if (!num.empty() && num.back() == ')') num.pop_back();
      m.mode = MaskingMode::Identical;
      try {
        m.identical_p = std::stod(num);
      } catch (const std::exception&) {
        throw Error("bad identical probability in masking strategy '" + s + "'");
      }
      if (!(m.identical_p >= 0.0 && m.identical_p <= 1.0)) throw Error("identical probability must lie in [0,1]");
      return m;
    }
    throw Error("unknown masking strategy '" + s + "'");
  }

  std::string name() const {
    switch (mode) {
      case MaskingMode::Full: return "full";
      case MaskingMode::NoCross: return "no-cross";
      case MaskingMode::NoIntra: return "no-intra";
      case MaskingMode::NoKnowledge: return "no-knowledge";
      case MaskingMode::Identical: {
        char buf[32];
        std::snprintf(buf, sizeof buf, "identical:%.2f", identical_p);
        return buf;
      }
    }
    return "";
  }

  bool operator==(const MaskingStrategy&) const = default;
};

struct PreparedPair {
  const ImageTextPair* pair = nullptr;
  UnifiedGraph graph;
  std::vector<KnowledgeEntry> word_entries;    // text-centred
  std::vector<KnowledgeEntry> region_entries;  // image-centred
};

inline PreparedPair prepare_pair(const ImageTextPair& pair, const KnowledgeSources& src, const MaskingStrategy& strategy,
                                 double cross_threshold = kCrossModalThreshold) {
  PreparedPair out;
  out.pair = &pair;
  if (strategy.mode == MaskingMode::NoKnowledge) return out;
  GraphOptions opt;
  opt.cross_threshold = cross_threshold;
  opt.intra_edges = strategy.mode != MaskingMode::NoIntra;
  opt.cross_edges = strategy.mode != MaskingMode::NoCross;
  out.graph = build_graph(pair, src, opt);
  std::vector<KnowledgeEntry> entries;
  if (strategy.mode == MaskingMode::NoCross) {
    // No anchors without cross edges: every object vertex centres an intra-only entry.
    for (const auto& v : out.graph.vertices)
      if (v.is_object()) entries.push_back(extract_context_entry(out.graph, v.id));
  } else {
    entries = extract_all_entries(out.graph);
  }
  for (auto& e : entries) (e.word_anchored() ? out.word_entries : out.region_entries).push_back(std::move(e));
  return out;
}

// Cached knowledge for every pair of a corpus under one strategy.
class KnowledgeBase {
 public:
  KnowledgeBase(const Corpus& corpus, const Lexicon& lexicon, const EmbeddingTable& embeddings,
                const MaskingStrategy& strategy, double cross_threshold = kCrossModalThreshold, int threads = 1)
      : corpus_(&corpus), strategy_(strategy), stats_(accumulate_cooccurrence(corpus, lexicon)) {
    const KnowledgeSources src{&lexicon, &stats_, &embeddings};
    const std::size_t n = corpus.pairs.size();
    prepared_.resize(n);
    const std::size_t workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (workers <= 1) {
      for (std::size_t i = 0; i < n; ++i) prepared_[i] = prepare_pair(corpus.pairs[i], src, strategy, cross_threshold);
      return;
    }
    // Pure per pair; each worker fills a disjoint stride.
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < workers; ++w)
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < n; i += workers)
          prepared_[i] = prepare_pair(corpus.pairs[i], src, strategy, cross_threshold);
      }));
    for (auto& j : jobs) j.get();
  }

  const Corpus& corpus() const noexcept { return *corpus_; }
  const MaskingStrategy& strategy() const noexcept { return strategy_; }
  const CooccurrenceStats& stats() const noexcept { return stats_; }
  std::size_t size() const noexcept { return prepared_.size(); }
  const PreparedPair& operator[](std::size_t i) const { return prepared_.at(i); }

 private:
  const Corpus* corpus_;
  MaskingStrategy strategy_;
  CooccurrenceStats stats_;
  std::vector<PreparedPair> prepared_;
};

// Counts what knowledge actually reached the mask plans.
struct PlanCounters {
  long skm_plans = 0;
  long fallbacks = 0;
  long cross_edges_used = 0;
  long intra_edges_used = 0;
};

inline MaskPlan plan_for_entry(const KnowledgeEntry& entry, const MaskingStrategy& strategy, double alpha,
                               std::uint64_t seed, PlanCounters* counters = nullptr) {
  const std::vector<double> p = strategy.mode == MaskingMode::Identical
                                    ? identical_masking_probs(entry, strategy.identical_p)
                                    : masking_probs(transmission_probs(entry), entry, alpha);
  if (counters) {
    ++counters->skm_plans;
    for (const auto& e : entry.edges) (e.kind == EdgeKind::CrossModal ? counters->cross_edges_used : counters->intra_edges_used)++;
  }
  return sample_masks(p, entry, seed);
}

struct PlanningOptions {
  double alpha = 0.9;
  double random_rate = 0.15;
};

// Builds one example per batch index for `task`. SKM tasks pick a uniformly
// random entry of the required anchor modality; pairs without one fall back
// to the random task of the same modality.
inline std::vector<TaskExample> plan_batch(Task task, const std::vector<std::size_t>& indices, const KnowledgeBase& kb,
                                           const PlanningOptions& opt, std::uint64_t seed,
                                           PlanCounters* counters = nullptr) {
  std::vector<TaskExample> out;
  const std::size_t B = indices.size();
  Rng batch_rng(derive_seed(seed, 0xB));
  const int first_label = static_cast<int>(batch_rng.below(2));
  for (std::size_t b = 0; b < B; ++b) {
    const PreparedPair& pp = kb[indices[b]];
    const ImageTextPair& pair = *pp.pair;
    const std::uint64_t s = derive_seed(seed, b + 1);
    Rng rng(s);
    TaskExample ex;
    ex.task = task;
    ex.image = ex.text = &pair;
    switch (task) {
      case Task::Skmlm:
      case Task::Skmrm: {
        const auto& entries = task == Task::Skmlm ? pp.word_entries : pp.region_entries;
        if (entries.empty()) {
          ex.task = task == Task::Skmlm ? Task::Mlm : Task::Mrm;
          ex.fallback = true;
          if (counters) ++counters->fallbacks;
          ex.plan = task == Task::Skmlm ? random_mask_plan(pair.tokens.size(), opt.random_rate, Modality::Text, rng.next())
                                        : random_mask_plan(pair.regions.size(), opt.random_rate, Modality::Image, rng.next());
        } else {
          const auto& entry = entries[rng.below(entries.size())];
          ex.plan = plan_for_entry(entry, kb.strategy(), opt.alpha, rng.next(), counters);
        }
        break;
      }
      case Task::Mlm:
        ex.plan = random_mask_plan(pair.tokens.size(), opt.random_rate, Modality::Text, rng.next());
        break;
      case Task::Mrm:
        ex.plan = random_mask_plan(pair.regions.size(), opt.random_rate, Modality::Image, rng.next());
        break;
      case Task::Itm: {
        ex.itm_label = static_cast<int>((b + first_label) % 2);
        if (ex.itm_label == kMismatched) {
          const std::size_t n = kb.size();
          if (n < 2) throw Error("ITM negatives need at least two pairs");
          std::size_t j = indices[b];
          if (B >= 2) {
            for (int tries = 0; tries < 8 && kb[j].pair->pair_id == pair.pair_id; ++tries)
              j = indices[(b + 1 + rng.below(B - 1)) % B];
          }
          while (kb[j].pair->pair_id == pair.pair_id) j = rng.below(n);
          ex.text = kb[j].pair;
        }
        break;
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace rosita
