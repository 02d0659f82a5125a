#pragma once

// Structural knowledge masking: transmission probabilities over a knowledge
// entry, their conversion to per-vertex masking probabilities, and sampling
// of concrete mask plans. Plain random plans for MLM/MRM live here too.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "rosita/entries.hpp"
#include "rosita/rng.hpp"

namespace rosita {

enum class PlanOrigin { Skm, Random };

struct MaskPlan {
  std::vector<double> probabilities;  // per entry vertex (SKM plans only)
  double rate = 0.0;                  // random plans only
  std::vector<int> masked_words;      // sorted token indices
  std::vector<int> masked_regions;    // sorted region indices
  PlanOrigin origin = PlanOrigin::Random;
  std::optional<int> anchor;          // vertex id for SKM plans

  bool operator==(const MaskPlan&) const = default;
};

// Divides every column of `s` whose sum exceeds 1 by that sum.
inline Matrix cap_columns(Matrix s) {
  const Matrix sums = column_sums(s);
  for (std::size_t c = 0; c < s.cols(); ++c) {
    const double total = sums(0, c);
    if (total > 1.0)
      for (std::size_t r = 0; r < s.rows(); ++r) s(r, c) /= total;
  }
  return s;
}

// T = ½ Ŝπ + ½ ŜŜπ with π one-hot at the anchor (local index 0), on the
// column-capped Ŝ.
inline std::vector<double> transmission_probs(const Matrix& s_hat, std::size_t anchor_index = 0) {
  const std::size_t n = s_hat.rows();
  if (s_hat.cols() != n) throw Error("transmission_probs: S_hat must be square");
  if (anchor_index >= n) throw Error("transmission_probs: anchor index out of range");
  const Matrix s = cap_columns(s_hat);
  std::vector<double> one_hop(n), t(n);
  for (std::size_t j = 0; j < n; ++j) one_hop[j] = s(j, anchor_index);
  for (std::size_t j = 0; j < n; ++j) {
    double two_hop = 0.0;
    for (std::size_t k = 0; k < n; ++k) two_hop += s(j, k) * one_hop[k];
    t[j] = std::clamp(0.5 * one_hop[j] + 0.5 * two_hop, 0.0, 1.0);
  }
  return t;
}

inline std::vector<double> transmission_probs(const KnowledgeEntry& entry) {
  return transmission_probs(entry.S_hat, 0);
}

// Anchor → 1; same-modality context → α·t; opposite-modality context → (1−α)(1−t).
inline std::vector<double> masking_probs(const std::vector<double>& t, const KnowledgeEntry& entry, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("masking_probs: alpha must lie in [0,1]");
  if (t.size() != entry.size()) throw Error("masking_probs: size mismatch");
  std::vector<double> p(t.size());
  const Modality anchor_mod = entry.anchor_vertex().modality;
  for (std::size_t j = 0; j < t.size(); ++j) {
    if (j == 0) p[j] = 1.0;
    else if (entry.vertices[j].modality == anchor_mod) p[j] = alpha * t[j];
    else p[j] = (1.0 - alpha) * (1.0 - t[j]);
  }
  return p;
}

// Anchor → 1, every context → p (the identical-probability ablation).
inline std::vector<double> identical_masking_probs(const KnowledgeEntry& entry, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error("identical_masking_probs: p must lie in [0,1]");
  std::vector<double> out(entry.size(), p);
  if (!out.empty()) out[0] = 1.0;
  return out;
}

// Independent Bernoulli draw per entry vertex, routed by modality.
inline MaskPlan sample_masks(const std::vector<double>& p, const KnowledgeEntry& entry, std::uint64_t seed) {
  if (p.size() != entry.size()) throw Error("sample_masks: size mismatch");
  Rng rng(seed);
  MaskPlan plan;
  plan.origin = PlanOrigin::Skm;
  plan.anchor = entry.anchor;
  plan.probabilities = p;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const bool masked = rng.uniform() < p[j];
    if (!masked) continue;
    const Vertex& v = entry.vertices[j];
    (v.modality == Modality::Text ? plan.masked_words : plan.masked_regions).push_back(v.payload);
  }
  std::sort(plan.masked_words.begin(), plan.masked_words.end());
  std::sort(plan.masked_regions.begin(), plan.masked_regions.end());
  return plan;
}

// Masks each of `count` items independently at `rate`; if nothing was drawn,
// one index is forced so the loss is defined.
inline MaskPlan random_mask_plan(std::size_t count, double rate, Modality modality, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error("random_mask_plan: rate must lie in [0,1]");
  if (count == 0) throw Error("random_mask_plan: nothing to mask");
  Rng rng(seed);
  MaskPlan plan;
  plan.origin = PlanOrigin::Random;
  plan.rate = rate;
  auto& dst = modality == Modality::Text ? plan.masked_words : plan.masked_regions;
  for (std::size_t i = 0; i < count; ++i)
    if (rng.uniform() < rate) dst.push_back(static_cast<int>(i));
  if (dst.empty()) dst.push_back(static_cast<int>(rng.below(count)));
  return plan;
}

}  // namespace rosita
