// Acceptance checks. One PASS/FAIL line per criterion; pass ids to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "test_support.hpp"

using namespace rosita;
namespace rt = rosita::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- shared training runs --------------------------------------------------

TrainConfig desk_config(std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.synthetic = SynthSpec{};
  cfg.seed = seed;
  return cfg;
}

struct Run {
  TrainingData data;
  TrainResult result;
  EvalReport report;
  double train_seconds = 0;
};

// Trained runs are cached per (seed, strategy) so criteria sharing a run
// within one invocation train it once.
Run& trained(std::uint64_t seed, const MaskingStrategy& strategy) {
  static std::map<std::pair<std::uint64_t, std::string>, Run> cache;
  const auto key = std::make_pair(seed, strategy.name());
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  TrainConfig cfg = desk_config(seed);
  cfg.strategy = strategy;
  Run run;
  run.data = load_training_data(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  run.result = train(cfg, run.data);
  run.train_seconds = seconds_since(t0);
  const KnowledgeBase kb(run.data.validation, run.data.lexicon, run.data.embeddings, MaskingStrategy{},
                         cfg.cross_threshold);
  run.report = evaluate(run.result.params, kb, {cfg.alpha, cfg.eval_repeats, cfg.eval_seed});
  return cache.emplace(key, std::move(run)).first->second;
}

double pct(const std::optional<TaskAccuracy>& a) { return a ? a->percent() : -1.0; }

// ---- 1: transmission vs path enumeration ----------------------------------

Outcome transmission_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto e = rt::random_entry(rng, 1 + static_cast<int>(rng.below(8)));
    const auto t = transmission_probs(e);
    const auto o = rt::path_oracle(e.S_hat);
    for (std::size_t i = 0; i < t.size(); ++i) worst = std::max(worst, std::abs(t[i] - o[i]));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 10, fmt("1000 entries N<=8, max |diff| %.2e (tol 1e-9), %.2fs (limit 10s)", worst, secs)};
}

// ---- 2: masking-probability laws ------------------------------------------

KnowledgeEntry two_modality_entry() {
  KnowledgeEntry e;
  e.vertices = {{0, Modality::Text, 0, VertexRole::ObjectWord},
                {1, Modality::Text, 1, VertexRole::AttributeWord},
                {2, Modality::Image, 0, VertexRole::ObjectRegion}};
  e.S_hat = Matrix(3, 3);
  return e;
}

Outcome masking_laws() {
  const KnowledgeEntry e = two_modality_entry();
  std::vector<std::string> broken;
  for (double alpha : {0.0, 0.5, 0.9, 1.0}) {
    double prev_intra = -1, prev_cross = 2;
    for (int k = 0; k <= 100; ++k) {
      const double t = k / 100.0;
      const auto p = masking_probs({0.3, t, t}, e, alpha);
      if (p[0] != 1.0) broken.push_back(fmt("anchor %.17g at alpha %.2f", p[0], alpha));
      for (double x : p)
        if (!(x >= 0.0 && x <= 1.0)) broken.push_back(fmt("p=%g outside [0,1] at alpha %.2f", x, alpha));
      const bool strict = alpha > 0.0 && alpha < 1.0;
      if (k > 0) {
        if (strict ? !(p[1] > prev_intra) : !(p[1] >= prev_intra))
          broken.push_back(fmt("intra not increasing at alpha %.2f t %.2f", alpha, t));
        if (strict ? !(p[2] < prev_cross) : !(p[2] <= prev_cross))
          broken.push_back(fmt("cross not decreasing at alpha %.2f t %.2f", alpha, t));
      }
      prev_intra = p[1];
      prev_cross = p[2];
    }
  }
  double worst = 0;
  for (double t : {0.0, 0.1234, 0.5, 0.87, 1.0}) {
    const auto p = masking_probs({0.0, t, t}, e, 0.9);
    worst = std::max({worst, std::abs(p[1] - 0.9 * t), std::abs(p[2] - 0.1 * (1 - t))});
  }
  if (worst > 1e-12) broken.push_back(fmt("alpha=0.9 spot values off by %.2e", worst));
  return {broken.empty(), broken.empty() ? fmt("alpha in {0,0.5,0.9,1}, 101 t values; spot error %.1e (tol 1e-12)", worst)
                                         : broken.front() + fmt(" (+%zu more)", broken.size() - 1)};
}

// ---- 3: entry structure ---------------------------------------------------

Outcome entry_structure() {
  Rng rng(303);
  long entries = 0, mismatched_sets = 0, far = 0, bad_anchor_graphs = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const UnifiedGraph g = rt::random_graph(rng);
    const auto anchors = select_anchors(g);
    if (std::set<int>(anchors.begin(), anchors.end()) != rt::anchor_oracle(g)) ++bad_anchor_graphs;
    for (int a : anchors) {
      const KnowledgeEntry e = extract_entry(g, a);
      ++entries;
      std::set<int> ids;
      for (const auto& v : e.vertices) ids.insert(v.id);
      if (ids != rt::entry_set_oracle(g, a) || e.vertices.front().id != a) ++mismatched_sets;
      for (int h : entry_hops(e))
        if (h < 0 || h > 2) ++far;
    }
  }
  const bool ok = entries > 0 && mismatched_sets == 0 && far == 0 && bad_anchor_graphs == 0;
  return {ok, fmt("1000 graphs, %ld entries: %ld vertex-set mismatches, %ld vertices beyond two hops, %ld graphs with "
                  "wrong anchors",
                  entries, mismatched_sets, far, bad_anchor_graphs)};
}

// ---- 4: sampling frequencies ----------------------------------------------

Outcome sampling_statistics() {
  constexpr int kDraws = 100000;
  std::vector<std::string> broken;
  double worst_sigma = 0;
  auto check = [&](const std::string& what, double expected, long hits) {
    const double sd = std::sqrt(expected * (1 - expected) / kDraws);
    const double freq = static_cast<double>(hits) / kDraws;
    const double z = sd > 0 ? std::abs(freq - expected) / sd : (freq == expected ? 0.0 : INFINITY);
    worst_sigma = std::max(worst_sigma, z);
    if (z > 3.0) broken.push_back(fmt("%s: %.5f vs %.5f (%.1f sd)", what.c_str(), freq, expected, z));
  };

  KnowledgeEntry e;
  const std::vector<double> P{1.0, 0.05, 0.3, 0.5, 0.72, 0.0, 0.95};
  for (int i = 0; i < static_cast<int>(P.size()); ++i)
    e.vertices.push_back({i, i % 2 ? Modality::Image : Modality::Text, i, VertexRole::ObjectWord});
  e.S_hat = Matrix(P.size(), P.size());
  std::vector<long> hits(P.size(), 0);
  for (int d = 0; d < kDraws; ++d) {
    const MaskPlan plan = sample_masks(P, e, derive_seed(41, d));
    for (int w : plan.masked_words) ++hits[w];
    for (int r : plan.masked_regions) ++hits[r];
  }
  for (std::size_t i = 0; i < P.size(); ++i) check(fmt("vertex %zu", i), P[i], hits[i]);

  // Nominal 15% on a long sequence, where the one-forced-mask rule is negligible,
  // and the exact conditional rate on a short one where it is not.
  for (Modality m : {Modality::Text, Modality::Image}) {
    for (int count : {64, 12}) {
      const double forced = std::pow(0.85, count) / count;
      std::vector<long> h(count, 0);
      for (int d = 0; d < kDraws; ++d) {
        const MaskPlan plan = random_mask_plan(count, 0.15, m, derive_seed(43, count, d));
        for (int i : m == Modality::Text ? plan.masked_words : plan.masked_regions) ++h[i];
      }
      for (int i = 0; i < count; ++i)
        check(fmt("%s %d/%d", to_string(m), i, count), count == 64 ? 0.15 : 0.15 + forced, h[i]);
    }
  }
  return {broken.empty(), broken.empty() ? fmt("100000 draws, worst deviation %.2f sd (limit 3); random rate 15%%", worst_sigma)
                                         : broken.front() + fmt(" (+%zu more)", broken.size() - 1)};
}

// ---- 5: gradients ---------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig cfg = desk_config();
  cfg.synthetic->num_pairs = 8;
  cfg.synthetic->validation_pairs = 0;
  cfg.model.hidden = 8;
  cfg.model.layers = 2;
  cfg.model.heads = 2;
  cfg.model.ffn = 16;
  const TrainingData data = load_training_data(cfg);
  ModelParams p = ModelParams::initialize(cfg.model, 77);
  const KnowledgeBase kb(data.train, data.lexicon, data.embeddings, MaskingStrategy{}, cfg.cross_threshold);

  double worst = 0;
  std::string worst_at;
  long checked = 0;
  for (Task task : kAllTasks) {
    // Two examples so ITM sees one matched and one mismatched pair.
    const auto batch = plan_batch(task, {0, 1}, kb, {cfg.alpha, cfg.random_rate}, 5);
    for (const auto& ex : batch)
      if (ex.fallback) return {false, std::string("no knowledge entry for ") + to_string(task)};
    auto loss = [&](const ModelParams& q) {
      double s = 0;
      for (const auto& ex : batch) s += example_loss(ex, q).loss;
      return s;
    };
    ModelParams g = ModelParams::zeros(p.config);
    for (const auto& ex : batch) example_loss(ex, p, &g);
    auto pt = p.tensors();
    auto gt = g.tensors();
    for (std::size_t t = 0; t < pt.size(); ++t) {
      Matrix& m = *pt[t].second;
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double num = rt::numeric_derivative(p, m, i, 1e-5, loss);
        const double an = gt[t].second->data()[i];
        const double rel = std::abs(num - an) / std::max(std::abs(num) + std::abs(an), 1e-6);
        ++checked;
        if (rel > worst) worst = rel, worst_at = fmt("%s %s[%zu]", to_string(task), pt[t].first.c_str(), i);
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60, fmt("d=8 L=2 H=2, %ld partials over 5 losses, worst rel err %.2e at %s (tol 1e-4), "
                                         "%.1fs (limit 60s)",
                                         checked, worst, worst_at.c_str(), secs)};
}

// ---- 6: attention rows ----------------------------------------------------

Outcome attention_normalization() {
  TrainConfig cfg = desk_config();
  cfg.synthetic->num_pairs = 20;
  cfg.synthetic->validation_pairs = 0;
  cfg.model.hidden = 8;
  cfg.model.heads = 2;
  const TrainingData data = load_training_data(cfg);
  ModelParams p = ModelParams::initialize(cfg.model, 9);
  ModelParams::visit(p, [](const std::string& name, Matrix& m) {
    if (!name.ends_with("_gain")) m *= 4.0;  // sharpen attention away from uniform
  });
  double worst_row = 0, worst_agg = 0;
  long rows = 0;
  for (const auto& pair : data.train.pairs) {
    const Encoded enc = encode(make_input(pair, nullptr, p.config), p);
    const auto& real = enc.forward.real;
    for (const auto& layer : enc.forward.layers) {
      for (const auto& head : layer.probs)
        for (std::size_t i = 0; i < head.rows(); ++i) {
          double s = 0;
          for (std::size_t j = 0; j < head.cols(); ++j) s += head(i, j);
          worst_row = std::max(worst_row, std::abs(s - 1));
          ++rows;
        }
      // recompute the aggregate by hand: sum heads, softmax over real columns
      const Matrix agg = aggregate_attention(layer.probs, real);
      for (std::size_t i = 0; i < agg.rows(); ++i) {
        double s = 0, z = 0;
        std::vector<double> want(agg.cols(), 0.0);
        for (std::size_t j = 0; j < agg.cols(); ++j) {
          if (!real[j]) continue;
          double sum = 0;
          for (const auto& h : layer.probs) sum += h(i, j);
          z += (want[j] = std::exp(sum));
        }
        for (std::size_t j = 0; j < agg.cols(); ++j) {
          s += agg(i, j);
          worst_agg = std::max(worst_agg, std::abs(agg(i, j) - want[j] / z));
        }
        worst_row = std::max(worst_row, std::abs(s - 1));
        ++rows;
      }
    }
  }
  // Fixed H=2 fixture with hand-computed values.
  const Matrix h1 = Matrix::from_rows({{0.5, 0.5, 0.0}, {0.1, 0.2, 0.7}});
  const Matrix h2 = Matrix::from_rows({{1.0, 0.0, 0.0}, {0.3, 0.3, 0.4}});
  const Matrix a = aggregate_attention({h1, h2}, {1, 1, 1});
  const double z0 = std::exp(1.5) + std::exp(0.5) + 1.0;
  const double z1 = std::exp(0.4) + std::exp(0.5) + std::exp(1.1);
  const double hand = std::max({std::abs(a(0, 0) - std::exp(1.5) / z0), std::abs(a(0, 1) - std::exp(0.5) / z0),
                                std::abs(a(0, 2) - 1.0 / z0), std::abs(a(1, 0) - std::exp(0.4) / z1),
                                std::abs(a(1, 1) - std::exp(0.5) / z1), std::abs(a(1, 2) - std::exp(1.1) / z1)});
  const bool ok = worst_row <= 1e-6 && worst_agg <= 1e-12 && hand <= 1e-12;
  return {ok, fmt("%ld rows, max |sum-1| %.1e (tol 1e-6); aggregate vs recomputation %.1e, vs hand fixture %.1e", rows,
                  worst_row, worst_agg, hand)};
}

// ---- 7: training sanity ---------------------------------------------------

Outcome training_sanity() {
  const Run& run = trained(1, MaskingStrategy{});
  const auto& h = run.result.history;
  const std::size_t k = std::min<std::size_t>(100, h.size());
  double first = 0, last = 0;
  for (std::size_t i = 0; i < k; ++i) first += h[i].loss, last += h[h.size() - k + i].loss;
  first /= k;
  last /= k;
  const double drop = 1 - last / first;
  const double chance = 100.0 / desk_config().synthetic->vocab_size;
  const double acc = pct(run.report.skmlm);
  const bool ok = drop >= 0.30 && acc > 5 * chance && run.train_seconds < 600;
  return {ok, fmt("loss %.3f -> %.3f (drop %.0f%%, need 30%%); held-out SKMLM %.2f%% vs 5x chance %.1f%%; train %.0fs "
                  "(limit 600s)",
                  first, last, 100 * drop, acc, 5 * chance, run.train_seconds)};
}

// ---- 8/9: directional ablations -------------------------------------------

struct Metrics {
  double itm, skmlm, skmrm;
};

Metrics metrics_of(const Run& r) { return {pct(r.report.itm), pct(r.report.skmlm), pct(r.report.skmrm)}; }

std::string majority(const std::vector<Metrics>& ours, const std::vector<Metrics>& theirs, bool& ok) {
  int wins[3] = {0, 0, 0};
  for (std::size_t s = 0; s < ours.size(); ++s) {
    wins[0] += ours[s].itm >= theirs[s].itm;
    wins[1] += ours[s].skmlm >= theirs[s].skmlm;
    wins[2] += ours[s].skmrm >= theirs[s].skmrm;
  }
  const int need = static_cast<int>(ours.size()) / 2 + 1;
  ok = wins[0] >= need && wins[1] >= need && wins[2] >= need;
  return fmt("seeds won ITM %d/3, SKMLM %d/3, SKMRM %d/3 (need %d)", wins[0], wins[1], wins[2], need);
}

std::string per_seed(const std::vector<Metrics>& a, const std::vector<Metrics>& b) {
  std::string s;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += fmt("; s%zu %.1f/%.1f/%.1f vs %.1f/%.1f/%.1f", i + 1, a[i].itm, a[i].skmlm, a[i].skmrm, b[i].itm, b[i].skmlm,
             b[i].skmrm);
  return s;
}

Outcome knowledge_ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Metrics> full, none;
  for (std::uint64_t seed : {1, 2, 3}) {
    full.push_back(metrics_of(trained(seed, MaskingStrategy{})));
    none.push_back(metrics_of(trained(seed, MaskingStrategy::parse("no-knowledge"))));
  }
  bool ok = false;
  std::string d = "full >= no-knowledge: " + majority(full, none, ok) + per_seed(full, none);
  const double secs = seconds_since(t0);
  return {ok && secs < 3600, d + fmt("; %.0fs (limit 3600s)", secs)};
}

Outcome identical_ablation() {
  std::vector<Metrics> full, best;
  for (std::uint64_t seed : {1, 2, 3}) {
    full.push_back(metrics_of(trained(seed, MaskingStrategy{})));
    Metrics b{-1, -1, -1};
    for (const char* mode : {"identical:0.15", "identical:0.30", "identical:0.45"}) {
      const Metrics m = metrics_of(trained(seed, MaskingStrategy::parse(mode)));
      b = {std::max(b.itm, m.itm), std::max(b.skmlm, m.skmlm), std::max(b.skmrm, m.skmrm)};
    }
    best.push_back(b);
  }
  bool ok = false;
  const std::string d = "independent >= best identical (per metric): " + majority(full, best, ok) + per_seed(full, best);
  return {ok, d};
}

// ---- 10: attention alignment ----------------------------------------------

Outcome attention_alignment() {
  const Run& run = trained(1, MaskingStrategy{});
  int single_hit = 0, single_n = 0, multi_hit = 0, multi_n = 0;
  for (const auto& pair : run.data.validation.pairs) {
    if (!pair.gold_alignments || pair.gold_alignments->empty()) continue;
    auto al = *pair.gold_alignments;
    std::sort(al.begin(), al.end(), [](const auto& a, const auto& b) { return a.token < b.token; });
    const auto one = export_attention(run.result.params, pair, {al[0].token}, {});
    ++single_n;
    single_hit += static_cast<int>(one.rows.at(0).argmax()) == al[0].region;
    if (al.size() < 2) continue;
    const auto two = export_attention(run.result.params, pair, {al[0].token, al[1].token}, {});
    ++multi_n;
    multi_hit += static_cast<int>(two.rows.at(0).argmax()) == al[0].region &&
                 static_cast<int>(two.rows.at(1).argmax()) == al[1].region;
  }
  const double s = single_n ? 100.0 * single_hit / single_n : 0;
  const double m = multi_n ? 100.0 * multi_hit / multi_n : 0;
  return {single_n > 0 && multi_n > 0 && s >= 70 && m >= 50,
          fmt("argmax on gold region: single mask %.1f%% of %d pairs (need 70%%), two masks %.1f%% of %d (need 50%%)", s,
              single_n, m, multi_n)};
}

// ---- 11: determinism ------------------------------------------------------

Outcome determinism() {
  TrainConfig cfg = desk_config(4);
  cfg.steps = 150;
  const TrainingData data = load_training_data(cfg);
  std::ostringstream log_a, log_b;
  const TrainResult a = train(cfg, data, &log_a);
  const TrainResult b = train(cfg, data, &log_b);
  const bool logs_equal = log_a.str() == log_b.str() && !log_a.str().empty();

  std::stringstream first;
  write_checkpoint(first, a.params, 150);
  const std::string bytes = first.str();
  std::istringstream in(bytes);
  const Checkpoint back = read_checkpoint(in);
  bool tensors_equal = back.step == 150;
  auto x = a.params.tensors();
  auto y = back.params.tensors();
  tensors_equal = tensors_equal && x.size() == y.size() && back.params.config == a.params.config;
  for (std::size_t i = 0; tensors_equal && i < x.size(); ++i)
    tensors_equal = x[i].first == y[i].first && x[i].second->size() == y[i].second->size() &&
                    std::memcmp(x[i].second->data().data(), y[i].second->data().data(), x[i].second->size() * sizeof(double)) == 0;
  std::stringstream second;
  write_checkpoint(second, back.params, back.step);
  const bool resave_equal = second.str() == bytes;
  return {logs_equal && tensors_equal && resave_equal,
          fmt("metrics logs %s (%zu bytes); checkpoint tensors %s; re-saved checkpoint %s", logs_equal ? "identical" : "differ",
              log_a.str().size(), tensors_equal ? "bitwise equal" : "differ", resave_equal ? "byte-identical" : "differs")};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "transmission matches path enumeration", transmission_oracle},
      {2, "masking probability laws", masking_laws},
      {3, "knowledge entry structure", entry_structure},
      {4, "mask sampling statistics", sampling_statistics},
      {5, "gradient check", gradient_check},
      {6, "attention normalization", attention_normalization},
      {7, "training sanity", training_sanity},
      {8, "full vs no-knowledge direction", knowledge_ablation},
      {9, "independent vs identical direction", identical_ablation},
      {10, "attention alignment", attention_alignment},
      {11, "determinism", determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
