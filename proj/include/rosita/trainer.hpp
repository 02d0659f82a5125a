#pragma once

// Multi-task training loop, checkpoints, pretraining-task evaluation,
// attention export and masking ablations.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosita/knowledge.hpp"
#include "rosita/synthetic.hpp"

namespace rosita {

struct TrainConfig {
  ModelConfig model;
  double alpha = 0.9;
  double random_rate = 0.15;
  double cross_threshold = kCrossModalThreshold;
  int batch_size = 16;
  int steps = 2000;
  double learning_rate = 0.02;
  std::string optimizer = "momentum";  // or "adam"
  double momentum = 0.9;
  int warmup_steps = 100;
  double clip_norm = 2.0;  // 0 disables
  std::uint64_t seed = 1;
  MaskingStrategy strategy;
  std::vector<Task> tasks{kAllTasks.begin(), kAllTasks.end()};  // drawn uniformly per step
  // Data: either corpus files or an inline synthetic spec.
  std::string corpus;
  std::string validation_corpus;
  std::optional<SynthSpec> synthetic;
  std::uint64_t synthetic_seed = 7;
  std::string embeddings;  // empty: one-hot table over object words (synthetic only)
  std::string lexicon;     // empty: roles of the synthetic vocabulary
  // Outputs.
  std::string checkpoint;
  int checkpoint_every = 0;
  std::string metrics;
  // Evaluation.
  int eval_repeats = 4;
  std::uint64_t eval_seed = 12345;
  int threads = 1;

  void validate() const {
    model.validate();
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("alpha must lie in [0,1]");
    if (!(random_rate >= 0.0 && random_rate <= 1.0)) throw Error("random_rate must lie in [0,1]");
    if (batch_size < 1) throw Error("batch_size must be positive");
    if (steps < 0) throw Error("steps must be non-negative");
    if (corpus.empty() && !synthetic) throw Error("config needs a corpus path or a synthetic spec");
    if (tasks.empty()) throw Error("tasks must name at least one task");
    if (optimizer != "momentum" && optimizer != "adam") throw Error("optimizer must be 'momentum' or 'adam'");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"alpha", c.alpha},
       {"random_rate", c.random_rate},
       {"cross_threshold", c.cross_threshold},
       {"batch_size", c.batch_size},
       {"steps", c.steps},
       {"learning_rate", c.learning_rate},
       {"optimizer", c.optimizer},
       {"momentum", c.momentum},
       {"warmup_steps", c.warmup_steps},
       {"clip_norm", c.clip_norm},
       {"seed", c.seed},
       {"strategy", c.strategy.name()},
       {"tasks", [&] {
          std::vector<std::string> names;
          for (Task t : c.tasks) names.push_back(to_string(t));
          return names;
        }()},
       {"corpus", c.corpus},
       {"validation_corpus", c.validation_corpus},
       {"synthetic_seed", c.synthetic_seed},
       {"embeddings", c.embeddings},
       {"lexicon", c.lexicon},
       {"checkpoint", c.checkpoint},
       {"checkpoint_every", c.checkpoint_every},
       {"metrics", c.metrics},
       {"eval_repeats", c.eval_repeats},
       {"eval_seed", c.eval_seed},
       {"threads", c.threads}};
  if (c.synthetic) j["synthetic"] = *c.synthetic;
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.model = j.value("model", d.model);
  c.alpha = j.value("alpha", d.alpha);
  c.random_rate = j.value("random_rate", d.random_rate);
  c.cross_threshold = j.value("cross_threshold", d.cross_threshold);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.steps = j.value("steps", d.steps);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.optimizer = j.value("optimizer", d.optimizer);
  c.momentum = j.value("momentum", d.momentum);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.seed = j.value("seed", d.seed);
  c.strategy = MaskingStrategy::parse(j.value("strategy", std::string("full")));
  if (j.contains("tasks")) {
    c.tasks.clear();
    for (const auto& name : j.at("tasks").get<std::vector<std::string>>()) c.tasks.push_back(task_from_string(name));
  }
  c.corpus = j.value("corpus", d.corpus);
  c.validation_corpus = j.value("validation_corpus", d.validation_corpus);
  if (j.contains("synthetic") && !j.at("synthetic").is_null()) c.synthetic = j.at("synthetic").get<SynthSpec>();
  c.synthetic_seed = j.value("synthetic_seed", d.synthetic_seed);
  c.embeddings = j.value("embeddings", d.embeddings);
  c.lexicon = j.value("lexicon", d.lexicon);
  c.checkpoint = j.value("checkpoint", d.checkpoint);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.metrics = j.value("metrics", d.metrics);
  c.eval_repeats = j.value("eval_repeats", d.eval_repeats);
  c.eval_seed = j.value("eval_seed", d.eval_seed);
  c.threads = j.value("threads", d.threads);
}

// Applies one `key=value` override; dotted keys reach nested objects
// (e.g. model.hidden=16, synthetic.num_pairs=50).
inline void apply_override(nlohmann::json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error("override '" + assignment + "' must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;  // bare string
  }
  nlohmann::json* node = &cfg;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline TrainConfig load_train_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config '" + path + "'");
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error("config '" + path + "': " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  return j.get<TrainConfig>();
}

// ---- data -------------------------------------------------------------------

struct TrainingData {
  Corpus train;
  Corpus validation;
  Lexicon lexicon;
  EmbeddingTable embeddings;
};

// One-hot vectors over the object words so a tag matches exactly its own word.
inline EmbeddingTable one_hot_object_embeddings(const SynthWorld& w) {
  EmbeddingTable t;
  for (int i = 0; i < w.num_objects; ++i) {
    std::vector<double> v(w.num_objects, 0.0);
    v[i] = 1.0;
    t.add(w.object(i), v);
  }
  return t;
}

inline TrainingData load_training_data(const TrainConfig& cfg) {
  TrainingData d;
  const CorpusLimits limits{static_cast<std::size_t>(cfg.model.max_regions), static_cast<std::size_t>(cfg.model.max_tokens)};
  std::optional<SynthWorld> world;
  if (!cfg.corpus.empty()) {
    d.train = load_corpus(cfg.corpus, limits);
    if (!cfg.validation_corpus.empty()) d.validation = load_corpus(cfg.validation_corpus, limits);
  } else {
    world = make_synth_world(*cfg.synthetic, cfg.synthetic_seed);
    d.train = generate_synthetic(*cfg.synthetic, cfg.synthetic_seed);
    d.validation = generate_synthetic_validation(*cfg.synthetic, cfg.synthetic_seed);
  }
  if (!cfg.lexicon.empty()) d.lexicon = load_lexicon(cfg.lexicon);
  else if (world) d.lexicon = synthetic_lexicon(*world);
  else throw Error("config needs a lexicon path for file corpora");
  if (!cfg.embeddings.empty()) d.embeddings = load_embeddings(cfg.embeddings);
  else if (world) d.embeddings = one_hot_object_embeddings(*world);
  else throw Error("config needs an embeddings path for file corpora");
  if (static_cast<int>(d.train.vocab.size()) != cfg.model.vocab_size)
    throw Error("model.vocab_size " + std::to_string(cfg.model.vocab_size) + " does not match corpus vocabulary size " +
                std::to_string(d.train.vocab.size()));
  if (static_cast<int>(d.train.detector_classes.size()) != cfg.model.num_classes)
    throw Error("model.num_classes does not match corpus detector classes");
  return d;
}

// ---- checkpoints --------------------------------------------------------------
//
// Binary, little-endian:
//   "RSTACKPT" u32 version u64 step u32 len <config json> u32 count
//   count × { u32 len <name> u32 rows u32 cols rows·cols × f64 }

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  std::uint64_t step = 0;
};

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error("checkpoint: truncated file");
  return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error("checkpoint: truncated file");
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const ModelParams& p, std::uint64_t step) {
  out.write("RSTACKPT", 8);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, step);
  detail::put_string(out, nlohmann::json(p.config).dump());
  const auto tensors = p.tensors();
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    detail::put_string(out, name);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m->rows()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m->cols()));
    out.write(reinterpret_cast<const char*>(m->data().data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "RSTACKPT", 8) != 0) throw Error("checkpoint: bad magic");
  if (detail::get<std::uint32_t>(in) != kCheckpointVersion) throw Error("checkpoint: unsupported version");
  Checkpoint ck;
  ck.step = detail::get<std::uint64_t>(in);
  const ModelConfig cfg = nlohmann::json::parse(detail::get_string(in)).get<ModelConfig>();
  ck.params = ModelParams::zeros(cfg);
  auto tensors = ck.params.tensors();
  if (detail::get<std::uint32_t>(in) != tensors.size()) throw Error("checkpoint: tensor count mismatch");
  for (auto& [name, m] : tensors) {
    if (detail::get_string(in) != name) throw Error("checkpoint: unexpected tensor, wanted " + name);
    const auto rows = detail::get<std::uint32_t>(in);
    const auto cols = detail::get<std::uint32_t>(in);
    if (rows != m->rows() || cols != m->cols()) throw Error("checkpoint: shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(m->data().data()), static_cast<std::streamsize>(m->size() * sizeof(double)));
    if (!in) throw Error("checkpoint: truncated file");
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const ModelParams& p, std::uint64_t step) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, p, step);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

// ---- optimisation -------------------------------------------------------------

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ModelParams& p, const ModelParams& g, double lr) = 0;
};

class MomentumSgd : public Optimizer {
 public:
  MomentumSgd(const ModelConfig& c, double momentum) : velocity_(ModelParams::zeros(c)), momentum_(momentum) {}

  void step(ModelParams& p, const ModelParams& g, double lr) override {
    auto pv = p.tensors();
    auto gv = g.tensors();
    auto vv = velocity_.tensors();
    for (std::size_t t = 0; t < pv.size(); ++t) {
      auto& param = pv[t].second->data();
      const auto& grad = gv[t].second->data();
      auto& vel = vv[t].second->data();
      for (std::size_t i = 0; i < param.size(); ++i) {
        vel[i] = momentum_ * vel[i] + grad[i];
        param[i] -= lr * vel[i];
      }
    }
  }

 private:
  ModelParams velocity_;
  double momentum_;
};

class Adam : public Optimizer {
 public:
  Adam(const ModelConfig& c, double beta1, double beta2, double eps)
      : m_(ModelParams::zeros(c)), v_(ModelParams::zeros(c)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ModelParams& p, const ModelParams& g, double lr) override {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_), c2 = 1.0 - std::pow(beta2_, t_);
    auto pv = p.tensors();
    auto gv = g.tensors();
    auto mv = m_.tensors();
    auto vv = v_.tensors();
    for (std::size_t t = 0; t < pv.size(); ++t) {
      auto& param = pv[t].second->data();
      const auto& grad = gv[t].second->data();
      auto& m = mv[t].second->data();
      auto& v = vv[t].second->data();
      for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = beta1_ * m[i] + (1 - beta1_) * grad[i];
        v[i] = beta2_ * v[i] + (1 - beta2_) * grad[i] * grad[i];
        param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  ModelParams m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

inline double global_norm(const ModelParams& g) {
  double sq = 0.0;
  for (const auto& [name, m] : g.tensors())
    for (double x : m->data()) sq += x * x;
  return std::sqrt(sq);
}

// ---- metrics log --------------------------------------------------------------

inline constexpr const char* kMetricsHeader = "step\ttask\tloss\tmasked\tcorrect\taccuracy\tfallbacks";

inline std::string metrics_line(std::uint64_t step, const StepLoss& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu\t%s\t%.10g\t%d\t%d\t%.6f\t%d", static_cast<unsigned long long>(step),
                to_string(s.task), s.loss, s.count, s.correct, s.accuracy(), s.fallbacks);
  return buf;
}

// ---- training -------------------------------------------------------------------

class TrainingError : public Error {
 public:
  using Error::Error;
};

struct TrainResult {
  ModelParams params;
  std::vector<StepLoss> history;
  PlanCounters counters;
};

// Draws one task uniformly per step and a batch from a per-epoch shuffle.
inline TrainResult train(const TrainConfig& cfg, const TrainingData& data, std::ostream* metrics_out = nullptr) {
  cfg.validate();
  const KnowledgeBase kb(data.train, data.lexicon, data.embeddings, cfg.strategy, cfg.cross_threshold, cfg.threads);
  if (kb.size() < 2) throw Error("training needs at least two pairs");

  TrainResult result{ModelParams::initialize(cfg.model, derive_seed(cfg.seed, 1)), {}, {}};
  ModelParams& params = result.params;
  std::unique_ptr<Optimizer> opt;
  if (cfg.optimizer == "adam") opt = std::make_unique<Adam>(cfg.model, 0.9, 0.999, 1e-8);
  else opt = std::make_unique<MomentumSgd>(cfg.model, cfg.momentum);
  ModelParams grads = ModelParams::zeros(cfg.model);
  const PlanningOptions plan_opt{cfg.alpha, cfg.random_rate};

  std::unique_ptr<std::ofstream> metrics_file;
  if (!cfg.metrics.empty()) {
    metrics_file = std::make_unique<std::ofstream>(cfg.metrics);
    if (!*metrics_file) throw Error("cannot write metrics log '" + cfg.metrics + "'");
  }
  auto log = [&](const std::string& line) {
    if (metrics_file) *metrics_file << line << '\n';
    if (metrics_out) *metrics_out << line << '\n';
  };
  log(kMetricsHeader);

  if (!cfg.checkpoint.empty()) save_checkpoint(cfg.checkpoint, params, 0);

  Rng order_rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(kb.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  for (int step = 1; step <= cfg.steps; ++step) {
    const std::uint64_t step_seed = derive_seed(cfg.seed, 3, static_cast<std::uint64_t>(step));
    Rng step_rng(step_seed);
    const Task task = cfg.tasks[step_rng.below(cfg.tasks.size())];
    std::vector<std::size_t> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    const auto examples = plan_batch(task, batch, kb, plan_opt, step_rng.next(), &result.counters);

    grads.set_zero();
    StepLoss loss;
    try {
      loss = multitask_step(task, examples, params, &grads);
      if (!std::isfinite(loss.loss) || !grads.all_finite()) throw TrainingError("non-finite loss or gradient");
    } catch (const Error& e) {
      std::string where;
      if (!cfg.checkpoint.empty()) {
        const std::string last_good = cfg.checkpoint + ".last-good";
        save_checkpoint(last_good, params, static_cast<std::uint64_t>(step - 1));
        where = "; last good parameters saved to " + last_good;
      }
      throw TrainingError("step " + std::to_string(step) + ": " + e.what() + where);
    }

    if (cfg.clip_norm > 0) {
      const double norm = global_norm(grads);
      if (norm > cfg.clip_norm) {
        const double s = cfg.clip_norm / norm;
        ModelParams::visit(grads, [s](const std::string&, Matrix& m) { m *= s; });
      }
    }
    double lr = cfg.learning_rate;
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) lr *= static_cast<double>(step) / cfg.warmup_steps;
    opt->step(params, grads, lr);

    result.history.push_back(loss);
    log(metrics_line(static_cast<std::uint64_t>(step), loss));
    if (!cfg.checkpoint.empty() && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
      save_checkpoint(cfg.checkpoint, params, static_cast<std::uint64_t>(step));
  }
  if (!cfg.checkpoint.empty()) save_checkpoint(cfg.checkpoint, params, static_cast<std::uint64_t>(cfg.steps));
  return result;
}

// ---- evaluation -------------------------------------------------------------------

struct TaskAccuracy {
  long correct = 0;
  long total = 0;

  double percent() const { return total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  bool operator==(const TaskAccuracy&) const = default;
};

struct EvalReport {
  std::optional<TaskAccuracy> itm;
  std::optional<TaskAccuracy> skmlm;  // absent when no pair has a word anchor
  std::optional<TaskAccuracy> skmrm;  // absent when no pair has a region anchor

  bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
  double alpha = 0.9;
  int repeats = 4;
  std::uint64_t seed = 12345;
};

// ITM over one positive and one random-caption negative per pair; SKMLM/SKMRM
// over `repeats` sampled plans of every anchor, always with the independent
// (full-knowledge) masking probabilities so all checkpoints face the same task.
inline EvalReport evaluate(const ModelParams& p, const KnowledgeBase& kb, const EvalOptions& opt = {}) {
  if (kb.strategy().mode != MaskingMode::Full) throw Error("evaluate: knowledge base must use the full strategy");
  EvalReport rep;
  const std::size_t n = kb.size();
  if (n == 0) return rep;
  TaskAccuracy itm, mlm, mrm;
  const MaskingStrategy full;
  Rng neg_rng(derive_seed(opt.seed, 1));
  for (std::size_t i = 0; i < n; ++i) {
    const ImageTextPair& pair = *kb[i].pair;
    if (n >= 2) {
      std::size_t j = (i + 1 + neg_rng.below(n - 1)) % n;
      for (int label : {kMatched, kMismatched}) {
        TaskExample ex;
        ex.image = &pair;
        ex.text = label == kMatched ? &pair : kb[j].pair;
        ex.itm_label = label;
        const HeadLoss h = example_loss(ex, p);
        itm.correct += h.correct;
        itm.total += h.count;
      }
    }
    for (int which = 0; which < 2; ++which) {
      const auto& entries = which == 0 ? kb[i].word_entries : kb[i].region_entries;
      TaskAccuracy& acc = which == 0 ? mlm : mrm;
      for (std::size_t e = 0; e < entries.size(); ++e)
        for (int r = 0; r < opt.repeats; ++r) {
          TaskExample ex;
          ex.task = which == 0 ? Task::Skmlm : Task::Skmrm;
          ex.image = ex.text = &pair;
          ex.plan = plan_for_entry(entries[e], full, opt.alpha, derive_seed(opt.seed, 2, i, e * 2 + which, r));
          const HeadLoss h = example_loss(ex, p);
          acc.correct += h.correct;
          acc.total += h.count;
        }
    }
  }
  if (itm.total) rep.itm = itm;
  if (mlm.total) rep.skmlm = mlm;
  if (mrm.total) rep.skmrm = mrm;
  return rep;
}

inline std::string format_accuracy(const std::optional<TaskAccuracy>& a) {
  if (!a) return "absent";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", a->percent());
  return buf;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  auto one = [](const std::optional<TaskAccuracy>& a) -> nlohmann::json {
    if (!a) return nullptr;
    return {{"accuracy", a->percent()}, {"correct", a->correct}, {"total", a->total}};
  };
  return {{"ITM", one(r.itm)}, {"SKMLM", one(r.skmlm)}, {"SKMRM", one(r.skmrm)}};
}

// ---- attention export -----------------------------------------------------------

struct AttentionRow {
  std::string direction;  // "word-to-regions" or "region-to-words"
  int index = 0;          // token or region index of the masked query
  std::vector<std::string> columns;
  std::vector<double> weights;  // restricted to the opposite modality, renormalised

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(weights.begin(), weights.end()) - weights.begin());
  }
};

struct AttentionExport {
  std::vector<std::string> labels;  // one per sequence position; "<pad>" for padding
  Matrix aggregated;                // last layer, heads summed then row-softmaxed
  std::vector<AttentionRow> rows;
};

// Runs the encoder with exactly `mask_words`/`mask_regions` masked and extracts
// the cross-modal rows of the masked tokens from the aggregated last-layer map.
inline AttentionExport export_attention(const ModelParams& p, const ImageTextPair& pair,
                                        const std::vector<int>& mask_words, const std::vector<int>& mask_regions) {
  const auto& c = p.config;
  MaskPlan plan;
  plan.masked_words = mask_words;
  plan.masked_regions = mask_regions;
  for (int w : mask_words)
    if (w < 0 || w >= static_cast<int>(pair.tokens.size())) throw Error("export_attention: word index out of range");
  for (int r : mask_regions)
    if (r < 0 || r >= static_cast<int>(pair.regions.size())) throw Error("export_attention: region index out of range");
  const Encoded enc = encode(make_input(pair, &plan, c), p);
  AttentionExport out;
  out.aggregated = aggregate_last_layer(enc.forward);
  out.labels.assign(c.seq_len(), "<pad>");
  for (std::size_t r = 0; r < pair.regions.size(); ++r) out.labels[r] = "r" + std::to_string(r) + ":" + pair.regions[r].tag;
  out.labels[c.sep_index()] = "[SEP]";
  for (std::size_t t = 0; t < pair.tokens.size(); ++t) out.labels[c.text_offset() + t] = pair.tokens[t].surface;
  out.labels[c.cls_index()] = "[CLS]";

  const int nr = static_cast<int>(pair.regions.size());
  const int nt = static_cast<int>(pair.tokens.size());
  auto restricted = [&](int row, int first_col, int count, std::string dir, int index) {
    AttentionRow ar;
    ar.direction = std::move(dir);
    ar.index = index;
    double sum = 0.0;
    for (int k = 0; k < count; ++k) sum += out.aggregated(row, first_col + k);
    for (int k = 0; k < count; ++k) {
      ar.columns.push_back(out.labels[first_col + k]);
      ar.weights.push_back(out.aggregated(row, first_col + k) / sum);
    }
    out.rows.push_back(std::move(ar));
  };
  for (int w : mask_words) restricted(c.text_offset() + w, 0, nr, "word-to-regions", w);
  for (int r : mask_regions) restricted(r, c.text_offset(), nt, "region-to-words", r);
  return out;
}

inline nlohmann::json attention_to_json(const AttentionExport& a) {
  nlohmann::json map = nlohmann::json::array();
  for (std::size_t r = 0; r < a.aggregated.rows(); ++r)
    map.push_back(std::vector<double>(a.aggregated.row(r).begin(), a.aggregated.row(r).end()));
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : a.rows)
    rows.push_back({{"direction", r.direction}, {"index", r.index}, {"columns", r.columns}, {"weights", r.weights}});
  return {{"labels", a.labels}, {"aggregated_last_layer", map}, {"rows", rows}};
}

// ---- ablations ----------------------------------------------------------------------

struct AblationRow {
  MaskingStrategy strategy;
  EvalReport report;
};

// Trains one model per strategy from the same seed and evaluates each on the
// validation split under the reference full-knowledge task definition.
inline std::vector<AblationRow> run_ablation(const TrainConfig& base, const TrainingData& data,
                                             const std::vector<MaskingStrategy>& strategies,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  const KnowledgeBase eval_kb(data.validation, data.lexicon, data.embeddings, MaskingStrategy{}, base.cross_threshold,
                              base.threads);
  std::vector<AblationRow> rows;
  for (const auto& s : strategies) {
    TrainConfig cfg = base;
    cfg.strategy = s;
    cfg.checkpoint.clear();
    cfg.metrics.clear();
    const TrainResult tr = train(cfg, data);
    rows.push_back({s, evaluate(tr.params, eval_kb, {cfg.alpha, cfg.eval_repeats, cfg.eval_seed})});
    if (on_row) on_row(rows.back());
  }
  return rows;
}

inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "mode\tITM\tSKMLM\tSKMRM\n";
  for (const auto& r : rows)
    os << r.strategy.name() << '\t' << format_accuracy(r.report.itm) << '\t' << format_accuracy(r.report.skmlm) << '\t'
       << format_accuracy(r.report.skmrm) << '\n';
  return os.str();
}

}  // namespace rosita
