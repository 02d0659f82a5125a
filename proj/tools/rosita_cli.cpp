// Command-line front end: corpus tools, knowledge inspection, training,
// evaluation, ablations and attention export.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rosita/rosita.hpp"

using namespace rosita;

namespace {

// Where pairs, lexicon and embeddings come from: explicit files, or a training
// config (which may describe a synthetic corpus).
struct DataFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string corpus;
  std::string lexicon;
  std::string embeddings;

  void add(CLI::App* app, bool corpus_flag = true) {
    app->add_option("--config", config, "training config (JSON)");
    app->add_option("--set", sets, "config override key=value (repeatable)");
    if (corpus_flag) app->add_option("--corpus", corpus, "corpus file (JSONL)");
    app->add_option("--lexicon", lexicon, "lexicon file (word<TAB>role)");
    app->add_option("--embeddings", embeddings, "embedding table (word v1 v2 ...)");
  }

  TrainConfig train_config() const {
    std::vector<std::string> o = sets;
    if (!corpus.empty()) o.push_back("corpus=\"" + corpus + "\"");
    if (!lexicon.empty()) o.push_back("lexicon=\"" + lexicon + "\"");
    if (!embeddings.empty()) o.push_back("embeddings=\"" + embeddings + "\"");
    return load_train_config(config, o);
  }
};

// Loaded data plus a merged view of train and validation pairs for lookups.
struct Workspace {
  TrainConfig cfg;
  TrainingData data;
  CooccurrenceStats stats;

  explicit Workspace(const DataFlags& f) : cfg(f.train_config()) {
    if (cfg.corpus.empty() && !cfg.synthetic) throw Error("give --corpus or a --config with a corpus");
    if (!cfg.corpus.empty()) cfg.synthetic.reset();
    // File corpora may be larger than the model limits; inspection keeps them whole.
    if (!cfg.corpus.empty()) {
      cfg.model.max_regions = std::max(cfg.model.max_regions, 36);
      cfg.model.max_tokens = std::max(cfg.model.max_tokens, 50);
    }
    data = load_inspection_data();
    stats = accumulate_cooccurrence(split_of_first_pair(), data.lexicon);
  }

  const ImageTextPair& pair(const std::string& id) const {
    for (const Corpus* c : {&data.train, &data.validation})
      for (const auto& p : c->pairs)
        if (p.pair_id == id) return p;
    throw Error("no pair with id '" + id + "'");
  }

  // Statistics are collected over the split the pair belongs to.
  const Corpus& split_of(const std::string& id) const {
    for (const auto& p : data.validation.pairs)
      if (p.pair_id == id) return data.validation;
    return data.train;
  }

  KnowledgeSources sources_for(const std::string& id, CooccurrenceStats& scratch) const {
    if (&split_of(id) == &data.train) return {&data.lexicon, &stats, &data.embeddings};
    scratch = accumulate_cooccurrence(data.validation, data.lexicon);
    return {&data.lexicon, &scratch, &data.embeddings};
  }

 private:
  const Corpus& split_of_first_pair() const { return data.train; }

  TrainingData load_inspection_data() {
    if (cfg.synthetic) return load_training_data(cfg);
    TrainingData d;
    d.train = load_corpus(cfg.corpus);
    if (!cfg.validation_corpus.empty()) d.validation = load_corpus(cfg.validation_corpus);
    if (cfg.lexicon.empty()) throw Error("give --lexicon");
    if (cfg.embeddings.empty()) throw Error("give --embeddings");
    d.lexicon = load_lexicon(cfg.lexicon);
    d.embeddings = load_embeddings(cfg.embeddings);
    return d;
  }
};

std::vector<int> parse_index_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error("bad index '" + item + "' in list '" + s + "'");
    }
  }
  return out;
}

std::string label_of(const Vertex& v, const ImageTextPair& p) {
  if (v.modality == Modality::Image) return "r" + std::to_string(v.payload) + ":" + p.regions.at(v.payload).tag;
  return "w" + std::to_string(v.payload) + ":" + p.tokens.at(v.payload).surface;
}

void print_entry(const KnowledgeEntry& e, const ImageTextPair& p, std::ostream& out) {
  out << "anchor " << e.anchor << " (" << label_of(e.anchor_vertex(), p) << "), " << e.size() << " vertices\n";
  const auto hops = entry_hops(e);
  for (std::size_t i = 0; i < e.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "  [%zu] v%-3d %-6s hop %d  ", i, e.vertices[i].id, to_string(e.vertices[i].modality),
                  hops[i]);
    out << buf << label_of(e.vertices[i], p) << '\n';
  }
  out << "  S_hat:\n";
  for (std::size_t i = 0; i < e.size(); ++i) {
    out << "   ";
    for (std::size_t j = 0; j < e.size(); ++j) {
      char buf[16];
      std::snprintf(buf, sizeof buf, " %6.4f", e.S_hat(i, j));
      out << buf;
    }
    out << '\n';
  }
  out << "  edges:";
  for (const auto& ed : e.edges) out << ' ' << ed.i << '-' << ed.j << '(' << to_string(ed.kind) << ')';
  out << '\n';
}

std::string fmt_vec(const std::vector<double>& v) {
  std::string s;
  for (double x : v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%s%.4f", s.empty() ? "" : " ", x);
    s += buf;
  }
  return s;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rosita: structural-knowledge-masked vision-language pretraining at desk scale"};
  app.require_subcommand(1);

  // corpus ---------------------------------------------------------------
  auto* corpus = app.add_subcommand("corpus", "corpus utilities");
  corpus->require_subcommand(1);
  std::string validate_path;
  auto* c_validate = corpus->add_subcommand("validate", "check a corpus file");
  c_validate->add_option("path", validate_path)->required();
  c_validate->callback([&] {
    const Corpus c = load_corpus(validate_path);
    std::size_t regions = 0, tokens = 0;
    for (const auto& p : c.pairs) regions += p.regions.size(), tokens += p.tokens.size();
    std::cout << "ok: " << c.pairs.size() << " pairs, " << regions << " regions, " << tokens << " tokens, vocab "
              << c.vocab.size() << ", " << c.detector_classes.size() << " detector classes\n";
  });

  std::string spec_path, synth_out, synth_val_out, synth_lex_out;
  std::uint64_t synth_seed = 0;
  auto* c_synth = corpus->add_subcommand("synth", "generate a synthetic corpus");
  c_synth->add_option("--spec", spec_path, "synthetic spec (JSON); defaults if omitted");
  c_synth->add_option("--seed", synth_seed)->required();
  c_synth->add_option("--out", synth_out)->required();
  c_synth->add_option("--val-out", synth_val_out, "also write the held-out split");
  c_synth->add_option("--lexicon-out", synth_lex_out, "also write the matching lexicon");
  c_synth->callback([&] {
    const SynthSpec spec = spec_path.empty() ? SynthSpec{} : load_synth_spec(spec_path);
    const Corpus train = generate_synthetic(spec, synth_seed);
    save_corpus(synth_out, train);
    std::cout << "wrote " << train.pairs.size() << " pairs to " << synth_out << '\n';
    if (!synth_val_out.empty()) {
      const Corpus val = generate_synthetic_validation(spec, synth_seed);
      save_corpus(synth_val_out, val);
      std::cout << "wrote " << val.pairs.size() << " pairs to " << synth_val_out << '\n';
    }
    if (!synth_lex_out.empty()) {
      const SynthWorld w = make_synth_world(spec, synth_seed);
      const Lexicon lex = synthetic_lexicon(w);
      std::ostringstream os;
      for (const auto& word : w.vocab)
        if (word != kUnknownToken) os << word << '\t' << to_string(lex.role(word)) << '\n';
      write_text(synth_lex_out, os.str());
    }
  });

  // embed ------------------------------------------------------------------
  auto* embed = app.add_subcommand("embed", "embedding utilities");
  embed->require_subcommand(1);
  std::string word_a, word_b, table_path;
  auto* e_sim = embed->add_subcommand("sim", "cosine similarity of two words or phrases");
  e_sim->add_option("word_a", word_a)->required();
  e_sim->add_option("word_b", word_b)->required();
  e_sim->add_option("--table", table_path)->required();
  e_sim->callback([&] {
    const EmbeddingTable t = load_embeddings(table_path);
    const auto a = t.phrase_vector(word_a), b = t.phrase_vector(word_b);
    if (!a || !b) throw Error("'" + (a ? word_b : word_a) + "' is not in the table");
    std::printf("%.6f\n", cosine(*a, *b));
  });

  // parse ------------------------------------------------------------------
  auto* parse = app.add_subcommand("parse", "scene-graph parsing");
  parse->require_subcommand(1);
  DataFlags parse_flags;
  std::string parse_pair;
  auto* p_show = parse->add_subcommand("show", "print the triples of one caption");
  p_show->add_option("pair_id", parse_pair)->required();
  parse_flags.add(p_show);
  p_show->callback([&] {
    const Workspace ws(parse_flags);
    const auto& p = ws.pair(parse_pair);
    std::cout << p.raw_text << '\n';
    for (const auto& t : triples_for(p, ws.data.lexicon)) {
      std::cout << "  (" << p.tokens[t.head].surface << ", " << p.tokens[t.dependent].surface;
      if (t.object) std::cout << ", " << p.tokens[*t.object].surface;
      std::cout << ")  " << to_string(t.kind) << '\n';
    }
  });
  DataFlags stats_flags;
  std::string stats_out;
  auto* p_stats = parse->add_subcommand("stats", "dataset co-occurrence counts");
  stats_flags.add(p_stats);
  p_stats->add_option("--out", stats_out)->required();
  p_stats->callback([&] {
    const Workspace ws(stats_flags);
    std::ofstream out(stats_out);
    if (!out) throw Error("cannot write '" + stats_out + "'");
    write_stats(out, ws.stats);
    std::cout << "wrote " << ws.stats.entries() << " co-occurrence entries to " << stats_out << '\n';
  });

  // graph ------------------------------------------------------------------
  auto* graph = app.add_subcommand("graph", "unified knowledge graph");
  graph->require_subcommand(1);
  DataFlags graph_flags;
  std::string graph_pair, graph_dump;
  double graph_threshold = kCrossModalThreshold;
  auto* g_build = graph->add_subcommand("build", "build and dump the graph of one pair");
  g_build->add_option("pair_id", graph_pair)->required();
  g_build->add_option("--dump", graph_dump, "write vertices, edges and S as JSON");
  g_build->add_option("--threshold", graph_threshold, "cross-modal similarity threshold");
  graph_flags.add(g_build);
  g_build->callback([&] {
    const Workspace ws(graph_flags);
    const auto& p = ws.pair(graph_pair);
    CooccurrenceStats scratch;
    GraphOptions opt;
    opt.cross_threshold = graph_threshold;
    const UnifiedGraph g = build_graph(p, ws.sources_for(graph_pair, scratch), opt);
    long counts[3] = {0, 0, 0};
    for (const auto& e : g.edges) ++counts[static_cast<int>(e.kind)];
    std::cout << g.size() << " vertices; edges: " << counts[0] << " intra-image, " << counts[1] << " intra-text, "
              << counts[2] << " cross-modal\n";
    for (const auto& e : g.edges) {
      char buf[48];
      std::snprintf(buf, sizeof buf, "  %.4f  ", g.S(e.u, e.v));
      std::cout << buf << label_of(g.vertices[e.u], p) << " -- " << label_of(g.vertices[e.v], p) << "  ("
                << to_string(e.kind) << ")\n";
    }
    if (!graph_dump.empty()) write_text(graph_dump, graph_to_json(g, &p).dump(2) + "\n");
  });

  // entries ----------------------------------------------------------------
  auto* entries = app.add_subcommand("entries", "knowledge entries");
  entries->require_subcommand(1);
  DataFlags entries_flags;
  std::string entries_pair;
  int entries_anchor = -1;
  auto* en_list = entries->add_subcommand("list", "anchors and entry sizes of one pair");
  en_list->add_option("pair_id", entries_pair)->required();
  entries_flags.add(en_list);
  en_list->callback([&] {
    const Workspace ws(entries_flags);
    const auto& p = ws.pair(entries_pair);
    CooccurrenceStats scratch;
    const UnifiedGraph g = build_graph(p, ws.sources_for(entries_pair, scratch));
    const auto all = extract_all_entries(g);
    if (all.empty()) std::cout << "no anchors\n";
    for (const auto& e : all)
      std::cout << "anchor " << e.anchor << " " << label_of(e.anchor_vertex(), p) << "  N=" << e.size() << '\n';
  });
  auto* en_show = entries->add_subcommand("show", "dump one knowledge entry");
  en_show->add_option("pair_id", entries_pair)->required();
  en_show->add_option("anchor_id", entries_anchor)->required();
  entries_flags.add(en_show);
  en_show->callback([&] {
    const Workspace ws(entries_flags);
    const auto& p = ws.pair(entries_pair);
    CooccurrenceStats scratch;
    const UnifiedGraph g = build_graph(p, ws.sources_for(entries_pair, scratch));
    print_entry(extract_entry(g, entries_anchor), p, std::cout);
  });

  // mask -------------------------------------------------------------------
  auto* mask = app.add_subcommand("mask", "structural knowledge masking");
  mask->require_subcommand(1);
  DataFlags mask_flags;
  std::string mask_pair;
  int mask_anchor = -1;
  double mask_alpha = 0.9;
  std::uint64_t mask_seed = 0;
  std::optional<double> identical_prob;
  auto* m_preview = mask->add_subcommand("preview", "print T, P and one sampled plan");
  m_preview->add_option("pair_id", mask_pair)->required();
  m_preview->add_option("--anchor", mask_anchor)->required();
  m_preview->add_option("--alpha", mask_alpha);
  m_preview->add_option("--seed", mask_seed);
  m_preview->add_option("--identical-prob", identical_prob, "mask every context with this probability");
  mask_flags.add(m_preview);
  m_preview->callback([&] {
    const Workspace ws(mask_flags);
    const auto& p = ws.pair(mask_pair);
    CooccurrenceStats scratch;
    const UnifiedGraph g = build_graph(p, ws.sources_for(mask_pair, scratch));
    const KnowledgeEntry e = extract_entry(g, mask_anchor);
    print_entry(e, p, std::cout);
    const auto t = transmission_probs(e);
    const auto probs = identical_prob ? identical_masking_probs(e, *identical_prob) : masking_probs(t, e, mask_alpha);
    std::cout << "T: " << fmt_vec(t) << '\n' << "P: " << fmt_vec(probs) << '\n';
    const MaskPlan plan = sample_masks(probs, e, mask_seed);
    std::cout << "masked words:";
    for (int w : plan.masked_words) std::cout << ' ' << w << ':' << p.tokens[w].surface;
    std::cout << "\nmasked regions:";
    for (int r : plan.masked_regions) std::cout << ' ' << r << ':' << p.regions[r].tag;
    std::cout << '\n';
  });

  // pretrain ---------------------------------------------------------------
  DataFlags train_flags;
  std::optional<int> train_steps;
  std::optional<std::uint64_t> train_seed;
  std::string train_strategy, train_checkpoint, train_metrics;
  bool train_echo = false;
  auto* pretrain = app.add_subcommand("pretrain", "multi-task pretraining");
  train_flags.add(pretrain);
  pretrain->add_option("--steps", train_steps);
  pretrain->add_option("--seed", train_seed);
  pretrain->add_option("--strategy", train_strategy, "full | no-cross | no-intra | no-knowledge | identical:<p>");
  pretrain->add_option("--checkpoint", train_checkpoint);
  pretrain->add_option("--metrics", train_metrics);
  pretrain->add_flag("--echo", train_echo, "also print the metrics log");
  pretrain->callback([&] {
    TrainConfig cfg = train_flags.train_config();
    if (train_steps) cfg.steps = *train_steps;
    if (train_seed) cfg.seed = *train_seed;
    if (!train_strategy.empty()) cfg.strategy = MaskingStrategy::parse(train_strategy);
    if (!train_checkpoint.empty()) cfg.checkpoint = train_checkpoint;
    if (!train_metrics.empty()) cfg.metrics = train_metrics;
    const TrainingData data = load_training_data(cfg);
    const TrainResult r = train(cfg, data, train_echo ? &std::cout : nullptr);
    const auto& h = r.history;
    if (!h.empty()) {
      const std::size_t k = std::min<std::size_t>(100, h.size());
      double first = 0, last = 0;
      for (std::size_t i = 0; i < k; ++i) first += h[i].loss, last += h[h.size() - k + i].loss;
      std::printf("steps %zu  mean loss first %zu: %.4f  last %zu: %.4f  fallbacks %ld\n", h.size(), k, first / k, k,
                  last / k, r.counters.fallbacks);
    }
    if (!data.validation.pairs.empty()) {
      const KnowledgeBase kb(data.validation, data.lexicon, data.embeddings, MaskingStrategy{}, cfg.cross_threshold,
                             cfg.threads);
      std::cout << report_to_json(evaluate(r.params, kb, {cfg.alpha, cfg.eval_repeats, cfg.eval_seed})).dump() << '\n';
    }
  });

  // eval -------------------------------------------------------------------
  DataFlags eval_flags;
  std::string eval_checkpoint;
  auto* eval = app.add_subcommand("eval", "pretraining-task accuracies of a checkpoint");
  eval->add_option("--checkpoint", eval_checkpoint)->required();
  eval_flags.add(eval);
  eval->callback([&] {
    const TrainConfig cfg = eval_flags.train_config();
    const Checkpoint ck = load_checkpoint(eval_checkpoint);
    Corpus corpus;
    Lexicon lexicon;
    EmbeddingTable table;
    if (!eval_flags.corpus.empty()) {
      corpus = load_corpus(eval_flags.corpus, {static_cast<std::size_t>(ck.params.config.max_regions),
                                               static_cast<std::size_t>(ck.params.config.max_tokens)});
      TrainConfig files = cfg;
      files.synthetic.reset();
      if (files.lexicon.empty() && cfg.synthetic) {
        lexicon = synthetic_lexicon(make_synth_world(*cfg.synthetic, cfg.synthetic_seed));
        table = one_hot_object_embeddings(make_synth_world(*cfg.synthetic, cfg.synthetic_seed));
      } else {
        if (files.lexicon.empty() || files.embeddings.empty()) throw Error("eval needs --lexicon and --embeddings");
        lexicon = load_lexicon(files.lexicon);
        table = load_embeddings(files.embeddings);
      }
    } else {
      TrainingData d = load_training_data(cfg);
      corpus = std::move(d.validation);
      lexicon = std::move(d.lexicon);
      table = std::move(d.embeddings);
    }
    const KnowledgeBase kb(corpus, lexicon, table, MaskingStrategy{}, cfg.cross_threshold, cfg.threads);
    const EvalReport r = evaluate(ck.params, kb, {cfg.alpha, cfg.eval_repeats, cfg.eval_seed});
    std::cout << "ITM\t" << format_accuracy(r.itm) << "\nSKMLM\t" << format_accuracy(r.skmlm) << "\nSKMRM\t"
              << format_accuracy(r.skmrm) << '\n';
  });

  // ablate -----------------------------------------------------------------
  DataFlags ablate_flags;
  std::string ablate_modes = "full,no-cross,no-intra,no-knowledge,identical:0.15,identical:0.30,identical:0.45";
  std::string ablate_out;
  auto* ablate = app.add_subcommand("ablate", "train and evaluate one model per masking strategy");
  ablate->add_option("--modes", ablate_modes, "comma-separated strategies");
  ablate->add_option("--out", ablate_out, "also write the table here");
  ablate_flags.add(ablate);
  ablate->callback([&] {
    const TrainConfig cfg = ablate_flags.train_config();
    std::vector<MaskingStrategy> modes;
    std::stringstream ss(ablate_modes);
    std::string m;
    while (std::getline(ss, m, ','))
      if (!m.empty()) modes.push_back(MaskingStrategy::parse(m));
    const TrainingData data = load_training_data(cfg);
    std::cout << "mode\tITM\tSKMLM\tSKMRM\n" << std::flush;
    const auto rows = run_ablation(cfg, data, modes, [](const AblationRow& r) {
      std::cout << r.strategy.name() << '\t' << format_accuracy(r.report.itm) << '\t'
                << format_accuracy(r.report.skmlm) << '\t' << format_accuracy(r.report.skmrm) << '\n'
                << std::flush;
    });
    if (!ablate_out.empty()) write_text(ablate_out, format_ablation_table(rows));
  });

  // attention --------------------------------------------------------------
  DataFlags attn_flags;
  std::string attn_checkpoint, attn_pair, attn_words, attn_regions, attn_out;
  auto* attention = app.add_subcommand("attention", "export last-layer attention with chosen masks");
  attention->add_option("--checkpoint", attn_checkpoint)->required();
  attention->add_option("--pair", attn_pair)->required();
  attention->add_option("--mask-words", attn_words, "comma-separated token indices");
  attention->add_option("--mask-regions", attn_regions, "comma-separated region indices");
  attention->add_option("--out", attn_out, "write the full dump as JSON");
  attn_flags.add(attention);
  attention->callback([&] {
    const Workspace ws(attn_flags);
    const Checkpoint ck = load_checkpoint(attn_checkpoint);
    const AttentionExport ex =
        export_attention(ck.params, ws.pair(attn_pair), parse_index_list(attn_words), parse_index_list(attn_regions));
    for (const auto& row : ex.rows) {
      std::cout << row.direction << " " << row.index << ":";
      for (std::size_t i = 0; i < row.columns.size(); ++i) {
        char buf[48];
        std::snprintf(buf, sizeof buf, " %s=%.4f", row.columns[i].c_str(), row.weights[i]);
        std::cout << buf;
      }
      std::cout << "  argmax " << row.columns[row.argmax()] << '\n';
    }
    if (ex.rows.empty()) std::cout << "no masked tokens; full map only\n";
    if (!attn_out.empty()) write_text(attn_out, attention_to_json(ex).dump(2) + "\n");
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
