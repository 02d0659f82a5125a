#pragma once

// Single-stream transformer over [regions, SEP, words, CLS] with post-norm
// residual blocks, a hand-written backward pass, and attention-map access.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosita/corpus.hpp"
#include "rosita/matrix.hpp"
#include "rosita/rng.hpp"
#include "rosita/skm.hpp"

namespace rosita {

struct ModelConfig {
  int hidden = 32;
  int layers = 2;
  int heads = 4;
  int ffn = 64;
  int visual_dim = 16;
  int vocab_size = 50;
  int max_regions = 8;
  int max_tokens = 12;
  int num_classes = 10;
  double init_range = 0.3;
  double ln_eps = 1e-5;

  void validate() const {
    for (int v : {hidden, layers, heads, ffn, visual_dim, vocab_size, max_regions, max_tokens, num_classes})
      if (v <= 0) throw Error("ModelConfig: all sizes must be positive");
    if (hidden % heads != 0) throw Error("ModelConfig: hidden must be divisible by heads");
  }

  int head_dim() const { return hidden / heads; }
  int seq_len() const { return max_regions + max_tokens + 2; }
  int sep_index() const { return max_regions; }
  int text_offset() const { return max_regions + 1; }
  int cls_index() const { return max_regions + max_tokens + 1; }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"hidden", c.hidden},         {"layers", c.layers},           {"heads", c.heads},
       {"ffn", c.ffn},               {"visual_dim", c.visual_dim},   {"vocab_size", c.vocab_size},
       {"max_regions", c.max_regions}, {"max_tokens", c.max_tokens}, {"num_classes", c.num_classes},
       {"init_range", c.init_range}, {"ln_eps", c.ln_eps}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.hidden = j.value("hidden", d.hidden);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.ffn = j.value("ffn", d.ffn);
  c.visual_dim = j.value("visual_dim", d.visual_dim);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_regions = j.value("max_regions", d.max_regions);
  c.max_tokens = j.value("max_tokens", d.max_tokens);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.init_range = j.value("init_range", d.init_range);
  c.ln_eps = j.value("ln_eps", d.ln_eps);
}

struct LayerParams {
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln1_gain, ln1_bias;
  Matrix w1, b1, w2, b2;
  Matrix ln2_gain, ln2_bias;
};

// Encoder, embeddings and task heads. Also used as the gradient container.
struct ModelParams {
  ModelConfig config;
  Matrix visual_proj;    // D_v × d
  Matrix position_proj;  // 5 × d
  Matrix word_embed;     // vocab × d
  Matrix index_embed;    // n × d
  Matrix sep, cls, mask_word, mask_region;  // 1 × d
  std::vector<LayerParams> layers;
  Matrix word_head_w, word_head_b;      // d × vocab
  Matrix region_feat_w, region_feat_b;  // d × D_v
  Matrix region_cls_w, region_cls_b;    // d × classes
  Matrix itm_w, itm_b;                  // d × 2

  // Calls f(name, tensor) for every tensor in a fixed order.
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("visual_proj", self.visual_proj);
    f("position_proj", self.position_proj);
    f("word_embed", self.word_embed);
    f("index_embed", self.index_embed);
    f("sep", self.sep);
    f("cls", self.cls);
    f("mask_word", self.mask_word);
    f("mask_region", self.mask_region);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      f(p + "wq", L.wq);
      f(p + "bq", L.bq);
      f(p + "wk", L.wk);
      f(p + "bk", L.bk);
      f(p + "wv", L.wv);
      f(p + "bv", L.bv);
      f(p + "wo", L.wo);
      f(p + "bo", L.bo);
      f(p + "ln1_gain", L.ln1_gain);
      f(p + "ln1_bias", L.ln1_bias);
      f(p + "w1", L.w1);
      f(p + "b1", L.b1);
      f(p + "w2", L.w2);
      f(p + "b2", L.b2);
      f(p + "ln2_gain", L.ln2_gain);
      f(p + "ln2_bias", L.ln2_bias);
    }
    f("word_head_w", self.word_head_w);
    f("word_head_b", self.word_head_b);
    f("region_feat_w", self.region_feat_w);
    f("region_feat_b", self.region_feat_b);
    f("region_cls_w", self.region_cls_w);
    f("region_cls_b", self.region_cls_b);
    f("itm_w", self.itm_w);
    f("itm_b", self.itm_b);
  }

  std::vector<std::pair<std::string, Matrix*>> tensors() {
    std::vector<std::pair<std::string, Matrix*>> out;
    visit(*this, [&](const std::string& n, Matrix& m) { out.emplace_back(n, &m); });
    return out;
  }
  std::vector<std::pair<std::string, const Matrix*>> tensors() const {
    std::vector<std::pair<std::string, const Matrix*>> out;
    visit(*this, [&](const std::string& n, const Matrix& m) { out.emplace_back(n, &m); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, m] : tensors()) n += m->size();
    return n;
  }

  void set_zero() {
    visit(*this, [](const std::string&, Matrix& m) { m.fill(0.0); });
  }

  bool all_finite() const {
    bool ok = true;
    visit(*this, [&](const std::string&, const Matrix& m) { ok = ok && m.all_finite(); });
    return ok;
  }

  bool operator==(const ModelParams& o) const {
    if (!(config == o.config)) return false;
    auto a = tensors();
    auto b = o.tensors();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!(*a[i].second == *b[i].second)) return false;
    return true;
  }

  static ModelParams zeros(const ModelConfig& c) {
    c.validate();
    ModelParams p;
    p.config = c;
    const std::size_t d = c.hidden;
    p.visual_proj = Matrix(c.visual_dim, d);
    p.position_proj = Matrix(5, d);
    p.word_embed = Matrix(c.vocab_size, d);
    p.index_embed = Matrix(c.max_tokens, d);
    p.sep = p.cls = p.mask_word = p.mask_region = Matrix(1, d);
    for (int l = 0; l < c.layers; ++l) {
      LayerParams L;
      L.wq = L.wk = L.wv = L.wo = Matrix(d, d);
      L.bq = L.bk = L.bv = L.bo = Matrix(1, d);
      L.ln1_gain = L.ln1_bias = L.ln2_gain = L.ln2_bias = Matrix(1, d);
      L.w1 = Matrix(d, c.ffn);
      L.b1 = Matrix(1, c.ffn);
      L.w2 = Matrix(c.ffn, d);
      L.b2 = Matrix(1, d);
      p.layers.push_back(std::move(L));
    }
    p.word_head_w = Matrix(d, c.vocab_size);
    p.word_head_b = Matrix(1, c.vocab_size);
    p.region_feat_w = Matrix(d, c.visual_dim);
    p.region_feat_b = Matrix(1, c.visual_dim);
    p.region_cls_w = Matrix(d, c.num_classes);
    p.region_cls_b = Matrix(1, c.num_classes);
    p.itm_w = Matrix(d, 2);
    p.itm_b = Matrix(1, 2);
    return p;
  }

  // Weights and embeddings uniform in ±init_range; biases 0; LN gains 1.
  static ModelParams initialize(const ModelConfig& c, std::uint64_t seed) {
    ModelParams p = zeros(c);
    Rng rng(seed);
    visit(p, [&](const std::string& name, Matrix& m) {
      const auto dot = name.rfind('.');
      const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
      if (leaf.ends_with("_gain")) {
        m.fill(1.0);
      } else if (leaf.ends_with("_bias") || leaf.ends_with("_b") ||
                 (leaf.size() == 2 && leaf[0] == 'b')) {
        m.fill(0.0);
      } else {
        for (auto& x : m.data()) x = rng.uniform(-c.init_range, c.init_range);
      }
    });
    return p;
  }
};

// Padded, masked model input for one (image, text) combination.
struct ModelInput {
  Matrix visual;      // m × D_v
  Matrix positional;  // m × 5
  std::vector<int> token_ids;  // n
  int num_regions = 0;
  int num_tokens = 0;
  std::vector<char> region_masked;  // m
  std::vector<char> word_masked;    // n
};

inline ModelInput make_input(const ImageTextPair& image, const ImageTextPair& text, const MaskPlan* plan,
                             const ModelConfig& c) {
  if (static_cast<int>(image.regions.size()) > c.max_regions)
    throw Error("make_input: pair '" + image.pair_id + "' has more regions than max_regions");
  if (static_cast<int>(text.tokens.size()) > c.max_tokens)
    throw Error("make_input: pair '" + text.pair_id + "' has more tokens than max_tokens");
  ModelInput in;
  in.visual = Matrix(c.max_regions, c.visual_dim);
  in.positional = Matrix(c.max_regions, 5);
  in.token_ids.assign(c.max_tokens, 0);
  in.region_masked.assign(c.max_regions, 0);
  in.word_masked.assign(c.max_tokens, 0);
  in.num_regions = static_cast<int>(image.regions.size());
  in.num_tokens = static_cast<int>(text.tokens.size());
  for (int r = 0; r < in.num_regions; ++r) {
    const auto& reg = image.regions[r];
    if (static_cast<int>(reg.visual_feature.size()) != c.visual_dim)
      throw Error("make_input: visual feature dimension mismatch");
    std::copy(reg.visual_feature.begin(), reg.visual_feature.end(), in.visual.row(r).begin());
    std::copy(reg.positional_feature.begin(), reg.positional_feature.end(), in.positional.row(r).begin());
  }
  for (int t = 0; t < in.num_tokens; ++t) {
    const int id = text.tokens[t].vocab_id;
    if (id < 0 || id >= c.vocab_size) throw Error("make_input: vocab id out of range");
    in.token_ids[t] = id;
  }
  if (plan) {
    for (int r : plan->masked_regions) {
      if (r < 0 || r >= in.num_regions) throw Error("make_input: masked region index out of range");
      in.region_masked[r] = 1;
    }
    for (int w : plan->masked_words) {
      if (w < 0 || w >= in.num_tokens) throw Error("make_input: masked word index out of range");
      in.word_masked[w] = 1;
    }
  }
  return in;
}

inline ModelInput make_input(const ImageTextPair& pair, const MaskPlan* plan, const ModelConfig& c) {
  return make_input(pair, pair, plan, c);
}

// x_i = W_fᵀ f_i + W_pᵀ p_i; masked regions take the learned mask vector; pads are zero.
inline Matrix embed_image(const ModelInput& in, const ModelParams& p) {
  const auto& c = p.config;
  if (in.visual.cols() != static_cast<std::size_t>(c.visual_dim) || in.visual.rows() != static_cast<std::size_t>(c.max_regions))
    throw Error("embed_image: shape mismatch");
  Matrix x = matmul(in.visual, p.visual_proj) + matmul(in.positional, p.position_proj);
  for (int r = 0; r < c.max_regions; ++r) {
    auto row = x.row(r);
    if (r >= in.num_regions) std::fill(row.begin(), row.end(), 0.0);
    else if (in.region_masked[r]) std::copy(p.mask_region.row(0).begin(), p.mask_region.row(0).end(), row.begin());
  }
  return x;
}

// y_i = WordEmbed(w_i) + IdxEmbed(i); masked words use the [MASK] embedding.
inline Matrix embed_text(const ModelInput& in, const ModelParams& p) {
  const auto& c = p.config;
  Matrix y(c.max_tokens, c.hidden);
  for (int t = 0; t < in.num_tokens; ++t) {
    const int id = in.token_ids[t];
    if (id < 0 || id >= c.vocab_size) throw Error("embed_text: vocab id out of range");
    auto src = in.word_masked[t] ? p.mask_word.row(0) : p.word_embed.row(id);
    auto idx = p.index_embed.row(t);
    auto row = y.row(t);
    for (int k = 0; k < c.hidden; ++k) row[k] = src[k] + idx[k];
  }
  return y;
}

// Z = [x_1..x_m, SEP, y_1..y_n, CLS].
inline Matrix assemble_input(const Matrix& x, const Matrix& y, const ModelParams& p) {
  const std::size_t m = x.rows(), n = y.rows(), d = x.cols();
  if (y.cols() != d || p.sep.cols() != d) throw Error("assemble_input: width mismatch");
  Matrix z(m + n + 2, d);
  for (std::size_t i = 0; i < m; ++i) std::copy(x.row(i).begin(), x.row(i).end(), z.row(i).begin());
  std::copy(p.sep.row(0).begin(), p.sep.row(0).end(), z.row(m).begin());
  for (std::size_t i = 0; i < n; ++i) std::copy(y.row(i).begin(), y.row(i).end(), z.row(m + 1 + i).begin());
  std::copy(p.cls.row(0).begin(), p.cls.row(0).end(), z.row(m + n + 1).begin());
  return z;
}

// 1 for real positions (regions, SEP, tokens, CLS), 0 for padding.
inline std::vector<char> real_positions(const ModelInput& in, const ModelConfig& c) {
  std::vector<char> real(c.seq_len(), 0);
  for (int r = 0; r < in.num_regions; ++r) real[r] = 1;
  real[c.sep_index()] = 1;
  for (int t = 0; t < in.num_tokens; ++t) real[c.text_offset() + t] = 1;
  real[c.cls_index()] = 1;
  return real;
}

// ---- building blocks ------------------------------------------------------

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

struct LayerNormCache {
  Matrix xhat;
  std::vector<double> inv_std;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps, LayerNormCache& cache) {
  const std::size_t rows = x.rows(), d = x.cols();
  Matrix y(rows, d);
  cache.xhat = Matrix(rows, d);
  cache.inv_std.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= d;
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    cache.inv_std[r] = inv;
    for (std::size_t k = 0; k < d; ++k) {
      const double h = (xr[k] - mean) * inv;
      cache.xhat(r, k) = h;
      y(r, k) = gain(0, k) * h + bias(0, k);
    }
  }
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& cache,
                                  Matrix& dgain, Matrix& dbias) {
  const std::size_t rows = dy.rows(), d = dy.cols();
  Matrix dx(rows, d);
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0, sum_xh = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double g = dy(r, k);
      dgain(0, k) += g * cache.xhat(r, k);
      dbias(0, k) += g;
      dxhat[k] = g * gain(0, k);
      sum += dxhat[k];
      sum_xh += dxhat[k] * cache.xhat(r, k);
    }
    const double scale = cache.inv_std[r] / static_cast<double>(d);
    for (std::size_t k = 0; k < d; ++k)
      dx(r, k) = scale * (static_cast<double>(d) * dxhat[k] - sum - cache.xhat(r, k) * sum_xh);
  }
  return dx;
}

inline Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = matmul(x, w);
  add_row_vector(y, b);
  return y;
}

// ---- encoder ----------------------------------------------------------------

struct LayerCache {
  Matrix input;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head, seq × seq; pad key columns are 0
  Matrix context;
  LayerNormCache ln1;
  Matrix mid;
  Matrix ffn_pre, ffn_act;
  LayerNormCache ln2;
  Matrix output;
};

struct ForwardResult {
  std::vector<LayerCache> layers;
  std::vector<char> real;
  const Matrix& output() const { return layers.back().output; }
};

inline void check_finite(const Matrix& m, const char* what, std::size_t layer) {
  if (m.all_finite()) return;
  std::ostringstream os;
  os << "non-finite values in " << what << " at layer " << layer;
  throw Error(os.str());
}

// Ẑ = LN(MSA(Z)+Z); Z' = LN(FFN(Ẑ)+Ẑ), per layer. Padded keys are excluded.
inline ForwardResult forward(const Matrix& z, const ModelParams& p, const std::vector<char>& real) {
  const auto& c = p.config;
  const std::size_t seq = z.rows();
  if (z.cols() != static_cast<std::size_t>(c.hidden) || real.size() != seq)
    throw Error("forward: input shape mismatch");
  if (!z.all_finite()) throw Error("forward: non-finite input");
  const int dh = c.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  ForwardResult out;
  out.real = real;
  Matrix cur = z;
  for (int l = 0; l < c.layers; ++l) {
    const LayerParams& L = p.layers[l];
    LayerCache lc;
    lc.input = cur;
    lc.q = linear(cur, L.wq, L.bq);
    lc.k = linear(cur, L.wk, L.bk);
    lc.v = linear(cur, L.wv, L.bv);
    lc.context = Matrix(seq, c.hidden);
    for (int h = 0; h < c.heads; ++h) {
      Matrix prob(seq, seq);
      const int off = h * dh;
      for (std::size_t i = 0; i < seq; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!real[j]) continue;
          double s = 0.0;
          for (int e = 0; e < dh; ++e) s += lc.q(i, off + e) * lc.k(j, off + e);
          s *= scale;
          prob(i, j) = s;
          mx = std::max(mx, s);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!real[j]) continue;
          prob(i, j) = std::exp(prob(i, j) - mx);
          sum += prob(i, j);
        }
        for (std::size_t j = 0; j < seq; ++j)
          if (real[j]) prob(i, j) /= sum;
        for (std::size_t j = 0; j < seq; ++j) {
          const double a = prob(i, j);
          if (a == 0.0) continue;
          for (int e = 0; e < dh; ++e) lc.context(i, off + e) += a * lc.v(j, off + e);
        }
      }
      lc.probs.push_back(std::move(prob));
    }
    Matrix pre1 = linear(lc.context, L.wo, L.bo);
    pre1 += cur;
    lc.mid = layer_norm(pre1, L.ln1_gain, L.ln1_bias, c.ln_eps, lc.ln1);
    lc.ffn_pre = linear(lc.mid, L.w1, L.b1);
    lc.ffn_act = lc.ffn_pre;
    for (auto& x : lc.ffn_act.data()) x = gelu(x);
    Matrix pre2 = linear(lc.ffn_act, L.w2, L.b2);
    pre2 += lc.mid;
    lc.output = layer_norm(pre2, L.ln2_gain, L.ln2_bias, c.ln_eps, lc.ln2);
    check_finite(lc.output, "encoder output", l);
    cur = lc.output;
    out.layers.push_back(std::move(lc));
  }
  return out;
}

inline void accumulate_linear(const Matrix& x, const Matrix& dy, Matrix& dw, Matrix& db) {
  dw += matmul_tn(x, dy);
  db += column_sums(dy);
}

// Backpropagates d(loss)/d(output) through the encoder; returns d(loss)/dZ.
inline Matrix backward_encoder(const ForwardResult& fw, const Matrix& d_out, const ModelParams& p, ModelParams& g) {
  const auto& c = p.config;
  const int dh = c.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t seq = d_out.rows();
  Matrix grad = d_out;
  for (int l = c.layers - 1; l >= 0; --l) {
    const LayerParams& L = p.layers[l];
    LayerParams& G = g.layers[l];
    const LayerCache& lc = fw.layers[l];

    Matrix dpre2 = layer_norm_backward(grad, L.ln2_gain, lc.ln2, G.ln2_gain, G.ln2_bias);
    accumulate_linear(lc.ffn_act, dpre2, G.w2, G.b2);
    Matrix dact = matmul_nt(dpre2, L.w2);
    for (std::size_t i = 0; i < dact.size(); ++i) dact.data()[i] *= gelu_grad(lc.ffn_pre.data()[i]);
    accumulate_linear(lc.mid, dact, G.w1, G.b1);
    Matrix dmid = matmul_nt(dact, L.w1);
    dmid += dpre2;

    Matrix dpre1 = layer_norm_backward(dmid, L.ln1_gain, lc.ln1, G.ln1_gain, G.ln1_bias);
    accumulate_linear(lc.context, dpre1, G.wo, G.bo);
    Matrix dctx = matmul_nt(dpre1, L.wo);

    Matrix dq(seq, c.hidden), dk(seq, c.hidden), dv(seq, c.hidden);
    std::vector<double> dprob(seq);
    for (int h = 0; h < c.heads; ++h) {
      const Matrix& prob = lc.probs[h];
      const int off = h * dh;
      for (std::size_t i = 0; i < seq; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!fw.real[j]) {
            dprob[j] = 0.0;
            continue;
          }
          double s = 0.0;
          for (int e = 0; e < dh; ++e) s += dctx(i, off + e) * lc.v(j, off + e);
          dprob[j] = s;
          dot += prob(i, j) * s;
          const double a = prob(i, j);
          for (int e = 0; e < dh; ++e) dv(j, off + e) += a * dctx(i, off + e);
        }
        for (std::size_t j = 0; j < seq; ++j) {
          if (!fw.real[j]) continue;
          const double ds = prob(i, j) * (dprob[j] - dot) * scale;
          if (ds == 0.0) continue;
          for (int e = 0; e < dh; ++e) {
            dq(i, off + e) += ds * lc.k(j, off + e);
            dk(j, off + e) += ds * lc.q(i, off + e);
          }
        }
      }
    }
    accumulate_linear(lc.input, dq, G.wq, G.bq);
    accumulate_linear(lc.input, dk, G.wk, G.bk);
    accumulate_linear(lc.input, dv, G.wv, G.bv);
    Matrix dz = dpre1;
    dz += matmul_nt(dq, L.wq);
    dz += matmul_nt(dk, L.wk);
    dz += matmul_nt(dv, L.wv);
    grad = std::move(dz);
  }
  return grad;
}

// Routes d(loss)/dZ into the embedding parameters.
inline void backward_embeddings(const ModelInput& in, const Matrix& dz, const ModelParams& p, ModelParams& g) {
  const auto& c = p.config;
  const std::size_t d = c.hidden;
  auto add = [d](Matrix& dst, std::size_t row, std::span<const double> src) {
    auto r = dst.row(row);
    for (std::size_t k = 0; k < d; ++k) r[k] += src[k];
  };
  for (int r = 0; r < in.num_regions; ++r) {
    auto gz = dz.row(r);
    if (in.region_masked[r]) {
      add(g.mask_region, 0, gz);
      continue;
    }
    for (int f = 0; f < c.visual_dim; ++f) {
      const double x = in.visual(r, f);
      if (x == 0.0) continue;
      auto dst = g.visual_proj.row(f);
      for (std::size_t k = 0; k < d; ++k) dst[k] += x * gz[k];
    }
    for (int f = 0; f < 5; ++f) {
      const double x = in.positional(r, f);
      if (x == 0.0) continue;
      auto dst = g.position_proj.row(f);
      for (std::size_t k = 0; k < d; ++k) dst[k] += x * gz[k];
    }
  }
  add(g.sep, 0, dz.row(c.sep_index()));
  for (int t = 0; t < in.num_tokens; ++t) {
    auto gz = dz.row(c.text_offset() + t);
    if (in.word_masked[t]) add(g.mask_word, 0, gz);
    else add(g.word_embed, in.token_ids[t], gz);
    add(g.index_embed, t, gz);
  }
  add(g.cls, 0, dz.row(c.cls_index()));
}

// One encoded (image, text) sequence with everything backward needs.
struct Encoded {
  ModelInput input;
  ForwardResult forward;
  const Matrix& hidden() const { return forward.output(); }
};

inline Encoded encode(ModelInput input, const ModelParams& p) {
  const Matrix z = assemble_input(embed_image(input, p), embed_text(input, p), p);
  auto real = real_positions(input, p.config);
  ForwardResult fw = forward(z, p, real);
  return {std::move(input), std::move(fw)};
}

inline void backward(const Encoded& enc, const Matrix& d_hidden, const ModelParams& p, ModelParams& g) {
  const Matrix dz = backward_encoder(enc.forward, d_hidden, p, g);
  backward_embeddings(enc.input, dz, p, g);
}

// ---- attention maps -------------------------------------------------------

// Elementwise sum over heads followed by a row-wise softmax over real columns.
inline Matrix aggregate_attention(const std::vector<Matrix>& heads, const std::vector<char>& real) {
  if (heads.empty()) throw Error("aggregate_attention: no heads");
  const std::size_t seq = heads.front().rows();
  Matrix sum(seq, heads.front().cols());
  for (const auto& h : heads) sum += h;
  Matrix out(seq, sum.cols());
  for (std::size_t i = 0; i < seq; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < sum.cols(); ++j)
      if (real.empty() || real[j]) mx = std::max(mx, sum(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < sum.cols(); ++j)
      if (real.empty() || real[j]) z += (out(i, j) = std::exp(sum(i, j) - mx));
    for (std::size_t j = 0; j < sum.cols(); ++j) out(i, j) /= z;
  }
  return out;
}

inline Matrix aggregate_last_layer(const ForwardResult& fw) {
  return aggregate_attention(fw.layers.back().probs, fw.real);
}

}  // namespace rosita
