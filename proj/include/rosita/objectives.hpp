#pragma once

// Pretraining objectives on top of the encoder output: masked word
// reconstruction (SKMLM/MLM), masked region reconstruction with feature
// regression plus soft classification (SKMRM/MRM), and image-text matching.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "rosita/model.hpp"

namespace rosita {

enum class Task { Skmlm, Skmrm, Mlm, Mrm, Itm };

inline constexpr std::array<Task, 5> kAllTasks = {Task::Skmlm, Task::Skmrm, Task::Mlm, Task::Mrm, Task::Itm};

inline const char* to_string(Task t) {
  switch (t) {
    case Task::Skmlm: return "SKMLM";
    case Task::Skmrm: return "SKMRM";
    case Task::Mlm: return "MLM";
    case Task::Mrm: return "MRM";
    case Task::Itm: return "ITM";
  }
  return "";
}

inline Task task_from_string(const std::string& s) {
  for (Task t : kAllTasks)
    if (s == to_string(t)) return t;
  throw Error("unknown task '" + s + "'");
}

inline bool is_word_task(Task t) { return t == Task::Skmlm || t == Task::Mlm; }
inline bool is_region_task(Task t) { return t == Task::Skmrm || t == Task::Mrm; }

// ITM class indices.
inline constexpr int kMatched = 0;
inline constexpr int kMismatched = 1;

struct StepLoss {
  Task task = Task::Itm;
  double loss = 0.0;
  int count = 0;    // masked positions (or ITM examples)
  int correct = 0;  // argmax hits among them
  int fallbacks = 0;

  double accuracy() const { return count ? static_cast<double>(correct) / count : 0.0; }
};

struct HeadLoss {
  double loss = 0.0;
  int count = 0;
  int correct = 0;
};

namespace detail {

inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Gathers hidden rows at `positions` into a matrix.
inline Matrix gather_rows(const Matrix& hidden, const std::vector<int>& positions) {
  Matrix out(positions.size(), hidden.cols());
  for (std::size_t i = 0; i < positions.size(); ++i)
    std::copy(hidden.row(positions[i]).begin(), hidden.row(positions[i]).end(), out.row(i).begin());
  return out;
}

inline void scatter_rows(Matrix& d_hidden, const std::vector<int>& positions, const Matrix& rows) {
  for (std::size_t i = 0; i < positions.size(); ++i) {
    auto dst = d_hidden.row(positions[i]);
    auto src = rows.row(i);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

}  // namespace detail

// Mean NLL of `targets` at hidden rows `positions`. When `grads` is set, adds
// grad_scale·∂loss into the word head grads and `d_hidden`.
inline HeadLoss word_prediction_loss(const Matrix& hidden, const std::vector<int>& positions,
                                     const std::vector<int>& targets, const ModelParams& p,
                                     ModelParams* grads = nullptr, Matrix* d_hidden = nullptr,
                                     double grad_scale = 1.0) {
  if (positions.empty()) throw Error("word_prediction_loss: no masked words");
  const Matrix h = detail::gather_rows(hidden, positions);
  const Matrix logits = linear(h, p.word_head_w, p.word_head_b);
  HeadLoss out;
  out.count = static_cast<int>(positions.size());
  Matrix dlogits(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto ls = detail::log_softmax(logits.row(i));
    out.loss -= ls.at(targets[i]);
    if (detail::argmax(logits.row(i)) == static_cast<std::size_t>(targets[i])) ++out.correct;
    for (std::size_t k = 0; k < ls.size(); ++k) dlogits(i, k) = std::exp(ls[k]);
    dlogits(i, targets[i]) -= 1.0;
  }
  out.loss /= out.count;
  if (grads) {
    dlogits *= grad_scale / out.count;
    accumulate_linear(h, dlogits, grads->word_head_w, grads->word_head_b);
    if (d_hidden) detail::scatter_rows(*d_hidden, positions, matmul_nt(dlogits, p.word_head_w));
  }
  return out;
}

// Mean over positions of ‖f̂ − f‖² + H(q, softmax(class logits)).
inline HeadLoss region_prediction_loss(const Matrix& hidden, const std::vector<int>& positions,
                                       const std::vector<const Region*>& targets, const ModelParams& p,
                                       ModelParams* grads = nullptr, Matrix* d_hidden = nullptr,
                                       double grad_scale = 1.0) {
  if (positions.empty()) throw Error("region_prediction_loss: no masked regions");
  const Matrix h = detail::gather_rows(hidden, positions);
  const Matrix feat = linear(h, p.region_feat_w, p.region_feat_b);
  const Matrix logits = linear(h, p.region_cls_w, p.region_cls_b);
  HeadLoss out;
  out.count = static_cast<int>(positions.size());
  Matrix dfeat(feat.rows(), feat.cols()), dlogits(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Region& t = *targets[i];
    for (std::size_t k = 0; k < feat.cols(); ++k) {
      const double diff = feat(i, k) - t.visual_feature.at(k);
      out.loss += diff * diff;
      dfeat(i, k) = 2.0 * diff;
    }
    const auto ls = detail::log_softmax(logits.row(i));
    double qsum = 0.0;
    for (std::size_t k = 0; k < ls.size(); ++k) {
      const double q = t.class_distribution.at(k);
      out.loss -= q * ls[k];
      qsum += q;
    }
    for (std::size_t k = 0; k < ls.size(); ++k) dlogits(i, k) = qsum * std::exp(ls[k]) - t.class_distribution[k];
    if (detail::argmax(logits.row(i)) == t.argmax_class()) ++out.correct;
  }
  out.loss /= out.count;
  if (grads) {
    dfeat *= grad_scale / out.count;
    dlogits *= grad_scale / out.count;
    accumulate_linear(h, dfeat, grads->region_feat_w, grads->region_feat_b);
    accumulate_linear(h, dlogits, grads->region_cls_w, grads->region_cls_b);
    if (d_hidden) {
      Matrix dh = matmul_nt(dfeat, p.region_feat_w);
      dh += matmul_nt(dlogits, p.region_cls_w);
      detail::scatter_rows(*d_hidden, positions, dh);
    }
  }
  return out;
}

// Two-way cross-entropy on the [CLS] row; label is kMatched or kMismatched.
inline HeadLoss itm_prediction_loss(const Matrix& hidden, int cls_position, int label, const ModelParams& p,
                                    ModelParams* grads = nullptr, Matrix* d_hidden = nullptr,
                                    double grad_scale = 1.0) {
  if (label != kMatched && label != kMismatched) throw Error("itm_prediction_loss: bad label");
  const std::vector<int> pos{cls_position};
  const Matrix h = detail::gather_rows(hidden, pos);
  const Matrix logits = linear(h, p.itm_w, p.itm_b);
  const auto ls = detail::log_softmax(logits.row(0));
  HeadLoss out{-ls[label], 1, detail::argmax(logits.row(0)) == static_cast<std::size_t>(label) ? 1 : 0};
  if (grads) {
    Matrix dlogits(1, 2);
    for (int k = 0; k < 2; ++k) dlogits(0, k) = grad_scale * (std::exp(ls[k]) - (k == label ? 1.0 : 0.0));
    accumulate_linear(h, dlogits, grads->itm_w, grads->itm_b);
    if (d_hidden) detail::scatter_rows(*d_hidden, pos, matmul_nt(dlogits, p.itm_w));
  }
  return out;
}

// Sequence positions of masked words / regions in a plan.
inline std::vector<int> word_positions(const MaskPlan& plan, const ModelConfig& c) {
  std::vector<int> out;
  for (int w : plan.masked_words) out.push_back(c.text_offset() + w);
  return out;
}

inline std::vector<int> region_positions(const MaskPlan& plan) { return plan.masked_regions; }

inline std::vector<int> word_targets(const MaskPlan& plan, const ImageTextPair& pair) {
  std::vector<int> out;
  for (int w : plan.masked_words) out.push_back(pair.tokens.at(w).vocab_id);
  return out;
}

inline std::vector<const Region*> region_targets(const MaskPlan& plan, const ImageTextPair& pair) {
  std::vector<const Region*> out;
  for (int r : plan.masked_regions) out.push_back(&pair.regions.at(r));
  return out;
}

// One training example: which pair supplies the image and the text, how it is
// masked, and what is predicted.
struct TaskExample {
  Task task = Task::Itm;
  const ImageTextPair* image = nullptr;
  const ImageTextPair* text = nullptr;
  MaskPlan plan;
  int itm_label = kMatched;
  bool fallback = false;  // SKM task downgraded to its random counterpart
};

// Loss of one example; encodes, evaluates the task head, and when `grads` is
// set backpropagates grad_scale·∂loss into it.
inline HeadLoss example_loss(const TaskExample& ex, const ModelParams& p, ModelParams* grads = nullptr,
                             double grad_scale = 1.0) {
  const auto& c = p.config;
  const bool needs_mask = ex.task != Task::Itm;
  if (needs_mask) {
    const bool skm = ex.task == Task::Skmlm || ex.task == Task::Skmrm;
    if (skm && ex.plan.origin != PlanOrigin::Skm) throw Error(std::string(to_string(ex.task)) + ": plan is not an SKM plan");
    if (!skm && ex.plan.origin != PlanOrigin::Random)
      throw Error(std::string(to_string(ex.task)) + ": plan is not a random plan");
  }
  Encoded enc = encode(make_input(*ex.image, *ex.text, needs_mask ? &ex.plan : nullptr, c), p);
  Matrix d_hidden;
  Matrix* dh = nullptr;
  if (grads) {
    d_hidden = Matrix(enc.hidden().rows(), enc.hidden().cols());
    dh = &d_hidden;
  }
  HeadLoss out;
  if (is_word_task(ex.task)) {
    if (ex.plan.masked_words.empty()) throw Error(std::string(to_string(ex.task)) + ": empty masked word set");
    out = word_prediction_loss(enc.hidden(), word_positions(ex.plan, c), word_targets(ex.plan, *ex.text), p, grads, dh,
                               grad_scale);
  } else if (is_region_task(ex.task)) {
    if (ex.plan.masked_regions.empty()) throw Error(std::string(to_string(ex.task)) + ": empty masked region set");
    out = region_prediction_loss(enc.hidden(), region_positions(ex.plan), region_targets(ex.plan, *ex.image), p, grads,
                                 dh, grad_scale);
  } else {
    out = itm_prediction_loss(enc.hidden(), c.cls_index(), ex.itm_label, p, grads, dh, grad_scale);
  }
  if (grads) backward(enc, d_hidden, p, *grads);
  return out;
}

// Mean loss over a batch of examples of one task; gradients (if requested)
// are of that mean.
inline StepLoss multitask_step(Task task, const std::vector<TaskExample>& batch, const ModelParams& p,
                               ModelParams* grads = nullptr) {
  if (batch.empty()) throw Error("multitask_step: empty batch");
  StepLoss out;
  out.task = task;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const HeadLoss h = example_loss(ex, p, grads, scale);
    out.loss += h.loss * scale;
    out.count += h.count;
    out.correct += h.correct;
    out.fallbacks += ex.fallback ? 1 : 0;
  }
  return out;
}

}  // namespace rosita
