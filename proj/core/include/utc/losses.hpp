#pragma once

// Training objectives: masked-token/region recovery, the binary answer
// head, generative answer likelihood, both sentence-level contrastive
// losses with their hidden-state splitting/pooling, the combined weighted
// objective, and the soft-label finetuning loss.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "utc/corpus.hpp"
#include "utc/model.hpp"
#include "utc/tensor.hpp"

namespace utc {

struct LossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DenominatorMode {
  kPaperLiteral,     // negatives only in the denominator; unbounded below
  kIncludePositive,  // standard InfoNCE; bounded in (0, log(b+1)]
};

struct ContrastiveConfig {
  double temperature = 0.1;
  std::size_t n_negatives = 1;
  DenominatorMode mode = DenominatorMode::kPaperLiteral;
};

struct LossWeights {
  double alpha = 0.05;  // generative weight
  bool use_mlm = true;
  bool use_nsp = true;
  bool use_gen = true;
  bool use_ac = true;
  bool use_cc = true;
};

template <typename T>
struct HiddenSplit {
  Tensor<T> context_disc;  // token states, discriminative side
  Tensor<T> answer_disc;
  Tensor<T> context_gen;   // token states, generative-side encoder
  Tensor<T> answer_dec;    // decoder states at the answer-predicting positions
  // Mean-pooled sentence vectors over the non-[PAD] span positions.
  Tensor<T> c_disc, a_disc, c_gen, a_gen;
};

// Mean of the non-[PAD] rows of states within [start, end).
template <typename T>
Tensor<T> pool_span(Graph<T>& g, Tensor<T> states, const std::vector<int>& tokens,
                    std::size_t start, std::size_t end) {
  if (end <= start || end > states.dim(0) || end > tokens.size())
    throw LossError("pooling span [" + std::to_string(start) + "," + std::to_string(end) +
                    ") does not fit the hidden states");
  std::vector<std::size_t> rows;
  for (std::size_t i = start; i < end; ++i)
    if (tokens[i] != Vocab::kPad) rows.push_back(i);
  if (rows.empty()) throw LossError("pooling span holds only [PAD] positions");
  std::size_t h = states.dim(1);
  return g.reshape(g.mean_rows(g.gather_rows(states, rows)), {h});
}

// Splits D_h / D_h^g by the pair's spans ([CLS] belongs to the context) and
// mean-pools each span. Decoder answer states are the rows that predict the
// answer tokens under teacher forcing: rows [0, answer_len).
template <typename T>
HiddenSplit<T> split_and_pool(Graph<T>& g, const EncoderOutput<T>& enc_disc,
                              const EncoderOutput<T>& enc_gen, const DecoderOutput<T>& dec,
                              const EncodedPair& pair) {
  if (pair.answer_end <= pair.answer_start || pair.answer_end > pair.disc_tokens.size())
    throw LossError("split_and_pool: invalid answer span");
  if (enc_disc.text_hidden.dim(0) != pair.disc_tokens.size())
    throw LossError("split_and_pool: encoder/pair length mismatch");
  std::size_t ans_len = pair.answer_end - pair.answer_start;
  if (dec.hidden.dim(0) < ans_len)
    throw LossError("split_and_pool: decoder ran on a shorter prefix than the answer");

  HiddenSplit<T> s;
  s.context_disc = g.slice_rows(enc_disc.text_hidden, 0, pair.answer_start);
  s.answer_disc = g.slice_rows(enc_disc.text_hidden, pair.answer_start, ans_len);
  s.context_gen = g.slice_rows(enc_gen.text_hidden, 0, pair.answer_start);
  s.answer_dec = g.slice_rows(dec.hidden, 0, ans_len);

  s.c_disc = pool_span(g, enc_disc.text_hidden, pair.disc_tokens, 0, pair.answer_start);
  s.a_disc = pool_span(g, enc_disc.text_hidden, pair.disc_tokens, pair.answer_start,
                               pair.answer_end);
  s.c_gen = pool_span(g, enc_gen.text_hidden, pair.gen_tokens, 0, pair.answer_start);
  s.a_gen = g.reshape(g.mean_rows(s.answer_dec), {dec.hidden.dim(1)});
  return s;
}

// -log[ exp(cos(q,pos)/tau) / sum_i exp(cos(q,neg_i)/tau) ]; the positive
// joins the denominator only in kIncludePositive mode.
template <typename T>
Tensor<T> contrastive_loss(Graph<T>& g, Tensor<T> query, Tensor<T> positive,
                           const std::vector<Tensor<T>>& negatives,
                           const ContrastiveConfig& cfg) {
  if (cfg.temperature <= 0) throw LossError("contrastive loss: temperature must be positive");
  if (negatives.size() != cfg.n_negatives)
    throw LossError("contrastive loss: expected " + std::to_string(cfg.n_negatives) +
                    " negatives, got " + std::to_string(negatives.size()));
  T inv_tau = T(1) / static_cast<T>(cfg.temperature);
  Tensor<T> s_pos = g.scale(g.cosine_similarity(query, positive), inv_tau);
  std::vector<Tensor<T>> sims;
  if (cfg.mode == DenominatorMode::kIncludePositive) sims.push_back(s_pos);
  for (const auto& n : negatives)
    sims.push_back(g.scale(g.cosine_similarity(query, n), inv_tau));
  return g.sub(g.logsumexp(g.stack_scalars(sims)), s_pos);
}

template <typename T>
Tensor<T> answer_contrastive_loss(Graph<T>& g, const HiddenSplit<T>& split,
                                  const std::vector<Tensor<T>>& negatives,
                                  const ContrastiveConfig& cfg) {
  return contrastive_loss(g, split.a_disc, split.a_gen, negatives, cfg);
}

template <typename T>
Tensor<T> context_contrastive_loss(Graph<T>& g, const HiddenSplit<T>& split,
                                   const std::vector<Tensor<T>>& negatives,
                                   const ContrastiveConfig& cfg) {
  return contrastive_loss(g, split.c_disc, split.c_gen, negatives, cfg);
}

template <typename T>
struct MlmLossResult {
  Tensor<T> total;
  bool empty = false;
};

// Mean NLL of the original ids at masked text positions plus mean squared
// error of the original features at masked region slots, weighted 1:1.
template <typename T>
MlmLossResult<T> mlm_loss(Graph<T>& g, const MlmOutput<T>& out, const MaskingPlan& plan,
                          const ImageFeatures& original) {
  if (plan.empty()) return {Tensor<T>::scalar(T(0)), true};
  MlmLossResult<T> r;
  Tensor<T> total;
  if (!plan.text_positions.empty()) {
    if (!out.text_logits.defined() || out.text_logits.dim(0) != plan.text_positions.size())
      throw LossError("mlm loss: logits do not match the masking plan");
    total = g.cross_entropy_rows(out.text_logits, plan.original_ids);
  }
  if (!plan.region_indices.empty()) {
    if (!out.region_recon.defined() || out.region_recon.dim(0) != plan.region_indices.size())
      throw LossError("mlm loss: reconstructions do not match the masking plan");
    std::size_t d = original.d_img;
    if (out.region_recon.dim(1) != d) throw LossError("mlm loss: feature width mismatch");
    std::vector<T> target;
    target.reserve(plan.region_indices.size() * d);
    for (std::size_t ri : plan.region_indices) {
      if (ri >= original.n_regions) throw LossError("mlm loss: region index out of range");
      for (std::size_t j = 0; j < d; ++j)
        target.push_back(static_cast<T>(original.region(ri)[j]));
    }
    Tensor<T> vis = g.mse(out.region_recon,
                          Tensor<T>::from({plan.region_indices.size(), d}, std::move(target)));
    total = total.defined() ? g.add(total, vis) : vis;
  }
  r.total = total;
  return r;
}

// Binary cross-entropy -[y ln p + (1-y) ln(1-p)]; only the label's branch
// is evaluated so p == 1 with y == 1 (and p == 0 with y == 0) are exact 0.
template <typename T>
Tensor<T> nsp_loss(Graph<T>& g, Tensor<T> score, int label) {
  if (label != 0 && label != 1) throw LossError("nsp loss: label must be 0 or 1");
  T p = score.item();
  if (label == 1) {
    if (p <= T(0) || p > T(1)) throw LossError("nsp loss: score outside (0,1]");
    return g.scale(g.log(score), T(-1));
  }
  if (p < T(0) || p >= T(1)) throw LossError("nsp loss: score outside [0,1)");
  Tensor<T> one_minus = g.sub(Tensor<T>::scalar(T(1)), score);
  return g.scale(g.log(one_minus), T(-1));
}

// Mean per-token NLL of the gt answer (terminal [SEP] included) under the
// teacher-forced decoder logits.
template <typename T>
Tensor<T> generative_loss(Graph<T>& g, const DecoderOutput<T>& dec,
                          const std::vector<int>& targets) {
  if (dec.logits.dim(0) != targets.size())
    throw LossError("generative loss: logits rows " + std::to_string(dec.logits.dim(0)) +
                    " != targets " + std::to_string(targets.size()));
  return g.cross_entropy_rows(dec.logits, targets);
}

template <typename T>
struct LossComponents {
  Tensor<T> mlm, nsp, gen, ac, cc;  // any may be undefined when switched off
};

// L = L_mlm + L_nsp + alpha * L_g + L_ac + L_cc with per-component switches.
template <typename T>
Tensor<T> combined_loss(Graph<T>& g, const LossComponents<T>& c, const LossWeights& w) {
  auto use = [&](const Tensor<T>& t, const char* name, bool on) {
    if (!on) return false;
    if (!t.defined()) throw LossError(std::string("combined loss: missing component ") + name);
    if (!std::isfinite(t.item()))
      throw LossError(std::string("combined loss: non-finite component ") + name);
    return true;
  };
  Tensor<T> total = Tensor<T>::scalar(T(0));
  if (use(c.mlm, "mlm", w.use_mlm)) total = g.add(total, c.mlm);
  if (use(c.nsp, "nsp", w.use_nsp)) total = g.add(total, c.nsp);
  if (use(c.gen, "gen", w.use_gen)) total = g.add_scaled(total, c.gen, static_cast<T>(w.alpha));
  if (use(c.ac, "ac", w.use_ac)) total = g.add(total, c.ac);
  if (use(c.cc, "cc", w.use_cc)) total = g.add(total, c.cc);
  return total;
}

// Cross-entropy between softmax over per-candidate logits and the relevance
// scores normalized to a distribution.
template <typename T>
Tensor<T> dense_finetune_loss(Graph<T>& g, Tensor<T> logits,
                              const std::vector<double>& relevance) {
  if (logits.rank() != 1 || logits.dim(0) != relevance.size())
    throw LossError("dense loss: logits/relevance length mismatch");
  double sum = 0;
  for (double r : relevance) {
    if (r < 0) throw LossError("dense loss: negative relevance");
    sum += r;
  }
  if (sum <= 0) throw LossError("dense loss: relevance must not be all zero");
  std::size_t n = relevance.size();
  std::vector<T> q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = static_cast<T>(relevance[i] / sum);
  Tensor<T> target = Tensor<T>::from({n}, std::move(q));
  return g.sub(g.logsumexp(logits), g.dot(logits, target));
}

}  // namespace utc
