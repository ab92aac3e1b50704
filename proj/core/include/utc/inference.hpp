#pragma once

// Evaluation-time entry points: candidate ranking through the binary answer
// head, greedy answer generation with the recursive-[MASK] decoder, answer
// log-likelihood scoring for the generative ranking protocol, and attention
// export for inspection.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "utc/corpus.hpp"
#include "utc/losses.hpp"
#include "utc/model.hpp"
#include "utc/tensor.hpp"

namespace utc {

struct InferenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CandidateScores {
  std::vector<double> scores;     // higher is better
  std::vector<char> overflowed;   // candidate did not fit; score is -inf
};

// NSP logit per candidate, each candidate appended to the round's context.
// Candidates whose sequence exceeds max_seq_len rank last instead of
// aborting the whole round.
template <typename T>
CandidateScores rank_discriminative(Model<T>& m, const Corpus& corpus, const Dialog& d,
                                    std::size_t t) {
  const Round& round = d.rounds.at(t);
  const ImageFeatures& feats = corpus.features_for(d.image_id);
  CandidateScores out;
  out.scores.resize(round.candidates.size());
  out.overflowed.assign(round.candidates.size(), 0);
  for (std::size_t k = 0; k < round.candidates.size(); ++k) {
    EncodedPair p;
    try {
      p = encode_discriminative(corpus, d, t, corpus.candidate_text(round, k),
                                m.config().max_seq_len);
    } catch (const CorpusError&) {
      out.scores[k] = -std::numeric_limits<double>::infinity();
      out.overflowed[k] = 1;
      continue;
    }
    Graph<T> g;
    auto enc = m.encode(g, p.disc_tokens, p.segment_ids, feats);
    out.scores[k] = static_cast<double>(m.nsp_logit(g, enc).item());
  }
  return out;
}

// Greedy decoding: the prefix is [MASK] followed by everything generated so
// far; each step reads the argmax of the last row (ties to the lowest id)
// and stops at [SEP] or max_answer_len tokens.
template <typename T>
std::vector<int> generate_answer_ids(Model<T>& m, const Corpus& corpus, const Dialog& d,
                                     std::size_t t) {
  EncodedPair ctx = encode_generative(corpus, d, t, GenMode::kInfer, m.config().max_seq_len);
  const ImageFeatures& feats = corpus.features_for(d.image_id);
  Graph<T> g;
  auto enc = m.encode(g, ctx.gen_tokens, ctx.segment_ids, feats);
  auto cs = m.project_common_space(g, enc);
  std::vector<int> ids;
  while (ids.size() < m.config().max_answer_len) {
    std::vector<int> prefix{Vocab::kMask};
    prefix.insert(prefix.end(), ids.begin(), ids.end());
    auto dec = m.decode(g, cs, prefix);
    std::size_t last = dec.logits.dim(0) - 1;
    std::size_t V = dec.logits.dim(1);
    const T* row = dec.logits.data().data() + last * V;
    int best = 0;
    for (std::size_t v = 1; v < V; ++v)
      if (row[v] > row[best]) best = static_cast<int>(v);
    if (best == Vocab::kSep) break;
    ids.push_back(best);
  }
  return ids;
}

template <typename T>
Words generate_answer(Model<T>& m, const Corpus& corpus, const Dialog& d, std::size_t t) {
  return corpus.vocab.decode(generate_answer_ids(m, corpus, d, t));
}

// Mean per-token log-likelihood of each candidate (terminal [SEP] included)
// under teacher forcing against the answerless context. Candidates longer
// than the decoder window rank last.
template <typename T>
CandidateScores score_candidates_loglik(Model<T>& m, const Corpus& corpus, const Dialog& d,
                                        std::size_t t) {
  const Round& round = d.rounds.at(t);
  EncodedPair ctx = encode_generative(corpus, d, t, GenMode::kInfer, m.config().max_seq_len);
  const ImageFeatures& feats = corpus.features_for(d.image_id);
  Graph<T> g;
  auto enc = m.encode(g, ctx.gen_tokens, ctx.segment_ids, feats);
  auto cs = m.project_common_space(g, enc);
  CandidateScores out;
  out.scores.resize(round.candidates.size());
  out.overflowed.assign(round.candidates.size(), 0);
  for (std::size_t k = 0; k < round.candidates.size(); ++k) {
    std::vector<int> ids = corpus.vocab.encode(corpus.candidate_text(round, k));
    if (ids.size() + 1 > m.config().max_answer_len + 2) {
      out.scores[k] = -std::numeric_limits<double>::infinity();
      out.overflowed[k] = 1;
      continue;
    }
    std::vector<int> prefix{Vocab::kMask};
    prefix.insert(prefix.end(), ids.begin(), ids.end());
    auto dec = m.decode(g, cs, prefix);
    std::vector<int> targets = ids;
    targets.push_back(Vocab::kSep);
    out.scores[k] = -static_cast<double>(generative_loss(g, dec, targets).item());
  }
  return out;
}

// CSV dump of the final-layer attention probabilities:
// matrix,head,query,key,weight. Every (matrix, head, query) row sums to 1.
template <typename T>
void export_attention(const EncoderOutput<T>& enc, std::ostream& os) {
  os << "matrix,head,query,key,weight\n";
  auto dump = [&](const char* name, const Tensor<T>& a) {
    if (!a.defined()) throw InferenceError("attention export: probabilities missing");
    if (a.rank() != 3) throw InferenceError("attention export: expects [heads, q, k]");
    for (std::size_t h = 0; h < a.dim(0); ++h)
      for (std::size_t q = 0; q < a.dim(1); ++q)
        for (std::size_t k = 0; k < a.dim(2); ++k) {
          char buf[128];
          std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%zu,%.9e\n", name, h, q, k,
                        static_cast<double>(a.data()[(h * a.dim(1) + q) * a.dim(2) + k]));
          os << buf;
        }
  };
  dump("text_self", enc.text_self_attn);
  dump("img_self", enc.img_self_attn);
  dump("text_cross", enc.text_cross_attn);
  dump("img_cross", enc.img_cross_attn);
}

}  // namespace utc
