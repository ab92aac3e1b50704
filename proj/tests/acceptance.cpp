// Acceptance gate: eight end-to-end criteria, one pass/fail line each.
//   --fast          run the sub-minute criteria (1-4)
//   --criterion N   run one criterion (repeatable)
// With no flags, all eight run. Exit status is nonzero if any selected
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "utc/commands.hpp"
#include "utc/config.hpp"
#include "utc/corpus.hpp"
#include "utc/inference.hpp"
#include "utc/losses.hpp"
#include "utc/metrics.hpp"
#include "utc/model.hpp"
#include "utc/rng.hpp"
#include "utc/tensor.hpp"
#include "utc/trainer.hpp"

using namespace utc;

namespace {

struct Check {
  bool ok = true;
  std::string detail;
  int checks = 0;

  void expect(bool cond, const std::string& what) {
    ++checks;
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

double rel_err(double a, double b) {
  double d = std::fabs(a - b);
  return d / std::max({std::fabs(a), std::fabs(b), 1e-6});
}

std::vector<double> randvec(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

template <typename Build>
double grad_vs_fd(Build build, const std::vector<double>& x0, const Shape& shape,
                  double h = 1e-5) {
  auto param = Tensor<double>::from(shape, x0, /*requires_grad=*/true);
  Graph<double> g;
  auto loss = build(g, param);
  g.backward(loss);
  auto fd = finite_difference<double>(
      [&](const std::vector<double>& x) {
        auto p = Tensor<double>::from(shape, x);
        Graph<double> gf(/*grad_enabled=*/false);
        return build(gf, p).item();
      },
      x0, h);
  double worst = 0;
  for (std::size_t i = 0; i < x0.size(); ++i)
    worst = std::max(worst, rel_err(param.grad()[i], fd[i]));
  return worst;
}

// Hand-built two-round dialog shared by the loss-path criteria.
Corpus tiny_corpus() {
  Corpus c;
  c.vocab = Vocab::with_words({"a", "cat", "is", "it", "black", "big", "yes", "no", "sir"});
  c.answers = {{"yes"}, {"no"}, {"yes", "sir"}, {"black"}};
  Dialog d;
  d.image_id = 0;
  d.caption = {"a", "cat"};
  Round r1;
  r1.question = {"is", "it", "black"};
  r1.gt_answer = {"yes"};
  r1.candidates = {0, 1, 2, 3};
  r1.gt_index = 0;
  Round r2;
  r2.question = {"is", "it", "big"};
  r2.gt_answer = {"yes", "sir"};
  r2.candidates = {2, 1, 0, 3};
  r2.gt_index = 0;
  d.rounds = {r1, r2};
  c.dialogs.push_back(d);
  ImageFeatures f;
  f.image_id = 0;
  f.n_regions = 2;
  f.d_img = 3;
  f.data = {0.5f, -1.0f, 2.0f, 1.5f, 0.25f, -0.75f};
  c.features.push_back(f);
  return c;
}

ModelConfig tiny_model_cfg(const Corpus& c) {
  ModelConfig cfg;
  cfg.hidden_size = 8;
  cfg.n_encoder_layers = 1;
  cfg.n_decoder_layers = 1;
  cfg.n_heads = 2;
  cfg.max_seq_len = 32;
  cfg.vocab_size = c.vocab.size();
  cfg.d_img = 3;
  cfg.n_regions = 2;
  cfg.dropout = 0.0;
  cfg.common_space_dim = 8;
  cfg.ffn_mult = 2;
  cfg.max_answer_len = 4;
  return cfg;
}

// The full training objective of one example as a scalar function of the
// model's parameters: both encoder passes, the teacher-forced decoder,
// split-and-pool, all five component losses, and the weighted sum.
template <typename ModelT>
Tensor<double> full_objective(Graph<double>& g, ModelT& m, const Corpus& c) {
  const Dialog& d = c.dialogs[0];
  EncodedPair pair = encode_pair(c, d, 0, 32);
  MaskingPlan plan;
  plan.text_positions = {4};
  plan.original_ids = {pair.disc_tokens[4]};
  plan.region_indices = {1};
  pair.mlm_plan = plan;
  std::vector<int> masked = masked_tokens(pair);
  ImageFeatures feats = masked_features(c.features[0], plan);

  auto enc_disc = m.encode(g, masked, pair.segment_ids, feats);
  auto enc_gen = m.encode(g, pair.gen_tokens, pair.segment_ids, c.features[0]);
  auto cs = m.project_common_space(g, enc_gen);
  std::vector<int> answer{pair.disc_tokens.begin() + pair.answer_start,
                          pair.disc_tokens.begin() + pair.answer_end};
  std::vector<int> prefix{Vocab::kMask};
  prefix.insert(prefix.end(), answer.begin(), answer.end());
  auto dec = m.decode(g, cs, prefix);
  std::vector<int> targets = answer;
  targets.push_back(Vocab::kSep);

  auto split = split_and_pool(g, enc_disc, enc_gen, dec, pair);
  split.a_gen = m.map_decoder_to_encoder_space(g, split.a_gen);
  ContrastiveConfig ccfg{0.1, 2, DenominatorMode::kPaperLiteral};
  std::vector<Tensor<double>> negs{
      Tensor<double>::from({8}, {0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.6, -0.1}),
      Tensor<double>::from({8}, {-0.5, 0.4, 0.1, -0.3, 0.2, -0.6, 0.3, 0.5})};

  LossComponents<double> comps;
  comps.mlm = mlm_loss(g, m.mlm_logits(g, enc_disc, plan), plan, c.features[0]).total;
  comps.nsp = nsp_loss(g, m.nsp_score(g, enc_disc), 1);
  comps.gen = generative_loss(g, dec, targets);
  comps.ac = answer_contrastive_loss(g, split, negs, ccfg);
  comps.cc = context_contrastive_loss(g, split, negs, ccfg);
  return combined_loss(g, comps, LossWeights{});
}

// ---------------------------------------------------------------- criterion 1

Check criterion_gradients() {
  Check c;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    // Primitive ops, each through a scalar reduction.
    {
      auto x = randvec(rng, 12);
      auto o = randvec(rng, 12);
      c.expect(grad_vs_fd(
                   [&](Graph<double>& g, Tensor<double> p) {
                     auto ot = Tensor<double>::from({3, 4}, o);
                     return g.mean_all(g.mul(g.add_scaled(g.sub(p, ot), ot, 0.5), ot));
                   },
                   x, {3, 4}) < 1e-4,
               "add/sub/add_scaled/mul gradient");
    }
    {
      auto x = randvec(rng, 12);
      auto w = randvec(rng, 8);
      auto b = randvec(rng, 2);
      c.expect(grad_vs_fd(
                   [&](Graph<double>& g, Tensor<double> p) {
                     auto h = g.add_bias(g.matmul(p, Tensor<double>::from({4, 2}, w)),
                                         Tensor<double>::from({2}, b));
                     return g.mean_all(g.gelu(h));
                   },
                   x, {3, 4}) < 1e-4,
               "matmul/add_bias/gelu gradient");
      c.expect(grad_vs_fd(
                   [&](Graph<double>& g, Tensor<double> p) {
                     return g.mean_all(
                         g.sigmoid(g.matmul(Tensor<double>::from({3, 4}, x), p)));
                   },
                   w, {4, 2}) < 1e-4,
               "matmul weight-side/sigmoid gradient");
    }
    {
      auto x = randvec(rng, 12);
      c.expect(grad_vs_fd(
                   [&](Graph<double>& g, Tensor<double> p) {
                     auto t3 = g.reshape(p, {2, 2, 3});
                     auto bm = g.bmm(t3, g.permute(t3, {0, 2, 1}));
                     return g.sum_all(g.softmax(g.reshape(bm, {4, 2}), 1));
                   },
                   x, {2, 6}) < 1e-4,
               "bmm/permute/softmax gradient");
    }
    {
      auto x = randvec(rng, 8);
      auto keep = std::make_shared<std::vector<std::uint8_t>>(
          std::vector<std::uint8_t>{1, 0, 1, 1});
      c.expect(grad_vs_fd(
                   [&](Graph<double>& g, Tensor<double> p) {
                     return g.mean_all(g.masked_softmax_last(g.reshape(p, {2, 4}), keep));
                   },
                   x, {2, 4}) < 1e-4,
               "masked_softmax_last gradient");
    }
    {
      auto x = randvec(rng, 12);
      auto gain = randvec(rng, 4, 0.5);
      auto bias = randvec(rng, 4, 0.5);
      c.expect(grad_vs_fd(
                   [&](Graph<double>& g, Tensor<double> p) {
                     auto y = g.layer_norm(p, Tensor<double>::from({4}, gain),
                                           Tensor<double>::from({4}, bias), 1e-5);
                     return g.mean_all(y);
                   },
                   x, {3, 4}) < 1e-4,
               "layer_norm gradient");
      c.expect(grad_vs_fd(
                   [&](Graph<double>& g, Tensor<double> p) {
                     auto y = g.layer_norm(Tensor<double>::from({3, 4}, x), p,
                                           Tensor<double>::from({4}, bias), 1e-5);
                     return g.sum_all(y);
                   },
                   gain, {4}) < 1e-4,
               "layer_norm gain gradient");
    }
    {
      auto x = randvec(rng, 10);
      c.expect(grad_vs_fd(
                   [&](Graph<double>& g, Tensor<double> p) {
                     auto rows = g.concat_rows(g.slice_rows(p, 0, 3),
                                               g.gather_rows(p, {4, 1, 0}));
                     auto pooled = g.mean_rows(rows);
                     return g.logsumexp(g.reshape(pooled, {2}));
                   },
                   x, {5, 2}) < 1e-4,
               "slice/gather/concat/mean_rows/logsumexp gradient");
    }
    {
      auto u = randvec(rng, 6);
      auto v = randvec(rng, 6);
      c.expect(grad_vs_fd(
                   [&](Graph<double>& g, Tensor<double> p) {
                     auto vt = Tensor<double>::from({6}, v);
                     auto d = g.dot(p, vt);
                     auto csim = g.cosine_similarity(p, vt);
                     return g.logsumexp(g.stack_scalars({d, csim, g.log(g.sigmoid(d))}));
                   },
                   u, {6}) < 1e-4,
               "dot/cosine/stack_scalars/log gradient");
    }
    {
      auto logits = randvec(rng, 12);
      c.expect(grad_vs_fd(
                   [&](Graph<double>& g, Tensor<double> p) {
                     return g.cross_entropy_rows(p, {1, 3, 0});
                   },
                   logits, {3, 4}) < 1e-4,
               "cross_entropy_rows gradient");
      auto pred = randvec(rng, 6);
      auto target = randvec(rng, 6);
      c.expect(grad_vs_fd(
                   [&](Graph<double>& g, Tensor<double> p) {
                     return g.mse(p, Tensor<double>::from({2, 3}, target));
                   },
                   pred, {2, 3}) < 1e-4,
               "mse gradient");
      auto table = randvec(rng, 12);
      c.expect(grad_vs_fd(
                   [&](Graph<double>& g, Tensor<double> p) {
                     return g.mean_all(g.embedding(p, {2, 0, 2}));
                   },
                   table, {3, 4}) < 1e-4,
               "embedding gradient");
    }
    // Standalone losses on leaf vectors.
    {
      auto q = randvec(rng, 5);
      auto pos = randvec(rng, 5);
      auto n1 = randvec(rng, 5);
      auto n2 = randvec(rng, 5);
      for (auto mode : {DenominatorMode::kPaperLiteral, DenominatorMode::kIncludePositive}) {
        ContrastiveConfig ccfg{0.3, 2, mode};
        c.expect(grad_vs_fd(
                     [&](Graph<double>& g, Tensor<double> p) {
                       return contrastive_loss(
                           g, p, Tensor<double>::from({5}, pos),
                           {Tensor<double>::from({5}, n1), Tensor<double>::from({5}, n2)},
                           ccfg);
                     },
                     q, {5}) < 1e-4,
                 "contrastive query gradient");
        c.expect(grad_vs_fd(
                     [&](Graph<double>& g, Tensor<double> p) {
                       return contrastive_loss(
                           g, Tensor<double>::from({5}, q), Tensor<double>::from({5}, pos),
                           {p, Tensor<double>::from({5}, n2)}, ccfg);
                     },
                     n1, {5}) < 1e-4,
                 "contrastive negative gradient");
      }
      auto logits = randvec(rng, 6);
      c.expect(grad_vs_fd(
                   [&](Graph<double>& g, Tensor<double> p) {
                     return dense_finetune_loss(g, p, {0.5, 0.0, 1.0, 0.2, 0.0, 0.3});
                   },
                   logits, {6}) < 1e-4,
               "dense loss gradient");
    }
  }

  // Full model path, including split-and-pool, against FD on whole
  // parameter tensors. A fresh model per seed.
  Corpus corpus = tiny_corpus();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Model<double> m(tiny_model_cfg(corpus), seed);
    const char* pname = std::array<const char*, 4>{
        "enc0.txt.cross.wq", "common.txt.w", "dec0.self.wv", "mlm.t.w"}[seed % 4];
    Tensor<double>& p = m.param(pname);
    std::vector<double> x0 = p.data();
    p.zero_grad();
    Graph<double> g;
    auto loss = full_objective(g, m, corpus);
    g.backward(loss);
    std::vector<double> analytic = p.grad();
    auto fd = finite_difference<double>(
        [&](const std::vector<double>& x) {
          p.data() = x;
          Graph<double> gf(false);
          return full_objective(gf, m, corpus).item();
        },
        // Wider step than the primitive checks: through ~40 ops the
        // round-off term of central differences at h=1e-5 exceeds the
        // 1e-6-magnitude gradients this path produces.
        x0, 1e-4);
    p.data() = x0;
    double worst = 0;
    for (std::size_t i = 0; i < x0.size(); ++i)
      worst = std::max(worst, rel_err(analytic[i], fd[i]));
    c.expect(worst < 1e-4, std::string("full objective gradient through ") + pname);
  }
  return c;
}

// ---------------------------------------------------------------- criterion 2

Check criterion_loss_oracles() {
  Check c;
  auto close = [&](double got, double want, const std::string& what) {
    c.expect(std::fabs(got - want) < 1e-10, what + ": got " + std::to_string(got) +
                                                ", want " + std::to_string(want));
  };
  Graph<double> g;
  auto ex = Tensor<double>::from({2}, {1.0, 0.0});
  auto ey = Tensor<double>::from({2}, {0.0, 1.0});

  // Positive at cos 1, two negatives at cos 0, tau 1.
  ContrastiveConfig lit{1.0, 2, DenominatorMode::kPaperLiteral};
  close(contrastive_loss(g, ex, ex, {ey, ey}, lit).item(), std::log(2.0) - 1.0,
        "paper-literal worked value ln2 - 1 = -0.30685");
  ContrastiveConfig inc{1.0, 2, DenominatorMode::kIncludePositive};
  close(contrastive_loss(g, ex, ex, {ey, ey}, inc).item(),
        std::log(std::exp(1.0) + 2.0) - 1.0,
        "include-positive worked value ln((e+2)/e) = 0.55144");
  ContrastiveConfig half{0.5, 4, DenominatorMode::kPaperLiteral};
  close(contrastive_loss(g, ex, ex, {ey, ey, ey, ey}, half).item(), std::log(4.0) - 2.0,
        "tau 0.5, b=4 worked value ln4 - 4/2");

  // General contrastive oracle on arbitrary cosines, both modes.
  Rng rng(99);
  for (int rep = 0; rep < 10; ++rep) {
    auto q = Tensor<double>::from({4}, randvec(rng, 4));
    auto pos = Tensor<double>::from({4}, randvec(rng, 4));
    auto n1 = Tensor<double>::from({4}, randvec(rng, 4));
    auto n2 = Tensor<double>::from({4}, randvec(rng, 4));
    auto cosv = [&](const Tensor<double>& a, const Tensor<double>& b) {
      double d = 0, na = 0, nb = 0;
      for (std::size_t i = 0; i < 4; ++i) {
        d += a.data()[i] * b.data()[i];
        na += a.data()[i] * a.data()[i];
        nb += b.data()[i] * b.data()[i];
      }
      return d / (std::sqrt(na) * std::sqrt(nb));
    };
    double tau = 0.1;
    double sp = cosv(q, pos) / tau, s1 = cosv(q, n1) / tau, s2 = cosv(q, n2) / tau;
    ContrastiveConfig cl{tau, 2, DenominatorMode::kPaperLiteral};
    close(contrastive_loss(g, q, pos, {n1, n2}, cl).item(),
          std::log(std::exp(s1) + std::exp(s2)) - sp, "paper-literal oracle");
    ContrastiveConfig ci{tau, 2, DenominatorMode::kIncludePositive};
    close(contrastive_loss(g, q, pos, {n1, n2}, ci).item(),
          std::log(std::exp(sp) + std::exp(s1) + std::exp(s2)) - sp,
          "include-positive oracle");
  }

  // MLM: uniform logits give ln V; zero-recon against a unit target gives
  // mean squared error 1/3 over d=3.
  {
    MaskingPlan plan;
    plan.text_positions = {1};
    plan.original_ids = {0};
    MlmOutput<double> out;
    out.text_logits = Tensor<double>::zeros({1, 2});
    ImageFeatures f;
    f.n_regions = 1;
    f.d_img = 3;
    f.data = {0, 0, 0};
    close(mlm_loss(g, out, plan, f).total.item(), std::log(2.0), "mlm ln2");
    out.text_logits = Tensor<double>::zeros({1, 7});
    close(mlm_loss(g, out, plan, f).total.item(), std::log(7.0), "mlm ln7");
    plan.region_indices = {0};
    out.region_recon = Tensor<double>::zeros({1, 3});
    f.data = {1, 0, 0};
    close(mlm_loss(g, out, plan, f).total.item(), std::log(7.0) + 1.0 / 3.0,
          "mlm text+region 1:1 sum");
  }
  // NSP.
  close(nsp_loss(g, Tensor<double>::scalar(0.5), 1).item(), std::log(2.0), "nsp ln2 (y=1)");
  close(nsp_loss(g, Tensor<double>::scalar(0.5), 0).item(), std::log(2.0), "nsp ln2 (y=0)");
  c.expect(nsp_loss(g, Tensor<double>::scalar(1.0), 1).item() == 0.0, "nsp exact zero");
  close(nsp_loss(g, Tensor<double>::scalar(0.75), 0).item(), std::log(4.0), "nsp ln4");

  // Generative: uniform logits give ln V regardless of length.
  for (std::size_t len : {1, 3}) {
    DecoderOutput<double> dec;
    dec.logits = Tensor<double>::zeros({len, 9});
    std::vector<int> targets(len, 2);
    close(generative_loss(g, dec, targets).item(), std::log(9.0), "generative lnV");
  }
  {
    DecoderOutput<double> dec;
    dec.logits = Tensor<double>::from({2, 2}, {std::log(1.0), std::log(1.0),  // ln2 row
                                               std::log(3.0), std::log(1.0)});
    close(generative_loss(g, dec, {0, 1}).item(), (std::log(2.0) + std::log(4.0)) / 2.0,
          "generative (ln2+ln4)/2");
  }

  // Combined: 1.0 + 0.5 + 0.05*1.0 + 1.5 + 1.0 = 4.05.
  {
    LossComponents<double> comps;
    comps.mlm = Tensor<double>::scalar(1.0);
    comps.nsp = Tensor<double>::scalar(0.5);
    comps.gen = Tensor<double>::scalar(1.0);
    comps.ac = Tensor<double>::scalar(1.5);
    comps.cc = Tensor<double>::scalar(1.0);
    close(combined_loss(g, comps, LossWeights{}).item(), 4.05, "combined 4.05");
  }

  // Dense: zero logits with one-hot relevance give ln N.
  close(dense_finetune_loss(g, Tensor<double>::zeros({10}),
                            {1, 0, 0, 0, 0, 0, 0, 0, 0, 0})
            .item(),
        std::log(10.0), "dense ln10");
  close(dense_finetune_loss(g, Tensor<double>::zeros({4}), {0, 1, 0, 0}).item(),
        std::log(4.0), "dense ln4");
  {
    auto logits = Tensor<double>::from({3}, {0.2, -0.4, 1.1});
    std::vector<double> rel{0.5, 0.0, 1.5};
    double lse = std::log(std::exp(0.2) + std::exp(-0.4) + std::exp(1.1));
    double dot = (0.2 * 0.25 + -0.4 * 0.0 + 1.1 * 0.75);
    close(dense_finetune_loss(g, logits, rel).item(), lse - dot, "dense general oracle");
  }
  return c;
}

// ---------------------------------------------------------------- criterion 3

Check criterion_metrics() {
  Check c;
  Rng rng(2024);
  std::vector<RankingInstance> insts;
  double o_r1 = 0, o_r5 = 0, o_r10 = 0, o_mrr = 0, o_mean = 0, o_ndcg = 0;
  std::size_t o_ndcg_count = 0;
  for (int i = 0; i < 1000; ++i) {
    RankingInstance inst;
    inst.scores = randvec(rng, 100);
    inst.gt_index = rng.uniform_index(100);
    if (i % 2 == 0) {
      std::vector<double> rel(100, 0.0);
      rel[inst.gt_index] = 1.0;
      for (int k = 0; k < 5; ++k) rel[rng.uniform_index(100)] = rng.uniform();
      rel[inst.gt_index] = 1.0;
      inst.relevance = rel;
    }

    // Brute-force oracle: explicit sort by (-score, index).
    std::vector<std::size_t> order(100);
    for (std::size_t k = 0; k < 100; ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (inst.scores[a] != inst.scores[b]) return inst.scores[a] > inst.scores[b];
      return a < b;
    });
    std::size_t rank = 0;
    for (std::size_t k = 0; k < 100; ++k)
      if (order[k] == inst.gt_index) rank = k + 1;
    o_r1 += rank <= 1;
    o_r5 += rank <= 5;
    o_r10 += rank <= 10;
    o_mrr += 1.0 / static_cast<double>(rank);
    o_mean += static_cast<double>(rank);
    if (inst.relevance) {
      const auto& rel = *inst.relevance;
      std::size_t K = 0;
      for (double r : rel) K += r > 0;
      double dcg = 0;
      for (std::size_t k = 0; k < K; ++k)
        dcg += rel[order[k]] / std::log2(static_cast<double>(k) + 2.0);
      std::vector<double> sorted_rel = rel;
      std::sort(sorted_rel.begin(), sorted_rel.end(), std::greater<double>());
      double idcg = 0;
      for (std::size_t k = 0; k < K; ++k)
        idcg += sorted_rel[k] / std::log2(static_cast<double>(k) + 2.0);
      o_ndcg += dcg / idcg;
      ++o_ndcg_count;
    }
    insts.push_back(std::move(inst));
  }
  MetricsReport rep = compute_metrics(insts);
  c.expect(std::fabs(rep.r1 - o_r1 / 1000) <= 1e-12, "R@1 oracle");
  c.expect(std::fabs(rep.r5 - o_r5 / 1000) <= 1e-12, "R@5 oracle");
  c.expect(std::fabs(rep.r10 - o_r10 / 1000) <= 1e-12, "R@10 oracle");
  c.expect(std::fabs(rep.mrr - o_mrr / 1000) <= 1e-12, "MRR oracle");
  c.expect(std::fabs(rep.mean_rank - o_mean / 1000) <= 1e-12, "mean rank oracle");
  c.expect(rep.ndcg_count == o_ndcg_count, "NDCG instance count");
  c.expect(std::fabs(rep.ndcg - o_ndcg / static_cast<double>(o_ndcg_count)) <= 1e-12,
           "NDCG oracle");

  // Worked example: rel (1.0, 0.5, 0), predicted order B, A, C.
  RankingInstance w;
  w.scores = {0.5, 0.9, 0.1};
  w.gt_index = 0;
  w.relevance = std::vector<double>{1.0, 0.5, 0.0};
  double l3 = std::log2(3.0);
  double expected = (0.5 + 1.0 / l3) / (1.0 + 0.5 / l3);
  c.expect(std::fabs(ndcg(w) - expected) <= 1e-12, "NDCG worked example exact form");
  c.expect(std::fabs(ndcg(w) - 0.85972) <= 5e-6, "NDCG worked example 0.85972");
  return c;
}

// ---------------------------------------------------------------- criterion 4

Check criterion_structure() {
  Check c;
  Corpus corpus = tiny_corpus();
  ModelConfig mcfg = tiny_model_cfg(corpus);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Model<double> m(mcfg, seed + 1);
    Rng rng(seed * 31 + 7);

    // Decoder causality: gradients from row p never reach later inputs.
    {
      EncodedPair pair = encode_pair(corpus, corpus.dialogs[0], 1, 32);
      Graph<double> g;
      auto enc = m.encode(g, pair.gen_tokens, pair.segment_ids, corpus.features[0]);
      auto cs = m.project_common_space(g, enc);
      auto dec = m.decode(g, cs, {Vocab::kMask, 12, 8, 9});
      std::size_t p = 1;
      auto row = g.slice_rows(dec.logits, p, 1);
      g.backward(g.mean_all(row));
      const auto& eg = dec.embedded.grad();
      std::size_t width = dec.embedded.dim(1);
      bool future_zero = true, past_nonzero = false;
      for (std::size_t r = 0; r < dec.embedded.dim(0); ++r)
        for (std::size_t j = 0; j < width; ++j) {
          double v = eg[r * width + j];
          if (r > p && v != 0.0) future_zero = false;
          if (r <= p && v != 0.0) past_nonzero = true;
        }
      c.expect(future_zero, "decoder causality: future gradient exactly zero");
      c.expect(past_nonzero, "decoder causality: past gradient flows");
    }

    // Answer blindness: the generative encoder pass cannot depend on which
    // gt answer will be scored (same-length answers swap bitwise-equal).
    {
      Corpus alt = corpus;
      alt.dialogs[0].rounds[0].gt_answer = {"no"};  // "yes" -> "no", same length
      EncodedPair a = encode_generative(corpus, corpus.dialogs[0], 0, GenMode::kTrain, 32);
      EncodedPair b = encode_generative(alt, alt.dialogs[0], 0, GenMode::kTrain, 32);
      c.expect(a.gen_tokens == b.gen_tokens, "answer blindness: identical masked inputs");
      Graph<double> g;
      auto ea = m.encode(g, a.gen_tokens, a.segment_ids, corpus.features[0]);
      auto eb = m.encode(g, b.gen_tokens, b.segment_ids, corpus.features[0]);
      c.expect(ea.text_hidden.data() == eb.text_hidden.data(),
               "answer blindness: bitwise-equal encoder states");
    }

    // Padding invariance: a [PAD] tail changes nothing, bit for bit.
    {
      EncodedPair pair = encode_pair(corpus, corpus.dialogs[0], 0, 32);
      std::vector<int> padded = pair.disc_tokens;
      std::vector<int> segs = pair.segment_ids;
      for (int k = 0; k < 4; ++k) {
        padded.push_back(Vocab::kPad);
        segs.push_back(0);
      }
      Graph<double> g;
      auto plain = m.encode(g, pair.disc_tokens, pair.segment_ids, corpus.features[0]);
      auto tail = m.encode(g, padded, segs, corpus.features[0]);
      std::size_t s = pair.disc_tokens.size(), h = mcfg.hidden_size;
      bool same = true;
      for (std::size_t i = 0; i < s * h; ++i)
        same = same && plain.text_hidden.data()[i] == tail.text_hidden.data()[i];
      c.expect(same, "padding invariance: text states bitwise equal");
      c.expect(plain.visual_hidden.data() == tail.visual_hidden.data(),
               "padding invariance: visual states bitwise equal");
    }

    // Cosine-scale invariance of both contrastive losses.
    {
      Graph<double> g;
      auto q = Tensor<double>::from({6}, randvec(rng, 6));
      auto pos = Tensor<double>::from({6}, randvec(rng, 6));
      auto n1 = Tensor<double>::from({6}, randvec(rng, 6));
      auto n2 = Tensor<double>::from({6}, randvec(rng, 6));
      auto scaled = [&](const Tensor<double>& t, double f) {
        std::vector<double> v = t.data();
        for (auto& x : v) x *= f;
        return Tensor<double>::from({6}, std::move(v));
      };
      for (auto mode :
           {DenominatorMode::kPaperLiteral, DenominatorMode::kIncludePositive}) {
        ContrastiveConfig ccfg{0.2, 2, mode};
        double base = contrastive_loss(g, q, pos, {n1, n2}, ccfg).item();
        double resc = contrastive_loss(g, scaled(q, 2.5), scaled(pos, 0.3),
                                       {scaled(n1, 7.0), scaled(n2, 0.04)}, ccfg)
                          .item();
        c.expect(std::fabs(base - resc) <= 1e-12, "cosine-scale invariance");
      }
    }

    // Negative-set exclusion rules.
    {
      std::vector<AnchorInfo> batch(4);
      for (auto& a : batch) {
        a.candidates.resize(8);
        for (auto& id : a.candidates) id = static_cast<int>(rng.uniform_index(30));
        a.gt_index = rng.uniform_index(8);
        std::vector<double> rel(8, 0.0);
        rel[a.gt_index] = 1.0;
        rel[(a.gt_index + 1) % 8] = 0.5;
        a.dense_relevance = rel;
      }
      for (bool dense : {false, true}) {
        auto sets = build_negative_sets(batch, seed, 3, dense);
        for (std::size_t i = 0; i < sets.size(); ++i) {
          for (auto [si, ck] : sets[i].answer_negatives) {
            c.expect(!(si == i && ck == batch[i].gt_index),
                     "answer negatives exclude the anchor's gt");
            if (dense && si == i)
              c.expect((*batch[i].dense_relevance)[ck] == 0.0,
                       "dense filter excludes relevant candidates");
          }
          for (std::size_t si : sets[i].context_negatives)
            c.expect(si != i, "context negatives exclude the anchor's slot");
        }
      }
    }
  }
  return c;
}

// ------------------------------------------------------- criteria 5 and 7

struct OverfitResult {
  Corpus corpus;
  ModelConfig mcfg;
  std::vector<StepLog> logs;
  std::string ckpt;
};

SyntheticConfig overfit_synth() {
  SyntheticConfig s;
  s.seed = 21;
  s.n_images = 4;
  s.rounds_per_dialog = 2;  // 8 rounds: the fixed batch
  s.n_candidates = 8;
  s.n_regions = 9;
  s.d_img = 32;
  return s;
}

TrainConfig overfit_train() {
  TrainConfig t;
  t.batch_size = 8;
  t.total_steps = 500;
  t.warmup_steps = 50;
  t.peak_lr = 2e-3;
  t.n_negatives = 2;
  t.alpha = 1.0;  // the 0.05 default under-trains the decoder within 500 steps
  return t;
}

const OverfitResult& overfit_run() {
  static OverfitResult r = [] {
    OverfitResult res;
    res.corpus = generate_synthetic_corpus(overfit_synth());
    ModelConfig m;
    m.hidden_size = 64;
    m.n_encoder_layers = 2;
    m.n_decoder_layers = 2;
    m.n_heads = 4;
    m.max_seq_len = 64;
    m.vocab_size = res.corpus.vocab.size();
    m.d_img = 32;
    m.n_regions = 9;
    m.dropout = 0.0;
    m.common_space_dim = 64;
    m.ffn_mult = 4;
    m.max_answer_len = 4;
    res.mcfg = m;
    Trainer<float> tr(res.corpus, m, overfit_train());
    res.logs = tr.run();
    res.ckpt = (std::filesystem::temp_directory_path() /
                ("utc_accept_overfit_" + std::to_string(::getpid()) + ".ckpt"))
                   .string();
    tr.save(res.ckpt);
    return res;
  }();
  return r;
}

Check criterion_overfit() {
  Check c;
  const OverfitResult& r = overfit_run();
  Checkpoint ck = read_checkpoint(r.ckpt);
  Model<float> m(r.mcfg, 0);
  for (auto& [name, p] : m.parameters()) load_record_into(ck.records.at(name), p, name);

  std::size_t hits = 0, rounds = 0, exact = 0;
  for (const Dialog& d : r.corpus.dialogs)
    for (std::size_t t = 0; t < d.rounds.size(); ++t) {
      ++rounds;
      RankingInstance inst;
      inst.scores = rank_discriminative(m, r.corpus, d, t).scores;
      inst.gt_index = d.rounds[t].gt_index;
      hits += rank_of_gt(inst) == 1;
      Words gen = generate_answer(m, r.corpus, d, t);
      exact += gen == d.rounds[t].gt_answer;
    }
  double drop = 1.0 - r.logs.back().total / r.logs[9].total;
  c.expect(rounds == 8, "fixed batch holds 8 rounds");
  c.expect(hits == rounds, "discriminative R@1 = 1.0 on the training batch (" +
                               std::to_string(hits) + "/8)");
  c.expect(exact >= 7, "greedy generation reproduces >= 7/8 gt answers (" +
                           std::to_string(exact) + "/8)");
  c.expect(drop >= 0.9, "combined loss drops >= 90% from its step-10 value (got " +
                            std::to_string(drop * 100) + "%)");
  return c;
}

Check criterion_dense_finetune() {
  Check c;
  const OverfitResult& r = overfit_run();

  // Fresh rounds from the same generator (the vocabulary is fixed): the
  // memorized batch sits at NDCG 1.0, leaving no headroom to measure.
  SyntheticConfig s = overfit_synth();
  s.seed = 22;
  s.n_images = 8;
  Corpus ft_set = generate_synthetic_corpus(s);

  auto eval_metrics = [&](Model<float>& m) {
    std::vector<RankingInstance> insts;
    for (const Dialog& d : ft_set.dialogs)
      for (std::size_t t = 0; t < d.rounds.size(); ++t) {
        RankingInstance inst;
        inst.scores = rank_discriminative(m, ft_set, d, t).scores;
        inst.gt_index = d.rounds[t].gt_index;
        inst.relevance = d.rounds[t].dense_relevance;
        insts.push_back(std::move(inst));
      }
    return compute_metrics(insts);
  };

  TrainConfig ft = overfit_train();
  ft.total_steps = 100;
  ft.warmup_steps = 10;
  ft.peak_lr = 5e-4;
  ft.dense_finetune = true;
  Trainer<float> tr(ft_set, r.mcfg, ft);
  tr.load_params_only(r.ckpt);
  MetricsReport before = eval_metrics(tr.model());
  tr.run();
  MetricsReport after = eval_metrics(tr.model());
  c.expect(after.ndcg > before.ndcg,
           "NDCG strictly increases (before " + std::to_string(before.ndcg) + ", after " +
               std::to_string(after.ndcg) + ")");
  return c;
}

// ---------------------------------------------------------------- criterion 6

Check criterion_ablation_trend() {
  Check c;
  SyntheticConfig s;
  s.seed = 4242;
  s.n_images = 2000;
  s.rounds_per_dialog = 1;
  s.n_candidates = 8;
  s.n_regions = 4;
  s.d_img = 16;
  Corpus corpus = generate_synthetic_corpus(s);

  ModelConfig m;
  m.hidden_size = 16;
  m.n_encoder_layers = 1;
  m.n_decoder_layers = 1;
  m.n_heads = 2;
  m.max_seq_len = 48;
  m.vocab_size = corpus.vocab.size();
  m.d_img = 16;
  m.n_regions = 4;
  m.dropout = 0.0;
  m.common_space_dim = 16;
  m.ffn_mult = 2;
  m.max_answer_len = 4;

  auto r1_pair = [&](const std::string& mode, std::uint64_t seed) {
    TrainConfig t;
    t.batch_size = 8;
    t.total_steps = 600;
    t.warmup_steps = 60;
    t.peak_lr = 2e-3;
    t.n_negatives = 2;
    // Desk-scale calibration: full generative weight, and a soft enough
    // temperature that the alignment terms guide rather than dominate the
    // language-modeling objective. Identical settings across all modes.
    t.alpha = 1.0;
    t.temperature = 1.0;
    t.ablation_mode = mode;
    t.seed = seed;
    Trainer<float> tr(corpus, m, t);
    tr.run();
    std::vector<RankingInstance> disc, gen;
    for (const Dialog& d : corpus.dialogs)
      for (std::size_t rt = 0; rt < d.rounds.size(); ++rt) {
        RankingInstance id_, ig;
        id_.scores = rank_discriminative(tr.model(), corpus, d, rt).scores;
        ig.scores = score_candidates_loglik(tr.generative_model(), corpus, d, rt).scores;
        id_.gt_index = ig.gt_index = d.rounds[rt].gt_index;
        disc.push_back(std::move(id_));
        gen.push_back(std::move(ig));
      }
    return std::make_pair(compute_metrics(disc).r1, compute_metrics(gen).r1);
  };

  std::map<std::string, std::pair<double, double>> mean;
  for (const char* mode : {"individual", "elementary", "full"}) {
    double d = 0, gn = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto [dr, gr] = r1_pair(mode, seed);
      d += dr;
      gn += gr;
    }
    mean[mode] = {d / 5, gn / 5};
  }
  auto [ind_d, ind_g] = mean["individual"];
  auto [ele_d, ele_g] = mean["elementary"];
  auto [ful_d, ful_g] = mean["full"];
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "disc R@1 ind/ele/full = %.4f/%.4f/%.4f, gen R@1 = %.4f/%.4f/%.4f", ind_d,
                ele_d, ful_d, ind_g, ele_g, ful_g);
  std::string summary(buf);
  c.expect(ful_d >= ind_d + 0.01, "full beats individual on disc R@1 by >= 1pt (" + summary + ")");
  c.expect(ful_g >= ind_g + 0.01, "full beats individual on gen R@1 by >= 1pt (" + summary + ")");
  bool between_d = ele_d >= ind_d && ele_d <= ful_d;
  bool between_g = ele_g >= ind_g && ele_g <= ful_g;
  c.expect(between_d || between_g,
           "elementary lies between on at least one R@1 (" + summary + ")");
  if (c.ok) c.detail = summary;
  return c;
}

// ---------------------------------------------------------------- criterion 8

Check criterion_determinism() {
  Check c;
  auto root = std::filesystem::temp_directory_path() /
              ("utc_accept_det_" + std::to_string(::getpid()));
  std::filesystem::remove_all(root);
  std::filesystem::create_directories(root);

  GendataArgs gd;
  gd.seed = 3;
  gd.images = 4;
  gd.rounds = 2;
  gd.candidates = 8;
  gd.regions = 3;
  gd.d_img = 8;
  gd.out = (root / "data").string();
  cmd_gendata(gd);

  {
    std::ofstream os(root / "cfg.json");
    os << R"({"schema_version":1,
      "model":{"hidden_size":8,"n_encoder_layers":1,"n_decoder_layers":1,"n_heads":2,
               "max_seq_len":64,"d_img":8,"n_regions":3,"dropout":0.1,
               "common_space_dim":8,"ffn_mult":2,"max_answer_len":4},
      "train":{"batch_size":4,"total_steps":8,"warmup_steps":2,"peak_lr":0.001,
               "n_negatives":2}})";
  }
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  for (const char* run : {"a", "b"}) {
    TrainArgs tr;
    tr.config = (root / "cfg.json").string();
    tr.data = (root / "data").string();
    tr.out = (root / (std::string(run) + ".ckpt")).string();
    cmd_train(tr);
  }
  c.expect(slurp(root / "a.ckpt") == slurp(root / "b.ckpt"),
           "checkpoints byte-identical");
  c.expect(slurp(root / "a.ckpt.log.csv") == slurp(root / "b.ckpt.log.csv"),
           "logs byte-identical");
  std::filesystem::remove_all(root);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  bool fast = false;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--fast") {
      fast = true;
    } else if (arg == "--criterion" && i + 1 < argc) {
      selected.insert(std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: acceptance [--fast] [--criterion N]...\n");
      return 1;
    }
  }
  if (selected.empty()) {
    if (fast)
      selected = {1, 2, 3, 4};
    else
      selected = {1, 2, 3, 4, 5, 6, 7, 8};
  }

  struct Entry {
    int id;
    const char* name;
    std::function<Check()> run;
  };
  const std::vector<Entry> entries = {
      {1, "gradient fidelity", criterion_gradients},
      {2, "loss oracles", criterion_loss_oracles},
      {3, "metric oracle equivalence", criterion_metrics},
      {4, "structural invariants", criterion_structure},
      {5, "overfit check", criterion_overfit},
      {6, "ablation trend", criterion_ablation_trend},
      {7, "dense finetuning behavior", criterion_dense_finetune},
      {8, "determinism", criterion_determinism},
  };

  bool all_ok = true;
  for (const auto& e : entries) {
    if (!selected.count(e.id)) continue;
    auto t0 = std::chrono::steady_clock::now();
    Check c;
    try {
      c = e.run();
    } catch (const std::exception& ex) {
      c.ok = false;
      c.detail = std::string("exception: ") + ex.what();
    }
    double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d (%s): %s [%d checks, %.1fs]%s%s\n", e.id, e.name,
                c.ok ? "PASS" : "FAIL", c.checks, secs, c.detail.empty() ? "" : " — ",
                c.detail.c_str());
    std::fflush(stdout);
    all_ok = all_ok && c.ok;
  }
  return all_ok ? 0 : 1;
}
