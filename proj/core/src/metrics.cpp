#include "utc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace utc {

namespace {

// Candidate indices ordered by descending score, ties by index ascending.
std::vector<std::size_t> ranking_order(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

void require_nonempty(const std::vector<RankingInstance>& instances) {
  if (instances.empty()) throw std::invalid_argument("metrics: empty instance list");
}

}  // namespace

std::size_t rank_of_gt(const RankingInstance& inst) {
  if (inst.gt_index >= inst.scores.size())
    throw std::invalid_argument("rank_of_gt: gt_index out of range");
  for (double s : inst.scores)
    if (!std::isfinite(s) && std::isnan(s))
      throw std::invalid_argument("rank_of_gt: NaN score");
  // Count candidates strictly better, plus earlier-indexed ties.
  std::size_t rank = 1;
  double gt = inst.scores[inst.gt_index];
  for (std::size_t i = 0; i < inst.scores.size(); ++i) {
    if (inst.scores[i] > gt) ++rank;
    else if (inst.scores[i] == gt && i < inst.gt_index) ++rank;
  }
  return rank;
}

double recall_at_k(const std::vector<RankingInstance>& instances, std::size_t k) {
  require_nonempty(instances);
  std::size_t hits = 0;
  for (const auto& inst : instances)
    if (rank_of_gt(inst) <= k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(instances.size());
}

double mrr(const std::vector<RankingInstance>& instances) {
  require_nonempty(instances);
  double s = 0;
  for (const auto& inst : instances) s += 1.0 / static_cast<double>(rank_of_gt(inst));
  return s / static_cast<double>(instances.size());
}

double mean_rank(const std::vector<RankingInstance>& instances) {
  require_nonempty(instances);
  double s = 0;
  for (const auto& inst : instances) s += static_cast<double>(rank_of_gt(inst));
  return s / static_cast<double>(instances.size());
}

double ndcg(const RankingInstance& inst) {
  if (!inst.relevance) throw std::invalid_argument("ndcg: relevance missing");
  const auto& rel = *inst.relevance;
  if (rel.size() != inst.scores.size())
    throw std::invalid_argument("ndcg: relevance length mismatch");
  std::size_t k = 0;
  for (double r : rel)
    if (r > 0) ++k;
  if (k == 0) throw std::invalid_argument("ndcg: all-zero relevance");

  auto order = ranking_order(inst.scores);
  double dcg = 0;
  for (std::size_t i = 0; i < k; ++i)
    dcg += rel[order[i]] / std::log2(static_cast<double>(i) + 2.0);

  std::vector<double> ideal = rel;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0;
  for (std::size_t i = 0; i < k; ++i)
    idcg += ideal[i] / std::log2(static_cast<double>(i) + 2.0);
  return dcg / idcg;
}

MetricsReport compute_metrics(const std::vector<RankingInstance>& instances) {
  require_nonempty(instances);
  MetricsReport r;
  r.r1 = recall_at_k(instances, 1);
  r.r5 = recall_at_k(instances, 5);
  r.r10 = recall_at_k(instances, 10);
  r.mrr = mrr(instances);
  r.mean_rank = mean_rank(instances);
  double nd = 0;
  std::size_t cnt = 0;
  for (const auto& inst : instances) {
    if (!inst.relevance) continue;
    bool any = false;
    for (double x : *inst.relevance) any = any || x > 0;
    if (!any) continue;
    nd += ndcg(inst);
    ++cnt;
  }
  r.ndcg = cnt ? nd / static_cast<double>(cnt) : 0.0;
  r.ndcg_count = cnt;
  return r;
}

std::string metrics_to_json(const MetricsReport& report) {
  std::ostringstream os;
  os.precision(10);
  os << "{\"r1\":" << report.r1 << ",\"r5\":" << report.r5 << ",\"r10\":" << report.r10
     << ",\"mrr\":" << report.mrr << ",\"mean\":" << report.mean_rank
     << ",\"ndcg\":" << report.ndcg << "}";
  return os.str();
}

}  // namespace utc
