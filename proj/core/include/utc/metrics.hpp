#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace utc {

// One ranking problem: candidate scores, the ground-truth index and optional
// per-candidate relevance degrees in [0, 1].
struct RankingInstance {
  std::vector<double> scores;
  std::size_t gt_index = 0;
  std::optional<std::vector<double>> relevance;
};

struct MetricsReport {
  double r1 = 0, r5 = 0, r10 = 0;
  double mrr = 0;
  double mean_rank = 0;
  double ndcg = 0;
  std::size_t ndcg_count = 0;  // instances that carried relevance
};

// 1-based rank of the ground-truth candidate under descending score.
// Ties break by candidate index ascending.
std::size_t rank_of_gt(const RankingInstance& inst);

double recall_at_k(const std::vector<RankingInstance>& instances, std::size_t k);
double mrr(const std::vector<RankingInstance>& instances);
double mean_rank(const std::vector<RankingInstance>& instances);

// NDCG truncated at K = number of candidates with
// relevance > 0; DCG discount log2(rank + 1); same tie rule as rank_of_gt.
double ndcg(const RankingInstance& inst);

MetricsReport compute_metrics(const std::vector<RankingInstance>& instances);

std::string metrics_to_json(const MetricsReport& report);

}  // namespace utc
