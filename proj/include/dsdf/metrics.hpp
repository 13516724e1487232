#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "dsdf/error.hpp"

namespace dsdf {

/// (score, label) with label 1 = fake (positive), 0 = real.
using ScoredLabel = std::pair<double, int>;

/// ROC AUC via the Mann-Whitney rank statistic: P(score_fake > score_real)
/// plus half the tie probability.
inline double auc(const std::vector<ScoredLabel>& scores) {
  std::size_t positives = 0;
  for (const auto& [s, y] : scores) {
    if (y != 0 && y != 1) throw MetricError(detail::concat("auc: label must be 0 or 1, got ", y));
    positives += std::size_t(y);
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) throw MetricError("auc needs both real and fake samples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a].first < scores[b].first; });
  double positive_rank_sum = 0;  // 1-based ranks; tied groups share the mean rank
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]].first == scores[order[i]].first) ++j;
    const double mean_rank = 0.5 * double(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (scores[order[k]].second == 1) positive_rank_sum += mean_rank;
    i = j;
  }
  const double u = positive_rank_sum - 0.5 * double(positives) * double(positives + 1);
  return u / (double(positives) * double(negatives));
}

/// Fraction of samples where (score > 0.5) matches the label.
inline double accuracy(const std::vector<ScoredLabel>& scores, double threshold = 0.5) {
  if (scores.empty()) throw MetricError("accuracy of an empty set");
  std::size_t hits = 0;
  for (const auto& [s, y] : scores) hits += (s > threshold) == (y == 1);
  return double(hits) / double(scores.size());
}

}  // namespace dsdf
