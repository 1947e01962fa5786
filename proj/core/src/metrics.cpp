#include "biounet/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "biounet/errors.hpp"

namespace biounet::metrics {

double continuous_dice(std::span<const float> truth, std::span<const float> prediction) {
  if (truth.size() != prediction.size()) throw DimensionError("continuous_dice: mask sizes differ");
  double sum_ab = 0, sum_a = 0, sum_b = 0, sum_a_sign_b = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double a = truth[i] > 0.5f ? 1.0 : 0.0;
    const double b = prediction[i];
    sum_ab += a * b;
    sum_a += a;
    sum_b += b;
    if (b > 0.0) sum_a_sign_b += a;
  }
  if (sum_a == 0.0) return sum_b == 0.0 ? 1.0 : 0.0;
  const double c = sum_a_sign_b > 0.0 ? sum_ab / sum_a_sign_b : 1.0;
  const double denom = c * sum_a + sum_b;
  return denom > 0.0 ? 2.0 * sum_ab / denom : 0.0;
}

double binary_dice(std::span<const float> truth, std::span<const float> prediction) {
  if (truth.size() != prediction.size()) throw DimensionError("binary_dice: mask sizes differ");
  double inter = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool ta = truth[i] > 0.5f;
    const bool pb = prediction[i] > 0.5f;
    inter += (ta && pb) ? 1 : 0;
    a += ta ? 1 : 0;
    b += pb ? 1 : 0;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * inter / (a + b);
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 1) {
      pos += 1;
      rank_sum += rank[i];
    } else if (labels[i] == 0) {
      neg += 1;
    } else {
      throw ContractError("auc: labels must be 0 or 1");
    }
  }
  if (pos == 0 || neg == 0) throw ContractError("auc: undefined for a single-class label set");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

ClassificationMetrics classification_metrics(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("classification_metrics: length mismatch");
  ClassificationMetrics m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int predicted = scores[i] >= 0.5 ? 1 : 0;
    if (predicted == labels[i]) ++correct;
  }
  m.accuracy = scores.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(scores.size());
  try {
    m.auc = auc(scores, labels);
  } catch (const ContractError& e) {
    m.auc_error = e.what();
  }
  return m;
}

}  // namespace biounet::metrics
