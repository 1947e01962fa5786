#pragma once

#include <optional>
#include <span>
#include <string>

namespace biounet::metrics {

/// Continuous Dice between a binary ground truth A and a soft prediction B
/// in [0, 1]:
///   cDC = 2 sum(a b) / (c sum(a) + sum(b)),
///   c   = sum(a b) / sum(a sign(b))   if A and supp(B) intersect, else 1.
/// Both masks empty gives 1; an empty A with a nonempty B gives 0.
double continuous_dice(std::span<const float> truth, std::span<const float> prediction);

/// Classic Dice on binary masks (values > 0.5 count as foreground).
double binary_dice(std::span<const float> truth, std::span<const float> prediction);

/// Area under the ROC curve via the Mann-Whitney statistic with average
/// ranks for ties. Throws ContractError if the labels hold a single class.
double auc(std::span<const double> scores, std::span<const int> labels);

struct ClassificationMetrics {
  double accuracy = 0.0;
  std::optional<double> auc;  // empty when only one class is present
  std::string auc_error;
};

/// Accuracy at threshold 0.5 plus AUC.
ClassificationMetrics classification_metrics(std::span<const double> scores, std::span<const int> labels);

}  // namespace biounet::metrics
