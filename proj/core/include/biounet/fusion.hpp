#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "biounet/checkpoint.hpp"
#include "biounet/dataset.hpp"

namespace biounet::fusion {

struct LogisticOptions {
  double l2 = 1e-2;          // penalty (l2 / 2) * |w|^2 on the weights, not the bias
  double tolerance = 1e-8;   // on the max-norm of the gradient
  std::size_t max_iterations = 200;
};

/// Binary logistic regression on z-scored features, fitted by damped
/// Newton iterations on the mean cross-entropy plus the L2 penalty.
struct LogisticModel {
  std::vector<double> mean;   // feature centring
  std::vector<double> scale;  // feature scaling (1 for constant features)
  std::vector<double> weights;
  double bias = 0.0;
  double l2 = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  double gradient_norm = 0.0;

  std::size_t inputs() const noexcept { return weights.size(); }
  double predict(std::span<const double> features) const;
  std::vector<double> predict(const std::vector<std::vector<double>>& rows) const;

  nlohmann::json to_json() const;
  static LogisticModel from_json(const nlohmann::json& j);
};

LogisticModel fit_logistic(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels,
                           const LogisticOptions& options = {});

/// Global-average-pooled final encoder features of the given samples, with
/// the encoder in eval mode. Images are normalized with `stats` unless the
/// dataset already holds normalized values.
std::vector<std::vector<double>> pooled_features(const Checkpoint& checkpoint, const data::Dataset& dataset,
                                                 const std::vector<std::size_t>& indices);

inline const std::vector<double> kDefaultL2Grid{1e-3, 1e-2, 1e-1, 1.0};

struct FusionOptions {
  std::vector<double> l2_grid = kDefaultL2Grid;
  double tolerance = 1e-8;
};

struct SplitScore {
  double accuracy = 0.0;
  std::optional<double> auc;

  nlohmann::json to_json() const;
};

/// Model selection over the L2 grid: the value with the highest validation
/// AUC wins (ties go to the stronger penalty).
struct SelectedModel {
  LogisticModel model;
  std::vector<double> validation_auc;  // per grid entry; NaN when undefined
  SplitScore train, validation, test;

  nlohmann::json to_json() const;
};

struct FusionResult {
  SelectedModel fused;                          // over the concatenated features
  std::vector<SelectedModel> single;            // one per encoder
  std::vector<std::uint64_t> checkpoint_hashes;
  std::size_t feature_width = 0;                // per encoder

  nlohmann::json to_json() const;
};

/// Concatenates the pooled features of the five attribute encoders, fits
/// the diagnosis model on the training split, selects L2 on validation and
/// reports train, validation and test scores. The same procedure on each
/// encoder alone gives the single-encoder references. Throws
/// CheckpointError when the encoders differ in architecture.
FusionResult fuse_and_diagnose(const std::vector<Checkpoint>& checkpoints, const data::Dataset& dataset,
                               const FusionOptions& options = {});

/// Same as fuse_and_diagnose on precomputed per-encoder features (one entry
/// per encoder, rows indexed like dataset.samples).
FusionResult fuse_features(const std::vector<std::vector<std::vector<double>>>& features,
                           const data::Dataset& dataset, const FusionOptions& options = {});

}  // namespace biounet::fusion
