#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "biounet/augment.hpp"
#include "biounet/cam.hpp"
#include "biounet/checkpoint.hpp"
#include "biounet/config.hpp"
#include "biounet/dataset.hpp"
#include "biounet/models.hpp"

namespace biounet::pipeline {

using Model = nn::BioUNet<float>;

enum class StepKind { clr, cls, e3_refresh, seg, eval };
const char* to_string(StepKind kind);

/// Classifier targets of one sample under a multitask mode.
std::vector<float> head_targets(const data::Sample& sample, std::size_t attribute, MultitaskMode mode);
/// Head whose logit drives the heatmaps for `attribute`.
std::size_t cam_head(std::size_t attribute, MultitaskMode mode);
/// Names of the classifier outputs, e.g. {"pigment_network", "diagnosis"}.
std::vector<std::string> head_names(std::size_t attribute, MultitaskMode mode);

extern const char* const kSelectionDefinition;

struct StepRecord {
  std::size_t attribute = 0;
  std::size_t epoch = 0;
  StepKind kind = StepKind::cls;
  std::size_t index = 0;   // batch index within the phase
  std::size_t repeat = 0;  // seg repeat, 0..K-1
  std::size_t batch = 0;   // samples (clr: views)
  double loss = 0.0;       // NaN for refresh and eval
  std::vector<nn::ParamGroup> changed;  // groups whose content hash changed
  std::uint64_t e3_hash = 0;            // refresh and seg: checkpoint behind the stacks
  std::string note;

  nlohmann::json to_json() const;
};

struct EpochRecord {
  std::size_t attribute = 0;
  std::size_t epoch = 0;
  double clr_loss = 0.0;  // means over the epoch's steps; NaN when none ran
  double cls_loss = 0.0;
  double seg_loss = 0.0;
  std::size_t clr_steps = 0, cls_steps = 0, seg_steps = 0;
  double val_loss = 0.0;
  std::vector<std::optional<double>> val_auc;  // per head
  std::vector<double> val_accuracy;            // per head
  double selection_metric = 0.0;
  bool best = false;
  std::uint64_t e3_hash = 0;

  nlohmann::json to_json() const;
};

/// Algorithm 1 for one attribute as a resumable state machine. Each call to
/// step() executes one unit of work: a contrastive step, a classification
/// step, the E3 refresh, one segmentation update, or the end-of-epoch
/// evaluation. Per epoch the order is
///   clr x n  ->  cls x m  ->  E3 refresh  ->  (build stacks, seg x K) per batch  ->  eval.
/// All randomness is derived from (seed, attribute, epoch, step), so the
/// position in this sequence plus the model state determine the rest of the
/// run.
class Trainer {
 public:
  Trainer(const RunConfig& config, const data::Dataset& labeled, const data::UnlabeledDataset* unlabeled,
          std::size_t attribute, std::unique_ptr<Model> initial = nullptr);
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// Runs one unit; false once training has finished.
  bool step();
  void run();
  bool finished() const noexcept;

  // Single steps on explicit batches (the state machine uses these too).
  double clr_step(const std::vector<std::size_t>& unlabeled_indices, std::uint64_t augment_key);
  double cls_step(const std::vector<std::size_t>& labeled_indices);
  double seg_step(const Tensor<float>& stacks, const std::vector<float>& masks);
  /// Loads E3 from the best checkpoint so far, or from a snapshot of the
  /// current model before the first evaluation.
  void refresh_e3();
  /// Heatmap stacks of labeled samples from the current E3.
  Tensor<float> build_stacks(const std::vector<std::size_t>& labeled_indices);

  EpochRecord evaluate_epoch();

  const RunConfig& config() const noexcept { return config_; }
  std::size_t attribute() const noexcept { return attribute_; }
  Model& model() noexcept { return *model_; }
  std::unique_ptr<Model> release_model();
  const std::vector<StepRecord>& steps() const noexcept { return steps_; }
  const std::vector<EpochRecord>& epochs() const noexcept { return epochs_; }
  const std::optional<Checkpoint>& best() const noexcept { return best_; }
  std::uint64_t e3_hash() const noexcept;
  std::size_t current_epoch() const noexcept;

  /// Everything needed to continue bit-exactly: model, optimizer state,
  /// position, best checkpoint, E3 source and the records so far.
  Checkpoint save_state() const;
  void load_state(const Checkpoint& state);

  /// Normalized model input for labeled samples.
  Tensor<float> labeled_batch(const std::vector<std::size_t>& indices) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  RunConfig config_;
  std::size_t attribute_;
  std::unique_ptr<Model> model_;
  std::vector<StepRecord> steps_;
  std::vector<EpochRecord> epochs_;
  std::optional<Checkpoint> best_;
};

struct AttributeResult {
  std::size_t attribute = 0;
  Checkpoint best;
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains attribute `attribute` to completion and returns its best
/// checkpoint with the run records.
AttributeResult train_attribute(const RunConfig& config, const data::Dataset& labeled,
                                const data::UnlabeledDataset* unlabeled, std::size_t attribute,
                                const EpochCallback& on_epoch = {});

/// All five attributes. Per-attribute mode trains five independent models;
/// multitask modes continue one shared model from attribute to attribute.
std::vector<AttributeResult> train_all(const RunConfig& config, const data::Dataset& labeled,
                                       const data::UnlabeledDataset* unlabeled, const EpochCallback& on_epoch = {});

}  // namespace biounet::pipeline
