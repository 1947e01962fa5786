#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "biounet/cam.hpp"
#include "biounet/checkpoint.hpp"
#include "biounet/config.hpp"
#include "biounet/dataset.hpp"

namespace biounet::evaluation {

enum class LocalizationMethod { bio_unet, grad_cam, grad_cam_pp, layer_cam };
const char* to_string(LocalizationMethod method);
LocalizationMethod parse_localization_method(const std::string& text);
inline constexpr std::array<LocalizationMethod, 4> kAllMethods{LocalizationMethod::bio_unet, LocalizationMethod::grad_cam,
                                                               LocalizationMethod::grad_cam_pp,
                                                               LocalizationMethod::layer_cam};

/// A trained checkpoint ready for inference: the model, its input
/// normalization and the head that drives each attribute's heatmaps.
class Explainer {
 public:
  explicit Explainer(const Checkpoint& checkpoint);

  /// Model input for raw [0, 1] planar RGB images of side `size`.
  Tensor<float> inputs(const std::vector<const std::vector<float>*>& raw_images, std::size_t size) const;
  /// Inputs for dataset samples (normalized values are used as they are).
  Tensor<float> inputs(const data::Dataset& dataset, const std::vector<std::size_t>& indices) const;

  std::size_t head_for(std::size_t attribute) const;
  CamMethod stack_method() const noexcept { return stack_method_; }

  /// Twelve per-block maps from the checkpoint's own encoder.
  std::vector<cam::HeatmapStack> stacks(const Tensor<float>& inputs, std::size_t attribute, CamMethod method);
  /// f_Seg soft masks (N entries of H*W) from stacks built with the
  /// training-time CAM method.
  std::vector<std::vector<float>> segment(const Tensor<float>& inputs, std::size_t attribute);
  std::vector<std::vector<float>> segment(const std::vector<cam::HeatmapStack>& stacks);
  /// Classifier probabilities, N rows of classifier_width.
  std::vector<std::vector<double>> probabilities(const Tensor<float>& inputs);

  nn::BioUNet<float>& model() noexcept { return model_; }
  const data::NormalizationStats& stats() const noexcept { return stats_; }
  std::uint64_t checkpoint_hash() const noexcept { return hash_; }

 private:
  nn::BioUNet<float> model_;
  data::NormalizationStats stats_;
  MultitaskMode mode_ = MultitaskMode::per_attribute;
  std::optional<std::size_t> trained_attribute_;
  CamMethod stack_method_ = CamMethod::grad_cam;
  std::uint64_t hash_ = 0;
};

struct SampleScore {
  std::string id;
  double cdc = 0.0;
  bool degenerate = false;  // CAM map without contrast (scored as all zeros)

  nlohmann::json to_json() const;
};

struct LocalizationResult {
  std::size_t attribute = 0;
  LocalizationMethod method = LocalizationMethod::bio_unet;
  data::Split split = data::Split::test;
  bool empty = true;    // no sample with a nonempty ground-truth mask
  double mean_cdc = 0;  // NaN when empty
  std::vector<SampleScore> samples;

  nlohmann::json to_json() const;
};

/// Soft masks (H*W each) for a batch of dataset indices; may flag samples
/// whose prediction is degenerate.
using MaskPredictor =
    std::function<std::vector<std::vector<float>>(const std::vector<std::size_t>& indices, std::vector<bool>& degenerate)>;

/// Scores `predict` against the ground truth of the samples of `split`
/// whose mask for `attribute` is nonempty.
LocalizationResult score_localization(const data::Dataset& dataset, data::Split split, std::size_t attribute,
                                      LocalizationMethod method, const MaskPredictor& predict);

/// Mean continuous Dice over the samples of `split` whose ground-truth mask
/// for `attribute` is nonempty. CAM methods score the final-block heatmap;
/// bio_unet scores the f_Seg output.
LocalizationResult evaluate_localization(const Checkpoint& checkpoint, const data::Dataset& dataset,
                                         data::Split split, std::size_t attribute, LocalizationMethod method);
LocalizationResult evaluate_localization(Explainer& explainer, const data::Dataset& dataset, data::Split split,
                                         std::size_t attribute, LocalizationMethod method);

struct HeadScore {
  std::string name;
  double accuracy = 0.0;
  std::optional<double> auc;
};

/// Accuracy and AUC of every classifier head on `split`.
std::vector<HeadScore> evaluate_classification(const Checkpoint& checkpoint, const data::Dataset& dataset,
                                               data::Split split);

}  // namespace biounet::evaluation
