#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"

#include "biounet/models.hpp"

namespace biounet {

enum class MultitaskMode { per_attribute, two_task, five_task, six_task };
enum class CamMethod { grad_cam, grad_cam_pp, layer_cam };

const char* to_string(MultitaskMode mode);
const char* to_string(CamMethod method);
MultitaskMode parse_multitask_mode(const std::string& text);
CamMethod parse_cam_method(const std::string& text);

/// Classifier output width of a multitask mode: 1, 2, 5 or 6.
std::size_t head_width(MultitaskMode mode);

struct OptimConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
};

struct AugmentConfig {
  bool rotation = true;
  double max_rotation_deg = 30.0;
  bool scaling = true;
  double min_scale = 0.85;
  double max_scale = 1.15;
  bool cropping = true;
  double min_crop = 0.75;  // side fraction of the kept window
  bool brightness = true;
  double brightness_delta = 0.25;
  bool contrast = true;
  double contrast_delta = 0.25;
  bool saturation = true;
  double saturation_delta = 0.25;
  bool hflip = true;
  bool vflip = true;
};

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_clr = 24;  // augmented views per contrastive batch (two per image)
  std::size_t batch_cls = 16;
  std::size_t batch_seg = 8;
  double tau = 0.5;
  std::size_t repeat_k = 1;
  MultitaskMode multitask_mode = MultitaskMode::per_attribute;
  bool enable_clr = true;
  bool enable_seg = true;
  std::size_t clr_steps_per_epoch = 10;
  std::size_t cls_batches_per_epoch = 0;  // 0: one full pass over the training split
  std::size_t seg_batches_per_epoch = 0;   // 0: every eligible sample
  std::size_t patience = 0;                // early stopping; 0 disables
  CamMethod cam_method = CamMethod::grad_cam;
  bool audit_groups = true;  // hash parameter groups around every step
};

struct DataConfig {
  std::string labeled;
  std::string unlabeled;
};

struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  std::uint64_t seed = 1234;
  nn::ModelConfig model;
  OptimConfig optim;
  TrainConfig train;
  AugmentConfig augment;
  DataConfig data;
};

/// Throws ConfigError naming the offending key path.
void validate(const RunConfig& config);

nlohmann::json to_json(const nn::ModelConfig& config);
nn::ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model");

nlohmann::json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys and wrong types are
/// ConfigErrors.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

}  // namespace biounet
