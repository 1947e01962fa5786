#include "biounet/evaluation.hpp"

#include <cmath>
#include <limits>

#include "biounet/errors.hpp"
#include "biounet/metrics.hpp"
#include "biounet/trainer.hpp"

namespace biounet::evaluation {

using nlohmann::json;

namespace {
constexpr std::size_t kBatch = 16;
}

const char* to_string(LocalizationMethod method) {
  switch (method) {
    case LocalizationMethod::bio_unet:
      return "bio_unet";
    case LocalizationMethod::grad_cam:
      return "grad_cam";
    case LocalizationMethod::grad_cam_pp:
      return "grad_cam_pp";
    case LocalizationMethod::layer_cam:
      return "layer_cam";
  }
  return "?";
}

LocalizationMethod parse_localization_method(const std::string& text) {
  for (auto m : kAllMethods)
    if (text == to_string(m)) return m;
  throw ConfigError("methods", "unknown localization method '" + text + "'");
}

Explainer::Explainer(const Checkpoint& checkpoint)
    : model_(instantiate<float>(checkpoint)), hash_(content_hash(checkpoint)) {
  const json& meta = checkpoint.meta;
  try {
    if (meta.contains("normalization")) stats_ = data::NormalizationStats::from_json(meta.at("normalization"));
    if (meta.contains("multitask_mode")) mode_ = parse_multitask_mode(meta.at("multitask_mode").get<std::string>());
    if (meta.contains("cam_method")) stack_method_ = parse_cam_method(meta.at("cam_method").get<std::string>());
    if (meta.contains("attribute")) trained_attribute_ = meta.at("attribute").get<std::size_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  if (model_.classifier().width() != head_width(mode_)) {
    throw CheckpointError("checkpoint classifier width does not match its multitask mode");
  }
}

Tensor<float> Explainer::inputs(const std::vector<const std::vector<float>*>& raw_images, std::size_t size) const {
  if (!stats_.valid) throw StateError("checkpoint carries no normalization statistics");
  std::vector<std::vector<float>> copies;
  copies.reserve(raw_images.size());
  for (const auto* im : raw_images) {
    copies.push_back(*im);
    data::apply_stats(stats_, copies.back());
  }
  std::vector<const std::vector<float>*> ptrs;
  for (const auto& c : copies) ptrs.push_back(&c);
  return data::image_batch<float>(ptrs, size);
}

Tensor<float> Explainer::inputs(const data::Dataset& dataset, const std::vector<std::size_t>& indices) const {
  std::vector<const std::vector<float>*> ptrs;
  for (auto i : indices) ptrs.push_back(&dataset.samples.at(i).image);
  if (dataset.normalized) return data::image_batch<float>(ptrs, dataset.size);
  return inputs(ptrs, dataset.size);
}

std::size_t Explainer::head_for(std::size_t attribute) const {
  if (attribute >= data::kAttributeCount) throw ContractError("attribute must lie in 0..4");
  return pipeline::cam_head(attribute, mode_);
}

std::vector<cam::HeatmapStack> Explainer::stacks(const Tensor<float>& x, std::size_t attribute, CamMethod method) {
  auto out = cam::build_stacks(model_.encoder(), model_.classifier(), x, head_for(attribute), method);
  for (auto& s : out) s.source_hash = hash_;
  return out;
}

std::vector<std::vector<float>> Explainer::segment(const std::vector<cam::HeatmapStack>& stacks) {
  if (stacks.empty()) return {};
  Tape<float> tape;
  const Tensor<float> pred = model_.segment(tape, cam::to_tensor<float>(stacks), nn::NormMode::eval);
  const std::size_t P = pred.shape().plane();
  std::vector<std::vector<float>> out;
  for (std::size_t n = 0; n < pred.shape().n; ++n) out.emplace_back(pred.ptr() + n * P, pred.ptr() + (n + 1) * P);
  return out;
}

std::vector<std::vector<float>> Explainer::segment(const Tensor<float>& x, std::size_t attribute) {
  return segment(stacks(x, attribute, stack_method_));
}

std::vector<std::vector<double>> Explainer::probabilities(const Tensor<float>& x) {
  Tape<float> tape;
  const Tensor<float> p = model_.classify(tape, x, nn::NormMode::eval);
  const std::size_t K = p.shape().c;
  std::vector<std::vector<double>> out;
  for (std::size_t n = 0; n < p.shape().n; ++n) out.emplace_back(p.ptr() + n * K, p.ptr() + (n + 1) * K);
  return out;
}

json SampleScore::to_json() const { return json{{"id", id}, {"cdc", cdc}, {"degenerate", degenerate}}; }

json LocalizationResult::to_json() const {
  json s = json::array();
  for (const auto& x : samples) s.push_back(x.to_json());
  return json{{"attribute", attribute},
              {"attribute_name", data::kAttributeNames.at(attribute)},
              {"method", to_string(method)},
              {"split", data::to_string(split)},
              {"empty", empty},
              {"mean_cdc", empty ? json(nullptr) : json(mean_cdc)},
              {"samples", s}};
}

LocalizationResult score_localization(const data::Dataset& dataset, data::Split split, std::size_t attribute,
                                      LocalizationMethod method, const MaskPredictor& predict) {
  if (attribute >= data::kAttributeCount) throw ContractError("attribute must lie in 0..4");
  LocalizationResult r;
  r.attribute = attribute;
  r.method = method;
  r.split = split;
  std::vector<std::size_t> eligible;
  for (auto i : dataset.indices(split))
    if (dataset.samples[i].present(attribute)) eligible.push_back(i);
  if (eligible.empty()) {
    r.mean_cdc = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.empty = false;
  double sum = 0;
  for (std::size_t start = 0; start < eligible.size(); start += kBatch) {
    const std::vector<std::size_t> idx(eligible.begin() + static_cast<std::ptrdiff_t>(start),
                                       eligible.begin() + static_cast<std::ptrdiff_t>(std::min(eligible.size(), start + kBatch)));
    std::vector<bool> degenerate(idx.size(), false);
    const auto preds = predict(idx, degenerate);
    if (preds.size() != idx.size()) throw ContractError("mask predictor returned the wrong number of masks");
    for (std::size_t n = 0; n < idx.size(); ++n) {
      SampleScore s;
      s.id = dataset.samples[idx[n]].id;
      s.cdc = metrics::continuous_dice(dataset.samples[idx[n]].masks[attribute], preds[n]);
      s.degenerate = degenerate[n];
      sum += s.cdc;
      r.samples.push_back(std::move(s));
    }
  }
  r.mean_cdc = sum / static_cast<double>(r.samples.size());
  return r;
}

LocalizationResult evaluate_localization(Explainer& explainer, const data::Dataset& dataset, data::Split split,
                                         std::size_t attribute, LocalizationMethod method) {
  return score_localization(dataset, split, attribute, method,
                            [&](const std::vector<std::size_t>& idx, std::vector<bool>& degenerate) {
                              const Tensor<float> x = explainer.inputs(dataset, idx);
                              if (method == LocalizationMethod::bio_unet) return explainer.segment(x, attribute);
                              const CamMethod cm = method == LocalizationMethod::grad_cam      ? CamMethod::grad_cam
                                                   : method == LocalizationMethod::grad_cam_pp ? CamMethod::grad_cam_pp
                                                                                               : CamMethod::layer_cam;
                              std::vector<std::vector<float>> preds;
                              const auto stacks = explainer.stacks(x, attribute, cm);
                              for (std::size_t n = 0; n < stacks.size(); ++n) {
                                const auto last = stacks[n].last();
                                preds.emplace_back(last.begin(), last.end());
                                degenerate[n] = stacks[n].degenerate.back();
                              }
                              return preds;
                            });
}

LocalizationResult evaluate_localization(const Checkpoint& checkpoint, const data::Dataset& dataset,
                                         data::Split split, std::size_t attribute, LocalizationMethod method) {
  Explainer ex(checkpoint);
  return evaluate_localization(ex, dataset, split, attribute, method);
}

std::vector<HeadScore> evaluate_classification(const Checkpoint& checkpoint, const data::Dataset& dataset,
                                               data::Split split) {
  Explainer ex(checkpoint);
  MultitaskMode mode = MultitaskMode::per_attribute;
  std::size_t attribute = 0;
  if (checkpoint.meta.contains("multitask_mode")) {
    mode = parse_multitask_mode(checkpoint.meta.at("multitask_mode").get<std::string>());
  }
  if (checkpoint.meta.contains("attribute")) attribute = checkpoint.meta.at("attribute").get<std::size_t>();
  const auto names = pipeline::head_names(attribute, mode);
  std::vector<std::vector<double>> scores(names.size());
  std::vector<std::vector<int>> labels(names.size());
  const auto indices = dataset.indices(split);
  for (std::size_t start = 0; start < indices.size(); start += kBatch) {
    const std::vector<std::size_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                       indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), start + kBatch)));
    const auto probs = ex.probabilities(ex.inputs(dataset, idx));
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const auto t = pipeline::head_targets(dataset.samples[idx[n]], attribute, mode);
      for (std::size_t k = 0; k < names.size(); ++k) {
        scores[k].push_back(probs[n][k]);
        labels[k].push_back(t[k] == 1.0f ? 1 : 0);
      }
    }
  }
  std::vector<HeadScore> out;
  for (std::size_t k = 0; k < names.size(); ++k) {
    HeadScore h;
    h.name = names[k];
    if (!scores[k].empty()) {
      const auto cm = metrics::classification_metrics(scores[k], labels[k]);
      h.accuracy = cm.accuracy;
      h.auc = cm.auc;
    }
    out.push_back(std::move(h));
  }
  return out;
}

}  // namespace biounet::evaluation
