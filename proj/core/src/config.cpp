#include "biounet/config.hpp"

#include <fstream>
#include <set>

#include "biounet/errors.hpp"

namespace biounet {

using nlohmann::json;

const char* to_string(MultitaskMode mode) {
  switch (mode) {
    case MultitaskMode::per_attribute:
      return "per_attribute";
    case MultitaskMode::two_task:
      return "two_task";
    case MultitaskMode::five_task:
      return "five_task";
    case MultitaskMode::six_task:
      return "six_task";
  }
  return "?";
}

const char* to_string(CamMethod method) {
  switch (method) {
    case CamMethod::grad_cam:
      return "grad_cam";
    case CamMethod::grad_cam_pp:
      return "grad_cam_pp";
    case CamMethod::layer_cam:
      return "layer_cam";
  }
  return "?";
}

MultitaskMode parse_multitask_mode(const std::string& text) {
  for (auto m : {MultitaskMode::per_attribute, MultitaskMode::two_task, MultitaskMode::five_task,
                 MultitaskMode::six_task})
    if (text == to_string(m)) return m;
  throw ConfigError("train.multitask_mode", "unknown mode '" + text + "'");
}

CamMethod parse_cam_method(const std::string& text) {
  for (auto m : {CamMethod::grad_cam, CamMethod::grad_cam_pp, CamMethod::layer_cam})
    if (text == to_string(m)) return m;
  throw ConfigError("train.cam_method", "unknown CAM method '" + text + "'");
}

std::size_t head_width(MultitaskMode mode) {
  switch (mode) {
    case MultitaskMode::per_attribute:
      return 1;
    case MultitaskMode::two_task:
      return 2;
    case MultitaskMode::five_task:
      return 5;
    case MultitaskMode::six_task:
      return 6;
  }
  return 1;
}

namespace {

// Reads typed members of one JSON object and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_, "expected an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(key(it.key()), "unknown key");
  }

  template <typename V>
  void get(const char* name, V& out) {
    seen_.insert(name);
    auto it = j_.find(name);
    if (it == j_.end()) return;
    try {
      out = it->template get<V>();
    } catch (const json::exception&) {
      throw ConfigError(key(name), "wrong type");
    }
  }

  template <typename V, std::size_t N>
  void get_array(const char* name, std::array<V, N>& out) {
    seen_.insert(name);
    auto it = j_.find(name);
    if (it == j_.end()) return;
    if (!it->is_array() || it->size() != N) throw ConfigError(key(name), "expected " + std::to_string(N) + " values");
    try {
      for (std::size_t i = 0; i < N; ++i) out[i] = (*it)[i].template get<V>();
    } catch (const json::exception&) {
      throw ConfigError(key(name), "wrong type");
    }
  }

  const json* child(const char* name) {
    seen_.insert(name);
    auto it = j_.find(name);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string key(const std::string& name) const { return path_.empty() ? name : path_ + "." + name; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const nn::ModelConfig& c) {
  return json{{"image_size", c.image_size},
              {"in_channels", c.encoder.in_channels},
              {"stage_widths", c.encoder.stage_widths},
              {"expansion", c.encoder.expansion},
              {"decoder_widths", c.decoder.widths},
              {"stack_channels", c.decoder.stack_channels},
              {"classifier_width", c.classifier_width},
              {"projection_dim", c.projection_dim}};
}

nn::ModelConfig model_config_from_json(const json& j, const std::string& path) {
  nn::ModelConfig c;
  Reader r(j, path);
  r.get("image_size", c.image_size);
  r.get("in_channels", c.encoder.in_channels);
  r.get_array("stage_widths", c.encoder.stage_widths);
  r.get("expansion", c.encoder.expansion);
  r.get_array("decoder_widths", c.decoder.widths);
  r.get("stack_channels", c.decoder.stack_channels);
  r.get("classifier_width", c.classifier_width);
  r.get("projection_dim", c.projection_dim);
  return c;
}

json to_json(const RunConfig& c) {
  const auto& o = c.optim;
  const auto& t = c.train;
  const auto& a = c.augment;
  return json{
      {"schema_version", RunConfig::kSchemaVersion},
      {"seed", c.seed},
      {"model", to_json(c.model)},
      {"optim",
       {{"lr", o.lr},
        {"weight_decay", o.weight_decay},
        {"beta1", o.beta1},
        {"beta2", o.beta2},
        {"eps", o.eps},
        {"grad_clip", o.grad_clip}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_clr", t.batch_clr},
        {"batch_cls", t.batch_cls},
        {"batch_seg", t.batch_seg},
        {"tau", t.tau},
        {"repeat_k", t.repeat_k},
        {"multitask_mode", to_string(t.multitask_mode)},
        {"enable_clr", t.enable_clr},
        {"enable_seg", t.enable_seg},
        {"clr_steps_per_epoch", t.clr_steps_per_epoch},
        {"cls_batches_per_epoch", t.cls_batches_per_epoch},
        {"seg_batches_per_epoch", t.seg_batches_per_epoch},
        {"patience", t.patience},
        {"cam_method", to_string(t.cam_method)},
        {"audit_groups", t.audit_groups}}},
      {"augment",
       {{"rotation", a.rotation},
        {"max_rotation_deg", a.max_rotation_deg},
        {"scaling", a.scaling},
        {"min_scale", a.min_scale},
        {"max_scale", a.max_scale},
        {"cropping", a.cropping},
        {"min_crop", a.min_crop},
        {"brightness", a.brightness},
        {"brightness_delta", a.brightness_delta},
        {"contrast", a.contrast},
        {"contrast_delta", a.contrast_delta},
        {"saturation", a.saturation},
        {"saturation_delta", a.saturation_delta},
        {"hflip", a.hflip},
        {"vflip", a.vflip}}},
      {"data", {{"labeled", c.data.labeled}, {"unlabeled", c.data.unlabeled}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  {
    Reader r(j, "");
    int version = RunConfig::kSchemaVersion;
    r.get("schema_version", version);
    if (version != RunConfig::kSchemaVersion) {
      throw ConfigError("schema_version", "unsupported version " + std::to_string(version));
    }
    r.get("seed", c.seed);
    if (const json* m = r.child("model")) c.model = model_config_from_json(*m, "model");
    if (const json* o = r.child("optim")) {
      Reader ro(*o, "optim");
      ro.get("lr", c.optim.lr);
      ro.get("weight_decay", c.optim.weight_decay);
      ro.get("beta1", c.optim.beta1);
      ro.get("beta2", c.optim.beta2);
      ro.get("eps", c.optim.eps);
      ro.get("grad_clip", c.optim.grad_clip);
    }
    if (const json* t = r.child("train")) {
      Reader rt(*t, "train");
      auto& tc = c.train;
      rt.get("epochs", tc.epochs);
      rt.get("batch_clr", tc.batch_clr);
      rt.get("batch_cls", tc.batch_cls);
      rt.get("batch_seg", tc.batch_seg);
      rt.get("tau", tc.tau);
      rt.get("repeat_k", tc.repeat_k);
      std::string mode = to_string(tc.multitask_mode);
      rt.get("multitask_mode", mode);
      tc.multitask_mode = parse_multitask_mode(mode);
      rt.get("enable_clr", tc.enable_clr);
      rt.get("enable_seg", tc.enable_seg);
      rt.get("clr_steps_per_epoch", tc.clr_steps_per_epoch);
      rt.get("cls_batches_per_epoch", tc.cls_batches_per_epoch);
      rt.get("seg_batches_per_epoch", tc.seg_batches_per_epoch);
      rt.get("patience", tc.patience);
      std::string cam = to_string(tc.cam_method);
      rt.get("cam_method", cam);
      tc.cam_method = parse_cam_method(cam);
      rt.get("audit_groups", tc.audit_groups);
    }
    if (const json* a = r.child("augment")) {
      Reader ra(*a, "augment");
      auto& ac = c.augment;
      ra.get("rotation", ac.rotation);
      ra.get("max_rotation_deg", ac.max_rotation_deg);
      ra.get("scaling", ac.scaling);
      ra.get("min_scale", ac.min_scale);
      ra.get("max_scale", ac.max_scale);
      ra.get("cropping", ac.cropping);
      ra.get("min_crop", ac.min_crop);
      ra.get("brightness", ac.brightness);
      ra.get("brightness_delta", ac.brightness_delta);
      ra.get("contrast", ac.contrast);
      ra.get("contrast_delta", ac.contrast_delta);
      ra.get("saturation", ac.saturation);
      ra.get("saturation_delta", ac.saturation_delta);
      ra.get("hflip", ac.hflip);
      ra.get("vflip", ac.vflip);
    }
    if (const json* d = r.child("data")) {
      Reader rd(*d, "data");
      rd.get("labeled", c.data.labeled);
      rd.get("unlabeled", c.data.unlabeled);
    }
  }
  const bool width_given = j.contains("model") && j["model"].is_object() && j["model"].contains("classifier_width");
  if (!width_given) c.model.classifier_width = head_width(c.train.multitask_mode);
  validate(c);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

void validate(const RunConfig& c) {
  auto positive = [](double v, const char* key) {
    if (!(v > 0.0)) throw ConfigError(key, "must be positive");
  };
  positive(c.optim.lr, "optim.lr");
  if (!(c.optim.weight_decay >= 0.0)) throw ConfigError("optim.weight_decay", "must be nonnegative");
  if (!(c.optim.beta1 >= 0.0 && c.optim.beta1 < 1.0)) throw ConfigError("optim.beta1", "must lie in [0, 1)");
  if (!(c.optim.beta2 >= 0.0 && c.optim.beta2 < 1.0)) throw ConfigError("optim.beta2", "must lie in [0, 1)");
  positive(c.optim.eps, "optim.eps");
  if (!(c.optim.grad_clip >= 0.0)) throw ConfigError("optim.grad_clip", "must be nonnegative");
  positive(c.train.tau, "train.tau");
  if (c.train.epochs == 0) throw ConfigError("train.epochs", "must be at least 1");
  if (c.train.repeat_k == 0) throw ConfigError("train.repeat_k", "must be at least 1");
  if (c.train.batch_clr < 2 || c.train.batch_clr % 2 != 0) {
    throw ConfigError("train.batch_clr", "must be an even view count of at least 2");
  }
  if (c.train.batch_cls == 0) throw ConfigError("train.batch_cls", "must be at least 1");
  if (c.train.batch_seg == 0) throw ConfigError("train.batch_seg", "must be at least 1");
  if (c.model.classifier_width != head_width(c.train.multitask_mode)) {
    throw ConfigError("model.classifier_width", "is " + std::to_string(c.model.classifier_width) + " but mode " +
                                                    to_string(c.train.multitask_mode) + " needs " +
                                                    std::to_string(head_width(c.train.multitask_mode)));
  }
  const std::size_t factor = std::size_t{1} << nn::EncoderConfig::kStages;
  if (c.model.image_size < 32 || c.model.image_size % factor != 0) {
    throw ConfigError("model.image_size", "must be a multiple of 16 and at least 32");
  }
  for (std::size_t i = 0; i < c.model.encoder.stage_widths.size(); ++i) {
    if (c.model.encoder.stage_widths[i] == 0) {
      throw ConfigError("model.stage_widths", "widths must be positive");
    }
  }
  if (c.model.encoder.expansion == 0) throw ConfigError("model.expansion", "must be positive");
  if (c.model.projection_dim == 0) throw ConfigError("model.projection_dim", "must be positive");
  if (c.model.decoder.stack_channels != nn::EncoderConfig::kBlockCount) {
    throw ConfigError("model.stack_channels", "must equal the encoder block count (12)");
  }
  const auto& a = c.augment;
  if (!(a.min_scale > 0.0 && a.min_scale <= a.max_scale)) throw ConfigError("augment.min_scale", "invalid range");
  if (!(a.min_crop > 0.0 && a.min_crop <= 1.0)) throw ConfigError("augment.min_crop", "must lie in (0, 1]");
}

}  // namespace biounet
