#include "biounet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "biounet/hash.hpp"
#include "biounet/losses.hpp"
#include "biounet/metrics.hpp"
#include "biounet/optimizer.hpp"
#include "biounet/random.hpp"

namespace biounet::pipeline {

using nlohmann::json;
using data::Split;

namespace {

constexpr std::uint64_t kModelTag = 0x6d6f64656cULL;
constexpr std::uint64_t kClrOrderTag = 0x636c726fULL;
constexpr std::uint64_t kClsOrderTag = 0x636c736fULL;
constexpr std::uint64_t kSegOrderTag = 0x7365676fULL;
constexpr std::uint64_t kAugmentTag = 0x617567ULL;
constexpr std::size_t kEvalBatch = 32;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum class Phase : int { clr = 0, cls = 1, refresh = 2, seg = 3, eval = 4, done = 5 };

double mean_or_nan(double sum, std::size_t n) { return n == 0 ? kNaN : sum / static_cast<double>(n); }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::uint64_t model_seed(std::uint64_t seed, std::size_t attribute) {
  return Rng::derive(seed, {kModelTag, static_cast<std::uint64_t>(attribute)}).next();
}

}  // namespace

const char* const kSelectionDefinition =
    "mean validation AUC over the active classifier heads (undefined AUC counts as 0.5); "
    "ties: lower validation BCE, then earlier epoch";

const char* to_string(StepKind kind) {
  switch (kind) {
    case StepKind::clr:
      return "clr";
    case StepKind::cls:
      return "cls";
    case StepKind::e3_refresh:
      return "e3_refresh";
    case StepKind::seg:
      return "seg";
    case StepKind::eval:
      return "eval";
  }
  return "?";
}

std::vector<float> head_targets(const data::Sample& s, std::size_t attribute, MultitaskMode mode) {
  const auto p = s.presence();
  auto f = [](bool b) { return b ? 1.0f : 0.0f; };
  switch (mode) {
    case MultitaskMode::per_attribute:
      return {f(p.at(attribute))};
    case MultitaskMode::two_task:
      return {f(p.at(attribute)), static_cast<float>(s.diagnosis)};
    case MultitaskMode::five_task:
      return {f(p[0]), f(p[1]), f(p[2]), f(p[3]), f(p[4])};
    case MultitaskMode::six_task:
      return {f(p[0]), f(p[1]), f(p[2]), f(p[3]), f(p[4]), static_cast<float>(s.diagnosis)};
  }
  return {};
}

std::size_t cam_head(std::size_t attribute, MultitaskMode mode) {
  return (mode == MultitaskMode::five_task || mode == MultitaskMode::six_task) ? attribute : 0;
}

std::vector<std::string> head_names(std::size_t attribute, MultitaskMode mode) {
  std::vector<std::string> names;
  switch (mode) {
    case MultitaskMode::per_attribute:
      names = {data::kAttributeNames.at(attribute)};
      break;
    case MultitaskMode::two_task:
      names = {data::kAttributeNames.at(attribute), "diagnosis"};
      break;
    case MultitaskMode::five_task:
    case MultitaskMode::six_task:
      for (auto n : data::kAttributeNames) names.emplace_back(n);
      if (mode == MultitaskMode::six_task) names.emplace_back("diagnosis");
      break;
  }
  return names;
}

json StepRecord::to_json() const {
  json changed_names = json::array();
  for (auto g : changed) changed_names.push_back(nn::group_name(g));
  return json{{"attribute", attribute}, {"epoch", epoch},     {"kind", to_string(kind)},
              {"index", index},         {"repeat", repeat},   {"batch", batch},
              {"loss", number_or_null(loss)}, {"changed", changed_names}, {"e3_hash", hex64(e3_hash)},
              {"note", note}};
}

json EpochRecord::to_json() const {
  json aucs = json::array();
  for (const auto& a : val_auc) aucs.push_back(a ? json(*a) : json(nullptr));
  return json{{"attribute", attribute},
              {"epoch", epoch},
              {"clr_loss", number_or_null(clr_loss)},
              {"cls_loss", number_or_null(cls_loss)},
              {"seg_loss", number_or_null(seg_loss)},
              {"clr_steps", clr_steps},
              {"cls_steps", cls_steps},
              {"seg_steps", seg_steps},
              {"val_loss", number_or_null(val_loss)},
              {"val_auc", aucs},
              {"val_accuracy", val_accuracy},
              {"selection_metric", selection_metric},
              {"best", best},
              {"e3_hash", hex64(e3_hash)}};
}

namespace {

EpochRecord epoch_from_json(const json& j) {
  EpochRecord r;
  auto num = [&](const char* k) { return j.at(k).is_null() ? kNaN : j.at(k).get<double>(); };
  r.attribute = j.at("attribute").get<std::size_t>();
  r.epoch = j.at("epoch").get<std::size_t>();
  r.clr_loss = num("clr_loss");
  r.cls_loss = num("cls_loss");
  r.seg_loss = num("seg_loss");
  r.clr_steps = j.at("clr_steps").get<std::size_t>();
  r.cls_steps = j.at("cls_steps").get<std::size_t>();
  r.seg_steps = j.at("seg_steps").get<std::size_t>();
  r.val_loss = num("val_loss");
  for (const auto& a : j.at("val_auc")) r.val_auc.push_back(a.is_null() ? std::nullopt : std::optional(a.get<double>()));
  r.val_accuracy = j.at("val_accuracy").get<std::vector<double>>();
  r.selection_metric = j.at("selection_metric").get<double>();
  r.best = j.at("best").get<bool>();
  r.e3_hash = std::stoull(j.at("e3_hash").get<std::string>(), nullptr, 16);
  return r;
}

StepRecord step_from_json(const json& j) {
  StepRecord r;
  r.attribute = j.at("attribute").get<std::size_t>();
  r.epoch = j.at("epoch").get<std::size_t>();
  const std::string kind = j.at("kind").get<std::string>();
  for (auto k : {StepKind::clr, StepKind::cls, StepKind::e3_refresh, StepKind::seg, StepKind::eval})
    if (kind == to_string(k)) r.kind = k;
  r.index = j.at("index").get<std::size_t>();
  r.repeat = j.at("repeat").get<std::size_t>();
  r.batch = j.at("batch").get<std::size_t>();
  r.loss = j.at("loss").is_null() ? kNaN : j.at("loss").get<double>();
  for (const auto& g : j.at("changed")) {
    const std::string name = g.get<std::string>();
    for (auto grp : nn::kAllGroups)
      if (name == nn::group_name(grp)) r.changed.push_back(grp);
  }
  r.e3_hash = std::stoull(j.at("e3_hash").get<std::string>(), nullptr, 16);
  r.note = j.at("note").get<std::string>();
  return r;
}

}  // namespace

struct Trainer::Impl {
  const data::Dataset* labeled = nullptr;
  const data::UnlabeledDataset* unlabeled = nullptr;
  data::NormalizationStats stats;
  std::vector<std::vector<float>> inputs;  // normalized labeled images
  std::vector<std::size_t> train, val, eligible;
  data::AugmentSpec t1, t2;

  // Position.
  std::size_t epoch = 0;
  Phase phase = Phase::clr;
  std::size_t index = 0;
  std::size_t repeat = 0;

  // E3 and the stacks of the current seg batch.
  std::optional<FrozenEncoder<float>> e3;
  std::optional<Checkpoint> e3_source;
  std::optional<std::pair<std::size_t, std::size_t>> cache_key;  // (epoch, batch)
  Tensor<float> cached_stacks;
  std::vector<float> cached_masks;

  // Epoch accumulators.
  double clr_sum = 0, cls_sum = 0, seg_sum = 0;
  std::size_t clr_n = 0, cls_n = 0, seg_n = 0;

  // Selection.
  double best_metric = -1, best_loss = 0;
  std::size_t since_best = 0;

  std::size_t clr_steps(const RunConfig& c) const {
    return (c.train.enable_clr && unlabeled && !unlabeled->samples.empty()) ? c.train.clr_steps_per_epoch : 0;
  }
  std::size_t cls_batches(const RunConfig& c) const {
    if (train.empty()) return 0;
    if (c.train.cls_batches_per_epoch > 0) return c.train.cls_batches_per_epoch;
    return std::max<std::size_t>(1, train.size() / c.train.batch_cls);
  }
  std::size_t seg_batches(const RunConfig& c) const {
    if (!c.train.enable_seg || eligible.empty()) return 0;
    const std::size_t all = (eligible.size() + c.train.batch_seg - 1) / c.train.batch_seg;
    return c.train.seg_batches_per_epoch > 0 ? std::min(all, c.train.seg_batches_per_epoch) : all;
  }

  // The k-th batch of an epoch's permutation of `pool`, wrapping around.
  static std::vector<std::size_t> batch_of(const std::vector<std::size_t>& pool, std::uint64_t seed,
                                           std::uint64_t tag, std::size_t attribute, std::size_t epoch,
                                           std::size_t k, std::size_t size, bool wrap) {
    std::vector<std::size_t> perm = pool;
    Rng rng = Rng::derive(seed, {tag, static_cast<std::uint64_t>(attribute), static_cast<std::uint64_t>(epoch)});
    rng.shuffle(perm);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size; ++i) {
      const std::size_t pos = k * size + i;
      if (pos >= perm.size() && !wrap) break;
      out.push_back(perm[pos % perm.size()]);
    }
    return out;
  }
};

Trainer::Trainer(const RunConfig& config, const data::Dataset& labeled, const data::UnlabeledDataset* unlabeled,
                 std::size_t attribute, std::unique_ptr<Model> initial)
    : impl_(std::make_unique<Impl>()), config_(config), attribute_(attribute) {
  validate(config_);
  if (attribute >= data::kAttributeCount) throw ConfigError("attribute", "must lie in 0..4");
  if (labeled.size != config.model.image_size) {
    throw ConfigError("model.image_size", "dataset images are " + std::to_string(labeled.size) + " pixels, config says " +
                                              std::to_string(config.model.image_size));
  }
  if (unlabeled && !unlabeled->samples.empty() && unlabeled->size != labeled.size) {
    throw ConfigError("data.unlabeled", "unlabeled images differ in size from the labeled ones");
  }
  Impl& m = *impl_;
  m.labeled = &labeled;
  m.unlabeled = unlabeled;
  m.stats = labeled.normalized ? labeled.stats : (labeled.stats.valid ? labeled.stats : data::compute_stats(labeled));
  m.inputs.reserve(labeled.samples.size());
  for (const auto& s : labeled.samples) {
    m.inputs.push_back(s.image);
    if (!labeled.normalized) data::apply_stats(m.stats, m.inputs.back());
  }
  m.train = labeled.indices(Split::train);
  m.val = labeled.indices(Split::validation);
  for (auto i : m.train)
    if (labeled.samples[i].present(attribute)) m.eligible.push_back(i);
  m.t1.ranges = m.t2.ranges = config.augment;
  m.t1.seed = Rng::derive(config.seed, {kAugmentTag, 1}).next();
  m.t2.seed = Rng::derive(config.seed, {kAugmentTag, 2}).next();

  if (initial) {
    if (!(initial->config() == config.model)) throw ConfigError("model", "initial model does not match the config");
    model_ = std::move(initial);
  } else {
    model_ = std::make_unique<Model>(config.model, model_seed(config.seed, attribute));
  }
}

Trainer::~Trainer() = default;

bool Trainer::finished() const noexcept { return impl_->phase == Phase::done; }
std::size_t Trainer::current_epoch() const noexcept { return impl_->epoch; }
std::uint64_t Trainer::e3_hash() const noexcept { return impl_->e3 ? impl_->e3->checkpoint_hash : 0; }

std::unique_ptr<Model> Trainer::release_model() { return std::move(model_); }

Tensor<float> Trainer::labeled_batch(const std::vector<std::size_t>& indices) const {
  std::vector<const std::vector<float>*> imgs;
  for (auto i : indices) imgs.push_back(&impl_->inputs.at(i));
  return data::image_batch<float>(imgs, config_.model.image_size);
}

namespace {

template <typename F>
StepRecord audited(Model& model, bool audit, F&& body) {
  std::array<std::uint64_t, 4> before{};
  if (audit)
    for (std::size_t g = 0; g < 4; ++g) before[g] = nn::group_hash(model, nn::kAllGroups[g]);
  StepRecord rec = body();
  if (audit)
    for (std::size_t g = 0; g < 4; ++g)
      if (nn::group_hash(model, nn::kAllGroups[g]) != before[g]) rec.changed.push_back(nn::kAllGroups[g]);
  return rec;
}

void require_finite(double loss, const char* what) {
  if (!std::isfinite(loss)) throw NumericError(std::string("non-finite ") + what + " loss; training diverged");
}

}  // namespace

double Trainer::clr_step(const std::vector<std::size_t>& unlabeled_indices, std::uint64_t augment_key) {
  const Impl& m = *impl_;
  if (!m.unlabeled) throw StateError("clr_step: no unlabeled dataset");
  const std::size_t S = config_.model.image_size;
  std::vector<std::vector<float>> views;
  views.reserve(2 * unlabeled_indices.size());
  for (std::size_t i = 0; i < unlabeled_indices.size(); ++i) {
    const auto& img = m.unlabeled->samples.at(unlabeled_indices[i]).image;
    auto [a, b] = data::augment_pair(img, S, m.t1, m.t2, hash_combine(augment_key, i));
    data::apply_stats(m.stats, a.image);
    data::apply_stats(m.stats, b.image);
    views.push_back(std::move(a.image));
    views.push_back(std::move(b.image));
  }
  std::vector<const std::vector<float>*> ptrs;
  for (const auto& v : views) ptrs.push_back(&v);
  Tensor<float> x = data::image_batch<float>(ptrs, S);
  model_->zero_grad();
  Tape<float> tape;
  Tensor<float> emb = model_->project(tape, x, nn::NormMode::train);
  auto loss = loss::nt_xent(tape, emb, static_cast<float>(config_.train.tau));
  require_finite(loss.item(), "contrastive");
  tape.backward(loss.value);
  auto params = model_->parameters(nn::ParamGroup::encoder);
  auto proj = model_->parameters(nn::ParamGroup::projection);
  params.insert(params.end(), proj.begin(), proj.end());
  adam_step(params, config_.optim);
  model_->zero_grad();
  return loss.item();
}

double Trainer::cls_step(const std::vector<std::size_t>& labeled_indices) {
  if (labeled_indices.empty()) throw ContractError("cls_step: empty batch");
  Tensor<float> x = labeled_batch(labeled_indices);
  std::vector<float> targets;
  for (auto i : labeled_indices) {
    auto t = head_targets(impl_->labeled->samples.at(i), attribute_, config_.train.multitask_mode);
    targets.insert(targets.end(), t.begin(), t.end());
  }
  if (targets.size() != labeled_indices.size() * model_->classifier().width()) {
    throw ConfigError("train.multitask_mode", "classifier width does not match the mode");
  }
  model_->zero_grad();
  Tape<float> tape;
  Tensor<float> probs = model_->classify(tape, x, nn::NormMode::train);
  auto loss = loss::bce(tape, probs, std::span<const float>(targets));
  require_finite(loss.item(), "classification");
  tape.backward(loss.value);
  auto params = model_->parameters(nn::ParamGroup::encoder);
  auto head = model_->parameters(nn::ParamGroup::classifier);
  params.insert(params.end(), head.begin(), head.end());
  adam_step(params, config_.optim);
  model_->zero_grad();
  return loss.item();
}

double Trainer::seg_step(const Tensor<float>& stacks, const std::vector<float>& masks) {
  model_->zero_grad();
  Tape<float> tape;
  Tensor<float> pred = model_->segment(tape, stacks, nn::NormMode::train);
  auto loss = loss::soft_dice(tape, pred, std::span<const float>(masks));
  require_finite(loss.item(), "segmentation");
  tape.backward(loss.value);
  auto params = model_->parameters(nn::ParamGroup::encoder);
  auto dec = model_->parameters(nn::ParamGroup::decoder);
  params.insert(params.end(), dec.begin(), dec.end());
  adam_step(params, config_.optim);
  model_->zero_grad();
  return loss.item();
}

void Trainer::refresh_e3() {
  Impl& m = *impl_;
  if (best_) {
    m.e3_source = *best_;
  } else {
    Checkpoint snap = capture(*model_);
    snap.seed = config_.seed;
    snap.epoch = static_cast<std::int64_t>(m.epoch);
    snap.selection_definition = "bootstrap snapshot (no evaluated checkpoint yet)";
    m.e3_source = std::move(snap);
  }
  m.e3 = clone_to_e3(model_->encoder(), *m.e3_source);
  m.cache_key.reset();
}

Tensor<float> Trainer::build_stacks(const std::vector<std::size_t>& labeled_indices) {
  Impl& m = *impl_;
  if (!m.e3) throw StateError("build_stacks: E3 has not been loaded");
  Tensor<float> x = labeled_batch(labeled_indices);
  auto stacks = cam::build_stacks(*m.e3, x, cam_head(attribute_, config_.train.multitask_mode),
                                  config_.train.cam_method);
  return cam::to_tensor<float>(stacks);
}

EpochRecord Trainer::evaluate_epoch() {
  Impl& m = *impl_;
  const auto mode = config_.train.multitask_mode;
  const std::size_t K = model_->classifier().width();
  EpochRecord rec;
  rec.attribute = attribute_;
  rec.epoch = m.epoch;
  rec.clr_loss = mean_or_nan(m.clr_sum, m.clr_n);
  rec.cls_loss = mean_or_nan(m.cls_sum, m.cls_n);
  rec.seg_loss = mean_or_nan(m.seg_sum, m.seg_n);
  rec.clr_steps = m.clr_n;
  rec.cls_steps = m.cls_n;
  rec.seg_steps = m.seg_n;
  rec.e3_hash = e3_hash();

  std::vector<std::vector<double>> scores(K);
  std::vector<std::vector<int>> labels(K);
  double loss_sum = 0;
  const double lo = loss::kProbabilityClamp;
  for (std::size_t start = 0; start < m.val.size(); start += kEvalBatch) {
    const std::vector<std::size_t> idx(m.val.begin() + static_cast<std::ptrdiff_t>(start),
                                       m.val.begin() + static_cast<std::ptrdiff_t>(std::min(m.val.size(), start + kEvalBatch)));
    Tape<float> tape;
    Tensor<float> probs = model_->classify(tape, labeled_batch(idx), nn::NormMode::eval);
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const auto t = head_targets(m.labeled->samples[idx[n]], attribute_, mode);
      for (std::size_t k = 0; k < K; ++k) {
        const double p = std::clamp(static_cast<double>(probs.ptr()[n * K + k]), lo, 1.0 - lo);
        loss_sum += t[k] == 1.0f ? -std::log(p) : -std::log(1.0 - p);
        scores[k].push_back(p);
        labels[k].push_back(t[k] == 1.0f ? 1 : 0);
      }
    }
  }
  rec.val_loss = m.val.empty() ? kNaN : loss_sum / static_cast<double>(m.val.size());
  double metric = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto cm = metrics::classification_metrics(scores[k], labels[k]);
    rec.val_auc.push_back(cm.auc);
    rec.val_accuracy.push_back(cm.accuracy);
    metric += cm.auc.value_or(0.5);
  }
  rec.selection_metric = metric / static_cast<double>(K);

  const double vloss = std::isfinite(rec.val_loss) ? rec.val_loss : std::numeric_limits<double>::infinity();
  const bool better = !best_ || rec.selection_metric > m.best_metric ||
                      (rec.selection_metric == m.best_metric && vloss < m.best_loss);
  if (better) {
    Checkpoint ck = capture(*model_);
    ck.selection_metric = rec.selection_metric;
    ck.selection_definition = kSelectionDefinition;
    ck.epoch = static_cast<std::int64_t>(m.epoch);
    ck.seed = config_.seed;
    ck.meta = json{{"attribute", attribute_},
                   {"attribute_name", data::kAttributeNames[attribute_]},
                   {"multitask_mode", to_string(mode)},
                   {"cam_head", cam_head(attribute_, mode)},
                   {"cam_method", to_string(config_.train.cam_method)},
                   {"heads", head_names(attribute_, mode)},
                   {"normalization", m.stats.to_json()},
                   {"val_loss", number_or_null(rec.val_loss)}};
    best_ = std::move(ck);
    m.best_metric = rec.selection_metric;
    m.best_loss = vloss;
    m.since_best = 0;
    rec.best = true;
  } else {
    ++m.since_best;
  }
  return rec;
}

bool Trainer::step() {
  Impl& m = *impl_;
  const auto& tc = config_.train;
  const bool audit = tc.audit_groups;
  while (true) {
    switch (m.phase) {
      case Phase::done:
        return false;

      case Phase::clr: {
        const std::size_t n = m.clr_steps(config_);
        if (m.index >= n) {
          m.phase = Phase::cls;
          m.index = 0;
          continue;
        }
        std::vector<std::size_t> pool(m.unlabeled->samples.size());
        for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
        const auto batch = Impl::batch_of(pool, config_.seed, kClrOrderTag, attribute_, m.epoch, m.index,
                                          tc.batch_clr / 2, true);
        const std::uint64_t key = Rng::derive(config_.seed, {kAugmentTag, static_cast<std::uint64_t>(attribute_),
                                                             static_cast<std::uint64_t>(m.epoch),
                                                             static_cast<std::uint64_t>(m.index)})
                                      .next();
        auto rec = audited(*model_, audit, [&] {
          StepRecord r;
          r.loss = clr_step(batch, key);
          r.batch = 2 * batch.size();
          if (batch.size() == 1) r.note = "degenerate: a single pair gives zero loss";
          return r;
        });
        rec.attribute = attribute_;
        rec.epoch = m.epoch;
        rec.kind = StepKind::clr;
        rec.index = m.index;
        steps_.push_back(rec);
        m.clr_sum += rec.loss;
        ++m.clr_n;
        ++m.index;
        return true;
      }

      case Phase::cls: {
        const std::size_t n = m.cls_batches(config_);
        if (m.index >= n) {
          m.phase = Phase::refresh;
          m.index = 0;
          continue;
        }
        const auto batch = Impl::batch_of(m.train, config_.seed, kClsOrderTag, attribute_, m.epoch, m.index,
                                          tc.batch_cls, true);
        auto rec = audited(*model_, audit, [&] {
          StepRecord r;
          r.loss = cls_step(batch);
          r.batch = batch.size();
          return r;
        });
        rec.attribute = attribute_;
        rec.epoch = m.epoch;
        rec.kind = StepKind::cls;
        rec.index = m.index;
        steps_.push_back(rec);
        m.cls_sum += rec.loss;
        ++m.cls_n;
        ++m.index;
        return true;
      }

      case Phase::refresh: {
        if (!tc.enable_seg) {
          m.phase = Phase::eval;
          continue;
        }
        auto rec = audited(*model_, audit, [&] {
          refresh_e3();
          StepRecord r;
          r.loss = kNaN;
          if (m.eligible.empty()) r.note = "no training samples with a nonempty mask; seg phase skipped";
          return r;
        });
        rec.attribute = attribute_;
        rec.epoch = m.epoch;
        rec.kind = StepKind::e3_refresh;
        rec.e3_hash = e3_hash();
        steps_.push_back(rec);
        m.phase = Phase::seg;
        m.index = 0;
        m.repeat = 0;
        return true;
      }

      case Phase::seg: {
        const std::size_t n = m.seg_batches(config_);
        if (m.index >= n) {
          m.phase = Phase::eval;
          m.index = 0;
          m.repeat = 0;
          continue;
        }
        const auto key = std::make_pair(m.epoch, m.index);
        if (!m.cache_key || *m.cache_key != key) {
          const auto batch = Impl::batch_of(m.eligible, config_.seed, kSegOrderTag, attribute_, m.epoch, m.index,
                                            tc.batch_seg, false);
          m.cached_stacks = build_stacks(batch);
          m.cached_masks.clear();
          for (auto i : batch) {
            const auto& mask = m.labeled->samples[i].masks[attribute_];
            m.cached_masks.insert(m.cached_masks.end(), mask.begin(), mask.end());
          }
          m.cache_key = key;
        }
        auto rec = audited(*model_, audit, [&] {
          StepRecord r;
          r.loss = seg_step(m.cached_stacks, m.cached_masks);
          r.batch = m.cached_stacks.shape().n;
          return r;
        });
        rec.attribute = attribute_;
        rec.epoch = m.epoch;
        rec.kind = StepKind::seg;
        rec.index = m.index;
        rec.repeat = m.repeat;
        rec.e3_hash = e3_hash();
        steps_.push_back(rec);
        m.seg_sum += rec.loss;
        ++m.seg_n;
        if (++m.repeat >= tc.repeat_k) {
          m.repeat = 0;
          ++m.index;
        }
        return true;
      }

      case Phase::eval: {
        EpochRecord er;
        auto rec = audited(*model_, audit, [&] {
          er = evaluate_epoch();
          StepRecord r;
          r.loss = er.val_loss;
          r.batch = m.val.size();
          return r;
        });
        rec.attribute = attribute_;
        rec.epoch = m.epoch;
        rec.kind = StepKind::eval;
        rec.e3_hash = e3_hash();
        steps_.push_back(rec);
        epochs_.push_back(er);
        m.clr_sum = m.cls_sum = m.seg_sum = 0;
        m.clr_n = m.cls_n = m.seg_n = 0;
        ++m.epoch;
        m.index = 0;
        m.repeat = 0;
        const bool stop_early = tc.patience > 0 && m.since_best >= tc.patience;
        m.phase = (m.epoch >= tc.epochs || stop_early) ? Phase::done : Phase::clr;
        return true;
      }
    }
  }
}

void Trainer::run() {
  while (step()) {
  }
}

Checkpoint Trainer::save_state() const {
  const Impl& m = *impl_;
  Checkpoint ck = capture(*model_);
  ck.seed = config_.seed;
  ck.epoch = static_cast<std::int64_t>(m.epoch);
  ck.selection_definition = "trainer state";
  json steps = json::array(), epochs = json::array();
  for (const auto& s : steps_) steps.push_back(s.to_json());
  for (const auto& e : epochs_) epochs.push_back(e.to_json());
  ck.meta = json{{"kind", "trainer_state"},
                 {"config", to_json(config_)},
                 {"attribute", attribute_},
                 {"cursor", {{"epoch", m.epoch}, {"phase", static_cast<int>(m.phase)}, {"index", m.index}, {"repeat", m.repeat}}},
                 {"accumulators",
                  {{"clr_sum", m.clr_sum},
                   {"cls_sum", m.cls_sum},
                   {"seg_sum", m.seg_sum},
                   {"clr_n", m.clr_n},
                   {"cls_n", m.cls_n},
                   {"seg_n", m.seg_n}}},
                 {"selection", {{"best_metric", m.best_metric}, {"best_loss", m.best_loss}, {"since_best", m.since_best}}},
                 {"steps", steps},
                 {"epochs", epochs}};
  if (best_) ck.blobs["best"] = serialize(*best_);
  if (m.e3_source) ck.blobs["e3_source"] = serialize(*m.e3_source);
  return ck;
}

void Trainer::load_state(const Checkpoint& state) {
  Impl& m = *impl_;
  try {
    if (state.meta.at("kind").get<std::string>() != "trainer_state") throw CheckpointError("not a trainer state");
    if (state.meta.at("attribute").get<std::size_t>() != attribute_) {
      throw CheckpointError("trainer state belongs to another attribute");
    }
    if (state.meta.at("config") != to_json(config_)) throw CheckpointError("trainer state was saved under another config");
    restore(state, *model_);
    const auto& c = state.meta.at("cursor");
    m.epoch = c.at("epoch").get<std::size_t>();
    m.phase = static_cast<Phase>(c.at("phase").get<int>());
    m.index = c.at("index").get<std::size_t>();
    m.repeat = c.at("repeat").get<std::size_t>();
    const auto& a = state.meta.at("accumulators");
    m.clr_sum = a.at("clr_sum").get<double>();
    m.cls_sum = a.at("cls_sum").get<double>();
    m.seg_sum = a.at("seg_sum").get<double>();
    m.clr_n = a.at("clr_n").get<std::size_t>();
    m.cls_n = a.at("cls_n").get<std::size_t>();
    m.seg_n = a.at("seg_n").get<std::size_t>();
    const auto& s = state.meta.at("selection");
    m.best_metric = s.at("best_metric").get<double>();
    m.best_loss = s.at("best_loss").get<double>();
    m.since_best = s.at("since_best").get<std::size_t>();
    steps_.clear();
    epochs_.clear();
    for (const auto& j : state.meta.at("steps")) steps_.push_back(step_from_json(j));
    for (const auto& j : state.meta.at("epochs")) epochs_.push_back(epoch_from_json(j));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed trainer state: ") + e.what());
  }
  auto it = state.blobs.find("best");
  best_ = it == state.blobs.end() ? std::nullopt : std::optional(deserialize(it->second));
  auto e3 = state.blobs.find("e3_source");
  m.e3.reset();
  m.e3_source.reset();
  if (e3 != state.blobs.end()) {
    m.e3_source = deserialize(e3->second);
    m.e3 = clone_to_e3(model_->encoder(), *m.e3_source);
  }
  m.cache_key.reset();
}

AttributeResult train_attribute(const RunConfig& config, const data::Dataset& labeled,
                                const data::UnlabeledDataset* unlabeled, std::size_t attribute,
                                const EpochCallback& on_epoch) {
  Trainer trainer(config, labeled, unlabeled, attribute);
  std::size_t reported = 0;
  while (trainer.step()) {
    while (on_epoch && reported < trainer.epochs().size()) on_epoch(trainer.epochs()[reported++]);
  }
  return {attribute, *trainer.best(), trainer.epochs(), trainer.steps()};
}

std::vector<AttributeResult> train_all(const RunConfig& config, const data::Dataset& labeled,
                                       const data::UnlabeledDataset* unlabeled, const EpochCallback& on_epoch) {
  std::vector<AttributeResult> results;
  if (config.train.multitask_mode == MultitaskMode::per_attribute) {
    for (std::size_t j = 0; j < data::kAttributeCount; ++j)
      results.push_back(train_attribute(config, labeled, unlabeled, j, on_epoch));
    return results;
  }
  std::unique_ptr<Model> shared;
  for (std::size_t j = 0; j < data::kAttributeCount; ++j) {
    Trainer trainer(config, labeled, unlabeled, j, std::move(shared));
    std::size_t reported = 0;
    while (trainer.step()) {
      while (on_epoch && reported < trainer.epochs().size()) on_epoch(trainer.epochs()[reported++]);
    }
    results.push_back({j, *trainer.best(), trainer.epochs(), trainer.steps()});
    shared = trainer.release_model();
  }
  return results;
}

}  // namespace biounet::pipeline
