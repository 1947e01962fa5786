#include "biounet/fusion.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include "biounet/errors.hpp"
#include "biounet/metrics.hpp"

namespace biounet::fusion {

using nlohmann::json;

namespace {

constexpr std::size_t kFeatureBatch = 32;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

double LogisticModel::predict(std::span<const double> x) const {
  if (x.size() != weights.size()) throw DimensionError("logistic model: feature width mismatch");
  double z = bias;
  for (std::size_t i = 0; i < x.size(); ++i) z += weights[i] * (x[i] - mean[i]) / scale[i];
  return sigmoid(z);
}

std::vector<double> LogisticModel::predict(const std::vector<std::vector<double>>& rows) const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(predict(r));
  return out;
}

json LogisticModel::to_json() const {
  return json{{"mean", mean},
              {"scale", scale},
              {"weights", weights},
              {"bias", bias},
              {"l2", l2},
              {"iterations", iterations},
              {"converged", converged},
              {"gradient_norm", gradient_norm}};
}

LogisticModel LogisticModel::from_json(const json& j) {
  LogisticModel m;
  m.mean = j.at("mean").get<std::vector<double>>();
  m.scale = j.at("scale").get<std::vector<double>>();
  m.weights = j.at("weights").get<std::vector<double>>();
  m.bias = j.at("bias").get<double>();
  m.l2 = j.at("l2").get<double>();
  m.iterations = j.at("iterations").get<std::size_t>();
  m.converged = j.at("converged").get<bool>();
  m.gradient_norm = j.at("gradient_norm").get<double>();
  if (m.mean.size() != m.weights.size() || m.scale.size() != m.weights.size()) {
    throw DimensionError("logistic model: inconsistent widths");
  }
  return m;
}

LogisticModel fit_logistic(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels,
                           const LogisticOptions& options) {
  if (rows.empty() || rows.size() != labels.size()) throw ContractError("fit_logistic: need one label per row");
  if (options.l2 < 0) throw ContractError("fit_logistic: l2 must be non-negative");
  const std::size_t n = rows.size(), d = rows[0].size();
  LogisticModel m;
  m.l2 = options.l2;
  m.mean.assign(d, 0.0);
  m.scale.assign(d, 1.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw DimensionError("fit_logistic: ragged feature rows");
    for (std::size_t i = 0; i < d; ++i) m.mean[i] += r[i];
  }
  for (auto& v : m.mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < d; ++i) {
    double var = 0;
    for (const auto& r : rows) var += (r[i] - m.mean[i]) * (r[i] - m.mean[i]);
    var /= static_cast<double>(n);
    if (var > 1e-24) m.scale[i] = std::sqrt(var);
  }

  // Design matrix with a trailing bias column.
  Eigen::MatrixXd X(n, d + 1);
  Eigen::VectorXd y(n);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < d; ++i) X(s, i) = (rows[s][i] - m.mean[i]) / m.scale[i];
    X(s, d) = 1.0;
    y(s) = labels[s] ? 1.0 : 0.0;
  }
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d + 1, options.l2);
  penalty(d) = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);

  auto objective = [&](const Eigen::VectorXd& theta) {
    const Eigen::VectorXd z = X * theta;
    double f = 0;
    for (std::size_t s = 0; s < n; ++s) f += softplus(z(s)) - y(s) * z(s);
    return f * inv_n + 0.5 * theta.cwiseProduct(penalty).dot(theta);
  };

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  double f = objective(theta);
  for (m.iterations = 0; m.iterations < options.max_iterations; ++m.iterations) {
    const Eigen::VectorXd z = X * theta;
    Eigen::VectorXd p(n), wgt(n);
    for (std::size_t s = 0; s < n; ++s) {
      p(s) = sigmoid(z(s));
      wgt(s) = p(s) * (1.0 - p(s));
    }
    const Eigen::VectorXd grad = X.transpose() * (p - y) * inv_n + penalty.cwiseProduct(theta);
    m.gradient_norm = grad.cwiseAbs().maxCoeff();
    if (m.gradient_norm < options.tolerance) {
      m.converged = true;
      break;
    }
    Eigen::MatrixXd H = X.transpose() * wgt.asDiagonal() * X * inv_n;
    H.diagonal() += penalty;
    H.diagonal().array() += 1e-10;  // keeps the system solvable on separable data
    const Eigen::VectorXd dir = H.ldlt().solve(-grad);
    double t = 1.0, next = objective(theta + dir);
    const double slope = grad.dot(dir);
    while (next > f + 1e-4 * t * slope && t > 1e-10) {
      t *= 0.5;
      next = objective(theta + t * dir);
    }
    if (!(next <= f)) break;  // no further decrease is representable
    theta += t * dir;
    f = next;
  }
  m.weights.assign(theta.data(), theta.data() + d);
  m.bias = theta(d);
  return m;
}

std::vector<std::vector<double>> pooled_features(const Checkpoint& checkpoint, const data::Dataset& dataset,
                                                 const std::vector<std::size_t>& indices) {
  auto model = instantiate<float>(checkpoint);
  data::NormalizationStats stats = dataset.stats;
  if (checkpoint.meta.contains("normalization")) {
    stats = data::NormalizationStats::from_json(checkpoint.meta.at("normalization"));
  } else if (!stats.valid) {
    stats = data::compute_stats(dataset);
  }
  std::vector<std::vector<double>> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += kFeatureBatch) {
    const std::size_t end = std::min(indices.size(), start + kFeatureBatch);
    std::vector<std::vector<float>> images;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(dataset.samples.at(indices[i]).image);
      if (!dataset.normalized) data::apply_stats(stats, images.back());
    }
    std::vector<const std::vector<float>*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    Tape<float> tape;
    const auto enc = model.encoder().forward(tape, data::image_batch<float>(ptrs, dataset.size), nn::NormMode::eval,
                                             nn::Domain::image);
    const Shape& s = enc.features.shape();
    const float* f = enc.features.ptr();
    for (std::size_t n = 0; n < s.n; ++n) {
      std::vector<double> row(s.c);
      for (std::size_t c = 0; c < s.c; ++c) {
        double acc = 0;
        const float* plane = f + (n * s.c + c) * s.plane();
        for (std::size_t k = 0; k < s.plane(); ++k) acc += plane[k];
        row[c] = acc / static_cast<double>(s.plane());
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

json SplitScore::to_json() const { return json{{"accuracy", accuracy}, {"auc", optional_number(auc)}}; }

json SelectedModel::to_json() const {
  json aucs = json::array();
  for (double a : validation_auc) aucs.push_back(std::isnan(a) ? json(nullptr) : json(a));
  return json{{"model", model.to_json()},
              {"validation_auc_per_l2", aucs},
              {"train", train.to_json()},
              {"validation", validation.to_json()},
              {"test", test.to_json()}};
}

json FusionResult::to_json() const {
  json singles = json::array();
  for (const auto& s : single) singles.push_back(s.to_json());
  json hashes = json::array();
  for (auto h : checkpoint_hashes) hashes.push_back(hex64(h));
  return json{{"fused", fused.to_json()},
              {"single_encoder", singles},
              {"checkpoint_hashes", hashes},
              {"feature_width", feature_width}};
}

namespace {

struct Rows {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
};

Rows gather(const std::vector<std::vector<double>>& features, const data::Dataset& dataset,
            const std::vector<std::size_t>& indices) {
  Rows r;
  for (auto i : indices) {
    r.x.push_back(features.at(i));
    r.y.push_back(dataset.samples[i].diagnosis);
  }
  return r;
}

SplitScore score(const LogisticModel& model, const Rows& rows) {
  SplitScore s;
  if (rows.x.empty()) return s;
  const auto p = model.predict(rows.x);
  const auto cm = metrics::classification_metrics(p, rows.y);
  s.accuracy = cm.accuracy;
  s.auc = cm.auc;
  return s;
}

SelectedModel select(const std::vector<std::vector<double>>& features, const data::Dataset& dataset,
                     const FusionOptions& options) {
  const Rows train = gather(features, dataset, dataset.indices(data::Split::train));
  const Rows val = gather(features, dataset, dataset.indices(data::Split::validation));
  const Rows test = gather(features, dataset, dataset.indices(data::Split::test));
  if (train.x.empty()) throw ContractError("fusion: empty training split");
  if (options.l2_grid.empty()) throw ContractError("fusion: empty L2 grid");
  SelectedModel best;
  double best_auc = -std::numeric_limits<double>::infinity();
  for (double l2 : options.l2_grid) {
    LogisticOptions lo;
    lo.l2 = l2;
    lo.tolerance = options.tolerance;
    LogisticModel m = fit_logistic(train.x, train.y, lo);
    const SplitScore v = score(m, val);
    const double auc = v.auc.value_or(std::numeric_limits<double>::quiet_NaN());
    best.validation_auc.push_back(auc);
    const double key = std::isnan(auc) ? 0.5 : auc;
    if (key >= best_auc) {
      best_auc = key;
      best.model = std::move(m);
    }
  }
  best.train = score(best.model, train);
  best.validation = score(best.model, val);
  best.test = score(best.model, test);
  return best;
}

}  // namespace

FusionResult fuse_features(const std::vector<std::vector<std::vector<double>>>& features,
                           const data::Dataset& dataset, const FusionOptions& options) {
  if (features.empty()) throw ContractError("fusion: no encoders");
  FusionResult result;
  result.feature_width = features[0].empty() ? 0 : features[0][0].size();
  std::vector<std::vector<double>> joint(dataset.samples.size());
  for (const auto& f : features) {
    if (f.size() != dataset.samples.size()) throw DimensionError("fusion: feature rows do not match the dataset");
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (f[i].size() != result.feature_width) throw DimensionError("fusion: encoders differ in feature width");
      joint[i].insert(joint[i].end(), f[i].begin(), f[i].end());
    }
    result.single.push_back(select(f, dataset, options));
  }
  result.fused = select(joint, dataset, options);
  return result;
}

FusionResult fuse_and_diagnose(const std::vector<Checkpoint>& checkpoints, const data::Dataset& dataset,
                               const FusionOptions& options) {
  if (checkpoints.size() != data::kAttributeCount) {
    throw ContractError("fusion: expected " + std::to_string(data::kAttributeCount) + " checkpoints");
  }
  for (const auto& ck : checkpoints) {
    if (!(ck.model.encoder == checkpoints[0].model.encoder)) {
      throw CheckpointError("fusion: checkpoints differ in encoder architecture");
    }
  }
  std::vector<std::size_t> all(dataset.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<std::vector<std::vector<double>>> features;
  for (const auto& ck : checkpoints) features.push_back(pooled_features(ck, dataset, all));
  FusionResult r = fuse_features(features, dataset, options);
  for (const auto& ck : checkpoints) r.checkpoint_hashes.push_back(content_hash(ck));
  return r;
}

}  // namespace biounet::fusion
