#include "biounet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "biounet/hash.hpp"

namespace biounet::loss {

template <typename T>
LossValue<T> bce(Tape<T>& tape, const Tensor<T>& probabilities, std::span<const T> targets) {
  const std::size_t N = probabilities.shape().n;
  const std::size_t K = probabilities.shape().sample();
  if (targets.size() != N * K) {
    throw DimensionError("bce: " + std::to_string(targets.size()) + " targets for predictions " +
                         probabilities.shape().str());
  }
  for (T t : targets)
    if (t != T(0) && t != T(1)) throw ContractError("bce: targets must be 0 or 1");
  if (N == 0) throw DimensionError("bce: empty batch");

  const T lo = static_cast<T>(kProbabilityClamp);
  const T hi = T(1) - lo;
  LossValue<T> result;
  result.per_sample.assign(N, T(0));
  std::vector<bool> clamped(N * K);
  T total = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t i = n * K + k;
      const T p_raw = probabilities.ptr()[i];
      const T p = std::clamp(p_raw, lo, hi);
      clamped[i] = p != p_raw;
      const T l = targets[i] == T(1) ? -std::log(p) : -std::log(T(1) - p);
      result.per_sample[n] += l;
      total += l;
    }
  if (tape.tracking_branches()) {
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < clamped.size(); ++i) h = hash_combine(h, clamped[i] ? i + 1 : 0);
    tape.note_branch(h);
  }
  result.value = Tensor<T>::scalar(total / static_cast<T>(N));
  if (probabilities.requires_grad()) {
    result.value.set_requires_grad(true);
    Tensor<T> p = probabilities;
    Tensor<T> out = result.value;
    std::vector<T> t(targets.begin(), targets.end());
    tape.record("bce", [p, out, t = std::move(t), clamped = std::move(clamped), lo, hi, N]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0] / static_cast<T>(N);
      auto dp = p.grad();
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (clamped[i]) continue;
        const T pv = std::clamp(p.ptr()[i], lo, hi);
        dp[i] += g * (t[i] == T(1) ? -T(1) / pv : T(1) / (T(1) - pv));
      }
    });
  }
  return result;
}

template <typename T>
LossValue<T> soft_dice(Tape<T>& tape, const Tensor<T>& prediction, std::span<const T> target) {
  const std::size_t N = prediction.shape().n;
  const std::size_t P = prediction.shape().sample();
  if (target.size() != prediction.numel()) {
    throw DimensionError("soft_dice: target length " + std::to_string(target.size()) + " vs prediction " +
                         prediction.shape().str());
  }
  if (N == 0) throw DimensionError("soft_dice: empty batch");
  const T eps = static_cast<T>(kDiceEpsilon);
  LossValue<T> result;
  result.per_sample.resize(N);
  std::vector<T> inter(N), denom(N);
  T total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    T a = 0, tt = 0, pp = 0;
    const T* p = prediction.ptr() + n * P;
    const T* t = target.data() + n * P;
    for (std::size_t i = 0; i < P; ++i) {
      a += t[i] * p[i];
      tt += t[i] * t[i];
      pp += p[i] * p[i];
    }
    inter[n] = a;
    denom[n] = tt + pp + eps;
    result.per_sample[n] = T(1) - T(2) * a / denom[n];
    total += result.per_sample[n];
  }
  result.value = Tensor<T>::scalar(total / static_cast<T>(N));
  if (prediction.requires_grad()) {
    result.value.set_requires_grad(true);
    Tensor<T> pred = prediction;
    Tensor<T> out = result.value;
    std::vector<T> t(target.begin(), target.end());
    tape.record("soft_dice", [pred, out, t = std::move(t), inter = std::move(inter), denom = std::move(denom), N,
                              P]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0] / static_cast<T>(N);
      auto dp = pred.grad();
      for (std::size_t n = 0; n < N; ++n) {
        const T B = denom[n];
        const T A = inter[n];
        const T inv = g / (B * B);
        for (std::size_t i = 0; i < P; ++i) {
          const std::size_t k = n * P + i;
          dp[k] += inv * (-T(2) * t[k] * B + T(4) * A * pred.ptr()[k]);
        }
      }
    });
  }
  return result;
}

template <typename T>
LossValue<T> nt_xent(Tape<T>& tape, const Tensor<T>& embeddings, T tau) {
  const std::size_t M = embeddings.shape().n;
  const std::size_t D = embeddings.shape().sample();
  if (M < 2 || M % 2 != 0) {
    throw DimensionError("nt_xent: need an even number (>= 2) of embeddings, got " + std::to_string(M));
  }
  if (!(tau > T(0))) throw ContractError("nt_xent: temperature must be positive");

  std::vector<T> norms(M), z(M * D);
  for (std::size_t i = 0; i < M; ++i) {
    const T* e = embeddings.ptr() + i * D;
    T s = 0;
    for (std::size_t d = 0; d < D; ++d) s += e[d] * e[d];
    norms[i] = std::sqrt(s);
    if (!(norms[i] >= static_cast<T>(kMinEmbeddingNorm))) {
      throw ContractError("nt_xent: embedding " + std::to_string(i) + " has (near) zero norm");
    }
    for (std::size_t d = 0; d < D; ++d) z[i * D + d] = e[d] / norms[i];
  }
  // Softmax weights over the non-self similarities of every anchor.
  std::vector<T> weights(M * M, T(0));
  LossValue<T> result;
  result.per_sample.resize(M);
  T total = 0;
  std::vector<T> logits(M);
  for (std::size_t i = 0; i < M; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < M; ++k) {
      if (k == i) continue;
      T dot = 0;
      for (std::size_t d = 0; d < D; ++d) dot += z[i * D + d] * z[k * D + d];
      logits[k] = dot / tau;
      mx = std::max(mx, logits[k]);
    }
    T zsum = 0;
    for (std::size_t k = 0; k < M; ++k) {
      if (k == i) continue;
      weights[i * M + k] = std::exp(logits[k] - mx);
      zsum += weights[i * M + k];
    }
    for (std::size_t k = 0; k < M; ++k) weights[i * M + k] /= zsum;
    const std::size_t pos = i ^ 1u;
    result.per_sample[i] = -(logits[pos] - mx - std::log(zsum));
    total += result.per_sample[i];
  }
  result.value = Tensor<T>::scalar(total / static_cast<T>(M));
  if (embeddings.requires_grad()) {
    result.value.set_requires_grad(true);
    Tensor<T> emb = embeddings;
    Tensor<T> out = result.value;
    tape.record("nt_xent", [emb, out, z = std::move(z), norms = std::move(norms), weights = std::move(weights), M,
                            D, tau]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0] / static_cast<T>(M);
      // G[i][k] = dL/dS_ik with S_ik = z_i . z_k / tau
      std::vector<T> G(M * M);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < M; ++k) {
          if (k == i) {
            G[i * M + k] = 0;
            continue;
          }
          const T indicator = k == (i ^ 1u) ? T(1) : T(0);
          G[i * M + k] = g * (weights[i * M + k] - indicator);
        }
      std::vector<T> dz(M * D, T(0));
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < M; ++k) {
          const T c = (G[i * M + k] + G[k * M + i]) / tau;
          if (c == T(0)) continue;
          for (std::size_t d = 0; d < D; ++d) dz[i * D + d] += c * z[k * D + d];
        }
      auto de = emb.grad();
      for (std::size_t i = 0; i < M; ++i) {
        T proj = 0;
        for (std::size_t d = 0; d < D; ++d) proj += z[i * D + d] * dz[i * D + d];
        for (std::size_t d = 0; d < D; ++d) de[i * D + d] += (dz[i * D + d] - z[i * D + d] * proj) / norms[i];
      }
    });
  }
  return result;
}

template LossValue<float> bce(Tape<float>&, const Tensor<float>&, std::span<const float>);
template LossValue<double> bce(Tape<double>&, const Tensor<double>&, std::span<const double>);
template LossValue<float> soft_dice(Tape<float>&, const Tensor<float>&, std::span<const float>);
template LossValue<double> soft_dice(Tape<double>&, const Tensor<double>&, std::span<const double>);
template LossValue<float> nt_xent(Tape<float>&, const Tensor<float>&, float);
template LossValue<double> nt_xent(Tape<double>&, const Tensor<double>&, double);

}  // namespace biounet::loss
