#include "biounet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "biounet/hash.hpp"

namespace biounet::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void accumulate(Tensor<T>& target, std::span<const T> delta) {
  auto g = target.grad();
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

// Lays out receptive fields as rows of a (C_in*kh*kw) x (N*P) matrix so the
// whole batch convolves with one GEMM.
template <typename T>
void im2col(const T* x, const Shape& s, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
            std::size_t oh, std::size_t ow, T* col) {
  const std::size_t P = oh * ow;
  const std::size_t NP = s.n * P;
  for (std::size_t ci = 0; ci < s.c; ++ci) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = col + ((ci * kh + ki) * kw + kj) * NP;
        for (std::size_t n = 0; n < s.n; ++n) {
          const T* plane = x + (n * s.c + ci) * s.h * s.w;
          T* dst = row + n * P;
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = static_cast<long>(y * stride + ki) - static_cast<long>(pad);
            T* drow = dst + y * ow;
            if (iy < 0 || iy >= static_cast<long>(s.h)) {
              std::fill(drow, drow + ow, T(0));
              continue;
            }
            const T* srow = plane + static_cast<std::size_t>(iy) * s.w;
            for (std::size_t xx = 0; xx < ow; ++xx) {
              const long ix = static_cast<long>(xx * stride + kj) - static_cast<long>(pad);
              drow[xx] = (ix < 0 || ix >= static_cast<long>(s.w)) ? T(0) : srow[ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const Shape& s, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
            std::size_t oh, std::size_t ow, T* dx) {
  const std::size_t P = oh * ow;
  const std::size_t NP = s.n * P;
  for (std::size_t ci = 0; ci < s.c; ++ci) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = col + ((ci * kh + ki) * kw + kj) * NP;
        for (std::size_t n = 0; n < s.n; ++n) {
          T* plane = dx + (n * s.c + ci) * s.h * s.w;
          const T* src = row + n * P;
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = static_cast<long>(y * stride + ki) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(s.h)) continue;
            T* drow = plane + static_cast<std::size_t>(iy) * s.w;
            const T* srow = src + y * ow;
            for (std::size_t xx = 0; xx < ow; ++xx) {
              const long ix = static_cast<long>(xx * stride + kj) - static_cast<long>(pad);
              if (ix >= 0 && ix < static_cast<long>(s.w)) drow[ix] += srow[xx];
            }
          }
        }
      }
    }
  }
}

// (N, C, P) <-> (C, N*P)
template <typename T>
void batch_to_channel_major(const T* src, std::size_t N, std::size_t C, std::size_t P, T* dst) {
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) std::copy_n(src + (n * C + c) * P, P, dst + c * N * P + n * P);
}

template <typename T>
void channel_to_batch_major(const T* src, std::size_t N, std::size_t C, std::size_t P, T* dst) {
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) std::copy_n(src + c * N * P + n * P, P, dst + (n * C + c) * P);
}

std::uint64_t hash_mask(const std::vector<bool>& bits) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::uint64_t word = 0;
  std::size_t k = 0;
  for (bool b : bits) {
    word = (word << 1) | (b ? 1u : 0u);
    if (++k == 64) {
      h = hash_combine(h, word);
      word = 0;
      k = 0;
    }
  }
  return hash_combine(h, word ^ k);
}

}  // namespace

std::size_t window_output(std::size_t in, std::size_t window, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ContractError("stride must be >= 1");
  if (in + 2 * pad < window) {
    throw DimensionError("window " + std::to_string(window) + " exceeds padded extent " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - window) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias,
                 ConvOptions options) {
  const Shape xs = input.shape();
  const Shape ks = kernel.shape();
  if (ks.c != xs.c) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(ks.c) + " input channels, input " + xs.str() +
                         " has " + std::to_string(xs.c));
  }
  if (bias != nullptr && bias->numel() != ks.n) {
    throw DimensionError("conv2d: bias length " + std::to_string(bias->numel()) + " != output channels " +
                         std::to_string(ks.n));
  }
  const std::size_t oh = window_output(xs.h, ks.h, options.stride, options.pad);
  const std::size_t ow = window_output(xs.w, ks.w, options.stride, options.pad);
  const std::size_t K = ks.c * ks.h * ks.w;
  const std::size_t P = oh * ow;
  const std::size_t NP = xs.n * P;
  const std::size_t cout = ks.n;
  const bool pointwise = ks.h == 1 && ks.w == 1 && options.stride == 1 && options.pad == 0;

  AlignedVector<T> col(K * NP);
  if (pointwise) {
    batch_to_channel_major(input.ptr(), xs.n, xs.c, P, col.data());
  } else {
    im2col(input.ptr(), xs, ks.h, ks.w, options.stride, options.pad, oh, ow, col.data());
  }
  AlignedVector<T> out_cm(cout * NP);
  {
    ConstMatMap<T> W(kernel.ptr(), cout, K);
    ConstMatMap<T> C(col.data(), K, NP);
    MatMap<T> O(out_cm.data(), cout, NP);
    O.noalias() = W * C;
  }
  Tensor<T> out({xs.n, cout, oh, ow});
  channel_to_batch_major(out_cm.data(), xs.n, cout, P, out.ptr());
  if (bias != nullptr) {
    const T* b = bias->ptr();
    T* o = out.ptr();
    for (std::size_t n = 0; n < xs.n; ++n)
      for (std::size_t c = 0; c < cout; ++c) {
        T* p = o + (n * cout + c) * P;
        for (std::size_t i = 0; i < P; ++i) p[i] += b[c];
      }
  }

  if (any_requires_grad<T>({&input, &kernel, bias})) {
    out.set_requires_grad(true);
    Tensor<T> x = input;
    Tensor<T> k = kernel;
    Tensor<T> b = bias != nullptr ? *bias : Tensor<T>();
    tape.record("conv2d", [x, k, b, out, options, oh, ow, K, P, NP, cout, pointwise]() mutable {
      if (!out.has_grad()) return;
      const Shape xs = x.shape();
      const Shape ks = k.shape();
      AlignedVector<T> dout_cm(cout * NP);
      batch_to_channel_major(out.grad().data(), xs.n, cout, P, dout_cm.data());
      ConstMatMap<T> dO(dout_cm.data(), cout, NP);
      if (b.defined() && b.requires_grad()) {
        auto db = b.grad();
        for (std::size_t c = 0; c < cout; ++c) {
          T acc = 0;
          for (std::size_t i = 0; i < NP; ++i) acc += dout_cm[c * NP + i];
          db[c] += acc;
        }
      }
      AlignedVector<T> col;
      if (k.requires_grad()) {
        col.resize(K * NP);
        if (pointwise) {
          batch_to_channel_major(x.ptr(), xs.n, xs.c, P, col.data());
        } else {
          im2col(x.ptr(), xs, ks.h, ks.w, options.stride, options.pad, oh, ow, col.data());
        }
        ConstMatMap<T> C(col.data(), K, NP);
        MatMap<T> dW(k.grad().data(), cout, K);
        dW.noalias() += dO * C.transpose();
      }
      if (x.requires_grad()) {
        AlignedVector<T> dcol(K * NP);
        ConstMatMap<T> W(k.ptr(), cout, K);
        MatMap<T> dC(dcol.data(), K, NP);
        dC.noalias() = W.transpose() * dO;
        auto dx = x.grad();
        if (pointwise) {
          AlignedVector<T> tmp(x.numel());
          channel_to_batch_major(dcol.data(), xs.n, xs.c, P, tmp.data());
          for (std::size_t i = 0; i < tmp.size(); ++i) dx[i] += tmp[i];
        } else {
          col2im(dcol.data(), xs, ks.h, ks.w, options.stride, options.pad, oh, ow, dx.data());
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> pool2d(Tape<T>& tape, const Tensor<T>& input, PoolKind kind, std::size_t window, std::size_t stride) {
  const Shape s = input.shape();
  if (kind == PoolKind::global_avg) {
    Tensor<T> out({s.n, s.c, 1, 1});
    const std::size_t P = s.plane();
    const T inv = T(1) / static_cast<T>(P);
    for (std::size_t i = 0; i < s.n * s.c; ++i) {
      const T* p = input.ptr() + i * P;
      T acc = 0;
      for (std::size_t j = 0; j < P; ++j) acc += p[j];
      out.ptr()[i] = acc * inv;
    }
    if (input.requires_grad()) {
      out.set_requires_grad(true);
      Tensor<T> x = input;
      tape.record("global_avg_pool", [x, out, P, inv]() mutable {
        if (!out.has_grad()) return;
        auto dx = x.grad();
        auto go = out.grad();
        for (std::size_t i = 0; i < go.size(); ++i) {
          const T g = go[i] * inv;
          for (std::size_t j = 0; j < P; ++j) dx[i * P + j] += g;
        }
      });
    }
    return out;
  }

  if (window > s.h || window > s.w) {
    throw DimensionError("pool2d: window " + std::to_string(window) + " larger than input " + s.str());
  }
  const std::size_t oh = window_output(s.h, window, stride, 0);
  const std::size_t ow = window_output(s.w, window, stride, 0);
  Tensor<T> out({s.n, s.c, oh, ow});
  std::vector<std::size_t> argmax;
  if (kind == PoolKind::max) argmax.resize(out.numel());
  const T inv = T(1) / static_cast<T>(window * window);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* plane = input.ptr() + nc * s.plane();
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t o = (nc * oh + y) * ow + x;
        if (kind == PoolKind::max) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_i = 0;
          for (std::size_t i = 0; i < window; ++i)
            for (std::size_t j = 0; j < window; ++j) {
              const std::size_t idx = (y * stride + i) * s.w + x * stride + j;
              if (plane[idx] > best) {
                best = plane[idx];
                best_i = idx;
              }
            }
          out.ptr()[o] = best;
          argmax[o] = nc * s.plane() + best_i;
        } else {
          T acc = 0;
          for (std::size_t i = 0; i < window; ++i)
            for (std::size_t j = 0; j < window; ++j) acc += plane[(y * stride + i) * s.w + x * stride + j];
          out.ptr()[o] = acc * inv;
        }
      }
  }
  if (kind == PoolKind::max && tape.tracking_branches()) {
    std::uint64_t h = 0;
    for (auto a : argmax) h = hash_combine(h, a);
    tape.note_branch(h);
  }
  if (input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xin = input;
    if (kind == PoolKind::max) {
      tape.record("max_pool2d", [xin, out, argmax = std::move(argmax)]() mutable {
        if (!out.has_grad()) return;
        auto dx = xin.grad();
        auto go = out.grad();
        for (std::size_t o = 0; o < go.size(); ++o) dx[argmax[o]] += go[o];
      });
    } else {
      tape.record("avg_pool2d", [xin, out, window, stride, oh, ow, inv]() mutable {
        if (!out.has_grad()) return;
        const Shape s = xin.shape();
        auto dx = xin.grad();
        auto go = out.grad();
        for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
              const T g = go[(nc * oh + y) * ow + x] * inv;
              for (std::size_t i = 0; i < window; ++i)
                for (std::size_t j = 0; j < window; ++j)
                  dx[nc * s.plane() + (y * stride + i) * s.w + x * stride + j] += g;
            }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                       NormMode mode, NormStats<T>& stats) {
  const Shape s = input.shape();
  const std::size_t C = s.c;
  if (gamma.numel() != C || beta.numel() != C) {
    throw DimensionError("batch_norm2d: gamma/beta length must equal channel count " + std::to_string(C));
  }
  const std::size_t P = s.plane();
  const std::size_t M = s.n * P;
  const T eps = static_cast<T>(kNormEpsilon);
  const T momentum = static_cast<T>(kNormMomentum);

  std::vector<T> mean(C), invstd(C);
  if (mode == NormMode::train) {
    if (M == 0) throw DimensionError("batch_norm2d: empty batch");
    for (std::size_t c = 0; c < C; ++c) {
      T acc = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = input.ptr() + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) acc += p[i];
      }
      const T m = acc / static_cast<T>(M);
      T sq = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = input.ptr() + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) {
          const T d = p[i] - m;
          sq += d * d;
        }
      }
      const T var = sq / static_cast<T>(M);
      mean[c] = m;
      invstd[c] = T(1) / std::sqrt(var + eps);
      if (!stats.initialized) stats = NormStats<T>::identity(C);
      const T unbiased = M > 1 ? sq / static_cast<T>(M - 1) : var;
      stats.mean[c] = (T(1) - momentum) * stats.mean[c] + momentum * m;
      stats.var[c] = (T(1) - momentum) * stats.var[c] + momentum * unbiased;
    }
  } else {
    if (!stats.initialized || stats.mean.size() != C) {
      throw StateError("batch_norm2d: eval mode requires initialized running statistics");
    }
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = stats.mean[c];
      invstd[c] = T(1) / std::sqrt(stats.var[c] + eps);
    }
  }

  Tensor<T> out(s);
  std::vector<T> xhat(input.numel());
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * P;
      const T g = gamma.ptr()[c];
      const T b = beta.ptr()[c];
      for (std::size_t i = 0; i < P; ++i) {
        const T xh = (input.ptr()[off + i] - mean[c]) * invstd[c];
        xhat[off + i] = xh;
        out.ptr()[off + i] = g * xh + b;
      }
    }

  if (any_requires_grad<T>({&input, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor<T> x = input;
    Tensor<T> ga = gamma;
    Tensor<T> be = beta;
    tape.record("batch_norm2d", [x, ga, be, out, mode, invstd = std::move(invstd), xhat = std::move(xhat), P,
                                 M]() mutable {
      if (!out.has_grad()) return;
      const Shape s = x.shape();
      const std::size_t C = s.c;
      auto dy = out.grad();
      std::vector<T> sum_dy(C, T(0)), sum_dy_xhat(C, T(0));
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t off = (n * C + c) * P;
          T a = 0, b = 0;
          for (std::size_t i = 0; i < P; ++i) {
            a += dy[off + i];
            b += dy[off + i] * xhat[off + i];
          }
          sum_dy[c] += a;
          sum_dy_xhat[c] += b;
        }
      if (ga.requires_grad()) {
        auto dg = ga.grad();
        for (std::size_t c = 0; c < C; ++c) dg[c] += sum_dy_xhat[c];
      }
      if (be.requires_grad()) {
        auto db = be.grad();
        for (std::size_t c = 0; c < C; ++c) db[c] += sum_dy[c];
      }
      if (!x.requires_grad()) return;
      auto dx = x.grad();
      const T invM = T(1) / static_cast<T>(M);
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t off = (n * C + c) * P;
          const T g = ga.ptr()[c] * invstd[c];
          if (mode == NormMode::train) {
            const T mdy = sum_dy[c] * invM;
            const T mdyx = sum_dy_xhat[c] * invM;
            for (std::size_t i = 0; i < P; ++i) dx[off + i] += g * (dy[off + i] - mdy - xhat[off + i] * mdyx);
          } else {
            for (std::size_t i = 0; i < P; ++i) dx[off + i] += g * dy[off + i];
          }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dense(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  const std::size_t N = input.shape().n;
  const std::size_t F = input.shape().sample();
  const std::size_t fin = weight.shape().n;
  const std::size_t fout = weight.shape().c;
  if (weight.shape().h != 1 || weight.shape().w != 1 || fin != F) {
    throw DimensionError("dense: weight " + weight.shape().str() + " incompatible with " + std::to_string(F) +
                         " input features");
  }
  if (bias.numel() != fout) {
    throw DimensionError("dense: bias length " + std::to_string(bias.numel()) + " != " + std::to_string(fout));
  }
  Tensor<T> out({N, fout, 1, 1});
  {
    ConstMatMap<T> X(input.ptr(), N, F);
    ConstMatMap<T> W(weight.ptr(), F, fout);
    MatMap<T> Y(out.ptr(), N, fout);
    Y.noalias() = X * W;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < fout; ++j) Y(n, j) += bias.ptr()[j];
  }
  if (any_requires_grad<T>({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    Tensor<T> x = input;
    Tensor<T> w = weight;
    Tensor<T> b = bias;
    tape.record("dense", [x, w, b, out, N, F, fout]() mutable {
      if (!out.has_grad()) return;
      ConstMatMap<T> dY(out.grad().data(), N, fout);
      if (b.requires_grad()) {
        auto db = b.grad();
        for (std::size_t j = 0; j < fout; ++j) {
          T acc = 0;
          for (std::size_t n = 0; n < N; ++n) acc += out.grad()[n * fout + j];
          db[j] += acc;
        }
      }
      if (w.requires_grad()) {
        ConstMatMap<T> X(x.ptr(), N, F);
        MatMap<T> dW(w.grad().data(), F, fout);
        dW.noalias() += X.transpose() * dY;
      }
      if (x.requires_grad()) {
        ConstMatMap<T> W(w.ptr(), F, fout);
        MatMap<T> dX(x.grad().data(), N, F);
        dX.noalias() += dY * W.transpose();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T* x = input.ptr();
  T* y = out.ptr();
  const std::size_t n = input.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  if (tape.tracking_branches()) {
    std::vector<bool> bits(n);
    for (std::size_t i = 0; i < n; ++i) bits[i] = x[i] > T(0);
    tape.note_branch(hash_mask(bits));
  }
  if (input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xin = input;
    tape.record("relu", [xin, out]() mutable {
      if (!out.has_grad()) return;
      auto dx = xin.grad();
      auto go = out.grad();
      const T* x = xin.ptr();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (x[i] > T(0)) dx[i] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T* x = input.ptr();
  T* y = out.ptr();
  for (std::size_t i = 0; i < input.numel(); ++i) {
    // Branch on sign so exp never overflows.
    if (x[i] >= T(0)) {
      y[i] = T(1) / (T(1) + std::exp(-x[i]));
    } else {
      const T e = std::exp(x[i]);
      y[i] = e / (T(1) + e);
    }
  }
  if (input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xin = input;
    tape.record("sigmoid", [xin, out]() mutable {
      if (!out.has_grad()) return;
      auto dx = xin.grad();
      auto go = out.grad();
      const T* y = out.ptr();
      for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i] * y[i] * (T(1) - y[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& input) {
  const Shape s = input.shape();
  const std::size_t P = s.plane();
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t p = 0; p < P; ++p) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < s.c; ++c) mx = std::max(mx, input.ptr()[(n * s.c + c) * P + p]);
      T z = 0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const T e = std::exp(input.ptr()[(n * s.c + c) * P + p] - mx);
        out.ptr()[(n * s.c + c) * P + p] = e;
        z += e;
      }
      for (std::size_t c = 0; c < s.c; ++c) out.ptr()[(n * s.c + c) * P + p] /= z;
    }
  if (input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xin = input;
    tape.record("softmax", [xin, out, P]() mutable {
      if (!out.has_grad()) return;
      const Shape s = xin.shape();
      auto dx = xin.grad();
      auto go = out.grad();
      const T* y = out.ptr();
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t p = 0; p < P; ++p) {
          T dot = 0;
          for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t i = (n * s.c + c) * P + p;
            dot += go[i] * y[i];
          }
          for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t i = (n * s.c + c) * P + p;
            dx[i] += y[i] * (go[i] - dot);
          }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest(Tape<T>& tape, const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
  const Shape s = input.shape();
  if (out_h == 0 || out_w == 0) throw DimensionError("upsample_nearest: empty target");
  std::vector<std::size_t> ys(out_h), xs(out_w);
  for (std::size_t y = 0; y < out_h; ++y) ys[y] = y * s.h / out_h;
  for (std::size_t x = 0; x < out_w; ++x) xs[x] = x * s.w / out_w;
  Tensor<T> out({s.n, s.c, out_h, out_w});
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* src = input.ptr() + nc * s.plane();
    T* dst = out.ptr() + nc * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) dst[y * out_w + x] = src[ys[y] * s.w + xs[x]];
  }
  if (input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xin = input;
    tape.record("upsample_nearest", [xin, out, ys = std::move(ys), xs = std::move(xs)]() mutable {
      if (!out.has_grad()) return;
      const Shape s = xin.shape();
      const std::size_t oh = ys.size();
      const std::size_t ow = xs.size();
      auto dx = xin.grad();
      auto go = out.grad();
      for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t x = 0; x < ow; ++x)
            dx[nc * s.plane() + ys[y] * s.w + xs[x]] += go[(nc * oh + y) * ow + x];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape s0 = inputs.front().shape();
  std::size_t total = 0;
  bool grad = false;
  for (const auto& t : inputs) {
    const Shape s = t.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw DimensionError("concat_channels: incompatible shapes " + s0.str() + " and " + s.str());
    }
    total += s.c;
    grad = grad || t.requires_grad();
  }
  const std::size_t P = s0.plane();
  Tensor<T> out({s0.n, total, s0.h, s0.w});
  for (std::size_t n = 0; n < s0.n; ++n) {
    std::size_t offset = 0;
    for (const auto& t : inputs) {
      const std::size_t c = t.shape().c;
      std::copy_n(t.ptr() + n * c * P, c * P, out.ptr() + (n * total + offset) * P);
      offset += c;
    }
  }
  if (grad) {
    out.set_requires_grad(true);
    tape.record("concat_channels", [inputs = std::vector<Tensor<T>>(inputs), out, total, P]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      const std::size_t N = out.shape().n;
      std::size_t offset = 0;
      for (auto& t : inputs) {
        const std::size_t c = t.shape().c;
        if (t.requires_grad()) {
          auto dt = t.grad();
          for (std::size_t n = 0; n < N; ++n) {
            const T* src = go.data() + (n * total + offset) * P;
            T* dst = dt.data() + n * c * P;
            for (std::size_t i = 0; i < c * P; ++i) dst[i] += src[i];
          }
        }
        offset += c;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError("add: shape " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
  if (any_requires_grad<T>({&a, &b})) {
    out.set_requires_grad(true);
    Tensor<T> ta = a;
    Tensor<T> tb = b;
    tape.record("add", [ta, tb, out]() mutable {
      if (!out.has_grad()) return;
      std::span<const T> go = out.grad();
      if (ta.requires_grad()) accumulate(ta, go);
      if (tb.requires_grad()) accumulate(tb, go);
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] * factor;
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> ta = a;
    tape.record("scale", [ta, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto dx = ta.grad();
      auto go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& input, Shape shape) {
  if (shape.numel() != input.numel()) {
    throw DimensionError("reshape: " + input.shape().str() + " to " + shape.str());
  }
  Tensor<T> out(shape, std::vector<T>(input.data().begin(), input.data().end()));
  if (input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xin = input;
    tape.record("reshape", [xin, out]() mutable {
      if (!out.has_grad()) return;
      accumulate<T>(xin, out.grad());
    });
  }
  return out;
}

template <typename T>
Tensor<T> select_channel(Tape<T>& tape, const Tensor<T>& input, std::size_t index) {
  const Shape s = input.shape();
  if (index >= s.c) {
    throw DimensionError("select_channel: index " + std::to_string(index) + " out of range for " + s.str());
  }
  const std::size_t P = s.plane();
  Tensor<T> out({s.n, 1, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) std::copy_n(input.ptr() + (n * s.c + index) * P, P, out.ptr() + n * P);
  if (input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xin = input;
    tape.record("select_channel", [xin, out, index, P]() mutable {
      if (!out.has_grad()) return;
      const Shape s = xin.shape();
      auto dx = xin.grad();
      auto go = out.grad();
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < P; ++i) dx[(n * s.c + index) * P + i] += go[n * P + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input) {
  T acc = 0;
  for (T v : input.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xin = input;
    tape.record("sum", [xin, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      for (auto& d : xin.grad()) d += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> weighted_sum(Tape<T>& tape, const Tensor<T>& input, std::span<const T> weights) {
  if (weights.size() != input.numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for " + input.shape().str());
  }
  T acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += input.ptr()[i] * weights[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xin = input;
    std::vector<T> r(weights.begin(), weights.end());
    tape.record("weighted_sum", [xin, out, r = std::move(r)]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      auto dx = xin.grad();
      for (std::size_t i = 0; i < r.size(); ++i) dx[i] += g * r[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> square(Tape<T>& tape, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) out.ptr()[i] = input.ptr()[i] * input.ptr()[i];
  if (input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> xin = input;
    tape.record("square", [xin, out]() mutable {
      if (!out.has_grad()) return;
      auto dx = xin.grad();
      auto go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i) dx[i] += T(2) * xin.ptr()[i] * go[i];
    });
  }
  return out;
}

template <typename T>
std::vector<T> resize_bilinear(std::span<const T> plane, std::size_t h, std::size_t w, std::size_t out_h,
                               std::size_t out_w) {
  if (plane.size() != h * w) throw DimensionError("resize_bilinear: plane size mismatch");
  std::vector<T> out(out_h * out_w);
  if (h == out_h && w == out_w) {
    std::copy(plane.begin(), plane.end(), out.begin());
    return out;
  }
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = (1 - wx) * plane[y0 * w + x0] + wx * plane[y0 * w + x1];
      const double bot = (1 - wx) * plane[y1 * w + x0] + wx * plane[y1 * w + x1];
      out[y * out_w + x] = static_cast<T>((1 - wy) * top + wy * bot);
    }
  }
  return out;
}

#define BIOUNET_INSTANTIATE_OPS(T)                                                                             \
  template Tensor<T> conv2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, ConvOptions);      \
  template Tensor<T> pool2d(Tape<T>&, const Tensor<T>&, PoolKind, std::size_t, std::size_t);                   \
  template Tensor<T> batch_norm2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, NormMode,    \
                                  NormStats<T>&);                                                              \
  template Tensor<T> dense(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                                         \
  template Tensor<T> sigmoid(Tape<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> softmax(Tape<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> upsample_nearest(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t);                   \
  template Tensor<T> concat_channels(Tape<T>&, const std::vector<Tensor<T>>&);                                 \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                                     \
  template Tensor<T> reshape(Tape<T>&, const Tensor<T>&, Shape);                                               \
  template Tensor<T> select_channel(Tape<T>&, const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                                          \
  template Tensor<T> weighted_sum(Tape<T>&, const Tensor<T>&, std::span<const T>);                             \
  template Tensor<T> square(Tape<T>&, const Tensor<T>&);                                                       \
  template std::vector<T> resize_bilinear(std::span<const T>, std::size_t, std::size_t, std::size_t, std::size_t);

BIOUNET_INSTANTIATE_OPS(float)
BIOUNET_INSTANTIATE_OPS(double)

}  // namespace biounet::ops
