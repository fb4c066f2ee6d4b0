#include <cmath>
#include <memory>
#include <stdexcept>

#include "catcd/ops.hpp"
#include "internal.hpp"

namespace catcd::ops {

using detail::recording;

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t c = x.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("layer_norm: gamma " + gamma.shape().str() + " / beta " +
                     beta.shape().str() + " do not match channel axis of " + x.shape().str());
  }
  const std::size_t rows = x.numel() / c;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = v.data() + r * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const T xh = (row[j] - mu) * inv;
      (*xhat)[r * c + j] = xh;
      o[r * c + j] = gm[j] * xh + bt[j];
    }
  }
  if (Tape* tape = recording(x, gamma, beta)) {
    out.set_requires_grad(true);
    tape->record([x, gamma, beta, out, xhat, inv_std, rows, c]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      const auto& xh = *xhat;
      if (gamma.requires_grad() || beta.requires_grad()) {
        auto dg = gamma.requires_grad() ? gamma.grad_mut() : std::span<T>{};
        auto db = beta.requires_grad() ? beta.grad_mut() : std::span<T>{};
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            if (!dg.empty()) dg[j] += g[r * c + j] * xh[r * c + j];
            if (!db.empty()) db[j] += g[r * c + j];
          }
        }
      }
      if (x.requires_grad()) {
        auto dx = x.grad_mut();
        auto gm = gamma.data();
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_d = 0;
          T mean_dx = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const T d = g[r * c + j] * gm[j];
            mean_d += d;
            mean_dx += d * xh[r * c + j];
          }
          mean_d /= static_cast<T>(c);
          mean_dx /= static_cast<T>(c);
          const T inv = (*inv_std)[r];
          for (std::size_t j = 0; j < c; ++j) {
            const T d = g[r * c + j] * gm[j];
            dx[r * c + j] += inv * (d - mean_d - xh[r * c + j] * mean_dx);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
BatchNormState<T> BatchNormState<T>::create(std::size_t channels) {
  BatchNormState s;
  s.running_mean = Tensor<T>(Shape{channels}, T(0));
  s.running_var = Tensor<T>(Shape{channels}, T(1));
  s.tracked = Tensor<T>(Shape{1}, T(0));
  return s;
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormState<T>& state, NormMode mode, bool update_stats) {
  if (x.rank() != 4) throw ShapeError("batch_norm2d: expected B x C x H x W, got " + x.shape().str());
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  const std::size_t count = batch * hw;
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels} ||
      state.running_mean.shape() != Shape{channels}) {
    throw ShapeError("batch_norm2d: parameters do not match channels of " + x.shape().str());
  }

  auto v = x.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  std::vector<T> mean(channels);
  auto inv_std = std::make_shared<std::vector<T>>(channels);
  if (mode == NormMode::train) {
    std::vector<T> var(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      T mu = 0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = v.data() + (n * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) mu += p[i];
      }
      mu /= static_cast<T>(count);
      T s = 0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = v.data() + (n * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += (p[i] - mu) * (p[i] - mu);
      }
      mean[c] = mu;
      var[c] = s / static_cast<T>(count);
      (*inv_std)[c] = T(1) / std::sqrt(var[c] + state.eps);
    }
    if (update_stats) {
      auto rm = state.running_mean.data();
      auto rv = state.running_var.data();
      const T unbias = count > 1 ? static_cast<T>(count) / static_cast<T>(count - 1) : T(1);
      for (std::size_t c = 0; c < channels; ++c) {
        rm[c] = (T(1) - state.momentum) * rm[c] + state.momentum * mean[c];
        rv[c] = (T(1) - state.momentum) * rv[c] + state.momentum * var[c] * unbias;
      }
      state.tracked.data()[0] += T(1);
    }
  } else {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = rm[c];
      (*inv_std)[c] = T(1) / std::sqrt(rv[c] + state.eps);
    }
  }

  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  Tensor<T> out(x.shape());
  auto o = out.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (v[base + i] - mean[c]) * (*inv_std)[c];
        (*xhat)[base + i] = xh;
        o[base + i] = gm[c] * xh + bt[c];
      }
    }
  }

  if (Tape* tape = recording(x, gamma, beta)) {
    out.set_requires_grad(true);
    const bool batch_stats = mode == NormMode::train;
    tape->record([x, gamma, beta, out, xhat, inv_std, batch, channels, hw, count,
                  batch_stats]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      const auto& xh = *xhat;
      auto gm = gamma.data();
      auto dg = gamma.requires_grad() ? gamma.grad_mut() : std::span<T>{};
      auto db = beta.requires_grad() ? beta.grad_mut() : std::span<T>{};
      auto dx = x.requires_grad() ? x.grad_mut() : std::span<T>{};
      for (std::size_t c = 0; c < channels; ++c) {
        T sum_g = 0;
        T sum_gx = 0;
        for (std::size_t n = 0; n < batch; ++n) {
          const std::size_t base = (n * channels + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            sum_g += g[base + i];
            sum_gx += g[base + i] * xh[base + i];
          }
        }
        if (!dg.empty()) dg[c] += sum_gx;
        if (!db.empty()) db[c] += sum_g;
        if (dx.empty()) continue;
        const T k = gm[c] * (*inv_std)[c];
        const T mean_g = sum_g / static_cast<T>(count);
        const T mean_gx = sum_gx / static_cast<T>(count);
        for (std::size_t n = 0; n < batch; ++n) {
          const std::size_t base = (n * channels + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            if (batch_stats) {
              dx[base + i] += k * (g[base + i] - mean_g - xh[base + i] * mean_gx);
            } else {
              dx[base + i] += k * g[base + i];
            }
          }
        }
      }
    });
  }
  return out;
}

#define CATCD_INSTANTIATE(T)                                                               \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);  \
  template struct BatchNormState<T>;                                                       \
  template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                  BatchNormState<T>&, NormMode, bool);

CATCD_INSTANTIATE(float)
CATCD_INSTANTIATE(double)

}  // namespace catcd::ops
