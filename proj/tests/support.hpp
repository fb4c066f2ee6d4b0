#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "catcd/ops.hpp"
#include "catcd/tensor.hpp"

namespace catcd::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

/// sum(y * r): a scalar whose gradient w.r.t. y is r, so every output entry
/// contributes a distinct weight.
template <typename T>
Tensor<T> probe_loss(const Tensor<T>& y, const Tensor<T>& r) {
  return ops::sum(ops::mul(y, r));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

// Six nested loops over (n, o, y, x, c, ky/kx), zero padding.
inline std::vector<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w,
                               const Tensor<double>& b, int pad) {
  const int n = int(x.dim(0)), ci = int(x.dim(1)), h = int(x.dim(2)), wd = int(x.dim(3));
  const int co = int(w.dim(0)), k = int(w.dim(2));
  std::vector<double> out(std::size_t(n * co * h * wd), 0.0);
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < co; ++o)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < wd; ++xx) {
          double acc = b.data()[o];
          for (int c = 0; c < ci; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int sy = yy + ky - pad, sx = xx + kx - pad;
                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                acc += w.data()[((o * ci + c) * k + ky) * k + kx] *
                       x.data()[((s * ci + c) * h + sy) * wd + sx];
              }
          out[((s * co + o) * h + yy) * wd + xx] = acc;
        }
  return out;
}

}  // namespace catcd::testing
