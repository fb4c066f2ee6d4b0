#include <algorithm>
#include <cmath>
#include <numbers>

#include "catcd/ops.hpp"
#include "internal.hpp"

namespace catcd::ops {

using detail::recording;
using detail::wants_grad;

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (Tape* tape = recording(a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      for (const Tensor<T>* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto d = t->grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (Tape* tape = recording(a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      if (a.requires_grad()) {
        auto d = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (b.requires_grad()) {
        auto d = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (Tape* tape = recording(a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      if (a.requires_grad()) {
        auto d = a.grad_mut();
        auto y = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto d = b.grad_mut();
        auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::abs(v[i]);
  if (std::uint64_t* sig = detail::kink_signature()) {
    // FNV-1a over the sign pattern
    for (T e : v) {
      *sig ^= e > T(0) ? 1u : (e < T(0) ? 2u : 3u);
      *sig *= 1099511628211ull;
    }
  }
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      auto d = x.grad_mut();
      auto v = x.data();
      // subgradient 0 at the kink
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (v[i] > T(0)) {
          d[i] += g[i];
        } else if (v[i] < T(0)) {
          d[i] -= g[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] * factor;
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([x, out, factor]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      auto d = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = T(0.5) * v[i] * (T(1) + std::erf(v[i] * inv_sqrt2));
  }
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([x, out, inv_sqrt2]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
      auto d = x.grad_mut();
      auto v = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(v[i] * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v[i] * v[i]);
        d[i] += g[i] * (cdf + v[i] * pdf);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + s.str());
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.rank(); ++i) inner *= s[i];
  const std::size_t n = s[axis];

  Tensor<T> out(s);
  auto o = out.data();
  auto v = x.data();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = a * n * inner + c;
      T mx = v[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, v[base + k * inner]);
      T total = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const T e = std::exp(v[base + k * inner] - mx);
        o[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < n; ++k) o[base + k * inner] /= total;
    }
  }
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([x, out, outer, inner, n]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      auto d = x.grad_mut();
      auto y = out.data();
      for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t c = 0; c < inner; ++c) {
          const std::size_t base = a * n * inner + c;
          T dot = 0;
          for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t i = base + k * inner;
            d[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  Tensor<T> out = Tensor<T>::scalar(total);
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      auto d = x.grad_mut();
      for (T& v : d) v += g[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

#define CATCD_INSTANTIATE(T)                                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> abs(const Tensor<T>&);                        \
  template Tensor<T> scale(const Tensor<T>&, T);                   \
  template Tensor<T> gelu(const Tensor<T>&);                       \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);       \
  template Tensor<T> sum(const Tensor<T>&);                        \
  template Tensor<T> mean(const Tensor<T>&);

CATCD_INSTANTIATE(float)
CATCD_INSTANTIATE(double)

}  // namespace catcd::ops
