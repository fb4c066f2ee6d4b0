#include "catcd/ops.hpp"
#include "internal.hpp"

namespace catcd::ops {

using detail::gemm;
using detail::recording;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t p = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + a.shape().str() + " x " +
                     b.shape().str());
  }
  Tensor<T> out(Shape{m, p});
  gemm(false, false, m, p, k, a.data().data(), b.data().data(), out.data().data(), false);
  if (Tape* tape = recording(a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out, m, k, p]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      if (a.requires_grad()) {
        gemm(false, true, m, k, p, g.data(), b.data().data(), a.grad_mut().data(), true);
      }
      if (b.requires_grad()) {
        gemm(true, false, k, p, m, a.data().data(), g.data(), b.grad_mut().data(), true);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  detail::require_rank(a, 3, "bmm");
  detail::require_rank(b, 3, "bmm");
  const std::size_t groups = a.dim(0);
  const std::size_t m = a.dim(1);
  const std::size_t k = a.dim(2);
  const std::size_t p = transpose_b ? b.dim(1) : b.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != groups || bk != k) {
    throw ShapeError("bmm: incompatible operands " + a.shape().str() + " and " +
                     b.shape().str() + (transpose_b ? " (transposed)" : ""));
  }
  Tensor<T> out(Shape{groups, m, p});
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  T* op = out.data().data();
  for (std::size_t g = 0; g < groups; ++g) {
    gemm(false, transpose_b, m, p, k, ap + g * m * k, bp + g * k * p, op + g * m * p, false);
  }
  if (Tape* tape = recording(a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out, groups, m, k, p, transpose_b]() mutable {
      auto gout = out.grad();
      if (gout.empty()) return;
      const T* ap = a.data().data();
      const T* bp = b.data().data();
      if (a.requires_grad()) {
        T* da = a.grad_mut().data();
        // dA = dC * op(B)^T
        for (std::size_t g = 0; g < groups; ++g) {
          gemm(false, !transpose_b, m, k, p, gout.data() + g * m * p, bp + g * k * p,
               da + g * m * k, true);
        }
      }
      if (b.requires_grad()) {
        T* db = b.grad_mut().data();
        for (std::size_t g = 0; g < groups; ++g) {
          if (transpose_b) {
            // B is P x K: dB = dC^T * A
            gemm(true, false, p, k, m, gout.data() + g * m * p, ap + g * m * k,
                 db + g * k * p, true);
          } else {
            gemm(true, false, k, p, m, ap + g * m * k, gout.data() + g * m * p,
                 db + g * k * p, true);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require_rank(weight, 2, "linear");
  const std::size_t k = weight.dim(0);
  const std::size_t p = weight.dim(1);
  if (x.shape().back() != k) {
    throw ShapeError("linear: input " + x.shape().str() + " does not match weight " +
                     weight.shape().str());
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != p)) {
    throw ShapeError("linear: bias " + bias.shape().str() + " does not match weight " +
                     weight.shape().str());
  }
  const std::size_t rows = x.numel() / k;
  std::vector<std::size_t> dims = x.shape().dims();
  dims.back() = p;
  Tensor<T> out{Shape(dims)};
  T* o = out.data().data();
  gemm(false, false, rows, p, k, x.data().data(), weight.data().data(), o, false);
  if (bias.defined()) {
    auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < p; ++j) o[r * p + j] += bv[j];
    }
  }
  if (Tape* tape = recording(x, weight, bias)) {
    out.set_requires_grad(true);
    tape->record([x, weight, bias, out, rows, k, p]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      if (x.requires_grad()) {
        gemm(false, true, rows, k, p, g.data(), weight.data().data(), x.grad_mut().data(), true);
      }
      if (weight.requires_grad()) {
        gemm(true, false, k, p, rows, x.data().data(), g.data(), weight.grad_mut().data(), true);
      }
      if (detail::wants_grad(bias)) {
        auto db = bias.grad_mut();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < p; ++j) db[j] += g[r * p + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t c = x.shape().back();
  if (bias.rank() != 1 || bias.dim(0) != c) {
    throw ShapeError("add_bias: bias " + bias.shape().str() + " does not match last axis of " +
                     x.shape().str());
  }
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  auto bv = bias.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] + bv[i % c];
  if (Tape* tape = recording(x, bias)) {
    out.set_requires_grad(true);
    tape->record([x, bias, out, c]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      if (x.requires_grad()) {
        auto d = x.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto d = bias.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) d[i % c] += g[i];
      }
    });
  }
  return out;
}

#define CATCD_INSTANTIATE(T)                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);

CATCD_INSTANTIATE(float)
CATCD_INSTANTIATE(double)

}  // namespace catcd::ops
