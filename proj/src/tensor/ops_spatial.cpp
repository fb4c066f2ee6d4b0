#include <algorithm>

#include "catcd/ops.hpp"
#include "internal.hpp"

namespace catcd::ops {

using detail::gemm;
using detail::recording;

namespace {

void require_map(const Shape& s, const char* op) {
  if (s.rank() != 4) throw ShapeError(std::string(op) + ": expected B x C x H x W, got " + s.str());
}

// col[(c*k*k + ky*k + kx), y*w + x] = img[c, y+ky-pad, x+kx-pad] (0 outside).
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t pad, T* col) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
          T* dst = row + y * w;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill_n(dst, w, T(0));
            continue;
          }
          const T* src = img + (c * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(pad);
            dst[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
                std::size_t pad, T* img) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = img + (c * h + static_cast<std::size_t>(sy)) * w;
          const T* src = row + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(pad);
            if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t padding) {
  require_map(x.shape(), "conv2d");
  detail::require_rank(weight, 4, "conv2d");
  const std::size_t batch = x.dim(0);
  const std::size_t cin = x.dim(1);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  const std::size_t cout = weight.dim(0);
  const std::size_t k = weight.dim(2);
  if (k != weight.dim(3) || (k != 1 && k != 3)) {
    throw ShapeError("conv2d: unsupported kernel " + weight.shape().str() + " (1x1 or 3x3 only)");
  }
  if (padding != (k - 1) / 2) {
    throw ShapeError("conv2d: padding must be " + std::to_string((k - 1) / 2) + " for k=" +
                     std::to_string(k));
  }
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d: input " + x.shape().str() + " has " + std::to_string(cin) +
                     " channels, weight " + weight.shape().str() + " expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError("conv2d: bias " + bias.shape().str() + " does not match weight " +
                     weight.shape().str());
  }
  const std::size_t hw = h * w;
  const std::size_t patch = cin * k * k;

  Tensor<T> out(Shape{batch, cout, h, w});
  std::vector<T> col(k == 1 ? 0 : patch * hw);
  const T* xp = x.data().data();
  const T* wp = weight.data().data();
  T* op = out.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    const T* src = xp + n * cin * hw;
    if (k != 1) {
      im2col(src, cin, h, w, k, padding, col.data());
      src = col.data();
    }
    T* dst = op + n * cout * hw;
    gemm(false, false, cout, hw, patch, wp, src, dst, false);
    if (bias.defined()) {
      auto bv = bias.data();
      for (std::size_t c = 0; c < cout; ++c) {
        std::for_each(dst + c * hw, dst + (c + 1) * hw, [v = bv[c]](T& o) { o += v; });
      }
    }
  }

  if (Tape* tape = recording(x, weight, bias)) {
    out.set_requires_grad(true);
    tape->record([x, weight, bias, out, batch, cin, cout, h, w, k, padding, hw, patch]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      std::vector<T> col(k == 1 ? 0 : patch * hw);
      std::vector<T> dcol(k == 1 ? 0 : patch * hw);
      const T* xp = x.data().data();
      const T* wp = weight.data().data();
      T* dw = weight.requires_grad() ? weight.grad_mut().data() : nullptr;
      T* dx = x.requires_grad() ? x.grad_mut().data() : nullptr;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* gn = g.data() + n * cout * hw;
        if (dw != nullptr) {
          const T* src = xp + n * cin * hw;
          if (k != 1) {
            im2col(src, cin, h, w, k, padding, col.data());
            src = col.data();
          }
          gemm(false, true, cout, patch, hw, gn, src, dw, true);
        }
        if (dx != nullptr) {
          if (k == 1) {
            gemm(true, false, cin, hw, cout, wp, gn, dx + n * cin * hw, true);
          } else {
            gemm(true, false, patch, hw, cout, wp, gn, dcol.data(), false);
            col2im_add(dcol.data(), cin, h, w, k, padding, dx + n * cin * hw);
          }
        }
      }
      if (detail::wants_grad(bias)) {
        auto db = bias.grad_mut();
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t c = 0; c < cout; ++c) {
            const T* gc = g.data() + (n * cout + c) * hw;
            T acc = 0;
            for (std::size_t i = 0; i < hw; ++i) acc += gc[i];
            db[c] += acc;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  require_map(x.shape(), "avg_pool2");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("avg_pool2: spatial size of " + x.shape().str() + " is not even");
  }
  const std::size_t oh = h / 2;
  const std::size_t ow = w / 2;
  Tensor<T> out(Shape{x.dim(0), x.dim(1), oh, ow});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t s = (p * h + 2 * y) * w + 2 * xx;
        o[(p * oh + y) * ow + xx] = T(0.25) * (v[s] + v[s + 1] + v[s + w] + v[s + w + 1]);
      }
    }
  }
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([x, out, planes, h, w, oh, ow]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      auto d = x.grad_mut();
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t xx = 0; xx < ow; ++xx) {
            const T q = T(0.25) * g[(p * oh + y) * ow + xx];
            const std::size_t s = (p * h + 2 * y) * w + 2 * xx;
            d[s] += q;
            d[s + 1] += q;
            d[s + w] += q;
            d[s + w + 1] += q;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_map(x.shape(), "global_avg_pool");
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{batch, channels});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t p = 0; p < batch * channels; ++p) {
    T acc = 0;
    for (std::size_t i = 0; i < hw; ++i) acc += v[p * hw + i];
    o[p] = acc / static_cast<T>(hw);
  }
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([x, out, batch, channels, hw]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      auto d = x.grad_mut();
      for (std::size_t p = 0; p < batch * channels; ++p) {
        const T q = g[p] / static_cast<T>(hw);
        for (std::size_t i = 0; i < hw; ++i) d[p * hw + i] += q;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale_pixels(const Tensor<T>& x, const Tensor<T>& weights) {
  require_map(x.shape(), "scale_pixels");
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  if (weights.shape() != Shape{batch, 1, x.dim(2), x.dim(3)}) {
    throw ShapeError("scale_pixels: weights " + weights.shape().str() + " do not match " +
                     x.shape().str());
  }
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  auto m = weights.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) o[base + i] = v[base + i] * m[n * hw + i];
    }
  }
  if (Tape* tape = recording(x, weights)) {
    out.set_requires_grad(true);
    tape->record([x, weights, out, batch, channels, hw]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      auto v = x.data();
      auto m = weights.data();
      if (x.requires_grad()) {
        auto d = x.grad_mut();
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (n * channels + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) d[base + i] += g[base + i] * m[n * hw + i];
          }
        }
      }
      if (weights.requires_grad()) {
        auto d = weights.grad_mut();
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (n * channels + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) d[n * hw + i] += g[base + i] * v[base + i];
          }
        }
      }
    });
  }
  return out;
}

#define CATCD_INSTANTIATE(T)                                                                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t); \
  template Tensor<T> avg_pool2(const Tensor<T>&);                                            \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                      \
  template Tensor<T> scale_pixels(const Tensor<T>&, const Tensor<T>&);

CATCD_INSTANTIATE(float)
CATCD_INSTANTIATE(double)

}  // namespace catcd::ops
