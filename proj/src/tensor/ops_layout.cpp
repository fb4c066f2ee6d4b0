#include <algorithm>
#include <numeric>

#include "catcd/ops.hpp"
#include "internal.hpp"

namespace catcd::ops {

using detail::recording;

namespace {

// Gathers out[i] = in[index[i]]; backward scatters the gradient back.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, std::vector<std::size_t> index) {
  Tensor<T> out(std::move(out_shape));
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[index[i]];
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([x, out, index = std::move(index)]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      auto d = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) d[index[i]] += g[i];
    });
  }
  return out;
}

void require_map(const Shape& s, const char* op) {
  if (s.rank() != 4) throw ShapeError(std::string(op) + ": expected B x C x H x W, got " + s.str());
}

}  // namespace

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape.numel() != x.numel()) {
    throw ShapeError("reshape: cannot view " + x.shape().str() + " as " + shape.str());
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      auto d = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const Shape& in = x.shape();
  const std::size_t rank = in.rank();
  std::vector<std::size_t> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> expected(rank);
  std::iota(expected.begin(), expected.end(), std::size_t{0});
  if (sorted != expected) throw ShapeError("permute: invalid axis order for " + in.str());

  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in[i];
  std::vector<std::size_t> out_dims(rank);
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_dims[i] = in[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }

  std::vector<std::size_t> index(x.numel());
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    index[i] = offset;
    for (std::size_t ax = rank; ax-- > 0;) {
      offset += src_strides[ax];
      if (++counter[ax] < out_dims[ax]) break;
      offset -= src_strides[ax] * out_dims[ax];
      counter[ax] = 0;
    }
  }
  return gather(x, Shape(out_dims), std::move(index));
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_map(a.shape(), "concat_channels");
  require_map(b.shape(), "concat_channels");
  const std::size_t batch = a.dim(0);
  const std::size_t ca = a.dim(1);
  const std::size_t cb = b.dim(1);
  const std::size_t hw = a.dim(2) * a.dim(3);
  if (b.dim(0) != batch || b.dim(2) != a.dim(2) || b.dim(3) != a.dim(3)) {
    throw ShapeError("concat_channels: " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor<T> out(Shape{batch, ca + cb, a.dim(2), a.dim(3)});
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(av.begin() + n * ca * hw, ca * hw, o.begin() + n * (ca + cb) * hw);
    std::copy_n(bv.begin() + n * cb * hw, cb * hw, o.begin() + (n * (ca + cb) + ca) * hw);
  }
  if (Tape* tape = recording(a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out, batch, ca, cb, hw]() mutable {
      auto g = out.grad();
      if (g.empty()) return;
      if (a.requires_grad()) {
        auto d = a.grad_mut();
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t i = 0; i < ca * hw; ++i) d[n * ca * hw + i] += g[n * (ca + cb) * hw + i];
        }
      }
      if (b.requires_grad()) {
        auto d = b.grad_mut();
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t i = 0; i < cb * hw; ++i) {
            d[n * cb * hw + i] += g[(n * (ca + cb) + ca) * hw + i];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> select_channel(const Tensor<T>& x, std::size_t c) {
  require_map(x.shape(), "select_channel");
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  if (c >= channels) throw ShapeError("select_channel: channel out of range for " + x.shape().str());
  std::vector<std::size_t> index(batch * hw);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t i = 0; i < hw; ++i) index[n * hw + i] = (n * channels + c) * hw + i;
  }
  return gather(x, Shape{batch, 1, x.dim(2), x.dim(3)}, std::move(index));
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
  require_map(x.shape(), "pixel_shuffle");
  if (r == 0 || x.dim(1) % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(x.dim(1)) +
                     " channels not divisible by r^2 = " + std::to_string(r * r));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t cin = x.dim(1);
  const std::size_t c = cin / (r * r);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  const std::size_t oh = h * r;
  const std::size_t ow = w * r;
  std::vector<std::size_t> index(x.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const std::size_t src_c = ch * r * r + (y % r) * r + (xx % r);
          index[i++] = ((n * cin + src_c) * h + y / r) * w + xx / r;
        }
      }
    }
  }
  return gather(x, Shape{batch, c, oh, ow}, std::move(index));
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r) {
  require_map(x.shape(), "pixel_unshuffle");
  if (r == 0 || x.dim(2) % r != 0 || x.dim(3) % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial size of " + x.shape().str() +
                     " not divisible by " + std::to_string(r));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t c = x.dim(1);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  const std::size_t oc = c * r * r;
  const std::size_t oh = h / r;
  const std::size_t ow = w / r;
  std::vector<std::size_t> index(x.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t och = 0; och < oc; ++och) {
      const std::size_t ch = och / (r * r);
      const std::size_t dy = (och / r) % r;
      const std::size_t dx = och % r;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          index[i++] = ((n * c + ch) * h + y * r + dy) * w + xx * r + dx;
        }
      }
    }
  }
  return gather(x, Shape{batch, oc, oh, ow}, std::move(index));
}

#define CATCD_INSTANTIATE(T)                                                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                              \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);    \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> select_channel(const Tensor<T>&, std::size_t);                 \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, std::size_t);                  \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, std::size_t);

CATCD_INSTANTIATE(float)
CATCD_INSTANTIATE(double)

}  // namespace catcd::ops
