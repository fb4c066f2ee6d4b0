#include "catcd/cat.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "../tensor/internal.hpp"

namespace catcd::cat {

std::size_t effective_window(std::size_t window_size, std::size_t height, std::size_t width) {
  const std::size_t s = std::min({window_size, height, width});
  if (s == 0 || height % s != 0 || width % s != 0) {
    throw ShapeError("window size " + std::to_string(s) + " does not tile a " +
                     std::to_string(height) + "x" + std::to_string(width) + " map");
  }
  return s;
}

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& map) {
  detail::require_rank(map, 4, "to_tokens");
  const std::size_t b = map.dim(0), c = map.dim(1), h = map.dim(2), w = map.dim(3);
  return ops::reshape(ops::permute(map, {0, 2, 3, 1}), Shape{b, h * w, c});
}

template <typename T>
Tensor<T> from_tokens(const Tensor<T>& tokens, std::size_t height, std::size_t width) {
  detail::require_rank(tokens, 3, "from_tokens");
  const std::size_t b = tokens.dim(0), c = tokens.dim(2);
  if (tokens.dim(1) != height * width) {
    throw ShapeError("from_tokens: " + tokens.shape().str() + " is not a " +
                     std::to_string(height) + "x" + std::to_string(width) + " map");
  }
  return ops::permute(ops::reshape(tokens, Shape{b, height, width, c}), {0, 3, 1, 2});
}

template <typename T>
Tensor<T> partition_tokens(const Tensor<T>& tokens, std::size_t height, std::size_t width,
                           std::size_t window) {
  detail::require_rank(tokens, 3, "partition_tokens");
  if (window == 0 || height % window != 0 || width % window != 0 ||
      tokens.dim(1) != height * width) {
    throw ShapeError("partition_tokens: cannot split " + tokens.shape().str() + " (" +
                     std::to_string(height) + "x" + std::to_string(width) + ") into " +
                     std::to_string(window) + "x" + std::to_string(window) + " windows");
  }
  const std::size_t b = tokens.dim(0), c = tokens.dim(2);
  const std::size_t gh = height / window, gw = width / window;
  auto grid = ops::reshape(tokens, Shape{b, gh, window, gw, window, c});
  return ops::reshape(ops::permute(grid, {0, 1, 3, 2, 4, 5}),
                      Shape{b * gh * gw, window * window, c});
}

template <typename T>
Tensor<T> merge_tokens(const Tensor<T>& windows, std::size_t batch, std::size_t height,
                       std::size_t width, std::size_t window) {
  detail::require_rank(windows, 3, "merge_tokens");
  const std::size_t gh = height / window, gw = width / window;
  const std::size_t c = windows.dim(2);
  if (windows.dim(0) != batch * gh * gw || windows.dim(1) != window * window) {
    throw ShapeError("merge_tokens: " + windows.shape().str() + " does not hold " +
                     std::to_string(window) + "x" + std::to_string(window) + " windows of a " +
                     std::to_string(height) + "x" + std::to_string(width) + " map");
  }
  auto grid = ops::reshape(windows, Shape{batch, gh, gw, window, window, c});
  return ops::reshape(ops::permute(grid, {0, 1, 3, 2, 4, 5}), Shape{batch, height * width, c});
}

template <typename T>
Tensor<T> window_partition(const Tensor<T>& map, std::size_t window) {
  detail::require_rank(map, 4, "window_partition");
  return partition_tokens(to_tokens(map), map.dim(2), map.dim(3), window);
}

template <typename T>
Tensor<T> window_merge(const Tensor<T>& windows, std::size_t batch, std::size_t height,
                       std::size_t width, std::size_t window) {
  return from_tokens(merge_tokens(windows, batch, height, width, window), height, width);
}

template <typename T>
Tensor<T> compute_idf(const Tensor<T>& x1, const Tensor<T>& x2, const nn::Conv2d<T>& fuse) {
  if (x1.shape() != x2.shape()) {
    throw ShapeError("compute_idf: temporal features differ, " + x1.shape().str() + " vs " +
                     x2.shape().str());
  }
  return ops::add(fuse(ops::concat_channels(x1, x2)), ops::abs(ops::sub(x2, x1)));
}

template <typename T>
GCRepresentation<T> learn_gc(const Tensor<T>& x_in, const nn::Conv2d<T>& mask_conv) {
  GCRepresentation<T> gc;
  gc.mask_logits = mask_conv(x_in);
  if (gc.mask_logits.dim(1) != 2) {
    throw ShapeError("learn_gc: mask conv must produce 2 channels, got " +
                     gc.mask_logits.shape().str());
  }
  gc.source_mask = ops::softmax(gc.mask_logits, 1);
  gc.vector = ops::global_avg_pool(ops::scale_pixels(x_in, ops::select_channel(gc.source_mask, 1)));
  return gc;
}

namespace {

struct HeadGeometry {
  std::size_t batch, tokens, channels, heads, width;
};

template <typename T>
HeadGeometry head_geometry(const Tensor<T>& queries, const Tensor<T>& key, std::size_t heads,
                           const char* op) {
  detail::require_rank(queries, 3, op);
  const std::size_t b = queries.dim(0), n = queries.dim(1), c = queries.dim(2);
  if (key.shape() != Shape{b, c}) {
    throw ShapeError(std::string(op) + ": key " + key.shape().str() + " does not match queries " +
                     queries.shape().str());
  }
  if (heads == 0 || c % heads != 0) {
    throw ShapeError(std::string(op) + ": " + std::to_string(c) +
                     " channels not divisible by " + std::to_string(heads) + " heads");
  }
  return {b, n, c, heads, c / heads};
}

}  // namespace

template <typename T>
Tensor<T> cosine_weights(const Tensor<T>& queries, const Tensor<T>& key, std::size_t heads,
                         T eps) {
  const auto g = head_geometry(queries, key, heads, "cosine_weights");
  Tensor<T> w(Shape{g.batch, g.tokens, g.heads});
  auto q = queries.data();
  auto k = key.data();
  auto o = w.data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t h = 0; h < g.heads; ++h) {
      const T* kp = k.data() + b * g.channels + h * g.width;
      T kk = 0;
      for (std::size_t j = 0; j < g.width; ++j) kk += kp[j] * kp[j];
      const T knorm = std::sqrt(kk);
      for (std::size_t i = 0; i < g.tokens; ++i) {
        const T* qp = q.data() + (b * g.tokens + i) * g.channels + h * g.width;
        T dot = 0;
        T qq = 0;
        for (std::size_t j = 0; j < g.width; ++j) {
          dot += qp[j] * kp[j];
          qq += qp[j] * qp[j];
        }
        o[(b * g.tokens + i) * g.heads + h] = dot / (std::sqrt(qq) * knorm + eps);
      }
    }
  }
  return w;
}

template <typename T>
Tensor<T> cosine_head_attention(const Tensor<T>& queries, const Tensor<T>& key,
                                const Tensor<T>& value, std::size_t heads, T eps) {
  const auto g = head_geometry(queries, key, heads, "cosine_head_attention");
  if (value.shape() != key.shape()) {
    throw ShapeError("cosine_head_attention: value " + value.shape().str() +
                     " does not match key " + key.shape().str());
  }
  const std::size_t rows = g.batch * g.tokens * g.heads;
  // Per (b, i, h): weight, dot, |q|, denominator. Per (b, h): |k|.
  auto weight = std::make_shared<std::vector<T>>(rows);
  auto dots = std::make_shared<std::vector<T>>(rows);
  auto qnorm = std::make_shared<std::vector<T>>(rows);
  auto denom = std::make_shared<std::vector<T>>(rows);
  auto knorm = std::make_shared<std::vector<T>>(g.batch * g.heads);

  Tensor<T> out(queries.shape());
  auto q = queries.data();
  auto k = key.data();
  auto v = value.data();
  auto o = out.data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t h = 0; h < g.heads; ++h) {
      const std::size_t off = b * g.channels + h * g.width;
      T kk = 0;
      for (std::size_t j = 0; j < g.width; ++j) kk += k[off + j] * k[off + j];
      const T m = std::sqrt(kk);
      (*knorm)[b * g.heads + h] = m;
      for (std::size_t i = 0; i < g.tokens; ++i) {
        const std::size_t qoff = (b * g.tokens + i) * g.channels + h * g.width;
        T dot = 0;
        T qq = 0;
        for (std::size_t j = 0; j < g.width; ++j) {
          dot += q[qoff + j] * k[off + j];
          qq += q[qoff + j] * q[qoff + j];
        }
        const std::size_t r = (b * g.tokens + i) * g.heads + h;
        const T n = std::sqrt(qq);
        const T den = n * m + eps;
        const T wgt = dot / den;
        (*weight)[r] = wgt;
        (*dots)[r] = dot;
        (*qnorm)[r] = n;
        (*denom)[r] = den;
        for (std::size_t j = 0; j < g.width; ++j) o[qoff + j] = wgt * v[off + j];
      }
    }
  }

  if (Tape* tape = detail::recording(queries, key, value)) {
    out.set_requires_grad(true);
    tape->record([queries, key, value, out, g, weight, dots, qnorm, denom, knorm]() {
      auto grad = out.grad();
      if (grad.empty()) return;
      auto q = queries.data();
      auto k = key.data();
      auto v = value.data();
      auto dq = queries.requires_grad() ? queries.grad_mut() : std::span<T>{};
      auto dk = key.requires_grad() ? key.grad_mut() : std::span<T>{};
      auto dv = value.requires_grad() ? value.grad_mut() : std::span<T>{};
      for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t h = 0; h < g.heads; ++h) {
          const std::size_t off = b * g.channels + h * g.width;
          const T m = (*knorm)[b * g.heads + h];
          for (std::size_t i = 0; i < g.tokens; ++i) {
            const std::size_t qoff = (b * g.tokens + i) * g.channels + h * g.width;
            const std::size_t r = (b * g.tokens + i) * g.heads + h;
            const T wgt = (*weight)[r];
            T dw = 0;
            for (std::size_t j = 0; j < g.width; ++j) dw += grad[qoff + j] * v[off + j];
            if (!dv.empty()) {
              for (std::size_t j = 0; j < g.width; ++j) dv[off + j] += wgt * grad[qoff + j];
            }
            const T den = (*denom)[r];
            const T n = (*qnorm)[r];
            // d(dot/den): d dot = k (or q); d den = m q/|q| (or n k/|k|).
            const T ratio = (*dots)[r] / (den * den);
            if (!dq.empty()) {
              const T qcoef = n > T(0) ? ratio * m / n : T(0);
              for (std::size_t j = 0; j < g.width; ++j) {
                dq[qoff + j] += dw * (k[off + j] / den - qcoef * q[qoff + j]);
              }
            }
            if (!dk.empty()) {
              const T kcoef = m > T(0) ? ratio * n / m : T(0);
              for (std::size_t j = 0; j < g.width; ++j) {
                dk[off + j] += dw * (q[qoff + j] / den - kcoef * k[off + j]);
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
CrossAttention<T> CrossAttention<T>::create(ParamSet<T>& ps, const std::string& name,
                                            std::size_t channels, std::size_t heads,
                                            nn::Rng& rng) {
  if (heads == 0 || channels % heads != 0) {
    throw ShapeError("cross-attention: " + std::to_string(channels) +
                     " channels not divisible by " + std::to_string(heads) + " heads");
  }
  CrossAttention a;
  a.query = nn::Linear<T>::create(ps, name + ".q", channels, channels, rng);
  a.key = nn::Linear<T>::create(ps, name + ".k", channels, channels, rng);
  a.value = nn::Linear<T>::create(ps, name + ".v", channels, channels, rng);
  a.out = nn::Linear<T>::create(ps, name + ".o", channels, channels, rng, 0.002, false);
  a.norm = nn::LayerNorm<T>::create(ps, name + ".norm", channels);
  a.heads = heads;
  return a;
}

template <typename T>
Tensor<T> CrossAttention<T>::operator()(const Tensor<T>& x_df, const Tensor<T>& gc) const {
  auto attended = cosine_head_attention(query(x_df), key(gc), value(gc), heads);
  return norm(ops::add(x_df, out(attended)));
}

template <typename T>
WindowSelfAttention<T> WindowSelfAttention<T>::create(ParamSet<T>& ps, const std::string& name,
                                                      std::size_t channels, std::size_t heads,
                                                      nn::Rng& rng) {
  if (heads == 0 || channels % heads != 0) {
    throw ShapeError("self-attention: " + std::to_string(channels) +
                     " channels not divisible by " + std::to_string(heads) + " heads");
  }
  WindowSelfAttention a;
  a.query = nn::Linear<T>::create(ps, name + ".q", channels, channels, rng);
  a.key = nn::Linear<T>::create(ps, name + ".k", channels, channels, rng);
  a.value = nn::Linear<T>::create(ps, name + ".v", channels, channels, rng);
  a.out = nn::Linear<T>::create(ps, name + ".o", channels, channels, rng);
  a.norm = nn::LayerNorm<T>::create(ps, name + ".norm", channels);
  a.heads = heads;
  return a;
}

template <typename T>
Tensor<T> WindowSelfAttention<T>::operator()(const Tensor<T>& windows) const {
  detail::require_rank(windows, 3, "window_self_attention");
  const std::size_t g = windows.dim(0), s = windows.dim(1), c = windows.dim(2);
  const std::size_t d = c / heads;
  auto split = [&](const Tensor<T>& t) {
    return ops::reshape(ops::permute(ops::reshape(t, Shape{g, s, heads, d}), {0, 2, 1, 3}),
                        Shape{g * heads, s, d});
  };
  auto q = split(query(windows));
  auto k = split(key(windows));
  auto v = split(value(windows));
  auto scores = ops::scale(ops::bmm(q, k, true), T(1) / std::sqrt(static_cast<T>(d)));
  auto context = ops::bmm(ops::softmax(scores, 2), v);
  auto merged = ops::reshape(
      ops::permute(ops::reshape(context, Shape{g, heads, s, d}), {0, 2, 1, 3}), Shape{g, s, c});
  return norm(ops::add(windows, out(merged)));
}

template <typename T>
FeedForward<T> FeedForward<T>::create(ParamSet<T>& ps, const std::string& name,
                                      std::size_t channels, std::size_t mlp_ratio, nn::Rng& rng) {
  FeedForward f;
  f.fc1 = nn::Linear<T>::create(ps, name + ".fc1", channels, mlp_ratio * channels, rng);
  f.fc2 = nn::Linear<T>::create(ps, name + ".fc2", mlp_ratio * channels, channels, rng);
  f.norm = nn::LayerNorm<T>::create(ps, name + ".norm", channels);
  return f;
}

template <typename T>
Tensor<T> FeedForward<T>::operator()(const Tensor<T>& x) const {
  return norm(ops::add(x, fc2(ops::gelu(fc1(x)))));
}

template <typename T>
CATBlock<T> CATBlock<T>::create(ParamSet<T>& ps, const std::string& name,
                                const BlockConfig& config, nn::Rng& rng) {
  CATBlock blk;
  blk.config = config;
  blk.mask_conv = nn::Conv2d<T>::create(ps, name + ".mask_conv", config.channels, 2, 3, rng);
  if (config.use_gc_cross) {
    blk.cross = CrossAttention<T>::create(ps, name + ".cross", config.channels, config.heads, rng);
  }
  if (config.use_self_attn) {
    blk.self_attn =
        WindowSelfAttention<T>::create(ps, name + ".self", config.channels, config.heads, rng);
  }
  blk.ffn = FeedForward<T>::create(ps, name + ".ffn", config.channels, config.mlp_ratio, rng);
  return blk;
}

template <typename T>
BlockOutput<T> CATBlock<T>::operator()(const Tensor<T>& x) const {
  detail::require_rank(x, 4, "cat_block");
  const std::size_t b = x.dim(0), h = x.dim(2), w = x.dim(3);
  BlockOutput<T> out;
  out.input_tokens = to_tokens(x);
  Tensor<T> tokens = out.input_tokens;
  if (cross) {
    auto gc = learn_gc(x, mask_conv);
    out.mask_logits = gc.mask_logits;
    out.gc_vector = gc.vector;
    tokens = (*cross)(tokens, gc.vector);
    out.cross_tokens = tokens;
  } else {
    out.mask_logits = mask_conv(x);
  }
  if (self_attn) {
    const std::size_t s = effective_window(config.window_size, h, w);
    tokens = merge_tokens((*self_attn)(partition_tokens(tokens, h, w, s)), b, h, w, s);
    out.self_tokens = tokens;
  }
  out.features = from_tokens(ffn(tokens), h, w);
  return out;
}

template <typename T>
CATModule<T> CATModule<T>::create(ParamSet<T>& ps, const std::string& name,
                                  const BlockConfig& config, std::size_t num_blocks,
                                  nn::Rng& rng) {
  CATModule m;
  m.fuse = nn::Conv2d<T>::create(ps, name + ".fuse", 2 * config.channels, config.channels, 3, rng);
  for (std::size_t j = 0; j < num_blocks; ++j) {
    m.blocks.push_back(CATBlock<T>::create(ps, name + ".b" + std::to_string(j), config, rng));
  }
  return m;
}

template <typename T>
ScaleOutput<T> CATModule<T>::operator()(const Tensor<T>& x1, const Tensor<T>& x2) const {
  ScaleOutput<T> out;
  out.idf = compute_idf(x1, x2, fuse);
  Tensor<T> x = out.idf;
  for (const auto& blk : blocks) {
    out.blocks.push_back(blk(x));
    x = out.blocks.back().features;
  }
  out.features = x;
  return out;
}

#define CATCD_INSTANTIATE(T)                                                                    \
  template Tensor<T> to_tokens(const Tensor<T>&);                                               \
  template Tensor<T> from_tokens(const Tensor<T>&, std::size_t, std::size_t);                   \
  template Tensor<T> partition_tokens(const Tensor<T>&, std::size_t, std::size_t, std::size_t); \
  template Tensor<T> merge_tokens(const Tensor<T>&, std::size_t, std::size_t, std::size_t,      \
                                  std::size_t);                                                 \
  template Tensor<T> window_partition(const Tensor<T>&, std::size_t);                           \
  template Tensor<T> window_merge(const Tensor<T>&, std::size_t, std::size_t, std::size_t,      \
                                  std::size_t);                                                 \
  template Tensor<T> compute_idf(const Tensor<T>&, const Tensor<T>&, const nn::Conv2d<T>&);     \
  template GCRepresentation<T> learn_gc(const Tensor<T>&, const nn::Conv2d<T>&);                \
  template Tensor<T> cosine_weights(const Tensor<T>&, const Tensor<T>&, std::size_t, T);        \
  template Tensor<T> cosine_head_attention(const Tensor<T>&, const Tensor<T>&,                  \
                                           const Tensor<T>&, std::size_t, T);                   \
  template struct CrossAttention<T>;                                                            \
  template struct WindowSelfAttention<T>;                                                       \
  template struct FeedForward<T>;                                                               \
  template struct CATBlock<T>;                                                                  \
  template struct CATModule<T>;

CATCD_INSTANTIATE(float)
CATCD_INSTANTIATE(double)

}  // namespace catcd::cat
