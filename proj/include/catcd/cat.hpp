#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "catcd/layers.hpp"

// CAT blocks: refinement of difference features around a learned change prototype.
//
// Feature maps are B x C x H x W. Token layouts are B x N x C with
// N = H * W in row-major (h, w) order. Windows are G x S x C with
// G = B * (H / s) * (W / s) and S = s * s.
namespace catcd::cat {

inline constexpr double kCosineEps = 1e-6;

struct BlockConfig {
  std::size_t channels = 32;
  std::size_t heads = 2;
  std::size_t window_size = 8;  // clipped to the feature size
  std::size_t mlp_ratio = 4;
  bool use_gc_cross = true;
  bool use_self_attn = true;
};

/// Window side actually used on an H x W map: min(window, H, W). Throws
/// ShapeError when it does not divide both H and W.
std::size_t effective_window(std::size_t window_size, std::size_t height, std::size_t width);

// ---- layout helpers --------------------------------------------------------

template <typename T> Tensor<T> to_tokens(const Tensor<T>& map);
template <typename T>
Tensor<T> from_tokens(const Tensor<T>& tokens, std::size_t height, std::size_t width);

/// B x N x C tokens of an H x W map -> G x (s*s) x C non-overlapping windows.
template <typename T>
Tensor<T> partition_tokens(const Tensor<T>& tokens, std::size_t height, std::size_t width,
                           std::size_t window);
/// Exact inverse of partition_tokens.
template <typename T>
Tensor<T> merge_tokens(const Tensor<T>& windows, std::size_t batch, std::size_t height,
                       std::size_t width, std::size_t window);

template <typename T>
Tensor<T> window_partition(const Tensor<T>& map, std::size_t window);
template <typename T>
Tensor<T> window_merge(const Tensor<T>& windows, std::size_t batch, std::size_t height,
                       std::size_t width, std::size_t window);

// ---- initial difference feature -------------------------------------------

/// Conv3x3(concat(x1, x2)) + |x2 - x1|; `fuse` maps 2C -> C channels.
template <typename T>
Tensor<T> compute_idf(const Tensor<T>& x1, const Tensor<T>& x2, const nn::Conv2d<T>& fuse);

// ---- generalized-changes representation ------------------------------------

template <typename T>
struct GCRepresentation {
  Tensor<T> vector;       // B x C, global_avg_pool(x_in * mask[:, 1])
  Tensor<T> source_mask;  // B x 2 x H x W, softmax over channels
  Tensor<T> mask_logits;  // B x 2 x H x W, kept for deep supervision
};

/// Mask logits from a 3x3 conv (C -> 2), softmax over the two channels, then
/// the changed-probability channel weights a per-sample global average.
template <typename T>
GCRepresentation<T> learn_gc(const Tensor<T>& x_in, const nn::Conv2d<T>& mask_conv);

// ---- cosine cross-attention -------------------------------------------------

/// Per-sample, per-head cosine weights between each query row and the key:
/// w[b, i, h] = <q_i, k> / (|q_i| |k| + eps) over head slice h.
/// queries: B x N x C, key: B x C. Result: B x N x heads (no gradient).
template <typename T>
Tensor<T> cosine_weights(const Tensor<T>& queries, const Tensor<T>& key, std::size_t heads,
                         T eps = T(kCosineEps));

/// Differentiable core of the cosine cross-attention: out[b, i, slice h] =
/// w[b, i, h] * v[b, slice h]. queries B x N x C; key and value B x C.
template <typename T>
Tensor<T> cosine_head_attention(const Tensor<T>& queries, const Tensor<T>& key,
                                const Tensor<T>& value, std::size_t heads,
                                T eps = T(kCosineEps));

template <typename T>
struct CrossAttention {
  nn::Linear<T> query;  // W_Q, b_Q
  nn::Linear<T> key;    // W_k, b_k
  nn::Linear<T> value;  // W_v, b_v
  nn::Linear<T> out;    // W_O (no bias), initialized near zero
  nn::LayerNorm<T> norm;
  std::size_t heads = 1;

  static CrossAttention create(ParamSet<T>& ps, const std::string& name, std::size_t channels,
                               std::size_t heads, nn::Rng& rng);

  /// LayerNorm(x_df + W_O-projected multi-head cosine attention).
  /// x_df: B x N x C tokens; gc: B x C.
  Tensor<T> operator()(const Tensor<T>& x_df, const Tensor<T>& gc) const;
};

// ---- window self-attention and feed-forward ---------------------------------

template <typename T>
struct WindowSelfAttention {
  nn::Linear<T> query;
  nn::Linear<T> key;
  nn::Linear<T> value;
  nn::Linear<T> out;
  nn::LayerNorm<T> norm;
  std::size_t heads = 1;

  static WindowSelfAttention create(ParamSet<T>& ps, const std::string& name,
                                    std::size_t channels, std::size_t heads, nn::Rng& rng);

  /// Scaled dot-product attention inside each window (no position encoding),
  /// wrapped as LayerNorm(x + attention(x)). windows: G x S x C.
  Tensor<T> operator()(const Tensor<T>& windows) const;
};

template <typename T>
struct FeedForward {
  nn::Linear<T> fc1;  // C -> ratio * C
  nn::Linear<T> fc2;  // ratio * C -> C
  nn::LayerNorm<T> norm;

  static FeedForward create(ParamSet<T>& ps, const std::string& name, std::size_t channels,
                            std::size_t mlp_ratio, nn::Rng& rng);

  /// LayerNorm(x + fc2(gelu(fc1(x)))).
  Tensor<T> operator()(const Tensor<T>& x) const;
};

// ---- blocks and per-scale modules -------------------------------------------

template <typename T>
struct BlockOutput {
  Tensor<T> features;     // B x C x H x W
  Tensor<T> mask_logits;  // B x 2 x H x W
  Tensor<T> gc_vector;    // B x C, undefined without the GC layer
  // Intermediate token maps (B x N x C) used by the feature-space diagnostic.
  Tensor<T> input_tokens;
  Tensor<T> cross_tokens;  // undefined without cross-attention
  Tensor<T> self_tokens;   // undefined without self-attention
};

/// GC layer -> cosine cross-attention -> window self-attention -> FFN.
///
/// With use_gc_cross = false the GC layer and cross-attention are skipped but
/// the mask conv is kept so deep supervision still applies. With
/// use_self_attn = false the self-attention layer is skipped.
template <typename T>
struct CATBlock {
  BlockConfig config;
  nn::Conv2d<T> mask_conv;
  std::optional<CrossAttention<T>> cross;
  std::optional<WindowSelfAttention<T>> self_attn;
  FeedForward<T> ffn;

  static CATBlock create(ParamSet<T>& ps, const std::string& name, const BlockConfig& config,
                         nn::Rng& rng);
  BlockOutput<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct ScaleOutput {
  Tensor<T> idf;
  Tensor<T> features;
  std::vector<BlockOutput<T>> blocks;
};

/// One resolution: IDF fusion followed by a stack of CAT blocks.
template <typename T>
struct CATModule {
  nn::Conv2d<T> fuse;
  std::vector<CATBlock<T>> blocks;

  static CATModule create(ParamSet<T>& ps, const std::string& name, const BlockConfig& config,
                          std::size_t num_blocks, nn::Rng& rng);
  ScaleOutput<T> operator()(const Tensor<T>& x1, const Tensor<T>& x2) const;
};

}  // namespace catcd::cat
