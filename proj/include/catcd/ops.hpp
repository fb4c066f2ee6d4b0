#pragma once

#include <cstddef>
#include <vector>

#include "catcd/tensor.hpp"

// Differentiable tensor operations. Every function computes its result
// eagerly and, when a tape is active and an input requires a gradient,
// records the matching backward rule.
//
// Broadcasting is limited to bias-add and scalar scaling; any other shape
// disagreement raises ShapeError.
namespace catcd::ops {

// ---- elementwise -----------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF (erf form).
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

/// Numerically stable softmax along `axis` (max subtracted per slice).
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// ---- reductions ------------------------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// ---- linear algebra --------------------------------------------------------

/// a[M x K] * b[K x P].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched product: a[G x M x K] * b[G x K x P], or b^T when `transpose_b`
/// (b is then [G x P x K]).
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

/// x[... x K] * weight[K x P] + bias[P]. Leading axes are treated as rows.
/// `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Adds bias[C] along the last axis.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

// ---- layout ----------------------------------------------------------------

/// Same values, new shape with equal element count.
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Axis permutation; output axis i is input axis perm[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);

/// Concatenation of two B x C x H x W maps along the channel axis.
template <typename T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// B x C x H x W -> B x 1 x H x W holding channel `c`.
template <typename T> Tensor<T> select_channel(const Tensor<T>& x, std::size_t c);

/// Depth-to-space: B x (C r^2) x H x W -> B x C x rH x rW.
/// Output (c, h*r+i, w*r+j) reads input channel c*r*r + i*r + j.
template <typename T> Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r);

/// Exact inverse of pixel_shuffle.
template <typename T> Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r);

// ---- spatial ---------------------------------------------------------------

/// Stride-1 cross-correlation with zero padding. Kernel size must be 1 or 3
/// with padding (k-1)/2, so the spatial size is preserved. `bias` may be
/// undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t padding);

/// 2x2 average pooling with stride 2. H and W must be even.
template <typename T> Tensor<T> avg_pool2(const Tensor<T>& x);

/// Mean over all spatial positions: B x C x H x W -> B x C.
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Multiplies every channel of x[B x C x H x W] by weights[B x 1 x H x W].
template <typename T>
Tensor<T> scale_pixels(const Tensor<T>& x, const Tensor<T>& weights);

// ---- normalization ---------------------------------------------------------

/// Normalizes over the last axis, then gamma * xhat + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

enum class NormMode { train, eval };

/// Running statistics of a batch-norm layer. `tracked` counts train steps
/// (stored as a one-element tensor so it checkpoints alongside the stats).
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  Tensor<T> tracked;
  T momentum = T(0.1);
  T eps = T(1e-5);

  static BatchNormState create(std::size_t channels);
  bool initialized() const { return tracked.data()[0] > T(0); }
};

/// Per-channel normalization over batch x H x W.
///
/// Train mode normalizes with biased batch statistics and updates the running
/// statistics (running var uses the unbiased estimate) unless `update_stats`
/// is false. Eval mode reads the stored statistics only and throws
/// std::logic_error if no train step has populated them.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormState<T>& state, NormMode mode, bool update_stats = true);

}  // namespace catcd::ops
