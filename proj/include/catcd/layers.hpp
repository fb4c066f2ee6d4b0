#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "catcd/ops.hpp"
#include "catcd/params.hpp"

// Thin parameter holders shared by the encoder, the CAT blocks and the
// decoder. Each create() registers its tensors in a ParamSet under `name`.
namespace catcd::nn {

using Rng = std::mt19937_64;

/// Normal(0, std) truncated to +-2 std.
template <typename T>
Tensor<T> trunc_normal(Shape shape, double std, Rng& rng);

/// He-uniform: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng);

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // C_out x C_in x k x k
  Tensor<T> bias;    // C_out
  std::size_t padding = 0;

  static Conv2d create(ParamSet<T>& ps, const std::string& name, std::size_t in_channels,
                       std::size_t out_channels, std::size_t kernel, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::conv2d(x, weight, bias, padding); }
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // in x out (applied as x * W)
  Tensor<T> bias;    // out, or undefined

  static Linear create(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out,
                       Rng& rng, double std = 0.02, bool with_bias = true);
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNorm create(ParamSet<T>& ps, const std::string& name, std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x) const { return ops::layer_norm(x, gamma, beta); }
};

/// Forward-pass switches for layers whose behavior differs in training.
struct Mode {
  ops::NormMode norm = ops::NormMode::train;
  bool update_stats = true;

  static Mode training() { return {ops::NormMode::train, true}; }
  static Mode inference() { return {ops::NormMode::eval, false}; }
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma;  // initialized to 1
  Tensor<T> beta;   // initialized to 0
  // Shares storage with the ParamSet buffers; mutable because running
  // statistics update during otherwise-const forward passes.
  mutable ops::BatchNormState<T> state;

  static BatchNorm2d create(ParamSet<T>& ps, const std::string& name, std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x, Mode mode) const {
    return ops::batch_norm2d(x, gamma, beta, state, mode.norm, mode.update_stats);
  }
};

}  // namespace catcd::nn
