#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>

#include "catcd/layers.hpp"

// Dense upsample decoder and the binary classification head.
namespace catcd::dec {

/// conv1x1 (C_in -> C_out * r^2) -> pixel shuffle -> GELU -> BN(C_out).
template <typename T>
struct UpsampleUnit {
  nn::Conv2d<T> conv;
  nn::BatchNorm2d<T> bn;
  std::size_t factor = 2;

  static UpsampleUnit create(ParamSet<T>& ps, const std::string& name, std::size_t in_channels,
                             std::size_t out_channels, std::size_t factor, nn::Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, nn::Mode mode) const;
};

/// Fuses three difference maps (scales 1:2:3 at 4:2:1 spatial ratio).
///
/// dense:   d2' = d2 + u32(d3); d1' = d1 + u31(d3); out = d1' + u21(d2')
/// cascade: d2' = d2 + u32(d3); out = d1 + u21(d2')
template <typename T>
struct DenseUpsampleDecoder {
  UpsampleUnit<T> up32;
  std::optional<UpsampleUnit<T>> up31;  // absent in cascade mode
  UpsampleUnit<T> up21;

  static DenseUpsampleDecoder create(ParamSet<T>& ps, const std::string& name,
                                     const std::array<std::size_t, 3>& channels, bool dense,
                                     nn::Rng& rng);
  Tensor<T> operator()(const Tensor<T>& d1, const Tensor<T>& d2, const Tensor<T>& d3,
                       nn::Mode mode) const;
};

/// Upsample x4 to image resolution, conv3x3 -> GELU -> conv1x1 to 2 logits.
template <typename T>
struct Classifier {
  UpsampleUnit<T> up;
  nn::Conv2d<T> conv;
  nn::Conv2d<T> head;

  static Classifier create(ParamSet<T>& ps, const std::string& name, std::size_t in_channels,
                           nn::Rng& rng);
  Tensor<T> operator()(const Tensor<T>& fused, nn::Mode mode) const;
};

}  // namespace catcd::dec
