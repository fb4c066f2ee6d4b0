#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "catcd/layers.hpp"

// Weight-shared conv backbone producing three feature scales at 1/4, 1/8 and
// 1/16 of the input resolution.
namespace catcd::enc {

struct EncoderConfig {
  std::size_t stem_channels = 16;
  std::array<std::size_t, 3> channels{32, 64, 128};
  std::array<std::size_t, 3> blocks{2, 2, 2};
};

/// x + BN(GELU(conv3x3(x))).
template <typename T>
struct ResidualConv {
  nn::Conv2d<T> conv;
  nn::BatchNorm2d<T> bn;

  static ResidualConv create(ParamSet<T>& ps, const std::string& name, std::size_t channels,
                             nn::Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, nn::Mode mode) const;
};

template <typename T>
struct EncoderStage {
  bool downsample = false;   // 2x average pool before the stage
  nn::Conv2d<T> modulation;  // 1x1, previous width -> stage width
  std::vector<ResidualConv<T>> blocks;

  Tensor<T> operator()(const Tensor<T>& x, nn::Mode mode) const;
};

template <typename T>
using Pyramid = std::array<Tensor<T>, 3>;

template <typename T>
struct Encoder {
  EncoderConfig config;
  nn::Conv2d<T> stem1;
  nn::BatchNorm2d<T> stem_bn1;
  nn::Conv2d<T> stem2;
  nn::BatchNorm2d<T> stem_bn2;
  std::array<EncoderStage<T>, 3> stages;

  static Encoder create(ParamSet<T>& ps, const std::string& name, const EncoderConfig& config,
                        nn::Rng& rng);

  /// image: B x 3 x H x W with H, W divisible by 16.
  Pyramid<T> operator()(const Tensor<T>& image, nn::Mode mode) const;

  /// Runs both temporal images through the same parameters, one call each.
  std::pair<Pyramid<T>, Pyramid<T>> encode_pair(const Tensor<T>& img1, const Tensor<T>& img2,
                                                nn::Mode mode) const;
};

}  // namespace catcd::enc
