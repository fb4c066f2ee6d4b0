#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "catcd/cat.hpp"
#include "catcd/decoder.hpp"
#include "catcd/encoder.hpp"

namespace catcd {

struct ModelConfig {
  enc::EncoderConfig encoder;
  std::array<std::size_t, 3> heads{2, 4, 8};
  std::size_t window_size = 8;
  std::size_t mlp_ratio = 4;
  /// CAT blocks per scale; 0 keeps only the difference-feature fusion.
  std::size_t cat_blocks = 2;
  bool use_gc_cross = true;
  bool use_self_attn = true;
  bool use_dud = true;

  /// 32/64/128 channels, 2-2-2 encoder blocks, heads 2/4/8.
  static ModelConfig desk();
  /// 96/192/384 channels, 4-4-6 encoder blocks, heads 3/6/12.
  static ModelConfig paper();

  /// Throws std::invalid_argument on inconsistent widths or head counts.
  void validate() const;
};

template <typename T>
struct ModelOutput {
  Tensor<T> logits;  // B x 2 x H x W at image resolution
  /// Deep-supervision mask logits ordered scale-major, block-minor.
  std::vector<Tensor<T>> masks;
  std::array<cat::ScaleOutput<T>, 3> scales;
};

/// Siamese encoder -> per-scale CAT modules -> dense upsample decoder ->
/// classifier.
template <typename T>
struct CATNet {
  ModelConfig config;
  enc::Encoder<T> encoder;
  std::array<cat::CATModule<T>, 3> cat;
  dec::DenseUpsampleDecoder<T> decoder;
  dec::Classifier<T> classifier;

  static CATNet create(ParamSet<T>& ps, const ModelConfig& config, nn::Rng& rng);
  ModelOutput<T> operator()(const Tensor<T>& img1, const Tensor<T>& img2, nn::Mode mode) const;
};

}  // namespace catcd
