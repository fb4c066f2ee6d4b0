#include "catcd/model.hpp"

#include <stdexcept>
#include <string>

namespace catcd {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.encoder.stem_channels = 48;
  c.encoder.channels = {96, 192, 384};
  c.encoder.blocks = {4, 4, 6};
  c.heads = {3, 6, 12};
  return c;
}

void ModelConfig::validate() const {
  if (encoder.stem_channels == 0 || window_size == 0 || mlp_ratio == 0) {
    throw std::invalid_argument("model config: stem channels, window size and mlp ratio must be > 0");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (encoder.channels[i] == 0 || heads[i] == 0 || encoder.channels[i] % heads[i] != 0) {
      throw std::invalid_argument("model config: scale " + std::to_string(i + 1) + " has " +
                                  std::to_string(encoder.channels[i]) + " channels and " +
                                  std::to_string(heads[i]) + " heads");
    }
  }
}

template <typename T>
CATNet<T> CATNet<T>::create(ParamSet<T>& ps, const ModelConfig& config, nn::Rng& rng) {
  config.validate();
  CATNet net;
  net.config = config;
  net.encoder = enc::Encoder<T>::create(ps, "enc", config.encoder, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    cat::BlockConfig bc;
    bc.channels = config.encoder.channels[i];
    bc.heads = config.heads[i];
    bc.window_size = config.window_size;
    bc.mlp_ratio = config.mlp_ratio;
    bc.use_gc_cross = config.use_gc_cross;
    bc.use_self_attn = config.use_self_attn;
    net.cat[i] = cat::CATModule<T>::create(ps, "cat.s" + std::to_string(i + 1), bc,
                                           config.cat_blocks, rng);
  }
  net.decoder =
      dec::DenseUpsampleDecoder<T>::create(ps, "dud", config.encoder.channels, config.use_dud, rng);
  net.classifier = dec::Classifier<T>::create(ps, "cls", config.encoder.channels[0], rng);
  return net;
}

template <typename T>
ModelOutput<T> CATNet<T>::operator()(const Tensor<T>& img1, const Tensor<T>& img2,
                                     nn::Mode mode) const {
  auto [f1, f2] = encoder.encode_pair(img1, img2, mode);
  ModelOutput<T> out;
  for (std::size_t i = 0; i < 3; ++i) {
    out.scales[i] = cat[i](f1[i], f2[i]);
    for (const auto& blk : out.scales[i].blocks) out.masks.push_back(blk.mask_logits);
  }
  const Tensor<T> fused = decoder(out.scales[0].features, out.scales[1].features,
                                  out.scales[2].features, mode);
  out.logits = classifier(fused, mode);
  return out;
}

template struct CATNet<float>;
template struct CATNet<double>;

}  // namespace catcd
