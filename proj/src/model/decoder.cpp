#include "catcd/decoder.hpp"

#include <algorithm>
#include <array>

namespace catcd::dec {

template <typename T>
UpsampleUnit<T> UpsampleUnit<T>::create(ParamSet<T>& ps, const std::string& name,
                                        std::size_t in_channels, std::size_t out_channels,
                                        std::size_t factor, nn::Rng& rng) {
  UpsampleUnit u;
  u.conv = nn::Conv2d<T>::create(ps, name + ".conv", in_channels,
                                 out_channels * factor * factor, 1, rng);
  u.bn = nn::BatchNorm2d<T>::create(ps, name + ".bn", out_channels);
  u.factor = factor;
  return u;
}

template <typename T>
Tensor<T> UpsampleUnit<T>::operator()(const Tensor<T>& x, nn::Mode mode) const {
  return bn(ops::gelu(ops::pixel_shuffle(conv(x), factor)), mode);
}

template <typename T>
DenseUpsampleDecoder<T> DenseUpsampleDecoder<T>::create(ParamSet<T>& ps, const std::string& name,
                                                        const std::array<std::size_t, 3>& channels,
                                                        bool dense, nn::Rng& rng) {
  DenseUpsampleDecoder d;
  d.up32 = UpsampleUnit<T>::create(ps, name + ".up32", channels[2], channels[1], 2, rng);
  if (dense) d.up31 = UpsampleUnit<T>::create(ps, name + ".up31", channels[2], channels[0], 4, rng);
  d.up21 = UpsampleUnit<T>::create(ps, name + ".up21", channels[1], channels[0], 2, rng);
  return d;
}

template <typename T>
Tensor<T> DenseUpsampleDecoder<T>::operator()(const Tensor<T>& d1, const Tensor<T>& d2,
                                              const Tensor<T>& d3, nn::Mode mode) const {
  // ops::add rejects any shape mismatch, including a wrong 4:2:1 ratio.
  const Tensor<T> d2p = ops::add(d2, up32(d3, mode));
  const Tensor<T> d1p = up31 ? ops::add(d1, (*up31)(d3, mode)) : d1;
  return ops::add(d1p, up21(d2p, mode));
}

template <typename T>
Classifier<T> Classifier<T>::create(ParamSet<T>& ps, const std::string& name,
                                    std::size_t in_channels, nn::Rng& rng) {
  const std::size_t hidden = std::max<std::size_t>(in_channels / 2, 1);
  Classifier c;
  c.up = UpsampleUnit<T>::create(ps, name + ".up", in_channels, hidden, 4, rng);
  c.conv = nn::Conv2d<T>::create(ps, name + ".conv", hidden, hidden, 3, rng);
  c.head = nn::Conv2d<T>::create(ps, name + ".head", hidden, 2, 1, rng);
  return c;
}

template <typename T>
Tensor<T> Classifier<T>::operator()(const Tensor<T>& fused, nn::Mode mode) const {
  return head(ops::gelu(conv(up(fused, mode))));
}

template struct UpsampleUnit<float>;
template struct UpsampleUnit<double>;
template struct DenseUpsampleDecoder<float>;
template struct DenseUpsampleDecoder<double>;
template struct Classifier<float>;
template struct Classifier<double>;

}  // namespace catcd::dec
