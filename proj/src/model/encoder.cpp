#include "catcd/encoder.hpp"

namespace catcd::enc {

template <typename T>
ResidualConv<T> ResidualConv<T>::create(ParamSet<T>& ps, const std::string& name,
                                        std::size_t channels, nn::Rng& rng) {
  return {nn::Conv2d<T>::create(ps, name + ".conv", channels, channels, 3, rng),
          nn::BatchNorm2d<T>::create(ps, name + ".bn", channels)};
}

template <typename T>
Tensor<T> ResidualConv<T>::operator()(const Tensor<T>& x, nn::Mode mode) const {
  return ops::add(x, bn(ops::gelu(conv(x)), mode));
}

template <typename T>
Tensor<T> EncoderStage<T>::operator()(const Tensor<T>& x, nn::Mode mode) const {
  Tensor<T> y = modulation(downsample ? ops::avg_pool2(x) : x);
  for (const auto& blk : blocks) y = blk(y, mode);
  return y;
}

template <typename T>
Encoder<T> Encoder<T>::create(ParamSet<T>& ps, const std::string& name,
                              const EncoderConfig& config, nn::Rng& rng) {
  Encoder e;
  e.config = config;
  const std::size_t s = config.stem_channels;
  e.stem1 = nn::Conv2d<T>::create(ps, name + ".stem1", 3, s, 3, rng);
  e.stem_bn1 = nn::BatchNorm2d<T>::create(ps, name + ".stem_bn1", s);
  e.stem2 = nn::Conv2d<T>::create(ps, name + ".stem2", s, s, 3, rng);
  e.stem_bn2 = nn::BatchNorm2d<T>::create(ps, name + ".stem_bn2", s);
  std::size_t prev = s;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string stage = name + ".stage" + std::to_string(i + 1);
    auto& st = e.stages[i];
    st.downsample = i > 0;
    st.modulation = nn::Conv2d<T>::create(ps, stage + ".modulation", prev, config.channels[i], 1, rng);
    for (std::size_t j = 0; j < config.blocks[i]; ++j) {
      st.blocks.push_back(ResidualConv<T>::create(ps, stage + ".block" + std::to_string(j),
                                                  config.channels[i], rng));
    }
    prev = config.channels[i];
  }
  return e;
}

template <typename T>
Pyramid<T> Encoder<T>::operator()(const Tensor<T>& image, nn::Mode mode) const {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("encoder: expected B x 3 x H x W, got " + image.shape().str());
  }
  if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0) {
    throw ShapeError("encoder: image size " + image.shape().str() + " not divisible by 16");
  }
  Tensor<T> x = ops::avg_pool2(stem_bn1(ops::gelu(stem1(image)), mode));
  x = ops::avg_pool2(stem_bn2(ops::gelu(stem2(x)), mode));
  Pyramid<T> out;
  for (std::size_t i = 0; i < 3; ++i) {
    x = stages[i](x, mode);
    out[i] = x;
  }
  return out;
}

template <typename T>
std::pair<Pyramid<T>, Pyramid<T>> Encoder<T>::encode_pair(const Tensor<T>& img1,
                                                          const Tensor<T>& img2,
                                                          nn::Mode mode) const {
  if (img1.shape() != img2.shape()) {
    throw ShapeError("encoder: temporal images differ, " + img1.shape().str() + " vs " +
                     img2.shape().str());
  }
  return {(*this)(img1, mode), (*this)(img2, mode)};
}

template struct ResidualConv<float>;
template struct ResidualConv<double>;
template struct EncoderStage<float>;
template struct EncoderStage<double>;
template struct Encoder<float>;
template struct Encoder<double>;

}  // namespace catcd::enc
