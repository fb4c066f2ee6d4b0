#include "catcd/layers.hpp"

#include <cmath>

namespace catcd::nn {

template <typename T>
Tensor<T> trunc_normal(Shape shape, double std, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) {
    double s = dist(rng);
    while (std::abs(s) > 2.0 * std) s = dist(rng);
    v = static_cast<T>(s);
  }
  return t;
}

template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Conv2d<T> Conv2d<T>::create(ParamSet<T>& ps, const std::string& name, std::size_t in_channels,
                            std::size_t out_channels, std::size_t kernel, Rng& rng) {
  Conv2d c;
  c.weight = ps.add(name + ".weight",
                    kaiming_uniform<T>(Shape{out_channels, in_channels, kernel, kernel},
                                       in_channels * kernel * kernel, rng));
  c.bias = ps.add(name + ".bias", Tensor<T>(Shape{out_channels}));
  c.padding = (kernel - 1) / 2;
  return c;
}

template <typename T>
Linear<T> Linear<T>::create(ParamSet<T>& ps, const std::string& name, std::size_t in,
                            std::size_t out, Rng& rng, double std, bool with_bias) {
  Linear l;
  l.weight = ps.add(name + ".weight", trunc_normal<T>(Shape{in, out}, std, rng));
  if (with_bias) l.bias = ps.add(name + ".bias", Tensor<T>(Shape{out}));
  return l;
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ParamSet<T>& ps, const std::string& name, std::size_t channels) {
  LayerNorm n;
  n.gamma = ps.add(name + ".gamma", Tensor<T>(Shape{channels}, T(1)));
  n.beta = ps.add(name + ".beta", Tensor<T>(Shape{channels}));
  return n;
}

template <typename T>
BatchNorm2d<T> BatchNorm2d<T>::create(ParamSet<T>& ps, const std::string& name,
                                      std::size_t channels) {
  BatchNorm2d n;
  n.gamma = ps.add(name + ".gamma", Tensor<T>(Shape{channels}, T(1)));
  n.beta = ps.add(name + ".beta", Tensor<T>(Shape{channels}));
  auto st = ops::BatchNormState<T>::create(channels);
  n.state = st;
  ps.add_buffer(name + ".running_mean", st.running_mean);
  ps.add_buffer(name + ".running_var", st.running_var);
  ps.add_buffer(name + ".tracked", st.tracked);
  return n;
}

template Tensor<float> trunc_normal<float>(Shape, double, Rng&);
template Tensor<double> trunc_normal<double>(Shape, double, Rng&);
template Tensor<float> kaiming_uniform<float>(Shape, std::size_t, Rng&);
template Tensor<double> kaiming_uniform<double>(Shape, std::size_t, Rng&);
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct BatchNorm2d<float>;
template struct BatchNorm2d<double>;

}  // namespace catcd::nn
