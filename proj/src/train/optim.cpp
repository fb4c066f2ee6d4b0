#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "catcd/training.hpp"

namespace catcd::train {

double linear_decay_lr(double base_lr, std::size_t epoch, std::size_t total_epochs) {
  if (total_epochs == 0 || epoch >= total_epochs) return 0.0;
  return base_lr * (1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs));
}

template <typename T>
AdamW<T>::AdamW(ParamSet<T>& params, AdamWConfig config) : params_(&params), config_(config) {
  for (const auto& p : params.params()) {
    m_.emplace_back(p.value.numel(), T(0));
    v_.emplace_back(p.value.numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  auto params = params_->params();
  if (params.size() != m_.size()) {
    throw std::logic_error("adamw: parameter set changed after construction");
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].value;
    auto value = p.data();
    auto grad = p.grad();
    if (!grad.empty() && grad.size() != value.size()) {
      throw ShapeError("adamw: gradient of " + params[k].name + " has " +
                       std::to_string(grad.size()) + " entries, parameter has " +
                       std::to_string(value.size()));
    }
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * g;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double x = static_cast<double>(value[i]) * decay;
      x -= lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
      value[i] = static_cast<T>(x);
    }
  }
}

template <typename T>
std::vector<Parameter<T>> AdamW<T>::state() const {
  std::vector<Parameter<T>> out;
  // u64 step count split into two exactly representable halves
  Tensor<T> step(Shape{2});
  step.data()[0] = static_cast<T>(steps_ >> 20);
  step.data()[1] = static_cast<T>(steps_ & 0xFFFFF);
  out.push_back({"opt.step", step});
  auto params = params_->params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    out.push_back({"opt.m." + params[k].name, Tensor<T>(params[k].value.shape(), m_[k])});
    out.push_back({"opt.v." + params[k].name, Tensor<T>(params[k].value.shape(), v_[k])});
  }
  return out;
}

template <typename T>
void AdamW<T>::load_state(std::span<const Parameter<T>> tensors) {
  std::unordered_map<std::string, const Tensor<T>*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.value;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor<T>& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::invalid_argument("optimizer state: missing " + name);
    if (it->second->shape() != shape) {
      throw std::invalid_argument("optimizer state: " + name + " expected " + shape.str() +
                                  ", found " + it->second->shape().str());
    }
    return *it->second;
  };
  const auto& step = fetch("opt.step", Shape{2});
  const auto hi = static_cast<std::uint64_t>(step.data()[0]);
  const auto lo = static_cast<std::uint64_t>(step.data()[1]);
  auto params = params_->params();
  std::vector<std::vector<T>> m, v;
  for (const auto& p : params) {
    const auto& mt = fetch("opt.m." + p.name, p.value.shape());
    const auto& vt = fetch("opt.v." + p.name, p.value.shape());
    m.emplace_back(mt.data().begin(), mt.data().end());
    v.emplace_back(vt.data().begin(), vt.data().end());
  }
  m_ = std::move(m);
  v_ = std::move(v);
  steps_ = (hi << 20) | lo;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace catcd::train
