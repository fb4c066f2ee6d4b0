#include "catcd/params.hpp"

#include <stdexcept>

namespace catcd {

template <typename T>
void ParamSet<T>::claim(const std::string& name) {
  if (name.empty()) throw std::invalid_argument("parameter name must not be empty");
  if (!names_.insert(name).second) throw std::invalid_argument("duplicate parameter name: " + name);
}

template <typename T>
Tensor<T> ParamSet<T>::add(std::string name, Tensor<T> value) {
  claim(name);
  value.set_requires_grad(true);
  params_.push_back({std::move(name), value});
  return value;
}

template <typename T>
Tensor<T> ParamSet<T>::add_buffer(std::string name, Tensor<T> value) {
  claim(name);
  value.set_requires_grad(false);
  buffers_.push_back({std::move(name), value});
  return value;
}

template <typename T>
const Parameter<T>* ParamSet<T>::find(const std::string& name) const {
  for (const auto* list : {&params_, &buffers_}) {
    for (const auto& p : *list) {
      if (p.name == name) return &p;
    }
  }
  return nullptr;
}

template <typename T>
std::size_t ParamSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template class ParamSet<float>;
template class ParamSet<double>;

}  // namespace catcd
