#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "catcd/tensor.hpp"

namespace catcd {

/// A named tensor. Trainable parameters carry requires_grad = true.
template <typename T>
struct Parameter {
  std::string name;  // dotted path, e.g. "cat.s1.b0.cross.wq"
  Tensor<T> value;
};

/// Named parameter set plus non-trainable state buffers (batch-norm running
/// statistics). Names are unique across both lists; insertion order is the
/// canonical order used by the optimizer and by checkpoints.
template <typename T>
class ParamSet {
 public:
  /// Registers a trainable tensor and returns a handle sharing its storage.
  Tensor<T> add(std::string name, Tensor<T> value);
  /// Registers a state buffer (never receives gradients).
  Tensor<T> add_buffer(std::string name, Tensor<T> value);

  std::span<const Parameter<T>> params() const noexcept { return params_; }
  std::span<Parameter<T>> params() noexcept { return params_; }
  std::span<const Parameter<T>> buffers() const noexcept { return buffers_; }
  std::span<Parameter<T>> buffers() noexcept { return buffers_; }

  const Parameter<T>* find(const std::string& name) const;
  bool contains(const std::string& name) const { return names_.contains(name); }

  /// Total number of trainable scalars.
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  void claim(const std::string& name);

  std::vector<Parameter<T>> params_;
  std::vector<Parameter<T>> buffers_;
  std::unordered_set<std::string> names_;
};

}  // namespace catcd
