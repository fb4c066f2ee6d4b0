#include "catcd/tensor.hpp"

#include "internal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace catcd {

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  for (std::size_t d : dims_) {
    if (d == 0) throw ShapeError("shape " + str() + " has a zero dimension");
  }
}

std::size_t Shape::numel() const noexcept {
  if (dims_.empty()) return 0;
  return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << 'x';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::Node<T>>()) {
  if (shape.rank() == 0) throw ShapeError("tensor shape must have at least one axis");
  node_->data.assign(shape.numel(), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::Node<T>>()) {
  if (shape.rank() == 0) throw ShapeError("tensor shape must have at least one axis");
  if (shape.numel() != values.size()) {
    throw ShapeError("shape " + shape.str() + " needs " + std::to_string(shape.numel()) +
                     " values, got " + std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

template <typename T>
detail::Node<T>& Tensor<T>::node() const {
  if (!node_) throw std::logic_error("use of an undefined tensor");
  return *node_;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return node().data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node().requires_grad = on;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::grad_mut() const {
  auto& n = node();
  if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
  return n.grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  auto& n = node();
  std::fill(n.grad.begin(), n.grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor<T>(shape(), node().data);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor<T> out(shape(), node().data);
  out.set_requires_grad(requires_grad());
  return out;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t* g_kink_signature = nullptr;
}

Tape* Tape::active() noexcept { return g_active_tape; }

std::uint64_t*& detail::kink_signature() noexcept { return g_kink_signature; }

void Tape::run_backward() {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

TapeScope::TapeScope(Tape& tape) noexcept : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() noexcept : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

template <typename T>
void backward(const Tensor<T>& loss, Tape& tape) {
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + loss.shape().str());
  }
  if (!loss.requires_grad()) {
    tape.clear();
    return;
  }
  Tensor<T> seed = loss;
  seed.grad_mut()[0] += T(1);
  tape.run_backward();
}

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& where) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in " + where);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&, Tape&);
template void backward(const Tensor<double>&, Tape&);
template void check_finite(const Tensor<float>&, const std::string&);
template void check_finite(const Tensor<double>&, const std::string&);

}  // namespace catcd
