#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace catcd {

/// Raised for any shape or dimension mismatch. The message carries both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a value that must be finite is NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimension sizes of a dense row-major array. Every dimension is >= 1.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t back() const { return dims_.back(); }
  std::size_t numel() const noexcept;
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::string str() const;

  bool operator==(const Shape&) const = default;

 private:
  std::vector<std::size_t> dims_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};

}  // namespace detail

/// Handle to a dense tensor that may participate in a differentiation tape.
///
/// Copies share the underlying buffer (the tape needs to refer to the same
/// node an op produced). Use clone() or detach() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t numel() const { return node().data.size(); }
  std::size_t rank() const { return shape().rank(); }
  std::size_t dim(std::size_t axis) const { return shape()[axis]; }

  std::span<T> data() { return node().data; }
  std::span<const T> data() const { return node().data; }
  T item() const;

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return !node().grad.empty(); }
  /// Gradient buffer; empty span when nothing was accumulated.
  std::span<const T> grad() const { return node().grad; }
  /// Gradient buffer, allocated (zero-filled) on first access. The gradient
  /// is accumulator state, not part of the value, hence const.
  std::span<T> grad_mut() const;
  void zero_grad();

  /// Independent copy of the values with no gradient and no tape link.
  Tensor detach() const;
  /// Independent copy that keeps the requires_grad flag.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  detail::Node<T>& node() const;

  std::shared_ptr<detail::Node<T>> node_;
};

/// Ordered record of executed differentiable operations.
///
/// Ops append a backward closure when a tape is active on the calling thread
/// and at least one input requires a gradient. Each thread owns its own
/// active-tape slot, so independent tapes may run on separate threads.
class Tape {
 public:
  using Backward = std::function<void()>;

  void record(Backward fn) { entries_.push_back(std::move(fn)); }
  std::size_t size() const noexcept { return entries_.size(); }
  void clear() noexcept { entries_.clear(); }

  /// Runs every recorded closure in reverse order, then clears the tape.
  void run_backward();

  /// Tape that ops on this thread record onto, or nullptr (no recording).
  static Tape* active() noexcept;

 private:
  friend class TapeScope;
  std::vector<Backward> entries_;
};

/// Makes a tape the active one for the current thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) noexcept;
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on the current thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope() noexcept;
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// Seeds d(loss)/d(loss) = 1 and back-propagates through the tape.
/// The loss must hold exactly one element.
template <typename T>
void backward(const Tensor<T>& loss, Tape& tape);

/// Throws NumericError naming `where` if any value is NaN or Inf.
template <typename T>
void check_finite(const Tensor<T>& t, const std::string& where);

}  // namespace catcd
