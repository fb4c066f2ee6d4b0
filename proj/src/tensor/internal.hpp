#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "catcd/tensor.hpp"

namespace catcd::detail {

/// Tape to record onto, or nullptr when no input needs a gradient.
template <typename... Ts>
Tape* recording(const Ts&... inputs) {
  Tape* tape = Tape::active();
  if (tape == nullptr) return nullptr;
  const bool any = ((inputs.defined() && inputs.requires_grad()) || ...);
  return any ? tape : nullptr;
}

template <typename T>
bool wants_grad(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     t.shape().str());
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

/// While non-null, non-smooth ops fold the branch taken by every element
/// into *signature, so a caller can tell whether two evaluations sit on the
/// same smooth piece. Thread-local.
std::uint64_t*& kink_signature() noexcept;

/// C[M x N] (+)= op(A) * op(B) on row-major buffers. op(A) is M x K.
template <typename T>
void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

}  // namespace catcd::detail
