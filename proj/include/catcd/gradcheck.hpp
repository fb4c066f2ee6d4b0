#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "catcd/params.hpp"

namespace catcd {

struct GradCheckOptions {
  double step = 1e-3;
  /// Entries probed per parameter; 0 probes every entry. The subset is a
  /// deterministic function of `seed`.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  /// Lower bound of the relative-error denominator, so a tensor whose
  /// gradient is zero on both routes compares as exact.
  double denominator_floor = 1e-6;
  /// A probe whose +-step evaluations cross a kink of a non-smooth op (|x|
  /// changing sign) is repeated with the step divided by 10, at most this
  /// many times.
  int max_step_reductions = 3;
};

struct GradCheckEntry {
  std::string name;
  /// max |analytic - numeric| over probed entries, divided by the largest
  /// gradient magnitude seen in the tensor on either route.
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t checked = 0;
  bool all_zero = false;  // disconnected from the loss
  std::size_t reduced = 0;  // probes re-run with a smaller step
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() <= tolerance; }
};

/// Compares tape gradients of `loss_fn` against central differences.
///
/// `loss_fn` must be a pure function of the tensors in `params` and return a
/// one-element tensor. It is evaluated once under a tape and twice per probed
/// entry without one.
GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn,
                           std::span<Parameter<double>> params,
                           const GradCheckOptions& options = {});

}  // namespace catcd
