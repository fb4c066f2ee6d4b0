#include "catcd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

#include "internal.hpp"

namespace catcd {

double GradCheckReport::max_rel_error() const {
  double worst = 0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn,
                           std::span<Parameter<double>> params, const GradCheckOptions& options) {
  for (auto& p : params) p.value.zero_grad();
  {
    Tape tape;
    Tensor<double> loss;
    {
      TapeScope scope(tape);
      loss = loss_fn();
    }
    backward(loss, tape);
  }

  // Loss value plus the sign signature of every non-smooth op it passed.
  auto evaluate = [&loss_fn] {
    NoGradScope no_grad;
    std::uint64_t signature = 14695981039346656037ull;
    std::uint64_t*& slot = detail::kink_signature();
    std::uint64_t* previous = slot;
    slot = &signature;
    double value = 0;
    try {
      value = loss_fn().item();
    } catch (...) {
      slot = previous;
      throw;
    }
    slot = previous;
    return std::pair{value, signature};
  };
  const std::uint64_t base_signature = evaluate().second;

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (auto& p : params) {
    GradCheckEntry entry{p.name};
    const std::size_t n = p.value.numel();
    std::vector<double> analytic(n, 0.0);
    if (p.value.has_grad()) {
      auto g = p.value.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    entry.all_zero = std::all_of(analytic.begin(), analytic.end(), [](double v) { return v == 0.0; });

    std::vector<std::size_t> probe(n);
    std::iota(probe.begin(), probe.end(), std::size_t{0});
    if (options.max_entries != 0 && options.max_entries < n) {
      std::shuffle(probe.begin(), probe.end(), rng);
      probe.resize(options.max_entries);
      std::sort(probe.begin(), probe.end());
    }

    double scale = 0;
    for (double a : analytic) scale = std::max(scale, std::abs(a));
    auto values = p.value.data();
    for (std::size_t i : probe) {
      const double saved = values[i];
      double step = options.step;
      double numeric = 0;
      for (int attempt = 0;; ++attempt) {
        values[i] = saved + step;
        const auto up = evaluate();
        values[i] = saved - step;
        const auto down = evaluate();
        values[i] = saved;
        numeric = (up.first - down.first) / (2.0 * step);
        const bool smooth = up.second == base_signature && down.second == base_signature;
        if (smooth || attempt == options.max_step_reductions) break;
        if (attempt == 0) ++entry.reduced;
        step *= 0.1;
      }
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(numeric - analytic[i]));
      scale = std::max(scale, std::abs(numeric));
      ++entry.checked;
    }
    entry.max_rel_error = entry.max_abs_error / std::max(scale, options.denominator_floor);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace catcd
