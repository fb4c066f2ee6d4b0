#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "catcd/gradcheck.hpp"
#include "catcd/model.hpp"

namespace catcd::checks {

/// Replaces every trainable value with U(-amp, amp).
void randomize(ParamSet<double>& ps, std::mt19937_64& rng, double amp = 0.5);

/// Every differentiable op on small random inputs, h = 1e-3. Entries are
/// named "<op>.<input>".
GradCheckReport ops_suite(std::uint64_t seed);

/// One CAT block at the scale-1 width of `config` on a 1 x C x 8 x 8 map,
/// parameters redrawn uniformly. Includes the input map.
GradCheckReport block_check(const ModelConfig& config, std::uint64_t seed);

/// Whole network on a 1 x 3 x S x S pair, parameters redrawn uniformly.
/// Batch-norm layers run on running statistics calibrated by a few train-mode
/// passes at the redrawn point, so the loss is pure and every parameter is
/// connected even where the map is 1 x 1. Logits and every mask logit map
/// feed the loss through fixed random weights.
GradCheckReport model_check(const ModelConfig& config, std::uint64_t seed,
                            std::size_t image_size = 16, std::size_t max_entries = 8);

}  // namespace catcd::checks
