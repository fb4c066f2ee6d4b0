#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "catcd/params.hpp"

namespace catcd::train {

/// Binary change labels, B x H x W, every value 0 (unchanged) or 1 (changed).
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(std::size_t batch, std::size_t height, std::size_t width);
  /// Throws std::invalid_argument when a value is not 0 or 1 or the size is off.
  LabelMap(std::size_t batch, std::size_t height, std::size_t width,
           std::vector<std::uint8_t> values);

  std::size_t batch() const noexcept { return batch_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<const std::uint8_t> values() const noexcept { return values_; }

  std::uint8_t at(std::size_t b, std::size_t y, std::size_t x) const {
    return values_[(b * height_ + y) * width_ + x];
  }
  void set(std::size_t b, std::size_t y, std::size_t x, bool changed) {
    values_[(b * height_ + y) * width_ + x] = changed ? 1 : 0;
  }
  std::size_t count_changed() const;

  /// Stacks single-sample maps of equal size along the batch axis.
  static LabelMap stack(std::span<const LabelMap> samples);
  LabelMap sample(std::size_t b) const;

  bool operator==(const LabelMap&) const = default;

 private:
  std::size_t batch_ = 0, height_ = 0, width_ = 0;
  std::vector<std::uint8_t> values_;
};

// ---- loss -----------------------------------------------------------------------

/// -mean over batch and pixels of log softmax(logits)[label]. logits: B x 2 x H x W.
template <typename T>
Tensor<T> cross_entropy_2class(const Tensor<T>& logits, const LabelMap& labels);

enum class LabelPooling {
  any,      // coarse cell is 1 iff any covered pixel is 1
  nearest,  // value of the pixel at offset (f/2, f/2) inside the cell
};

LabelMap downsample_label(const LabelMap& label, std::size_t factor,
                          LabelPooling pooling = LabelPooling::any);

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double final_ce = 0;
  std::vector<double> mask_ce;  // unweighted, same order as the masks
};

/// CE(logits, label) + sum_k lambda[k] * CE(masks[k], label at mask k's scale).
/// Each mask's label is the full label pooled by H / H_mask.
template <typename T>
LossTerms<T> full_loss(const Tensor<T>& logits, std::span<const Tensor<T>> masks,
                       const LabelMap& label, std::span<const double> lambda,
                       LabelPooling pooling = LabelPooling::any);

// ---- optimizer --------------------------------------------------------------------

struct AdamWConfig {
  double lr = 2e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// lr at the start of `epoch` (0-based) for linear decay to 0 over `total` epochs.
double linear_decay_lr(double base_lr, std::size_t epoch, std::size_t total_epochs);

/// Decoupled weight decay Adam over every trainable tensor of a ParamSet.
///
/// Per step: p *= 1 - lr * wd; then the bias-corrected Adam update. A
/// parameter without an accumulated gradient is treated as having a zero one.
template <typename T>
class AdamW {
 public:
  AdamW(ParamSet<T>& params, AdamWConfig config);

  void step(double lr);
  void step() { step(config_.lr); }

  std::uint64_t steps() const noexcept { return steps_; }
  const AdamWConfig& config() const noexcept { return config_; }

  /// Optimizer state as named tensors: "opt.step", "opt.m.<param>", "opt.v.<param>".
  std::vector<Parameter<T>> state() const;
  /// Restores from tensors produced by state(). Throws std::invalid_argument
  /// on a missing entry or a shape mismatch.
  void load_state(std::span<const Parameter<T>> tensors);

 private:
  ParamSet<T>* params_;
  AdamWConfig config_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::uint64_t steps_ = 0;
};

// ---- metrics ----------------------------------------------------------------------

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept;
  bool operator==(const ConfusionCounts&) const = default;
};

struct Metrics {
  double precision = 0, recall = 0, f1 = 0;
  // Set when the matching denominator is zero (the value is then 0).
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

ConfusionCounts confusion(const LabelMap& predicted, const LabelMap& truth);
Metrics compute_metrics(const ConfusionCounts& counts);

/// Per-pixel argmax over the two logit channels (ties -> unchanged).
template <typename T>
LabelMap predict_labels(const Tensor<T>& logits);

// ---- feature-space diagnostic -------------------------------------------------------

struct ClusterStats {
  double intra_changed = 0;
  double intra_unchanged = 0;
  double centroid_distance = 0;
  /// (intra_changed + intra_unchanged) / (2 * centroid_distance); +inf when
  /// the centroids coincide.
  double ratio = std::numeric_limits<double>::infinity();
  bool valid = false;  // false when either class has no pixels
};

/// rows: N x C features (row-major), labels: N values in {0, 1}.
ClusterStats cluster_diagnostic(std::span<const double> rows, std::size_t channels,
                                std::span<const std::uint8_t> labels);

/// Sample `b` of a B x N x C token map against a label map of matching H x W.
template <typename T>
ClusterStats cluster_diagnostic_tokens(const Tensor<T>& tokens, const LabelMap& labels,
                                       std::size_t b);

}  // namespace catcd::train
