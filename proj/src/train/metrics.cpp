#include <cmath>
#include <stdexcept>

#include "catcd/training.hpp"

namespace catcd::train {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) noexcept {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion(const LabelMap& predicted, const LabelMap& truth) {
  if (predicted.batch() != truth.batch() || predicted.height() != truth.height() ||
      predicted.width() != truth.width()) {
    throw ShapeError("confusion: prediction and truth sizes differ");
  }
  ConfusionCounts c;
  auto p = predicted.values();
  auto t = truth.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i]) {
      ++(t[i] ? c.tp : c.fp);
    } else {
      ++(t[i] ? c.fn : c.tn);
    }
  }
  return c;
}

Metrics compute_metrics(const ConfusionCounts& c) {
  Metrics m;
  const double tp = static_cast<double>(c.tp);
  if (c.tp + c.fp == 0) {
    m.precision_undefined = true;
  } else {
    m.precision = tp / static_cast<double>(c.tp + c.fp);
  }
  if (c.tp + c.fn == 0) {
    m.recall_undefined = true;
  } else {
    m.recall = tp / static_cast<double>(c.tp + c.fn);
  }
  if (m.precision > 0 && m.recall > 0) {
    m.f1 = 2.0 / (1.0 / m.precision + 1.0 / m.recall);
  } else {
    m.f1_undefined = true;
  }
  return m;
}

template <typename T>
LabelMap predict_labels(const Tensor<T>& logits) {
  if (logits.rank() != 4 || logits.dim(1) != 2) {
    throw ShapeError("predict_labels: expected B x 2 x H x W, got " + logits.shape().str());
  }
  const std::size_t b = logits.dim(0), h = logits.dim(2), w = logits.dim(3), n = h * w;
  std::vector<std::uint8_t> v(b * n);
  auto x = logits.data();
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t p = 0; p < n; ++p) v[s * n + p] = x[(s * 2 + 1) * n + p] > x[s * 2 * n + p];
  }
  return LabelMap(b, h, w, std::move(v));
}

ClusterStats cluster_diagnostic(std::span<const double> rows, std::size_t channels,
                                std::span<const std::uint8_t> labels) {
  if (channels == 0 || rows.size() != labels.size() * channels) {
    throw ShapeError("cluster_diagnostic: " + std::to_string(rows.size()) + " values for " +
                     std::to_string(labels.size()) + " rows of " + std::to_string(channels));
  }
  ClusterStats s;
  std::vector<double> centroid[2] = {std::vector<double>(channels, 0.0),
                                     std::vector<double>(channels, 0.0)};
  std::size_t count[2] = {0, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int k = labels[i] ? 1 : 0;
    ++count[k];
    for (std::size_t c = 0; c < channels; ++c) centroid[k][c] += rows[i * channels + c];
  }
  if (count[0] == 0 || count[1] == 0) return s;
  for (int k = 0; k < 2; ++k) {
    for (double& v : centroid[k]) v /= static_cast<double>(count[k]);
  }
  double intra[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int k = labels[i] ? 1 : 0;
    double d2 = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      const double d = rows[i * channels + c] - centroid[k][c];
      d2 += d * d;
    }
    intra[k] += std::sqrt(d2);
  }
  double between = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const double d = centroid[1][c] - centroid[0][c];
    between += d * d;
  }
  s.valid = true;
  s.intra_changed = intra[1] / static_cast<double>(count[1]);
  s.intra_unchanged = intra[0] / static_cast<double>(count[0]);
  s.centroid_distance = std::sqrt(between);
  if (s.centroid_distance > 0) {
    s.ratio = (s.intra_changed + s.intra_unchanged) / (2.0 * s.centroid_distance);
  }
  return s;
}

template <typename T>
ClusterStats cluster_diagnostic_tokens(const Tensor<T>& tokens, const LabelMap& labels,
                                       std::size_t b) {
  if (tokens.rank() != 3 || b >= tokens.dim(0) || b >= labels.batch() ||
      tokens.dim(1) != labels.height() * labels.width()) {
    throw ShapeError("cluster_diagnostic: tokens " + tokens.shape().str() +
                     " do not match labels of " + std::to_string(labels.height()) + "x" +
                     std::to_string(labels.width()));
  }
  const std::size_t n = tokens.dim(1), c = tokens.dim(2);
  auto src = tokens.data().subspan(b * n * c, n * c);
  std::vector<double> rows(src.begin(), src.end());
  return cluster_diagnostic(rows, c, labels.values().subspan(b * n, n));
}

template LabelMap predict_labels(const Tensor<float>&);
template LabelMap predict_labels(const Tensor<double>&);
template ClusterStats cluster_diagnostic_tokens(const Tensor<float>&, const LabelMap&, std::size_t);
template ClusterStats cluster_diagnostic_tokens(const Tensor<double>&, const LabelMap&,
                                                std::size_t);

}  // namespace catcd::train
