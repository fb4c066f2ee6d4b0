#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "../tensor/internal.hpp"
#include "catcd/ops.hpp"
#include "catcd/training.hpp"

namespace catcd::train {

LabelMap::LabelMap(std::size_t batch, std::size_t height, std::size_t width)
    : batch_(batch), height_(height), width_(width), values_(batch * height * width, 0) {}

LabelMap::LabelMap(std::size_t batch, std::size_t height, std::size_t width,
                   std::vector<std::uint8_t> values)
    : batch_(batch), height_(height), width_(width), values_(std::move(values)) {
  if (values_.size() != batch * height * width) {
    throw std::invalid_argument("label map: " + std::to_string(values_.size()) +
                                " values for " + std::to_string(batch) + "x" +
                                std::to_string(height) + "x" + std::to_string(width));
  }
  for (std::uint8_t v : values_) {
    if (v > 1) throw std::invalid_argument("label map: value " + std::to_string(v) + " not 0/1");
  }
}

std::size_t LabelMap::count_changed() const {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

LabelMap LabelMap::stack(std::span<const LabelMap> samples) {
  if (samples.empty()) return {};
  const std::size_t h = samples[0].height_, w = samples[0].width_;
  std::vector<std::uint8_t> all;
  std::size_t batch = 0;
  for (const auto& s : samples) {
    if (s.height_ != h || s.width_ != w) {
      throw std::invalid_argument("label stack: mixed sizes");
    }
    all.insert(all.end(), s.values_.begin(), s.values_.end());
    batch += s.batch_;
  }
  return LabelMap(batch, h, w, std::move(all));
}

LabelMap LabelMap::sample(std::size_t b) const {
  const std::size_t n = height_ * width_;
  return LabelMap(1, height_, width_,
                  std::vector<std::uint8_t>(values_.begin() + b * n, values_.begin() + (b + 1) * n));
}

template <typename T>
Tensor<T> cross_entropy_2class(const Tensor<T>& logits, const LabelMap& labels) {
  detail::require_rank(logits, 4, "cross_entropy_2class");
  const std::size_t b = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
  if (logits.dim(1) != 2 || labels.batch() != b || labels.height() != h || labels.width() != w) {
    throw ShapeError("cross_entropy_2class: logits " + logits.shape().str() + " vs labels " +
                     std::to_string(labels.batch()) + "x" + std::to_string(labels.height()) +
                     "x" + std::to_string(labels.width()));
  }
  const std::size_t n = h * w;
  const double inv = 1.0 / static_cast<double>(b * n);
  auto x = logits.data();
  auto y = labels.values();
  // p(changed) per pixel, kept for the backward pass
  auto prob1 = std::make_shared<std::vector<T>>(b * n);
  double total = 0;
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t p = 0; p < n; ++p) {
      const double l0 = x[(s * 2) * n + p];
      const double l1 = x[(s * 2 + 1) * n + p];
      const double mx = std::max(l0, l1);
      const double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
      total += lse - (y[s * n + p] ? l1 : l0);
      (*prob1)[s * n + p] = static_cast<T>(std::exp(l1 - lse));
    }
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total * inv));
  if (Tape* tape = detail::recording(logits)) {
    out.set_requires_grad(true);
    std::vector<std::uint8_t> target(y.begin(), y.end());
    tape->record([logits, out, prob1, target = std::move(target), b, n, inv]() {
      auto g = out.grad();
      if (g.empty()) return;
      auto d = logits.grad_mut();
      const T scale = static_cast<T>(g[0] * inv);
      for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t p = 0; p < n; ++p) {
          const T p1 = (*prob1)[s * n + p];
          const T t1 = target[s * n + p] ? T(1) : T(0);
          d[(s * 2) * n + p] += scale * ((T(1) - p1) - (T(1) - t1));
          d[(s * 2 + 1) * n + p] += scale * (p1 - t1);
        }
      }
    });
  }
  return out;
}

LabelMap downsample_label(const LabelMap& label, std::size_t factor, LabelPooling pooling) {
  if (factor == 0 || label.height() % factor != 0 || label.width() % factor != 0) {
    throw std::invalid_argument("downsample_label: " + std::to_string(label.height()) + "x" +
                                std::to_string(label.width()) + " not divisible by " +
                                std::to_string(factor));
  }
  const std::size_t h = label.height() / factor, w = label.width() / factor;
  LabelMap out(label.batch(), h, w);
  for (std::size_t b = 0; b < label.batch(); ++b) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        bool v = false;
        if (pooling == LabelPooling::nearest) {
          v = label.at(b, y * factor + factor / 2, x * factor + factor / 2) != 0;
        } else {
          for (std::size_t i = 0; i < factor && !v; ++i) {
            for (std::size_t j = 0; j < factor && !v; ++j) {
              v = label.at(b, y * factor + i, x * factor + j) != 0;
            }
          }
        }
        out.set(b, y, x, v);
      }
    }
  }
  return out;
}

template <typename T>
LossTerms<T> full_loss(const Tensor<T>& logits, std::span<const Tensor<T>> masks,
                       const LabelMap& label, std::span<const double> lambda,
                       LabelPooling pooling) {
  if (masks.size() != lambda.size()) {
    throw std::invalid_argument("full_loss: " + std::to_string(masks.size()) + " masks but " +
                                std::to_string(lambda.size()) + " weights");
  }
  LossTerms<T> terms;
  terms.total = cross_entropy_2class(logits, label);
  terms.final_ce = static_cast<double>(terms.total.item());
  for (std::size_t k = 0; k < masks.size(); ++k) {
    if (lambda[k] < 0) throw std::invalid_argument("full_loss: negative weight");
    const Tensor<T>& m = masks[k];
    detail::require_rank(m, 4, "full_loss");
    if (label.height() % m.dim(2) != 0 || label.height() / m.dim(2) * m.dim(3) != label.width()) {
      throw ShapeError("full_loss: mask " + m.shape().str() + " is not an integer scale of " +
                       std::to_string(label.height()) + "x" + std::to_string(label.width()));
    }
    const auto ce = cross_entropy_2class(
        m, downsample_label(label, label.height() / m.dim(2), pooling));
    terms.mask_ce.push_back(static_cast<double>(ce.item()));
    terms.total = ops::add(terms.total, ops::scale(ce, static_cast<T>(lambda[k])));
  }
  return terms;
}

template Tensor<float> cross_entropy_2class(const Tensor<float>&, const LabelMap&);
template Tensor<double> cross_entropy_2class(const Tensor<double>&, const LabelMap&);
template LossTerms<float> full_loss(const Tensor<float>&, std::span<const Tensor<float>>,
                                    const LabelMap&, std::span<const double>, LabelPooling);
template LossTerms<double> full_loss(const Tensor<double>&, std::span<const Tensor<double>>,
                                     const LabelMap&, std::span<const double>, LabelPooling);

}  // namespace catcd::train
