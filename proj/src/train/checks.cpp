#include <cmath>

#include "catcd/cat.hpp"
#include "catcd/checks.hpp"
#include "catcd/ops.hpp"
#include "catcd/training.hpp"

namespace catcd::checks {

namespace {

using T = double;

Tensor<T> uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = dist(rng);
  return t;
}

// Entries bounded away from zero, for ops with a kink there.
Tensor<T> away_from_zero(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed) {}

  std::mt19937_64& rng() { return rng_; }

  // `fn` maps the named inputs to an output map; a fixed random projection
  // turns it into the scalar loss.
  template <typename Fn>
  void check(const std::string& op, std::vector<Parameter<T>> inputs, Fn fn,
             bool scalar_output = false) {
    for (auto& p : inputs) {
      p.name = op + "." + p.name;
      p.value.set_requires_grad(true);
    }
    Tensor<T> r;
    auto loss = [&] {
      std::vector<Tensor<T>> xs;
      for (const auto& p : inputs) xs.push_back(p.value);
      Tensor<T> y = fn(xs);
      if (scalar_output) return y;
      if (!r.defined()) r = uniform(y.shape(), rng_);
      return ops::sum(ops::mul(y, r));
    };
    {
      NoGradScope no_grad;
      loss();  // fixes the projection before the check starts
    }
    auto report = grad_check(loss, inputs);
    for (auto& e : report.entries) report_.entries.push_back(std::move(e));
  }

  GradCheckReport take() { return std::move(report_); }

 private:
  std::mt19937_64 rng_;
  GradCheckReport report_;
};

}  // namespace

void randomize(ParamSet<double>& ps, std::mt19937_64& rng, double amp) {
  std::uniform_real_distribution<double> dist(-amp, amp);
  for (auto& p : ps.params()) {
    for (double& v : p.value.data()) v = dist(rng);
  }
}

GradCheckReport ops_suite(std::uint64_t seed) {
  Suite s(seed);
  auto& g = s.rng();
  using Xs = const std::vector<Tensor<T>>&;
  const Shape s4{2, 3, 4, 4};

  s.check("add", {{"a", uniform(s4, g)}, {"b", uniform(s4, g)}},
          [](Xs x) { return ops::add(x[0], x[1]); });
  s.check("sub", {{"a", uniform(s4, g)}, {"b", uniform(s4, g)}},
          [](Xs x) { return ops::sub(x[0], x[1]); });
  s.check("mul", {{"a", uniform(s4, g)}, {"b", uniform(s4, g)}},
          [](Xs x) { return ops::mul(x[0], x[1]); });
  s.check("abs", {{"x", away_from_zero(s4, g)}}, [](Xs x) { return ops::abs(x[0]); });
  s.check("scale", {{"x", uniform(s4, g)}}, [](Xs x) { return ops::scale(x[0], -1.7); });
  s.check("gelu", {{"x", uniform(s4, g, -3, 3)}}, [](Xs x) { return ops::gelu(x[0]); });
  for (std::size_t axis : {0, 1, 2}) {
    s.check("softmax" + std::to_string(axis), {{"x", uniform(Shape{2, 3, 5}, g, -2, 2)}},
            [axis](Xs x) { return ops::softmax(x[0], axis); });
  }
  s.check("sum", {{"x", uniform(s4, g)}}, [](Xs x) { return ops::sum(x[0]); });
  s.check("mean", {{"x", uniform(s4, g)}}, [](Xs x) { return ops::mean(x[0]); });
  s.check("matmul", {{"a", uniform(Shape{3, 4}, g)}, {"b", uniform(Shape{4, 5}, g)}},
          [](Xs x) { return ops::matmul(x[0], x[1]); });
  s.check("bmm", {{"a", uniform(Shape{2, 3, 4}, g)}, {"b", uniform(Shape{2, 4, 5}, g)}},
          [](Xs x) { return ops::bmm(x[0], x[1]); });
  s.check("bmm_t", {{"a", uniform(Shape{2, 3, 4}, g)}, {"b", uniform(Shape{2, 5, 4}, g)}},
          [](Xs x) { return ops::bmm(x[0], x[1], true); });
  s.check("linear",
          {{"x", uniform(Shape{2, 3, 4}, g)},
           {"weight", uniform(Shape{4, 5}, g)},
           {"bias", uniform(Shape{5}, g)}},
          [](Xs x) { return ops::linear(x[0], x[1], x[2]); });
  s.check("add_bias", {{"x", uniform(Shape{2, 3, 4}, g)}, {"bias", uniform(Shape{4}, g)}},
          [](Xs x) { return ops::add_bias(x[0], x[1]); });
  s.check("reshape", {{"x", uniform(s4, g)}},
          [](Xs x) { return ops::reshape(x[0], Shape{6, 16}); });
  s.check("permute", {{"x", uniform(s4, g)}},
          [](Xs x) { return ops::permute(x[0], {0, 2, 3, 1}); });
  s.check("concat_channels", {{"a", uniform(s4, g)}, {"b", uniform(Shape{2, 2, 4, 4}, g)}},
          [](Xs x) { return ops::concat_channels(x[0], x[1]); });
  s.check("select_channel", {{"x", uniform(s4, g)}},
          [](Xs x) { return ops::select_channel(x[0], 1); });
  s.check("pixel_shuffle", {{"x", uniform(Shape{1, 8, 2, 3}, g)}},
          [](Xs x) { return ops::pixel_shuffle(x[0], 2); });
  s.check("pixel_unshuffle", {{"x", uniform(Shape{1, 2, 4, 6}, g)}},
          [](Xs x) { return ops::pixel_unshuffle(x[0], 2); });
  s.check("conv2d_3x3",
          {{"x", uniform(Shape{2, 3, 5, 4}, g)},
           {"weight", uniform(Shape{4, 3, 3, 3}, g)},
           {"bias", uniform(Shape{4}, g)}},
          [](Xs x) { return ops::conv2d(x[0], x[1], x[2], 1); });
  s.check("conv2d_1x1",
          {{"x", uniform(Shape{2, 3, 5, 4}, g)},
           {"weight", uniform(Shape{4, 3, 1, 1}, g)},
           {"bias", uniform(Shape{4}, g)}},
          [](Xs x) { return ops::conv2d(x[0], x[1], x[2], 0); });
  s.check("avg_pool2", {{"x", uniform(s4, g)}}, [](Xs x) { return ops::avg_pool2(x[0]); });
  s.check("global_avg_pool", {{"x", uniform(s4, g)}},
          [](Xs x) { return ops::global_avg_pool(x[0]); });
  s.check("scale_pixels", {{"x", uniform(s4, g)}, {"weights", uniform(Shape{2, 1, 4, 4}, g)}},
          [](Xs x) { return ops::scale_pixels(x[0], x[1]); });
  s.check("layer_norm",
          {{"x", uniform(Shape{2, 3, 6}, g)},
           {"gamma", uniform(Shape{6}, g)},
           {"beta", uniform(Shape{6}, g)}},
          [](Xs x) { return ops::layer_norm(x[0], x[1], x[2]); });
  {
    auto state = ops::BatchNormState<T>::create(3);
    s.check("batch_norm2d",
            {{"x", uniform(s4, g)}, {"gamma", uniform(Shape{3}, g)}, {"beta", uniform(Shape{3}, g)}},
            [&state](Xs x) {
              return ops::batch_norm2d(x[0], x[1], x[2], state, ops::NormMode::train, false);
            });
  }
  {
    const train::LabelMap label(2, 3, 3, {0, 1, 1, 0, 0, 1, 1, 1, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0});
    s.check("cross_entropy_2class", {{"logits", uniform(Shape{2, 2, 3, 3}, g, -2, 2)}},
            [&label](Xs x) { return train::cross_entropy_2class(x[0], label); }, true);
  }
  s.check("cosine_head_attention",
          {{"queries", uniform(Shape{2, 5, 6}, g)},
           {"key", away_from_zero(Shape{2, 6}, g)},
           {"value", uniform(Shape{2, 6}, g)}},
          [](Xs x) { return cat::cosine_head_attention(x[0], x[1], x[2], 2); });
  return s.take();
}

GradCheckReport block_check(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamSet<T> ps;
  cat::BlockConfig bc;
  bc.channels = config.encoder.channels[0];
  bc.heads = config.heads[0];
  bc.window_size = config.window_size;
  bc.mlp_ratio = config.mlp_ratio;
  bc.use_gc_cross = config.use_gc_cross;
  bc.use_self_attn = config.use_self_attn;
  const auto block = cat::CATBlock<T>::create(ps, "block", bc, rng);
  randomize(ps, rng);
  std::vector<Parameter<T>> params(ps.params().begin(), ps.params().end());
  auto x = uniform(Shape{1, bc.channels, 8, 8}, rng);
  x.set_requires_grad(true);
  params.push_back({"input", x});
  const auto r_out = uniform(Shape{1, bc.channels, 8, 8}, rng);
  const auto r_mask = uniform(Shape{1, 2, 8, 8}, rng);
  GradCheckOptions opt;
  opt.max_entries = 16;
  opt.seed = seed;
  return grad_check(
      [&] {
        auto out = block(params.back().value);
        return ops::add(ops::sum(ops::mul(out.features, r_out)),
                        ops::sum(ops::mul(out.mask_logits, r_mask)));
      },
      params, opt);
}

GradCheckReport model_check(const ModelConfig& config, std::uint64_t seed,
                            std::size_t image_size, std::size_t max_entries) {
  std::mt19937_64 rng(seed);
  ParamSet<T> ps;
  const auto net = CATNet<T>::create(ps, config, rng);
  randomize(ps, rng);
  {
    NoGradScope no_grad;
    for (int i = 0; i < 30; ++i) {
      const Shape s{4, 3, image_size, image_size};
      net(uniform(s, rng, 0, 1), uniform(s, rng, 0, 1), nn::Mode::training());
    }
  }
  const Shape in{1, 3, image_size, image_size};
  const auto img1 = uniform(in, rng, 0, 1);
  const auto img2 = uniform(in, rng, 0, 1);
  std::vector<Tensor<T>> weights;
  {
    NoGradScope no_grad;
    const auto out = net(img1, img2, nn::Mode::inference());
    weights.push_back(uniform(out.logits.shape(), rng));
    for (const auto& m : out.masks) weights.push_back(uniform(m.shape(), rng));
  }
  std::vector<Parameter<T>> params(ps.params().begin(), ps.params().end());
  GradCheckOptions opt;
  opt.max_entries = max_entries;
  opt.seed = seed;
  return grad_check(
      [&] {
        const auto out = net(img1, img2, nn::Mode::inference());
        Tensor<T> loss = ops::sum(ops::mul(out.logits, weights[0]));
        for (std::size_t k = 0; k < out.masks.size(); ++k) {
          loss = ops::add(loss, ops::sum(ops::mul(out.masks[k], weights[k + 1])));
        }
        return loss;
      },
      params, opt);
}

}  // namespace catcd::checks
