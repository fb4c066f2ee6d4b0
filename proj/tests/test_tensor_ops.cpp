#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "catcd/gradcheck.hpp"
#include "catcd/ops.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace catcd;
using catcd::testing::max_abs_diff;
using catcd::testing::naive_conv;
using catcd::testing::probe_loss;
using catcd::testing::random_tensor;

namespace {

// Loop oracle: c[i][j] = sum_k a[i][k] b[k][j].
std::vector<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  std::vector<double> c(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * p + j] += a.data()[i * k + t] * b.data()[t * p + j];
  return c;
}

GradCheckReport check_unary(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                            Shape in_shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::vector<Parameter<double>> params{{"x", random_tensor(in_shape, rng, lo, hi)}};
  params[0].value.set_requires_grad(true);
  Tensor<double> probe;
  {
    NoGradScope ng;
    probe = random_tensor(f(params[0].value).shape(), rng);
  }
  return grad_check([&] { return probe_loss(f(params[0].value), probe); }, params);
}

}  // namespace

TEST_CASE("shape invariants") {
  CHECK(Shape{2, 3, 4}.numel() == 24);
  CHECK_THROWS_AS(Shape({2, 0}), ShapeError);
  Tensor<float> t(Shape{2, 3});
  CHECK(t.numel() == t.shape().numel());
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST_CASE("matmul") {
  std::mt19937_64 rng(1);
  SUBCASE("identity") {
    auto a = random_tensor(Shape{3, 3}, rng);
    Tensor<double> eye(Shape{3, 3});
    for (int i = 0; i < 3; ++i) eye.data()[i * 4] = 1.0;
    auto c = ops::matmul(a, eye);
    CHECK(max_abs_diff(c.data(), a.data()) == 0.0);
  }
  SUBCASE("annihilator") {
    Tensor<double> z(Shape{2, 4});
    auto c = ops::matmul(z, random_tensor(Shape{4, 3}, rng));
    CHECK(c.shape() == Shape{2, 3});
    for (double v : c.data()) CHECK(v == 0.0);
  }
  SUBCASE("random 2x2 against loop oracle") {
    auto a = random_tensor(Shape{2, 2}, rng);
    auto b = random_tensor(Shape{2, 2}, rng);
    auto c = ops::matmul(a, b);
    auto ref = naive_matmul(a, b);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(c.data()[i] - ref[i]) <= 1e-6 * std::max(1.0, std::abs(ref[i])));
  }
  SUBCASE("shape mismatch names both shapes") {
    try {
      ops::matmul(Tensor<double>(Shape{2, 3}), Tensor<double>(Shape{4, 2}));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
      CHECK(msg.find("[4x2]") != std::string::npos);
    }
  }
}

TEST_CASE("conv2d") {
  std::mt19937_64 rng(2);
  SUBCASE("1x1 identity on channel 0") {
    auto x = random_tensor(Shape{1, 3, 4, 4}, rng);
    Tensor<double> w(Shape{1, 3, 1, 1});
    w.data()[0] = 1.0;
    Tensor<double> b(Shape{1});
    auto y = ops::conv2d(x, w, b, 0);
    CHECK(y.shape() == Shape{1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) CHECK(y.data()[i] == x.data()[i]);
  }
  SUBCASE("zero weights give the bias") {
    auto x = random_tensor(Shape{2, 2, 3, 3}, rng);
    Tensor<double> w(Shape{2, 2, 3, 3});
    Tensor<double> b(Shape{2}, std::vector<double>{0.5, -1.5});
    auto y = ops::conv2d(x, w, b, 1);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 9; ++i) CHECK(y.data()[(n * 2 + c) * 9 + i] == b.data()[c]);
  }
  SUBCASE("random 3x3 against nested-loop oracle") {
    auto x = random_tensor(Shape{1, 2, 4, 4}, rng);
    auto w = random_tensor(Shape{3, 2, 3, 3}, rng);
    auto b = random_tensor(Shape{3}, rng);
    auto y = ops::conv2d(x, w, b, 1);
    auto ref = naive_conv(x, w, b, 1);
    CHECK(max_abs_diff(y.data(), std::span<const double>(ref)) <= 1e-6);
  }
  SUBCASE("errors") {
    auto x = random_tensor(Shape{1, 2, 4, 4}, rng);
    CHECK_THROWS_AS(ops::conv2d(x, Tensor<double>(Shape{1, 3, 3, 3}), Tensor<double>(), 1), ShapeError);
    CHECK_THROWS_AS(ops::conv2d(x, Tensor<double>(Shape{1, 2, 5, 5}), Tensor<double>(), 2), ShapeError);
    CHECK_THROWS_AS(ops::conv2d(x, Tensor<double>(Shape{1, 2, 3, 3}), Tensor<double>(), 0), ShapeError);
  }
}

TEST_CASE("layer_norm") {
  Tensor<double> gamma(Shape{2}, 1.0);
  Tensor<double> beta(Shape{2}, 0.0);
  SUBCASE("constant row maps to zero") {
    auto y = ops::layer_norm(Tensor<double>(Shape{1, 2}, 3.0), gamma, beta);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 0.0);
  }
  SUBCASE("already normalized row") {
    auto y = ops::layer_norm(Tensor<double>(Shape{1, 2}, std::vector<double>{-1, 1}), gamma, beta);
    const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y.data()[0] == doctest::Approx(-expect).epsilon(1e-12));
    CHECK(y.data()[1] == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("random row moments") {
    std::mt19937_64 rng(3);
    Tensor<double> g(Shape{16}, 1.0), b(Shape{16}, 0.0);
    auto y = ops::layer_norm(random_tensor(Shape{1, 16}, rng, -3, 5), g, b);
    double mu = 0, var = 0;
    for (double v : y.data()) mu += v;
    mu /= 16;
    for (double v : y.data()) var += (v - mu) * (v - mu);
    var /= 16;
    CHECK(std::abs(mu) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-3);
  }
  CHECK_THROWS_AS(ops::layer_norm(Tensor<double>(Shape{1, 3}), gamma, beta), ShapeError);
}

TEST_CASE("batch_norm2d") {
  std::mt19937_64 rng(4);
  auto x = random_tensor(Shape{3, 2, 4, 4}, rng, -2, 3);
  Tensor<double> gamma(Shape{2}, 1.0), beta(Shape{2}, 0.0);
  SUBCASE("train mode normalizes per channel") {
    auto st = ops::BatchNormState<double>::create(2);
    auto y = ops::batch_norm2d(x, gamma, beta, st, ops::NormMode::train);
    for (std::size_t c = 0; c < 2; ++c) {
      double mu = 0, var = 0;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 16; ++i) mu += y.data()[(n * 2 + c) * 16 + i];
      mu /= 48;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 16; ++i) {
          const double d = y.data()[(n * 2 + c) * 16 + i] - mu;
          var += d * d;
        }
      var /= 48;
      CHECK(std::abs(mu) <= 1e-5);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
  }
  SUBCASE("running stats follow the single-step recurrence") {
    auto st = ops::BatchNormState<double>::create(2);
    st.running_mean.data()[0] = 0.3;
    st.running_var.data()[1] = 2.0;
    const double init_mean[2] = {0.3, 0.0};
    const double init_var[2] = {1.0, 2.0};
    ops::batch_norm2d(x, gamma, beta, st, ops::NormMode::train);
    for (std::size_t c = 0; c < 2; ++c) {
      double mu = 0, ss = 0;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 16; ++i) mu += x.data()[(n * 2 + c) * 16 + i];
      mu /= 48;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 16; ++i) {
          const double d = x.data()[(n * 2 + c) * 16 + i] - mu;
          ss += d * d;
        }
      const double unbiased = ss / 47;
      CHECK(st.running_mean.data()[c] == doctest::Approx(0.9 * init_mean[c] + 0.1 * mu).epsilon(1e-12));
      CHECK(st.running_var.data()[c] == doctest::Approx(0.9 * init_var[c] + 0.1 * unbiased).epsilon(1e-12));
    }
    CHECK(st.tracked.data()[0] == 1.0);
  }
  SUBCASE("eval mode is pure and starts from zero mean, unit variance") {
    auto st = ops::BatchNormState<double>::create(2);
    CHECK_FALSE(st.initialized());
    auto fresh = ops::batch_norm2d(x, gamma, beta, st, ops::NormMode::eval);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const std::size_t c = (i / (x.dim(2) * x.dim(3))) % 2;
      CHECK(fresh.data()[i] ==
            doctest::Approx(gamma.data()[c] * x.data()[i] / std::sqrt(1.0 + 1e-5) + beta.data()[c]));
    }
    ops::batch_norm2d(x, gamma, beta, st, ops::NormMode::train);
    auto a = ops::batch_norm2d(x, gamma, beta, st, ops::NormMode::eval);
    auto b = ops::batch_norm2d(x, gamma, beta, st, ops::NormMode::eval);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    CHECK(st.tracked.data()[0] == 1.0);
  }
}

TEST_CASE("softmax, gelu, abs") {
  auto s = ops::softmax(Tensor<double>(Shape{1, 2}, 7.0), 1);
  CHECK(s.data()[0] == doctest::Approx(0.5));
  CHECK(s.data()[1] == doctest::Approx(0.5));
  auto g = ops::gelu(Tensor<double>(Shape{2}, std::vector<double>{0.0, 10.0}));
  CHECK(g.data()[0] == 0.0);
  CHECK(std::abs(g.data()[1] - 10.0) <= 1e-4);
  std::mt19937_64 rng(5);
  auto x1 = random_tensor(Shape{2, 3}, rng);
  auto d = ops::abs(ops::sub(x1, x1));
  for (double v : d.data()) CHECK(v == 0.0);

  SUBCASE("softmax rows lie in (0,1) and sum to 1") {
    for (int trial = 0; trial < 50; ++trial) {
      auto x = random_tensor(Shape{3, 5, 4}, rng, -8, 8);
      for (std::size_t axis = 0; axis < 3; ++axis) {
        auto y = ops::softmax(x, axis);
        const std::size_t n = x.dim(axis);
        std::size_t inner = 1;
        for (std::size_t a = axis + 1; a < 3; ++a) inner *= x.dim(a);
        const std::size_t outer = x.numel() / (n * inner);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t c = 0; c < inner; ++c) {
            double total = 0;
            for (std::size_t k = 0; k < n; ++k) {
              const double v = y.data()[(o * n + k) * inner + c];
              CHECK(v > 0.0);
              CHECK(v < 1.0);
              total += v;
            }
            CHECK(std::abs(total - 1.0) <= 1e-6);
          }
      }
    }
  }
}

TEST_CASE("pixel_shuffle") {
  SUBCASE("r = 1 is identity") {
    std::mt19937_64 rng(6);
    auto x = random_tensor(Shape{2, 3, 2, 2}, rng);
    auto y = ops::pixel_shuffle(x, 1);
    CHECK(y.shape() == x.shape());
    CHECK(max_abs_diff(y.data(), x.data()) == 0.0);
  }
  SUBCASE("forced 1x4x1x1 permutation") {
    Tensor<double> x(Shape{1, 4, 1, 1}, std::vector<double>{1, 2, 3, 4});
    auto y = ops::pixel_shuffle(x, 2);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.data()[0] == 1);
    CHECK(y.data()[1] == 2);
    CHECK(y.data()[2] == 3);
    CHECK(y.data()[3] == 4);
  }
  SUBCASE("shuffle/unshuffle round trips exactly") {
    std::mt19937_64 rng(7);
    for (std::size_t r : {1u, 2u, 4u}) {
      auto x = random_tensor(Shape{2, 2 * r * r, 3, 2}, rng);
      auto back = ops::pixel_unshuffle(ops::pixel_shuffle(x, r), r);
      CHECK(back.shape() == x.shape());
      CHECK(max_abs_diff(back.data(), x.data()) == 0.0);
      auto img = random_tensor(Shape{1, 3, 2 * r, 4 * r}, rng);
      auto again = ops::pixel_shuffle(ops::pixel_unshuffle(img, r), r);
      CHECK(max_abs_diff(again.data(), img.data()) == 0.0);
    }
  }
  CHECK_THROWS_AS(ops::pixel_shuffle(Tensor<double>(Shape{1, 6, 2, 2}), 2), ShapeError);
}

TEST_CASE("global_avg_pool") {
  CHECK(ops::global_avg_pool(Tensor<double>(Shape{1, 1, 3, 3}, 2.5)).item() == doctest::Approx(2.5));
  Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  CHECK(ops::global_avg_pool(x).item() == 2.5);
  std::mt19937_64 rng(8);
  auto r = random_tensor(Shape{2, 3, 5, 4}, rng);
  auto y = ops::global_avg_pool(r);
  for (std::size_t p = 0; p < 6; ++p) {
    double acc = 0;
    for (std::size_t i = 0; i < 20; ++i) acc += r.data()[p * 20 + i];
    CHECK(std::abs(y.data()[p] - acc / 20) <= 1e-6);
  }
}

TEST_CASE("backward basics") {
  std::mt19937_64 rng(9);
  auto x = random_tensor(Shape{3, 4}, rng);
  x.set_requires_grad(true);
  {
    Tape tape;
    Tensor<double> loss;
    {
      TapeScope scope(tape);
      loss = ops::sum(x);
    }
    backward(loss, tape);
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  x.zero_grad();
  {
    Tape tape;
    Tensor<double> loss;
    {
      TapeScope scope(tape);
      loss = ops::sum(ops::mul(x, x));
    }
    backward(loss, tape);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(2 * x.data()[i]));
    CHECK(tape.size() == 0);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape tape;
    CHECK_THROWS_AS(backward(x, tape), ShapeError);
  }
  SUBCASE("no recording without an active tape") {
    Tape tape;
    auto y = ops::mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  SUBCASE("disconnected parameter reports zero gradient") {
    std::vector<Parameter<double>> params{{"used", x}, {"unused", random_tensor(Shape{2}, rng)}};
    params[1].value.set_requires_grad(true);
    auto report = grad_check([&] { return ops::sum(ops::mul(x, x)); }, params);
    CHECK(report.entries[1].all_zero);
    CHECK(report.passed(1e-4));
  }
}

TEST_CASE("every op passes central-difference gradient checks over 20 seeds") {
  using F = std::function<Tensor<double>(const Tensor<double>&)>;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    auto w3 = random_tensor(Shape{3, 2, 3, 3}, rng);
    auto w1 = random_tensor(Shape{3, 2, 1, 1}, rng);
    auto cb = random_tensor(Shape{3}, rng);
    auto mm = random_tensor(Shape{4, 3}, rng);
    auto other = random_tensor(Shape{2, 2, 4, 4}, rng);
    auto gamma = random_tensor(Shape{4}, rng, 0.5, 1.5);
    auto beta = random_tensor(Shape{4}, rng);
    auto gamma2 = random_tensor(Shape{2}, rng, 0.5, 1.5);
    auto beta2 = random_tensor(Shape{2}, rng);
    auto weights = random_tensor(Shape{2, 1, 4, 4}, rng);
    auto bmat = random_tensor(Shape{3, 4, 5}, rng);
    auto rows4 = random_tensor(Shape{3, 4}, rng);

    const std::vector<std::pair<const char*, std::pair<F, Shape>>> cases = {
        {"add", {[&](const auto& x) { return ops::add(x, other); }, Shape{2, 2, 4, 4}}},
        {"sub", {[&](const auto& x) { return ops::sub(other, x); }, Shape{2, 2, 4, 4}}},
        {"mul", {[&](const auto& x) { return ops::mul(x, other); }, Shape{2, 2, 4, 4}}},
        {"abs", {[&](const auto& x) { return ops::abs(x); }, Shape{2, 2, 4, 4}}},
        {"scale", {[&](const auto& x) { return ops::scale(x, -1.7); }, Shape{2, 3}}},
        {"gelu", {[&](const auto& x) { return ops::gelu(x); }, Shape{3, 5}}},
        {"softmax", {[&](const auto& x) { return ops::softmax(x, 1); }, Shape{2, 3, 4}}},
        {"mean", {[&](const auto& x) { return ops::mean(x); }, Shape{2, 3}}},
        {"matmul", {[&](const auto& x) { return ops::matmul(x, mm); }, Shape{2, 4}}},
        {"matmul_rhs", {[&](const auto& x) { return ops::matmul(mm, x); }, Shape{3, 2}}},
        {"bmm", {[&](const auto& x) { return ops::bmm(x, bmat); }, Shape{3, 2, 4}}},
        {"bmm_t", {[&](const auto& x) { return ops::bmm(x, bmat, true); }, Shape{3, 2, 5}}},
        {"bmm_rhs_t", {[&](const auto& x) { return ops::bmm(bmat, x, true); }, Shape{3, 2, 5}}},
        {"linear", {[&](const auto& x) { return ops::linear(x, mm, cb); }, Shape{2, 2, 4}}},
        {"reshape", {[&](const auto& x) { return ops::reshape(x, Shape{6, 2}); }, Shape{2, 3, 2}}},
        {"permute", {[&](const auto& x) { return ops::permute(x, {2, 0, 1}); }, Shape{2, 3, 4}}},
        {"concat", {[&](const auto& x) { return ops::concat_channels(x, other); }, Shape{2, 1, 4, 4}}},
        {"select", {[&](const auto& x) { return ops::select_channel(x, 1); }, Shape{2, 3, 2, 2}}},
        {"shuffle", {[&](const auto& x) { return ops::pixel_shuffle(x, 2); }, Shape{1, 8, 2, 2}}},
        {"conv3", {[&](const auto& x) { return ops::conv2d(x, w3, cb, 1); }, Shape{2, 2, 4, 4}}},
        {"conv1", {[&](const auto& x) { return ops::conv2d(x, w1, cb, 0); }, Shape{2, 2, 4, 4}}},
        {"conv3_w", {[&](const auto& w) { return ops::conv2d(other, w, cb, 1); }, Shape{3, 2, 3, 3}}},
        {"avg_pool", {[&](const auto& x) { return ops::avg_pool2(x); }, Shape{2, 2, 4, 4}}},
        {"gap", {[&](const auto& x) { return ops::global_avg_pool(x); }, Shape{2, 3, 2, 3}}},
        {"scale_px", {[&](const auto& x) { return ops::scale_pixels(x, weights); }, Shape{2, 3, 4, 4}}},
        {"scale_px_w", {[&](const auto& w) { return ops::scale_pixels(other, w); }, Shape{2, 1, 4, 4}}},
        {"layer_norm", {[&](const auto& x) { return ops::layer_norm(x, gamma, beta); }, Shape{3, 4}}},
        {"layer_norm_gamma", {[&](const auto& g) { return ops::layer_norm(rows4, g, beta); }, Shape{4}}},
        {"batch_norm", {[&](const auto& x) {
                          auto st = ops::BatchNormState<double>::create(2);
                          return ops::batch_norm2d(x, gamma2, beta2, st, ops::NormMode::train);
                        },
                        Shape{3, 2, 2, 2}}},
        {"batch_norm_eval", {[&](const auto& x) {
                               auto st = ops::BatchNormState<double>::create(2);
                               st.tracked.data()[0] = 1;
                               st.running_var.data()[1] = 0.5;
                               return ops::batch_norm2d(x, gamma2, beta2, st, ops::NormMode::eval);
                             },
                             Shape{3, 2, 2, 2}}},
    };
    for (const auto& [name, c] : cases) {
      CAPTURE(name);
      CAPTURE(seed);
      const double lo = std::string(name) == "abs" ? 0.1 : -1.0;  // keep away from the kink
      auto report = check_unary(c.first, c.second, seed, lo, 1.0);
      CHECK(report.max_rel_error() <= 1e-4);
    }
  }
}

TEST_CASE("ops are deterministic") {
  std::mt19937_64 rng(11);
  auto x = random_tensor<float>(Shape{2, 4, 8, 8}, rng);
  auto w = random_tensor<float>(Shape{5, 4, 3, 3}, rng);
  auto b = random_tensor<float>(Shape{5}, rng);
  auto a1 = ops::gelu(ops::conv2d(x, w, b, 1));
  auto a2 = ops::gelu(ops::conv2d(x, w, b, 1));
  CHECK(std::equal(a1.data().begin(), a1.data().end(), a2.data().begin()));
}
