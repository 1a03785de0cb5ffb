#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"
#include "thrifty/errors.hpp"
#include "thrifty/instrument.hpp"
#include "thrifty/ops.hpp"
#include "thrifty/tape.hpp"

using namespace thrifty;
using namespace testing_support;

namespace {

constexpr int kSeeds = 20;
constexpr double kOpTolerance = 1e-5;

ConvKernel<double> kernel_of(Tensor4<double> w, std::size_t groups = 1) { return {std::move(w), groups}; }

}  // namespace

TEST_CASE("tensor layout and invariants") {
  Tensor4<float> t({2, 3, 4, 5});
  CHECK(t.numel() == 120);
  CHECK(t.index(1, 2, 3, 4) == ((1 * 3 + 2) * 4 + 3) * 5 + 4);
  CHECK_THROWS_AS(Tensor4<float>({0, 1, 1, 1}), ConfigError);
  CHECK_THROWS_AS(Tensor4<float>({1, 1, 2, 2}, std::vector<float>(3)), ConfigError);
}

TEST_CASE("conv2d examples") {
  Tensor4<double> ones({1, 1, 3, 3}, 1.0);
  SUBCASE("identity 1x1 kernel") {
    auto y = conv2d(ones, kernel_of(Tensor4<double>({1, 1, 1, 1}, 1.0)), {0, 0});
    CHECK(y == ones);
  }
  SUBCASE("all-ones 3x3 kernel counts overlaps") {
    auto y = conv2d(ones, kernel_of(Tensor4<double>({1, 1, 3, 3}, 1.0)), {1, 1});
    CHECK(y(0, 0, 1, 1) == 9.0);
    CHECK(y(0, 0, 0, 0) == 4.0);
    CHECK(y(0, 0, 2, 2) == 4.0);
    CHECK(y(0, 0, 0, 1) == 6.0);
    CHECK(y(0, 0, 1, 2) == 6.0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(same_padding(2, 3), ConfigError);
    Tensor4<double> x({1, 4, 5, 5});
    CHECK_THROWS_AS(conv2d(x, kernel_of(Tensor4<double>({4, 3, 3, 3})), {1, 1}), ConfigError);
    CHECK_THROWS_AS(conv2d(x, kernel_of(Tensor4<double>({3, 2, 3, 3}), 2), {1, 1}), ConfigError);
  }
}

TEST_CASE("conv2d matches the naive oracle") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    auto x = random_tensor<double>({2, 4, 8, 8}, seed);
    auto w = random_tensor<double>({8, 4, 3, 3}, seed + 100);
    CHECK(max_relative_difference(conv2d(x, kernel_of(w), {1, 1}), naive_conv(x, w, 1, 1, 1), 1e-12) < 1e-6);
    auto wg = random_tensor<double>({8, 2, 3, 3}, seed + 200);
    CHECK(max_relative_difference(conv2d(x, kernel_of(wg, 2), {1, 1}), naive_conv(x, wg, 2, 1, 1), 1e-12) <
          1e-6);
    auto wf = random_tensor<float>({8, 4, 5, 3}, seed + 300);
    auto xf = random_tensor<float>({2, 4, 7, 6}, seed + 400);
    // 32-bit sums of 60 terms: compare against the output scale, not near-zero entries.
    CHECK(max_relative_difference(conv2d(xf, ConvKernel<float>{wf, 1}, {2, 1}), naive_conv(xf, wf, 1, 2, 1),
                                  1.0) < 1e-5);
  }
}

TEST_CASE("conv2d with groups equals independent convolutions on channel slices") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    const std::size_t g = 2, cin = 4, cout = 6;
    auto x = random_tensor<double>({2, cin, 6, 6}, seed);
    auto w = random_tensor<double>({cout, cin / g, 3, 3}, seed + 1);
    auto y = conv2d(x, kernel_of(w, g), {1, 1});
    for (std::size_t k = 0; k < g; ++k) {
      Tensor4<double> xs({2, cin / g, 6, 6});
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < cin / g; ++c)
          for (std::size_t i = 0; i < 36; ++i) xs.plane(n, c)[i] = x.plane(n, k * cin / g + c)[i];
      Tensor4<double> ws({cout / g, cin / g, 3, 3});
      for (std::size_t i = 0; i < ws.numel(); ++i) ws[i] = w[k * ws.numel() + i];
      auto ys = conv2d(xs, kernel_of(ws), {1, 1});
      double worst = 0.0;
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < cout / g; ++c)
          for (std::size_t i = 0; i < 36; ++i) {
            const double a = y.plane(n, k * cout / g + c)[i], b = ys.plane(n, c)[i];
            worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}));
          }
      CHECK(worst < 1e-6);
    }
  }
}

TEST_CASE("conv2d is linear in input and weights (32-bit)") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    auto x = random_tensor<float>({1, 3, 6, 6}, seed);
    auto z = random_tensor<float>({1, 3, 6, 6}, seed + 1);
    auto w = random_tensor<float>({4, 3, 3, 3}, seed + 2);
    const float a = 0.7f, b = -1.3f;
    Tensor4<float> mix(x.shape());
    for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = a * x[i] + b * z[i];
    auto lhs = conv2d(mix, ConvKernel<float>{w, 1}, {1, 1});
    auto yx = conv2d(x, ConvKernel<float>{w, 1}, {1, 1});
    auto yz = conv2d(z, ConvKernel<float>{w, 1}, {1, 1});
    Tensor4<float> rhs(lhs.shape());
    for (std::size_t i = 0; i < rhs.numel(); ++i) rhs[i] = a * yx[i] + b * yz[i];
    // Elements near zero carry cancellation error, so the floor is the output scale.
    CHECK(max_relative_difference(lhs, rhs, 1.0) < 1e-5);
  }
}

TEST_CASE("conv2d_backward") {
  SUBCASE("sum loss through all-ones 1x1 kernel gives all-ones input gradient") {
    auto x = random_tensor<double>({1, 1, 4, 4}, 3);
    ConvKernel<double> k = kernel_of(Tensor4<double>({1, 1, 1, 1}, 1.0));
    auto g = conv2d_backward(Tensor4<double>(x.shape(), 1.0), x, k, {0, 0});
    for (double v : g.input.data()) CHECK(v == 1.0);
  }
  for (std::size_t groups : {std::size_t{1}, std::size_t{4}}) {
    CAPTURE(groups);
    for (int seed = 0; seed < kSeeds; ++seed) {
      auto x = random_tensor<double>({2, 4, 5, 5}, seed);
      auto w = random_tensor<double>({4, 4 / groups, 3, 3}, seed + 50);
      auto r = random_tensor<double>({2, 4, 5, 5}, seed + 99);
      auto loss = [&]() { return weighted_sum(conv2d(x, kernel_of(w, groups), {1, 1}), r); };
      auto g = conv2d_backward(r, x, kernel_of(w, groups), {1, 1});
      CHECK(fd_max_rel_error(x, g.input, loss) < kOpTolerance);
      CHECK(fd_max_rel_error(w, g.weights, loss) < kOpTolerance);
      // The loss is linear in x and in w, so a wide stencil has no truncation error.
      CHECK(fd_max_rel_error(x, g.input, loss, 1e-2) < 1e-6);
      CHECK(fd_max_rel_error(w, g.weights, loss, 1e-2) < 1e-6);
    }
  }
}

TEST_CASE("grouped_conv") {
  const std::size_t f = 8;
  SUBCASE("delta depthwise and identity pointwise give the input") {
    Tensor4<double> dw({f, 1, 3, 3});
    for (std::size_t c = 0; c < f; ++c) dw(c, 0, 1, 1) = 1.0;
    Tensor4<double> pw({f, f, 1, 1});
    for (std::size_t c = 0; c < f; ++c) pw(c, c, 0, 0) = 1.0;
    auto x = random_tensor<double>({2, f, 5, 5}, 4);
    CHECK(grouped_conv(x, kernel_of(dw, f), kernel_of(pw)) == x);
  }
  SUBCASE("weight count") {
    ConvKernel<double> dw = kernel_of(Tensor4<double>({f, 1, 3, 3}), f);
    ConvKernel<double> pw = kernel_of(Tensor4<double>({f, f, 1, 1}));
    CHECK(dw.weights.numel() + pw.weights.numel() == 136);
  }
  SUBCASE("equals the two convolutions composed") {
    auto x = random_tensor<double>({2, f, 6, 6}, 5);
    auto dw = kernel_of(random_tensor<double>({f, 1, 3, 3}, 6), f);
    auto pw = kernel_of(random_tensor<double>({f, f, 1, 1}, 7));
    auto composed = conv2d(conv2d(x, dw, {1, 1}), pw, {0, 0});
    CHECK(grouped_conv(x, dw, pw) == composed);
  }
}

TEST_CASE("batchnorm") {
  SUBCASE("train mode normalizes each channel") {
    auto x = random_tensor<double>({4, 3, 5, 5}, 1, -2.0, 3.0);
    BatchNormState<double> s(3);
    auto y = batchnorm(x, s, Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0.0, sq = 0.0;
      const double m = 4 * 25;
      for (std::size_t n = 0; n < 4; ++n)
        for (double v : y.plane(n, c)) sum += v;
      const double mean = sum / m;
      for (std::size_t n = 0; n < 4; ++n)
        for (double v : y.plane(n, c)) sq += (v - mean) * (v - mean);
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(sq / m - 1.0) < 1e-4);
    }
    for (double v : s.running_var) CHECK(v >= 0.0);
  }
  SUBCASE("running statistics: biased batch variance, unbiased running variance") {
    Tensor4<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    BatchNormState<double> s(1);
    batchnorm(x, s, Mode::train);
    CHECK(s.running_mean[0] == doctest::Approx(0.1 * 2.5).epsilon(1e-12));
    CHECK(s.running_var[0] == doctest::Approx(0.9 + 0.1 * (5.0 / 3.0)).epsilon(1e-12));
  }
  SUBCASE("eval mode with identity running stats is the affine map") {
    BatchNormState<double> s(2);
    s.gamma.fill(2.0);
    s.beta.fill(3.0);
    s.epsilon = 0.0;
    Tensor4<double> x({2, 2, 3, 3}, 1.5);
    auto y = batchnorm(x, s, Mode::eval);
    for (double v : y.data()) CHECK(v == doctest::Approx(6.0));
  }
  SUBCASE("eval mode is independent of batch composition") {
    BatchNormState<double> s(3);
    s.running_mean = {0.3, -0.2, 1.0};
    s.running_var = {2.0, 0.5, 1.5};
    auto x = random_tensor<double>({5, 3, 4, 4}, 9);
    auto full = batchnorm(x, s, Mode::eval);
    auto part = batchnorm(x.slice_batch(2, 1), s, Mode::eval);
    CHECK(part == full.slice_batch(2, 1));
  }
  SUBCASE("errors") {
    BatchNormState<double> s(3);
    CHECK_THROWS_AS(batchnorm(Tensor4<double>({2, 2, 2, 2}), s, Mode::train), ConfigError);
    CHECK_THROWS_AS(batchnorm(Tensor4<double>({1, 3, 1, 1}), s, Mode::train), ConfigError);
  }
  SUBCASE("gradients of sum(output^2)") {
    for (int seed = 0; seed < kSeeds; ++seed) {
      auto x = random_tensor<double>({3, 2, 3, 3}, seed);
      BatchNormState<double> s(2);
      s.gamma = random_tensor<double>({1, 2, 1, 1}, seed + 7, 0.5, 1.5);
      s.beta = random_tensor<double>({1, 2, 1, 1}, seed + 8);
      auto r = random_tensor<double>(x.shape(), seed + 9, 0.0, 2.0);
      auto grads_for = [&](const Tensor4<double>& weights) {
        BatchNormState<double> work = s;
        BatchNormCache<double> cache;
        auto y = batchnorm(x, work, Mode::train, &cache);
        Tensor4<double> gy(y.shape());
        for (std::size_t i = 0; i < y.numel(); ++i) gy[i] = 2.0 * weights[i] * y[i];
        return batchnorm_backward(gy, cache, s.gamma);
      };
      auto loss_for = [&](const Tensor4<double>& weights) {
        return [&x, &s, &weights]() {
          BatchNormState<double> tmp = s;
          auto y = batchnorm(x, tmp, Mode::train);
          double acc = 0.0;
          for (std::size_t i = 0; i < y.numel(); ++i) acc += weights[i] * y[i] * y[i];
          return acc;
        };
      };
      const Tensor4<double> ones(x.shape(), 1.0);
      auto g = grads_for(ones);
      auto loss = loss_for(ones);
      CHECK(fd_max_rel_error(s.gamma, g.gamma, loss) < 1e-6);
      CHECK(fd_max_rel_error(s.beta, g.beta, loss) < 1e-6);
      // sum(y^2) barely depends on x (normalization removes scale and shift), so the
      // true input gradient is O(epsilon); compare it absolutely.
      double abs_err = 0.0;
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const double keep = x[i];
        x[i] = keep + 1e-5;
        const double lp = loss();
        x[i] = keep - 1e-5;
        const double lm = loss();
        x[i] = keep;
        abs_err = std::max(abs_err, std::abs((lp - lm) / 2e-5 - g.input[i]));
      }
      CHECK(abs_err < 1e-8);
      // A weighted sum of squares gives O(1) input gradients for the relative check.
      // Step 1e-4 balances truncation against roundoff on the smallest entries.
      auto gw = grads_for(r);
      auto loss_w = loss_for(r);
      CHECK(fd_max_rel_error(x, gw.input, loss_w) < kOpTolerance);
      CHECK(fd_max_rel_error(x, gw.input, loss_w, 1e-4) < 1e-6);
      CHECK(fd_max_rel_error(s.gamma, gw.gamma, loss_w) < 1e-6);
    }
  }
}

TEST_CASE("activations") {
  Tensor4<double> x({1, 1, 1, 3}, std::vector<double>{-1, 0, 2});
  CHECK(relu(x) == Tensor4<double>({1, 1, 1, 3}, std::vector<double>{0, 0, 2}));
  CHECK(relu_backward(Tensor4<double>(x.shape(), 1.0), x) ==
        Tensor4<double>({1, 1, 1, 3}, std::vector<double>{0, 0, 1}));
  CHECK(tanh_act(Tensor4<double>({1, 1, 1, 1}, 0.0))[0] == 0.0);
  for (int seed = 0; seed < kSeeds; ++seed) {
    auto z = random_tensor<double>({2, 3, 4, 4}, seed, -2.0, 2.0);
    auto r = random_tensor<double>(z.shape(), seed + 1);
    auto loss_t = [&]() { return weighted_sum(tanh_act(z), r); };
    CHECK(fd_max_rel_error(z, tanh_backward(r, tanh_act(z)), loss_t) < kOpTolerance);
    // Keep inputs away from the kink so the stencil does not straddle it.
    for (auto& v : z.data()) v += v >= 0 ? 0.01 : -0.01;
    auto loss_r = [&]() { return weighted_sum(relu(z), r); };
    CHECK(fd_max_rel_error(z, relu_backward(r, z), loss_r) < kOpTolerance);
  }
}

TEST_CASE("maxpool2x2") {
  CHECK(maxpool2x2(Tensor4<double>({1, 2, 4, 6}, 3.0)) == Tensor4<double>({1, 2, 2, 3}, 3.0));
  CHECK(maxpool2x2(Tensor4<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}))[0] == 4.0);
  SUBCASE("ties go to the first index") {
    ArgmaxIndex idx;
    maxpool2x2(Tensor4<double>({1, 1, 2, 2}, 1.0), &idx);
    CHECK(idx[0] == 0);
  }
  SUBCASE("odd sizes are replicate padded") {
    Tensor4<double> x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto y = maxpool2x2(x);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y == Tensor4<double>({1, 1, 2, 2}, std::vector<double>{5, 6, 8, 9}));
  }
  for (int seed = 0; seed < kSeeds; ++seed) {
    auto x = random_tensor<double>({2, 2, 4, 4}, seed);
    auto r = random_tensor<double>({2, 2, 2, 2}, seed + 1);
    ArgmaxIndex idx;
    maxpool2x2(x, &idx);
    auto g = max_backward(r, idx, x.shape());
    auto loss = [&]() { return weighted_sum(maxpool2x2(x), r); };
    CHECK(fd_max_rel_error(x, g, loss) < kOpTolerance);
    // Piecewise linear: a wider stencil that stays inside one piece removes roundoff.
    CHECK(fd_max_rel_error(x, g, loss, 1e-4) < 1e-8);
  }
}

TEST_CASE("global_max_pool") {
  Tensor4<double> x({1, 2, 2, 2}, std::vector<double>{1, 5, 2, 3, -1, -4, -2, -3});
  auto y = global_max_pool(x);
  CHECK(y.shape() == Shape{1, 2, 1, 1});
  CHECK(y[0] == 5.0);
  CHECK(y[1] == -1.0);
  CHECK(global_max_pool(Tensor4<double>({2, 3, 4, 4}, 2.5)) == Tensor4<double>({2, 3, 1, 1}, 2.5));
  auto z = random_tensor<double>({2, 3, 4, 4}, 11);
  auto perm = z;
  std::mt19937_64 rng(5);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) std::shuffle(perm.plane(n, c).begin(), perm.plane(n, c).end(), rng);
  CHECK(global_max_pool(perm) == global_max_pool(z));
  for (int seed = 0; seed < kSeeds; ++seed) {
    auto x2 = random_tensor<double>({2, 3, 3, 5}, seed);
    auto r = random_tensor<double>({2, 3, 1, 1}, seed + 1);
    ArgmaxIndex idx;
    global_max_pool(x2, &idx);
    auto loss = [&]() { return weighted_sum(global_max_pool(x2), r); };
    CHECK(fd_max_rel_error(x2, max_backward(r, idx, x2.shape()), loss) < kOpTolerance);
  }
}

TEST_CASE("channel_pad") {
  auto x = random_tensor<double>({2, 3, 4, 4}, 1);
  CHECK(channel_pad(x, 3) == x);
  auto y = channel_pad(x, 64);
  CHECK(y.shape() == Shape{2, 64, 4, 4});
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 16; ++i) CHECK(y.plane(n, c)[i] == x.plane(n, c)[i]);
    for (std::size_t c = 3; c < 64; ++c)
      for (double v : y.plane(n, c)) CHECK(v == 0.0);
  }
  CHECK_THROWS_AS(channel_pad(x, 2), ConfigError);
  auto g = random_tensor<double>({2, 8, 4, 4}, 2);
  auto gi = channel_pad_backward(g, 3);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 16; ++i) CHECK(gi.plane(n, c)[i] == g.plane(n, c)[i]);
}

TEST_CASE("linear") {
  const std::size_t F = 5;
  Tensor4<double> eye({1, 1, F, F});
  for (std::size_t i = 0; i < F; ++i) eye(0, 0, i, i) = 1.0;
  auto x = random_tensor<double>({3, F, 1, 1}, 1);
  auto y = linear(x, eye, Tensor4<double>({1, 1, 1, F}));
  CHECK(y == x);
  CHECK(Tensor4<double>({1, 1, 64, 10}).numel() + Tensor4<double>({1, 1, 1, 10}).numel() == 650);
  CHECK_THROWS_AS(linear(x, Tensor4<double>({1, 1, F + 1, 2}), Tensor4<double>({1, 1, 1, 2})), ConfigError);
  for (int seed = 0; seed < kSeeds; ++seed) {
    auto in = random_tensor<double>({3, 4, 1, 1}, seed);
    auto w = random_tensor<double>({1, 1, 4, 6}, seed + 1);
    auto b = random_tensor<double>({1, 1, 1, 6}, seed + 2);
    auto r = random_tensor<double>({3, 6, 1, 1}, seed + 3);
    auto loss = [&]() { return weighted_sum(linear(in, w, b), r); };
    auto g = linear_backward(r, in, w);
    CHECK(fd_max_rel_error(in, g.input, loss) < kOpTolerance);
    CHECK(fd_max_rel_error(in, g.input, loss, 1e-2) < 1e-8);
    CHECK(fd_max_rel_error(w, g.weights, loss, 1e-2) < 1e-8);
    CHECK(fd_max_rel_error(b, g.bias, loss, 1e-2) < 1e-8);
  }
}

TEST_CASE("softmax_cross_entropy") {
  const std::vector<int> labels{3, 7};
  CHECK(softmax_cross_entropy(Tensor4<double>({2, 10, 1, 1}, 0.25), labels).loss ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));
  Tensor4<double> big({2, 10, 1, 1});
  big(0, 3, 0, 0) = 1e4;
  big(1, 7, 0, 0) = 1e4;
  auto r = softmax_cross_entropy(big, labels);
  CHECK(std::isfinite(r.loss));
  CHECK(r.loss < 1e-12);
  CHECK_THROWS_AS(softmax_cross_entropy(big, std::vector<int>{3, 10}), DataError);
  CHECK_THROWS_AS(softmax_cross_entropy(big, std::vector<int>{-1, 0}), DataError);
  for (int seed = 0; seed < kSeeds; ++seed) {
    auto s = random_tensor<double>({4, 5, 1, 1}, seed, -3.0, 3.0);
    const std::vector<int> l{0, 4, 2, 2};
    auto loss = [&]() { return softmax_cross_entropy(s, l).loss; };
    CHECK(fd_max_rel_error(s, softmax_cross_entropy(s, l).grad_scores, loss) < 1e-7);
  }
}

TEST_CASE("tape backward through a composite of primitives") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    auto x = random_tensor<double>({2, 3, 6, 6}, seed);
    auto w = random_tensor<double>({4, 4, 3, 3}, seed + 1, -0.5, 0.5);
    BatchNormState<double> bn(4);
    bn.gamma = random_tensor<double>({1, 4, 1, 1}, seed + 2, 0.5, 1.5);
    bn.beta = random_tensor<double>({1, 4, 1, 1}, seed + 3);
    auto fw = random_tensor<double>({1, 1, 4, 3}, seed + 4);
    auto fb = random_tensor<double>({1, 1, 1, 3}, seed + 5);
    const std::vector<int> labels{1, 2};

    auto run = [&](Tape<double>& tape, Tensor4<double>* gx, Tensor4<double>* gw, Tensor4<double>* gg,
                   Tensor4<double>* gb, Tensor4<double>* gfw) {
      BatchNormState<double> state = bn;
      Var<double> v = ad::channel_pad(tape, tape.parameter(x, gx), 4);
      Var<double> a = ad::tanh_act(tape, ad::conv2d(tape, v, tape.parameter(w, gw), 1, {1, 1}));
      Var<double> s = ad::maxpool2x2(tape, ad::add(tape, a, v));
      Var<double> n = ad::batchnorm(tape, s, tape.parameter(state.gamma, gg), tape.parameter(state.beta, gb),
                                    state, Mode::train);
      Var<double> logits =
          ad::linear(tape, ad::global_max_pool(tape, n), tape.parameter(fw, gfw), tape.constant(fb));
      return ad::softmax_cross_entropy<double>(tape, logits, labels);
    };
    Tensor4<double> gx(x.shape()), gw(w.shape()), gg(bn.gamma.shape()), gb(bn.beta.shape()), gfw(fw.shape());
    {
      Tape<double> tape(true);
      Var<double> loss = run(tape, &gx, &gw, &gg, &gb, &gfw);
      tape.backward(loss);
    }
    auto loss = [&]() {
      Tape<double> tape(false);
      return run(tape, nullptr, nullptr, nullptr, nullptr, nullptr)->value[0];
    };
    CHECK(fd_max_rel_error(x, gx, loss) < kOpTolerance);
    CHECK(fd_max_rel_error(w, gw, loss) < kOpTolerance);
    CHECK(fd_max_rel_error(bn.gamma, gg, loss) < kOpTolerance);
    CHECK(fd_max_rel_error(bn.beta, gb, loss) < kOpTolerance);
    CHECK(fd_max_rel_error(fw, gfw, loss) < kOpTolerance);
  }
}

TEST_CASE("mac tally counts the scalar kernel") {
  auto x = random_tensor<float>({2, 4, 5, 5}, 1);
  auto w = random_tensor<float>({6, 2, 3, 3}, 2);
  Tensor4<float> plain = conv2d(x, ConvKernel<float>{w, 2}, {1, 1});
  ScopedMacTally tally;
  Tensor4<float> counted = conv2d(x, ConvKernel<float>{w, 2}, {1, 1});
  // Dense convention: every output position costs (f_in / groups) * kh * kw, border included.
  CHECK(tally.count() == std::uint64_t{2} * 6 * 2 * 9 * 25);
  CHECK(max_relative_difference(plain, counted, 1e-3) < 1e-5);
}
