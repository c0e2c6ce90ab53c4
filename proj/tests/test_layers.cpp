#include <doctest.h>

#include <cmath>
#include <vector>

#include "scn/layers.hpp"
#include "scn/ops.hpp"

using namespace scn;

namespace {

// Nested-loop cross-correlation used as the reference for conv2d_forward.
std::vector<double> naive_conv(const Tensor& x, const Conv2dParams& p) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = p.out_channels(), k = p.kernel_size(), s = p.stride, pad = p.padding;
  const std::size_t oh = (h + 2 * pad - k) / s + 1, ow = (w + 2 * pad - k) / s + 1;
  std::vector<double> out(n * o * oh * ow);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double acc = p.bias[oc];
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(y * s + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(xo * s + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += p.kernel[((oc * c + ic) * k + ky) * k + kx] * x[((b * c + ic) * h + iy) * w + ix];
              }
          out[((b * o + oc) * oh + y) * ow + xo] = acc;
        }
  return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("conv2d spatial size") {
  CHECK(conv_output_size(100, 9, 3, 0) == 31);
  CHECK(conv_output_size(31, 9, 3, 0) == 8);
  CHECK_THROWS_WITH(conv_output_size(4, 9, 1, 2), doctest::Contains("larger than padded input"));
  const Tensor x = Tensor::uniform({1, 1, 100, 100}, 0, 1, 1);
  CHECK(conv2d_forward(x, init_conv2d(1, 2, 9, 3, 0, 2)).shape() == Shape{1, 2, 31, 31});
}

TEST_CASE("conv2d closed forms") {
  const Tensor x = Tensor::uniform({2, 1, 5, 5}, -1, 1, 3);
  Conv2dParams id{Tensor::ones({1, 1, 1, 1}), Tensor::zeros({1}), 1, 0};
  CHECK(conv2d_forward(x, id).same_values(x));
  Conv2dParams ones{Tensor::ones({1, 1, 3, 3}), Tensor::zeros({1}), 1, 0};
  CHECK(conv2d_forward(Tensor::ones({1, 1, 3, 3}), ones).same_values(Tensor(Shape{1, 1, 1, 1}, 9.0)));
  CHECK_THROWS(conv2d_forward(Tensor::ones({1, 2, 3, 3}), ones));
  CHECK_THROWS(conv2d_forward(Tensor::ones({1, 1, 3, 3}), Conv2dParams{Tensor::ones({1, 1, 2, 3}),
                                                                        Tensor::zeros({1}), 1, 0}));
}

TEST_CASE("conv2d matches the nested-loop reference over a geometry sweep") {
  std::uint64_t seed = 10;
  std::size_t checked = 0;
  for (std::size_t h = 1; h <= 32; h += 3)
    for (std::size_t k : {1, 2, 3, 5})
      for (std::size_t s : {1, 2, 3})
        for (std::size_t pad : {0, 1, 2}) {
          if (h + 2 * pad < k) {
            CHECK_THROWS(conv_output_size(h, k, s, pad));
            continue;
          }
          CHECK(conv_output_size(h, k, s, pad) == (h + 2 * pad - k) / s + 1);
          const Tensor x = Tensor::uniform({2, 2, h, h}, -1, 1, ++seed);
          Conv2dParams p = init_conv2d(2, 3, k, s, pad, ++seed);
          p.bias = Tensor::uniform({3}, -1, 1, ++seed);
          const Tensor y = conv2d_forward(x, p);
          CHECK(max_abs_diff(y.data(), naive_conv(x, p)) < 1e-10);
          ++checked;
        }
  CHECK(checked > 300);
}

TEST_CASE("conv2d large enough to be split into image chunks") {
  const Tensor x = Tensor::uniform({3, 256, 40, 40}, -1, 1, 21);
  Conv2dParams p = init_conv2d(256, 2, 9, 1, 0, 22);
  p.bias = Tensor::uniform({2}, -1, 1, 23);
  CHECK(max_abs_diff(conv2d_forward(x, p).data(), naive_conv(x, p)) < 1e-10);
}

TEST_CASE("conv2d gradients") {
  const Tensor x = Tensor::uniform({2, 3, 7, 6}, -1, 1, 31);
  Conv2dParams p = init_conv2d(3, 2, 3, 2, 1, 32);
  p.bias = Tensor::uniform({2}, -1, 1, 33);
  const Tensor r = Tensor::uniform({2, 2, 4, 3}, -1, 1, 34);
  auto loss = [&](const Tensor& in, const Conv2dParams& q) { return sum_all(mul(conv2d_forward(in, q), r)); };
  CHECK(grad_check([&](const Tensor& v) { return loss(v, p); }, x) < 1e-6);
  CHECK(grad_check(
            [&](const Tensor& v) {
              Conv2dParams q = p;
              q.kernel = v;
              return loss(x, q);
            },
            p.kernel) < 1e-6);
}

TEST_CASE("batchnorm") {
  SUBCASE("standardized batch passes through") {
    // Per-channel mean 0 and biased variance 1.
    const Tensor x(Shape{4, 1}, {1, -1, 1, -1});
    BatchNormParams p = init_batchnorm(1);
    p.epsilon = 1e-12;
    const Tensor y = batchnorm_forward(x, p, true);
    CHECK(max_abs_diff(y.data(), x.data()) < 1e-6);
  }
  SUBCASE("gamma 0 gives beta") {
    BatchNormParams p = init_batchnorm(2);
    p.gamma = Tensor::zeros({2});
    p.beta = Tensor(Shape{2}, {0.25, -3});
    const Tensor y = batchnorm_forward(Tensor::normal({3, 2, 2, 2}, 0, 1, 3), p, true);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == ((i / 4) % 2 == 0 ? 0.25 : -3.0));
  }
  SUBCASE("constant channel gives beta") {
    BatchNormParams p = init_batchnorm(1);
    p.beta = Tensor(Shape{1}, 0.5);
    const Tensor y = batchnorm_forward(Tensor::constant({3, 1, 2, 2}, 7.0), p, true);
    for (double v : y.data()) CHECK(v == 0.5);
  }
  SUBCASE("training statistics") {
    // With variance 25 the epsilon shortfall eps / var stays below 1e-6.
    const Tensor x = Tensor::normal({6, 3, 4, 4}, 2.0, 5.0, 5);
    BatchNormParams p = init_batchnorm(3);
    const Tensor y = batchnorm_forward(x, p, true);
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0, ss = 0, xs = 0, xss = 0;
      const double cnt = 6 * 16;
      for (std::size_t n = 0; n < 6; ++n)
        for (std::size_t i = 0; i < 16; ++i) {
          const std::size_t at = (n * 3 + c) * 16 + i;
          s += y[at];
          ss += y[at] * y[at];
          xs += x[at];
          xss += x[at] * x[at];
        }
      CHECK(std::abs(s / cnt) < 1e-8);
      CHECK(std::abs(ss / cnt - 1.0) < 1e-6);
      // Running statistics: momentum 0.1 toward the batch mean and the unbiased variance.
      const double mu = xs / cnt;
      const double var = (xss / cnt - mu * mu) * cnt / (cnt - 1);
      CHECK(p.running_mean[c] == doctest::Approx(0.1 * mu).epsilon(1e-12));
      CHECK(p.running_var[c] == doctest::Approx(0.9 + 0.1 * var).epsilon(1e-12));
      // Output variance is var / (var + eps) exactly.
      const double biased = var * (cnt - 1) / cnt;
      CHECK(ss / cnt == doctest::Approx(biased / (biased + 1e-5)).epsilon(1e-12));
    }
  }
  SUBCASE("eval uses running statistics") {
    BatchNormParams p = init_batchnorm(1);
    p.running_mean = Tensor(Shape{1}, 2.0);
    p.running_var = Tensor(Shape{1}, 4.0);
    p.epsilon = 1e-5;
    const Tensor y = batchnorm_forward(Tensor(Shape{1, 1}, 6.0), p, false);
    CHECK(y[0] == doctest::Approx(4.0 / std::sqrt(4.0 + 1e-5)).epsilon(1e-14));
  }
  BatchNormParams p = init_batchnorm(2);
  CHECK_THROWS_WITH(batchnorm_forward(Tensor::ones({1, 2}), p, true), "batchnorm: batch too small");
}

TEST_CASE("dense") {
  const Tensor x = Tensor::uniform({3, 2}, -1, 1, 1);
  CHECK(dense_forward(x, Tensor(Shape{2, 2}, {1, 0, 0, 1}), Tensor::zeros({2})).same_values(x));
  CHECK(dense_forward(Tensor(Shape{1, 2}, 1.0), Tensor(Shape{2, 1}, 1.0), Tensor::zeros({1}))[0] == 2.0);
  CHECK(init_dense(512, 20, 1).parameter_count() == 10260);
  CHECK_THROWS(dense_forward(x, Tensor::ones({3, 2}), Tensor::zeros({2})));
}

TEST_CASE("initialization") {
  const Conv2dParams c = init_conv2d(1, 256, 9, 3, 0, 4);
  const double bound = std::sqrt(6.0 / (81.0 + 81.0 * 256.0));
  CHECK(glorot_bound(81, 81 * 256) == doctest::Approx(bound).epsilon(1e-15));
  double lo = 1, hi = -1;
  for (double v : c.kernel.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -bound);
  CHECK(hi <= bound);
  CHECK(hi > 0.9 * bound);  // the draw spans the range
  for (double v : c.bias.data()) CHECK(v == 0.0);
  CHECK(c.parameter_count() == 20992);
  CHECK(init_conv2d(1, 256, 9, 3, 0, 4).kernel.same_values(c.kernel));
  const BatchNormParams bn = init_batchnorm(3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(bn.gamma[i] == 1.0);
    CHECK(bn.beta[i] == 0.0);
  }
}

TEST_CASE("dropout") {
  SplitMix64 rng(9);
  const Tensor x = Tensor::ones({10000});
  CHECK(dropout(x, 0.2, false, rng).same_values(x));
  const Tensor y = dropout(x, 0.2, true, rng);
  std::size_t zeros = 0;
  for (double v : y.data()) {
    if (v == 0.0) ++zeros;
    else CHECK(v == doctest::Approx(1.25));
  }
  CHECK(std::abs(zeros / 10000.0 - 0.2) < 0.02);
}
