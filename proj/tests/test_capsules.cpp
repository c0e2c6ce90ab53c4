#include <doctest.h>

#include <cmath>
#include <vector>

#include "scn/capsules.hpp"
#include "scn/ops.hpp"

using namespace scn;

namespace {

struct RefRouting {
  std::vector<double> v;                    // [N, U, D]
  std::vector<std::vector<double>> c_hist;  // per iteration, [N, L, U]
};

// Dynamic routing written directly from the recurrence.
RefRouting reference_route(const Tensor& u_hat, std::size_t iters, bool use_tanh) {
  const std::size_t n = u_hat.dim(0), l = u_hat.dim(1), u = u_hat.dim(2), d = u_hat.dim(3);
  auto uh = [&](std::size_t b, std::size_t i, std::size_t j, std::size_t k) { return u_hat[((b * l + i) * u + j) * d + k]; };
  std::vector<double> logit(n * l * u, 0.0), v(n * u * d);
  RefRouting out;
  for (std::size_t it = 0; it < iters; ++it) {
    std::vector<double> c(n * l * u);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < l; ++i) {
        double mx = -INFINITY, z = 0;
        for (std::size_t j = 0; j < u; ++j) mx = std::max(mx, logit[(b * l + i) * u + j]);
        for (std::size_t j = 0; j < u; ++j) z += std::exp(logit[(b * l + i) * u + j] - mx);
        for (std::size_t j = 0; j < u; ++j) c[(b * l + i) * u + j] = std::exp(logit[(b * l + i) * u + j] - mx) / z;
      }
    out.c_hist.push_back(c);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < u; ++j) {
        std::vector<double> s(d, 0.0);
        for (std::size_t i = 0; i < l; ++i)
          for (std::size_t k = 0; k < d; ++k) s[k] += c[(b * l + i) * u + j] * uh(b, i, j, k);
        double sq = 0;
        for (double x : s) sq += x * x;
        for (std::size_t k = 0; k < d; ++k) {
          v[(b * u + j) * d + k] = use_tanh ? std::tanh(s[k]) : s[k] * std::sqrt(sq) / (1 + sq);
        }
      }
    if (it + 1 == iters) break;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < u; ++j) {
          double dot = 0;
          for (std::size_t k = 0; k < d; ++k) dot += v[(b * u + j) * d + k] * uh(b, i, j, k);
          logit[(b * l + i) * u + j] += dot;
        }
  }
  out.v = v;
  return out;
}

double norm_of(const Tensor& t, std::size_t row, std::size_t d) {
  double s = 0;
  for (std::size_t k = 0; k < d; ++k) s += t[row * d + k] * t[row * d + k];
  return std::sqrt(s);
}

double logit(double x) { return std::log(x) - std::log1p(-x); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("squash closed forms") {
  CHECK(squash(Tensor(Shape{1, 2}, 0.0), 1).same_values(Tensor(Shape{1, 2}, 0.0)));
  const Tensor a = squash(Tensor(Shape{1, 2}, {1, 0}), 1);
  CHECK(a[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(a[1] == 0.0);
  const Tensor b = squash(Tensor(Shape{1, 2}, {3, 0}), 1);
  CHECK(b[0] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("squash invariants") {
  const Tensor s = Tensor::normal({200, 5}, 0, 2, 3);
  const Tensor v = squash(s, 1);
  for (std::size_t r = 0; r < 200; ++r) {
    const double ns = norm_of(s, r, 5), nv = norm_of(v, r, 5);
    CHECK(nv < 1.0);
    CHECK(std::abs(nv - ns * ns / (1 + ns * ns)) < 1e-12);
    double dot = 0;
    for (std::size_t k = 0; k < 5; ++k) dot += s[r * 5 + k] * v[r * 5 + k];
    CHECK(std::abs(dot / (ns * nv) - 1.0) < 1e-9);
  }
  double prev = -1;
  for (double len = 0.01; len < 50; len *= 1.3) {
    const double nv = squash(Tensor(Shape{1, 1}, len), 1)[0];
    CHECK(nv > prev);
    prev = nv;
  }
  // Gradient at the origin is finite.
  CHECK(grad_check([](const Tensor& x) { return sum_all(squash(x, 1)); }, Tensor(Shape{1, 3}, 0.0)) < 1e-4);
}

TEST_CASE("dynamic routing matches the reference recurrence") {
  for (bool use_tanh : {false, true}) {
    for (std::size_t iters : {1, 2, 3, 6}) {
      const Tensor u_hat = Tensor::normal({2, 5, 4, 3}, 0, 0.7, 100 + iters);
      RoutingOptions opts;
      opts.iterations = iters;
      opts.activation = use_tanh ? CapsuleActivation::tanh : CapsuleActivation::squash;
      const RoutingResult r = dynamic_route(u_hat, opts);
      const RefRouting ref = reference_route(u_hat, iters, use_tanh);
      REQUIRE(r.outputs.shape() == Shape{2, 4, 3});
      for (std::size_t i = 0; i < ref.v.size(); ++i) CHECK(std::abs(r.outputs[i] - ref.v[i]) < 1e-12);
      REQUIRE(r.state.coupling_history.size() == iters);
      for (std::size_t it = 0; it < iters; ++it)
        for (std::size_t i = 0; i < ref.c_hist[it].size(); ++i)
          CHECK(std::abs(r.state.coupling_history[it][i] - ref.c_hist[it][i]) < 1e-12);
    }
  }
}

TEST_CASE("routing invariants") {
  RoutingOptions opts;
  opts.iterations = 3;
  opts.activation = CapsuleActivation::squash;
  const RoutingResult r = dynamic_route(Tensor::normal({3, 6, 10, 4}, 0, 1, 7), opts);
  for (double c : r.state.coupling_history.front().data()) CHECK(c == doctest::Approx(0.1).epsilon(1e-15));
  for (const Tensor& c : r.state.coupling_history)
    for (std::size_t row = 0; row < 18; ++row) {
      double s = 0;
      for (std::size_t j = 0; j < 10; ++j) {
        CHECK(c[row * 10 + j] >= 0.0);
        s += c[row * 10 + j];
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  for (std::size_t row = 0; row < 30; ++row) CHECK(norm_of(r.outputs, row, 4) < 1.0);
  opts.iterations = 0;
  CHECK_THROWS(dynamic_route(Tensor::zeros({1, 1, 1, 1}), opts));
}

TEST_CASE("agreement favours the consistent parent") {
  // Two lower capsules agree on parent 0 and disagree on parent 1.
  const std::vector<double> w = {0.6, -0.3, 0.2};
  std::vector<double> data;
  for (double sign : {1.0, -1.0}) {
    data.insert(data.end(), w.begin(), w.end());
    for (double x : w) data.push_back(sign * x);
  }
  const Tensor u_hat(Shape{1, 2, 2, 3}, data);
  for (auto act : {CapsuleActivation::squash, CapsuleActivation::tanh}) {
    RoutingOptions opts;
    opts.iterations = 3;
    opts.activation = act;
    const RoutingResult r = dynamic_route(u_hat, opts);
    const RefRouting ref = reference_route(u_hat, 3, act == CapsuleActivation::tanh);
    for (std::size_t i = 0; i < 2; ++i) {
      double prev = 0;
      for (std::size_t it = 0; it < 3; ++it) {
        const double c0 = r.state.coupling_history[it][i * 2];
        CHECK(c0 > prev);
        CHECK(c0 == doctest::Approx(ref.c_hist[it][i * 2]).epsilon(1e-12));
        prev = c0;
      }
    }
  }
}

TEST_CASE("routing gradients at tiny shapes") {
  const Tensor u_hat = Tensor::normal({2, 6, 3, 4}, 0, 0.5, 9);
  const Tensor probe = Tensor::uniform({2, 3, 4}, -1, 1, 10);
  for (bool detach : {false, true}) {
    RoutingOptions opts;
    opts.iterations = 2;
    opts.activation = CapsuleActivation::squash;
    opts.detach_routing = detach;
    const double e = grad_check([&](const Tensor& v) { return sum_all(mul(dynamic_route(v, opts).outputs, probe)); },
                                u_hat);
    // Detaching drops a gradient path, so the tape no longer matches finite differences.
    if (detach) CHECK(e > 1e-4);
    else CHECK(e < 1e-4);
  }
}

TEST_CASE("capsule predictions") {
  const Tensor u = Tensor::normal({2, 3, 4}, 0, 1, 11);
  const Tensor w = Tensor::normal({3, 5, 4, 2}, 0, 1, 12);
  const Tensor uh = capsule_predictions(u, w);
  REQUIRE(uh.shape() == Shape{2, 3, 5, 2});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t k = 0; k < 2; ++k) {
          double acc = 0;
          for (std::size_t q = 0; q < 4; ++q) acc += u[(b * 3 + i) * 4 + q] * w[((i * 5 + j) * 4 + q) * 2 + k];
          CHECK(std::abs(uh[((b * 3 + i) * 5 + j) * 2 + k] - acc) < 1e-12);
        }
  const Tensor probe = Tensor::uniform(uh.shape(), -1, 1, 13);
  CHECK(grad_check([&](const Tensor& v) { return sum_all(mul(capsule_predictions(v, w), probe)); }, u) < 1e-6);
  CHECK(grad_check([&](const Tensor& v) { return sum_all(mul(capsule_predictions(u, v), probe)); }, w) < 1e-6);
}

TEST_CASE("primary capsules") {
  const PrimaryCapsuleParams full = init_primary_capsules(256, 32, 8, 9, 3, 1);
  CHECK(full.parameter_count() == 5308672);
  CHECK(full.per_dim.front().kernel.size() == 663552);

  const PrimaryCapsuleParams p = init_primary_capsules(4, 3, 2, 3, 2, 2);
  const CapsuleGrid zero = primary_capsules_forward(Tensor::zeros({2, 4, 9, 9}), p);
  CHECK(zero.poses.same_values(Tensor::zeros({2, 3 * 4 * 4, 2})));
  CHECK(zero.grid_h == 4);
  CHECK(zero.n_types == 3);

  // Capsule (type, y, x) collects channel `type` at (y, x) of every pose-dimension convolution.
  const Tensor feats = Tensor::normal({1, 4, 9, 9}, 0, 1, 3);
  const CapsuleGrid g = primary_capsules_forward(feats, p);
  std::vector<Tensor> convs;
  for (const auto& c : p.per_dim) convs.push_back(conv2d_forward(feats, c));
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t pos = 0; pos < 16; ++pos) {
      const std::size_t cap = t * 16 + pos;
      const double s0 = convs[0][t * 16 + pos], s1 = convs[1][t * 16 + pos];
      const double n = std::sqrt(s0 * s0 + s1 * s1);
      CHECK(g.poses[cap * 2] == doctest::Approx(s0 * n / (1 + n * n)).epsilon(1e-12));
      CHECK(g.poses[cap * 2 + 1] == doctest::Approx(s1 * n / (1 + n * n)).epsilon(1e-12));
    }
  CHECK_THROWS_WITH(primary_capsules_forward(Tensor::zeros({1, 5, 9, 9}), p), doctest::Contains("input channels"));
}

TEST_CASE("face capsule layer") {
  CHECK(init_capsule_layer(2048, 32, 8, 16, CapsuleActivation::tanh, 1).parameter_count() == 8388608);
  const CapsuleLayerParams p = init_capsule_layer(6, 3, 4, 5, CapsuleActivation::tanh, 2);
  CapsuleGrid zero{Tensor::zeros({2, 6, 4}), 1, 3, 2};
  const RoutingResult r = capsule_layer_forward(zero, p, 3);
  CHECK(r.outputs.same_values(Tensor::zeros({2, 3, 5})));
  CapsuleGrid g{Tensor::normal({2, 6, 4}, 0, 1, 3), 1, 3, 2};
  const RoutingResult rr = capsule_layer_forward(g, p, 3);
  for (double v : rr.outputs.data()) CHECK(std::abs(v) < 1.0);
  const RefRouting ref = reference_route(capsule_predictions(g.poses, p.weight), 3, true);
  for (std::size_t i = 0; i < ref.v.size(); ++i) CHECK(std::abs(rr.outputs[i] - ref.v[i]) < 1e-12);
}

TEST_CASE("concrete dropout mask") {
  ConcreteDropoutOptions default_form;
  default_form.temperature = 0.1;
  const Tensor half(Shape{1}, 0.5);
  CHECK(concrete_dropout_mask(half, half, default_form)[0] == 0.5);

  const double z = concrete_dropout_mask(Tensor(Shape{1}, 0.9), half, default_form)[0];
  CHECK(z == doctest::Approx(sigmoid(logit(0.9) / 0.1)).epsilon(1e-14));
  CHECK(z > 0.9999999);

  ConcreteDropoutOptions standard = default_form;
  standard.standard_form = true;
  const Tensor p(Shape{1}, 0.3), u(Shape{1}, 0.8);
  CHECK(concrete_dropout_mask(p, u, default_form)[0] ==
        doctest::Approx(sigmoid(logit(0.3) / 0.1 + logit(0.8))).epsilon(1e-14));
  CHECK(concrete_dropout_mask(p, u, standard)[0] ==
        doctest::Approx(sigmoid((logit(0.3) + logit(0.8)) / 0.1)).epsilon(1e-14));

  CHECK_THROWS(concrete_dropout_mask(Tensor(Shape{1}, 1.0), half, default_form));
  CHECK_THROWS(concrete_dropout_mask(half, Tensor(Shape{1}, 0.0), default_form));
}

TEST_CASE("concrete dropout near-binary at low temperature") {
  ConcreteDropoutOptions opts;
  opts.temperature = 0.01;
  opts.standard_form = true;
  SplitMix64 rng(17);
  const Tensor u = concrete_noise({2000}, rng);
  const Tensor p = Tensor::uniform({2000}, 0.05, 0.95, 18);
  const Tensor z = concrete_dropout_mask(p, u, opts);
  std::size_t tested = 0;
  for (std::size_t i = 0; i < 2000; ++i) {
    if (std::abs((logit(p[i]) + logit(u[i])) / 0.01) <= 10) continue;
    CHECK(std::min(z[i], 1 - z[i]) < 1e-3);
    ++tested;
  }
  CHECK(tested > 1500);
}

TEST_CASE("concrete dropout Monte-Carlo mean") {
  // The conventional form is a relaxed Bernoulli(p); the average over u draws approaches p.
  for (double pv : {0.3, 0.7}) {
    ConcreteDropoutOptions opts;
    opts.temperature = 0.1;
    opts.standard_form = true;
    SplitMix64 rng(23);
    const Tensor u = concrete_noise({100000}, rng);
    const Tensor z = concrete_dropout_mask(Tensor(Shape{1}, pv), u, opts);
    double m = 0;
    for (double v : z.data()) m += v;
    CHECK(std::abs(m / 1e5 - pv) < 0.05);
  }
}

TEST_CASE("concrete noise stays inside the open interval") {
  SplitMix64 rng(0);
  for (double v : concrete_noise({10000}, rng).data()) {
    CHECK(v >= 1e-7);
    CHECK(v <= 1 - 1e-7);
  }
}
