#include <algorithm>
#include <cmath>

#include "scn/capsules.hpp"
#include "scn/harness.hpp"
#include "scn/layers.hpp"
#include "scn/ops.hpp"

namespace scn {
namespace {

// Contracting with fixed random weights avoids gradients that cancel by symmetry.
Tensor probe(const Tensor& out, std::uint64_t seed) {
  return sum_all(mul(out, Tensor::uniform(out.shape(), -1.0, 1.0, seed)));
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradcheckEntry> report;
  auto s = [&](std::uint64_t tag) { return mix_seed(seed, tag); };

  {
    const Tensor x = Tensor::uniform({2, 2, 6, 6}, -1.0, 1.0, s(1));
    Conv2dParams p = init_conv2d(2, 3, 3, 2, 1, s(2));
    p.bias = Tensor::uniform(p.bias.shape(), -0.5, 0.5, s(3));
    double e = grad_check([&](const Tensor& v) { return probe(conv2d_forward(v, p), s(4)); }, x);
    e = std::max(e, grad_check(
                        [&](const Tensor& k) {
                          Conv2dParams q = p;
                          q.kernel = k;
                          return probe(conv2d_forward(x, q), s(4));
                        },
                        p.kernel));
    e = std::max(e, grad_check(
                        [&](const Tensor& b) {
                          Conv2dParams q = p;
                          q.bias = b;
                          return probe(conv2d_forward(x, q), s(4));
                        },
                        p.bias));
    report.push_back({"conv2d", e});
  }

  {
    const Tensor x = Tensor::normal({4, 3, 2, 2}, 0.5, 1.0, s(10));
    BatchNormParams p = init_batchnorm(3);
    p.gamma = Tensor::uniform(p.gamma.shape(), 0.5, 1.5, s(11));
    p.beta = Tensor::uniform(p.beta.shape(), -0.5, 0.5, s(12));
    auto run = [&](const Tensor& in, const Tensor& g, const Tensor& b) {
      BatchNormParams q = p;
      q.gamma = g;
      q.beta = b;
      return probe(batchnorm_forward(in, q, true), s(13));
    };
    double e = grad_check([&](const Tensor& v) { return run(v, p.gamma, p.beta); }, x);
    e = std::max(e, grad_check([&](const Tensor& g) { return run(x, g, p.beta); }, p.gamma));
    e = std::max(e, grad_check([&](const Tensor& b) { return run(x, p.gamma, b); }, p.beta));
    report.push_back({"batchnorm", e});
  }

  {
    const Tensor x = Tensor::uniform({3, 4}, -1.0, 1.0, s(20));
    const Tensor w = Tensor::uniform({4, 5}, -1.0, 1.0, s(21));
    const Tensor b = Tensor::uniform({5}, -1.0, 1.0, s(22));
    double e = grad_check([&](const Tensor& v) { return probe(dense_forward(v, w, b), s(23)); }, x);
    e = std::max(e, grad_check([&](const Tensor& v) { return probe(dense_forward(x, v, b), s(23)); }, w));
    e = std::max(e, grad_check([&](const Tensor& v) { return probe(dense_forward(x, w, v), s(23)); }, b));
    report.push_back({"dense", e});
  }

  {
    const Tensor x = Tensor::normal({3, 4, 5}, 0.0, 1.0, s(30));
    report.push_back({"squash", grad_check([&](const Tensor& v) { return probe(squash(v, 2), s(31)); }, x)});
  }

  {
    const Tensor u_hat = Tensor::normal({2, 4, 3, 5}, 0.0, 0.5, s(40));
    RoutingOptions opts;
    opts.iterations = 2;
    opts.activation = CapsuleActivation::squash;
    report.push_back(
        {"routing (2 iterations)",
         grad_check([&](const Tensor& v) { return probe(dynamic_route(v, opts).outputs, s(41)); }, u_hat)});
  }

  {
    CapsuleGrid grid;
    grid.poses = Tensor::normal({2, 6, 4}, 0.0, 0.5, s(50));
    grid.grid_h = 1;
    grid.grid_w = 3;
    grid.n_types = 2;
    const CapsuleLayerParams p = init_capsule_layer(6, 3, 4, 5, CapsuleActivation::tanh, s(51));
    double e = grad_check(
        [&](const Tensor& v) {
          CapsuleGrid g = grid;
          g.poses = v;
          return probe(capsule_layer_forward(g, p, 3).outputs, s(52));
        },
        grid.poses);
    e = std::max(e, grad_check(
                        [&](const Tensor& w) {
                          CapsuleLayerParams q = p;
                          q.weight = w;
                          return probe(capsule_layer_forward(grid, q, 3).outputs, s(52));
                        },
                        p.weight));
    report.push_back({"tanh capsule layer", e});
  }

  {
    const Tensor features = Tensor::uniform({2, 2, 7, 7}, -1.0, 1.0, s(55));
    const PrimaryCapsuleParams p = init_primary_capsules(2, 2, 3, 3, 2, s(56));
    report.push_back({"primary capsules", grad_check(
                                              [&](const Tensor& v) {
                                                return probe(primary_capsules_forward(v, p).poses, s(57));
                                              },
                                              features)});
  }

  {
    const Tensor a = Tensor::normal({4, 6}, 0.0, 1.0, s(60));
    const Tensor b = Tensor::normal({4, 6}, 0.0, 1.0, s(61));
    double e = 0.0;
    for (Metric m : {Metric::euclidean_sq, Metric::manhattan_exp, Metric::cosine}) {
      // manhattan_exp has a kink wherever a coordinate difference is zero; the normal draws avoid it.
      e = std::max(e, grad_check([&](const Tensor& v) { return probe(distance(v, b, m), s(62)); }, a));
    }
    report.push_back({"distance metrics", e});
  }

  const std::vector<int> labels = {0, 1, 0, 1, 1, 0};
  {
    // Distances keep at least 0.1 away from the margin's hinge.
    const Tensor d(Shape{6}, {0.3, 0.5, 2.7, 1.2, 3.1, 0.05});
    report.push_back(
        {"contrastive loss", grad_check([&](const Tensor& v) { return contrastive_loss(v, labels, 2.0); }, d)});
  }
  {
    const Tensor d(Shape{6}, {0.35, 0.1, 0.05, 0.7, 0.3, 0.6});
    report.push_back({"double-margin loss",
                      grad_check([&](const Tensor& v) { return double_margin_loss(v, labels, 0.2, 0.5); }, d)});
  }

  {
    const Tensor x = Tensor::normal({3, 4}, 0.0, 1.0, s(70));
    const Tensor p = Tensor::uniform({1, 4}, 0.35, 0.65, s(71));
    const Tensor u = Tensor::uniform({3, 4}, 0.3, 0.7, s(72));  // frozen noise
    double e = 0.0;
    for (bool standard : {false, true}) {
      ConcreteDropoutOptions opts;
      opts.standard_form = standard;
      e = std::max(e, grad_check(
                          [&](const Tensor& v) { return probe(mul(x, concrete_dropout_mask(v, u, opts)), s(73)); }, p));
    }
    report.push_back({"concrete dropout (frozen u)", e});
  }

  return report;
}

}  // namespace scn
