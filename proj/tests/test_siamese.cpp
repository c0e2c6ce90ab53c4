#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "scn/ops.hpp"
#include "scn/siamese.hpp"

using namespace scn;

namespace {

// A capsule encoder small enough for finite differences over every parameter.
EncoderConfig tiny_config(ModelKind kind) {
  EncoderConfig c;
  c.kind = kind;
  c.image_size = 11;
  c.conv1_channels = 3;
  c.conv1_kernel = 3;
  c.conv1_stride = 2;  // 5x5
  c.primary_types = 2;
  c.primary_dim = 3;
  c.primary_kernel = 3;
  c.primary_stride = 1;  // 3x3 grid, 18 lower capsules
  c.face_caps = 3;
  c.face_dim = 2;
  c.embed_dim = 4;
  c.routing_iters = 2;
  c.dropout_rate = 0.0;
  c.std_conv1_channels = 3;
  c.std_conv2_channels = 2;
  c.std_conv2_kernel = 3;
  c.std_conv2_stride = 1;
  return c;
}

const std::vector<int> kLabels = {0, 1};

Tensor tied_loss(ModelParams& p, const EncoderConfig& cfg, const Tensor& left, const Tensor& right) {
  SplitMix64 rng(5);
  const Embedding a = encode(left, p, cfg, Mode::train, rng);
  const Embedding b = encode(right, p, cfg, Mode::train, rng);
  return contrastive_loss(distance(a, b, Metric::euclidean_sq), kLabels, 2.0);
}

}  // namespace

TEST_CASE("distances") {
  const Tensor e(Shape{1, 3}, {0.2, -0.4, 0.5});
  CHECK(distance(e, e, Metric::euclidean_sq)[0] == 0.0);
  CHECK(distance(e, e, Metric::manhattan_exp)[0] == 1.0);
  CHECK(std::abs(distance(e, e, Metric::cosine)[0]) < 1e-15);
  const Tensor x(Shape{1, 3}, {1, 0, 0}), y(Shape{1, 3}, {0, 1, 0});
  CHECK(distance(x, y, Metric::euclidean_sq)[0] == 2.0);
  CHECK(distance(x, y, Metric::cosine)[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(distance(x, y, Metric::manhattan_exp)[0] == doctest::Approx(std::exp(-2.0)).epsilon(1e-15));

  const Tensor a = Tensor::normal({6, 5}, 0, 1, 1), b = Tensor::normal({6, 5}, 0, 1, 2);
  for (Metric m : {Metric::euclidean_sq, Metric::manhattan_exp, Metric::cosine}) {
    CHECK(distance(a, b, m).same_values(distance(b, a, m)));
  }
  CHECK_THROWS(distance(a, Tensor::zeros({6, 4}), Metric::cosine));
}

TEST_CASE("contrastive loss") {
  auto one = [](double d, int y, double m) {
    const std::vector<int> l = {y};
    return contrastive_loss(Tensor(Shape{1}, d), l, m).item();
  };
  CHECK(one(0, 0, 2) == 0.0);
  CHECK(one(0, 1, 2) == 1.0);
  CHECK(one(3, 1, 2) == 0.0);
  CHECK(one(0.8, 0, 2) == doctest::Approx(0.4));

  const Tensor d = Tensor::uniform({50}, 0, 3, 3);
  std::vector<int> y(50);
  for (std::size_t i = 0; i < 50; ++i) y[i] = static_cast<int>(i % 3 == 0);
  double ref = 0;
  for (std::size_t i = 0; i < 50; ++i)
    ref += y[i] == 0 ? 0.5 * d[i] : 0.5 * std::max(0.0, 2.0 - d[i]);
  CHECK(contrastive_loss(d, y, 2.0).item() == doctest::Approx(ref / 50).epsilon(1e-14));
  CHECK(contrastive_loss(d, y, 2.0).item() >= 0.0);
  CHECK_THROWS(contrastive_loss(d, y, 0.0));
}

TEST_CASE("double margin loss") {
  auto one = [](double d, int y) {
    const std::vector<int> l = {y};
    return double_margin_loss(Tensor(Shape{1}, d), l, 0.2, 0.5).item();
  };
  CHECK(one(0.1, 0) == 0.0);
  CHECK(one(0.6, 1) == 0.0);
  CHECK(one(0.0, 1) == 0.25);
  CHECK(one(0.5, 0) == doctest::Approx(0.09));
  const std::vector<int> l = {0};
  CHECK_THROWS(double_margin_loss(Tensor(Shape{1}, 0.1), l, 0.5, 0.5));
}

TEST_CASE("pair loss maps the manhattan similarity") {
  const Tensor s(Shape{2}, {0.9, 0.3});
  const std::vector<int> y = {0, 1};
  PairLossConfig cfg;
  cfg.metric = Metric::manhattan_exp;
  cfg.margin = 0.5;
  const double expect = (0.5 * (1 - 0.9) + 0.5 * std::max(0.0, 0.5 - (1 - 0.3))) / 2;
  CHECK(pair_loss(s, y, cfg).item() == doctest::Approx(expect).epsilon(1e-14));
  cfg.margin = 1.5;
  CHECK_THROWS(cfg.validate());
  cfg.kind = LossKind::double_margin;
  cfg.m_n = 0.5;
  cfg.m_p = 0.2;
  cfg.metric = Metric::euclidean_sq;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("margin and spread losses") {
  const std::vector<std::size_t> t = {0};
  Tensor v(Shape{1, 3, 2}, 0.0);
  auto set_norm = [&](std::size_t c, double n) {
    auto d = v.mutable_data();
    d[c * 2] = n;
    d[c * 2 + 1] = 0;
  };
  set_norm(0, 0.9);
  set_norm(1, 0.1);
  set_norm(2, 0.1);
  CHECK(margin_loss(v, t).item() == doctest::Approx(0.0));
  set_norm(0, 0.0);
  CHECK(margin_loss(v, t).item() == doctest::Approx(0.81));
  set_norm(0, 0.9);
  set_norm(1, 1.0);
  CHECK(margin_loss(v, t).item() == doctest::Approx(0.405));

  CHECK(spread_loss(Tensor(Shape{1, 2}, {1.0, 0.0}), t, 0.9).item() == 0.0);
  CHECK(spread_loss(Tensor(Shape{1, 2}, {0.3, 0.3}), t, 1.0).item() == doctest::Approx(1.0));
  CHECK(spread_margin_schedule(0, 10) == doctest::Approx(0.2));
  CHECK(spread_margin_schedule(10, 10) == doctest::Approx(0.9));
  CHECK(spread_margin_schedule(5, 10) == doctest::Approx(0.55));
}

TEST_CASE("predict_match and the threshold sweep") {
  const std::vector<double> d = {0.0, 1.0};
  CHECK(predict_match(d, 1.0, Metric::euclidean_sq) == std::vector<bool>{true, false});
  CHECK(predict_match(d, 0.5, Metric::manhattan_exp) == std::vector<bool>{false, true});

  // Exhaustive oracle: try every one of the 101 grid points and keep the first best.
  const Tensor dt = Tensor::uniform({80}, 0, 4, 9);
  std::vector<double> dv(dt.data().begin(), dt.data().end());
  std::vector<int> y(80);
  for (std::size_t i = 0; i < 80; ++i) y[i] = dv[i] + 0.8 * std::sin(i * 1.7) > 2.0 ? 1 : 0;
  const double lo = *std::min_element(dv.begin(), dv.end()), hi = *std::max_element(dv.begin(), dv.end());
  double best_thr = 0, best_acc = -1;
  for (int k = 0; k <= 100; ++k) {
    const double thr = lo + (hi - lo) * k / 100.0;
    int ok = 0;
    for (std::size_t i = 0; i < 80; ++i) ok += (dv[i] < thr) == (y[i] == 0);
    if (ok / 80.0 > best_acc) {
      best_acc = ok / 80.0;
      best_thr = thr;
    }
  }
  const ThresholdChoice c = select_threshold(dv, y, Metric::euclidean_sq);
  CHECK(c.threshold == best_thr);
  CHECK(c.accuracy == best_acc);
  CHECK(select_threshold(dv, y, Metric::euclidean_sq).threshold == c.threshold);
}

TEST_CASE("full-width parameter counts") {
  const ModelParams m = init_model(EncoderConfig{}, 1);
  const EncoderParams& p = m.capsule();
  CHECK(p.conv1.parameter_count() == 20992);
  CHECK(p.primary.parameter_count() == 5308672);
  CHECK(p.face.parameter_count() == 8388608);
  CHECK(p.fc.parameter_count() == 10260);
  CHECK(m.parameter_count() == 20992 + 512 + 5308672 + 8388608 + 10260);
  CHECK(EncoderConfig{}.conv1_output_size() == 31);
  CHECK(EncoderConfig{}.n_lower_caps() == 2048);
  CHECK(EncoderConfig::reduced(ModelKind::scn).n_lower_caps() == 512);
}

TEST_CASE("parameter names are stable and ordered") {
  ModelParams m = init_model(tiny_config(ModelKind::sdropcapnet), 3);
  std::vector<std::string> names;
  for (const auto& p : m.learnables()) names.push_back(p.name);
  const std::vector<std::string> expect = {
      "conv1.kernel",     "conv1.bias",       "bn1.gamma",        "bn1.beta",    "primary.0.kernel",
      "primary.0.bias",   "primary.1.kernel", "primary.1.bias",   "primary.2.kernel",
      "primary.2.bias",   "face.weight",      "fc.weight",        "fc.bias",     "dropout_p"};
  CHECK(names == expect);
  CHECK(m.buffers().size() == 2);
}

TEST_CASE("encoder output contract") {
  for (ModelKind kind : {ModelKind::scn, ModelKind::sdropcapnet, ModelKind::standard}) {
    const EncoderConfig cfg = tiny_config(kind);
    ModelParams m = init_model(cfg, 4);
    const Tensor img = Tensor::uniform({3, 1, 11, 11}, 0, 1, 5);
    SplitMix64 rng(1);
    const Embedding e = encode(img, m, cfg, Mode::eval, rng);
    REQUIRE(e.vec.shape() == Shape{3, 4});
    CHECK(e.normalized);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += e.vec[r * 4 + k] * e.vec[r * 4 + k];
      CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-9);
    }
    // Tied weights: the same batch through either branch gives the same embedding.
    SplitMix64 other(77);
    CHECK(encode(img, m, cfg, Mode::eval, other).vec.same_values(e.vec));
    // Within a batch, BLAS may sum rows in a different order, so only near-equality holds.
    const Tensor twice = concat(std::vector<Tensor>{slice(img, 0, 0, 1), slice(img, 0, 0, 1)}, 0);
    const Embedding t = encode(twice, m, cfg, Mode::eval, rng);
    CHECK(distance(slice(t.vec, 0, 0, 1), slice(t.vec, 0, 1, 2), Metric::euclidean_sq)[0] < 1e-20);
    CHECK_THROWS_WITH(encode(Tensor::zeros({1, 1, 10, 10}), m, cfg, Mode::eval, rng),
                      doctest::Contains("encode: expected images"));
  }
}

TEST_CASE("full model gradients match finite differences") {
  for (ModelKind kind : {ModelKind::scn, ModelKind::sdropcapnet, ModelKind::standard}) {
    CAPTURE(to_string(kind));
    EncoderConfig cfg = tiny_config(kind);
    cfg.concrete.standard_form = true;
    const ModelParams base = init_model(cfg, 6);
    const Tensor left = Tensor::uniform({2, 1, 11, 11}, 0, 1, 7);
    const Tensor right = Tensor::uniform({2, 1, 11, 11}, 0, 1, 8);

    Graph g;
    ModelParams bound = base.bind(g);
    const Gradients grads = g.backward(tied_loss(bound, cfg, left, right));

    const auto names = base.learnables();
    const auto leaves = bound.learnables();
    for (std::size_t t = 0; t < names.size(); ++t) {
      CAPTURE(names[t].name);
      const Tensor ad = grads.wrt(*leaves[t].tensor);
      double worst = 0;
      for (std::size_t i = 0; i < ad.size(); ++i) {
        auto eval_at = [&](double delta) {
          ModelParams p = base;
          p.learnables()[t].tensor->mutable_data()[i] += delta;
          return tied_loss(p, cfg, left, right).item();
        };
        const double eps = 1e-5;
        const double fd = (eval_at(eps) - eval_at(-eps)) / (2 * eps);
        worst = std::max(worst, std::abs(fd - ad[i]) / std::max({1.0, std::abs(fd), std::abs(ad[i])}));
      }
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("tied weights: gradient is the sum of both branches") {
  const EncoderConfig cfg = tiny_config(ModelKind::scn);
  const ModelParams base = init_model(cfg, 9);
  const Tensor left = Tensor::uniform({2, 1, 11, 11}, 0, 1, 10);
  const Tensor right = Tensor::uniform({2, 1, 11, 11}, 0, 1, 11);

  Graph g;
  ModelParams shared = base.bind(g);
  const Gradients tied = g.backward(tied_loss(shared, cfg, left, right));

  Graph h;
  ModelParams pa = base.bind(h), pb = base.bind(h);
  SplitMix64 rng(5);
  const Embedding a = encode(left, pa, cfg, Mode::train, rng);
  const Embedding b = encode(right, pb, cfg, Mode::train, rng);
  const Gradients split = h.backward(contrastive_loss(distance(a, b, Metric::euclidean_sq), kLabels, 2.0));

  const auto ts = shared.learnables(), la = pa.learnables(), lb = pb.learnables();
  for (std::size_t t = 0; t < ts.size(); ++t) {
    const Tensor gt = tied.wrt(*ts[t].tensor), ga = split.wrt(*la[t].tensor), gb = split.wrt(*lb[t].tensor);
    for (std::size_t i = 0; i < gt.size(); ++i) CHECK(std::abs(gt[i] - (ga[i] + gb[i])) < 1e-12);
  }
}
