#include <algorithm>
#include <cmath>
#include <limits>

#include "scn/ops.hpp"
#include "scn/siamese.hpp"

namespace scn {
namespace {

Tensor row_vector(const Tensor& t) { return reshape(t, Shape{t.dim(0)}); }

void check_labels(const Tensor& d, std::span<const int> labels) {
  if (d.rank() != 1 || d.dim(0) != labels.size()) {
    throw Error("pair loss: distances " + to_string(d.shape()) + " do not match " + std::to_string(labels.size()) +
                " labels");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error("pair loss: labels must be 0 (matching) or 1 (non-matching)");
  }
}

// Constant per-pair weights: (1 - y) * a and y * b.
std::pair<Tensor, Tensor> label_weights(std::span<const int> labels, double a, double b) {
  std::vector<double> pos(labels.size()), neg(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    pos[i] = (1 - labels[i]) * a;
    neg[i] = labels[i] * b;
  }
  return {Tensor(Shape{labels.size()}, std::move(pos)), Tensor(Shape{labels.size()}, std::move(neg))};
}

Tensor one_hot(std::span<const std::size_t> targets, std::size_t classes) {
  Tensor t(Shape{targets.size(), classes});
  auto data = t.mutable_data();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= classes) throw Error("target class out of range");
    data[i * classes + targets[i]] = 1.0;
  }
  return t;
}

}  // namespace

Tensor distance(const Tensor& a, const Tensor& b, Metric metric) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw Error("distance: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  switch (metric) {
    case Metric::euclidean_sq: return row_vector(sum(square(sub(a, b)), 1));
    case Metric::manhattan_exp: return row_vector(exp(negate(sum(abs(sub(a, b)), 1))));
    case Metric::cosine: {
      const Tensor cos = sum(mul(l2norm(a, 1), l2norm(b, 1)), 1);
      return row_vector(add_scalar(negate(cos), 1.0));
    }
  }
  throw Error("distance: unknown metric");
}

Tensor distance(const Embedding& a, const Embedding& b, Metric metric) { return distance(a.vec, b.vec, metric); }

Tensor contrastive_loss(const Tensor& d, std::span<const int> labels, double margin) {
  if (!(margin > 0.0)) throw Error("contrastive loss: margin must be positive");
  check_labels(d, labels);
  auto [pos_w, neg_w] = label_weights(labels, 0.5, 0.5);
  const Tensor pull = mul(d, pos_w);
  const Tensor push = mul(relu(add_scalar(negate(d), margin)), neg_w);
  return mean_all(add(pull, push));
}

Tensor double_margin_loss(const Tensor& d, std::span<const int> labels, double m_n, double m_p) {
  if (!(m_n < m_p)) throw Error("double margin loss: m_n must be < m_p");
  if (!(m_n > 0.0)) throw Error("double margin loss: m_n must be positive");
  check_labels(d, labels);
  auto [pos_w, neg_w] = label_weights(labels, 1.0, 1.0);
  const Tensor pull = mul(square(relu(add_scalar(d, -m_n))), pos_w);
  const Tensor push = mul(square(relu(add_scalar(negate(d), m_p))), neg_w);
  return mean_all(add(pull, push));
}

Tensor margin_loss(const Tensor& v, std::span<const std::size_t> targets, double m_plus, double lambda) {
  if (v.rank() != 3 || v.dim(0) != targets.size()) {
    throw Error("margin loss: expected capsules [N, classes, d] for " + std::to_string(targets.size()) +
                " targets, got " + to_string(v.shape()));
  }
  const std::size_t n = v.dim(0), classes = v.dim(1);
  const double m_minus = 1.0 - m_plus;
  // Tiny offset keeps the length differentiable at zero.
  const Tensor lengths = reshape(sqrt(add_scalar(sum(square(v), 2), 1e-18)), Shape{n, classes});
  const Tensor t = one_hot(targets, classes);
  std::vector<double> absent(t.data().begin(), t.data().end());
  for (auto& x : absent) x = lambda * (1.0 - x);
  const Tensor present_term = mul(square(relu(add_scalar(negate(lengths), m_plus))), t);
  const Tensor absent_term =
      mul(square(relu(add_scalar(lengths, -m_minus))), Tensor(Shape{n, classes}, std::move(absent)));
  return scale(sum_all(add(present_term, absent_term)), 1.0 / static_cast<double>(n));
}

Tensor spread_loss(const Tensor& a, std::span<const std::size_t> targets, double margin) {
  if (!(margin > 0.0 && margin <= 1.0)) throw Error("spread loss: margin must lie in (0, 1]");
  if (a.rank() != 2 || a.dim(0) != targets.size()) {
    throw Error("spread loss: expected activations [N, classes], got " + to_string(a.shape()));
  }
  const std::size_t n = a.dim(0), classes = a.dim(1);
  const Tensor t = one_hot(targets, classes);
  std::vector<double> others(t.data().begin(), t.data().end());
  for (auto& x : others) x = 1.0 - x;
  const Tensor target_act = sum(mul(a, t), 1);  // [N, 1]
  const Tensor gap = sub(target_act, a);
  const Tensor per_class = square(relu(add_scalar(negate(gap), margin)));
  return scale(sum_all(mul(per_class, Tensor(Shape{n, classes}, std::move(others)))), 1.0 / static_cast<double>(n));
}

double spread_margin_schedule(std::size_t step, std::size_t total) {
  if (total == 0) return 0.9;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return 0.2 + 0.7 * frac;
}

void PairLossConfig::validate() const {
  if (metric == Metric::manhattan_exp) {
    if (kind == LossKind::contrastive && !(margin > 0.0 && margin <= 1.0)) {
      throw Error("manhattan_exp requires a margin in (0, 1]");
    }
    if (kind == LossKind::double_margin && !(m_p <= 1.0)) throw Error("manhattan_exp requires m_p <= 1");
  }
  if (kind == LossKind::contrastive && !(margin > 0.0)) throw Error("margin must be positive");
  if (kind == LossKind::double_margin && !(m_n > 0.0 && m_n < m_p)) throw Error("margins must satisfy 0 < m_n < m_p");
}

Tensor pair_loss(const Tensor& d, std::span<const int> labels, const PairLossConfig& cfg) {
  cfg.validate();
  const Tensor dist = cfg.metric == Metric::manhattan_exp ? add_scalar(negate(d), 1.0) : d;
  if (cfg.kind == LossKind::contrastive) return contrastive_loss(dist, labels, cfg.margin);
  return double_margin_loss(dist, labels, cfg.m_n, cfg.m_p);
}

std::vector<bool> predict_match(std::span<const double> d, double threshold, Metric metric) {
  std::vector<bool> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    out[i] = metric == Metric::manhattan_exp ? d[i] > threshold : d[i] < threshold;
  }
  return out;
}

double match_accuracy(std::span<const double> d, std::span<const int> labels, double threshold, Metric metric) {
  if (d.size() != labels.size()) throw Error("match_accuracy: size mismatch");
  if (d.empty()) return 0.0;
  const auto pred = predict_match(d, threshold, metric);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) correct += pred[i] == (labels[i] == 0);
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

ThresholdChoice select_threshold(std::span<const double> d, std::span<const int> labels, Metric metric,
                                 std::size_t points) {
  if (d.empty()) throw Error("select_threshold: no pairs");
  if (points < 2) throw Error("select_threshold: need at least 2 sweep points");
  const auto [lo_it, hi_it] = std::minmax_element(d.begin(), d.end());
  const double lo = *lo_it, hi = *hi_it;
  ThresholdChoice best{lo, -1.0};
  for (std::size_t k = 0; k < points; ++k) {
    const double thr = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
    const double acc = match_accuracy(d, labels, thr, metric);
    if (acc > best.accuracy) best = {thr, acc};
  }
  return best;
}

}  // namespace scn
