#include "scn/optim.hpp"

#include <algorithm>
#include <cmath>

namespace scn {
namespace {

void check_shapes(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw Error("optimizer: " + std::to_string(params.size()) + " parameters but " + std::to_string(grads.size()) +
                " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw Error("optimizer: shape mismatch " + to_string(params[i]->shape()) + " vs " + to_string(grads[i].shape()));
    }
  }
}

}  // namespace

OptimState OptimState::zeros_like(std::span<const Tensor* const> params) {
  OptimState s;
  for (const Tensor* p : params) {
    s.m.push_back(Tensor::zeros(p->shape()));
    s.v.push_back(Tensor::zeros(p->shape()));
    s.v_hat.push_back(Tensor::zeros(p->shape()));
  }
  return s;
}

void amsgrad_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimState& state,
                  const AmsGradOptions& opts) {
  check_shapes(params, grads);
  if (!(opts.theta1 >= 0.0 && opts.theta1 < 1.0 && opts.theta2 >= 0.0 && opts.theta2 < 1.0)) {
    throw Error("amsgrad: theta1 and theta2 must lie in [0, 1)");
  }
  if (state.m.empty() && !params.empty()) {
    std::vector<const Tensor*> view(params.begin(), params.end());
    state = OptimState::zeros_like(view);
  }
  if (state.m.size() != params.size()) throw Error("amsgrad: optimizer state does not match parameter list");

  state.t += 1;
  const double rate = opts.flat_lr ? opts.alpha : opts.alpha / std::sqrt(static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].shape() != params[i]->shape()) {
      throw Error("amsgrad: state shape " + to_string(state.m[i].shape()) + " does not match parameter " +
                  to_string(params[i]->shape()));
    }
    auto w = params[i]->mutable_data();
    auto g = grads[i].data();
    auto m = state.m[i].mutable_data();
    auto v = state.v[i].mutable_data();
    auto vh = state.v_hat[i].mutable_data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = opts.theta1 * m[k] + (1.0 - opts.theta1) * g[k];
      v[k] = opts.theta2 * v[k] + (1.0 - opts.theta2) * g[k] * g[k];
      vh[k] = std::max(vh[k], v[k]);
      w[k] -= rate * m[k] / (std::sqrt(vh[k]) + opts.eps);
    }
  }
}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  check_shapes(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->mutable_data();
    auto g = grads[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * g[k];
  }
}

}  // namespace scn
