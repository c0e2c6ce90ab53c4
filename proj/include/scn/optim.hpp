#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "scn/tensor.hpp"

namespace scn {

struct AmsGradOptions {
  double alpha = 1e-3;
  double theta1 = 0.9;
  double theta2 = 0.999;
  double eps = 1e-8;
  /// Use alpha for every step instead of alpha / sqrt(t).
  bool flat_lr = false;
};

/// Per-parameter moments. v_hat is the running elementwise max of v.
struct OptimState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::vector<Tensor> v_hat;
  std::uint64_t t = 0;

  static OptimState zeros_like(std::span<const Tensor* const> params);
};

/// One AMSGrad update without bias correction:
///   m <- th1 m + (1 - th1) g;  v <- th2 v + (1 - th2) g^2;  v_hat <- max(v_hat, v)
///   w <- w - alpha_t m / (sqrt(v_hat) + eps),  alpha_t = alpha / sqrt(t).
void amsgrad_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimState& state,
                  const AmsGradOptions& opts);

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);

}  // namespace scn
