#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "scn/layers.hpp"
#include "scn/random.hpp"
#include "scn/tensor.hpp"

namespace scn {

enum class CapsuleActivation { squash, tanh };

/// Lower-level capsule poses [N, n_caps, d] with the grid they came from.
/// Capsule index is (type * grid_h + y) * grid_w + x.
struct CapsuleGrid {
  Tensor poses;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t n_types = 0;

  std::size_t n_caps() const { return poses.dim(1); }
  std::size_t pose_dim() const { return poses.dim(2); }
};

struct RoutingState {
  Tensor logits;    // b: [N, n_lower, n_upper]
  Tensor coupling;  // c: [N, n_lower, n_upper], from the last iteration
  std::size_t iterations = 0;
  std::vector<Tensor> coupling_history;  // c of every iteration, detached
};

struct RoutingOptions {
  std::size_t iterations = 4;
  CapsuleActivation activation = CapsuleActivation::tanh;
  /// Treat predictions as constants inside the agreement update.
  bool detach_routing = false;
};

struct RoutingResult {
  Tensor outputs;  // v: [N, n_upper, d_out]
  RoutingState state;
};

struct CapsuleLayerParams {
  Tensor weight;  // [n_lower, n_upper, d_in, d_out]
  CapsuleActivation activation = CapsuleActivation::tanh;

  std::size_t n_lower() const { return weight.dim(0); }
  std::size_t n_upper() const { return weight.dim(1); }
  std::size_t d_in() const { return weight.dim(2); }
  std::size_t d_out() const { return weight.dim(3); }
  std::size_t parameter_count() const { return weight.size(); }
};

/// One convolution per pose dimension, each producing n_types channels.
struct PrimaryCapsuleParams {
  std::vector<Conv2dParams> per_dim;

  std::size_t pose_dim() const { return per_dim.size(); }
  std::size_t n_types() const { return per_dim.front().out_channels(); }
  std::size_t parameter_count() const;
};

/// v = s * |s| / (1 + |s|^2) along axis, i.e. |v| = |s|^2 / (1 + |s|^2) with
/// the direction of s. Exactly zero at s = 0.
Tensor squash(const Tensor& s, std::size_t axis);

/// u_hat[n, i, j, :] = u[n, i, :] * W[i, j] for u: [N, L, d_in], W: [L, U, d_in, d_out].
Tensor capsule_predictions(const Tensor& u, const Tensor& weight);

/// s[n, j, :] = sum_i c[n, i, j] * u_hat[n, i, j, :].
Tensor routing_weighted_sum(const Tensor& coupling, const Tensor& u_hat);

/// a[n, i, j] = <v[n, j, :], u_hat[n, i, j, :]>.
Tensor routing_agreement(const Tensor& v, const Tensor& u_hat);

RoutingResult dynamic_route(const Tensor& u_hat, const RoutingOptions& opts);

/// When `norms` is non-empty, each pose-dimension convolution is batch normalized.
CapsuleGrid primary_capsules_forward(const Tensor& features, const PrimaryCapsuleParams& p,
                                     std::span<BatchNormParams> norms = {}, bool training = false);

RoutingResult capsule_layer_forward(const CapsuleGrid& grid, const CapsuleLayerParams& p, std::size_t iterations,
                                    bool detach_routing = false);

struct ConcreteDropoutOptions {
  double temperature = 0.1;
  /// sigmoid((logit p + logit u) / t) instead of sigmoid(logit(p) / t + logit u).
  bool standard_form = false;
};

/// Relaxed Bernoulli mask. p and u must lie strictly inside (0, 1); they are
/// broadcast against each other.
Tensor concrete_dropout_mask(const Tensor& p, const Tensor& u, const ConcreteDropoutOptions& opts);

/// Uniform noise for the mask, clamped to [1e-7, 1 - 1e-7].
Tensor concrete_noise(Shape shape, SplitMix64& rng);

PrimaryCapsuleParams init_primary_capsules(std::size_t in_ch, std::size_t n_types, std::size_t pose_dim,
                                           std::size_t kernel, std::size_t stride, std::uint64_t seed);
CapsuleLayerParams init_capsule_layer(std::size_t n_lower, std::size_t n_upper, std::size_t d_in, std::size_t d_out,
                                      CapsuleActivation activation, std::uint64_t seed);

}  // namespace scn
