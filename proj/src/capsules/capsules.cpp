#include "scn/capsules.hpp"

#include <algorithm>
#include <cmath>

#include "scn/ops.hpp"
#include "../common/gemm.hpp"

namespace scn {
namespace {

void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw Error(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " + to_string(t.shape()));
  }
}

void require_open_unit(std::string_view what, const Tensor& t) {
  for (double x : t.data()) {
    if (!(x > 0.0 && x < 1.0)) {
      throw Error("concrete dropout: " + std::string(what) + " must lie strictly inside (0, 1), got " +
                  std::to_string(x));
    }
  }
}

Tensor logit(const Tensor& p) { return sub(log(p), log(add_scalar(negate(p), 1.0))); }

}  // namespace

std::size_t PrimaryCapsuleParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : per_dim) n += c.parameter_count();
  return n;
}

Tensor squash(const Tensor& s, std::size_t axis) {
  if (axis >= s.rank()) throw Error("squash: axis out of range for shape " + to_string(s.shape()));
  std::size_t outer = 1, len = s.dim(axis), inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s.dim(i);
  for (std::size_t i = axis + 1; i < s.rank(); ++i) inner *= s.dim(i);

  auto in = s.data();
  std::vector<double> out(in.size());
  std::vector<double> norms(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double sq = 0.0;
      for (std::size_t k = 0; k < len; ++k) sq += in[base + k * inner] * in[base + k * inner];
      const double n = std::sqrt(sq);
      norms[o * inner + i] = n;
      const double f = n / (1.0 + sq);
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] = in[base + k * inner] * f;
    }
  }
  return make_result("squash", {s}, s.shape(), std::move(out),
                     [s, outer, len, inner, norms = std::move(norms)](std::span<const double> g,
                                                                      std::span<const std::span<double>> gin) {
                       auto in = s.data();
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t i = 0; i < inner; ++i) {
                           const std::size_t base = o * len * inner + i;
                           const double n = norms[o * inner + i];
                           if (n == 0.0) continue;
                           const double sq = n * n;
                           const double f = n / (1.0 + sq);
                           const double df_over_n = (1.0 - sq) / ((1.0 + sq) * (1.0 + sq)) / n;
                           double dot = 0.0;
                           for (std::size_t k = 0; k < len; ++k) dot += in[base + k * inner] * g[base + k * inner];
                           for (std::size_t k = 0; k < len; ++k) {
                             const std::size_t j = base + k * inner;
                             gin[0][j] += f * g[j] + df_over_n * dot * in[j];
                           }
                         }
                       }
                     });
}

namespace {

// W[i, j, k, d] -> W[i, k, j, d], into a per-thread buffer that is reused across calls.
const double* k_major(std::span<const double> w, std::size_t lower, std::size_t upper, std::size_t din,
                      std::size_t dout) {
  thread_local std::vector<double> out;
  if (out.size() < w.size()) out.resize(w.size());
  for (std::size_t i = 0; i < lower; ++i)
    for (std::size_t j = 0; j < upper; ++j)
      for (std::size_t k = 0; k < din; ++k)
        std::copy_n(&w[((i * upper + j) * din + k) * dout], dout, &out[((i * din + k) * upper + j) * dout]);
  return out.data();
}

}  // namespace

Tensor capsule_predictions(const Tensor& u, const Tensor& weight) {
  require_rank("capsule_predictions", u, 3);
  require_rank("capsule_predictions", weight, 4);
  const std::size_t n = u.dim(0), lower = u.dim(1), din = u.dim(2);
  const std::size_t upper = weight.dim(1), dout = weight.dim(3);
  if (weight.dim(0) != lower || weight.dim(2) != din) {
    throw Error("capsule_predictions: shape mismatch " + to_string(u.shape()) + " vs " + to_string(weight.shape()));
  }
  // Per lower capsule this is one [N, d_in] x [d_in, upper * d_out] product once W[i] is laid out k-major.
  const std::size_t row = upper * dout;
  const double* wk = k_major(weight.data(), lower, upper, din, dout);
  std::vector<double> out(n * lower * row);
  for (std::size_t i = 0; i < lower; ++i) {
    detail::gemm(false, false, n, row, din, 1.0, &u.data()[i * din], lower * din, &wk[i * din * row], row, 0.0,
                 &out[i * row], lower * row);
  }
  return make_result("capsule_predictions", {u, weight}, Shape{n, lower, upper, dout}, std::move(out),
                     [u, weight, n, lower, din, upper, dout](std::span<const double> g,
                                                            std::span<const std::span<double>> gin) {
                       const std::size_t row = upper * dout;
                       auto gu = gin[0];
                       auto gw = gin[1];
                       if (!gu.empty()) {
                         const double* wk = k_major(weight.data(), lower, upper, din, dout);
                         for (std::size_t i = 0; i < lower; ++i) {
                           detail::gemm(false, true, n, din, row, 1.0, &g[i * row], lower * row, &wk[i * din * row],
                                        row, 1.0, &gu[i * din], lower * din);
                         }
                       }
                       if (!gw.empty()) {
                         std::vector<double> gk(lower * din * row);
                         for (std::size_t i = 0; i < lower; ++i) {
                           detail::gemm(true, false, din, row, n, 1.0, &u.data()[i * din], lower * din, &g[i * row],
                                        lower * row, 0.0, &gk[i * din * row], row);
                         }
                         // Back from [i, k, j, d] to [i, j, k, d].
                         for (std::size_t i = 0; i < lower; ++i)
                           for (std::size_t k = 0; k < din; ++k)
                             for (std::size_t j = 0; j < upper; ++j) {
                               const double* src = &gk[((i * din + k) * upper + j) * dout];
                               double* dst = &gw[((i * upper + j) * din + k) * dout];
                               for (std::size_t d = 0; d < dout; ++d) dst[d] += src[d];
                             }
                       }
                     });
}

Tensor routing_weighted_sum(const Tensor& coupling, const Tensor& u_hat) {
  require_rank("routing_weighted_sum", coupling, 3);
  require_rank("routing_weighted_sum", u_hat, 4);
  const std::size_t n = u_hat.dim(0), lower = u_hat.dim(1), upper = u_hat.dim(2), d = u_hat.dim(3);
  if (coupling.shape() != Shape{n, lower, upper}) {
    throw Error("routing_weighted_sum: shape mismatch " + to_string(coupling.shape()) + " vs " +
                to_string(u_hat.shape()));
  }
  auto cv = coupling.data();
  auto uv = u_hat.data();
  std::vector<double> out(n * upper * d, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < lower; ++i)
      for (std::size_t j = 0; j < upper; ++j) {
        const double c = cv[(b * lower + i) * upper + j];
        const double* u = &uv[((b * lower + i) * upper + j) * d];
        double* s = &out[(b * upper + j) * d];
        for (std::size_t k = 0; k < d; ++k) s[k] += c * u[k];
      }
  return make_result("routing_weighted_sum", {coupling, u_hat}, Shape{n, upper, d}, std::move(out),
                     [coupling, u_hat, n, lower, upper, d](std::span<const double> g,
                                                           std::span<const std::span<double>> gin) {
                       auto cv = coupling.data();
                       auto uv = u_hat.data();
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t i = 0; i < lower; ++i)
                           for (std::size_t j = 0; j < upper; ++j) {
                             const std::size_t ci = (b * lower + i) * upper + j;
                             const double* gs = &g[(b * upper + j) * d];
                             if (!gin[0].empty()) {
                               double acc = 0.0;
                               for (std::size_t k = 0; k < d; ++k) acc += gs[k] * uv[ci * d + k];
                               gin[0][ci] += acc;
                             }
                             if (!gin[1].empty()) {
                               for (std::size_t k = 0; k < d; ++k) gin[1][ci * d + k] += cv[ci] * gs[k];
                             }
                           }
                     });
}

Tensor routing_agreement(const Tensor& v, const Tensor& u_hat) {
  require_rank("routing_agreement", v, 3);
  require_rank("routing_agreement", u_hat, 4);
  const std::size_t n = u_hat.dim(0), lower = u_hat.dim(1), upper = u_hat.dim(2), d = u_hat.dim(3);
  if (v.shape() != Shape{n, upper, d}) {
    throw Error("routing_agreement: shape mismatch " + to_string(v.shape()) + " vs " + to_string(u_hat.shape()));
  }
  auto vv = v.data();
  auto uv = u_hat.data();
  std::vector<double> out(n * lower * upper, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < lower; ++i)
      for (std::size_t j = 0; j < upper; ++j) {
        const double* u = &uv[((b * lower + i) * upper + j) * d];
        const double* vj = &vv[(b * upper + j) * d];
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += vj[k] * u[k];
        out[(b * lower + i) * upper + j] = acc;
      }
  return make_result("routing_agreement", {v, u_hat}, Shape{n, lower, upper}, std::move(out),
                     [v, u_hat, n, lower, upper, d](std::span<const double> g, std::span<const std::span<double>> gin) {
                       auto vv = v.data();
                       auto uv = u_hat.data();
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t i = 0; i < lower; ++i)
                           for (std::size_t j = 0; j < upper; ++j) {
                             const std::size_t ai = (b * lower + i) * upper + j;
                             const double ga = g[ai];
                             const std::size_t voff = (b * upper + j) * d;
                             if (!gin[0].empty()) {
                               for (std::size_t k = 0; k < d; ++k) gin[0][voff + k] += ga * uv[ai * d + k];
                             }
                             if (!gin[1].empty()) {
                               for (std::size_t k = 0; k < d; ++k) gin[1][ai * d + k] += ga * vv[voff + k];
                             }
                           }
                     });
}

RoutingResult dynamic_route(const Tensor& u_hat, const RoutingOptions& opts) {
  if (opts.iterations < 1) throw Error("dynamic_route: iterations must be >= 1");
  require_rank("dynamic_route", u_hat, 4);
  const std::size_t n = u_hat.dim(0), lower = u_hat.dim(1), upper = u_hat.dim(2);

  RoutingResult result;
  Tensor logits = Tensor::zeros(Shape{n, lower, upper});
  Tensor coupling;
  Tensor v;
  const Tensor agreement_votes = opts.detach_routing ? u_hat.detach() : u_hat;
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    coupling = softmax(logits, 2);
    result.state.coupling_history.push_back(coupling.detach());
    const Tensor s = routing_weighted_sum(coupling, u_hat);
    v = opts.activation == CapsuleActivation::squash ? squash(s, 2) : tanh(s);
    if (it + 1 < opts.iterations) {
      const Tensor vote_target = opts.detach_routing ? v.detach() : v;
      logits = add(logits, routing_agreement(vote_target, agreement_votes));
    }
  }
  result.outputs = v;
  result.state.logits = logits;
  result.state.coupling = coupling;
  result.state.iterations = opts.iterations;
  return result;
}

CapsuleGrid primary_capsules_forward(const Tensor& features, const PrimaryCapsuleParams& p,
                                     std::span<BatchNormParams> norms, bool training) {
  if (p.per_dim.empty()) throw Error("primary capsules: no convolutions configured");
  require_rank("primary capsules", features, 4);
  const std::size_t expected = p.per_dim.front().in_channels();
  if (features.dim(1) != expected) {
    throw Error("primary capsules: expected " + std::to_string(expected) + " input channels, got " +
                std::to_string(features.dim(1)));
  }
  const std::size_t n = features.dim(0), dims = p.pose_dim(), types = p.n_types();
  if (!norms.empty() && norms.size() != dims) throw Error("primary capsules: one batchnorm per pose dimension");

  // All pose dimensions share the im2col of the input, so run them as one convolution.
  std::vector<Tensor> kernels, biases;
  for (const auto& c : p.per_dim) {
    kernels.push_back(c.kernel);
    biases.push_back(c.bias);
  }
  const Conv2dParams& first = p.per_dim.front();
  Conv2dParams fused{concat(kernels, 0), concat(biases, 0), first.stride, first.padding};
  Tensor maps = conv2d_forward(features, fused);  // [N, dims * types, gh, gw]
  const std::size_t gh = maps.dim(2), gw = maps.dim(3);
  if (!norms.empty()) {
    std::vector<Tensor> normed;
    for (std::size_t d = 0; d < dims; ++d) {
      normed.push_back(batchnorm_forward(slice(maps, 1, d * types, (d + 1) * types), norms[d], training));
    }
    maps = concat(normed, 1);
  }
  const Tensor poses = transpose(reshape(maps, Shape{n, dims, types * gh * gw}), {0, 2, 1});

  CapsuleGrid grid;
  grid.poses = squash(poses, 2);
  grid.grid_h = gh;
  grid.grid_w = gw;
  grid.n_types = types;
  return grid;
}

RoutingResult capsule_layer_forward(const CapsuleGrid& grid, const CapsuleLayerParams& p, std::size_t iterations,
                                    bool detach_routing) {
  if (grid.pose_dim() != p.d_in() || grid.n_caps() != p.n_lower()) {
    throw Error("capsule layer: grid " + to_string(grid.poses.shape()) + " does not match weights " +
                to_string(p.weight.shape()));
  }
  const Tensor u_hat = capsule_predictions(grid.poses, p.weight);
  return dynamic_route(u_hat, RoutingOptions{iterations, p.activation, detach_routing});
}

Tensor concrete_dropout_mask(const Tensor& p, const Tensor& u, const ConcreteDropoutOptions& opts) {
  if (!(opts.temperature > 0.0)) throw Error("concrete dropout: temperature must be positive");
  require_open_unit("p", p);
  require_open_unit("u", u);
  const Tensor noise = logit(u);
  const double inv_t = 1.0 / opts.temperature;
  if (opts.standard_form) return sigmoid(scale(add(logit(p), noise), inv_t));
  return sigmoid(add(scale(logit(p), inv_t), noise));
}

Tensor concrete_noise(Shape shape, SplitMix64& rng) {
  Tensor u(std::move(shape));
  for (auto& x : u.mutable_data()) x = std::clamp(rng.uniform(), 1e-7, 1.0 - 1e-7);
  return u;
}

PrimaryCapsuleParams init_primary_capsules(std::size_t in_ch, std::size_t n_types, std::size_t pose_dim,
                                           std::size_t kernel, std::size_t stride, std::uint64_t seed) {
  PrimaryCapsuleParams p;
  for (std::size_t d = 0; d < pose_dim; ++d) {
    p.per_dim.push_back(init_conv2d(in_ch, n_types, kernel, stride, 0, mix_seed(seed, d)));
  }
  return p;
}

CapsuleLayerParams init_capsule_layer(std::size_t n_lower, std::size_t n_upper, std::size_t d_in, std::size_t d_out,
                                      CapsuleActivation activation, std::uint64_t seed) {
  const double bound = glorot_bound(d_in, d_out);
  return CapsuleLayerParams{Tensor::uniform(Shape{n_lower, n_upper, d_in, d_out}, -bound, bound, seed), activation};
}

}  // namespace scn
