#pragma once

#include <cstdint>

#include "scn/random.hpp"
#include "scn/tensor.hpp"

namespace scn {

struct Conv2dParams {
  Tensor kernel;  // [out_ch, in_ch, k, k]
  Tensor bias;    // [out_ch]
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t in_channels() const { return kernel.dim(1); }
  std::size_t kernel_size() const { return kernel.dim(2); }
  std::size_t parameter_count() const { return kernel.size() + bias.size(); }
};

struct BatchNormParams {
  Tensor gamma;  // [ch]
  Tensor beta;   // [ch]
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  std::size_t channels() const { return gamma.size(); }
  std::size_t parameter_count() const { return gamma.size() + beta.size(); }
};

struct DenseParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

/// Output extent of a strided window; throws when the kernel does not fit.
std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding);

/// Cross-correlation plus bias. x: [N, C, H, W].
Tensor conv2d_forward(const Tensor& x, const Conv2dParams& p);

/// Normalizes per channel (axis 1) over batch and spatial axes. In training
/// mode the batch statistics are used and the running statistics updated.
Tensor batchnorm_forward(const Tensor& x, BatchNormParams& p, bool training);

Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
inline Tensor dense_forward(const Tensor& x, const DenseParams& p) { return dense_forward(x, p.weight, p.bias); }

/// Inverted dropout; identity when not training or rate is 0.
Tensor dropout(const Tensor& x, double rate, bool training, SplitMix64& rng);

/// Glorot-uniform bound sqrt(6 / (fan_in + fan_out)).
double glorot_bound(std::size_t fan_in, std::size_t fan_out);

Conv2dParams init_conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                         std::size_t padding, std::uint64_t seed);
BatchNormParams init_batchnorm(std::size_t channels);
DenseParams init_dense(std::size_t in, std::size_t out, std::uint64_t seed);

}  // namespace scn
