#include "scn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "scn/ops.hpp"
#include "../common/gemm.hpp"

namespace scn {
namespace {

// Output positions o with 0 <= o*stride + k - pad < extent, as [lo, hi).
std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t stride, std::size_t pad,
                                                std::size_t extent, std::size_t out_extent) {
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = 0;
  if (off < 0) lo = (-off + s - 1) / s;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(extent) - 1 - off;
  if (last < 0) return {0, 0};
  std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out_extent), last / s + 1);
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, stride, pad, oh, ow;

  std::size_t patch() const { return c * k * k; }
  std::size_t positions() const { return oh * ow; }
};

// col[(c * k + ky) * k + kx][oy * ow + ox] = x[c][oy * stride + ky - pad][ox * stride + kx - pad], 0 outside.
// Rows of col are ld apart so several images can sit side by side.
void im2col(const double* img, const ConvGeometry& g, double* col, std::size_t ld) {
  const std::size_t np = g.positions();
  // Without padding every entry is written below.
  if (g.pad > 0) {
    for (std::size_t q = 0; q < g.patch(); ++q) std::fill_n(col + q * ld, np, 0.0);
  }
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      auto [ylo, yhi] = valid_range(ky, g.stride, g.pad, g.h, g.oh);
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        auto [xlo, xhi] = valid_range(kx, g.stride, g.pad, g.w, g.ow);
        double* dst = col + ((c * g.k + ky) * g.k + kx) * ld;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          // Unsigned wrap of (kx - pad) cancels once ox * stride is added.
          const double* src = img + (c * g.h + oy * g.stride + ky - g.pad) * g.w + kx - g.pad;
          double* drow = dst + oy * g.ow;
          for (std::size_t ox = xlo; ox < xhi; ++ox) drow[ox] = src[ox * g.stride];
        }
      }
    }
  }
}

// Adjoint of im2col.
void col2im_add(const double* col, const ConvGeometry& g, double* img, std::size_t ld) {
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      auto [ylo, yhi] = valid_range(ky, g.stride, g.pad, g.h, g.oh);
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        auto [xlo, xhi] = valid_range(kx, g.stride, g.pad, g.w, g.ow);
        const double* src = col + ((c * g.k + ky) * g.k + kx) * ld;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          double* drow = img + (c * g.h + oy * g.stride + ky - g.pad) * g.w + kx - g.pad;
          const double* srow = src + oy * g.ow;
          for (std::size_t ox = xlo; ox < xhi; ++ox) drow[ox * g.stride] += srow[ox];
        }
      }
    }
  }
}

// Scratch buffers reused across calls; fresh large allocations are dominated by page faults.
double* workspace(std::size_t slot, std::size_t size) {
  thread_local std::vector<double> buffers[2];
  auto& b = buffers[slot];
  if (b.size() < size) b.resize(size);
  return b.data();
}

// Images per GEMM so the column buffer stays around 32 MB.
std::size_t images_per_chunk(const ConvGeometry& g) {
  const std::size_t per_image = g.patch() * g.positions();
  return std::clamp<std::size_t>((std::size_t{4} << 20) / std::max<std::size_t>(per_image, 1), 1, g.n);
}

Tensor mean_over_non_channel(const Tensor& x) {
  Tensor m = mean(x, 0);
  for (std::size_t axis = 2; axis < x.rank(); ++axis) m = mean(m, axis);
  return m;
}

Shape channel_broadcast_shape(const Tensor& x) {
  Shape s(x.rank(), 1);
  s[1] = x.dim(1);
  return s;
}

}  // namespace

std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw Error("conv2d: stride must be positive");
  if (kernel > input + 2 * padding) {
    throw Error("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                std::to_string(input + 2 * padding));
  }
  return (input + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d_forward(const Tensor& x, const Conv2dParams& p) {
  const Tensor& kernel = p.kernel;
  const Tensor& bias = p.bias;
  if (x.rank() != 4 || kernel.rank() != 4) throw Error("conv2d: shape mismatch " + to_string(x.shape()) + " vs " + to_string(kernel.shape()));
  if (kernel.dim(2) != kernel.dim(3)) throw Error("conv2d: kernels must be square, got " + to_string(kernel.shape()));
  if (x.dim(1) != kernel.dim(1)) {
    throw Error("conv2d: input channels " + std::to_string(x.dim(1)) + " do not match kernel " +
                to_string(kernel.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != kernel.dim(0)) {
    throw Error("conv2d: bias shape " + to_string(bias.shape()) + " does not match kernel " + to_string(kernel.shape()));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), p.stride, p.padding, 0, 0};
  g.oh = conv_output_size(g.h, g.k, g.stride, g.pad);
  g.ow = conv_output_size(g.w, g.k, g.stride, g.pad);

  const std::size_t kk = g.patch(), np = g.positions(), img = g.c * g.h * g.w;
  const std::size_t chunk = images_per_chunk(g);
  std::vector<double> out(g.n * g.o * np);
  auto xin = x.data();
  auto wk = kernel.data();
  auto bv = bias.data();
  for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::size_t m = std::min(chunk, g.n - n0), ld = m * np;
    double* col = workspace(0, kk * ld);
    double* prod = workspace(1, g.o * ld);
    for (std::size_t i = 0; i < m; ++i) im2col(&xin[(n0 + i) * img], g, col + i * np, ld);
    detail::gemm(false, false, g.o, ld, kk, 1.0, wk.data(), kk, col, ld, 0.0, prod, ld);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t o = 0; o < g.o; ++o) {
        const double* src = prod + o * ld + i * np;
        double* dst = &out[((n0 + i) * g.o + o) * np];
        for (std::size_t p = 0; p < np; ++p) dst[p] = src[p] + bv[o];
      }
  }

  return make_result(
      "conv2d", {x, kernel, bias}, Shape{g.n, g.o, g.oh, g.ow}, std::move(out),
      [x, kernel, g](std::span<const double> grad, std::span<const std::span<double>> gin) {
        const std::size_t kk = g.patch(), np = g.positions(), img = g.c * g.h * g.w;
        const std::size_t chunk = images_per_chunk(g);
        auto xin = x.data();
        auto wk = kernel.data();
        auto gx = gin[0];
        auto gw = gin[1];
        auto gb = gin[2];
        if (!gb.empty()) {
          for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t o = 0; o < g.o; ++o) {
              const double* gp = &grad[(n * g.o + o) * np];
              double acc = 0.0;
              for (std::size_t p = 0; p < np; ++p) acc += gp[p];
              gb[o] += acc;
            }
        }
        if (gw.empty() && gx.empty()) return;
        for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
          const std::size_t m = std::min(chunk, g.n - n0), ld = m * np;
          double* col = workspace(0, kk * ld);
          double* gall = workspace(1, g.o * ld);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t o = 0; o < g.o; ++o) {
              std::copy_n(&grad[((n0 + i) * g.o + o) * np], np, gall + o * ld + i * np);
            }
          if (!gw.empty()) {
            for (std::size_t i = 0; i < m; ++i) im2col(&xin[(n0 + i) * img], g, col + i * np, ld);
            detail::gemm(false, true, g.o, kk, ld, 1.0, gall, ld, col, ld, 1.0, gw.data(), kk);
          }
          if (!gx.empty()) {
            detail::gemm(true, false, kk, ld, g.o, 1.0, wk.data(), kk, gall, ld, 0.0, col, ld);
            for (std::size_t i = 0; i < m; ++i) col2im_add(col + i * np, g, &gx[(n0 + i) * img], ld);
          }
        }
      });
}

Tensor batchnorm_forward(const Tensor& x, BatchNormParams& p, bool training) {
  if (x.rank() < 2 || x.dim(1) != p.channels()) {
    throw Error("batchnorm: shape mismatch " + to_string(x.shape()) + " vs channels " + std::to_string(p.channels()));
  }
  if (p.epsilon <= 0.0) throw Error("batchnorm: epsilon must be positive");
  const Shape cshape = channel_broadcast_shape(x);
  const Tensor gamma = reshape(p.gamma, cshape);
  const Tensor beta = reshape(p.beta, cshape);

  if (!training) {
    const Tensor mu = reshape(p.running_mean.detach(), cshape);
    const Tensor var = reshape(p.running_var.detach(), cshape);
    const Tensor xhat = div(sub(x, mu), sqrt(add_scalar(var, p.epsilon)));
    return add(mul(xhat, gamma), beta);
  }

  if (x.dim(0) < 2) throw Error("batchnorm: batch too small");
  const Tensor mu = mean_over_non_channel(x);
  const Tensor centered = sub(x, mu);
  const Tensor var = mean_over_non_channel(square(centered));
  const Tensor xhat = div(centered, sqrt(add_scalar(var, p.epsilon)));

  const double count = static_cast<double>(x.size() / x.dim(1));
  const double unbias = count / (count - 1.0);
  std::vector<double> rm(p.running_mean.data().begin(), p.running_mean.data().end());
  std::vector<double> rv(p.running_var.data().begin(), p.running_var.data().end());
  for (std::size_t c = 0; c < rm.size(); ++c) {
    rm[c] = (1.0 - p.momentum) * rm[c] + p.momentum * mu[c];
    rv[c] = (1.0 - p.momentum) * rv[c] + p.momentum * var[c] * unbias;
  }
  p.running_mean = Tensor(p.running_mean.shape(), std::move(rm));
  p.running_var = Tensor(p.running_var.shape(), std::move(rv));

  return add(mul(xhat, gamma), beta);
}

Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0)) {
    throw Error("dense: shape mismatch " + to_string(x.shape()) + " vs " + to_string(weight.shape()));
  }
  if (bias.size() != weight.dim(1)) {
    throw Error("dense: shape mismatch " + to_string(bias.shape()) + " vs " + to_string(weight.shape()));
  }
  return add(matmul(x, weight), reshape(bias, Shape{1, bias.size()}));
}

Tensor dropout(const Tensor& x, double rate, bool training, SplitMix64& rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw Error("dropout: rate must be < 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Conv2dParams init_conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                         std::size_t padding, std::uint64_t seed) {
  const double bound = glorot_bound(in_ch * kernel * kernel, out_ch * kernel * kernel);
  return Conv2dParams{Tensor::uniform(Shape{out_ch, in_ch, kernel, kernel}, -bound, bound, seed),
                      Tensor::zeros(Shape{out_ch}), stride, padding};
}

BatchNormParams init_batchnorm(std::size_t channels) {
  return BatchNormParams{Tensor::ones(Shape{channels}), Tensor::zeros(Shape{channels}),
                         Tensor::zeros(Shape{channels}), Tensor::ones(Shape{channels})};
}

DenseParams init_dense(std::size_t in, std::size_t out, std::uint64_t seed) {
  const double bound = glorot_bound(in, out);
  return DenseParams{Tensor::uniform(Shape{in, out}, -bound, bound, seed), Tensor::zeros(Shape{out})};
}

}  // namespace scn
