#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "scn/tensor.hpp"

namespace scn {

// Elementwise binary ops broadcast over axes of size 1. Ranks must match.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor matmul(const Tensor& a, const Tensor& b);

// Reductions keep the reduced axis with size 1.
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor max(const Tensor& x, std::size_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // x > 0
Tensor sqrt(const Tensor& x);  // x > 0 for a finite gradient
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor negate(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
/// Axis permutation; output axis i is input axis perm[i].
Tensor transpose(const Tensor& x, std::vector<std::size_t> perm);
Tensor transpose(const Tensor& x);  // reverses axes
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

Tensor softmax(const Tensor& x, std::size_t axis);
/// x / ||x|| along axis; all-zero slices map to zero.
Tensor l2norm(const Tensor& x, std::size_t axis);

enum class Primitive {
  add,
  sub,
  mul,
  matmul,
  sum,
  mean,
  max,
  exp,
  log,
  sqrt,
  square,
  abs,
  negate,
  reshape,
  transpose,
  concat,
  slice,
  tanh,
  sigmoid,
  relu,
  softmax,
  l2norm,
};

std::string_view primitive_name(Primitive p);
std::span<const Primitive> all_primitives();

struct PrimitiveAttrs {
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  Shape shape;
  std::vector<std::size_t> perm;
};

Tensor apply_primitive(Primitive op, std::span<const Tensor> inputs, const PrimitiveAttrs& attrs = {});

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Max over components of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|), central differences.
/// f must be deterministic and return a [1]-shaped tensor.
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

}  // namespace scn
