#include "scn/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "../common/gemm.hpp"

namespace scn {
namespace {

Error shape_error(std::string_view op, const Shape& a, const Shape& b) {
  return Error(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size());
  std::size_t acc = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    s[i] = acc;
    acc *= shape[i];
  }
  return s;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

BroadcastPlan plan_broadcast(std::string_view op, const Shape& a, const Shape& b) {
  if (a.size() != b.size()) throw shape_error(op, a, b);
  BroadcastPlan plan;
  plan.out.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      plan.out[i] = a[i];
    } else if (a[i] == 1) {
      plan.out[i] = b[i];
    } else {
      throw shape_error(op, a, b);
    }
  }
  plan.stride_a = strides_of(a);
  plan.stride_b = strides_of(b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != plan.out[i]) plan.stride_a[i] = 0;
    if (b[i] != plan.out[i]) plan.stride_b[i] = 0;
  }
  return plan;
}

// Calls f(out_index, a_index, b_index) for every output element in row-major order.
template <class F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const Shape& out = plan.out;
  const std::size_t rank = out.size();
  const std::size_t total = numel(out);
  const std::size_t inner = out.back();
  const std::size_t sa_in = plan.stride_a.back();
  const std::size_t sb_in = plan.stride_b.back();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t i = 0; i < total; i += inner) {
    for (std::size_t k = 0; k < inner; ++k) f(i + k, ia + k * sa_in, ib + k * sb_in);
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      ia += plan.stride_a[ax];
      ib += plan.stride_b[ax];
      if (idx[ax] < out[ax]) break;
      ia -= plan.stride_a[ax] * out[ax];
      ib -= plan.stride_b[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

// Forward f(x, y); partials da(x, y), db(x, y).
template <class Fwd, class Da, class Db>
Tensor binary(std::string_view name, const Tensor& a, const Tensor& b, Fwd f, Da da, Db db) {
  auto plan = plan_broadcast(name, a.shape(), b.shape());
  std::vector<double> out(numel(plan.out));
  auto xa = a.data();
  auto xb = b.data();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(xa[ia], xb[ib]); });
  Shape shape = plan.out;
  return make_result(name, {a, b}, std::move(shape), std::move(out),
                     [a, b, plan, da, db](std::span<const double> g, std::span<const std::span<double>> gin) {
                       auto xa = a.data();
                       auto xb = b.data();
                       auto ga = gin[0];
                       auto gb = gin[1];
                       for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                         if (!ga.empty()) ga[ia] += g[i] * da(xa[ia], xb[ib]);
                         if (!gb.empty()) gb[ib] += g[i] * db(xa[ia], xb[ib]);
                       });
                     });
}

// Forward f(x); derivative df(x, y) where y = f(x).
template <class Fwd, class Df>
Tensor unary(std::string_view name, const Tensor& x, Fwd f, Df df) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  Tensor y_holder(x.shape(), out);
  return make_result(name, {x}, x.shape(), std::move(out),
                     [x, y_holder, df](std::span<const double> g, std::span<const std::span<double>> gin) {
                       auto in = x.data();
                       auto y = y_holder.data();
                       for (std::size_t i = 0; i < in.size(); ++i) gin[0][i] += g[i] * df(in[i], y[i]);
                     });
}

struct AxisSplit {
  std::size_t outer;
  std::size_t len;
  std::size_t inner;
};

AxisSplit split_axis(std::string_view op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw Error(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape reduced_shape(Shape shape, std::size_t axis) {
  shape[axis] = 1;
  return shape;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      "add_scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm(false, false, m, n, k, 1.0, a.data().data(), k, b.data().data(), n, 0.0, out.data(), n);
  return make_result("matmul", {a, b}, Shape{m, n}, std::move(out),
                     [a, b, m, k, n](std::span<const double> g, std::span<const std::span<double>> gin) {
                       // dA = G B^T, dB = A^T G
                       if (!gin[0].empty()) {
                         detail::gemm(false, true, m, k, n, 1.0, g.data(), n, b.data().data(), n, 1.0,
                                      gin[0].data(), k);
                       }
                       if (!gin[1].empty()) {
                         detail::gemm(true, false, k, n, m, 1.0, a.data().data(), k, g.data(), n, 1.0,
                                      gin[1].data(), n);
                       }
                     });
}

Tensor sum(const Tensor& x, std::size_t axis) {
  auto s = split_axis("sum", x.shape(), axis);
  auto in = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.len; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += in[(o * s.len + k) * s.inner + i];
  return make_result("sum", {x}, reduced_shape(x.shape(), axis), std::move(out),
                     [s](std::span<const double> g, std::span<const std::span<double>> gin) {
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t k = 0; k < s.len; ++k)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             gin[0][(o * s.len + k) * s.inner + i] += g[o * s.inner + i];
                     });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  auto s = split_axis("mean", x.shape(), axis);
  return scale(sum(x, axis), 1.0 / static_cast<double>(s.len));
}

Tensor max(const Tensor& x, std::size_t axis) {
  auto s = split_axis("max", x.shape(), axis);
  auto in = x.data();
  std::vector<double> out(s.outer * s.inner, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> arg(s.outer * s.inner, 0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.len; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t src = (o * s.len + k) * s.inner + i;
        const std::size_t dst = o * s.inner + i;
        if (k == 0 || in[src] > out[dst]) {
          out[dst] = in[src];
          arg[dst] = src;
        }
      }
  return make_result("max", {x}, reduced_shape(x.shape(), axis), std::move(out),
                     [arg = std::move(arg)](std::span<const double> g, std::span<const std::span<double>> gin) {
                       for (std::size_t i = 0; i < arg.size(); ++i) gin[0][arg[i]] += g[i];
                     });
}

Tensor sum_all(const Tensor& x) { return sum(reshape(x, Shape{x.size()}), 0); }

Tensor mean_all(const Tensor& x) { return mean(reshape(x, Shape{x.size()}), 0); }

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor negate(const Tensor& x) {
  return unary(
      "negate", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor tanh(const Tensor& x) {
  if (debug::is_corrupted("tanh")) {
    return unary(
        "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - 0.5 * y * y + 0.25; });
  }
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) throw shape_error("reshape", x.shape(), shape);
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", {x}, std::move(shape), std::move(out),
                     [](std::span<const double> g, std::span<const std::span<double>> gin) {
                       for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                     });
}

Tensor transpose(const Tensor& x, std::vector<std::size_t> perm) {
  const std::size_t rank = x.rank();
  std::vector<std::size_t> check = perm;
  std::sort(check.begin(), check.end());
  std::vector<std::size_t> iota(rank);
  std::iota(iota.begin(), iota.end(), 0);
  if (check != iota) throw Error("transpose: invalid permutation for shape " + to_string(x.shape()));

  Shape out_shape(rank);
  auto in_strides = strides_of(x.shape());
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.dim(perm[i]);
    src_strides[i] = in_strides[perm[i]];
  }
  // Source index of each output element.
  std::vector<std::size_t> src(x.size());
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      src[i] = offset;
      for (std::size_t ax = rank; ax-- > 0;) {
        ++idx[ax];
        offset += src_strides[ax];
        if (idx[ax] < out_shape[ax]) break;
        offset -= src_strides[ax] * out_shape[ax];
        idx[ax] = 0;
      }
    }
  }
  auto in = x.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[src[i]];
  return make_result("transpose", {x}, std::move(out_shape), std::move(out),
                     [src = std::move(src)](std::span<const double> g, std::span<const std::span<double>> gin) {
                       for (std::size_t i = 0; i < src.size(); ++i) gin[0][src[i]] += g[i];
                     });
}

Tensor transpose(const Tensor& x) {
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.rbegin(), perm.rend(), 0);
  return transpose(x, std::move(perm));
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw Error("concat: no inputs");
  const Shape& first = parts[0].shape();
  auto s0 = split_axis("concat", first, axis);
  std::vector<std::size_t> lens;
  std::size_t total_len = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw shape_error("concat", first, p.shape());
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) throw shape_error("concat", first, p.shape());
    }
    lens.push_back(p.dim(axis));
    total_len += p.dim(axis);
  }
  Shape out_shape = first;
  out_shape[axis] = total_len;
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto in = parts[k].data();
    const std::size_t block = lens[k] * s0.inner;
    for (std::size_t o = 0; o < s0.outer; ++o) {
      std::copy_n(&in[o * block], block, &out[(o * total_len + offset) * s0.inner]);
    }
    offset += lens[k];
  }
  const std::size_t outer = s0.outer, inner = s0.inner;
  return make_result("concat", parts, std::move(out_shape), std::move(out),
                     [lens, total_len, outer, inner](std::span<const double> g,
                                                     std::span<const std::span<double>> gin) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < lens.size(); ++k) {
                         const std::size_t block = lens[k] * inner;
                         if (!gin[k].empty()) {
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t j = 0; j < block; ++j)
                               gin[k][o * block + j] += g[(o * total_len + offset) * inner + j];
                         }
                         offset += lens[k];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  auto s = split_axis("slice", x.shape(), axis);
  if (begin >= end || end > s.len) {
    throw Error("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for shape " +
                to_string(x.shape()));
  }
  const std::size_t len = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  auto in = x.data();
  std::vector<double> out(s.outer * len * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(&in[(o * s.len + begin) * s.inner], len * s.inner, &out[o * len * s.inner]);
  }
  return make_result("slice", {x}, std::move(out_shape), std::move(out),
                     [s, begin, len](std::span<const double> g, std::span<const std::span<double>> gin) {
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t j = 0; j < len * s.inner; ++j)
                           gin[0][(o * s.len + begin) * s.inner + j] += g[o * len * s.inner + j];
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  auto s = split_axis("softmax", x.shape(), axis);
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double hi = in[base];
      for (std::size_t k = 1; k < s.len; ++k) hi = std::max(hi, in[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const double e = std::exp(in[base + k * s.inner] - hi);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] /= total;
    }
  }
  Tensor y(x.shape(), out);
  return make_result("softmax", {x}, x.shape(), std::move(out),
                     [y, s](std::span<const double> g, std::span<const std::span<double>> gin) {
                       auto yv = y.data();
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           const std::size_t base = o * s.len * s.inner + i;
                           double dot = 0.0;
                           for (std::size_t k = 0; k < s.len; ++k) dot += g[base + k * s.inner] * yv[base + k * s.inner];
                           for (std::size_t k = 0; k < s.len; ++k) {
                             const std::size_t j = base + k * s.inner;
                             gin[0][j] += yv[j] * (g[j] - dot);
                           }
                         }
                       }
                     });
}

Tensor l2norm(const Tensor& x, std::size_t axis) {
  auto s = split_axis("l2norm", x.shape(), axis);
  auto in = x.data();
  std::vector<double> out(in.size(), 0.0);
  std::vector<double> norms(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double sq = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) sq += in[base + k * s.inner] * in[base + k * s.inner];
      const double n = std::sqrt(sq);
      norms[o * s.inner + i] = n;
      if (n > 0.0) {
        for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] = in[base + k * s.inner] / n;
      }
    }
  }
  Tensor y(x.shape(), out);
  return make_result("l2norm", {x}, x.shape(), std::move(out),
                     [y, s, norms = std::move(norms)](std::span<const double> g,
                                                      std::span<const std::span<double>> gin) {
                       auto yv = y.data();
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           const double n = norms[o * s.inner + i];
                           if (n == 0.0) continue;
                           const std::size_t base = o * s.len * s.inner + i;
                           double dot = 0.0;
                           for (std::size_t k = 0; k < s.len; ++k) dot += g[base + k * s.inner] * yv[base + k * s.inner];
                           for (std::size_t k = 0; k < s.len; ++k) {
                             const std::size_t j = base + k * s.inner;
                             gin[0][j] += (g[j] - yv[j] * dot) / n;
                           }
                         }
                       }
                     });
}

std::string_view primitive_name(Primitive p) {
  switch (p) {
    case Primitive::add: return "add";
    case Primitive::sub: return "sub";
    case Primitive::mul: return "mul";
    case Primitive::matmul: return "matmul";
    case Primitive::sum: return "sum";
    case Primitive::mean: return "mean";
    case Primitive::max: return "max";
    case Primitive::exp: return "exp";
    case Primitive::log: return "log";
    case Primitive::sqrt: return "sqrt";
    case Primitive::square: return "square";
    case Primitive::abs: return "abs";
    case Primitive::negate: return "negate";
    case Primitive::reshape: return "reshape";
    case Primitive::transpose: return "transpose";
    case Primitive::concat: return "concat";
    case Primitive::slice: return "slice";
    case Primitive::tanh: return "tanh";
    case Primitive::sigmoid: return "sigmoid";
    case Primitive::relu: return "relu";
    case Primitive::softmax: return "softmax";
    case Primitive::l2norm: return "l2norm";
  }
  return "unknown";
}

std::span<const Primitive> all_primitives() {
  static constexpr std::array kAll{
      Primitive::add,    Primitive::sub,     Primitive::mul,       Primitive::matmul, Primitive::sum,
      Primitive::mean,   Primitive::max,     Primitive::exp,       Primitive::log,    Primitive::sqrt,
      Primitive::square, Primitive::abs,     Primitive::negate,    Primitive::reshape, Primitive::transpose,
      Primitive::concat, Primitive::slice,   Primitive::tanh,      Primitive::sigmoid, Primitive::relu,
      Primitive::softmax, Primitive::l2norm,
  };
  return kAll;
}

Tensor apply_primitive(Primitive op, std::span<const Tensor> inputs, const PrimitiveAttrs& attrs) {
  const std::size_t arity = [&] {
    switch (op) {
      case Primitive::add:
      case Primitive::sub:
      case Primitive::mul:
      case Primitive::matmul: return std::size_t{2};
      case Primitive::concat: return inputs.size();
      default: return std::size_t{1};
    }
  }();
  if (inputs.size() != arity || inputs.empty()) {
    throw Error(std::string(primitive_name(op)) + ": expected " + std::to_string(arity) + " inputs, got " +
                std::to_string(inputs.size()));
  }
  const Tensor& x = inputs[0];
  switch (op) {
    case Primitive::add: return add(x, inputs[1]);
    case Primitive::sub: return sub(x, inputs[1]);
    case Primitive::mul: return mul(x, inputs[1]);
    case Primitive::matmul: return matmul(x, inputs[1]);
    case Primitive::sum: return sum(x, attrs.axis);
    case Primitive::mean: return mean(x, attrs.axis);
    case Primitive::max: return max(x, attrs.axis);
    case Primitive::exp: return exp(x);
    case Primitive::log: return log(x);
    case Primitive::sqrt: return sqrt(x);
    case Primitive::square: return square(x);
    case Primitive::abs: return abs(x);
    case Primitive::negate: return negate(x);
    case Primitive::reshape: return reshape(x, attrs.shape);
    case Primitive::transpose: return attrs.perm.empty() ? transpose(x) : transpose(x, attrs.perm);
    case Primitive::concat: return concat(inputs, attrs.axis);
    case Primitive::slice: return slice(x, attrs.axis, attrs.begin, attrs.end);
    case Primitive::tanh: return tanh(x);
    case Primitive::sigmoid: return sigmoid(x);
    case Primitive::relu: return relu(x);
    case Primitive::softmax: return softmax(x, attrs.axis);
    case Primitive::l2norm: return l2norm(x, attrs.axis);
  }
  throw Error("unknown primitive");
}

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw Error("grad_check: eps must lie in [1e-7, 1e-3]");
  Graph graph;
  Tensor xv = graph.variable(x);
  Tensor loss = f(xv);
  if (loss.size() != 1) throw Error("grad_check: function must return a scalar, got " + to_string(loss.shape()));
  Tensor analytic = backward(loss).wrt(xv);

  std::vector<double> base(x.data().begin(), x.data().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto probe = base;
    probe[i] = base[i] + eps;
    const double up = f(Tensor(x.shape(), probe)).item();
    probe[i] = base[i] - eps;
    const double down = f(Tensor(x.shape(), probe)).item();
    const double fd = (up - down) / (2.0 * eps);
    const double ad = analytic[i];
    const double err = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
    if (std::isnan(err)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace scn
