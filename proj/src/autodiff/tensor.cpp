#include "scn/tensor.hpp"

#include <algorithm>
#include <mutex>
#include <set>
#include <sstream>

#include "scn/random.hpp"

namespace scn {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw Error("scalar must be shape [1]");
  for (auto d : shape) {
    if (d == 0) throw Error("shape entries must be >= 1, got " + to_string(shape));
  }
}

}  // namespace

Tensor::Tensor() : shape_{1}, data_(std::make_shared<std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  validate_shape(shape_);
  if (numel(shape_) != data.size()) {
    throw Error("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                to_string(shape_));
  }
  data_ = std::make_shared<std::vector<double>>(std::move(data));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_ = std::make_shared<std::vector<double>>(numel(shape_), fill);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::uint64_t seed) {
  if (!(lo < hi)) throw Error("uniform init requires lo < hi");
  Tensor t(std::move(shape));
  SplitMix64 rng(seed);
  for (auto& x : *t.data_) x = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::normal(Shape shape, double mean, double stddev, std::uint64_t seed) {
  if (stddev < 0.0) throw Error("normal init requires stddev >= 0");
  Tensor t(std::move(shape));
  SplitMix64 rng(seed);
  for (auto& x : *t.data_) x = rng.normal(mean, stddev);
  return t;
}

std::span<double> Tensor::mutable_data() {
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  return *data_;
}

double Tensor::item() const {
  if (size() != 1) throw Error("item() called on tensor of shape " + to_string(shape_));
  return (*data_)[0];
}

std::optional<NodeId> Tensor::node_id() const {
  if (!graph_) return std::nullopt;
  return node_;
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.graph_ = nullptr;
  t.node_ = 0;
  return t;
}

bool Tensor::same_values(const Tensor& other) const {
  return shape_ == other.shape_ && *data_ == *other.data_;
}

Tensor tensor_create(Shape shape, const Init& how) {
  return std::visit(
      [&](const auto& spec) -> Tensor {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, init::Zeros>) {
          return Tensor::zeros(std::move(shape));
        } else if constexpr (std::is_same_v<T, init::Ones>) {
          return Tensor::ones(std::move(shape));
        } else if constexpr (std::is_same_v<T, init::Constant>) {
          return Tensor::constant(std::move(shape), spec.value);
        } else if constexpr (std::is_same_v<T, init::Uniform>) {
          return Tensor::uniform(std::move(shape), spec.lo, spec.hi, spec.seed);
        } else {
          return Tensor::normal(std::move(shape), spec.mean, spec.stddev, spec.seed);
        }
      },
      how);
}

Tensor Gradients::at(NodeId id) const {
  if (id >= shapes_.size()) throw Error("gradient requested for unknown node " + std::to_string(id));
  if (grads_[id].empty()) return Tensor::zeros(shapes_[id]);
  return Tensor(shapes_[id], grads_[id]);
}

Tensor Gradients::wrt(const Tensor& t) const {
  auto id = t.node_id();
  if (!id) return Tensor::zeros(t.shape());
  return at(*id);
}

Tensor Graph::variable(const Tensor& value) {
  Tensor t = value.detach();
  nodes_.push_back(Node{"leaf", {}, t.shape(), nullptr});
  t.graph_ = this;
  t.node_ = nodes_.size() - 1;
  return t;
}

Tensor Graph::record(std::string_view op, std::span<const Tensor> inputs, Tensor value, BackwardFn backward) {
  Node node{std::string(op), {}, value.shape(), std::move(backward)};
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.graph_ && in.graph_ != this) throw Error(std::string(op) + ": inputs belong to different graphs");
    node.inputs.push_back(in.node_id());
  }
  nodes_.push_back(std::move(node));
  value.graph_ = this;
  value.node_ = nodes_.size() - 1;
  return value;
}

Gradients Graph::backward(const Tensor& loss) const {
  if (numel(loss.shape()) != 1 || loss.rank() != 1) {
    throw Error("backward requires a scalar loss of shape [1], got " + to_string(loss.shape()));
  }
  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const auto& n : nodes_) shapes.push_back(n.shape);
  std::vector<std::vector<double>> grads(nodes_.size());

  auto root = loss.node_id();
  if (!root) return Gradients(std::move(grads), std::move(shapes));
  if (loss.graph() != this) throw Error("backward: loss does not belong to this graph");

  grads[*root].assign(1, 1.0);
  std::vector<std::span<double>> sinks;
  for (NodeId id = *root + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.backward || grads[id].empty()) continue;
    sinks.assign(node.inputs.size(), std::span<double>{});
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      if (!node.inputs[k]) continue;
      auto& g = grads[*node.inputs[k]];
      if (g.empty()) g.assign(numel(nodes_[*node.inputs[k]].shape), 0.0);
      sinks[k] = g;
    }
    node.backward(grads[id], sinks);
    // Interior gradients are not part of the result.
    std::vector<double>().swap(grads[id]);
  }
  return Gradients(std::move(grads), std::move(shapes));
}

Gradients backward(const Tensor& loss) {
  if (!loss.graph()) {
    if (numel(loss.shape()) != 1 || loss.rank() != 1) {
      throw Error("backward requires a scalar loss of shape [1], got " + to_string(loss.shape()));
    }
    return Gradients({}, {});
  }
  return loss.graph()->backward(loss);
}

Tensor make_result(std::string_view op, std::span<const Tensor> inputs, Shape shape, std::vector<double> data,
                   BackwardFn backward) {
  Tensor value(std::move(shape), std::move(data));
  Graph* graph = nullptr;
  for (const auto& in : inputs) {
    if (in.graph()) {
      graph = in.graph();
      break;
    }
  }
  if (!graph) return value;
  return graph->record(op, inputs, std::move(value), std::move(backward));
}

Tensor make_result(std::string_view op, std::initializer_list<Tensor> inputs, Shape shape,
                   std::vector<double> data, BackwardFn backward) {
  return make_result(op, std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(shape),
                     std::move(data), std::move(backward));
}

namespace debug {
namespace {
std::mutex g_fault_mutex;
std::set<std::string, std::less<>> g_faults;
}  // namespace

void corrupt_backward(std::string_view primitive) {
  std::lock_guard lock(g_fault_mutex);
  g_faults.emplace(primitive);
}

void clear_faults() {
  std::lock_guard lock(g_fault_mutex);
  g_faults.clear();
}

bool is_corrupted(std::string_view primitive) {
  std::lock_guard lock(g_fault_mutex);
  return g_faults.find(primitive) != g_faults.end();
}
}  // namespace debug

}  // namespace scn
