#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace scn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Graph;

namespace init {
struct Zeros {};
struct Ones {};
struct Constant {
  double value;
};
struct Uniform {
  double lo;
  double hi;
  std::uint64_t seed;
};
struct Normal {
  double mean;
  double stddev;
  std::uint64_t seed;
};
}  // namespace init

using Init = std::variant<init::Zeros, init::Ones, init::Constant, init::Uniform, init::Normal>;

/// Dense row-major array of doubles. Copies share the underlying buffer;
/// mutation goes through mutable_data(), which detaches a shared buffer first.
///
/// A tensor produced by a primitive whose inputs live on a Graph is itself a
/// node of that graph. Tensors without a graph are constants.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);
  explicit Tensor(Shape shape, double fill = 0.0);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor constant(Shape shape, double value) { return Tensor(std::move(shape), value); }
  static Tensor uniform(Shape shape, double lo, double hi, std::uint64_t seed);
  static Tensor normal(Shape shape, double mean, double stddev, std::uint64_t seed);
  static Tensor scalar(double value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> data() const { return *data_; }
  std::span<double> mutable_data();
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;

  bool requires_grad() const { return graph_ != nullptr; }
  std::optional<NodeId> node_id() const;
  Graph* graph() const { return graph_; }

  /// Same values, no graph attachment.
  Tensor detach() const;

  bool same_values(const Tensor& other) const;

 private:
  friend class Graph;

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Graph* graph_ = nullptr;
  NodeId node_ = 0;
};

Tensor tensor_create(Shape shape, const Init& how);

/// Receives the output gradient and accumulates into one buffer per input.
/// Buffers of inputs that do not require gradients are empty spans.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const std::span<double>> grad_in)>;

class Gradients {
 public:
  Gradients(std::vector<std::vector<double>> grads, std::vector<Shape> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  /// Gradient w.r.t. a tensor of the graph; zeros when it was not reached.
  Tensor wrt(const Tensor& t) const;
  Tensor at(NodeId id) const;
  std::size_t node_count() const { return shapes_.size(); }

 private:
  std::vector<std::vector<double>> grads_;
  std::vector<Shape> shapes_;
};

/// Append-only tape. Inputs of a node always precede it.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Registers a leaf that requires gradients.
  Tensor variable(const Tensor& value);

  Tensor record(std::string_view op, std::span<const Tensor> inputs, Tensor value, BackwardFn backward);

  Gradients backward(const Tensor& loss) const;

  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(NodeId id) const { return nodes_.at(id).op; }

 private:
  struct Node {
    std::string op;
    std::vector<std::optional<NodeId>> inputs;
    Shape shape;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

Gradients backward(const Tensor& loss);

/// Builds the result of a primitive. Records a node when any input is on a graph.
Tensor make_result(std::string_view op, std::span<const Tensor> inputs, Shape shape, std::vector<double> data,
                   BackwardFn backward);
Tensor make_result(std::string_view op, std::initializer_list<Tensor> inputs, Shape shape,
                   std::vector<double> data, BackwardFn backward);

namespace debug {
/// Fault injection for negative-control tests of the gradient checker.
void corrupt_backward(std::string_view primitive);
void clear_faults();
bool is_corrupted(std::string_view primitive);
}  // namespace debug

}  // namespace scn
