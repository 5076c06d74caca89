#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tripcast {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  const char* op = "constant";
  bool requires_grad = false;
  bool is_leaf = true;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode differentiation.
///
/// Tensors are cheap handles onto a shared node. Values produced by an op are
/// never modified afterwards; only parameter leaves are updated in place (by
/// the optimizer or an initializer).
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value);
  static Tensor parameter(Shape shape, std::vector<T> values);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  const T* data() const { return node_->value.data(); }
  T item() const;
  T at(std::size_t flat) const { return node_->value.at(flat); }

  /// Writable view, permitted on leaves only.
  std::span<T> mutable_values();

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op() const { return node_->op; }

  /// Accumulated gradient; zeros if nothing reached this tensor.
  std::vector<T> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<NodeType>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<NodeType> node_;
};

/// Whether ops record onto a graph on this thread.
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Whether op outputs are scanned for NaN/Inf (on by default).
bool finite_checks_enabled() noexcept;
void set_finite_checks(bool enabled) noexcept;

/// The recorded computation reaching a scalar loss, in topological order.
template <typename T>
class Graph {
 public:
  explicit Graph(const Tensor<T>& loss);

  /// Nodes ordered so that every node's inputs precede it.
  const std::vector<std::shared_ptr<detail::Node<T>>>& nodes() const { return order_; }
  std::size_t leaf_count() const;

  /// Accumulates d(loss)/d(leaf) into every reachable parameter leaf. Leaves
  /// not reached keep a zero gradient.
  void backward();

 private:
  Tensor<T> loss_;
  std::vector<std::shared_ptr<detail::Node<T>>> order_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  Graph<T>(loss).backward();
}

namespace detail {

/// Creates an op result; records inputs and the backward closure when any
/// input requires a gradient and recording is enabled.
template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  std::initializer_list<Tensor<T>> inputs,
                  std::function<void(Node<T>&)> backward);

template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  const std::vector<Tensor<T>>& inputs,
                  std::function<void(Node<T>&)> backward);

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace tripcast
