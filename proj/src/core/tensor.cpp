#include "tripcast/core/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <type_traits>
#include <unordered_set>

#include "tripcast/core/error.hpp"

namespace tripcast {
namespace {

thread_local bool g_grad_enabled = true;
bool g_finite_checks = true;

// Branch-free scan over the exponent bits so the loop vectorises.
template <typename T>
bool all_finite(const std::vector<T>& values) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits exp_mask = sizeof(T) == 4 ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
  Bits bad = 0;
  for (const T& v : values) {
    Bits b;
    std::memcpy(&b, &v, sizeof b);
    bad |= ((b & exp_mask) == exp_mask) ? Bits(1) : Bits(0);
  }
  return bad == 0;
}

}  // namespace

std::size_t numel(const Shape& shape) noexcept {
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

bool grad_enabled() noexcept { return g_grad_enabled; }
NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool finite_checks_enabled() noexcept { return g_finite_checks; }
void set_finite_checks(bool enabled) noexcept { g_finite_checks = enabled; }

template <typename T>
Tensor<T>::Tensor(Shape shape) : node_(std::make_shared<NodeType>()) {
  node_->value.assign(numel(shape), T(0));
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<NodeType>()) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " needs " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->op = "parameter";
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not scalar");
  return node_->value[0];
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
  if (!node_->is_leaf) throw Error("StateError", std::string("mutable_values: '") + node_->op + "' output is immutable");
  return node_->value;
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (node_->grad.empty()) return std::vector<T>(node_->value.size(), T(0));
  return node_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value);
}

template <typename T>
Graph<T>::Graph(const Tensor<T>& loss) : loss_(loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  // Iterative post-order DFS; input order fixes the traversal, so the
  // resulting order (and the gradient accumulation order) is deterministic.
  using NodePtr = std::shared_ptr<detail::Node<T>>;
  std::unordered_set<const detail::Node<T>*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  if (loss.requires_grad()) {
    stack.emplace_back(loss.node(), 0);
    seen.insert(loss.node().get());
  }
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodePtr child = node->inputs[next++];
      if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(child, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

template <typename T>
std::size_t Graph<T>::leaf_count() const {
  std::size_t n = 0;
  for (const auto& node : order_) n += node->is_leaf ? 1 : 0;
  return n;
}

template <typename T>
void Graph<T>::backward() {
  if (order_.empty()) return;
  order_.back()->grad_buffer()[0] += T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    auto& node = **it;
    if (node.is_leaf) continue;
    if (!node.grad.empty() && node.backward) node.backward(node);
    // Intermediate gradients are consumed exactly once.
    node.grad.clear();
    node.grad.shrink_to_fit();
  }
}

namespace detail {

template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  const std::vector<Tensor<T>>& inputs,
                  std::function<void(Node<T>&)> backward) {
  if (g_finite_checks && !all_finite(value)) {
    throw NumericError(std::string(op) + ": non-finite value in output of shape " +
                       to_string(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  bool any = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) any = any || in.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  std::initializer_list<Tensor<T>> inputs,
                  std::function<void(Node<T>&)> backward) {
  return make_op<T>(op, std::move(shape), std::move(value), std::vector<Tensor<T>>(inputs),
                    std::move(backward));
}

template Tensor<float> make_op(const char*, Shape, std::vector<float>,
                               const std::vector<Tensor<float>>&,
                               std::function<void(Node<float>&)>);
template Tensor<double> make_op(const char*, Shape, std::vector<double>,
                                const std::vector<Tensor<double>>&,
                                std::function<void(Node<double>&)>);
template Tensor<float> make_op(const char*, Shape, std::vector<float>,
                               std::initializer_list<Tensor<float>>,
                               std::function<void(Node<float>&)>);
template Tensor<double> make_op(const char*, Shape, std::vector<double>,
                                std::initializer_list<Tensor<double>>,
                                std::function<void(Node<double>&)>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace tripcast
