#pragma once

#if defined(__GLIBC__) || defined(__linux__)
#include <malloc.h>
#endif

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace physioattn {

using Shape = std::vector<std::size_t>;

/// Raised for any shape or argument violation detected by an op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::uint64_t& mac_counter() {
  thread_local std::uint64_t macs = 0;
  return macs;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording for the lifetime of the guard (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Multiply-accumulates performed by conv/dense/matmul on this thread.
/// Deterministic, so it doubles as a reproducible cost clock.
inline std::uint64_t mac_count() { return detail::mac_counter(); }
inline void add_macs(std::uint64_t n) { detail::mac_counter() += n; }

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

/// Shared handle to a node of the autodiff graph. Copies alias the same storage.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + physioattn::to_string(shape));
    }
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive: " + physioattn::to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->ensure_grad();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  explicit operator bool() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + physioattn::to_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) {
    node_->requires_grad = r;
    if (r) node_->ensure_grad();
  }

  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(grad().begin(), grad().end(), T(0)); }

  const char* op() const { return node_->op; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  /// Fresh leaf with copied values and no history.
  Tensor detach() const { return Tensor(shape(), data(), false); }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}
  template <class U>
  friend Tensor<U> make_op_result(Shape, std::vector<U>, std::vector<Tensor<U>>, const char*,
                                  std::function<void(Node<U>&)>);

  std::shared_ptr<Node<T>> node_;
};

/// Builds an op output; records inputs and the backward closure only when
/// grad mode is on and some input participates in the tape.
template <class T>
Tensor<T> make_op_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs,
                         const char* op, std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

/// Recorded operations reachable from a root, in topological order
/// (every node appears after all of its inputs).
template <class T>
class Graph {
 public:
  explicit Graph(const Tensor<T>& root) {
    std::unordered_set<const Node<T>*> seen;
    // iterative post-order DFS
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node<T>* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  const std::vector<Node<T>*>& order() const { return order_; }
  std::size_t size() const { return order_.size(); }

 private:
  std::vector<Node<T>*> order_;
};

/// Keeps large tensor buffers on the heap so they are reused across steps
/// instead of being mapped and faulted in afresh. Process-wide; call once.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

/// Reverse-mode sweep from a scalar root. Leaf grads accumulate.
template <class T>
void backward(const Tensor<T>& root) {
  if (root.size() != 1) {
    throw ShapeError("backward() requires a scalar root, got shape " + to_string(root.shape()));
  }
  if (!root.requires_grad()) return;
  Graph<T> graph(root);
  auto& order = graph.order();
  // interior grads are scratch: allocated on first contribution, released once consumed
  for (auto* n : order) {
    if (n->backward_fn) std::vector<T>().swap(n->grad);
  }
  order.back()->ensure_grad();
  order.back()->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward_fn) continue;
    n->ensure_grad();
    for (auto& in : n->inputs) {
      if (in->requires_grad) in->ensure_grad();
    }
    n->backward_fn(*n);
    std::vector<T>().swap(n->grad);
  }
}

}  // namespace physioattn
