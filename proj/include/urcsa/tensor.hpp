#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "urcsa/error.hpp"

namespace urcsa {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  // Empty until the first accumulation reaches this tensor.
  std::vector<T> grad;
  bool requires_grad = false;

  // Graph linkage. A tensor with a backward function is an op output; its
  // parents are the op inputs. The function reads `grad` of this tensor and
  // accumulates into the parents.
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;
  const char* op = "leaf";

  bool is_leaf() const { return !backward_fn; }

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// Running hash of data-dependent branch choices (ReLU side, max winner).
// Only updated while `active`; the gradient checker uses it to spot
// perturbations that move across a kink.
struct BranchTrace {
  bool active = false;
  std::uint64_t hash = 0xcbf29ce484222325ull;
  void mix(std::uint64_t v) { hash = (hash ^ v) * 0x100000001b3ull; }
};

inline BranchTrace& branch_trace() {
  thread_local BranchTrace trace;
  return trace;
}

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

// Dense row-major tensor handle. Copies share storage; use clone() for a deep
// copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    impl_->data.assign(urcsa::numel(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    if (urcsa::numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + urcsa::to_string(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  // Direct write access. Only valid for leaves between graph executions
  // (initialisation, optimizer updates).
  std::span<T> mutable_data() { return impl_->data; }

  T item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + urcsa::to_string(shape()));
    return impl_->data[0];
  }
  T operator[](std::size_t i) const { return impl_->data[i]; }
  T at(std::size_t c, std::size_t h, std::size_t w) const {
    return impl_->data[(c * dim(1) + h) * dim(2) + w];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }
  void clear_grad() { impl_->grad.clear(); }

  bool is_leaf() const { return impl_->is_leaf(); }
  const char* op_name() const { return impl_->op; }

  // Deep copy of the values, detached from any graph.
  Tensor clone() const { return Tensor(shape(), impl_->data, false); }
  Tensor detach() const { return clone(); }

  bool shares_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Topologically ordered view of the graph that produced a root tensor.
// Inputs precede the ops that consume them; the root is last.
template <typename T>
struct Graph {
  std::vector<detail::TensorImpl<T>*> order;

  static Graph trace(const Tensor<T>& root) {
    Graph g;
    if (!root.defined()) return g;
    std::unordered_set<const detail::TensorImpl<T>*> seen;
    // Iterative post-order DFS; graphs from deep stacks overflow recursion.
    std::vector<std::pair<detail::TensorImpl<T>*, std::size_t>> stack;
    stack.emplace_back(root.impl().get(), 0);
    seen.insert(root.impl().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::TensorImpl<T>* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        g.order.push_back(node);
        stack.pop_back();
      }
    }
    return g;
  }
};

// Reverse-mode sweep from a single-element loss. Leaf gradients accumulate
// across calls; intermediate gradients are recomputed each call.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward() requires a single-element loss, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;
  Graph<T> graph = Graph<T>::trace(loss);
  for (auto* node : graph.order) {
    if (node->is_leaf()) {
      node->ensure_grad();
    } else {
      node->grad.assign(node->data.size(), T(0));
    }
  }
  loss.impl()->grad[0] += T(1);
  for (auto it = graph.order.rbegin(); it != graph.order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
}

namespace detail {

// Builds an op output. Graph linkage is recorded only when grad mode is on and
// at least one input requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<TensorImpl<T>>> inputs, const char* op,
                      std::function<void(TensorImpl<T>&)> backward_fn) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->op = op;
  bool needs = false;
  if (grad_mode()) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    impl->requires_grad = true;
    impl->parents = std::move(inputs);
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(impl));
}

}  // namespace detail

}  // namespace urcsa
