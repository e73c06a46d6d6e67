#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace dunet {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// One node of the computation graph. Holds the forward value and, once
// backward() has run, the accumulated gradient. Leaves are parameters and
// inputs; interior nodes keep a closure that routes grad into the parents.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // lazily allocated, same length as value
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;
  bool requires_grad = false;

  int64_t size() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

// Value-semantic handle to a graph node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var leaf(Shape shape, std::vector<T> data, bool requires_grad) {
    require(numel(shape) == static_cast<int64_t>(data.size()),
            "tensor data length " + std::to_string(data.size()) +
                " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Var(n);
  }

  static Var zeros(const Shape& shape, bool requires_grad = false) {
    return leaf(shape, std::vector<T>(numel(shape), T(0)), requires_grad);
  }

  static Var full(const Shape& shape, T v, bool requires_grad = false) {
    return leaf(shape, std::vector<T>(numel(shape), v), requires_grad);
  }

  static Var scalar(T v) { return leaf({1}, {v}, false); }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return node_->size(); }
  int64_t dim(size_t i) const { return node_->shape[i]; }
  size_t ndim() const { return node_->shape.size(); }
  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  std::shared_ptr<Node<T>> node() const { return node_; }

  T item() const {
    require(size() == 1, "item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an interior node. requires_grad propagates from any parent.
template <typename T>
Var<T> make_op(Shape shape, std::vector<T> value,
               std::vector<std::shared_ptr<Node<T>>> parents,
               std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Var<T>(n);
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate (+=) into
// leaves; call zero_grad on parameters between steps.
template <typename T>
void backward(const Var<T>& loss) {
  require(loss.size() == 1, "backward requires a scalar loss, got " +
                                shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order topo sort.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx].get();
      ++idx;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) {
      for (auto& p : n->parents)
        if (p->requires_grad) p->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

// Seeded normal initializer, one stream per call site.
template <typename T>
std::vector<T> randn_vec(int64_t n, uint64_t seed, T stddev = T(1),
                         T mean = T(0)) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = mean + stddev * static_cast<T>(d(rng));
  return v;
}

}  // namespace dunet
