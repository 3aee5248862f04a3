#pragma once

// Minimal reverse-mode autodiff on dense NCHW tensors. Every op builds a
// node holding its value plus a closure that scatters gradient into its
// parents; Var is a cheap shared handle. Scalar type is a template
// parameter: float for training/inference, double for the finite-difference
// gradient checks in the test suite.

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace plseg {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

// Thrown when a caller breaks an operation precondition.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown for invalid configurations (bad shapes at build time, K=0, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

#define PLSEG_CONTRACT(cond, msg) \
  do {                            \
    if (!(cond)) throw ::plseg::ContractError(msg); \
  } while (0)

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> val;
  std::vector<T> grad;  // allocated on first use
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), T(0));
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static Var leaf(Shape shape, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->val.assign(shape_numel(n->shape), T(0));
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  static Var constant(Shape shape, std::vector<T> values) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    if (int64_t(values.size()) != shape_numel(n->shape))
      throw ConfigError("constant: value count does not match shape");
    n->val = std::move(values);
    return Var(std::move(n));
  }

  static Var scalar(T v, bool requires_grad = false) {
    Var r = leaf({1}, requires_grad);
    r.val()[0] = v;
    return r;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t numel() const { return int64_t(n_->val.size()); }
  std::vector<T>& val() { return n_->val; }
  const std::vector<T>& val() const { return n_->val; }
  const std::vector<T>& grad() const { return n_->grad; }
  std::vector<T>& ensure_grad() { return n_->ensure_grad(); }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  std::shared_ptr<Node<T>> node() const { return n_; }

  T item() const {
    if (numel() != 1) throw ConfigError("item() on non-scalar " + shape_str(shape()));
    return n_->val[0];
  }

  void zero_grad() {
    if (n_ && !n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  // Reverse pass from a scalar root.
  void backward() const {
    if (numel() != 1) throw ConfigError("backward() requires a scalar root");
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    topo(n_.get(), seen, order);
    n_->ensure_grad();
    n_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* node = *it;
      if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
  }

 private:
  static void topo(Node<T>* n, std::unordered_set<Node<T>*>& seen,
                   std::vector<Node<T>*>& order) {
    if (!n || !n->requires_grad || seen.count(n)) return;
    seen.insert(n);
    // explicit stack: graphs get deep through the decoder chain
    struct Frame {
      Node<T>* node;
      size_t next_parent;
    };
    std::vector<Frame> stack{{n, 0}};
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        Node<T>* p = f.node->parents[f.next_parent++].get();
        if (p && p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node<T>> n_;
};

// Shared helper for op construction: result tracks gradient only when grad
// mode is on and at least one parent requires it.
template <class T>
Var<T> make_result(Shape shape, std::vector<T> val,
                   std::vector<std::shared_ptr<Node<T>>> parents,
                   std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->val = std::move(val);
  bool track = grad_mode();
  if (track) {
    track = false;
    for (auto& p : parents)
      if (p && p->requires_grad) {
        track = true;
        break;
      }
  }
  if (track) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return Var<T>(std::move(n));
}

}  // namespace plseg
