#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "common.hpp"

namespace sfpn {

// Thread-local autograd switch. Inside a NoGradGuard ops compute values
// only and record no graph edges.
class GradMode {
 public:
  static bool enabled() { return flag_(); }
  static void set(bool v) { flag_() = v; }

 private:
  static bool& flag_() {
    thread_local bool f = true;
    return f;
  }
};

struct NoGradGuard {
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  bool prev_;
};

template <class T>
struct TensorNode {
  Shape4 shape{1, 1, 1, 1};
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this->grad, accumulates into parents' grads.
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Value-semantic handle to a node of the autograd graph. A tensor's value
// is immutable once computed; only leaf tensors (parameters) are mutated,
// and only by the optimizer between episodes.
template <class T>
class Tensor {
 public:
  Tensor() : node_(std::make_shared<TensorNode<T>>()) {
    node_->value.assign(1, T(0));
  }
  explicit Tensor(std::shared_ptr<TensorNode<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape4 s, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = s;
    n->value.assign(size_t(numel(s)), T(0));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor from_data(Shape4 s, std::vector<T> data,
                          bool requires_grad = false) {
    if (std::int64_t(data.size()) != numel(s))
      throw ArgumentError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(s));
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = s;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor scalar(T v) { return from_data({1, 1, 1, 1}, {v}); }

  const Shape4& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[size_t(i)]; }
  std::int64_t size() const { return numel(node_->shape); }
  const std::vector<T>& data() const { return node_->value; }
  std::vector<T>& mutable_data() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }
  TensorNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }

  T at(int n, int c, int h, int w) const {
    const auto& s = node_->shape;
    return node_->value[((size_t(n) * s[1] + c) * s[2] + h) * s[3] + w];
  }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

template <class T>
inline void check_finite(const std::vector<T>& v, const char* what) {
  for (const T& x : v)
    if (!std::isfinite(x))
      throw NumericError(std::string("non-finite value produced by ") + what);
}

// Builds the result node for an op: value is checked finite, graph edges are
// recorded only when grad mode is on and some parent is tracked.
template <class T>
Tensor<T> make_op_result(Shape4 shape, std::vector<T> value,
                         std::vector<Tensor<T>> parents,
                         std::function<void(TensorNode<T>&)> backward_fn,
                         const char* op_name) {
  check_finite(value, op_name);
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = shape;
  n->value = std::move(value);
  if (GradMode::enabled()) {
    bool tracked = false;
    for (const auto& p : parents) tracked = tracked || p.requires_grad();
    if (tracked) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (const auto& p : parents) n->parents.push_back(p.node_ptr());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor<T>(std::move(n));
}

// ---- elementwise ops ----

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ArgumentError("add: shape mismatch " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op_result<T>(
      a.shape(), std::move(out), {a, b},
      [an, bn](TensorNode<T>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            bn->grad[i] += self.grad[i];
        }
      },
      "add");
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  auto an = a.node_ptr();
  return make_op_result<T>(
      a.shape(), std::move(out), {a},
      [an](TensorNode<T>& self) {
        an->ensure_grad();
        // relu'(0) = 0
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (an->value[i] > T(0)) an->grad[i] += self.grad[i];
      },
      "relu");
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(a.data()[i]);
  auto an = a.node_ptr();
  auto vals = out;  // keep outputs for the backward pass
  return make_op_result<T>(
      a.shape(), std::move(out), {a},
      [an, vals = std::move(vals)](TensorNode<T>& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          an->grad[i] += self.grad[i] * vals[i] * (T(1) - vals[i]);
      },
      "sigmoid");
}

template <class T>
Tensor<T> exp_op(const Tensor<T>& a) {
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  auto an = a.node_ptr();
  auto vals = out;
  return make_op_result<T>(
      a.shape(), std::move(out), {a},
      [an, vals = std::move(vals)](TensorNode<T>& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          an->grad[i] += self.grad[i] * vals[i];
      },
      "exp");
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  auto an = a.node_ptr();
  return make_op_result<T>(
      a.shape(), std::move(out), {a},
      [an, s](TensorNode<T>& self) {
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          an->grad[i] += self.grad[i] * s;
      },
      "mul_scalar");
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (const T& x : a.data()) acc += x;
  auto an = a.node_ptr();
  return make_op_result<T>(
      {1, 1, 1, 1}, {acc}, {a},
      [an](TensorNode<T>& self) {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i)
          an->grad[i] += self.grad[0];
      },
      "sum");
}

// ---- backward ----

// Reverse-mode sweep from a scalar loss. Gradients accumulate; calling
// twice without zeroing accumulates twice.
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1)
    throw ArgumentError("backward: loss must be a 1x1x1x1 scalar, got " +
                        shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Topological order by iterative post-order DFS over parents.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode<T>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second)
        stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
  for (TensorNode<T>* n : order)
    check_finite(n->grad, "backward");
}

}  // namespace sfpn
