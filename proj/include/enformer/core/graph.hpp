#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "enformer/core/tensor.hpp"

namespace enformer {

// Tape-based reverse mode. Every op builds a Node whose backward_fn reads
// this node's grad and accumulates into the parents' grads. Single-threaded,
// fixed accumulation order: backward passes are bit-reproducible.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on demand, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.empty() && value.numel() > 0) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> v, bool requires_grad = false) : n_(std::make_shared<Node<T>>()) {
    n_->value = std::move(v);
    n_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor<T>& value() const { return n_->value; }
  Tensor<T>& mutable_value() { return n_->value; }  // leaves only (optimizer, gradcheck)
  Tensor<T>& grad() { return n_->ensure_grad(); }
  const Tensor<T>& grad() const { return n_->grad; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  std::shared_ptr<Node<T>> node() const { return n_; }

  void zero_grad() {
    if (n_ && !n_->grad.empty()) n_->grad.fill(T{});
  }

  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var v;
    v.n_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> n_;
};

template <typename T>
Var<T> make_op_node(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
                    std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (auto& p : parents)
    if (p && p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Var<T>::from_node(std::move(n));
}

// Reverse topological sweep from root. Root must be a scalar (numel 1)
// unless a seed gradient is supplied.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
  if (!root.defined()) throw std::invalid_argument("backward: undefined root");
  auto r = root.node();
  if (!r->requires_grad) throw std::invalid_argument("backward: root does not require grad");
  if (!seed && r->value.numel() != 1)
    throw std::invalid_argument("backward: non-scalar root needs an explicit seed");

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(r.get(), 0);
  seen.insert(r.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx].get();
      ++idx;
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto& g = r->ensure_grad();
  if (seed) {
    check_same_shape(g, *seed, "backward seed");
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += (*seed)[i];
  } else {
    g[0] += T(1);
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) {
      for (auto& p : n->parents)
        if (p && p->requires_grad) p->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

}  // namespace enformer
