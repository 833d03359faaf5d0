#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "wnet/tensor.hpp"

namespace wnet {

template <typename T>
struct Node;

/// Shared handle to a graph node. Parameters are nodes with requires_grad
/// set and a unique name; intermediates are created by ops and die with
/// the last handle to the forward result.
template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// One vertex of the (dynamically built) compute graph.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // same dims as value; allocated on first use
  bool requires_grad = false;
  std::string name;  // non-empty for parameters
  std::vector<NodePtr<T>> inputs;
  std::function<void(Node<T>&)> backward_fn;  // reads this->grad, accumulates into inputs

  /// Gradient buffer, allocating zeros on first access.
  Tensor<T>& grad_ref() {
    if (grad.dims() != value.dims()) grad = Tensor<T>(value.dims(), T(0));
    return grad;
  }

  bool has_grad() const { return grad.dims() == value.dims(); }

  void zero_grad() {
    if (has_grad()) grad.fill(T(0));
  }
};

namespace autograd {

bool grad_enabled();
void set_grad_enabled(bool on);

/// RAII guard that disables graph recording (inference mode).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace autograd

/// Leaf holding a constant (inputs, targets). Does not receive gradients.
template <typename T>
NodePtr<T> make_constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = false;
  return node;
}

/// Leaf that accumulates gradients across backward passes until an
/// explicit zero_grad. Used for model parameters and grad-check inputs.
template <typename T>
NodePtr<T> make_parameter(Tensor<T> value, std::string name = {}) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->name = std::move(name);
  node->grad_ref();  // parameter grads are allocated up front
  return node;
}

/// Op output node. Records inputs and the backward closure only when grad
/// mode is on and at least one input requires grad.
template <typename T>
NodePtr<T> make_op_node(Tensor<T> value, std::vector<NodePtr<T>> inputs,
                        std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (autograd::grad_enabled()) {
    for (const auto& in : inputs) {
      if (in && in->requires_grad) {
        needs = true;
        break;
      }
    }
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return node;
}

/// Runs reverse-mode accumulation from root. seed must match root dims.
/// Gradients ADD into existing buffers; call zero_grad between steps.
template <typename T>
void backward(const NodePtr<T>& root, const Tensor<T>& seed) {
  if (!root) throw Error("backward: null root");
  if (seed.dims() != root->value.dims()) {
    throw DimError("backward: seed dims " + seed.dims().str() +
                   " do not match root dims " + root->value.dims().str());
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS; the visit order is a pure function of the
  // graph, so repeated runs are bit-identical.
  std::vector<Node<T>*> topo;
  std::unordered_set<Node<T>*> visited;
  struct Frame {
    Node<T>* node;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_input < f.node->inputs.size()) {
      Node<T>* in = f.node->inputs[f.next_input++].get();
      if (in && in->requires_grad && !visited.count(in)) {
        visited.insert(in);
        stack.push_back({in, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  {
    Tensor<T>& g = root->grad_ref();
    const T* s = seed.data();
    T* d = g.data();
    for (std::int64_t i = 0; i < seed.numel(); ++i) d[i] += s[i];
  }

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

/// Convenience for scalar (1x1x1x1) roots: seed with 1.
template <typename T>
void backward(const NodePtr<T>& root) {
  if (!root) throw Error("backward: null root");
  if (root->value.numel() != 1) {
    throw DimError("backward without seed requires a scalar root, got " +
                   root->value.dims().str());
  }
  Tensor<T> seed(root->value.dims(), T(1));
  backward(root, seed);
}

}  // namespace wnet
