#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "msv/nn/tensor.hpp"

namespace msv::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so walking
/// them backwards is a valid topological order. One tape per forward pass;
/// tapes are not shared between threads.
template <typename T>
class Tape {
 public:
  Var Constant(Tensor<T> value) { return Push(std::move(value), false, nullptr); }

  /// A differentiable input whose gradient is read back with grad().
  Var Leaf(Tensor<T> value) { return Push(std::move(value), true, nullptr); }

  /// Records the parameter's current value; Backward() accumulates into
  /// param.grad.
  Var Param(Parameter<T> &param) {
    Var v = Push(param.value, true, nullptr);
    bindings_.push_back({v.id, &param});
    return v;
  }

  Var Push(Tensor<T> value, bool requires_grad, std::function<void()> backward) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, std::move(backward)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T> &value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  bool requires_grad(Var v) const { return v.valid() && nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  /// Gradient buffer of v, allocated (zeroed) on first access.
  Tensor<T> &grad(Var v) {
    Node &n = nodes_.at(static_cast<std::size_t>(v.id));
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  bool has_grad(Var v) const {
    const Node &n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.grad.shape() == n.value.shape() && !n.grad.empty();
  }

  void Backward(Var root) {
    if (value(root).size() != 1) Fail(ErrorKind::kShapeMismatch, "Backward() needs a scalar root");
    grad(root).Fill(T(1));
    for (int id = root.id; id >= 0; --id) {
      Node &n = nodes_[static_cast<std::size_t>(id)];
      if (n.requires_grad && n.backward && has_grad(Var{id})) n.backward();
    }
    for (auto &[id, param] : bindings_) {
      if (!has_grad(Var{id})) continue;
      if (param->grad.shape() != param->value.shape()) param->grad = Tensor<T>(param->value.shape());
      const Tensor<T> &g = nodes_[static_cast<std::size_t>(id)].grad;
      for (std::size_t i = 0; i < g.size(); ++i) param->grad[i] += g[i];
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Parameter<T> *>> bindings_;
};

}  // namespace msv::nn
