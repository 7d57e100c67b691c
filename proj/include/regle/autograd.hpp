#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "regle/errors.hpp"
#include "regle/tensor.hpp"

namespace regle {

/// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = 0;
};

/// Reverse-mode gradient tape. Every op appends one node holding its output
/// value and, when any input needs a gradient, a closure that pushes the
/// output gradient back into the inputs. Nodes are topologically ordered by
/// construction, so backward() is a single reverse sweep.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Owned leaf (inputs, noise, constants).
  Var leaf(Tensor<T> value, bool requires_grad = false, std::string name = {}) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    n.name = std::move(name);
    return push(std::move(n));
  }

  /// Non-owning leaf for parameters; the referent must outlive the tape and
  /// must not change while the tape is alive.
  Var view(const Tensor<T>& value, bool requires_grad, std::string name = {}) {
    Node n;
    n.external = &value;
    n.requires_grad = requires_grad;
    n.name = std::move(name);
    return push(std::move(n));
  }

  /// Records an op output. The backward closure is dropped when no parent
  /// requires a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn backward) {
    Node n;
    n.owned = std::move(value);
    for (Var p : parents) n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.owned;
  }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const std::string& name(Var v) const { return nodes_.at(v.id).name; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer for v, zero-initialized on first access. Ops accumulate
  /// into it with +=.
  std::span<T> grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor<T>(value(v).shape());
    return n.grad.data();
  }

  /// Gradient of the last backward() w.r.t. v; zeros when v was unreachable.
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor<T>(value(v).shape());
    return n.grad;
  }

  /// Moves the gradient out of the tape (zeros when unreachable).
  Tensor<T> take_grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor<T>(value(v).shape());
    return std::move(n.grad);
  }

  void backward(Var loss) {
    if (nodes_.empty()) throw UsageError("backward on an empty tape");
    if (value(loss).size() != 1) {
      throw UsageError("backward needs a scalar loss, got shape " + shape_string(shape(loss)));
    }
    for (Node& n : nodes_) n.grad = Tensor<T>();
    grad_buffer(loss)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      if (observer_) observer_(static_cast<std::uint32_t>(i));
      n.backward(*this, n.grad);
    }
  }

  /// Called with the node id each time backward() replays an op.
  void set_backward_observer(std::function<void(std::uint32_t)> fn) { observer_ = std::move(fn); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
    std::string name;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  std::function<void(std::uint32_t)> observer_;
};

}  // namespace regle
