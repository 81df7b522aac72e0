#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fpforge/error.hpp"
#include "fpforge/tensor.hpp"

namespace fpforge {

template <class T>
class Tape;

/// Handle to a node recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in execution order, so every node's
/// inputs have smaller ids and a descending sweep is a reverse topological
/// order. Recorded values are never modified.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input that never receives a gradient.
  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, nullptr); }

  /// Leaf whose gradient is written into `p.grad()` by backward().
  /// Repeated calls with the same tensor return the same leaf.
  Var<T> param(Tensor<T>& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var<T>{this, it->second};
    const bool track = grad_enabled_ && p.requires_grad();
    auto v = push(Tensor<T>(p.shape(), p.storage()), track, nullptr, track ? &p : nullptr);
    param_ids_.emplace(&p, v.id);
    return v;
  }

  /// Leaf that receives a gradient readable through grad().
  Var<T> variable(Tensor<T> value) { return push(std::move(value), grad_enabled_, nullptr, nullptr); }

  /// Append an op result. `fn` runs during backward only if the node needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_) {
      for (const auto& in : inputs) {
        check_owner(in);
        needs = needs || nodes_[in.id].needs_grad;
      }
    }
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr, nullptr);
  }

  const Tensor<T>& value(Var<T> v) const {
    check_owner(v);
    return nodes_[v.id].value;
  }

  bool needs_grad(Var<T> v) const { return nodes_[v.id].needs_grad; }

  /// Incoming gradient of node `id`; valid inside a backward rule.
  std::span<const T> grad_of(std::size_t id) const { return nodes_[id].grad; }

  /// Gradient accumulator of an input; allocated on first use.
  std::span<T> accum(Var<T> v) {
    auto& n = nodes_[v.id];
    if (n.grad.empty()) n.grad.assign(n.value.numel(), T(0));
    return n.grad;
  }

  /// Gradient of a node after backward(); zeros if nothing flowed into it.
  std::vector<T> grad(Var<T> v) const {
    const auto& n = nodes_[v.id];
    if (n.grad.empty()) return std::vector<T>(n.value.numel(), T(0));
    return n.grad;
  }

  /// Backpropagate from a scalar root. Clears all previous gradients first,
  /// so calling it twice yields the same result. Parameter gradients are
  /// overwritten, not accumulated.
  void backward(Var<T> root) {
    check_owner(root);
    if (nodes_[root.id].value.numel() != 1) {
      throw ValidationError("backward root must be a scalar, got shape " +
                            shape_str(nodes_[root.id].value.shape()));
    }
    for (auto& n : nodes_) n.grad.clear();
    visit_log_.clear();
    if (!nodes_[root.id].needs_grad) {
      write_back();
      return;
    }
    nodes_[root.id].grad.assign(1, T(1));
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
      visit_log_.push_back(i);
      n.backward(*this, i);
    }
    write_back();
  }

  /// Node ids whose backward rule ran during the last backward(), in order.
  const std::vector<std::size_t>& visit_log() const { return visit_log_; }

  std::size_t size() const { return nodes_.size(); }

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Tensor<T> value;
    bool needs_grad = false;
    BackwardFn backward;
    Tensor<T>* param = nullptr;
    std::vector<T> grad;
  };

  Var<T> push(Tensor<T> value, bool needs, BackwardFn fn, Tensor<T>* param) {
    nodes_.push_back(Node{std::move(value), needs, std::move(fn), param, {}});
    return Var<T>{this, nodes_.size() - 1};
  }

  void check_owner(Var<T> v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw ValidationError("variable does not belong to this tape");
  }

  void write_back() {
    for (auto& n : nodes_) {
      if (n.param == nullptr) continue;
      if (n.grad.empty()) {
        n.param->zero_grad();
      } else {
        n.param->set_grad(n.grad);
      }
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> param_ids_;
  std::vector<std::size_t> visit_log_;
  bool grad_enabled_ = true;
};

}  // namespace fpforge
