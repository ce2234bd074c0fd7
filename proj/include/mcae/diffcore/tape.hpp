#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "mcae/diffcore/tensor.hpp"

namespace mcae::diffcore {

// A learnable array with a persistent gradient slot of identical shape.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}
  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Tape;

// Handle to a node of a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  int dim(int axis) const { return value().dim(axis); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Records a forward computation and replays it backwards. A tape is built for
// one forward pass and discarded after backprop.
template <typename T>
class Tape {
 public:
  // Receives the node's forward value and its accumulated output gradient.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_value, const Tensor<T>& out_grad)>;

  // With grad_enabled = false parameters enter as constants and no backward
  // closures are kept (inference).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> v) { return add_node(std::move(v), false, nullptr, {}, nullptr); }

  // Leaf whose gradient is tracked on the tape (read it with grad()).
  Var<T> input(Tensor<T> v) { return add_node(std::move(v), grad_enabled_, nullptr, {}, nullptr); }

  // Leaf bound to a parameter; backward() accumulates into p.grad.
  Var<T> param(Parameter<T>& p) { return add_node(Tensor<T>{}, grad_enabled_, &p, {}, nullptr); }

  // Same value as `v` but no gradient flows back through it.
  Var<T> detach(Var<T> v) { return constant(value(v)); }

  Var<T> push(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
    return push(std::move(value), std::vector<Var<T>>(parents), std::move(fn));
  }

  Var<T> push(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) {
      check_owned(p);
      needs = needs || nodes_[p.id].needs_grad;
    }
    if (!needs) fn = nullptr;
    return add_node(std::move(value), needs, nullptr, parents, std::move(fn));
  }

  const Tensor<T>& value(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.param ? n.param->value : n.value;
  }

  bool needs_grad(Var<T> v) const { return nodes_.at(v.id).needs_grad; }

  // Gradient slot of `v` for accumulation during backward, allocated on first
  // use. Returns nullptr when `v` does not participate in differentiation.
  Tensor<T>* grad_slot(Var<T> v) {
    Node& n = nodes_.at(v.id);
    if (!n.needs_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(value(v).shape);
    return &n.grad;
  }

  // Gradient of the last backward() with respect to `v` (zeros if unreached).
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor<T>(value(v).shape);
    return n.grad;
  }

  void backward(Var<T> loss) {
    check_owned(loss);
    if (value(loss).size() != 1) {
      throw UsageError("backprop requires a scalar loss, got shape " + shape_str(value(loss).shape));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>{};
    if (!nodes_[loss.id].needs_grad) return;
    Tensor<T>* seed = grad_slot(loss);
    seed->data[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) {
        // The closure may allocate gradient slots of earlier nodes only, so
        // `n.grad` stays put while it runs.
        n.backward(*this, value(Var<T>{this, i}), n.grad);
      }
      if (n.param) {
        auto& pg = n.param->grad.data;
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad.data[k];
      }
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

  // Piecewise ops (leaky_relu, clamp) fold the branch taken by every element
  // into a running hash when tracking is on. Two forward passes with equal
  // signatures took the same linear pieces everywhere.
  void track_branches(bool on) { track_branches_ = on; }
  bool tracking_branches() const { return track_branches_; }
  void record_branch(std::uint64_t piece) {
    branch_signature_ = (branch_signature_ ^ piece) * 0x100000001b3ULL;
  }
  std::uint64_t branch_signature() const { return branch_signature_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  void check_owned(Var<T> v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
      throw UsageError("variable does not belong to this tape");
    }
  }

  Var<T> add_node(Tensor<T> v, bool needs, Parameter<T>* p, const std::vector<Var<T>>&, BackwardFn fn) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs;
    n.param = p;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  bool track_branches_ = false;
  std::uint64_t branch_signature_ = 0xcbf29ce484222325ULL;
};

}  // namespace mcae::diffcore
