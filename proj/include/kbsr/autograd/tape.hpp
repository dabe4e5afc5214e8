#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kbsr/core/tensor.hpp"

namespace kbsr {

/// A named trainable tensor with a persistent gradient accumulator. The
/// accumulator collects contributions across samples of a batch; the
/// optimizer consumes and clears it.
template <class Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<Scalar> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.array().setZero(); }
};

template <class Scalar>
class Tape;

/// Handle to a node on a tape; cheap to copy, valid while the tape lives.
template <class Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Tensor<Scalar>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  explicit operator bool() const { return tape != nullptr; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order (so reverse
/// order is a valid topological order for the backward sweep); each node's
/// closure scatters its output gradient to its parents. Constructing the
/// tape with grads disabled records values only — the cheap path for
/// evaluation forwards.
template <class Scalar>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  /// Data leaf: no gradient flows into it.
  Var<Scalar> input(Tensor<Scalar> v) {
    nodes_.push_back({std::move(v), {}, {}, false, {}});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Parameter leaf: gradients flush into p.grad after backward(). Re-using
  /// the same parameter on one tape returns the same node, so contributions
  /// from multiple uses accumulate correctly.
  Var<Scalar> use(Parameter<Scalar>& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return {this, it->second};
    nodes_.push_back({p.value, {}, {}, grad_enabled_, {}});
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_ids_.emplace(&p, id);
    if (grad_enabled_) flush_list_.emplace_back(id, &p);
    return {this, id};
  }

  /// Interior node. `needs_grad` is inferred from the parents; the backward
  /// closure is dropped entirely when no gradient can flow.
  Var<Scalar> make(Tensor<Scalar> value, std::vector<int> parents, Backward backward) {
    bool needs = false;
    if (grad_enabled_)
      for (int p : parents) needs = needs || nodes_[static_cast<size_t>(p)].needs_grad;
    nodes_.push_back({std::move(value), needs ? std::move(parents) : std::vector<int>{},
                      needs ? std::move(backward) : Backward{}, needs, {}});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<Scalar>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  /// Gradient buffer of a node, allocated (zeroed) on first touch.
  Tensor<Scalar>& grad(int id) {
    auto& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<Scalar>(n.value.shape());
    return n.grad;
  }

  /// Reverse sweep from a scalar root. `seed` scales the whole gradient —
  /// e.g. 1/batch_size when accumulating a batch mean across sample tapes.
  void backward(Var<Scalar> root, Scalar seed = Scalar(1)) {
    if (!grad_enabled_) throw std::logic_error("backward on a grad-disabled tape");
    if (root.tape != this || value(root.id).size() != 1)
      throw std::invalid_argument("backward: root must be a scalar on this tape");
    grad(root.id)[0] += seed;
    for (int id = root.id; id >= 0; --id) {
      auto& n = nodes_[static_cast<size_t>(id)];
      if (n.needs_grad && n.backward && !n.grad.empty()) n.backward(*this, id);
    }
    for (auto& [id, p] : flush_list_) {
      auto& g = nodes_[static_cast<size_t>(id)].grad;
      if (!g.empty()) p->grad.array() += g.array();
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    std::vector<int> parents;  // kept alive for the closures' lifetime
    Backward backward;
    bool needs_grad = false;
    Tensor<Scalar> grad;  // empty until touched
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<Parameter<Scalar>*, int> param_ids_;
  std::vector<std::pair<int, Parameter<Scalar>*>> flush_list_;
};

}  // namespace kbsr
