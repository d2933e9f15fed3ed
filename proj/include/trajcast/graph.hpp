#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "trajcast/tensor.hpp"

namespace trajcast {

template <typename T>
class Graph;

// Handle to a value living on a Graph's tape.
template <typename T>
struct Var {
  Graph<T>* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor<T>& val() const { return g->val(id); }
  const Tensor<T>& grad() const { return g->grad(id); }
  const std::vector<int>& shape() const { return g->val(id).shape; }
};

// Reverse-mode tape. Nodes are recorded in execution order, which is a
// topological order by construction; backward() walks them once in reverse.
template <typename T>
class Graph {
 public:
  struct Node {
    const char* op;
    std::vector<int> inputs;
    int output;
    std::function<void(Graph&)> backward;
  };

  explicit Graph(bool grad_enabled = true, bool check_finite = true)
      : grad_enabled_(grad_enabled), check_finite_(check_finite) {}

  bool grad_enabled() const { return grad_enabled_; }
  bool check_finite() const { return check_finite_; }

  Var<T> leaf(Tensor<T> t) {
    bool rg = grad_enabled_ && t.requires_grad;
    int id = push_value(std::move(t), rg);
    return {this, id};
  }

  Var<T> constant(Tensor<T> t) {
    t.requires_grad = false;
    int id = push_value(std::move(t), false);
    return {this, id};
  }

  int push_value(Tensor<T> v, bool needs_grad) {
    vals_.push_back(std::move(v));
    needs_grad_.push_back(needs_grad ? 1 : 0);
    grads_.emplace_back();
    return static_cast<int>(vals_.size()) - 1;
  }

  // Records the op iff gradients are enabled and some input needs them.
  // The backward closure is attached afterwards via set_backward().
  Var<T> emit(const char* op, std::vector<int> inputs, Tensor<T> out,
              std::function<void(Graph&)> backward) {
    if (check_finite_ && !out.all_finite())
      throw NumericError(std::string("non-finite values produced by op '") + op + "'");
    bool ng = false;
    if (grad_enabled_) {
      for (int id : inputs)
        if (needs_grad_[static_cast<std::size_t>(id)]) { ng = true; break; }
    }
    int out_id = push_value(std::move(out), ng);
    if (ng) nodes_.push_back(Node{op, std::move(inputs), out_id, std::move(backward)});
    return {this, out_id};
  }

  void set_backward(int out_id, std::function<void(Graph&)> backward) {
    if (nodes_.empty() || nodes_.back().output != out_id)
      throw ConsistencyError("set_backward: output is not the newest node");
    nodes_.back().backward = std::move(backward);
  }

  Tensor<T>& val(int id) { return vals_[static_cast<std::size_t>(id)]; }
  const Tensor<T>& val(int id) const { return vals_[static_cast<std::size_t>(id)]; }

  bool needs_grad(int id) const { return needs_grad_[static_cast<std::size_t>(id)] != 0; }

  // Gradient accumulator for a value, allocated on first touch.
  Tensor<T>& grad(int id) {
    auto& gt = grads_[static_cast<std::size_t>(id)];
    if (gt.data.empty()) gt = Tensor<T>::zeros(vals_[static_cast<std::size_t>(id)].shape);
    return gt;
  }

  bool has_grad(int id) const { return !grads_[static_cast<std::size_t>(id)].data.empty(); }

  // root must be scalar. Each node's backward runs exactly once.
  void backward(const Var<T>& root) {
    if (!grad_enabled_) throw ConsistencyError("backward() on a no-grad graph");
    if (val(root.id).numel() != 1)
      throw DimensionError("backward root must be scalar, got shape " +
                           shape_str(val(root.id).shape));
    grad(root.id).data[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!has_grad(it->output)) continue;  // no gradient flowed here
      it->backward(*this);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  bool grad_enabled_;
  bool check_finite_;
  std::vector<Tensor<T>> vals_;
  std::vector<Tensor<T>> grads_;
  std::vector<std::uint8_t> needs_grad_;
  std::vector<Node> nodes_;
};

}  // namespace trajcast
