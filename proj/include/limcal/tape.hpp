#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "limcal/matrix.hpp"

namespace limcal {

// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

// Reverse-mode differentiation over a linear record of primitive ops.
//
// Nodes are appended in forward order; backward() walks them in exact
// reverse order and accumulates gradients additively. Only nodes that
// (transitively) depend on a parameter leaf carry gradients, so a tape
// built from constants alone is a plain forward evaluator.
//
// A Tape is single-owner and supports one backward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);
  // Leaves that reference caller-owned storage instead of copying it. The
  // referenced matrix must outlive the tape and stay unmodified meanwhile.
  Var constant_view(const Matrix& value);
  Var parameter_view(const Matrix& value);

  const Matrix& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.value;
  }
  // Zero matrix of the right shape if no gradient reached the node.
  const Matrix& grad(Var v);
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = seed; loss must be 1x1. When `visited` is given,
  // the ids of nodes whose backward rule ran are appended in visit order.
  void backward(Var loss, double seed = 1.0, std::vector<std::size_t>* visited = nullptr);

  // Primitive ops. Shape violations throw ShapeError naming both operands.
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcast a 1 x cols row over every row of a
  Var scale(Var a, double s);
  Var gelu(Var a);
  Var softmax_rows(Var a);
  Var layer_norm(Var x, Var gamma, Var beta, double eps);
  Var slice_cols(Var a, std::size_t start, std::size_t count);
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(Var top, Var bottom);
  Var slice_rows(Var a, std::size_t start, std::size_t count);
  Var gather_rows(Var table, std::span<const std::uint32_t> ids);
  Var mean_rows(Var a);
  // -log softmax(logits)[label]; logits is 1 x C.
  Var cross_entropy(Var logits, std::size_t label);
  // mean over entries of (a - target)^2; target is treated as a constant.
  Var mse(Var a, const Matrix& target);

 private:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  Var push(Matrix value, bool needs_grad, BackwardFn fn);
  Var push_view(const Matrix& value, bool needs_grad);
  Matrix& grad_ref(std::size_t id);
  const Matrix& out_grad(std::size_t id) const { return nodes_[id].grad; }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace limcal
