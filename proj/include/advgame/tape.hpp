#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advgame/error.hpp"
#include "advgame/tensor.hpp"

namespace advgame {

/// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = 0;
};

/// Reverse-mode differentiation over a Wengert list.
///
/// Every operation is evaluated eagerly and appended to the tape. grad()
/// walks the list backwards and expresses each vector-Jacobian product with
/// the same recorded operations, so a gradient is itself a tape value that
/// can be differentiated again (double backprop). A tape is single-use and
/// must not be shared between threads.
class Tape {
 public:
  enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Affine,
    AddRow,
    ColSum,
    RowSum,
    BroadcastRows,
    BroadcastCols,
    ScaleBy,
    SumAll,
    Relu,
    Tanh,
    Softmax,
    SoftmaxCrossEntropy,
    Clip,
    ConcatCols,
    SliceCols,
    PadCols,
    Custom,
  };

  /// Eager vector-Jacobian product for a Custom op: upstream gradient in,
  /// one gradient per input out. Custom ops are first-order only.
  using CustomVjp = std::function<std::vector<Tensor>(const Tensor& upstream)>;
  using CustomForward = std::function<Tensor(std::span<const Tensor* const> inputs)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var leaf(Tensor value, bool requires_grad = true) {
    require_finite(value, "leaf");
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    return push(std::move(n));
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b) { return binary(Op::MatMul, a, b); }
  Var transpose(Var a) { return unary(Op::Transpose, a); }
  Var add(Var a, Var b) { return binary(Op::Add, a, b); }
  Var sub(Var a, Var b) { return binary(Op::Sub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::Mul, a, b); }
  Var affine(Var a, double alpha, double beta) {
    Node n = make(Op::Affine, {a});
    n.p0 = alpha;
    n.p1 = beta;
    return finish(std::move(n));
  }
  Var scale(Var a, double alpha) { return affine(a, alpha, 0.0); }
  /// a[n x m] plus a bias row b[1 x m].
  Var add_row(Var a, Var b) { return binary(Op::AddRow, a, b); }
  Var col_sum(Var a) { return unary(Op::ColSum, a); }
  Var row_sum(Var a) { return unary(Op::RowSum, a); }
  Var broadcast_rows(Var a, std::size_t n) {
    Node node = make(Op::BroadcastRows, {a});
    node.k0 = n;
    return finish(std::move(node));
  }
  Var broadcast_cols(Var a, std::size_t m) {
    Node node = make(Op::BroadcastCols, {a});
    node.k0 = m;
    return finish(std::move(node));
  }
  /// a times the 1x1 value s.
  Var scale_by(Var a, Var s) { return binary(Op::ScaleBy, a, s); }
  Var sum_all(Var a) { return unary(Op::SumAll, a); }
  Var relu(Var a) { return unary(Op::Relu, a); }
  Var tanh(Var a) { return unary(Op::Tanh, a); }
  Var softmax(Var a) { return unary(Op::Softmax, a); }
  Var clip(Var a, double lo, double hi) {
    Node n = make(Op::Clip, {a});
    n.p0 = lo;
    n.p1 = hi;
    return finish(std::move(n));
  }
  Var concat_cols(Var a, Var b) { return binary(Op::ConcatCols, a, b); }
  Var slice_cols(Var a, std::size_t offset, std::size_t width) {
    Node n = make(Op::SliceCols, {a});
    n.k0 = offset;
    n.k1 = width;
    return finish(std::move(n));
  }
  Var pad_cols(Var a, std::size_t offset, std::size_t total) {
    Node n = make(Op::PadCols, {a});
    n.k0 = offset;
    n.k1 = total;
    return finish(std::move(n));
  }

  /// Softmax cross-entropy of logits[B x C] against labels, reduced to 1x1.
  /// `mean` divides by B; otherwise the per-example losses are summed.
  Var softmax_cross_entropy(Var logits, std::span<const int> labels, bool mean = true) {
    const Tensor& z = value(logits);
    if (labels.size() != z.rows()) {
      throw DimensionError("cross entropy: " + std::to_string(labels.size()) + " labels for " +
                           std::to_string(z.rows()) + " rows");
    }
    Node n = make_unevaluated(Op::SoftmaxCrossEntropy, {logits});
    n.labels = std::make_shared<const std::vector<int>>(labels.begin(), labels.end());
    n.onehot = std::make_shared<const Tensor>(kernels::one_hot(labels, z.cols()));
    n.p0 = mean ? 1.0 / static_cast<double>(z.rows()) : 1.0;
    n.value = evaluate(n);
    require_finite(n.value, "softmax_cross_entropy");
    return push(std::move(n));
  }

  /// Records an op whose backward pass is an eager callback. Gradients
  /// through it are values only; grad(..., create_graph=true) throws
  /// SecondOrderUnsupported when it reaches one.
  Var custom(std::string name, std::vector<Var> inputs, CustomForward forward, CustomVjp vjp) {
    Node n = make_unevaluated(Op::Custom, inputs);
    n.custom = std::make_shared<CustomOp>(CustomOp{std::move(name), std::move(forward), std::move(vjp)});
    n.value = evaluate(n);
    require_finite(n.value, n.custom->name.c_str());
    return push(std::move(n));
  }

  /// Gradients of the scalar `output` with respect to each of `wrt`.
  ///
  /// The backward pass is recorded on this tape. With create_graph the
  /// returned values are differentiable functions of every leaf that
  /// requires grad; without it they are intended to be read as values.
  /// Inputs the output does not depend on receive zero tensors.
  std::vector<Var> grad(Var output, std::span<const Var> wrt, bool create_graph = false) {
    if (value(output).size() != 1) {
      throw DimensionError("grad: output must be a single value, got shape " +
                           shape_string(value(output).shape()));
    }
    const std::size_t limit = output.id + 1;
    std::vector<std::optional<Var>> adjoint(limit);
    adjoint[output.id] = constant(Tensor::scalar(1.0));

    for (std::size_t i = limit; i-- > 0;) {
      if (!adjoint[i] || !nodes_[i].requires_grad || nodes_[i].op == Op::Leaf) continue;
      backward(static_cast<std::uint32_t>(i), *adjoint[i], adjoint, create_graph);
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (Var w : wrt) {
      if (w.id < limit && adjoint[w.id]) {
        out.push_back(*adjoint[w.id]);
      } else {
        out.push_back(constant(Tensor(value(w).shape())));
      }
    }
    return out;
  }

  std::vector<Tensor> grad_values(Var output, std::span<const Var> wrt) {
    std::vector<Tensor> out;
    for (Var g : grad(output, wrt, false)) out.push_back(value(g));
    return out;
  }

  /// Re-evaluates every recorded op from its inputs and reports whether
  /// each stored value is reproduced bit-for-bit.
  bool replay() const {
    for (const Node& n : nodes_) {
      if (n.op == Op::Leaf) continue;
      if (!bit_equal(evaluate(n), n.value)) return false;
    }
    return true;
  }

 private:
  struct CustomOp {
    std::string name;
    CustomForward forward;
    CustomVjp vjp;
  };

  struct Node {
    Op op = Op::Leaf;
    std::uint8_t arity = 0;
    std::array<std::uint32_t, 2> in{};
    std::vector<std::uint32_t> extra_inputs;  // Custom ops only
    bool requires_grad = false;
    double p0 = 0.0, p1 = 0.0;
    std::size_t k0 = 0, k1 = 0;
    std::shared_ptr<const std::vector<int>> labels;
    std::shared_ptr<const Tensor> onehot;
    std::shared_ptr<const CustomOp> custom;
    Tensor value;
  };

  Var push(Node n) {
    if (nodes_.size() >= UINT32_MAX) throw Error("tape is full");
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Node make_unevaluated(Op op, std::initializer_list<Var> inputs) {
    return make_unevaluated(op, std::vector<Var>(inputs));
  }
  Node make_unevaluated(Op op, const std::vector<Var>& inputs) {
    Node n;
    n.op = op;
    for (Var v : inputs) {
      if (v.id >= nodes_.size()) throw Error("tape: variable from another tape");
      n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    }
    if (op == Op::Custom) {
      for (Var v : inputs) n.extra_inputs.push_back(v.id);
    } else {
      n.arity = static_cast<std::uint8_t>(inputs.size());
      for (std::size_t i = 0; i < inputs.size(); ++i) n.in[i] = inputs[i].id;
    }
    return n;
  }
  Node make(Op op, std::initializer_list<Var> inputs) { return make_unevaluated(op, inputs); }

  Var finish(Node n) {
    n.value = evaluate(n);
    require_finite(n.value, op_name(n.op));
    return push(std::move(n));
  }
  Var unary(Op op, Var a) { return finish(make(op, {a})); }
  Var binary(Op op, Var a, Var b) { return finish(make(op, {a, b})); }

  const Tensor& in0(const Node& n) const { return nodes_[n.in[0]].value; }
  const Tensor& in1(const Node& n) const { return nodes_[n.in[1]].value; }

  Tensor evaluate(const Node& n) const {
    namespace k = kernels;
    switch (n.op) {
      case Op::Leaf: return n.value;
      case Op::MatMul: return k::matmul(in0(n), in1(n));
      case Op::Transpose: return k::transpose(in0(n));
      case Op::Add: return k::add(in0(n), in1(n));
      case Op::Sub: return k::sub(in0(n), in1(n));
      case Op::Mul: return k::mul(in0(n), in1(n));
      case Op::Affine: return k::affine(in0(n), n.p0, n.p1);
      case Op::AddRow: return k::add_row(in0(n), in1(n));
      case Op::ColSum: return k::col_sum(in0(n));
      case Op::RowSum: return k::row_sum(in0(n));
      case Op::BroadcastRows: return k::broadcast_rows(in0(n), n.k0);
      case Op::BroadcastCols: return k::broadcast_cols(in0(n), n.k0);
      case Op::ScaleBy: {
        if (in1(n).size() != 1) throw DimensionError("scale_by expects a 1x1 scale");
        return k::scale(in0(n), in1(n)[0]);
      }
      case Op::SumAll: return Tensor::scalar(k::sum_all(in0(n)));
      case Op::Relu: return k::relu(in0(n));
      case Op::Tanh: return k::tanh(in0(n));
      case Op::Softmax: return k::softmax_rows(in0(n));
      case Op::SoftmaxCrossEntropy: {
        const Tensor& z = in0(n);
        double total = 0.0;
        for (std::size_t i = 0; i < z.rows(); ++i) {
          total += k::log_sum_exp(z.row(i)) - z(i, static_cast<std::size_t>((*n.labels)[i]));
        }
        return Tensor::scalar(n.p0 * total);
      }
      case Op::Clip: return k::clip(in0(n), n.p0, n.p1);
      case Op::ConcatCols: return k::concat_cols(in0(n), in1(n));
      case Op::SliceCols: return k::slice_cols(in0(n), n.k0, n.k1);
      case Op::PadCols: return k::pad_cols(in0(n), n.k0, n.k1);
      case Op::Custom: {
        std::vector<const Tensor*> ins;
        for (auto id : n.extra_inputs) ins.push_back(&nodes_[id].value);
        return n.custom->forward(ins);
      }
    }
    throw Error("tape: unknown op");
  }

  static const char* op_name(Op op) {
    switch (op) {
      case Op::Leaf: return "leaf";
      case Op::MatMul: return "matmul";
      case Op::Transpose: return "transpose";
      case Op::Add: return "add";
      case Op::Sub: return "sub";
      case Op::Mul: return "mul";
      case Op::Affine: return "affine";
      case Op::AddRow: return "add_row";
      case Op::ColSum: return "col_sum";
      case Op::RowSum: return "row_sum";
      case Op::BroadcastRows: return "broadcast_rows";
      case Op::BroadcastCols: return "broadcast_cols";
      case Op::ScaleBy: return "scale_by";
      case Op::SumAll: return "sum_all";
      case Op::Relu: return "relu";
      case Op::Tanh: return "tanh";
      case Op::Softmax: return "softmax";
      case Op::SoftmaxCrossEntropy: return "softmax_cross_entropy";
      case Op::Clip: return "clip";
      case Op::ConcatCols: return "concat_cols";
      case Op::SliceCols: return "slice_cols";
      case Op::PadCols: return "pad_cols";
      case Op::Custom: return "custom";
    }
    return "?";
  }

  void accumulate(std::vector<std::optional<Var>>& adjoint, std::uint32_t id, Var g) {
    if (!nodes_[id].requires_grad) return;
    adjoint[id] = adjoint[id] ? add(*adjoint[id], g) : g;
  }

  // Records d(output)/d(inputs of node i) given the adjoint g of node i.
  void backward(std::uint32_t i, Var g, std::vector<std::optional<Var>>& adjoint,
                bool create_graph) {
    // Copy what is needed: push() may reallocate nodes_.
    const Op op = nodes_[i].op;
    const Var a{nodes_[i].in[0]}, b{nodes_[i].in[1]};
    const Var self{i};
    const bool need_a = nodes_[i].arity > 0 && nodes_[a.id].requires_grad;
    const bool need_b = nodes_[i].arity > 1 && nodes_[b.id].requires_grad;

    switch (op) {
      case Op::Leaf: return;
      case Op::MatMul:
        if (need_a) accumulate(adjoint, a.id, matmul(g, transpose(b)));
        if (need_b) accumulate(adjoint, b.id, matmul(transpose(a), g));
        return;
      case Op::Transpose:
        accumulate(adjoint, a.id, transpose(g));
        return;
      case Op::Add:
        if (need_a) accumulate(adjoint, a.id, g);
        if (need_b) accumulate(adjoint, b.id, g);
        return;
      case Op::Sub:
        if (need_a) accumulate(adjoint, a.id, g);
        if (need_b) accumulate(adjoint, b.id, scale(g, -1.0));
        return;
      case Op::Mul:
        if (need_a) accumulate(adjoint, a.id, mul(g, b));
        if (need_b) accumulate(adjoint, b.id, mul(g, a));
        return;
      case Op::Affine:
        accumulate(adjoint, a.id, scale(g, nodes_[i].p0));
        return;
      case Op::AddRow:
        if (need_a) accumulate(adjoint, a.id, g);
        if (need_b) accumulate(adjoint, b.id, col_sum(g));
        return;
      case Op::ColSum:
        accumulate(adjoint, a.id, broadcast_rows(g, value(a).rows()));
        return;
      case Op::RowSum:
        accumulate(adjoint, a.id, broadcast_cols(g, value(a).cols()));
        return;
      case Op::BroadcastRows:
        accumulate(adjoint, a.id, col_sum(g));
        return;
      case Op::BroadcastCols:
        accumulate(adjoint, a.id, row_sum(g));
        return;
      case Op::ScaleBy:
        if (need_a) accumulate(adjoint, a.id, scale_by(g, b));
        if (need_b) accumulate(adjoint, b.id, sum_all(mul(g, a)));
        return;
      case Op::SumAll:
        accumulate(adjoint, a.id, scale_by(constant(Tensor(value(a).shape(), 1.0)), g));
        return;
      case Op::Relu:
        accumulate(adjoint, a.id, mul(g, constant(kernels::relu_mask(value(a)))));
        return;
      case Op::Tanh: {
        const Var one_minus_sq = affine(mul(self, self), -1.0, 1.0);
        accumulate(adjoint, a.id, mul(g, one_minus_sq));
        return;
      }
      case Op::Softmax: {
        const std::size_t m = value(self).cols();
        const Var inner = row_sum(mul(g, self));
        accumulate(adjoint, a.id, mul(self, sub(g, broadcast_cols(inner, m))));
        return;
      }
      case Op::SoftmaxCrossEntropy: {
        const double factor = nodes_[i].p0;
        const auto onehot = nodes_[i].onehot;
        const Var residual = sub(softmax(a), constant(*onehot));
        accumulate(adjoint, a.id, scale_by(scale(residual, factor), g));
        return;
      }
      case Op::Clip: {
        const double lo = nodes_[i].p0, hi = nodes_[i].p1;
        accumulate(adjoint, a.id, mul(g, constant(kernels::clip_mask(value(a), lo, hi))));
        return;
      }
      case Op::ConcatCols: {
        const std::size_t wa = value(a).cols(), wb = value(b).cols();
        if (need_a) accumulate(adjoint, a.id, slice_cols(g, 0, wa));
        if (need_b) accumulate(adjoint, b.id, slice_cols(g, wa, wb));
        return;
      }
      case Op::SliceCols: {
        const std::size_t offset = nodes_[i].k0;
        accumulate(adjoint, a.id, pad_cols(g, offset, value(a).cols()));
        return;
      }
      case Op::PadCols: {
        const std::size_t offset = nodes_[i].k0;
        accumulate(adjoint, a.id, slice_cols(g, offset, value(a).cols()));
        return;
      }
      case Op::Custom: {
        const auto custom = nodes_[i].custom;
        if (create_graph) {
          throw SecondOrderUnsupported("op '" + custom->name +
                                       "' has no differentiable backward; "
                                       "second-order gradients are unsupported");
        }
        const auto inputs = nodes_[i].extra_inputs;
        std::vector<Tensor> grads = custom->vjp(value(g));
        if (grads.size() != inputs.size()) {
          throw DimensionError("custom op '" + custom->name + "' returned " +
                               std::to_string(grads.size()) + " gradients for " +
                               std::to_string(inputs.size()) + " inputs");
        }
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          if (nodes_[inputs[k]].requires_grad) {
            accumulate(adjoint, inputs[k], constant(std::move(grads[k])));
          }
        }
        return;
      }
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace advgame
