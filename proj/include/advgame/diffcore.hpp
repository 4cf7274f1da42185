#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "advgame/error.hpp"
#include "advgame/mlp.hpp"
#include "advgame/tape.hpp"
#include "advgame/tensor.hpp"

namespace advgame {

/// Mean softmax cross-entropy of logits[B x C] against labels.
inline double loss_softmax_ce(const Tensor& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) {
    throw DimensionError("loss_softmax_ce: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.rows()) + " rows");
  }
  if (labels.empty()) throw DimensionError("loss_softmax_ce: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.cols()) {
      throw LabelError("label " + std::to_string(labels[i]) + " outside [0, " +
                       std::to_string(logits.cols()) + ")");
    }
    total += kernels::log_sum_exp(logits.row(i)) - logits(i, static_cast<std::size_t>(labels[i]));
  }
  const double loss = total / static_cast<double>(labels.size());
  if (!std::isfinite(loss)) throw NonFiniteError("loss_softmax_ce produced a non-finite value");
  return loss;
}

/// Gradient of the mean loss with respect to every classifier parameter,
/// returned in the classifier's own layout.
inline ClassifierParams grad_params(const ClassifierParams& params, const Tensor& x,
                                    std::span<const int> labels) {
  Tape tape;
  auto u = leaves(tape, params.blocks());
  const Var loss = tape.softmax_cross_entropy(mlp_on_tape(tape, u, tape.constant(x)), labels);
  return ClassifierParams::from_blocks(tape.grad_values(loss, u));
}

/// Per-example input gradients: row i is d l(g(x_i), y_i) / d x_i.
inline Tensor grad_input(const ClassifierParams& params, const Tensor& x,
                         std::span<const int> labels) {
  Tape tape;
  auto u = leaves(tape, params.blocks(), false);
  const Var input = tape.leaf(x);
  // Summed (not averaged) loss, so each row carries its own example's gradient.
  const Var loss =
      tape.softmax_cross_entropy(mlp_on_tape(tape, u, input), labels, /*mean=*/false);
  const Var wrt[] = {input};
  return tape.grad_values(loss, wrt)[0];
}

/// A scalar payoff f(u, v) recorded on a tape. u and v are lists of
/// parameter blocks.
using TapePayoff =
    std::function<Var(Tape&, std::span<const Var> u, std::span<const Var> v)>;

enum class SecondOrderMode {
  DoubleBackprop,
  /// Central differences of the first-order gradient norm. Validation only.
  FiniteDifference,
};

/// 0.5 * ||df/dv||^2 at (u, v), using one reverse pass.
inline double half_gradnorm_sq(const TapePayoff& payoff, std::span<const Tensor> u,
                               std::span<const Tensor> v) {
  Tape tape;
  auto uu = leaves(tape, u, false);
  auto vv = leaves(tape, v, true);
  const Var f = payoff(tape, uu, vv);
  double s = 0.0;
  for (const Tensor& g : tape.grad_values(f, vv))
    for (double x : g.data()) s += x * x;
  return 0.5 * s;
}

/// Gradient with respect to u of 0.5 * ||df(u, v)/dv||^2, i.e.
/// (d^2 f / du dv)(df / dv).
///
/// DoubleBackprop differentiates the recorded first-order gradient a second
/// time. FiniteDifference perturbs each coordinate of u by
/// h = fd_step * max(1, |u_k|) and differences half_gradnorm_sq.
inline std::vector<Tensor> grad_of_gradnorm(const TapePayoff& payoff, std::span<const Tensor> u,
                                            std::span<const Tensor> v,
                                            SecondOrderMode mode = SecondOrderMode::DoubleBackprop,
                                            double fd_step = 1e-4) {
  if (mode == SecondOrderMode::DoubleBackprop) {
    Tape tape;
    auto uu = leaves(tape, u, true);
    auto vv = leaves(tape, v, true);
    const Var f = payoff(tape, uu, vv);
    const auto gv = tape.grad(f, vv, /*create_graph=*/true);
    Var penalty = tape.constant(Tensor::scalar(0.0));
    for (Var g : gv) penalty = tape.add(penalty, tape.sum_all(tape.mul(g, g)));
    penalty = tape.scale(penalty, 0.5);
    return tape.grad_values(penalty, uu);
  }

  std::vector<Tensor> work(u.begin(), u.end());
  std::vector<Tensor> out;
  for (std::size_t b = 0; b < work.size(); ++b) {
    Tensor g(work[b].shape());
    for (std::size_t k = 0; k < work[b].size(); ++k) {
      const double orig = work[b][k];
      const double h = fd_step * std::max(1.0, std::abs(orig));
      work[b][k] = orig + h;
      const double up = half_gradnorm_sq(payoff, work, v);
      work[b][k] = orig - h;
      const double down = half_gradnorm_sq(payoff, work, v);
      work[b][k] = orig;
      g[k] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace advgame
