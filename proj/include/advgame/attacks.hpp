#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "advgame/data.hpp"
#include "advgame/diffcore.hpp"
#include "advgame/error.hpp"
#include "advgame/models.hpp"
#include "advgame/optim.hpp"
#include "advgame/tape.hpp"

namespace advgame {

/// Per-coordinate l-infinity budget on inputs that live in the box [-1, 1].
struct AttackBudget {
  double eta = 0.0;

  void validate() const {
    if (!(eta >= 0.0 && eta <= 2.0)) {
      throw ConfigError("attack budget eta=" + std::to_string(eta) + " must lie in [0, 2]");
    }
  }
};

struct FgsmAttack {};
struct IfgsmAttack {
  std::size_t steps = 10;
};
/// Unsigned gradient step, projected back into the budget.
struct GradStepAttack {};
struct AttNetAttack {
  AttackNetParams params;
};

struct AttackSpec {
  std::variant<FgsmAttack, IfgsmAttack, GradStepAttack, AttNetAttack> variant;
  AttackBudget budget;

  void validate() const {
    budget.validate();
    if (const auto* it = std::get_if<IfgsmAttack>(&variant); it && it->steps < 1) {
      throw ConfigError("IFGSM needs at least one step");
    }
  }
};

namespace detail {

/// Clamps z into [x - eta, x + eta] and then into [-1, 1].
inline void project_linf(Tensor& z, const Tensor& x, double eta) {
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = std::clamp(std::clamp(z[i], x[i] - eta, x[i] + eta), -1.0, 1.0);
  }
}

inline void require_attack_inputs(const ClassifierParams& u, const Tensor& x,
                                  std::span<const int> labels, const AttackBudget& budget) {
  budget.validate();
  if (x.cols() != u.input_dim()) {
    throw DimensionError("attack: input has " + std::to_string(x.cols()) +
                         " columns, classifier expects " + std::to_string(u.input_dim()));
  }
  if (labels.size() != x.rows()) throw DimensionError("attack: label count mismatch");
}

inline Tensor checked_input_grad(const ClassifierParams& u, const Tensor& x,
                                 std::span<const int> labels) {
  Tensor g = grad_input(u, x, labels);
  require_finite(g, "input gradient");
  return g;
}

}  // namespace detail

/// Fast gradient sign method: z = clip(x + eta * sign(grad_x loss), -1, 1),
/// with sign(0) = 0.
inline PerturbedBatch fgsm(const ClassifierParams& u, const Tensor& x, std::span<const int> labels,
                           const AttackBudget& budget) {
  detail::require_attack_inputs(u, x, labels, budget);
  const Tensor g = detail::checked_input_grad(u, x, labels);
  Tensor z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = std::clamp(x[i] + budget.eta * kernels::sign(g[i]), -1.0, 1.0);
  }
  return PerturbedBatch{std::move(z), x, budget.eta, Norm::Linf};
}

/// Iterated FGSM: `steps` sign steps of size eta / steps, each followed by
/// projection onto the eta-ball around x intersected with the box.
inline PerturbedBatch ifgsm(const ClassifierParams& u, const Tensor& x, std::span<const int> labels,
                            const AttackBudget& budget, std::size_t steps) {
  detail::require_attack_inputs(u, x, labels, budget);
  if (steps < 1) throw ConfigError("IFGSM needs at least one step");
  const double step = budget.eta / static_cast<double>(steps);
  Tensor z = x;
  for (std::size_t s = 0; s < steps; ++s) {
    const Tensor g = detail::checked_input_grad(u, z, labels);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = z[i] + step * kernels::sign(g[i]);
    detail::project_linf(z, x, budget.eta);
  }
  return PerturbedBatch{std::move(z), x, budget.eta, Norm::Linf};
}

/// Raw gradient step z = x + eta * grad_x loss, projected onto the budget.
inline PerturbedBatch grad_step(const ClassifierParams& u, const Tensor& x,
                                std::span<const int> labels, const AttackBudget& budget) {
  detail::require_attack_inputs(u, x, labels, budget);
  const Tensor g = detail::checked_input_grad(u, x, labels);
  Tensor z(x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + budget.eta * g[i];
  detail::project_linf(z, x, budget.eta);
  return PerturbedBatch{std::move(z), x, budget.eta, Norm::Linf};
}

/// Dispatches to the attack variant. AttNet attacks ignore `u`.
inline PerturbedBatch apply_attack(const AttackSpec& spec, const ClassifierParams& u,
                                   const Tensor& x, std::span<const int> labels) {
  spec.validate();
  return std::visit(
      [&](const auto& a) -> PerturbedBatch {
        using A = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<A, FgsmAttack>) {
          return fgsm(u, x, labels, spec.budget);
        } else if constexpr (std::is_same_v<A, IfgsmAttack>) {
          return ifgsm(u, x, labels, spec.budget, a.steps);
        } else if constexpr (std::is_same_v<A, GradStepAttack>) {
          return grad_step(u, x, labels, spec.budget);
        } else {
          return attnet_forward(a.params, x, labels, spec.budget.eta);
        }
      },
      spec.variant);
}

/// Risk f(u, v): mean loss of the classifier on attack-network outputs.
inline Var attnet_risk_on_tape(Tape& tape, std::span<const Var> u, std::span<const Var> v,
                               const Tensor& x, std::span<const int> labels, std::size_t classes,
                               double eta) {
  const Var z = attnet_on_tape(tape, v, tape.constant(x), labels, classes, eta);
  return tape.softmax_cross_entropy(mlp_on_tape(tape, u, z), labels);
}

struct AttNetTrainConfig {
  std::size_t iterations = 1000;
  double rate = 1e-3;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  /// Record the training risk every `trace_stride` iterations (0: never).
  std::size_t trace_stride = 0;
};

struct RiskSample {
  std::size_t iteration = 0;
  double risk = 0.0;
};

struct AttNetTrainResult {
  AttackNetParams params;
  std::vector<RiskSample> trace;
};

/// Attack training hit a non-finite risk. Holds the last finite parameters.
class AttackDiverged : public Error {
 public:
  AttackDiverged(std::size_t iteration, AttackNetParams last)
      : Error("attack network training diverged at iteration " + std::to_string(iteration)),
        iteration_(iteration),
        last_(std::move(last)) {}
  std::size_t iteration() const noexcept { return iteration_; }
  const AttackNetParams& last_finite() const noexcept { return last_; }

 private:
  std::size_t iteration_;
  AttackNetParams last_;
};

/// Gradient ascent on v of f(u, v) with the classifier u frozen.
inline AttNetTrainResult attnet_train(const ClassifierParams& u, const AttackNetParams& v0,
                                      const Dataset& data, const AttackBudget& budget,
                                      const AttNetTrainConfig& config) {
  budget.validate();
  if (attnet_feature_dim(v0) != data.dim() || attnet_label_classes(v0) != data.classes) {
    throw DimensionError("attnet_train: attack network does not fit the dataset");
  }
  if (u.input_dim() != data.dim()) throw DimensionError("attnet_train: classifier does not fit the dataset");

  AttNetTrainResult result{v0, {}};
  if (config.iterations == 0) return result;

  const auto u_blocks = u.blocks();
  std::vector<Tensor> v = v0.blocks();
  Optimizer opt(config.optimizer, v);
  BatchStream stream(data.size(), config.batch, config.seed);

  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto index = stream.next();
    const Tensor xb = data.gather_features(index);
    const auto yb = data.gather_labels(index);
    std::vector<Tensor> grads;
    double risk;
    try {
      Tape tape;
      auto uu = leaves(tape, u_blocks, false);
      auto vv = leaves(tape, v, true);
      const Var f = attnet_risk_on_tape(tape, uu, vv, xb, yb, data.classes, budget.eta);
      risk = tape.value(f).item();
      grads = tape.grad_values(f, vv);
    } catch (const NonFiniteError&) {
      throw AttackDiverged(it, AttackNetParams::from_blocks(v));
    }
    if (config.trace_stride && it % config.trace_stride == 0) result.trace.push_back({it, risk});
    std::vector<Tensor> next = v;
    opt.ascend(next, grads, config.rate);
    if (!all_finite(next)) throw AttackDiverged(it, AttackNetParams::from_blocks(v));
    v = std::move(next);
  }
  result.params = AttackNetParams::from_blocks(v);
  return result;
}

}  // namespace advgame
