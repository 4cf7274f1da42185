#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advgame/attacks.hpp"
#include "advgame/data.hpp"
#include "advgame/diffcore.hpp"
#include "advgame/error.hpp"
#include "advgame/evalkit.hpp"
#include "advgame/models.hpp"
#include "advgame/optim.hpp"
#include "advgame/random.hpp"
#include "advgame/tape.hpp"

namespace advgame {

/// base / (1 + decay * i). Constant when decay is 0.
struct Schedule {
  double base = 0.0;
  double decay = 0.0;

  double at(std::size_t i) const { return base / (1.0 + decay * static_cast<double>(i)); }
  bool is_zero() const { return base == 0.0; }
};

struct GameConfig {
  std::size_t iterations = 0;
  Schedule defender_rate{1e-3};  // lambda
  Schedule attacker_rate{1e-3};  // sigma
  Schedule penalty{1.0};         // gamma
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  /// Attacker ascent steps per defender step.
  std::size_t attacker_steps = 1;
  /// Trace sampling stride in iterations; 0 disables tracing.
  std::size_t trace_stride = 0;

  void validate() const {
    if (!(defender_rate.base > 0.0) || !(attacker_rate.base > 0.0)) {
      throw ConfigError("step sizes must be positive");
    }
    if (!(penalty.base >= 0.0)) throw ConfigError("penalty coefficient gamma must be >= 0");
    if (defender_rate.decay < 0.0 || attacker_rate.decay < 0.0 || penalty.decay < 0.0) {
      throw ConfigError("schedule decay must be >= 0");
    }
    if (batch == 0) throw ConfigError("batch size must be positive");
    if (attacker_steps == 0) throw ConfigError("attacker_steps must be >= 1");
  }
};

/// A game or training loop hit a non-finite value. Holds the last finite
/// parameter blocks of both players (v is empty for single-player loops).
class GameDiverged : public Error {
 public:
  GameDiverged(std::size_t iteration, std::vector<Tensor> u, std::vector<Tensor> v)
      : Error("optimization diverged at iteration " + std::to_string(iteration)),
        iteration_(iteration),
        u_(std::move(u)),
        v_(std::move(v)) {}
  std::size_t iteration() const noexcept { return iteration_; }
  const std::vector<Tensor>& last_u() const noexcept { return u_; }
  const std::vector<Tensor>& last_v() const noexcept { return v_; }

 private:
  std::size_t iteration_;
  std::vector<Tensor> u_, v_;
};

struct TrainResult {
  ClassifierParams params;
  ConvergenceTrace trace;
};

namespace detail {

inline bool sample_due(const GameConfig& c, std::size_t it) {
  return c.trace_stride != 0 && it % c.trace_stride == 0;
}

inline void require_fit(const ClassifierParams& u, const Dataset& data, const char* who) {
  u.validate();
  if (u.input_dim() != data.dim() || u.output_dim() != data.classes) {
    throw DimensionError(std::string(who) + ": classifier " + std::to_string(u.input_dim()) + "->" +
                         std::to_string(u.output_dim()) + " does not fit data with d=" +
                         std::to_string(data.dim()) + ", C=" + std::to_string(data.classes));
  }
}

/// One descent step on the mean loss over (x, y). Returns the loss.
inline double descend_on_batch(std::vector<Tensor>& u, Optimizer& opt, const Tensor& x,
                               std::span<const int> y, double rate, std::size_t it) {
  std::vector<Tensor> grads;
  double loss;
  try {
    Tape tape;
    auto uu = leaves(tape, u);
    const Var l = tape.softmax_cross_entropy(mlp_on_tape(tape, uu, tape.constant(x)), y);
    loss = tape.value(l).item();
    grads = tape.grad_values(l, uu);
  } catch (const NonFiniteError&) {
    throw GameDiverged(it, u, {});
  }
  std::vector<Tensor> next = u;
  opt.descend(next, grads, rate);
  if (!all_finite(next)) throw GameDiverged(it, u, {});
  u = std::move(next);
  return loss;
}

}  // namespace detail

/// Plain minibatch training on clean data (the undefended baseline). Trace
/// test error is clean error on `test`.
inline TrainResult train_classifier(const ClassifierParams& u0, const Dataset& data,
                                    const Dataset& test, const GameConfig& config) {
  config.validate();
  detail::require_fit(u0, data, "train_classifier");
  TrainResult result{u0, {}};
  if (config.iterations == 0) return result;

  std::vector<Tensor> u = u0.blocks();
  Optimizer opt(config.optimizer, u);
  BatchStream stream(data.size(), config.batch, config.seed);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto idx = stream.next();
    const Tensor xb = data.gather_features(idx);
    const auto yb = data.gather_labels(idx);
    const bool sample = detail::sample_due(config, it);
    const double err =
        sample ? classification_error(ClassifierParams::from_blocks(u), test.features, test.labels) : 0.0;
    const double loss = detail::descend_on_batch(u, opt, xb, yb, config.defender_rate.at(it), it);
    if (sample) result.trace.samples.push_back({it, err, loss, 0.0});
  }
  result.params = ClassifierParams::from_blocks(u);
  return result;
}

/// Adversarial training on a 1:1 mixture. Each step draws config.batch / 2
/// indices and uses those clean rows together with the same rows of the
/// fixed adversarial set, all with true labels.
inline TrainResult adv_train(const ClassifierParams& u0, const Dataset& data,
                             const Dataset& adversarial, const Dataset& test,
                             const GameConfig& config) {
  config.validate();
  detail::require_fit(u0, data, "adv_train");
  if (adversarial.size() != data.size() || adversarial.dim() != data.dim() ||
      adversarial.labels != data.labels) {
    throw DimensionError("adv_train: adversarial set must be row-aligned with the clean set");
  }
  if (config.batch < 2) throw ConfigError("adv_train needs a batch of at least 2");
  TrainResult result{u0, {}};
  if (config.iterations == 0) return result;

  std::vector<Tensor> u = u0.blocks();
  Optimizer opt(config.optimizer, u);
  BatchStream stream(data.size(), config.batch / 2, config.seed);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto idx = stream.next();
    const Tensor xb = kernels::stack_rows(data.gather_features(idx), adversarial.gather_features(idx));
    auto yb = data.gather_labels(idx);
    yb.insert(yb.end(), yb.begin(), yb.end());
    const bool sample = detail::sample_due(config, it);
    const double err =
        sample ? classification_error(ClassifierParams::from_blocks(u), test.features, test.labels) : 0.0;
    const double loss = detail::descend_on_batch(u, opt, xb, yb, config.defender_rate.at(it), it);
    if (sample) result.trace.samples.push_back({it, err, loss, 0.0});
  }
  result.params = ClassifierParams::from_blocks(u);
  return result;
}

/// FGSM examples for every row of `data` against a frozen classifier.
inline Dataset fgsm_dataset(const ClassifierParams& source, const Dataset& data,
                            const AttackBudget& budget) {
  PerturbedBatch z = fgsm(source, data.features, data.labels, budget);
  return Dataset{std::move(z.z), data.labels, data.classes, data.split};
}

struct CatMouseRound {
  std::size_t round = 0;  // 1-based
  /// FGSM_k is FGSM against this classifier (defense k-1).
  ClassifierParams attack_source;
  ClassifierParams defense;
};

/// Round k builds the FGSM_k training set against defense k-1 (defense 0 is
/// u0) and adversarially trains defense k from defense k-1.
inline std::vector<CatMouseRound> cat_and_mouse(const ClassifierParams& u0, const Dataset& data,
                                                const Dataset& test, std::size_t rounds,
                                                const AttackBudget& budget,
                                                const GameConfig& config) {
  if (rounds < 1) throw ConfigError("cat_and_mouse needs at least one round");
  budget.validate();
  std::vector<CatMouseRound> out;
  ClassifierParams current = u0;
  for (std::size_t k = 1; k <= rounds; ++k) {
    const Dataset adv = fgsm_dataset(current, data, budget);
    GameConfig round_cfg = config;
    round_cfg.seed = derive_seed(config.seed, "cat-and-mouse-round-" + std::to_string(k));
    TrainResult trained = adv_train(current, data, adv, test, round_cfg);
    out.push_back(CatMouseRound{k, current, trained.params});
    current = std::move(trained.params);
  }
  return out;
}

enum class MaxStep { Fgsm, GradStep };

/// Minimax-Grad. Each iteration perturbs the minibatch against the current
/// classifier (max step), then descends u on
///   f(u, Z) + gamma / (2B) * sum_i ||d l_i / d z_i||^2
/// with Z held fixed (min step). With gamma = 0 the penalty is not built,
/// which is exactly the LWA update. Trace test error is FGSM-curr error.
inline TrainResult minimax_grad(const ClassifierParams& u0, const Dataset& data,
                                const Dataset& test, const AttackBudget& budget,
                                const GameConfig& config, MaxStep max_step = MaxStep::Fgsm) {
  config.validate();
  budget.validate();
  detail::require_fit(u0, data, "minimax_grad");
  TrainResult result{u0, {}};
  if (config.iterations == 0) return result;

  std::vector<Tensor> u = u0.blocks();
  Optimizer opt(config.optimizer, u);
  BatchStream stream(data.size(), config.batch, config.seed);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto idx = stream.next();
    const Tensor xb = data.gather_features(idx);
    const auto yb = data.gather_labels(idx);
    const auto current = ClassifierParams::from_blocks(u);
    const bool sample = detail::sample_due(config, it);
    const double err =
        sample ? error_rate(current, AttackSpec{FgsmAttack{}, budget}, test) : 0.0;

    const Tensor z = (max_step == MaxStep::Fgsm) ? fgsm(current, xb, yb, budget).z
                                                 : grad_step(current, xb, yb, budget).z;
    const double gamma = config.penalty.at(it);
    const double inv_b = 1.0 / static_cast<double>(yb.size());
    std::vector<Tensor> grads;
    double risk, penalty = 0.0;
    try {
      Tape tape;
      auto uu = leaves(tape, u);
      if (gamma == 0.0) {
        const Var f = tape.softmax_cross_entropy(mlp_on_tape(tape, uu, tape.constant(z)), yb);
        risk = tape.value(f).item();
        grads = tape.grad_values(f, uu);
      } else {
        const Var zz = tape.leaf(z);
        const Var total =
            tape.softmax_cross_entropy(mlp_on_tape(tape, uu, zz), yb, /*mean=*/false);
        const Var f = tape.scale(total, inv_b);
        const Var wrt[] = {zz};
        const Var gz = tape.grad(total, wrt, /*create_graph=*/true)[0];
        const Var pen = tape.scale(tape.sum_all(tape.mul(gz, gz)), 0.5 * gamma * inv_b);
        const Var objective = tape.add(f, pen);
        risk = tape.value(f).item();
        penalty = tape.value(pen).item();
        grads = tape.grad_values(objective, uu);
      }
    } catch (const NonFiniteError&) {
      throw GameDiverged(it, u, {});
    }
    if (sample) result.trace.samples.push_back({it, err, risk, penalty});
    std::vector<Tensor> next = u;
    opt.descend(next, grads, config.defender_rate.at(it));
    if (!all_finite(next)) throw GameDiverged(it, u, {});
    u = std::move(next);
  }
  result.params = ClassifierParams::from_blocks(u);
  return result;
}

/// Minimax-Grad without the sensitivity penalty.
inline TrainResult lwa(const ClassifierParams& u0, const Dataset& data, const Dataset& test,
                       const AttackBudget& budget, GameConfig config,
                       MaxStep max_step = MaxStep::Fgsm) {
  config.penalty = Schedule{0.0, 0.0};
  return minimax_grad(u0, data, test, budget, config, max_step);
}

// ---------------------------------------------------------------------------
// Generic minimax by sensitivity penalization
// ---------------------------------------------------------------------------

/// State of one iteration, reported before the update is applied.
struct GameStep {
  std::size_t iteration = 0;
  std::span<const Tensor> u;
  std::span<const Tensor> v;
  double risk = 0.0;
  double penalty = 0.0;
};

using PayoffAt = std::function<TapePayoff(std::size_t iteration)>;
using GameObserver = std::function<void(const GameStep&)>;

struct GameSolution {
  std::vector<Tensor> u;
  std::vector<Tensor> v;
};

/// Simultaneous gradient play on min_u max_v f(u, v). Per iteration i:
///   v_i = v_{i-1} + sigma_i df/dv
///   u_i = u_{i-1} - lambda_i d/du [ f + gamma_i / 2 ||df/dv||^2 ]
/// with both derivatives taken at (u_{i-1}, v_{i-1}). With attacker_steps
/// k > 1 the attacker first takes k - 1 extra ascent steps against u_{i-1}.
/// gamma = 0 gives plain simultaneous descent/ascent.
inline GameSolution minimax_optimize(const PayoffAt& payoff_at, std::vector<Tensor> u,
                                     std::vector<Tensor> v, const GameConfig& config,
                                     const GameObserver& observe = {}) {
  config.validate();
  Optimizer opt_u(config.optimizer, u);
  Optimizer opt_v(config.optimizer, v);

  for (std::size_t it = 0; it < config.iterations; ++it) {
    const TapePayoff payoff = payoff_at(it);
    const double sigma = config.attacker_rate.at(it);
    try {
      for (std::size_t s = 1; s < config.attacker_steps; ++s) {
        Tape tape;
        auto uu = leaves(tape, u, false);
        auto vv = leaves(tape, v, true);
        const auto gv = tape.grad_values(payoff(tape, uu, vv), vv);
        std::vector<Tensor> next = v;
        opt_v.ascend(next, gv, sigma);
        if (!all_finite(next)) throw NonFiniteError("attacker step produced non-finite parameters");
        v = std::move(next);
      }
    } catch (const NonFiniteError&) {
      throw GameDiverged(it, u, v);
    }

    const double gamma = config.penalty.at(it);
    std::vector<Tensor> gu_vals, gv_vals;
    double risk, penalty = 0.0;
    try {
      Tape tape;
      auto uu = leaves(tape, u, true);
      auto vv = leaves(tape, v, true);
      const Var f = payoff(tape, uu, vv);
      risk = tape.value(f).item();
      const auto gv = tape.grad(f, vv, /*create_graph=*/gamma != 0.0);
      for (Var g : gv) gv_vals.push_back(tape.value(g));
      if (gamma == 0.0) {
        gu_vals = tape.grad_values(f, uu);
      } else {
        Var sq = tape.constant(Tensor::scalar(0.0));
        for (Var g : gv) sq = tape.add(sq, tape.sum_all(tape.mul(g, g)));
        const Var pen = tape.scale(sq, 0.5 * gamma);
        penalty = tape.value(pen).item();
        gu_vals = tape.grad_values(tape.add(f, pen), uu);
      }
    } catch (const NonFiniteError&) {
      throw GameDiverged(it, u, v);
    }
    if (observe) observe(GameStep{it, u, v, risk, penalty});

    std::vector<Tensor> next_u = u, next_v = v;
    opt_v.ascend(next_v, gv_vals, sigma);
    opt_u.descend(next_u, gu_vals, config.defender_rate.at(it));
    if (!all_finite(next_u) || !all_finite(next_v)) throw GameDiverged(it, u, v);
    u = std::move(next_u);
    v = std::move(next_v);
  }
  return GameSolution{std::move(u), std::move(v)};
}

/// max_v min_u f(u, v), solved as min_v max_u -f(u, v) with the roles of
/// the players swapped. Each player keeps its own step size: u still moves
/// with lambda, v with sigma. The observer sees the original orientation
/// with risk = f(u, v); `penalty` is the leader's (v's) penalty.
inline GameSolution maximin_optimize(const PayoffAt& payoff_at, std::vector<Tensor> u,
                                     std::vector<Tensor> v, const GameConfig& config,
                                     const GameObserver& observe = {}) {
  GameConfig swapped = config;
  std::swap(swapped.defender_rate, swapped.attacker_rate);
  const PayoffAt flipped = [&payoff_at](std::size_t it) -> TapePayoff {
    TapePayoff f = payoff_at(it);
    return [f](Tape& tape, std::span<const Var> a, std::span<const Var> b) {
      return tape.scale(f(tape, b, a), -1.0);
    };
  };
  GameObserver unswap;
  if (observe) {
    unswap = [&observe](const GameStep& s) {
      observe(GameStep{s.iteration, s.v, s.u, -s.risk, s.penalty});
    };
  }
  try {
    GameSolution s = minimax_optimize(flipped, std::move(v), std::move(u), swapped, unswap);
    return GameSolution{std::move(s.v), std::move(s.u)};
  } catch (const GameDiverged& e) {
    throw GameDiverged(e.iteration(), e.last_v(), e.last_u());
  }
}

// ---------------------------------------------------------------------------
// Classifier vs attack network games
// ---------------------------------------------------------------------------

struct AttNetGameResult {
  ClassifierParams u;
  AttackNetParams v;
  ConvergenceTrace trace;
};

namespace detail {

inline void require_game_fit(const ClassifierParams& u0, const AttackNetParams& v0,
                             const Dataset& data, const char* who) {
  require_fit(u0, data, who);
  v0.validate();
  if (attnet_feature_dim(v0) != data.dim() || attnet_label_classes(v0) != data.classes) {
    throw DimensionError(std::string(who) + ": attack network does not fit the dataset");
  }
}

/// Minibatch risk f(u, v) for iteration i; batches come from a seeded stream.
inline PayoffAt attnet_payoffs(const Dataset& data, const AttackBudget& budget,
                               const GameConfig& config) {
  auto stream = std::make_shared<BatchStream>(data.size(), config.batch, config.seed);
  const Dataset* d = &data;
  const double eta = budget.eta;
  return [stream, d, eta](std::size_t) -> TapePayoff {
    const auto idx = stream->next();
    auto x = std::make_shared<const Tensor>(d->gather_features(idx));
    auto y = std::make_shared<const std::vector<int>>(d->gather_labels(idx));
    const std::size_t classes = d->classes;
    return [x, y, classes, eta](Tape& tape, std::span<const Var> u, std::span<const Var> v) {
      return attnet_risk_on_tape(tape, u, v, *x, *y, classes, eta);
    };
  };
}

/// Records (iteration, error of u under attack v on the test set, risk).
inline GameObserver attnet_tracer(ConvergenceTrace& trace, const Dataset& test,
                                  const AttackBudget& budget, const GameConfig& config) {
  return [&trace, &test, budget, config](const GameStep& s) {
    if (!sample_due(config, s.iteration)) return;
    const auto u = ClassifierParams::from_blocks(s.u);
    const auto v = AttackNetParams::from_blocks(s.v);
    const double err = classification_error(
        u, attnet_forward(v, test.features, test.labels, budget.eta).z, test.labels);
    trace.samples.push_back({s.iteration, err, s.risk, s.penalty});
  };
}

}  // namespace detail

/// Minimax-AttNet: minimax_optimize on the classifier/attack-network risk.
inline AttNetGameResult minimax_attnet(const ClassifierParams& u0, const AttackNetParams& v0,
                                       const Dataset& data, const Dataset& test,
                                       const AttackBudget& budget, const GameConfig& config) {
  config.validate();
  budget.validate();
  detail::require_game_fit(u0, v0, data, "minimax_attnet");
  AttNetGameResult out{u0, v0, {}};
  if (config.iterations == 0) return out;
  auto s = minimax_optimize(detail::attnet_payoffs(data, budget, config), u0.blocks(), v0.blocks(),
                            config, detail::attnet_tracer(out.trace, test, budget, config));
  out.u = ClassifierParams::from_blocks(s.u);
  out.v = AttackNetParams::from_blocks(s.v);
  return out;
}

/// Maximin-AttNet: the maximin attack v and its best-responding classifier u.
inline AttNetGameResult maximin_attnet(const ClassifierParams& u0, const AttackNetParams& v0,
                                       const Dataset& data, const Dataset& test,
                                       const AttackBudget& budget, const GameConfig& config) {
  config.validate();
  budget.validate();
  detail::require_game_fit(u0, v0, data, "maximin_attnet");
  AttNetGameResult out{u0, v0, {}};
  if (config.iterations == 0) return out;
  auto s = maximin_optimize(detail::attnet_payoffs(data, budget, config), u0.blocks(), v0.blocks(),
                            config, detail::attnet_tracer(out.trace, test, budget, config));
  out.u = ClassifierParams::from_blocks(s.u);
  out.v = AttackNetParams::from_blocks(s.v);
  return out;
}

/// Alt-AttNet: simultaneous descent/ascent without the penalty.
inline AttNetGameResult alt_attnet(const ClassifierParams& u0, const AttackNetParams& v0,
                                   const Dataset& data, const Dataset& test,
                                   const AttackBudget& budget, GameConfig config) {
  config.penalty = Schedule{0.0, 0.0};
  return minimax_attnet(u0, v0, data, test, budget, config);
}

// ---------------------------------------------------------------------------
// Defense specification
// ---------------------------------------------------------------------------

enum class DefenseKind { NoDefense, AdvTrain, Lwa, MinimaxGrad, MinimaxAttNet, MaximinAttNet, AltAttNet };

inline DefenseKind parse_defense_kind(const std::string& s) {
  if (s == "none") return DefenseKind::NoDefense;
  if (s == "adv-train") return DefenseKind::AdvTrain;
  if (s == "lwa") return DefenseKind::Lwa;
  if (s == "minimax-grad") return DefenseKind::MinimaxGrad;
  if (s == "minimax-attnet") return DefenseKind::MinimaxAttNet;
  if (s == "maximin-attnet") return DefenseKind::MaximinAttNet;
  if (s == "alt-attnet") return DefenseKind::AltAttNet;
  throw ConfigError("unknown defense variant '" + s +
                    "' (expected none, adv-train, lwa, minimax-grad, minimax-attnet, "
                    "maximin-attnet or alt-attnet)");
}

inline const char* defense_kind_name(DefenseKind k) {
  switch (k) {
    case DefenseKind::NoDefense: return "none";
    case DefenseKind::AdvTrain: return "adv-train";
    case DefenseKind::Lwa: return "lwa";
    case DefenseKind::MinimaxGrad: return "minimax-grad";
    case DefenseKind::MinimaxAttNet: return "minimax-attnet";
    case DefenseKind::MaximinAttNet: return "maximin-attnet";
    case DefenseKind::AltAttNet: return "alt-attnet";
  }
  return "?";
}

inline bool uses_attnet(DefenseKind k) {
  return k == DefenseKind::MinimaxAttNet || k == DefenseKind::MaximinAttNet ||
         k == DefenseKind::AltAttNet;
}

struct DefenseSpec {
  DefenseKind kind = DefenseKind::NoDefense;
  GameConfig config;
  AttackBudget budget;
  /// Hidden sizes of the attack network; required by the AttNet variants.
  std::optional<std::vector<std::size_t>> attnet_hidden;
  /// Cat-and-mouse round for AdvTrain.
  std::size_t round = 1;
  MaxStep max_step = MaxStep::Fgsm;

  void validate() const {
    config.validate();
    budget.validate();
    if (uses_attnet(kind) && !attnet_hidden) {
      throw ConfigError(std::string(defense_kind_name(kind)) + " needs an attack network architecture");
    }
    if (kind == DefenseKind::AdvTrain && round < 1) throw ConfigError("adv-train round must be >= 1");
  }
};

}  // namespace advgame
