#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "advgame/attacks.hpp"
#include "advgame/defenses.hpp"
#include "advgame/diffcore.hpp"
#include "advgame/games.hpp"
#include "advgame/models.hpp"
#include "advgame/random.hpp"

namespace advgame::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  std::string detail;
};

/// |a - b| / max(|a|, |b|, floor).
inline double rel_error(double a, double b, double floor = 1e-7) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Smallest |pre-activation| at any hidden ReLU. Finite differences are
/// only meaningful away from the kinks.
template <class Tag>
double relu_margin(const Mlp<Tag>& m, const Tensor& x) {
  double margin = std::numeric_limits<double>::infinity();
  Tensor h = x;
  for (std::size_t k = 0; k + 1 < m.layers.size(); ++k) {
    h = kernels::add_row(kernels::matmul(h, m.layers[k].weight), m.layers[k].bias);
    for (double a : h.data()) margin = std::min(margin, std::abs(a));
    h = kernels::relu(h);
  }
  return margin;
}

inline Tensor uniform_matrix(Rng& rng, std::size_t r, std::size_t c, double lo, double hi) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<int> y(n);
  for (int& v : y) v = static_cast<int>(rng.index(classes));
  return y;
}

struct SmallProblem {
  ClassifierParams u;
  Tensor x;
  std::vector<int> y;
};

/// A random classifier and batch whose ReLUs all sit at least `margin`
/// away from their kink.
inline SmallProblem small_problem(std::uint64_t seed, double margin = 1e-3) {
  const std::size_t hidden[] = {6, 5};
  for (std::uint64_t attempt = 0;; ++attempt) {
    const std::uint64_t s = derive_seed(seed, "small-problem-" + std::to_string(attempt));
    Rng rng(s);
    SmallProblem p{init_classifier(s, 4, hidden, 3), uniform_matrix(rng, 5, 4, -1.0, 1.0),
                   random_labels(rng, 5, 3)};
    for (auto& l : p.u.layers)
      for (double& b : l.bias.data()) b = rng.uniform(-0.5, 0.5);
    if (relu_margin(p.u, p.x) >= margin || attempt >= 1000) return p;
  }
}

/// Parameter and input gradients against central differences of the eager
/// loss, h = 1e-5 * max(1, |coordinate|). Returns the largest relative error.
inline double first_order_error(std::uint64_t seed) {
  SmallProblem p = small_problem(seed);
  double worst = 0.0;

  const auto g = grad_params(p.u, p.x, p.y).blocks();
  auto blocks = p.u.blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t k = 0; k < blocks[b].size(); ++k) {
      const double orig = blocks[b][k];
      const double h = 1e-5 * std::max(1.0, std::abs(orig));
      blocks[b][k] = orig + h;
      const double up = loss_softmax_ce(forward_mlp(ClassifierParams::from_blocks(blocks), p.x), p.y);
      blocks[b][k] = orig - h;
      const double down = loss_softmax_ce(forward_mlp(ClassifierParams::from_blocks(blocks), p.x), p.y);
      blocks[b][k] = orig;
      worst = std::max(worst, rel_error(g[b][k], (up - down) / (2.0 * h)));
    }
  }

  const Tensor gx = grad_input(p.u, p.x, p.y);
  for (std::size_t i = 0; i < p.x.rows(); ++i) {
    const std::vector<int> yi{p.y[i]};
    for (std::size_t k = 0; k < p.x.cols(); ++k) {
      Tensor row = Tensor::matrix(1, p.x.cols());
      for (std::size_t c = 0; c < p.x.cols(); ++c) row(0, c) = p.x(i, c);
      const double orig = row(0, k);
      const double h = 1e-5 * std::max(1.0, std::abs(orig));
      row(0, k) = orig + h;
      const double up = loss_softmax_ce(forward_mlp(p.u, row), yi);
      row(0, k) = orig - h;
      const double down = loss_softmax_ce(forward_mlp(p.u, row), yi);
      worst = std::max(worst, rel_error(gx(i, k), (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

struct SecondOrderProblem {
  TapePayoff payoff;
  std::vector<Tensor> u;
  std::vector<Tensor> v;
};

/// Classifier risk on attack-network outputs, with inputs kept far enough
/// inside the box that the clip never binds.
inline SecondOrderProblem second_order_problem(std::uint64_t seed) {
  const std::size_t d = 3, classes = 2, n = 4;
  const std::size_t u_hidden[] = {5};
  const std::size_t v_hidden[] = {4};
  const double eta = 0.2;
  for (std::uint64_t attempt = 0;; ++attempt) {
    const std::uint64_t s = derive_seed(seed, "second-order-" + std::to_string(attempt));
    Rng rng(s);
    auto u = init_classifier(derive_seed(s, "u"), d, u_hidden, classes);
    auto v = init_attnet(derive_seed(s, "v"), d, classes, v_hidden);
    for (auto& l : u.layers)
      for (double& b : l.bias.data()) b = rng.uniform(-0.5, 0.5);
    for (auto& l : v.layers)
      for (double& b : l.bias.data()) b = rng.uniform(-0.5, 0.5);
    auto x = std::make_shared<const Tensor>(uniform_matrix(rng, n, d, -0.5, 0.5));
    auto y = std::make_shared<const std::vector<int>>(random_labels(rng, n, classes));
    const Tensor xin = kernels::concat_cols(*x, kernels::one_hot(*y, classes));
    const Tensor z = attnet_forward(v, *x, *y, eta).z;
    const bool ok = relu_margin(v, xin) >= 1e-2 && relu_margin(u, z) >= 1e-2;
    if (ok || attempt >= 1000) {
      TapePayoff f = [x, y, classes, eta](Tape& t, std::span<const Var> uu, std::span<const Var> vv) {
        return attnet_risk_on_tape(t, uu, vv, *x, *y, classes, eta);
      };
      return {f, u.blocks(), v.blocks()};
    }
  }
}

/// Double-backprop gradient of 0.5 ||df/dv||^2 against central differences
/// in u. `negate` flips the double-backprop result (a deliberate fault used
/// to show the check can fail).
inline double second_order_error(std::uint64_t seed, bool negate = false) {
  const auto p = second_order_problem(seed);
  auto exact = grad_of_gradnorm(p.payoff, p.u, p.v, SecondOrderMode::DoubleBackprop);
  const auto approx = grad_of_gradnorm(p.payoff, p.u, p.v, SecondOrderMode::FiniteDifference, 1e-4);
  double worst = 0.0;
  for (std::size_t b = 0; b < exact.size(); ++b) {
    for (std::size_t k = 0; k < exact[b].size(); ++k) {
      const double e = negate ? -exact[b][k] : exact[b][k];
      worst = std::max(worst, rel_error(e, approx[b][k], 1e-6));
    }
  }
  return worst;
}

inline std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", x);
  return buf;
}

inline CheckResult check_first_order(std::size_t seeds = 20) {
  double worst = 0.0;
  for (std::size_t s = 0; s < seeds; ++s) worst = std::max(worst, first_order_error(s));
  return {"first-order gradients vs central differences", worst < 1e-6, worst,
          "max relative error " + sci(worst) + " (limit 1e-6)"};
}

inline CheckResult check_second_order(std::size_t seeds = 20, bool negate = false) {
  double worst = 0.0;
  for (std::size_t s = 0; s < seeds; ++s) worst = std::max(worst, second_order_error(s, negate));
  return {"second-order gradient-norm gradients vs central differences", worst < 1e-4, worst,
          "max relative error " + sci(worst) + " (limit 1e-4)"};
}

inline double scalar_penalty_gradient(const std::function<Var(Tape&, Var, Var)>& f, double u,
                                      double v) {
  TapePayoff p = [f](Tape& t, std::span<const Var> uu, std::span<const Var> vv) {
    return f(t, uu[0], vv[0]);
  };
  const std::vector<Tensor> us{Tensor::scalar(u)}, vs{Tensor::scalar(v)};
  return grad_of_gradnorm(p, us, vs)[0].item();
}

inline CheckResult check_analytic_second_order() {
  const double a = scalar_penalty_gradient([](Tape& t, Var u, Var v) { return t.mul(u, v); }, 3.0, 0.5);
  const double b = scalar_penalty_gradient(
      [](Tape& t, Var u, Var v) { return t.mul(t.mul(u, u), t.mul(v, v)); }, 1.0, 2.0);
  const double err = std::max(std::abs(a - 3.0), std::abs(b - 32.0));
  return {"analytic penalty gradients (uv -> u, u^2 v^2 -> 8u^3v^2)", err <= 1e-12, err,
          "uv at u=3: " + std::to_string(a) + ", u^2v^2 at (1,2): " + std::to_string(b)};
}

struct BilinearRun {
  double final_norm = 0.0;
  double min_norm = 0.0;
  std::size_t first_below = 0;  // first iterate index with norm < 1e-3, or iterations + 1
};

/// Plays f(u, v) = uv from (1, 1) with plain gradient steps.
inline BilinearRun bilinear_run(double gamma, std::size_t iterations = 2000, double lambda = 0.1,
                                double sigma = 0.1) {
  GameConfig cfg;
  cfg.iterations = iterations;
  cfg.defender_rate = Schedule{lambda};
  cfg.attacker_rate = Schedule{sigma};
  cfg.penalty = Schedule{gamma};
  cfg.optimizer = OptimizerKind::Sgd;
  TapePayoff f = [](Tape& t, std::span<const Var> u, std::span<const Var> v) { return t.mul(u[0], v[0]); };
  BilinearRun run;
  run.min_norm = std::sqrt(2.0);
  run.first_below = iterations + 1;
  auto norm_of = [](std::span<const Tensor> u, std::span<const Tensor> v) {
    return std::hypot(u[0].item(), v[0].item());
  };
  const auto sol = minimax_optimize([f](std::size_t) { return f; }, {Tensor::scalar(1.0)},
                                    {Tensor::scalar(1.0)}, cfg, [&](const GameStep& s) {
                                      const double n = norm_of(s.u, s.v);
                                      run.min_norm = std::min(run.min_norm, n);
                                      if (n < 1e-3 && run.first_below > iterations) run.first_below = s.iteration;
                                    });
  run.final_norm = norm_of(sol.u, sol.v);
  run.min_norm = std::min(run.min_norm, run.final_norm);
  if (run.final_norm < 1e-3 && run.first_below > iterations) run.first_below = iterations;
  return run;
}

inline CheckResult check_bilinear_contrast() {
  const auto penalized = bilinear_run(1.0);
  const auto plain = bilinear_run(0.0);
  const bool ok = penalized.final_norm < 1e-3 && plain.min_norm >= 1.0;
  return {"bilinear game: penalized play contracts, plain descent/ascent does not", ok,
          penalized.final_norm,
          "penalized final norm " + std::to_string(penalized.final_norm) +
              ", plain minimum norm " + std::to_string(plain.min_norm)};
}

inline CheckResult check_lemma1(std::size_t random_games = 50, std::size_t resolution = 201) {
  std::vector<PayoffFn> games = toy_game_suite();
  for (std::size_t k = 0; k < random_games; ++k) {
    games.push_back(random_polynomial_game(derive_seed(k, "lemma1-sweep")));
  }
  std::size_t failures = 0;
  std::string first;
  for (std::size_t k = 0; k < games.size(); ++k) {
    const auto r = lemma1_check(games[k], resolution, 100, derive_seed(k, "lemma1-probes"));
    if (!r.all_hold() || r.maximin.value > r.minimax.value) {
      if (failures++ == 0) first = games[k].name;
    }
  }
  return {"minimax/maximin ordering properties on grid games", failures == 0,
          static_cast<double>(failures),
          std::to_string(games.size()) + " games, " + std::to_string(failures) + " failing" +
              (first.empty() ? "" : " (first: " + first + ")")};
}

/// Every check run by the `check` subcommand.
inline std::vector<CheckResult> run_all(bool negate_penalty = false) {
  return {check_first_order(), check_second_order(20, negate_penalty), check_analytic_second_order(),
          check_bilinear_contrast(), check_lemma1()};
}

}  // namespace advgame::verify
