#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "advgame/diffcore.hpp"
#include "advgame/error.hpp"
#include "advgame/random.hpp"
#include "advgame/tape.hpp"

namespace advgame {

struct Box {
  double lo = -1.0;
  double hi = 1.0;
};

/// Scalar two-player payoff f(u, v) on a rectangle. u minimizes, v maximizes.
struct PayoffFn {
  std::string name;
  std::function<double(double u, double v)> eval;
  /// Same function on 1x1 tape values, for gradient play. Empty when the
  /// payoff is not differentiable.
  std::function<Var(Tape&, Var u, Var v)> on_tape;
  Box u_box;
  Box v_box;
  /// Known exact values, when available.
  std::optional<double> minimax_value;
  std::optional<double> maximin_value;

  bool differentiable() const { return static_cast<bool>(on_tape); }

  /// Adapts on_tape to the block-list payoff used by minimax_optimize.
  TapePayoff tape_payoff() const {
    if (!on_tape) throw Error("payoff '" + name + "' has no differentiable form");
    auto f = on_tape;
    return [f](Tape& tape, std::span<const Var> u, std::span<const Var> v) { return f(tape, u[0], v[0]); };
  }
};

inline double grid_point(const Box& b, std::size_t i, std::size_t resolution) {
  if (resolution == 1) return b.lo;
  return b.lo + (b.hi - b.lo) * static_cast<double>(i) / static_cast<double>(resolution - 1);
}

/// All payoff values on the grid, row-major with u as the row index.
struct PayoffGrid {
  std::size_t resolution = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * resolution + j]; }
};

inline PayoffGrid tabulate(const PayoffFn& game, std::size_t resolution) {
  if (resolution == 0) throw DimensionError("grid resolution must be positive");
  PayoffGrid g{resolution, std::vector<double>(resolution * resolution)};
  for (std::size_t i = 0; i < resolution; ++i) {
    const double u = grid_point(game.u_box, i, resolution);
    for (std::size_t j = 0; j < resolution; ++j) {
      const double f = game.eval(u, grid_point(game.v_box, j, resolution));
      if (!std::isfinite(f)) {
        throw NonFiniteError("payoff '" + game.name + "' is not finite at grid point (" +
                             std::to_string(i) + ", " + std::to_string(j) + ")");
      }
      g.values[i * resolution + j] = f;
    }
  }
  return g;
}

struct GridSolution {
  std::size_t resolution = 0;
  std::size_t u_index = 0;
  std::size_t v_index = 0;
  double u = 0.0;
  double v = 0.0;
  double value = 0.0;
};

namespace detail {

inline std::size_t argmax_in_row(const PayoffGrid& g, std::size_t i) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < g.resolution; ++j)
    if (g(i, j) > g(i, best)) best = j;
  return best;
}

inline std::size_t argmin_in_col(const PayoffGrid& g, std::size_t j) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < g.resolution; ++i)
    if (g(i, j) < g(best, j)) best = i;
  return best;
}

inline GridSolution solution_at(const PayoffFn& game, const PayoffGrid& g, std::size_t i,
                                std::size_t j) {
  return GridSolution{g.resolution,
                      i,
                      j,
                      grid_point(game.u_box, i, g.resolution),
                      grid_point(game.v_box, j, g.resolution),
                      g(i, j)};
}

inline GridSolution minimax_on(const PayoffFn& game, const PayoffGrid& g) {
  std::size_t best_i = 0, best_j = argmax_in_row(g, 0);
  for (std::size_t i = 1; i < g.resolution; ++i) {
    const std::size_t j = argmax_in_row(g, i);
    if (g(i, j) < g(best_i, best_j)) {
      best_i = i;
      best_j = j;
    }
  }
  return solution_at(game, g, best_i, best_j);
}

inline GridSolution maximin_on(const PayoffFn& game, const PayoffGrid& g) {
  std::size_t best_j = 0, best_i = argmin_in_col(g, 0);
  for (std::size_t j = 1; j < g.resolution; ++j) {
    const std::size_t i = argmin_in_col(g, j);
    if (g(i, j) > g(best_i, best_j)) {
      best_i = i;
      best_j = j;
    }
  }
  return solution_at(game, g, best_i, best_j);
}

}  // namespace detail

/// min over the u-grid of max over the v-grid. Ties go to the lowest index.
inline GridSolution grid_minimax(const PayoffFn& game, std::size_t resolution = 201) {
  return detail::minimax_on(game, tabulate(game, resolution));
}

/// max over the v-grid of min over the u-grid. Ties go to the lowest index.
inline GridSolution grid_maximin(const PayoffFn& game, std::size_t resolution = 201) {
  return detail::maximin_on(game, tabulate(game, resolution));
}

/// One ordering property: passes iff lhs <= rhs (+ tol) at every probe.
/// `lhs`/`rhs` are taken from the probe with the smallest margin.
struct PropertyResult {
  bool holds = true;
  double lhs = 0.0;
  double rhs = 0.0;
  std::size_t probes = 0;
};

struct Lemma1Report {
  std::string game;
  /// 1: f(u, v) <= f(u, v*(u))                   best attack against a fixed u
  /// 2: f(u*, v*(u*)) <= f(u, v*(u))              minimax defense
  /// 3: f(u*(v), v) <= f(u, v)                    best defense against a fixed v
  /// 4: f(u*(v), v) <= f(u*(v*), v*)              maximin attack
  /// 5: max_v min_u f <= min_u max_v f
  PropertyResult property[5];
  GridSolution minimax;
  GridSolution maximin;

  bool all_hold() const {
    for (const auto& p : property)
      if (!p.holds) return false;
    return true;
  }
};

/// Checks the five minimax/maximin ordering properties on the grid at
/// `probes` random grid points plus the two grid-optimal points. Failures
/// are reported, never thrown.
inline Lemma1Report lemma1_check(const PayoffFn& game, std::size_t resolution = 201,
                                 std::size_t probes = 100, std::uint64_t seed = 1,
                                 double tol = 0.0) {
  const PayoffGrid g = tabulate(game, resolution);
  Lemma1Report r;
  r.game = game.name;
  r.minimax = detail::minimax_on(game, g);
  r.maximin = detail::maximin_on(game, g);

  auto record = [tol](PropertyResult& p, double lhs, double rhs) {
    const bool ok = lhs <= rhs + tol;
    if (p.probes == 0 || rhs - lhs < p.rhs - p.lhs) {
      p.lhs = lhs;
      p.rhs = rhs;
    }
    p.holds = p.holds && ok;
    ++p.probes;
  };

  std::vector<std::pair<std::size_t, std::size_t>> points;
  Rng rng(seed);
  for (std::size_t k = 0; k < probes; ++k) points.emplace_back(rng.index(resolution), rng.index(resolution));
  points.emplace_back(r.minimax.u_index, r.minimax.v_index);
  points.emplace_back(r.maximin.u_index, r.maximin.v_index);

  for (auto [i, j] : points) {
    const double best_attack = g(i, detail::argmax_in_row(g, i));
    const double best_defense = g(detail::argmin_in_col(g, j), j);
    record(r.property[0], g(i, j), best_attack);
    record(r.property[1], r.minimax.value, best_attack);
    record(r.property[2], best_defense, g(i, j));
    record(r.property[3], best_defense, r.maximin.value);
  }
  record(r.property[4], r.maximin.value, r.minimax.value);
  return r;
}

// ---------------------------------------------------------------------------
// Toy games
// ---------------------------------------------------------------------------

/// f = sum c_ab u^a v^b over a + b <= degree, coefficients uniform in
/// [-1, 1]. Grid values are filled in at resolution 201.
inline PayoffFn random_polynomial_game(std::uint64_t seed, int degree = 3) {
  Rng rng(seed);
  struct Term {
    int a, b;
    double c;
  };
  std::vector<Term> terms;
  for (int a = 0; a <= degree; ++a)
    for (int b = 0; a + b <= degree; ++b) terms.push_back({a, b, rng.uniform(-1.0, 1.0)});

  PayoffFn game;
  game.name = "poly-" + std::to_string(seed);
  game.eval = [terms](double u, double v) {
    double s = 0.0;
    for (const auto& t : terms) s += t.c * std::pow(u, t.a) * std::pow(v, t.b);
    return s;
  };
  game.on_tape = [terms](Tape& tape, Var u, Var v) {
    Var s = tape.constant(Tensor::scalar(0.0));
    for (const auto& t : terms) {
      Var m = tape.constant(Tensor::scalar(t.c));
      for (int k = 0; k < t.a; ++k) m = tape.mul(m, u);
      for (int k = 0; k < t.b; ++k) m = tape.mul(m, v);
      s = tape.add(s, m);
    }
    return s;
  };
  const PayoffGrid g = tabulate(game, 201);
  game.minimax_value = detail::minimax_on(game, g).value;
  game.maximin_value = detail::maximin_on(game, g).value;
  return game;
}

/// Named fixtures with their minimax and maximin values on [-1, 1]^2.
inline std::vector<PayoffFn> toy_game_suite() {
  std::vector<PayoffFn> suite;

  PayoffFn bilinear;
  bilinear.name = "bilinear";
  bilinear.eval = [](double u, double v) { return u * v; };
  bilinear.on_tape = [](Tape& t, Var u, Var v) { return t.mul(u, v); };
  bilinear.minimax_value = 0.0;
  bilinear.maximin_value = 0.0;
  suite.push_back(bilinear);

  PayoffFn quadratic;
  quadratic.name = "separable-quadratic";
  quadratic.eval = [](double u, double v) { return u * u - v * v; };
  quadratic.on_tape = [](Tape& t, Var u, Var v) { return t.sub(t.mul(u, u), t.mul(v, v)); };
  quadratic.minimax_value = 0.0;
  quadratic.maximin_value = 0.0;
  suite.push_back(quadratic);

  PayoffFn distance;
  distance.name = "squared-difference";
  distance.eval = [](double u, double v) { return (u - v) * (u - v); };
  distance.on_tape = [](Tape& t, Var u, Var v) {
    const Var d = t.sub(u, v);
    return t.mul(d, d);
  };
  distance.minimax_value = 1.0;
  distance.maximin_value = 0.0;
  suite.push_back(distance);

  PayoffFn constant;
  constant.name = "constant";
  constant.eval = [](double, double) { return 0.7; };
  constant.on_tape = [](Tape& t, Var u, Var v) {
    return t.affine(t.add(t.scale(u, 0.0), t.scale(v, 0.0)), 1.0, 0.7);
  };
  constant.minimax_value = 0.7;
  constant.maximin_value = 0.7;
  suite.push_back(constant);

  suite.push_back(random_polynomial_game(derive_seed(0, "toy-suite-polynomial")));
  return suite;
}

}  // namespace advgame
