#pragma once

// Reference implementations used as test oracles. Nothing here touches the
// tape: forward passes are straight loops in long double and derivatives are
// central differences of those loops.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "advgame/advgame.hpp"

namespace oracle {

using advgame::ClassifierParams;
using advgame::AttackNetParams;
using advgame::Tensor;
using LD = long double;
using Matrix = std::vector<std::vector<LD>>;

/// Weights as nested long double arrays, one entry per layer.
struct RefLayer {
  Matrix w;             // in x out
  std::vector<LD> b;    // out
};
using RefNet = std::vector<RefLayer>;

template <class Tag>
RefNet to_ref(const advgame::Mlp<Tag>& m) {
  RefNet net;
  for (const auto& l : m.layers) {
    RefLayer r;
    r.w.assign(l.weight.rows(), std::vector<LD>(l.weight.cols()));
    for (std::size_t i = 0; i < l.weight.rows(); ++i)
      for (std::size_t j = 0; j < l.weight.cols(); ++j) r.w[i][j] = l.weight(i, j);
    r.b.assign(l.bias.data().begin(), l.bias.data().end());
    net.push_back(std::move(r));
  }
  return net;
}

inline Matrix to_ref(const Tensor& t) {
  Matrix m(t.rows(), std::vector<LD>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

/// Affine layers with ReLU between them, none after the last.
inline std::vector<LD> forward_row(const RefNet& net, std::vector<LD> h) {
  for (std::size_t k = 0; k < net.size(); ++k) {
    const auto& l = net[k];
    std::vector<LD> next(l.b);
    for (std::size_t i = 0; i < h.size(); ++i)
      for (std::size_t j = 0; j < next.size(); ++j) next[j] += h[i] * l.w[i][j];
    if (k + 1 < net.size())
      for (auto& a : next) a = a > 0 ? a : 0;
    h = std::move(next);
  }
  return h;
}

inline Matrix forward(const RefNet& net, const Matrix& x) {
  Matrix out;
  for (const auto& row : x) out.push_back(forward_row(net, row));
  return out;
}

inline LD cross_entropy_row(const std::vector<LD>& logits, int y) {
  const LD m = *std::max_element(logits.begin(), logits.end());
  LD s = 0;
  for (LD z : logits) s += std::exp(z - m);
  return m + std::log(s) - logits[static_cast<std::size_t>(y)];
}

inline LD mean_cross_entropy(const Matrix& logits, const std::vector<int>& y) {
  LD s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += cross_entropy_row(logits[i], y[i]);
  return s / static_cast<LD>(y.size());
}

/// Mean loss of the classifier on clip(x + eta * tanh(v([x, onehot(y)]))).
inline LD attnet_risk(const RefNet& u, const RefNet& v, const Matrix& x, const std::vector<int>& y,
                      std::size_t classes, LD eta) {
  Matrix z;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<LD> in = x[i];
    for (std::size_t c = 0; c < classes; ++c) in.push_back(static_cast<int>(c) == y[i] ? 1 : 0);
    const auto dir = forward_row(v, in);
    std::vector<LD> zi(x[i].size());
    for (std::size_t k = 0; k < zi.size(); ++k) {
      zi[k] = std::clamp<LD>(x[i][k] + eta * std::tanh(dir[k]), -1, 1);
    }
    z.push_back(std::move(zi));
  }
  return mean_cross_entropy(forward(u, z), y);
}

/// Flat views over every parameter of a RefNet (W then b per layer).
inline std::vector<LD*> coordinates(RefNet& net) {
  std::vector<LD*> out;
  for (auto& l : net) {
    for (auto& row : l.w)
      for (auto& w : row) out.push_back(&w);
    for (auto& b : l.b) out.push_back(&b);
  }
  return out;
}

/// Central difference of f() in the coordinate *p with step h * max(1, |p|).
template <class F>
LD central_difference(LD* p, LD h_rel, F&& f) {
  const LD orig = *p;
  const LD h = h_rel * std::max<LD>(1, std::fabs(orig));
  *p = orig + h;
  const LD up = f();
  *p = orig - h;
  const LD down = f();
  *p = orig;
  return (up - down) / (2 * h);
}

/// d(mean loss)/d(params), flattened in W0, b0, W1, b1, ... order.
inline std::vector<LD> param_gradient(const ClassifierParams& params, const Tensor& x,
                                      const std::vector<int>& y, LD h_rel = 1e-5L) {
  RefNet net = to_ref(params);
  const Matrix xr = to_ref(x);
  std::vector<LD> g;
  for (LD* p : coordinates(net)) {
    g.push_back(central_difference(p, h_rel, [&] { return mean_cross_entropy(forward(net, xr), y); }));
  }
  return g;
}

/// Row i holds d l(x_i, y_i) / d x_i.
inline Matrix input_gradient(const ClassifierParams& params, const Tensor& x, const std::vector<int>& y,
                             LD h_rel = 1e-5L) {
  const RefNet net = to_ref(params);
  Matrix xr = to_ref(x);
  Matrix g(xr.size(), std::vector<LD>(xr[0].size()));
  for (std::size_t i = 0; i < xr.size(); ++i) {
    for (std::size_t k = 0; k < xr[i].size(); ++k) {
      g[i][k] = central_difference(&xr[i][k], h_rel,
                                   [&] { return cross_entropy_row(forward_row(net, xr[i]), y[i]); });
    }
  }
  return g;
}

/// d/du of 0.5 ||df/dv||^2 for the attack-network risk, by nested central
/// differences: the inner gradient in v uses h_inner, the outer one h_outer.
inline std::vector<LD> gradnorm_gradient(const ClassifierParams& u, const AttackNetParams& v,
                                         const Tensor& x, const std::vector<int>& y,
                                         std::size_t classes, LD eta, LD h_outer = 1e-4L,
                                         LD h_inner = 1e-6L) {
  RefNet ur = to_ref(u);
  RefNet vr = to_ref(v);
  const Matrix xr = to_ref(x);
  const auto vc = coordinates(vr);
  auto half_norm = [&] {
    LD s = 0;
    for (LD* p : vc) {
      const LD g = central_difference(p, h_inner, [&] { return attnet_risk(ur, vr, xr, y, classes, eta); });
      s += g * g;
    }
    return s / 2;
  };
  std::vector<LD> out;
  for (LD* p : coordinates(ur)) out.push_back(central_difference(p, h_outer, half_norm));
  return out;
}

inline double rel_err(LD a, LD b, LD floor = 1e-7L) {
  return static_cast<double>(std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor}));
}

inline std::vector<double> flatten(const std::vector<Tensor>& blocks) {
  std::vector<double> out;
  for (const auto& b : blocks) out.insert(out.end(), b.data().begin(), b.data().end());
  return out;
}


/// Largest relative error of the tape's parameter and input gradients
/// against the oracles on one small random problem.
inline double first_order_worst(std::uint64_t seed) {
  const auto p = advgame::verify::small_problem(seed);
  double worst = 0.0;
  const auto got = flatten(advgame::grad_params(p.u, p.x, p.y).blocks());
  const auto want = param_gradient(p.u, p.x, p.y);
  for (std::size_t k = 0; k < got.size(); ++k) worst = std::max(worst, rel_err(got[k], want[k]));
  const Tensor gx = advgame::grad_input(p.u, p.x, p.y);
  const auto wx = input_gradient(p.u, p.x, p.y);
  for (std::size_t i = 0; i < gx.rows(); ++i)
    for (std::size_t k = 0; k < gx.cols(); ++k) worst = std::max(worst, rel_err(gx(i, k), wx[i][k]));
  return worst;
}

/// Largest relative error of grad_of_gradnorm on the attack-network risk
/// against nested central differences, over `cases` random problems whose
/// ReLUs stay clear of their kinks.
inline double second_order_worst(std::size_t cases) {
  using namespace advgame;
  const std::size_t u_hidden[] = {5}, v_hidden[] = {4};
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; checked < cases; ++seed) {
    Rng rng(derive_seed(seed, "oracle-second-order"));
    auto u = init_classifier(rng.next_u64(), 3, u_hidden, 2);
    auto v = init_attnet(rng.next_u64(), 3, 2, v_hidden);
    for (auto& l : u.layers)
      for (double& b : l.bias.data()) b = rng.uniform(-0.5, 0.5);
    for (auto& l : v.layers)
      for (double& b : l.bias.data()) b = rng.uniform(-0.5, 0.5);
    const Tensor x = verify::uniform_matrix(rng, 4, 3, -0.5, 0.5);
    const auto y = verify::random_labels(rng, 4, 2);
    const double eta = 0.2;
    const Tensor xin = kernels::concat_cols(x, kernels::one_hot(y, 2));
    if (verify::relu_margin(v, xin) < 1e-2 || verify::relu_margin(u, attnet_forward(v, x, y, eta).z) < 1e-2) {
      continue;
    }
    ++checked;
    const TapePayoff f = [&](Tape& t, std::span<const Var> uu, std::span<const Var> vv) {
      return attnet_risk_on_tape(t, uu, vv, x, y, 2, eta);
    };
    const auto got = flatten(grad_of_gradnorm(f, u.blocks(), v.blocks()));
    const auto want = gradnorm_gradient(u, v, x, y, 2, eta);
    for (std::size_t k = 0; k < got.size(); ++k) worst = std::max(worst, rel_err(got[k], want[k], 1e-6L));
  }
  return worst;
}

/// Whitespace-separated numbers from one line of a text fixture.
inline std::vector<double> parse_numbers(const std::string& line) {
  std::istringstream in(line);
  std::vector<double> out;
  double v;
  while (in >> v) out.push_back(v);
  return out;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

inline std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string fixture(const std::string& name) { return std::string(ADVGAME_FIXTURES) + "/" + name; }

}  // namespace oracle
