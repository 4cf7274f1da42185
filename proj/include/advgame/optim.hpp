#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "advgame/error.hpp"
#include "advgame/tensor.hpp"

namespace advgame {

enum class OptimizerKind { Sgd, Adam };

inline OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

/// First-order update rule over a list of parameter blocks. Adam uses
/// beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::span<const Tensor> like) : kind_(kind) {
    if (kind_ == OptimizerKind::Adam) {
      for (const auto& t : like) {
        m_.emplace_back(t.shape());
        v_.emplace_back(t.shape());
      }
    }
  }

  /// params -= rate * direction(grads)
  void descend(std::vector<Tensor>& params, std::span<const Tensor> grads, double rate) {
    apply(params, grads, -rate);
  }
  /// params += rate * direction(grads)
  void ascend(std::vector<Tensor>& params, std::span<const Tensor> grads, double rate) {
    apply(params, grads, rate);
  }

  OptimizerKind kind() const { return kind_; }

 private:
  void apply(std::vector<Tensor>& params, std::span<const Tensor> grads, double signed_rate) {
    if (params.size() != grads.size()) throw DimensionError("optimizer: block count mismatch");
    if (kind_ == OptimizerKind::Sgd) {
      for (std::size_t b = 0; b < params.size(); ++b) {
        kernels::require_same_shape(params[b], grads[b], "optimizer");
        for (std::size_t i = 0; i < params[b].size(); ++i) params[b][i] += signed_rate * grads[b][i];
      }
      return;
    }
    if (m_.size() != params.size()) throw DimensionError("optimizer: state/parameter mismatch");
    ++step_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
    for (std::size_t b = 0; b < params.size(); ++b) {
      kernels::require_same_shape(params[b], grads[b], "optimizer");
      for (std::size_t i = 0; i < params[b].size(); ++i) {
        const double g = grads[b][i];
        m_[b][i] = kBeta1 * m_[b][i] + (1.0 - kBeta1) * g;
        v_[b][i] = kBeta2 * v_[b][i] + (1.0 - kBeta2) * g * g;
        const double mhat = m_[b][i] / c1;
        const double vhat = v_[b][i] / c2;
        params[b][i] += signed_rate * mhat / (std::sqrt(vhat) + kEps);
      }
    }
  }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  OptimizerKind kind_;
  std::vector<Tensor> m_, v_;
  long long step_ = 0;
};

inline bool all_finite(std::span<const Tensor> blocks) {
  for (const auto& b : blocks)
    if (!b.all_finite()) return false;
  return true;
}

}  // namespace advgame
