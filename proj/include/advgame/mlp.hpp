#pragma once

#include <span>
#include <string>
#include <vector>

#include "advgame/error.hpp"
#include "advgame/tape.hpp"
#include "advgame/tensor.hpp"

namespace advgame {

/// y = x W + b with W[in x out] and b[1 x out].
struct DenseLayer {
  Tensor weight;
  Tensor bias;

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Fully-connected ReLU network: affine layers with ReLU between them and
/// no activation after the last one. The tag keeps classifier and attack
/// network parameters from being mixed up.
template <class Tag>
struct Mlp {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Parameters as a flat list of blocks: W0, b0, W1, b1, ...
  std::vector<Tensor> blocks() const {
    std::vector<Tensor> out;
    out.reserve(2 * layers.size());
    for (const auto& l : layers) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }

  /// Inverse of blocks(); shapes are taken from the blocks themselves.
  static Mlp from_blocks(std::span<const Tensor> blocks) {
    if (blocks.size() % 2 != 0) throw DimensionError("parameter blocks must come in (W, b) pairs");
    Mlp m;
    for (std::size_t i = 0; i < blocks.size(); i += 2) {
      m.layers.push_back(DenseLayer{blocks[i], blocks[i + 1]});
    }
    m.validate();
    return m;
  }

  /// Checks bias shapes, layer chaining, and finiteness.
  void validate() const {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      if (l.weight.rank() != 2 || l.bias.rank() != 2 || l.bias.rows() != 1 ||
          l.bias.cols() != l.weight.cols()) {
        throw DimensionError("layer " + std::to_string(k) + ": weight " +
                             shape_string(l.weight.shape()) + " and bias " +
                             shape_string(l.bias.shape()) + " do not match");
      }
      if (k > 0 && layers[k - 1].out() != l.in()) {
        throw DimensionError("layer " + std::to_string(k) + ": input " + std::to_string(l.in()) +
                             " does not chain to previous output " +
                             std::to_string(layers[k - 1].out()));
      }
      require_finite(l.weight, "layer weight");
      require_finite(l.bias, "layer bias");
    }
  }

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

struct ClassifierTag {};
struct AttackNetTag {};

/// Defender g(.; u): maps d features to C logits.
using ClassifierParams = Mlp<ClassifierTag>;
/// Attacker z(.; v): maps d features plus a one-hot label (d + C) to a raw
/// perturbation direction of size d.
using AttackNetParams = Mlp<AttackNetTag>;

inline std::size_t attnet_feature_dim(const AttackNetParams& v) { return v.output_dim(); }
inline std::size_t attnet_label_classes(const AttackNetParams& v) {
  return v.input_dim() - v.output_dim();
}

/// Plain (untaped) forward pass: logits or raw outputs for every row of x.
template <class Tag>
Tensor forward_mlp(const Mlp<Tag>& params, const Tensor& x) {
  if (params.layers.empty()) throw DimensionError("forward_mlp: network has no layers");
  if (x.cols() != params.input_dim()) {
    throw DimensionError("forward_mlp: input has " + std::to_string(x.cols()) +
                         " columns, network expects " + std::to_string(params.input_dim()));
  }
  Tensor h = x;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& l = params.layers[k];
    h = kernels::add_row(kernels::matmul(h, l.weight), l.bias);
    if (k + 1 < params.layers.size()) h = kernels::relu(h);
  }
  require_finite(h, "forward_mlp");
  return h;
}

/// Records the network on a tape. `blocks` are tape variables in the
/// W0, b0, W1, b1, ... order of Mlp::blocks().
inline Var mlp_on_tape(Tape& tape, std::span<const Var> blocks, Var x) {
  if (blocks.empty() || blocks.size() % 2 != 0) {
    throw DimensionError("mlp_on_tape: parameter blocks must come in (W, b) pairs");
  }
  if (tape.value(x).cols() != tape.value(blocks[0]).rows()) {
    throw DimensionError("mlp_on_tape: input has " + std::to_string(tape.value(x).cols()) +
                         " columns, network expects " +
                         std::to_string(tape.value(blocks[0]).rows()));
  }
  Var h = x;
  const std::size_t layers = blocks.size() / 2;
  for (std::size_t k = 0; k < layers; ++k) {
    h = tape.add_row(tape.matmul(h, blocks[2 * k]), blocks[2 * k + 1]);
    if (k + 1 < layers) h = tape.relu(h);
  }
  return h;
}

/// Puts every parameter block on the tape as a leaf.
inline std::vector<Var> leaves(Tape& tape, std::span<const Tensor> blocks, bool requires_grad = true) {
  std::vector<Var> out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) out.push_back(tape.leaf(b, requires_grad));
  return out;
}

inline std::vector<Tensor> values(const Tape& tape, std::span<const Var> vars) {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (Var v : vars) out.push_back(tape.value(v));
  return out;
}

}  // namespace advgame
