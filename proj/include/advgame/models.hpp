#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "advgame/error.hpp"
#include "advgame/mlp.hpp"
#include "advgame/random.hpp"
#include "advgame/tape.hpp"
#include "advgame/tensor.hpp"

namespace advgame {

namespace detail {

template <class Tag>
Mlp<Tag> init_mlp(std::uint64_t seed, std::size_t in, std::span<const std::size_t> hidden,
                  std::size_t out) {
  if (in == 0 || out == 0) throw DimensionError("network dimensions must be positive");
  for (std::size_t h : hidden) {
    if (h == 0) throw DimensionError("hidden layer sizes must be positive");
  }
  Rng rng(seed);
  Mlp<Tag> m;
  std::size_t fan_in = in;
  auto add_layer = [&](std::size_t fan_out) {
    // He-uniform: U(-a, a) with a = sqrt(6 / fan_in) has variance 2 / fan_in.
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor w = Tensor::matrix(fan_in, fan_out);
    for (double& x : w.data()) x = rng.uniform(-a, a);
    m.layers.push_back(DenseLayer{std::move(w), Tensor::matrix(1, fan_out)});
    fan_in = fan_out;
  };
  for (std::size_t h : hidden) add_layer(h);
  add_layer(out);
  return m;
}

}  // namespace detail

/// Classifier d -> hidden... -> C with He-uniform weights and zero biases.
inline ClassifierParams init_classifier(std::uint64_t seed, std::size_t d,
                                        std::span<const std::size_t> hidden, std::size_t classes) {
  return detail::init_mlp<ClassifierTag>(seed, d, hidden, classes);
}

/// Attack network (d + C) -> hidden... -> d.
inline AttackNetParams init_attnet(std::uint64_t seed, std::size_t d, std::size_t classes,
                                   std::span<const std::size_t> hidden) {
  return detail::init_mlp<AttackNetTag>(seed, d + classes, hidden, d);
}

/// Same architecture with every parameter set to zero.
template <class Tag>
Mlp<Tag> zeros_like(const Mlp<Tag>& m) {
  Mlp<Tag> z = m;
  for (auto& l : z.layers) {
    std::fill(l.weight.data().begin(), l.weight.data().end(), 0.0);
    std::fill(l.bias.data().begin(), l.bias.data().end(), 0.0);
  }
  return z;
}

enum class Norm { Linf };

/// Perturbed inputs z with the clean inputs they came from.
struct PerturbedBatch {
  Tensor z;
  Tensor x;
  double eta = 0.0;
  Norm norm = Norm::Linf;

  /// Largest |z - x| and largest |z| over all entries.
  double max_perturbation() const { return max_abs(kernels::sub(z, x)); }
  double max_magnitude() const { return max_abs(z); }

  bool satisfies_constraints(double tol = 1e-12) const {
    return max_perturbation() <= eta + tol && max_magnitude() <= 1.0 + tol;
  }
};

/// z = clip(x + eta * tanh(net(x ++ onehot(y))), -1, 1).
inline PerturbedBatch attnet_forward(const AttackNetParams& v, const Tensor& x,
                                     std::span<const int> labels, double eta) {
  const std::size_t classes = attnet_label_classes(v);
  if (x.cols() != attnet_feature_dim(v)) {
    throw DimensionError("attnet_forward: input has " + std::to_string(x.cols()) +
                         " columns, attack network expects " +
                         std::to_string(attnet_feature_dim(v)));
  }
  if (labels.size() != x.rows()) throw DimensionError("attnet_forward: label count mismatch");
  const Tensor input = kernels::concat_cols(x, kernels::one_hot(labels, classes));
  const Tensor direction = kernels::tanh(forward_mlp(v, input));
  Tensor z = kernels::clip(kernels::add(x, kernels::scale(direction, eta)), -1.0, 1.0);
  return PerturbedBatch{std::move(z), x, eta, Norm::Linf};
}

/// Tape version of attnet_forward; returns z.
inline Var attnet_on_tape(Tape& tape, std::span<const Var> v_blocks, Var x,
                          std::span<const int> labels, std::size_t classes, double eta) {
  const Var input = tape.concat_cols(x, tape.constant(kernels::one_hot(labels, classes)));
  const Var direction = tape.tanh(mlp_on_tape(tape, v_blocks, input));
  return tape.clip(tape.add(x, tape.scale(direction, eta)), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Parameter files
//
//   "ADVG1"                      5 bytes
//   int32 layer_count            little-endian
//   layer_count x (int32 in, int32 out)
//   for each layer: in*out weights (row-major), then out biases,
//   all as little-endian IEEE-754 binary64.
// ---------------------------------------------------------------------------

inline constexpr char kParamMagic[5] = {'A', 'D', 'V', 'G', '1'};

namespace detail {

inline void put_i32(std::vector<unsigned char>& out, std::int32_t v) {
  const auto u = static_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((u >> (8 * i)) & 0xff));
}

inline void put_f64(std::vector<unsigned char>& out, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, sizeof u);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((u >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  std::int32_t i32(const char* what) {
    need(4, what);
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return static_cast<std::int32_t>(u);
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &u, sizeof v);
    return v;
  }
  std::span<const unsigned char> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(std::string("parameter file truncated while reading ") + what);
    }
  }
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace detail

template <class Tag>
std::vector<unsigned char> encode_params(const Mlp<Tag>& m) {
  m.validate();
  std::vector<unsigned char> out(std::begin(kParamMagic), std::end(kParamMagic));
  detail::put_i32(out, static_cast<std::int32_t>(m.layers.size()));
  for (const auto& l : m.layers) {
    detail::put_i32(out, static_cast<std::int32_t>(l.in()));
    detail::put_i32(out, static_cast<std::int32_t>(l.out()));
  }
  for (const auto& l : m.layers) {
    for (double w : l.weight.data()) detail::put_f64(out, w);
    for (double b : l.bias.data()) detail::put_f64(out, b);
  }
  return out;
}

template <class Tag>
Mlp<Tag> decode_params(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes);
  auto magic = r.take(sizeof kParamMagic, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kParamMagic))) {
    throw ParseError("not a parameter file (bad magic)");
  }
  const std::int32_t count = r.i32("layer count");
  if (count <= 0) throw ShapeError("parameter file declares " + std::to_string(count) + " layers");
  // Every layer needs at least 8 header bytes; reject absurd counts before allocating.
  if (static_cast<std::size_t>(count) > r.remaining() / 8) {
    throw ParseError("parameter file truncated while reading layer headers");
  }
  std::vector<std::pair<std::size_t, std::size_t>> dims;
  for (std::int32_t k = 0; k < count; ++k) {
    const std::int32_t in = r.i32("layer header");
    const std::int32_t out = r.i32("layer header");
    if (in <= 0 || out <= 0) {
      throw ShapeError("layer " + std::to_string(k) + ": declared shape " + std::to_string(in) +
                       "x" + std::to_string(out) + " is not positive");
    }
    if (!dims.empty() && dims.back().second != static_cast<std::size_t>(in)) {
      throw ShapeError("layer " + std::to_string(k) + ": declared input " + std::to_string(in) +
                       " does not match layer " + std::to_string(k - 1) + " output " +
                       std::to_string(dims.back().second));
    }
    dims.emplace_back(in, out);
  }
  Mlp<Tag> m;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    const auto [in, out] = dims[k];
    if (r.remaining() / 8 < in * out + out) {
      throw ParseError("parameter file truncated in layer " + std::to_string(k) + " payload");
    }
    Tensor w = Tensor::matrix(in, out);
    for (double& x : w.data()) x = r.f64("weights");
    Tensor b = Tensor::matrix(1, out);
    for (double& x : b.data()) x = r.f64("biases");
    m.layers.push_back(DenseLayer{std::move(w), std::move(b)});
  }
  if (r.remaining() != 0) {
    throw ParseError("parameter file has " + std::to_string(r.remaining()) + " trailing bytes");
  }
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    if (!m.layers[k].weight.all_finite() || !m.layers[k].bias.all_finite()) {
      throw ParseError("layer " + std::to_string(k) + " contains non-finite parameters");
    }
  }
  return m;
}

template <class Tag>
void save_params(const Mlp<Tag>& m, const std::filesystem::path& path) {
  detail::write_file(path, encode_params(m));
}

template <class Tag>
Mlp<Tag> load_params(const std::filesystem::path& path) {
  return decode_params<Tag>(detail::read_file(path));
}

inline ClassifierParams load_classifier(const std::filesystem::path& path) {
  return load_params<ClassifierTag>(path);
}

inline AttackNetParams load_attnet(const std::filesystem::path& path) {
  auto v = load_params<AttackNetTag>(path);
  if (v.input_dim() <= v.output_dim()) {
    throw ShapeError("attack network input " + std::to_string(v.input_dim()) +
                     " must exceed its output " + std::to_string(v.output_dim()));
  }
  return v;
}

}  // namespace advgame
