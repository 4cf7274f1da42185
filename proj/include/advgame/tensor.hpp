#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "advgame/error.hpp"

namespace advgame {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles.
///
/// Every numeric value in the library (inputs, logits, parameters,
/// gradients) lives in a Tensor. Tape operations work on rank-2 tensors;
/// rank-1 and higher ranks are accepted by the constructors so loaders can
/// describe raw payloads before reshaping.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
      throw DimensionError("tensor shape " + shape_string(shape_) + " holds " +
                           std::to_string(element_count(shape_)) +
                           " elements but " + std::to_string(data_.size()) +
                           " were supplied");
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor(Shape{rows, cols}, fill);
  }
  static Tensor scalar(double value) { return Tensor(Shape{1, 1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    require_matrix();
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix();
    return shape_[1];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  /// The single entry of a 1x1 tensor.
  double item() const {
    if (data_.size() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_string(shape_));
    }
    return data_[0];
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }
  void require_matrix() const {
    if (shape_.size() != 2) {
      throw DimensionError("expected a matrix, got shape " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

/// Bitwise equality, distinguishing -0.0 from 0.0 and comparing NaN payloads.
inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 ||
          std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0);
}

inline void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NonFiniteError(std::string(what) + " produced a non-finite value");
}

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

/// Eager kernels shared by the tape and the plain forward passes.
namespace kernels {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = Tensor::matrix(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      if (s == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += s * brow[j];
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  Tensor out = Tensor::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}
inline Tensor affine(const Tensor& a, double alpha, double beta) {
  return map(a, [=](double x) { return alpha * x + beta; });
}
inline Tensor scale(const Tensor& a, double alpha) {
  return map(a, [=](double x) { return alpha * x; });
}

/// a[n x m] + b[1 x m] broadcast over rows.
inline Tensor add_row(const Tensor& a, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != a.cols()) {
    throw DimensionError("add_row: " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) += b[j];
  return out;
}

inline Tensor col_sum(const Tensor& a) {
  Tensor out = Tensor::matrix(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j);
  return out;
}

inline Tensor row_sum(const Tensor& a) {
  Tensor out = Tensor::matrix(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j);
    out[i] = s;
  }
  return out;
}

inline Tensor broadcast_rows(const Tensor& a, std::size_t n) {
  if (a.rows() != 1) throw DimensionError("broadcast_rows expects a single row");
  Tensor out = Tensor::matrix(n, a.cols());
  for (std::size_t i = 0; i < n; ++i)
    std::copy(a.data().begin(), a.data().end(), out.row(i).begin());
  return out;
}

inline Tensor broadcast_cols(const Tensor& a, std::size_t m) {
  if (a.cols() != 1) throw DimensionError("broadcast_cols expects a single column");
  Tensor out = Tensor::matrix(a.rows(), m);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) = a[i];
  return out;
}

inline double sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

inline Tensor relu(const Tensor& a) {
  return map(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

/// Derivative of relu, with the value at 0 defined as 0.
inline Tensor relu_mask(const Tensor& a) {
  return map(a, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& a) {
  return map(a, [](double x) { return std::tanh(x); });
}

inline Tensor clip(const Tensor& a, double lo, double hi) {
  return map(a, [=](double x) { return std::clamp(x, lo, hi); });
}

/// 1 where lo <= x <= hi, else 0.
inline Tensor clip_mask(const Tensor& a, double lo, double hi) {
  return map(a, [=](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

inline Tensor softmax_rows(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto in = a.row(i);
    auto o = out.row(i);
    const double m = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - m);
      z += o[j];
    }
    for (double& v : o) v /= z;
  }
  return out;
}

inline double log_sum_exp(std::span<const double> row) {
  const double m = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - m);
  return m + std::log(z);
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_cols: " + shape_string(a.shape()) + " | " + shape_string(b.shape()));
  }
  Tensor out = Tensor::matrix(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy(a.row(i).begin(), a.row(i).end(), out.row(i).begin());
    std::copy(b.row(i).begin(), b.row(i).end(), out.row(i).begin() + a.cols());
  }
  return out;
}

inline Tensor slice_cols(const Tensor& a, std::size_t offset, std::size_t width) {
  if (offset + width > a.cols()) throw DimensionError("slice_cols out of range");
  Tensor out = Tensor::matrix(a.rows(), width);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < width; ++j) out(i, j) = a(i, offset + j);
  return out;
}

inline Tensor pad_cols(const Tensor& a, std::size_t offset, std::size_t total) {
  if (offset + a.cols() > total) throw DimensionError("pad_cols out of range");
  Tensor out = Tensor::matrix(a.rows(), total);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, offset + j) = a(i, j);
  return out;
}

inline Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor out = Tensor::matrix(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw LabelError("label " + std::to_string(labels[i]) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
    out(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

/// Rows of `a` selected by `index`, in order.
inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  Tensor out = Tensor::matrix(index.size(), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto src = a.row(index[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline Tensor stack_rows(const Tensor& top, const Tensor& bottom) {
  if (top.cols() != bottom.cols()) throw DimensionError("stack_rows: column mismatch");
  Tensor out = Tensor::matrix(top.rows() + bottom.rows(), top.cols());
  std::copy(top.data().begin(), top.data().end(), out.data().begin());
  std::copy(bottom.data().begin(), bottom.data().end(), out.data().begin() + top.size());
  return out;
}

}  // namespace kernels
}  // namespace advgame
