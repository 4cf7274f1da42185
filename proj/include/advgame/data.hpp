#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advgame/error.hpp"
#include "advgame/models.hpp"
#include "advgame/random.hpp"
#include "advgame/tensor.hpp"

namespace advgame {

enum class Split { Train, Test };

/// Features in [-1, 1] with one integer label per row.
struct Dataset {
  Tensor features;  // N x d
  std::vector<int> labels;
  std::size_t classes = 0;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  void validate() const {
    if (labels.empty()) throw DimensionError("dataset is empty");
    if (features.rows() != labels.size()) {
      throw DimensionError("dataset has " + std::to_string(features.rows()) + " rows but " +
                           std::to_string(labels.size()) + " labels");
    }
    for (double v : features.data()) {
      if (!(v >= -1.0 - 1e-12 && v <= 1.0 + 1e-12)) {
        throw Error("dataset feature " + std::to_string(v) + " outside [-1, 1]");
      }
    }
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= classes) {
        throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) +
                         ")");
      }
    }
  }

  Tensor gather_features(std::span<const std::size_t> index) const {
    return kernels::gather_rows(features, index);
  }
  std::vector<int> gather_labels(std::span<const std::size_t> index) const {
    std::vector<int> out;
    out.reserve(index.size());
    for (auto i : index) out.push_back(labels[i]);
    return out;
  }

  /// First n rows.
  Dataset head(std::size_t n) const {
    n = std::min(n, size());
    std::vector<std::size_t> index(n);
    std::iota(index.begin(), index.end(), 0);
    return Dataset{gather_features(index), gather_labels(index), classes, split};
  }
};

/// Rows [0, n) and [n, N) of a dataset, tagged train and test.
inline std::pair<Dataset, Dataset> split_head(const Dataset& all, std::size_t n_first) {
  if (n_first == 0 || n_first >= all.size()) {
    throw DimensionError("split_head: both parts must be non-empty");
  }
  std::vector<std::size_t> a(n_first), b(all.size() - n_first);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), n_first);
  return {Dataset{all.gather_features(a), all.gather_labels(a), all.classes, Split::Train},
          Dataset{all.gather_features(b), all.gather_labels(b), all.classes, Split::Test}};
}

// ---------------------------------------------------------------------------
// MNIST IDX
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

namespace detail {

inline std::uint32_t be_u32(std::span<const unsigned char> b, std::size_t at) {
  return (static_cast<std::uint32_t>(b[at]) << 24) | (static_cast<std::uint32_t>(b[at + 1]) << 16) |
         (static_cast<std::uint32_t>(b[at + 2]) << 8) | static_cast<std::uint32_t>(b[at + 3]);
}

}  // namespace detail

/// Pixel byte p in [0, 255] to p / 127.5 - 1 in [-1, 1].
inline double idx_pixel_to_unit(unsigned char p) { return static_cast<double>(p) / 127.5 - 1.0; }

/// Parses an IDX image/label pair from memory. `limit` keeps only the first
/// rows (0 keeps all).
inline Dataset parse_idx(std::span<const unsigned char> images, std::span<const unsigned char> labels,
                         std::size_t classes = 10, std::size_t limit = 0) {
  if (images.size() < 16) throw ParseError("IDX image file truncated in header");
  if (labels.size() < 8) throw ParseError("IDX label file truncated in header");
  const auto img_magic = detail::be_u32(images, 0);
  const auto lbl_magic = detail::be_u32(labels, 0);
  if (img_magic != kIdxImageMagic) {
    throw ParseError("IDX image file has magic " + std::to_string(img_magic) + ", expected 2051");
  }
  if (lbl_magic != kIdxLabelMagic) {
    throw ParseError("IDX label file has magic " + std::to_string(lbl_magic) + ", expected 2049");
  }
  const std::size_t n = detail::be_u32(images, 4);
  const std::size_t rows = detail::be_u32(images, 8);
  const std::size_t cols = detail::be_u32(images, 12);
  const std::size_t n_labels = detail::be_u32(labels, 4);
  if (n != n_labels) {
    throw ParseError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                     std::to_string(n_labels) + " labels");
  }
  const std::size_t d = rows * cols;
  if (d == 0) throw ParseError("IDX images have zero pixels");
  if ((images.size() - 16) / d < n) throw ParseError("IDX image payload truncated");
  if (labels.size() - 8 < n) throw ParseError("IDX label payload truncated");

  const std::size_t keep = (limit == 0) ? n : std::min(limit, n);
  if (keep == 0) throw ParseError("IDX files contain no examples");
  Dataset ds;
  ds.classes = classes;
  ds.features = Tensor::matrix(keep, d);
  for (std::size_t i = 0; i < keep * d; ++i) ds.features[i] = idx_pixel_to_unit(images[16 + i]);
  ds.labels.resize(keep);
  for (std::size_t i = 0; i < keep; ++i) ds.labels[i] = labels[8 + i];
  ds.validate();
  return ds;
}

inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, std::size_t classes = 10,
                        std::size_t limit = 0) {
  const auto images = detail::read_file(images_path);
  const auto labels = detail::read_file(labels_path);
  return parse_idx(images, labels, classes, limit);
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches
// ---------------------------------------------------------------------------

inline constexpr std::size_t kCifarPixels = 3072;
inline constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

/// Per-image standardization: subtract the image mean, divide by the
/// standard deviation of all its pixels, clip to [-2, 2], halve. A constant
/// image maps to all zeros.
inline void cifar_normalize(std::span<const unsigned char> pixels, std::span<double> out) {
  const double n = static_cast<double>(pixels.size());
  double mean = 0.0;
  for (unsigned char p : pixels) mean += p;
  mean /= n;
  double var = 0.0;
  for (unsigned char p : pixels) var += (p - mean) * (p - mean);
  const double sd = std::sqrt(var / n);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    out[i] = (sd == 0.0) ? 0.0 : std::clamp((pixels[i] - mean) / sd, -2.0, 2.0) / 2.0;
  }
}

inline Dataset parse_cifar10(std::span<const std::span<const unsigned char>> files,
                             std::size_t limit = 0) {
  std::size_t total = 0;
  for (auto f : files) {
    if (f.size() % kCifarRecord != 0) {
      throw ParseError("CIFAR-10 batch of " + std::to_string(f.size()) +
                       " bytes is not a whole number of 3073-byte records");
    }
    total += f.size() / kCifarRecord;
  }
  if (limit != 0) total = std::min(total, limit);
  if (total == 0) throw ParseError("CIFAR-10 input contains no records");
  Dataset ds;
  ds.classes = 10;
  ds.features = Tensor::matrix(total, kCifarPixels);
  ds.labels.reserve(total);
  std::size_t row = 0;
  for (auto f : files) {
    for (std::size_t at = 0; at < f.size() && row < total; at += kCifarRecord, ++row) {
      ds.labels.push_back(f[at]);
      cifar_normalize(f.subspan(at + 1, kCifarPixels), ds.features.row(row));
    }
  }
  ds.validate();
  return ds;
}

inline Dataset load_cifar10(std::span<const std::filesystem::path> paths, std::size_t limit = 0) {
  std::vector<std::vector<unsigned char>> raw;
  for (const auto& p : paths) raw.push_back(detail::read_file(p));
  std::vector<std::span<const unsigned char>> views(raw.begin(), raw.end());
  return parse_cifar10(views, limit);
}

// ---------------------------------------------------------------------------
// Synthetic blobs
// ---------------------------------------------------------------------------

struct BlobShape {
  /// Standard deviation of the Gaussian noise around each center.
  double noise = 1.0;
  /// Features are tanh(squash * raw).
  double squash = 0.5;
};

/// Gaussian blobs squashed into [-1, 1] by tanh.
///
/// Class centers are (separation / 2) times random unit vectors, except that
/// with two classes the centers are antipodal so they sit exactly
/// `separation` apart. Row i has label i mod C, so any prefix is balanced.
inline Dataset synth_blobs(std::uint64_t seed, std::size_t n_per_class, std::size_t d,
                           std::size_t classes, double separation, BlobShape shape = {}) {
  if (!(separation > 0.0)) throw Error("synth_blobs: separation must be positive");
  if (n_per_class == 0 || d == 0 || classes < 2) {
    throw DimensionError("synth_blobs: need n_per_class >= 1, d >= 1, classes >= 2");
  }
  Rng rng(seed);
  std::vector<std::vector<double>> centers(classes, std::vector<double>(d));
  for (std::size_t k = 0; k < classes; ++k) {
    if (classes == 2 && k == 1) {
      for (std::size_t j = 0; j < d; ++j) centers[1][j] = -centers[0][j];
      break;
    }
    double norm = 0.0;
    for (double& c : centers[k]) {
      c = rng.normal();
      norm += c * c;
    }
    norm = std::sqrt(norm);
    for (double& c : centers[k]) c *= 0.5 * separation / norm;
  }

  const std::size_t n = n_per_class * classes;
  Dataset ds;
  ds.classes = classes;
  ds.features = Tensor::matrix(n, d);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % classes;
    ds.labels[i] = static_cast<int>(k);
    for (std::size_t j = 0; j < d; ++j) {
      ds.features(i, j) = std::tanh(shape.squash * (centers[k][j] + shape.noise * rng.normal()));
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Shuffled minibatch indices over [0, n). Each epoch is a fresh seeded
/// permutation; the last batch of an epoch may be short.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : n_(n), batch_(batch_size), rng_(seed), order_(n) {
    if (n == 0 || batch_size == 0) throw DimensionError("BatchStream: n and batch size must be positive");
    reshuffle();
  }

  std::vector<std::size_t> next() {
    if (pos_ >= n_) {
      reshuffle();
      ++epoch_;
    }
    const std::size_t end = std::min(n_, pos_ + batch_);
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end;
    return out;
  }

  std::size_t epoch() const { return epoch_; }
  std::size_t batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), 0);
    for (std::size_t i = n_; i > 1; --i) {
      std::swap(order_[i - 1], order_[rng_.index(i)]);
    }
    pos_ = 0;
  }

  std::size_t n_, batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace advgame
