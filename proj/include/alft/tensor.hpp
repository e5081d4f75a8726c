#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "alft/error.hpp"

namespace alft {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "x" : "") << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. Entries are checked finite on
/// construction, so a Tensor that exists never holds NaN or Inf.
class Tensor {
 public:
  Tensor() : shape_{0} {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                           std::to_string(data_.size()) + " values");
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw NumericalError("non-finite value in tensor " + shape_str(shape_));
    }
  }

  static Tensor zeros(Shape shape) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor filled(Shape shape, double value) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor vector(std::vector<double> values) {
    Shape s{values.size()};
    return Tensor(std::move(s), std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  /// Rows/cols of a rank-2 tensor.
  std::size_t rows() const { return require_matrix(), shape_[0]; }
  std::size_t cols() const { return require_matrix(), shape_[1]; }

  const std::vector<double>& data() const noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<const double> row(std::size_t r) const {
    const auto w = shape_.back();
    return std::span<const double>(data_).subspan(r * w, w);
  }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void require_matrix() const {
    if (shape_.size() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

/// Epsilon added to the variance inside the square root of layer_norm.
inline constexpr double kLayerNormEps = 1e-12;

namespace detail {

inline void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

// Splits a shape around `axis` into (outer, extent, inner) for strided loops.
struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bd[p * n + j];
    }
  }
  return Tensor({m, n}, std::move(out));
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank2(a, "transpose");
  const auto m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a(i, j);
  return Tensor({n, m}, std::move(out));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor(a.shape(), std::move(out));
}

inline Tensor subtract(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "subtract");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor(a.shape(), std::move(out));
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "hadamard");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor(a.shape(), std::move(out));
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= factor;
  return Tensor(a.shape(), std::move(out));
}

/// Adds a vector along the last axis of `x` (row-vector broadcast).
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || bias.size() != x.shape().back()) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.data());
  const auto w = bias.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % w];
  return Tensor(x.shape(), std::move(out));
}

inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t width) {
  detail::require_rank2(x, "slice_cols");
  if (begin + width > x.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + width) + ") exceed " + shape_str(x.shape()));
  }
  const auto m = x.rows();
  std::vector<double> out(m * width);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < width; ++j) out[i * width + j] = x(i, begin + j);
  return Tensor({m, width}, std::move(out));
}

inline Tensor concat_cols(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const auto m = parts.front()->rows();
  std::size_t total = 0;
  for (const Tensor* p : parts) {
    detail::require_rank2(*p, "concat_cols");
    if (p->rows() != m) throw DimensionError("concat_cols: row counts differ");
    total += p->cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (const Tensor* p : parts) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p->cols(); ++j) out[i * total + offset + j] = (*p)(i, j);
    offset += p->cols();
  }
  return Tensor({m, total}, std::move(out));
}

/// Picks rows of `table` by index (embedding lookup).
inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  detail::require_rank2(table, "gather_rows");
  const auto w = table.cols();
  std::vector<double> out;
  out.reserve(ids.size() * w);
  for (auto id : ids) {
    if (id >= table.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(id) + " outside table of " +
                           std::to_string(table.rows()) + " rows");
    }
    auto r = table.row(id);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor({ids.size(), w}, std::move(out));
}

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  std::vector<double> out(x.size());
  const auto& d = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const auto base = o * s.extent * s.inner + in;
      double mx = d[base];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, d[base + k * s.inner]);
      double sum = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(d[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= sum;
    }
  }
  return Tensor(x.shape(), std::move(out));
}

/// Row softmax of a matrix.
inline Tensor softmax_rows(const Tensor& x) { return softmax(x, x.rank() - 1); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_pdf(double x) {
  static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

/// x * Phi(x) with the exact Gaussian CDF.
inline double gelu(double x) { return x * normal_cdf(x); }

inline double gelu_derivative(double x) { return normal_cdf(x) + x * normal_pdf(x); }

inline Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.data());
  for (double& v : out) v = gelu(v);
  return Tensor(x.shape(), std::move(out));
}

/// Standardizes each last-axis row, then applies gamma/beta:
///   y = (x - mean) * (1 / sqrt(var + kLayerNormEps)) * gamma + beta
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() == 0 || gamma.rank() != 1 || beta.rank() != 1 || gamma.size() != x.shape().back() ||
      beta.size() != x.shape().back()) {
    throw DimensionError("layer_norm: gamma/beta must match last extent of " + shape_str(x.shape()));
  }
  const auto w = x.shape().back();
  const auto rows = w == 0 ? 0 : x.size() / w;
  const auto inv_w = 1.0 / static_cast<double>(w);
  std::vector<double> out(x.size());
  std::vector<double> centered(w);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean *= inv_w;
    double var = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      centered[j] = row[j] - mean;
      var += centered[j] * centered[j];
    }
    var *= inv_w;
    const double inv_sd = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = centered[j] * inv_sd * gamma[j] + beta[j];
  }
  return Tensor(x.shape(), std::move(out));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

}  // namespace alft
