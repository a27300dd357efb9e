#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sipldl/errors.hpp"

namespace sipldl {

/// Dense row-major matrix of doubles.
class Tensor2D {
 public:
  Tensor2D() = default;

  Tensor2D(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::Dimension,
            "data length " + std::to_string(data_.size()) + " does not match shape " + shape_string());
  }

  static Tensor2D from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      require(row.size() == c, ErrorKind::Dimension, "ragged initializer rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor2D(r, c, std::move(data));
  }

  static Tensor2D from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.front().size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      require(row.size() == c, ErrorKind::Dimension,
              "ragged rows: expected " + std::to_string(c) + " values, found " + std::to_string(row.size()));
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor2D(r, c, std::move(data));
  }

  static Tensor2D identity(std::size_t n) {
    Tensor2D t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  bool same_shape(const Tensor2D& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool all_finite() const noexcept {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor2D&, const Tensor2D&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Plain (non-differentiable) kernels shared by the autodiff ops and by the
// closed-form evaluators in bounds/graph.
namespace kernels {

inline void check_matmul(const Tensor2D& a, const Tensor2D& b, const char* what) {
  require(a.cols() == b.rows(), ErrorKind::Dimension,
          std::string(what) + ": cannot multiply " + a.shape_string() + " by " + b.shape_string());
}

/// a * b
inline Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  check_matmul(a, b, "matmul");
  Tensor2D out(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

/// a^T * b
inline Tensor2D matmul_tn(const Tensor2D& a, const Tensor2D& b) {
  require(a.rows() == b.rows(), ErrorKind::Dimension,
          "matmul_tn: cannot multiply transpose of " + a.shape_string() + " by " + b.shape_string());
  Tensor2D out(a.cols(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* brow = pb + r * m;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = pa[r * k + i];
      if (av == 0.0) continue;
      double* orow = po + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

/// a * b^T
inline Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b) {
  require(a.cols() == b.cols(), ErrorKind::Dimension,
          "matmul_nt: cannot multiply " + a.shape_string() + " by transpose of " + b.shape_string());
  Tensor2D out(a.rows(), b.rows());
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.data().data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b.data().data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out(i, j) = acc;
    }
  }
  return out;
}

inline Tensor2D transpose(const Tensor2D& a) {
  Tensor2D out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

/// Gram matrix of the rows, G = X X^T.
inline Tensor2D gram(const Tensor2D& x) { return matmul_nt(x, x); }

inline double row_norm(const Tensor2D& x, std::size_t r) {
  double s = 0.0;
  for (double v : x.row(r)) s += v * v;
  return std::sqrt(s);
}

}  // namespace kernels
}  // namespace sipldl
