#ifndef LATNET_MATRIX_HPP
#define LATNET_MATRIX_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "latnet/errors.hpp"

namespace latnet {

/// Dense row-major matrix of doubles. This is the storage type for
/// observations, weight matrices, distance matrices and clustering
/// indicators throughout the library.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double value = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, value) {}

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  bool operator==(const DenseMatrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dimensions differ");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline double max_abs(const DenseMatrix& a) {
  double m = 0.0;
  for (double v : a.storage()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionMismatch("max_abs_diff: shapes differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.storage().size(); ++i)
    m = std::max(m, std::abs(a.storage()[i] - b.storage()[i]));
  return m;
}

inline double frobenius_norm(const DenseMatrix& a) {
  double s = 0.0;
  for (double v : a.storage()) s += v * v;
  return std::sqrt(s);
}

inline bool is_symmetric(const DenseMatrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol) return false;
  return true;
}

inline bool all_finite(const DenseMatrix& a) {
  for (double v : a.storage())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace latnet

#endif  // LATNET_MATRIX_HPP
