#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "causpref/errors.hpp"

namespace causpref {

// Dense row-major double matrix. Deliberately minimal: just the carriers and
// kernels the reverse-mode engine needs.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), v_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix scalar(double x) {
    Matrix m(1, 1);
    m(0, 0) = x;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return v_[r * cols_ + c];
  }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  std::vector<double>& values() { return v_; }
  const std::vector<double>& values() const { return v_; }

  bool same_shape(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool all_finite() const {
    for (double x : v_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.v_ == b.v_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> v_;
};

namespace detail {
inline void require_same_shape(const Matrix& a, const Matrix& b,
                               const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  }
}

inline void relu_inplace(Matrix& m) {
  for (double& x : m.values()) {
    if (x < 0.0) x = 0.0;
  }
}
}  // namespace detail

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
  Matrix c(a.rows(), b.cols());
  // ikj order keeps the inner loop contiguous in both b and c.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data() + k * b.cols();
      double* crow = c.data() + i * c.cols();
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "add");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.values()[i] += b.values()[i];
  return c;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  detail::require_same_shape(a, b, "hadamard");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.values()[i] *= b.values()[i];
  return c;
}

inline Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (double& x : c.values()) x *= s;
  return c;
}

inline double trace(const Matrix& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) t += a(i, i);
  return t;
}

// Maximum absolute column sum.
inline double norm1(const Matrix& a) {
  double best = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += std::fabs(a(i, j));
    if (s > best) best = s;
  }
  return best;
}

inline double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double x : a.values()) s += x * x;
  return std::sqrt(s);
}

// Matrix exponential by scaling-and-squaring over a truncated Taylor series.
// Squarings bring the scaled 1-norm under 0.5; terms are accumulated until
// their norm drops below 1e-16. Adequate for the dense D <= few-hundred
// matrices this library produces. Strictly triangular inputs come out exact:
// zero products stay zero, so the diagonal of the result is exactly one.
inline Matrix expm(const Matrix& b) {
  if (b.rows() != b.cols()) {
    throw ShapeError("expm: matrix must be square, got " + b.shape_str());
  }
  const std::size_t n = b.rows();
  int squarings = 0;
  for (double nrm = norm1(b); nrm > 0.5; nrm *= 0.5) ++squarings;
  Matrix x = scale(b, std::ldexp(1.0, -squarings));
  Matrix e = Matrix::identity(n);
  Matrix term = Matrix::identity(n);
  for (int k = 1; k <= 128; ++k) {
    term = scale(matmul(term, x), 1.0 / k);
    e = add(e, term);
    if (norm1(term) < 1e-16) break;
  }
  for (int i = 0; i < squarings; ++i) e = matmul(e, e);
  return e;
}

}  // namespace causpref
