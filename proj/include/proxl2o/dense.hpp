#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "proxl2o/error.hpp"

namespace proxl2o {

class DenseVector {
 public:
  DenseVector() = default;
  explicit DenseVector(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  DenseVector(std::initializer_list<double> values) : data_(values) {}
  explicit DenseVector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const DenseVector&, const DenseVector&) = default;

 private:
  std::vector<double> data_;
};

/// Row-major dense matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("DenseMatrix", "data length " + std::to_string(data_.size()) +
                                              " != " + std::to_string(rows_) + "x" +
                                              std::to_string(cols_));
    }
  }
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("DenseMatrix", "ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static DenseMatrix identity(std::size_t n, double scale = 1.0) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = scale;
    return m;
  }

  /// n x 1 column holding a copy of `v`.
  static DenseMatrix column(const DenseVector& v) { return DenseMatrix(v.size(), 1, v.values()); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  DenseVector to_vector() const { return DenseVector(data_); }
  bool same_shape(const DenseMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_string(const DenseMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// ---------------------------------------------------------------------------
// Vector kernels

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot", "length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
inline double dot(const DenseVector& a, const DenseVector& b) { return dot(a.span(), b.span()); }

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }
inline double norm2(const DenseVector& a) { return norm2(a.span()); }

inline double norm1(const DenseVector& a) {
  double s = 0.0;
  for (double v : a) s += std::abs(v);
  return s;
}

inline double norm_inf(const DenseVector& a) {
  double s = 0.0;
  for (double v : a) s = std::max(s, std::abs(v));
  return s;
}

/// y += alpha * x
inline void axpy(double alpha, const DenseVector& x, DenseVector& y) {
  if (x.size() != y.size()) throw DimensionError("axpy", "length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline DenseVector operator-(const DenseVector& a, const DenseVector& b) {
  if (a.size() != b.size()) throw DimensionError("sub", "length mismatch");
  DenseVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline DenseVector operator+(const DenseVector& a, const DenseVector& b) {
  if (a.size() != b.size()) throw DimensionError("add", "length mismatch");
  DenseVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline DenseVector operator*(double s, const DenseVector& a) {
  DenseVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
  return out;
}

inline double max_abs_diff(const DenseVector& a, const DenseVector& b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff", "length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Matrix kernels

/// y = A x
inline DenseVector gemv(const DenseMatrix& A, const DenseVector& x) {
  if (A.cols() != x.size()) {
    throw DimensionError("gemv", "A is " + shape_string(A) + " but x has length " +
                                     std::to_string(x.size()));
  }
  DenseVector y(A.rows());
  const double* xp = x.data();
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const double* a = A.data() + i * A.cols();
    double s = 0.0;
    for (std::size_t j = 0; j < A.cols(); ++j) s += a[j] * xp[j];
    y[i] = s;
  }
  return y;
}

/// y = A^T x
inline DenseVector gemv_t(const DenseMatrix& A, const DenseVector& x) {
  if (A.rows() != x.size()) {
    throw DimensionError("gemv_t", "A is " + shape_string(A) + " but x has length " +
                                       std::to_string(x.size()));
  }
  DenseVector y(A.cols());
  double* yp = y.data();
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const double* a = A.data() + i * A.cols();
    const double xi = x[i];
    for (std::size_t j = 0; j < A.cols(); ++j) yp[j] += a[j] * xi;
  }
  return y;
}

/// C = A B
inline DenseMatrix matmul(const DenseMatrix& A, const DenseMatrix& B) {
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul", shape_string(A) + " * " + shape_string(B));
  }
  DenseMatrix C(A.rows(), B.cols());
  const std::size_t inner = A.cols(), nc = B.cols();
  for (std::size_t i = 0; i < A.rows(); ++i) {
    double* c = C.data() + i * nc;
    const double* a = A.data() + i * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = a[k];
      const double* b = B.data() + k * nc;
      for (std::size_t j = 0; j < nc; ++j) c[j] += aik * b[j];
    }
  }
  return C;
}

/// C += A B^T
inline void matmul_nt_acc(const DenseMatrix& A, const DenseMatrix& B, DenseMatrix& C) {
  if (A.cols() != B.cols() || C.rows() != A.rows() || C.cols() != B.rows()) {
    throw DimensionError("matmul_nt", shape_string(A) + " * " + shape_string(B) + "^T");
  }
  const std::size_t inner = A.cols();
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const double* a = A.data() + i * inner;
    double* c = C.data() + i * C.cols();
    for (std::size_t j = 0; j < B.rows(); ++j) {
      const double* b = B.data() + j * inner;
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k) s += a[k] * b[k];
      c[j] += s;
    }
  }
}

/// C += A^T B
inline void matmul_tn_acc(const DenseMatrix& A, const DenseMatrix& B, DenseMatrix& C) {
  if (A.rows() != B.rows() || C.rows() != A.cols() || C.cols() != B.cols()) {
    throw DimensionError("matmul_tn", shape_string(A) + "^T * " + shape_string(B));
  }
  const std::size_t nc = B.cols();
  for (std::size_t r = 0; r < A.rows(); ++r) {
    const double* a = A.data() + r * A.cols();
    const double* b = B.data() + r * nc;
    for (std::size_t i = 0; i < A.cols(); ++i) {
      const double ari = a[i];
      if (ari == 0.0) continue;
      double* c = C.data() + i * nc;
      for (std::size_t j = 0; j < nc; ++j) c[j] += ari * b[j];
    }
  }
}

inline DenseMatrix transpose(const DenseMatrix& A) {
  DenseMatrix T(A.cols(), A.rows());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) T(j, i) = A(i, j);
  return T;
}

inline double column_norm(const DenseMatrix& A, std::size_t j) {
  double s = 0.0;
  for (std::size_t i = 0; i < A.rows(); ++i) s += A(i, j) * A(i, j);
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Spectral

/// sigma_max(A)^2 by power iteration on A^T A, starting from the normalized
/// all-ones vector. Stops when the Rayleigh quotient changes by less than
/// `tol` relative between sweeps.
inline double spectral_norm_sq(const DenseMatrix& A, double tol = 1e-10, std::size_t max_iter = 10000) {
  const std::size_t n = A.cols();
  if (n == 0 || A.rows() == 0) return 0.0;
  DenseVector v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  double est = 0.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    DenseVector Av = gemv(A, v);
    const double rq = dot(Av, Av);  // ||A v||^2 with ||v|| = 1
    DenseVector w = gemv_t(A, Av);
    const double wn = norm2(w);
    if (wn == 0.0) {
      // v is in the null space; zero matrix or unlucky start.
      bool any_nonzero = std::any_of(A.values().begin(), A.values().end(), [](double a) { return a != 0.0; });
      if (!any_nonzero) return 0.0;
      for (std::size_t j = 0; j < n; ++j) v[j] = (j % 2 == 0 ? 1.0 : -0.5) / std::sqrt(static_cast<double>(n));
      v = (1.0 / norm2(v)) * v;
      continue;
    }
    for (std::size_t j = 0; j < n; ++j) v[j] = w[j] / wn;
    // wn = ||A^T A v|| >= rq; the Rayleigh quotient of the new v is the
    // tighter lower bound, wn the looser estimate.
    if (it > 0 && std::abs(rq - est) <= tol * rq) {
      est = rq;
      DenseVector Av2 = gemv(A, v);
      return std::max(est, dot(Av2, Av2));
    }
    est = rq;
  }
  DenseVector Av = gemv(A, v);
  return std::max(est, dot(Av, Av));
}

}  // namespace proxl2o
