#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "proxl2o/dense.hpp"
#include "proxl2o/prox.hpp"
#include "proxl2o/rng.hpp"

namespace proxl2o {

enum class SmoothKind { lasso_quadratic, logistic };

inline std::string_view to_string(SmoothKind k) {
  return k == SmoothKind::lasso_quadratic ? "lasso" : "logistic";
}

inline SmoothKind smooth_kind_from_string(std::string_view s) {
  if (s == "lasso" || s == "lasso_quadratic") return SmoothKind::lasso_quadratic;
  if (s == "logistic") return SmoothKind::logistic;
  throw Error("problem kind", "unknown kind '" + std::string(s) + "'");
}

struct LassoInstance {
  DenseMatrix A;
  DenseVector b;
  double lambda = 0.1;
  DenseVector x_true;  // generating sparse vector; empty for ingested data
};

struct LogisticInstance {
  DenseMatrix features;  // rows are samples a_i^T
  DenseVector labels;    // 0.0 or 1.0
  double lambda = 0.1;
  DenseVector x_true;
};

/// Numerically stable log(1 + e^z).
inline double log1p_exp(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// F(x) = f(x) + r(x) with f either the least-squares term 1/2||Ax - b||^2 or
/// the mean logistic loss, and r from the prox module.
class CompositeProblem {
 public:
  CompositeProblem(SmoothKind kind, DenseMatrix A, DenseVector b, Regularizer reg)
      : kind_(kind), A_(std::move(A)), b_(std::move(b)), reg_(reg) {
    if (A_.rows() != b_.size()) {
      throw DimensionError("CompositeProblem", "A is " + shape_string(A_) + " but b has length " +
                                                   std::to_string(b_.size()));
    }
    if (kind_ == SmoothKind::logistic) {
      for (std::size_t i = 0; i < b_.size(); ++i) {
        if (b_[i] != 0.0 && b_[i] != 1.0) {
          throw FormatError("CompositeProblem", "label at row " + std::to_string(i) + " is not 0/1");
        }
      }
    }
    lipschitz_ = kind_ == SmoothKind::lasso_quadratic
                     ? spectral_norm_sq(A_)
                     : spectral_norm_sq(A_) / (4.0 * static_cast<double>(std::max<std::size_t>(1, A_.rows())));
  }

  static CompositeProblem lasso(const LassoInstance& inst) {
    return CompositeProblem(SmoothKind::lasso_quadratic, inst.A, inst.b, {RegularizerKind::l1, inst.lambda});
  }
  static CompositeProblem logistic_l1(const LogisticInstance& inst) {
    return CompositeProblem(SmoothKind::logistic, inst.features, inst.labels, {RegularizerKind::l1, inst.lambda});
  }

  SmoothKind kind() const noexcept { return kind_; }
  const Regularizer& regularizer() const noexcept { return reg_; }
  const DenseMatrix& matrix() const noexcept { return A_; }
  const DenseVector& rhs() const noexcept { return b_; }
  std::size_t dim() const noexcept { return A_.cols(); }
  std::size_t rows() const noexcept { return A_.rows(); }

  /// Lipschitz constant of grad f: sigma_max(A)^2 for least squares,
  /// sigma_max(A)^2 / (4m) for logistic (h' <= 1/4).
  double lipschitz() const noexcept { return lipschitz_; }

  std::optional<double> f_star() const noexcept { return f_star_; }
  void set_f_star(double v) { f_star_ = v; }
  bool f_star_low_confidence() const noexcept { return f_star_low_confidence_; }
  void set_f_star_low_confidence(bool v) { f_star_low_confidence_ = v; }

  double smooth_value(const DenseVector& x) const {
    check_dim(x, "smooth_value");
    DenseVector z = gemv(A_, x);
    if (kind_ == SmoothKind::lasso_quadratic) {
      double s = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double r = z[i] - b_[i];
        s += r * r;
      }
      return 0.5 * s;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += log1p_exp(z[i]) - b_[i] * z[i];
    return s / static_cast<double>(z.size());
  }

  DenseVector grad_smooth(const DenseVector& x) const {
    check_dim(x, "grad_smooth");
    DenseVector z = gemv(A_, x);
    if (kind_ == SmoothKind::lasso_quadratic) {
      for (std::size_t i = 0; i < z.size(); ++i) z[i] -= b_[i];
      return gemv_t(A_, z);
    }
    const double inv_m = 1.0 / static_cast<double>(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = (logistic(z[i]) - b_[i]) * inv_m;
    return gemv_t(A_, z);
  }

  /// Hessian of f at x applied to v.
  DenseVector hess_vec(const DenseVector& x, const DenseVector& v) const {
    check_dim(v, "hess_vec");
    DenseVector Av = gemv(A_, v);
    if (kind_ == SmoothKind::logistic) {
      check_dim(x, "hess_vec");
      DenseVector z = gemv(A_, x);
      const double inv_m = 1.0 / static_cast<double>(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double h = logistic(z[i]);
        Av[i] *= h * (1.0 - h) * inv_m;
      }
    }
    return gemv_t(A_, Av);
  }

  double regularizer_value(const DenseVector& x) const { return proxl2o::regularizer_value(reg_, x); }

  double objective(const DenseVector& x) const { return smooth_value(x) + regularizer_value(x); }

  /// A fixed element of dF(x): grad f plus lambda*sign(x) for l1, sign(0) := 0.
  DenseVector subgradient(const DenseVector& x) const {
    DenseVector g = grad_smooth(x);
    if (reg_.kind == RegularizerKind::l1) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) g[i] += reg_.lambda;
        else if (x[i] < 0.0) g[i] -= reg_.lambda;
      }
    }
    return g;
  }

  DenseVector prox(const DenseVector& v, const DiagMetric& metric) const { return prox_composite(reg_, v, metric); }

  /// ||x - prox_{r,1/L}(x - grad f(x)/L)||, zero exactly at minimizers.
  double fixed_point_residual(const DenseVector& x) const {
    const double step = 1.0 / lipschitz_;
    DenseVector g = grad_smooth(x);
    DenseVector v = x;
    axpy(-step, g, v);
    return norm2(x - prox(v, DiagMetric::uniform(x.size(), step)));
  }

 private:
  void check_dim(const DenseVector& x, const char* op) const {
    if (x.size() != dim()) {
      throw DimensionError(op, "x has length " + std::to_string(x.size()) + ", problem dim " + std::to_string(dim()));
    }
  }

  SmoothKind kind_;
  DenseMatrix A_;
  DenseVector b_;
  Regularizer reg_;
  double lipschitz_ = 0.0;
  std::optional<double> f_star_;
  bool f_star_low_confidence_ = false;
};

inline double objective(const CompositeProblem& p, const DenseVector& x) { return p.objective(x); }
inline DenseVector grad_smooth(const CompositeProblem& p, const DenseVector& x) { return p.grad_smooth(x); }
inline double lipschitz(const CompositeProblem& p) { return p.lipschitz(); }

namespace detail {

inline DenseVector sparse_vector(RngStream& rng, std::size_t n, std::size_t s) {
  DenseVector x(n);
  auto support = sample_without_replacement(rng, n, s);
  for (std::size_t idx : support) x[idx] = rng.normal();
  return x;
}

inline void check_recipe(const char* op, std::size_t m, std::size_t n, std::size_t s, double lambda) {
  if (m < 1 || n < 1) throw Error(op, "m and n must be >= 1");
  if (s < 1 || s > n) throw Error(op, "sparsity must satisfy 1 <= s <= n (s=" + std::to_string(s) + ", n=" + std::to_string(n) + ")");
  if (!(lambda >= 0.0)) throw Error(op, "lambda must be >= 0");
}

}  // namespace detail

/// A i.i.d. N(0,1) with unit-norm columns, s-sparse Gaussian x*, b = A x*.
inline LassoInstance generate_lasso(RngStream& rng, std::size_t m, std::size_t n, std::size_t s, double lambda) {
  detail::check_recipe("generate_lasso", m, n, s, lambda);
  LassoInstance inst;
  inst.A = sample_gaussian_matrix(rng, m, n);
  for (std::size_t j = 0; j < n; ++j) {
    double nrm = column_norm(inst.A, j);
    if (nrm == 0.0) nrm = 1.0;
    for (std::size_t i = 0; i < m; ++i) inst.A(i, j) /= nrm;
  }
  inst.x_true = detail::sparse_vector(rng, n, s);
  inst.b = gemv(inst.A, inst.x_true);
  inst.lambda = lambda;
  return inst;
}

/// Features i.i.d. N(0,1), s-sparse Gaussian x*, labels 1(a_i^T x* >= 0).
inline LogisticInstance generate_logistic(RngStream& rng, std::size_t m, std::size_t n, std::size_t s, double lambda) {
  detail::check_recipe("generate_logistic", m, n, s, lambda);
  LogisticInstance inst;
  inst.features = sample_gaussian_matrix(rng, m, n);
  inst.x_true = detail::sparse_vector(rng, n, s);
  DenseVector z = gemv(inst.features, inst.x_true);
  inst.labels = DenseVector(m);
  for (std::size_t i = 0; i < m; ++i) inst.labels[i] = z[i] >= 0.0 ? 1.0 : 0.0;
  inst.lambda = lambda;
  return inst;
}

}  // namespace proxl2o
