#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include "proxl2o/dense.hpp"

// Proximal operators of r under the diagonal metric diag(p):
//   prox_{r,p}(v) = argmin_x r(x) + 1/2 ||x - v||^2_{diag(p)^{-1}}

namespace proxl2o {

enum class RegularizerKind { l1, nonneg, simplex, zero };

inline std::string_view to_string(RegularizerKind k) {
  switch (k) {
    case RegularizerKind::l1: return "l1";
    case RegularizerKind::nonneg: return "nonneg";
    case RegularizerKind::simplex: return "simplex";
    case RegularizerKind::zero: return "zero";
  }
  return "?";
}

inline RegularizerKind regularizer_from_string(std::string_view s) {
  if (s == "l1") return RegularizerKind::l1;
  if (s == "nonneg") return RegularizerKind::nonneg;
  if (s == "simplex") return RegularizerKind::simplex;
  if (s == "zero") return RegularizerKind::zero;
  throw Error("regularizer", "unknown tag '" + std::string(s) + "'");
}

struct Regularizer {
  RegularizerKind kind = RegularizerKind::zero;
  double lambda = 0.0;  // used by l1 only

  bool is_indicator() const { return kind == RegularizerKind::nonneg || kind == RegularizerKind::simplex; }
};

/// Diagonal metric with strictly positive entries.
class DiagMetric {
 public:
  explicit DiagMetric(DenseVector p) : p_(std::move(p)) {
    for (std::size_t i = 0; i < p_.size(); ++i) {
      if (!(p_[i] > 0.0) || !std::isfinite(p_[i])) {
        throw Error("DiagMetric", "entry " + std::to_string(i) + " is not strictly positive");
      }
    }
  }
  static DiagMetric uniform(std::size_t n, double value) { return DiagMetric(DenseVector(n, value)); }

  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  const DenseVector& values() const { return p_; }

 private:
  DenseVector p_;
};

inline double soft_threshold(double v, double tau) {
  const double m = std::abs(v) - tau;
  if (m <= 0.0) return 0.0;
  return v > 0.0 ? m : -m;
}

inline DenseVector prox_l1(const DenseVector& v, const DiagMetric& metric, double lambda) {
  if (v.size() != metric.size()) throw DimensionError("prox_l1", "metric length mismatch");
  if (lambda < 0.0) throw Error("prox_l1", "lambda must be >= 0");
  DenseVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = soft_threshold(v[i], lambda * metric[i]);
  return out;
}

/// Projection onto the nonnegative orthant; independent of the metric.
inline DenseVector prox_nonneg(const DenseVector& v) {
  DenseVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(0.0, v[i]);
  return out;
}

struct SimplexProxResult {
  DenseVector x;
  double xi = 0.0;
};

/// out_i = max(0, v_i - xi * p_i) with xi found by bisection so that the
/// output sums to one. The bracket [min(v/p) - 1/min(p), max(v/p)] always
/// contains the root.
inline SimplexProxResult prox_simplex_detail(const DenseVector& v, const DiagMetric& metric) {
  const std::size_t n = v.size();
  if (n != metric.size()) throw DimensionError("prox_simplex", "metric length mismatch");
  if (n == 0) throw DimensionError("prox_simplex", "empty vector");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  double pmin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    lo = std::min(lo, v[i] / metric[i]);
    hi = std::max(hi, v[i] / metric[i]);
    pmin = std::min(pmin, metric[i]);
  }
  lo -= 1.0 / pmin;
  auto mass = [&](double xi) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::max(0.0, v[i] - xi * metric[i]);
    return s;
  };
  // mass is nonincreasing in xi: mass(lo) >= 1, mass(hi) = 0.
  double xi = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    xi = 0.5 * (lo + hi);
    const double s = mass(xi);
    if (std::abs(s - 1.0) <= 1e-12) break;
    if (s > 1.0) lo = xi; else hi = xi;
    if (hi - lo <= 0.0) break;
  }
  // Polish: on the identified active set xi has a closed form.
  double sv = 0.0, sp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (v[i] - xi * metric[i] > 0.0) {
      sv += v[i];
      sp += metric[i];
    }
  }
  if (sp > 0.0) {
    const double exact = (sv - 1.0) / sp;
    if (std::abs(mass(exact) - 1.0) <= std::abs(mass(xi) - 1.0)) xi = exact;
  }
  SimplexProxResult r{DenseVector(n), xi};
  for (std::size_t i = 0; i < n; ++i) r.x[i] = std::max(0.0, v[i] - xi * metric[i]);
  return r;
}

inline DenseVector prox_simplex(const DenseVector& v, const DiagMetric& metric) {
  return prox_simplex_detail(v, metric).x;
}

inline DenseVector prox_composite(const Regularizer& r, const DenseVector& v, const DiagMetric& metric) {
  switch (r.kind) {
    case RegularizerKind::l1: return prox_l1(v, metric, r.lambda);
    case RegularizerKind::nonneg: return prox_nonneg(v);
    case RegularizerKind::simplex: return prox_simplex(v, metric);
    case RegularizerKind::zero: return v;
  }
  throw Error("prox_composite", "unknown regularizer tag");
}

inline DenseVector prox_composite(std::string_view tag, const DenseVector& v, const DiagMetric& metric, double lambda) {
  return prox_composite(Regularizer{regularizer_from_string(tag), lambda}, v, metric);
}

/// r(x); +inf outside the feasible set of indicator regularizers.
inline double regularizer_value(const Regularizer& r, const DenseVector& x) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (r.kind) {
    case RegularizerKind::l1: return r.lambda * norm1(x);
    case RegularizerKind::nonneg:
      for (double v : x)
        if (v < 0.0) return inf;
      return 0.0;
    case RegularizerKind::simplex: {
      double s = 0.0;
      for (double v : x) {
        if (v < 0.0) return inf;
        s += v;
      }
      return std::abs(s - 1.0) <= 1e-9 ? 0.0 : inf;
    }
    case RegularizerKind::zero: return 0.0;
  }
  return inf;
}

/// Bias b1 with soft(vhat - b1, lambda*p) == soft(vhat, theta) coordinatewise:
/// shifts the threshold of a scalar-step soft-thresholding from lambda*p to
/// theta. In the theta < lambda*p branch the shift applies where |vhat_i| > theta.
inline DenseVector threshold_shift(const DenseVector& vhat, double p_scalar, double lambda, double theta) {
  if (!(p_scalar > 0.0)) throw Error("threshold_shift", "p must be > 0");
  if (theta < 0.0) throw Error("threshold_shift", "theta must be >= 0");
  const double base = lambda * p_scalar;
  DenseVector b1(vhat.size());
  for (std::size_t i = 0; i < vhat.size(); ++i) {
    const double v = vhat[i];
    const double sgn = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    if (theta > base) {
      b1[i] = sgn * std::min(theta - base, std::abs(v));
    } else if (theta < base) {
      b1[i] = std::abs(v) > theta ? sgn * (theta - base) : 0.0;
    }
  }
  return b1;
}

}  // namespace proxl2o
