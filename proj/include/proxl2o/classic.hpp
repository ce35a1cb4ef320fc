#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "proxl2o/problems.hpp"

namespace proxl2o {

struct IterPoint {
  std::size_t k = 0;
  double objective = 0.0;
  std::optional<double> gap;
};

struct ConvergenceRecord {
  std::size_t instance_id = 0;
  std::vector<IterPoint> iterations;
  double wall_time_per_iter = 0.0;  // seconds, update work only
  DenseVector final_x;
};

/// (F - F*)/|F*|; absolute difference when F* is exactly zero.
inline double relative_gap(double value, double f_star) {
  return f_star == 0.0 ? value - f_star : (value - f_star) / std::abs(f_star);
}

enum class SolverKind { ista, fista, pgd_metric, subgrad, adam };

inline std::string_view to_string(SolverKind k) {
  switch (k) {
    case SolverKind::ista: return "ista";
    case SolverKind::fista: return "fista";
    case SolverKind::pgd_metric: return "pgd_metric";
    case SolverKind::subgrad: return "subgrad";
    case SolverKind::adam: return "adam";
  }
  return "?";
}

struct SolverConfig {
  SolverKind kind = SolverKind::fista;
  std::size_t max_iter = 100;
  /// 0 selects the default: every iteration up to 1000 iterations, else every 10th.
  std::size_t record_every = 0;
  /// Subgradient: alpha_k = step0 / sqrt(k+1) when diminishing, else step0.
  double step0 = 1.0;
  bool diminishing = true;
  double adam_lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  std::size_t effective_record_every() const {
    if (record_every > 0) return record_every;
    return max_iter <= 1000 ? 1 : 10;
  }
};

/// Called with (k, iterate reported at k).
using IterateObserver = std::function<void(std::size_t, const DenseVector&)>;

namespace detail {

class Recorder {
 public:
  Recorder(const CompositeProblem& p, std::size_t every, std::size_t last)
      : p_(p), every_(every), last_(last) {}

  void maybe_record(std::size_t k, const DenseVector& x) {
    if (k % every_ != 0 && k != last_) return;
    IterPoint pt{k, p_.objective(x), std::nullopt};
    if (auto fs = p_.f_star()) pt.gap = relative_gap(pt.objective, *fs);
    rec_.iterations.push_back(pt);
  }

  void add_time(std::chrono::steady_clock::duration d) { elapsed_ += d; }

  ConvergenceRecord finish(DenseVector x, std::size_t iters) {
    rec_.final_x = std::move(x);
    rec_.wall_time_per_iter =
        iters == 0 ? 0.0 : std::chrono::duration<double>(elapsed_).count() / static_cast<double>(iters);
    return std::move(rec_);
  }

 private:
  const CompositeProblem& p_;
  std::size_t every_, last_;
  std::chrono::steady_clock::duration elapsed_{};
  ConvergenceRecord rec_;
};

inline void require_lipschitz(const CompositeProblem& p, const char* op) {
  if (!(p.lipschitz() > 0.0)) throw Error(op, "Lipschitz constant must be positive");
}

/// Projection used by the subgradient-type baselines for indicator regularizers.
inline void project_if_indicator(const CompositeProblem& p, DenseVector& x) {
  if (p.regularizer().is_indicator()) x = p.prox(x, DiagMetric::uniform(x.size(), 1.0));
}

}  // namespace detail

/// One proximal gradient step with metric p: prox_{r,p}(x - p .* grad f(x)).
inline DenseVector pgd_step(const CompositeProblem& p, const DenseVector& x, const DiagMetric& metric) {
  DenseVector g = p.grad_smooth(x);
  DenseVector v(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) v[i] = x[i] - metric[i] * g[i];
  return p.prox(v, metric);
}

inline ConvergenceRecord pgd_metric_run(const CompositeProblem& p, const std::function<DiagMetric(std::size_t)>& schedule,
                                        const SolverConfig& cfg, const DenseVector& x0,
                                        const IterateObserver& observe = {}) {
  detail::Recorder rec(p, cfg.effective_record_every(), cfg.max_iter);
  DenseVector x = x0;
  rec.maybe_record(0, x);
  if (observe) observe(0, x);
  for (std::size_t k = 0; k < cfg.max_iter; ++k) {
    auto t0 = std::chrono::steady_clock::now();
    x = pgd_step(p, x, schedule(k));
    rec.add_time(std::chrono::steady_clock::now() - t0);
    rec.maybe_record(k + 1, x);
    if (observe) observe(k + 1, x);
  }
  return rec.finish(std::move(x), cfg.max_iter);
}

inline ConvergenceRecord ista_run(const CompositeProblem& p, const SolverConfig& cfg, const DenseVector& x0,
                                  const IterateObserver& observe = {}) {
  detail::require_lipschitz(p, "ista_run");
  const DiagMetric metric = DiagMetric::uniform(p.dim(), 1.0 / p.lipschitz());
  return pgd_metric_run(p, [&](std::size_t) { return metric; }, cfg, x0, observe);
}

/// t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2
inline double fista_next_t(double t) { return 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t)); }

/// Momentum coefficients (t_k - 1)/t_{k+1} for k = 0..count-1 with t_0 = 1.
inline std::vector<double> fista_momentum_schedule(std::size_t count) {
  std::vector<double> out(count);
  double t = 1.0;
  for (std::size_t k = 0; k < count; ++k) {
    const double tn = fista_next_t(t);
    out[k] = (t - 1.0) / tn;
    t = tn;
  }
  return out;
}

/// FISTA with constant step 1/L. `y` is the proximal sequence (reported and
/// observed); `x` the extrapolated point.
inline ConvergenceRecord fista_run(const CompositeProblem& p, const SolverConfig& cfg, const DenseVector& x0,
                                   const IterateObserver& observe = {}) {
  detail::require_lipschitz(p, "fista_run");
  const DiagMetric metric = DiagMetric::uniform(p.dim(), 1.0 / p.lipschitz());
  detail::Recorder rec(p, cfg.effective_record_every(), cfg.max_iter);
  DenseVector x = x0, y = x0;
  double t = 1.0;
  rec.maybe_record(0, y);
  if (observe) observe(0, y);
  for (std::size_t k = 0; k < cfg.max_iter; ++k) {
    auto t0 = std::chrono::steady_clock::now();
    DenseVector y_next = pgd_step(p, x, metric);
    const double t_next = fista_next_t(t);
    const double beta = (t - 1.0) / t_next;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = y_next[i] + beta * (y_next[i] - y[i]);
    y = std::move(y_next);
    t = t_next;
    rec.add_time(std::chrono::steady_clock::now() - t0);
    rec.maybe_record(k + 1, y);
    if (observe) observe(k + 1, y);
  }
  return rec.finish(std::move(y), cfg.max_iter);
}

/// x_{k+1} = x_k - alpha_k g_k with g_k the fixed subgradient selection.
inline ConvergenceRecord subgrad_run(const CompositeProblem& p, const SolverConfig& cfg, const DenseVector& x0,
                                     const IterateObserver& observe = {}) {
  if (!(cfg.step0 > 0.0)) throw Error("subgrad_run", "step size must be > 0");
  detail::Recorder rec(p, cfg.effective_record_every(), cfg.max_iter);
  DenseVector x = x0;
  rec.maybe_record(0, x);
  if (observe) observe(0, x);
  for (std::size_t k = 0; k < cfg.max_iter; ++k) {
    auto t0 = std::chrono::steady_clock::now();
    const double alpha = cfg.diminishing ? cfg.step0 / std::sqrt(static_cast<double>(k + 1)) : cfg.step0;
    axpy(-alpha, p.subgradient(x), x);
    detail::project_if_indicator(p, x);
    rec.add_time(std::chrono::steady_clock::now() - t0);
    rec.maybe_record(k + 1, x);
    if (observe) observe(k + 1, x);
  }
  return rec.finish(std::move(x), cfg.max_iter);
}

/// Adam on the subgradient oracle of F.
inline ConvergenceRecord adam_run(const CompositeProblem& p, const SolverConfig& cfg, const DenseVector& x0,
                                  const IterateObserver& observe = {}) {
  if (!(cfg.adam_beta1 > 0.0 && cfg.adam_beta1 < 1.0 && cfg.adam_beta2 > 0.0 && cfg.adam_beta2 < 1.0)) {
    throw Error("adam_run", "beta1 and beta2 must lie in (0, 1)");
  }
  if (!(cfg.adam_lr > 0.0)) throw Error("adam_run", "learning rate must be > 0");
  detail::Recorder rec(p, cfg.effective_record_every(), cfg.max_iter);
  const std::size_t n = x0.size();
  DenseVector x = x0, m(n), v(n);
  double b1t = 1.0, b2t = 1.0;
  rec.maybe_record(0, x);
  if (observe) observe(0, x);
  for (std::size_t k = 0; k < cfg.max_iter; ++k) {
    auto t0 = std::chrono::steady_clock::now();
    DenseVector g = p.subgradient(x);
    b1t *= cfg.adam_beta1;
    b2t *= cfg.adam_beta2;
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
      const double mhat = m[i] / (1.0 - b1t);
      const double vhat = v[i] / (1.0 - b2t);
      x[i] -= cfg.adam_lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
    detail::project_if_indicator(p, x);
    rec.add_time(std::chrono::steady_clock::now() - t0);
    rec.maybe_record(k + 1, x);
    if (observe) observe(k + 1, x);
  }
  return rec.finish(std::move(x), cfg.max_iter);
}

inline ConvergenceRecord run_classic(const CompositeProblem& p, const SolverConfig& cfg, const DenseVector& x0) {
  switch (cfg.kind) {
    case SolverKind::ista: return ista_run(p, cfg, x0);
    case SolverKind::fista: return fista_run(p, cfg, x0);
    case SolverKind::subgrad: return subgrad_run(p, cfg, x0);
    case SolverKind::adam: return adam_run(p, cfg, x0);
    case SolverKind::pgd_metric: {
      const DiagMetric metric = DiagMetric::uniform(p.dim(), 1.0 / p.lipschitz());
      return pgd_metric_run(p, [&](std::size_t) { return metric; }, cfg, x0);
    }
  }
  throw Error("run_classic", "unknown solver kind");
}

// ---------------------------------------------------------------------------
// High-accuracy reference value F*

struct FStarResult {
  double value = 0.0;
  DenseVector x;
  double residual = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// FISTA with gradient-based adaptive restart until the proximal-gradient
/// fixed-point residual drops to `tol`. Returns the best objective seen and
/// caches it on the problem (flagged low-confidence if max_iter was hit).
inline FStarResult fstar_oracle(CompositeProblem& p, double tol = 1e-12, std::size_t max_iter = 200000) {
  if (!(tol > 0.0)) throw Error("fstar_oracle", "tol must be > 0");
  detail::require_lipschitz(p, "fstar_oracle");
  const std::size_t n = p.dim();
  const double step = 1.0 / p.lipschitz();
  const DiagMetric metric = DiagMetric::uniform(n, step);
  DenseVector x(n), y(n);
  double t = 1.0;
  FStarResult best;
  best.x = y;
  best.value = p.objective(y);
  best.residual = p.fixed_point_residual(y);
  std::size_t k = 0;
  for (; k < max_iter; ++k) {
    DenseVector y_next = pgd_step(p, x, metric);
    // Restart when the momentum direction opposes the gradient-map step.
    double agree = 0.0;
    for (std::size_t i = 0; i < n; ++i) agree += (x[i] - y_next[i]) * (y_next[i] - y[i]);
    if (agree > 0.0) {
      t = 1.0;
      x = y;
      continue;
    }
    const double t_next = fista_next_t(t);
    const double beta = (t - 1.0) / t_next;
    for (std::size_t i = 0; i < n; ++i) x[i] = y_next[i] + beta * (y_next[i] - y[i]);
    y = std::move(y_next);
    t = t_next;
    if (k % 10 == 0 || k + 1 == max_iter) {
      const double f = p.objective(y);
      const double res = p.fixed_point_residual(y);
      if (res <= tol) {
        best.value = std::min(best.value, f);
        best.x = y;
        best.residual = res;
        best.converged = true;
        break;
      }
      if (f <= best.value) {
        best.value = f;
        best.x = y;
        best.residual = res;
      }
    }
  }
  // One plain prox-gradient step from the returned point can still lower the
  // value; the point itself is replaced only if its residual does not grow.
  DenseVector polish = pgd_step(p, best.x, metric);
  const double fp = p.objective(polish);
  if (fp < best.value) {
    best.value = fp;
    const double rp = p.fixed_point_residual(polish);
    if (rp <= best.residual) {
      best.x = std::move(polish);
      best.residual = rp;
      best.converged = best.converged || rp <= tol;
    }
  }
  best.iterations = k;
  p.set_f_star(best.value);
  p.set_f_star_low_confidence(!best.converged);
  return best;
}

}  // namespace proxl2o
