#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "proxl2o/evalbench.hpp"
#include "proxl2o/training.hpp"

// Independent oracles and the invariant suites behind `proxl2o check`.

namespace proxl2o::checks {

// ---------------------------------------------------------------------------
// Oracles

/// argmin_x lambda|x| + (x - v)^2 / (2p) by ternary search in long double.
inline double l1_prox_ternary(double v, double p, double lambda) {
  using ld = long double;
  auto f = [&](ld x) { return static_cast<ld>(lambda) * std::abs(x) + (x - v) * (x - v) / (2.0L * p); };
  ld lo = std::min(0.0, v) - 1.0L, hi = std::max(0.0, v) + 1.0L;
  for (int it = 0; it < 400; ++it) {
    const ld m1 = lo + (hi - lo) / 3.0L, m2 = hi - (hi - lo) / 3.0L;
    if (f(m1) <= f(m2)) hi = m2; else lo = m1;
  }
  return static_cast<double>((lo + hi) / 2.0L);
}

/// Euclidean projection onto the probability simplex by sorting.
inline DenseVector simplex_projection_sort(const DenseVector& v) {
  std::vector<double> u(v.values().begin(), v.values().end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, tau = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    const double t = (cum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) tau = t;
  }
  DenseVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(0.0, v[i] - tau);
  return out;
}

/// Worst violation of 0 in dr(x) + P^{-1}(x - v), coordinatewise.
inline double optimality_violation(const Regularizer& r, const DenseVector& v, const DiagMetric& p, const DenseVector& x) {
  double worst = 0.0;
  const std::size_t n = v.size();
  switch (r.kind) {
    case RegularizerKind::zero:
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(x[i] - v[i]));
      break;
    case RegularizerKind::l1:
      for (std::size_t i = 0; i < n; ++i) {
        const double tau = r.lambda * p[i];
        if (x[i] != 0.0) worst = std::max(worst, std::abs(x[i] - (v[i] - tau * (x[i] > 0.0 ? 1.0 : -1.0))));
        else worst = std::max(worst, std::max(0.0, std::abs(v[i]) - tau));
      }
      break;
    case RegularizerKind::nonneg:
      for (std::size_t i = 0; i < n; ++i) {
        worst = std::max(worst, std::max(0.0, -x[i]));
        if (x[i] > 0.0) worst = std::max(worst, std::abs(x[i] - v[i]));
        else worst = std::max(worst, std::max(0.0, v[i]));
      }
      break;
    case RegularizerKind::simplex: {
      // (v_i - x_i)/p_i = xi on the support, v_i/p_i <= xi off it, sum x = 1.
      double s = 0.0, xi = 0.0;
      std::size_t active = 0;
      for (std::size_t i = 0; i < n; ++i) {
        worst = std::max(worst, std::max(0.0, -x[i]));
        s += x[i];
        if (x[i] > 0.0) {
          xi += (v[i] - x[i]) / p[i];
          ++active;
        }
      }
      worst = std::max(worst, std::abs(s - 1.0));
      if (active == 0) return std::numeric_limits<double>::infinity();
      xi /= static_cast<double>(active);
      for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > 0.0) worst = std::max(worst, std::abs((v[i] - x[i]) / p[i] - xi) * p[i]);
        else worst = std::max(worst, std::max(0.0, v[i] - xi * p[i]));
      }
      break;
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Suites

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> results;
  std::vector<std::string> notes;

  bool pass() const {
    return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.pass; });
  }
  void add(std::string name, double deviation, double tolerance) {
    results.push_back({std::move(name), deviation, tolerance, deviation <= tolerance});
  }
};

inline SuiteReport prox_suite(std::uint64_t seed = 11, std::size_t cases = 1000) {
  SuiteReport rep{"prox", {}, {}};
  RngStream rng(seed, "prox-check");
  double l1_dev = 0.0;
  for (std::size_t c = 0; c < cases; ++c) {
    const double v = rng.uniform(-5.0, 5.0), p = rng.uniform(0.05, 3.0), lambda = rng.uniform(0.0, 2.0);
    const double got = prox_l1(DenseVector{v}, DiagMetric(DenseVector{p}), lambda)[0];
    l1_dev = std::max(l1_dev, std::abs(got - l1_prox_ternary(v, p, lambda)));
  }
  rep.add("prox_l1_vs_ternary_search", l1_dev, 1e-8);

  double simplex_dev = 0.0;
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t n = 1 + rng.uniform_index(30);
    DenseVector v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = rng.uniform(-2.0, 2.0);
    simplex_dev = std::max(simplex_dev, max_abs_diff(prox_simplex(v, DiagMetric::uniform(n, 1.0)), simplex_projection_sort(v)));
  }
  rep.add("prox_simplex_vs_sort_projection", simplex_dev, 1e-8);

  double opt = 0.0;
  for (RegularizerKind kind : {RegularizerKind::l1, RegularizerKind::nonneg, RegularizerKind::simplex, RegularizerKind::zero}) {
    for (std::size_t c = 0; c < cases / 4; ++c) {
      const std::size_t n = 1 + rng.uniform_index(4);
      DenseVector v(n), p(n);
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = rng.uniform(-2.0, 2.0);
        p[i] = rng.uniform(0.1, 2.0);
      }
      const Regularizer r{kind, rng.uniform(0.0, 1.0)};
      const DiagMetric m(p);
      opt = std::max(opt, optimality_violation(r, v, m, prox_composite(r, v, m)));
    }
  }
  rep.add("optimality_condition", opt, 1e-10);
  return rep;
}

/// Relative error with a floor at the round-off level of a central
/// difference of a loss of size |loss|: 4 eps |loss| / h.
struct GradientComparison {
  double worst_rel = 0.0;   // among entries above the noise floor
  double worst_abs = 0.0;   // max |analytic - fd|
  double noise_floor = 0.0;
  std::size_t checked = 0;
  std::size_t above_floor = 0;  // entries judged by the relative criterion
  bool pass = true;
};

inline GradientComparison compare_gradients(const std::vector<double>& analytic, const std::vector<double>& fd, double loss,
                                            double h, double rel_tol) {
  GradientComparison c;
  c.noise_floor = 4.0 * std::numeric_limits<double>::epsilon() * std::abs(loss) / h;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - fd[i]);
    const double scale = std::max(std::abs(analytic[i]), std::abs(fd[i]));
    c.worst_abs = std::max(c.worst_abs, err);
    ++c.checked;
    const bool ok = err <= rel_tol * scale || err <= c.noise_floor;
    if (rel_tol * scale > c.noise_floor) {
      ++c.above_floor;
      c.worst_rel = std::max(c.worst_rel, err / scale);
    }
    c.pass = c.pass && ok;
  }
  return c;
}

/// Analytic and central-difference gradients of the (1/K) sum F loss of one
/// rollout with respect to every trainable weight.
inline GradientComparison unroll_gradient_check(const CompositeProblem& problem, const LearnedOptimizerParams& params,
                                                std::size_t K, double h = 1e-6, double rel_tol = 1e-5) {
  std::vector<DenseMatrix> g;
  for (const auto& b : params.blocks) g.emplace_back(b.rows(), b.cols());
  RolloutOptions train_opt;
  train_opt.K = K;
  train_opt.segments = 1;
  const double loss = rollout(problem, params, train_opt, &g).loss;
  RolloutOptions eval_opt;
  eval_opt.K = K;
  std::vector<double> analytic, fd;
  LearnedOptimizerParams work = params;
  for (std::size_t b = 0; b < params.trainable_blocks(); ++b) {
    for (std::size_t e = 0; e < params.blocks[b].size(); ++e) {
      const double w0 = params.blocks[b][e];
      work.blocks[b][e] = w0 + h;
      const double fp = rollout(problem, work, eval_opt).loss;
      work.blocks[b][e] = w0 - h;
      const double fm = rollout(problem, work, eval_opt).loss;
      work.blocks[b][e] = w0;
      analytic.push_back(g[b][e]);
      fd.push_back((fp - fm) / (2.0 * h));
    }
  }
  return compare_gradients(analytic, fd, loss, h, rel_tol);
}

/// Directional derivative along a random unit direction over all trainable
/// weights; large enough that the plain relative error is meaningful.
inline double directional_gradient_error(const CompositeProblem& problem, const LearnedOptimizerParams& params,
                                         std::size_t K, RngStream rng, double h = 1e-6) {
  std::vector<DenseMatrix> g;
  for (const auto& b : params.blocks) g.emplace_back(b.rows(), b.cols());
  RolloutOptions train_opt;
  train_opt.K = K;
  rollout(problem, params, train_opt, &g);
  std::vector<DenseMatrix> dir;
  double nrm = 0.0;
  for (std::size_t b = 0; b < params.trainable_blocks(); ++b) {
    dir.emplace_back(params.blocks[b].rows(), params.blocks[b].cols());
    for (std::size_t e = 0; e < dir[b].size(); ++e) {
      dir[b][e] = rng.normal();
      nrm += dir[b][e] * dir[b][e];
    }
  }
  nrm = std::sqrt(nrm);
  double analytic = 0.0;
  LearnedOptimizerParams plus = params, minus = params;
  for (std::size_t b = 0; b < dir.size(); ++b) {
    for (std::size_t e = 0; e < dir[b].size(); ++e) {
      const double d = dir[b][e] / nrm;
      analytic += g[b][e] * d;
      plus.blocks[b][e] += h * d;
      minus.blocks[b][e] -= h * d;
    }
  }
  RolloutOptions eval_opt;
  eval_opt.K = K;
  const double fd = (rollout(problem, plus, eval_opt).loss - rollout(problem, minus, eval_opt).loss) / (2.0 * h);
  return std::abs(analytic - fd) / std::max(std::abs(analytic), std::abs(fd));
}

inline std::vector<DenseMatrix> rollout_gradient(const CompositeProblem& problem, const LearnedOptimizerParams& params,
                                                 std::size_t K, std::size_t segments, double* loss = nullptr) {
  std::vector<DenseMatrix> g;
  for (const auto& b : params.blocks) g.emplace_back(b.rows(), b.cols());
  RolloutOptions opt;
  opt.K = K;
  opt.segments = segments;
  const double l = rollout(problem, params, opt, &g).loss;
  if (loss) *loss = l;
  g.resize(params.trainable_blocks());
  return g;
}

inline double max_block_diff(const std::vector<DenseMatrix>& a, const std::vector<DenseMatrix>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t e = 0; e < a[i].size(); ++e) d = std::max(d, std::abs(a[i][e] - b[i][e]));
  return d;
}

inline SuiteReport gradient_suite(std::uint64_t seed = 5) {
  SuiteReport rep{"gradients", {}, {}};
  RngStream rng(seed, "gradient-check");
  auto problem = CompositeProblem::lasso(generate_lasso(rng, 5, 10, 3, 0.1));
  // head_scale 1 so every head weight has a visible effect
  const auto params = init_params(Architecture{}, AblationConfig::preset("PA"), seed, 1.0);
  const auto full = unroll_gradient_check(problem, params, 3);
  std::ostringstream note;
  note << "pa_3step: " << full.checked << " weights (" << full.above_floor << " above the noise floor), worst relative error "
       << full.worst_rel
       << ", worst absolute " << full.worst_abs << ", noise floor " << full.noise_floor;
  rep.notes.push_back(note.str());
  rep.results.push_back({"pa_3step_every_weight", full.worst_rel, 1e-5, full.pass});
  rep.add("pa_3step_directional", directional_gradient_error(problem, params, 3, rng.derive(1)), 1e-5);

  const auto full12 = init_params(Architecture{}, AblationConfig::preset("PBA12"), seed + 1, 1.0);
  rep.add("pba12_3step_directional", directional_gradient_error(problem, full12, 3, rng.derive(2)), 1e-5);

  // Truncation: one segment is full BPTT; two segments share the forward
  // pass but cut the gradient.
  double loss1 = 0.0, loss2 = 0.0;
  const auto g1 = rollout_gradient(problem, params, 6, 1, &loss1);
  const auto g2 = rollout_gradient(problem, params, 6, 2, &loss2);
  rep.add("truncation_forward_loss_identical", std::abs(loss1 - loss2), 0.0);
  const double cut = max_block_diff(g1, g2);
  rep.results.push_back({"truncation_changes_gradient", cut, 0.0, cut > 0.0});

  // Meta-gradient of a 2-instance minibatch, 4-step unroll, 5 random weights.
  std::vector<CompositeProblem> batch;
  for (int i = 0; i < 2; ++i) batch.push_back(CompositeProblem::lasso(generate_lasso(rng, 5, 10, 3, 0.1)));
  const auto bg = batch_gradient(params, batch, 4, 1, 1);
  auto batch_loss = [&](const LearnedOptimizerParams& p) {
    RolloutOptions o;
    o.K = 4;
    double s = 0.0;
    for (const auto& prob : batch) s += rollout(prob, p, o).loss;
    return s / static_cast<double>(batch.size());
  };
  std::vector<double> analytic, fd;
  RngStream pick = rng.derive(3);
  const double h = 1e-6;
  for (int t = 0; t < 5; ++t) {
    const std::size_t b = pick.uniform_index(params.trainable_blocks());
    const std::size_t e = pick.uniform_index(params.blocks[b].size());
    LearnedOptimizerParams plus = params, minus = params;
    plus.blocks[b][e] += h;
    minus.blocks[b][e] -= h;
    analytic.push_back(bg.grads[b][e]);
    fd.push_back((batch_loss(plus) - batch_loss(minus)) / (2.0 * h));
  }
  const auto meta = compare_gradients(analytic, fd, bg.loss, h, 1e-4);
  rep.results.push_back({"meta_gradient_minibatch", meta.worst_rel, 1e-4, meta.pass});
  return rep;
}

inline SuiteReport equivalence_check_suite() {
  SuiteReport rep{"equivalence", equivalence_suite(), {}};
  return rep;
}

/// Largest ||x+ - x*|| / (1 + ||x*||) for one step of the model started at
/// x = y = x*, over the instances (F* computed if missing).
inline double fixed_point_residual(const LearnedOptimizerParams& params, ProblemSet& set) {
  double worst = 0.0;
  for (auto& prob : set.instances) {
    const auto star = fstar_oracle(prob);
    const std::size_t n = prob.dim();
    auto f = lstm_mlp_forward(params, prob, star.x, prob.grad_smooth(star.x), model::initial_hidden(params, n));
    SchemeState s{star.x, star.x};
    SchemeState next;
    if (params.arch.kind == ModelKind::generic) {
      next.x = star.x - f.d;
    } else if (params.ablation.is_simplified()) {
      next = l2o_pa_step(prob, s, f.coeffs.p, f.coeffs.a);
    } else {
      next = structured_step(prob, s, f.coeffs);
    }
    worst = std::max(worst, norm2(next.x - star.x) / (1.0 + norm2(star.x)));
  }
  return worst;
}

/// Recipe of the checkpoint's training problems, falling back to 50x100.
inline TrainConfig recipe_of(const nlohmann::json& training) {
  TrainConfig cfg;
  cfg.m = 50;
  cfg.n = 100;
  cfg.sparsity = 20;
  if (training.is_object() && training.contains("config") && training["config"].is_string()) {
    std::istringstream in(training["config"].get<std::string>());
    cfg = TrainConfig::parse(in, cfg);
  }
  return cfg;
}

inline SuiteReport theory_suite(const LearnedOptimizerParams& params, const TrainConfig& recipe, std::uint64_t seed = 99,
                                std::size_t threads = 0) {
  SuiteReport rep{"theory", {}, {}};
  ProblemSet set = generate_problemset(recipe.kind, recipe.m, recipe.n, recipe.sparsity, recipe.lambda, 20, seed, "theory");
  rep.add("fixed_point_residual", fixed_point_residual(params, set), 1e-6);
  if (params.arch.kind == ModelKind::structured) {
    const auto trace = trace_coefficients(params, set, 100, threads);
    std::ostringstream t;
    t << "trace k=1: |p| " << trace[0].p << " |a| " << trace[0].a << " |b| " << trace[0].b << " |b1| " << trace[0].b1
      << " |b2| " << trace[0].b2 << "; k=50: |b1| " << trace[49].b1 << " |b2| " << trace[49].b2;
    rep.notes.push_back(t.str());
    for (Channel c : {Channel::b1, Channel::b2}) {
      if (!params.ablation.learnable(c)) continue;
      const double k1 = c == Channel::b1 ? trace[0].b1 : trace[0].b2;
      const double k50 = c == Channel::b1 ? trace[49].b1 : trace[49].b2;
      rep.results.push_back({std::string(kChannelNames[static_cast<std::size_t>(c)]) + "_decay_ratio_k50_over_k1",
                             k1 > 0.0 ? k50 / k1 : 0.0, 0.5, k50 <= 0.5 * k1});
    }
  }
  return rep;
}

}  // namespace proxl2o::checks
