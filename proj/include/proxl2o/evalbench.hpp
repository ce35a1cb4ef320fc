#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "proxl2o/classic.hpp"
#include "proxl2o/learned.hpp"
#include "proxl2o/parallel.hpp"
#include "proxl2o/problemset.hpp"

namespace proxl2o {

/// A named iterative method: runs K iterations from zero on one instance.
struct Solver {
  std::string name;
  std::function<ConvergenceRecord(const CompositeProblem&, std::size_t K, std::size_t instance_id)> run;
};

inline Solver classic_solver(SolverKind kind, SolverConfig base = {}) {
  base.kind = kind;
  return {std::string(to_string(kind)), [base](const CompositeProblem& p, std::size_t K, std::size_t id) {
            SolverConfig cfg = base;
            cfg.max_iter = K;
            // subgradient step0 is in units of 1/L here
            if (cfg.kind == SolverKind::subgrad) cfg.step0 /= p.lipschitz();
            auto rec = run_classic(p, cfg, DenseVector(p.dim()));
            rec.instance_id = id;
            return rec;
          }};
}

inline std::string learned_solver_name(const LearnedOptimizerParams& params) {
  if (params.arch.kind == ModelKind::generic) return "generic";
  return "l2o_" + params.ablation.name;
}

inline Solver learned_solver(LearnedOptimizerParams params, std::string name = "") {
  if (name.empty()) name = learned_solver_name(params);
  return {name, [params = std::move(params)](const CompositeProblem& p, std::size_t K, std::size_t id) {
            if (K == 0) {
              ConvergenceRecord rec;
              rec.instance_id = id;
              const double f0 = p.objective(DenseVector(p.dim()));
              rec.iterations.push_back({0, f0, p.f_star() ? std::optional(relative_gap(f0, *p.f_star())) : std::nullopt});
              rec.final_x = DenseVector(p.dim());
              return rec;
            }
            RolloutOptions opt;
            opt.K = K;
            return rollout(p, params, opt, nullptr, nullptr, id).record;
          }};
}

/// Names accepted by make_solver: ista, fista, pgd_metric, subgrad, adam.
inline Solver make_classic_solver(const std::string& name, const SolverConfig& base = {}) {
  for (SolverKind k : {SolverKind::ista, SolverKind::fista, SolverKind::pgd_metric, SolverKind::subgrad, SolverKind::adam}) {
    if (name == to_string(k)) return classic_solver(k, base);
  }
  throw Error("make_classic_solver", "unknown solver '" + name + "'");
}

struct AggregatePoint {
  std::size_t k = 0;
  double median_gap = 0.0;
  double mean_gap = 0.0;
};

struct ToleranceResult {
  double tol = 0.0;
  std::optional<std::size_t> iters;  // first recorded k with median gap <= tol
  std::optional<double> time_s;      // time_per_iter * iters
};

struct SolverReport {
  std::string solver;
  std::vector<ConvergenceRecord> records;  // instance order
  std::vector<AggregatePoint> aggregate;
  double time_per_iter = 0.0;              // mean over instances, seconds
  std::vector<ToleranceResult> to_tolerance;
};

struct EvalReport {
  std::vector<SolverReport> solvers;
  std::vector<double> tolerances;
  std::vector<CoefficientNorms> coefficient_trace;  // filled by trace_coefficients

  const SolverReport& at(const std::string& name) const {
    for (const auto& s : solvers)
      if (s.solver == name) return s;
    throw Error("EvalReport", "no solver named '" + name + "'");
  }

  /// Smallest gap over all solvers, instances and recorded iterations.
  double min_gap() const {
    double g = std::numeric_limits<double>::infinity();
    for (const auto& s : solvers)
      for (const auto& r : s.records)
        for (const auto& pt : r.iterations)
          if (pt.gap) g = std::min(g, *pt.gap);
    return g;
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw Error("median", "empty input");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Median and mean gap per recorded iteration. Records must share iteration
/// indices (same solver, same K).
inline std::vector<AggregatePoint> aggregate_gaps(const std::vector<ConvergenceRecord>& records) {
  std::vector<AggregatePoint> out;
  if (records.empty()) return out;
  const std::size_t points = records.front().iterations.size();
  for (const auto& r : records) {
    if (r.iterations.size() != points) throw DimensionError("aggregate_gaps", "records have different lengths");
  }
  for (std::size_t j = 0; j < points; ++j) {
    std::vector<double> gaps;
    gaps.reserve(records.size());
    double sum = 0.0;
    for (const auto& r : records) {
      const auto& pt = r.iterations[j];
      if (!pt.gap || pt.k != records.front().iterations[j].k) throw Error("aggregate_gaps", "missing gap or misaligned iterations");
      gaps.push_back(*pt.gap);
    }
    std::sort(gaps.begin(), gaps.end());
    for (double g : gaps) sum += g;
    out.push_back({records.front().iterations[j].k, median(gaps), sum / static_cast<double>(gaps.size())});
  }
  return out;
}

inline std::vector<ToleranceResult> tolerance_results(const std::vector<AggregatePoint>& agg, double time_per_iter,
                                                      const std::vector<double>& tolerances) {
  std::vector<ToleranceResult> out;
  for (double tol : tolerances) {
    ToleranceResult r{tol, std::nullopt, std::nullopt};
    for (const auto& pt : agg) {
      if (pt.median_gap <= tol) {
        r.iters = pt.k;
        r.time_s = time_per_iter * static_cast<double>(pt.k);
        break;
      }
    }
    out.push_back(r);
  }
  return out;
}

/// Computes F* for every instance that lacks it.
inline void ensure_fstar(ProblemSet& set, std::size_t threads = 0) {
  parallel_for(set.instances.size(), threads ? threads : default_thread_count(), [&](std::size_t i) {
    if (!set.instances[i].f_star()) fstar_oracle(set.instances[i]);
  });
}

inline EvalReport evaluate(const std::vector<Solver>& solvers, ProblemSet& testset, std::size_t K,
                           const std::vector<double>& tolerances = {1e-3, 1e-6}, std::size_t threads = 0) {
  if (solvers.empty()) throw Error("evaluate", "solver list is empty");
  if (testset.instances.empty()) throw Error("evaluate", "test set is empty");
  if (!threads) threads = default_thread_count();
  ensure_fstar(testset, threads);
  EvalReport report;
  report.tolerances = tolerances;
  for (const auto& solver : solvers) {
    SolverReport sr;
    sr.solver = solver.name;
    sr.records.resize(testset.instances.size());
    parallel_for(testset.instances.size(), threads, [&](std::size_t i) {
      sr.records[i] = solver.run(testset.instances[i], K, i);
    });
    double t = 0.0;
    for (const auto& r : sr.records) t += r.wall_time_per_iter;
    sr.time_per_iter = t / static_cast<double>(sr.records.size());
    sr.aggregate = aggregate_gaps(sr.records);
    sr.to_tolerance = tolerance_results(sr.aggregate, sr.time_per_iter, tolerances);
    report.solvers.push_back(std::move(sr));
  }
  return report;
}

/// Per-k mean over instances of the l2 norms of (p, a, b, b1, b2).
inline std::vector<CoefficientNorms> trace_coefficients(const LearnedOptimizerParams& params, const ProblemSet& testset,
                                                        std::size_t K, std::size_t threads = 0) {
  if (params.arch.kind != ModelKind::structured) throw Error("trace_coefficients", "generic models have no coefficients");
  if (testset.instances.empty()) throw Error("trace_coefficients", "test set is empty");
  std::vector<std::vector<CoefficientNorms>> per(testset.instances.size());
  parallel_for(testset.instances.size(), threads ? threads : default_thread_count(), [&](std::size_t i) {
    RolloutOptions opt;
    opt.K = K;
    opt.trace_coefficients = true;
    opt.record_every = K;
    per[i] = rollout(testset.instances[i], params, opt).coefficient_norms;
  });
  std::vector<CoefficientNorms> out(K);
  const double inv = 1.0 / static_cast<double>(per.size());
  for (const auto& tr : per) {
    for (std::size_t k = 0; k < K; ++k) {
      out[k].p += tr[k].p * inv;
      out[k].a += tr[k].a * inv;
      out[k].b += tr[k].b * inv;
      out[k].b1 += tr[k].b1 * inv;
      out[k].b2 += tr[k].b2 * inv;
    }
  }
  return out;
}

/// Applies a trained model unchanged to larger instances next to FISTA.
inline EvalReport cross_scale_eval(const LearnedOptimizerParams& params, ProblemSet& big_set, std::size_t K,
                                   std::size_t threads = 0) {
  return evaluate({learned_solver(params), classic_solver(SolverKind::fista)}, big_set, K, {1e-3, 1e-6}, threads);
}

// ---------------------------------------------------------------------------
// Reduction checks

struct CheckResult {
  std::string name;
  double deviation = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Structured scheme with b = 1, b1 = b2 = 0, p = 1/L and the FISTA momentum
/// schedule against fista_run; max per-coordinate deviation over all steps.
inline double fista_reduction_deviation(const CompositeProblem& p, std::size_t steps) {
  const std::size_t n = p.dim();
  std::vector<DenseVector> ref;
  SolverConfig cfg;
  cfg.max_iter = steps;
  fista_run(p, cfg, DenseVector(n), [&](std::size_t, const DenseVector& y) { ref.push_back(y); });
  const auto mom = fista_momentum_schedule(steps);
  SchemeState s{DenseVector(n), DenseVector(n)};
  const DenseVector inv_l(n, 1.0 / p.lipschitz());
  double dev = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    StructuredCoeffs c{inv_l, DenseVector(n, mom[k]), DenseVector(n, 1.0), DenseVector(n), DenseVector(n)};
    s = structured_step(p, s, c);
    dev = std::max(dev, max_abs_diff(s.x, ref[k + 1]));
  }
  return dev;
}

/// Structured scheme with a = b = b1 = b2 = 0 against pgd_metric_run with the
/// same (random, fixed) metric.
inline double pgd_reduction_deviation(const CompositeProblem& p, std::size_t steps, RngStream rng) {
  const std::size_t n = p.dim();
  DenseVector metric(n);
  for (std::size_t i = 0; i < n; ++i) metric[i] = rng.uniform(0.2, 1.0) / p.lipschitz();
  const DiagMetric dm(metric);
  std::vector<DenseVector> ref;
  SolverConfig cfg;
  cfg.max_iter = steps;
  pgd_metric_run(p, [&](std::size_t) { return dm; }, cfg, DenseVector(n),
                 [&](std::size_t, const DenseVector& x) { ref.push_back(x); });
  SchemeState s{DenseVector(n), DenseVector(n)};
  double dev = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    s = structured_step(p, s, {metric, DenseVector(n), DenseVector(n), DenseVector(n), DenseVector(n)});
    dev = std::max(dev, max_abs_diff(s.x, ref[k + 1]));
  }
  return dev;
}

/// soft(vhat - b1, lambda p) against soft(vhat, theta) on `count` random
/// coordinates, half with theta above lambda p and half below. Deviation in
/// units of the rounding scale eps * max(|vhat|, theta, lambda p).
inline double threshold_shift_deviation(std::size_t count, RngStream rng) {
  double worst = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double p = rng.uniform(0.1, 2.0), lambda = rng.uniform(0.01, 1.0);
    const double base = lambda * p;
    const double theta = i % 2 == 0 ? base * rng.uniform(1.0, 3.0) : base * rng.uniform(0.0, 1.0);
    DenseVector v{rng.uniform(-4.0, 4.0) * base};
    const DenseVector b1 = threshold_shift(v, p, lambda, theta);
    const double lhs = soft_threshold(v[0] - b1[0], base);
    const double rhs = soft_threshold(v[0], theta);
    const double scale = std::numeric_limits<double>::epsilon() * std::max({std::abs(v[0]), theta, base});
    worst = std::max(worst, std::abs(lhs - rhs) / scale);
  }
  return worst;
}

/// The three reductions on fixed seeded instances.
inline std::vector<CheckResult> equivalence_suite(std::uint64_t seed = 2024) {
  std::vector<CheckResult> out;
  RngStream rng(seed, "equivalence");
  auto big = CompositeProblem::lasso(generate_lasso(rng, 250, 500, 50, 0.1));
  const double fista_dev = fista_reduction_deviation(big, 200);
  out.push_back({"fista_reduction", fista_dev, 1e-10, fista_dev <= 1e-10});
  auto small = CompositeProblem::lasso(generate_lasso(rng, 50, 100, 20, 0.1));
  const double pgd_dev = pgd_reduction_deviation(small, 200, rng.derive(1));
  out.push_back({"pgd_reduction", pgd_dev, 1e-14, pgd_dev <= 1e-14});
  const double ts = threshold_shift_deviation(10000, rng.derive(2));
  out.push_back({"threshold_shift_ulps", ts, 4.0, ts <= 4.0});
  return out;
}

// ---------------------------------------------------------------------------
// Runtime table

struct RuntimeRow {
  std::string solver;
  double time_per_iter = 0.0;
  std::vector<ToleranceResult> to_tolerance;
};

inline std::vector<RuntimeRow> runtime_table(const std::vector<Solver>& solvers, ProblemSet& testset,
                                             const std::vector<double>& tolerances, std::size_t max_iter = 1000,
                                             std::size_t threads = 0) {
  if (tolerances.empty()) throw Error("runtime_table", "no tolerances");
  auto report = evaluate(solvers, testset, max_iter, tolerances, threads);
  std::vector<RuntimeRow> rows;
  for (const auto& s : report.solvers) rows.push_back({s.solver, s.time_per_iter, s.to_tolerance});
  return rows;
}

// ---------------------------------------------------------------------------
// Export

inline constexpr double kGapFloor = 1e-16;

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_curves_csv(std::ostream& out, const EvalReport& report) {
  out << "solver,instance_id,iter,objective,gap\n";
  for (const auto& s : report.solvers)
    for (const auto& r : s.records)
      for (const auto& pt : r.iterations)
        out << s.solver << ',' << r.instance_id << ',' << pt.k << ',' << format_double(pt.objective) << ','
            << (pt.gap ? format_double(*pt.gap) : "") << '\n';
}

inline void write_aggregate_csv(std::ostream& out, const EvalReport& report, bool header = true,
                                const std::string& prefix = "") {
  if (header) out << "solver,iter,median_gap,mean_gap\n";
  for (const auto& s : report.solvers)
    for (const auto& a : s.aggregate)
      out << prefix << s.solver << ',' << a.k << ',' << format_double(a.median_gap) << ',' << format_double(a.mean_gap) << '\n';
}

inline std::string tol_label(double tol) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", tol);
  return buf;
}

/// Columns: solver, time_per_iter_s, then iters and total time per tolerance.
inline void write_runtime_csv(std::ostream& out, const std::vector<RuntimeRow>& rows, const std::vector<double>& tolerances) {
  out << "solver,time_per_iter_s";
  for (double t : tolerances) out << ",iters_gap<" << tol_label(t) << ",total_time_s_gap<" << tol_label(t);
  out << '\n';
  for (const auto& r : rows) {
    out << r.solver << ',' << format_double(r.time_per_iter);
    for (const auto& t : r.to_tolerance) {
      out << ',' << (t.iters ? std::to_string(*t.iters) : "N/A") << ',' << (t.time_s ? format_double(*t.time_s) : "N/A");
    }
    out << '\n';
  }
}

/// Log-scale median-gap plot, one polyline per solver.
inline void write_svg_plot(std::ostream& out, const EvalReport& report, const std::string& title = "median gap") {
  const double W = 640, H = 420, L = 70, R = 150, T = 30, B = 50;
  std::size_t kmax = 1;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : report.solvers)
    for (const auto& a : s.aggregate) {
      kmax = std::max(kmax, a.k);
      const double g = std::log10(std::max(a.median_gap, kGapFloor));
      lo = std::min(lo, g);
      hi = std::max(hi, g);
    }
  if (!std::isfinite(lo)) lo = -16, hi = 0;
  lo = std::floor(lo);
  hi = std::max(std::ceil(hi), lo + 1);
  auto px = [&](double k) { return L + (W - L - R) * k / static_cast<double>(kmax); };
  auto py = [&](double g) { return T + (H - T - B) * (hi - std::log10(std::max(g, kGapFloor))) / (hi - lo); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << L << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (double e = lo; e <= hi; e += 1.0) {
    const double y = py(std::pow(10.0, e));
    out << "<text x=\"" << L - 8 << "\" y=\"" << y + 4 << "\" font-size=\"10\" text-anchor=\"end\">1e" << static_cast<int>(e) << "</text>\n";
  }
  out << "<text x=\"" << px(kmax) << "\" y=\"" << H - B + 16 << "\" font-size=\"10\" text-anchor=\"end\">" << kmax << "</text>\n";
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" font-size=\"12\" text-anchor=\"middle\">iteration</text>\n";
  for (std::size_t s = 0; s < report.solvers.size(); ++s) {
    const auto& sr = report.solvers[s];
    const char* c = colors[s % 8];
    out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& a : sr.aggregate) out << px(static_cast<double>(a.k)) << ',' << py(a.median_gap) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (s + 1) << "\" font-size=\"12\" fill=\"" << c << "\">" << sr.solver
        << "</text>\n";
  }
  out << "</svg>\n";
}

inline void write_text_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& fn) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError(path.string(), "cannot write");
  fn(out);
  if (!out) throw FormatError(path.string(), "write failed");
}

}  // namespace proxl2o
