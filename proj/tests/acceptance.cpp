// Acceptance gate: one PASS/FAIL line per criterion. Criteria 5-8 drive the
// command-line tool end to end; the others call the library directly.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "proxl2o/checks.hpp"
#include "proxl2o/checkpoint.hpp"
#include "proxl2o/evalbench.hpp"
#include "proxl2o/training.hpp"

namespace fs = std::filesystem;
using namespace proxl2o;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const fs::path kWork = fs::current_path() / "acceptance_work";

// Desk-scale recipe shared by criteria 5-9.
const std::string kDeskTrain =
    "--kind lasso --m 50 --n 100 --sparsity 20 --lambda 0.1 --batch-size 32 --minibatches 100 --unroll 100 "
    "--segments 5 --meta-lr 1e-2 --seed 1";

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void cli(const std::string& args, const std::string& log) {
  const std::string cmd = std::string(PROXL2O_CLI_PATH) + " " + args + " > " + (kWork / log).string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc != 0) throw std::runtime_error("command failed (" + std::to_string(rc) + "): " + cmd);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string iters_text(const std::optional<std::size_t>& it) { return it ? std::to_string(*it) : "N/A"; }

// Lazily produced artifacts shared between criteria.
struct Artifacts {
  std::optional<double> pa_train_seconds;
  std::optional<double> pbac_train_seconds;

  fs::path desk_testset() {
    const fs::path dir = kWork / "desk_test";
    if (!fs::exists(dir / "manifest.json")) {
      cli("gen --kind lasso --m 50 --n 100 --sparsity 20 --lambda 0.1 --count 128 --seed 777 --out " + dir.string(),
          "gen_desk.log");
    }
    return dir;
  }

  fs::path pa_checkpoint() {
    const fs::path dir = kWork / "ck_pa_t1_a";
    if (!pa_train_seconds) {
      const auto t0 = std::chrono::steady_clock::now();
      cli("train " + kDeskTrain + " --preset PA --threads 1 --out " + dir.string(), "train_pa_t1_a.log");
      pa_train_seconds = seconds_since(t0);
    }
    return dir;
  }

  fs::path pba12_checkpoint() {
    const fs::path dir = kWork / "ck_pba12";
    if (!pbac_train_seconds) {
      const auto t0 = std::chrono::steady_clock::now();
      cli("train " + kDeskTrain + " --preset PBA12 --out " + dir.string(), "train_pba12.log");
      pbac_train_seconds = seconds_since(t0);
    }
    return dir;
  }
};

Artifacts artifacts;

Outcome fista_equivalence() {
  RngStream rng(2024, "acceptance-fista");
  auto p = CompositeProblem::lasso(generate_lasso(rng, 250, 500, 50, 0.1));
  const double dev = fista_reduction_deviation(p, 200);
  return {dev <= 1e-10, "max deviation " + fmt(dev) + " over 200 iterations (tol 1e-10)"};
}

Outcome prox_oracles() {
  const auto rep = checks::prox_suite(11, 1000);
  std::string d;
  for (const auto& r : rep.results) d += r.name + " " + fmt(r.deviation) + " (tol " + fmt(r.tolerance) + "); ";
  return {rep.pass(), d};
}

Outcome bptt_correctness() {
  RngStream rng(3, "acceptance-bptt");
  auto p = CompositeProblem::lasso(generate_lasso(rng, 5, 10, 3, 0.1));
  const auto params = init_params(Architecture{}, AblationConfig::preset("PA"), 3, 1.0);
  const auto c = checks::unroll_gradient_check(p, params, 3, 1e-6, 1e-5);
  return {c.pass, std::to_string(c.checked) + " weights, " + std::to_string(c.above_floor) +
                      " above the difference noise floor, worst relative error " + fmt(c.worst_rel) +
                      ", worst absolute " + fmt(c.worst_abs) + " (floor " + fmt(c.noise_floor) + ")"};
}

Outcome monotone_ista() {
  auto set = generate_problemset(SmoothKind::lasso_quadratic, 250, 500, 50, 0.1, 20, 4, "acceptance-ista");
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& p : set.instances) {
    SolverConfig cfg;
    cfg.max_iter = 1000;
    double prev = std::numeric_limits<double>::infinity();
    ista_run(p, cfg, DenseVector(p.dim()), [&](std::size_t, const DenseVector& x) {
      const double f = p.objective(x);
      if (std::isfinite(prev)) worst = std::max(worst, f - prev);
      prev = f;
    });
  }
  return {worst <= 1e-12, "largest increase F(x_k+1) - F(x_k) = " + fmt(worst) + " (tol 1e-12)"};
}

Outcome training_efficacy() {
  const fs::path ck = artifacts.pa_checkpoint();
  auto test = load_problemset(artifacts.desk_testset());
  auto learned = load_checkpoint(ck, AblationConfig::preset("PA"));
  const auto rep = evaluate({learned_solver(learned.params), classic_solver(SolverKind::fista)}, test, 100, {1e-3});
  const auto& l = rep.at("l2o_PA");
  const auto& f = rep.at("fista");
  const double gl = l.aggregate[100].median_gap, gf = f.aggregate[100].median_gap;
  const auto il = l.to_tolerance[0].iters, iff = f.to_tolerance[0].iters;
  const bool iters_ok = il && (!iff || *il <= *iff);
  const bool time_ok = *artifacts.pa_train_seconds < 1800.0;
  return {gl * 10.0 <= gf && iters_ok && time_ok,
          "median gap at k=100: L2O-PA " + fmt(gl) + " vs FISTA " + fmt(gf) + "; iterations to 1e-3: " + iters_text(il) +
              " vs " + iters_text(iff) + "; training " + fmt(*artifacts.pa_train_seconds) + " s"};
}

Outcome bias_decay() {
  const fs::path ck = artifacts.pba12_checkpoint();
  auto test = load_problemset(artifacts.desk_testset());
  auto learned = load_checkpoint(ck, AblationConfig::preset("PBA12"));
  const auto tr = trace_coefficients(learned.params, test, 100);
  const double r1 = tr[49].b1 / tr[0].b1, r2 = tr[49].b2 / tr[0].b2;
  const bool time_ok = *artifacts.pbac_train_seconds < 2700.0;
  return {tr[49].b1 <= 0.5 * tr[0].b1 && tr[49].b2 <= 0.5 * tr[0].b2 && time_ok,
          "mean |b1|: k=1 " + fmt(tr[0].b1) + ", k=50 " + fmt(tr[49].b1) + " (ratio " + fmt(r1) + "); mean |b2|: k=1 " +
              fmt(tr[0].b2) + ", k=50 " + fmt(tr[49].b2) + " (ratio " + fmt(r2) + "); training " +
              fmt(*artifacts.pbac_train_seconds) + " s"};
}

Outcome cross_scale() {
  auto learned = load_checkpoint(artifacts.pa_checkpoint(), AblationConfig::preset("PA"));
  auto big = generate_problemset(SmoothKind::lasso_quadratic, 250, 500, 50, 0.1, 128, 4242, "acceptance-cross");
  const auto rep = cross_scale_eval(learned.params, big, 100);
  const double gl = rep.solvers[0].aggregate[100].median_gap, gf = rep.solvers[1].aggregate[100].median_gap;
  return {gl <= gf, "250x500 median gap at k=100: L2O-PA " + fmt(gl) + " vs FISTA " + fmt(gf)};
}

Outcome determinism() {
  const fs::path a = artifacts.pa_checkpoint();
  const fs::path b = kWork / "ck_pa_t1_b", c = kWork / "ck_pa_t8";
  cli("train " + kDeskTrain + " --preset PA --threads 1 --out " + b.string(), "train_pa_t1_b.log");
  cli("train " + kDeskTrain + " --preset PA --threads 8 --out " + c.string(), "train_pa_t8.log");
  const std::string test = artifacts.desk_testset().string();
  const std::vector<std::pair<fs::path, std::string>> evals = {{a, "1"}, {b, "1"}, {c, "8"}};
  std::vector<std::string> curves, weights, manifests;
  for (std::size_t i = 0; i < evals.size(); ++i) {
    const fs::path out = kWork / ("eval_" + std::to_string(i));
    cli("eval --checkpoint " + evals[i].first.string() + " --testset " + test + " --baselines fista --iters 100 --threads " +
            evals[i].second + " --out " + out.string(),
        "eval_" + std::to_string(i) + ".log");
    curves.push_back(slurp(out / "curves.csv"));
    weights.push_back(slurp(evals[i].first / "weights.bin"));
    manifests.push_back(slurp(evals[i].first / "model.json"));
  }
  const bool runs = weights[0] == weights[1] && manifests[0] == manifests[1] && curves[0] == curves[1];
  const bool threads = weights[0] == weights[2] && manifests[0] == manifests[2] && curves[0] == curves[2];
  return {runs && threads, std::string("repeat run identical: ") + (runs ? "yes" : "no") +
                               "; threads 1 vs 8 identical: " + (threads ? "yes" : "no") + " (weights " +
                               std::to_string(weights[0].size()) + " bytes, curves " + std::to_string(curves[0].size()) +
                               " bytes)"};
}

Outcome fixed_point() {
  auto learned = load_checkpoint(artifacts.pa_checkpoint(), AblationConfig::preset("PA"));
  auto set = generate_problemset(SmoothKind::lasso_quadratic, 50, 100, 20, 0.1, 20, 99, "acceptance-fixed-point");
  const double r = checks::fixed_point_residual(learned.params, set);
  return {r <= 1e-6, "max |x+ - x*| / (1 + |x*|) = " + fmt(r) + " over 20 instances (tol 1e-6)"};
}

}  // namespace

int main() {
  fs::create_directories(kWork);
  struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
  };
  // Budgets of 5, 6 and 8 include the training runs they trigger.
  const std::vector<Criterion> criteria = {
      {1, "FISTA equivalence", 10, fista_equivalence},
      {2, "prox oracle equivalence", 30, prox_oracles},
      {3, "BPTT correctness", 60, bptt_correctness},
      {4, "monotone ISTA", 30, monotone_ista},
      {5, "desk-scale training efficacy", 1800, training_efficacy},
      {6, "bias decay", 2700, bias_decay},
      {7, "cross-scale generalization", 600, cross_scale},
      {8, "determinism", 3 * 1800, determinism},
      {9, "fixed-point residual", 60, fixed_point},
  };
  int failures = 0;
  std::vector<std::string> lines;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double t = seconds_since(t0);
    const bool in_time = t <= c.budget_s;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::ostringstream line;
    line << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail << "; " << fmt(t)
         << " s" << (in_time ? "" : " (over budget)");
    std::cout << line.str() << std::endl;
    lines.push_back(line.str());
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l.substr(0, l.find(':')) << "\n";
  return failures == 0 ? 0 : 1;
}
