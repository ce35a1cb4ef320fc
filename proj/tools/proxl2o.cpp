// proxl2o: data generation, training, evaluation, ablation, checks, benchmarks.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "proxl2o/checkpoint.hpp"
#include "proxl2o/checks.hpp"
#include "proxl2o/evalbench.hpp"
#include "proxl2o/training.hpp"

namespace fs = std::filesystem;
using namespace proxl2o;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitUsage = 64;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw UsageError("not a number: '" + item + "'");
    }
  }
  return out;
}

void echo(const std::string& command, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::cout << "# proxl2o " << command << "\n";
  for (const auto& [k, v] : kv) std::cout << k << " = " << v << "\n";
  std::cout << "#\n";
}

std::size_t resolve_threads(std::size_t flag) { return flag ? flag : default_thread_count(); }

// ---------------------------------------------------------------------------
// Training flags: every flag maps onto a TrainConfig key; explicitly given
// flags override the config file.

struct TrainFlags {
  std::string config;
  std::map<std::string, std::string> values;  // key -> raw text, filled by CLI11

  void attach(CLI::App* app) {
    app->add_option("--config", config, "key = value config file");
    static const std::vector<std::pair<std::string, std::string>> flags = {
        {"--batch-size", "batch_size"}, {"--unroll", "unroll_K"},        {"--segments", "segments"},
        {"--minibatches", "num_minibatches"}, {"--meta-lr", "meta_lr"},  {"--beta1", "beta1"},
        {"--beta2", "beta2"},           {"--eps", "eps"},                {"--clip", "clip_norm"},
        {"--seed", "seed"},             {"--kind", "kind"},              {"--m", "m"},
        {"--n", "n"},                   {"--sparsity", "sparsity"},      {"--lambda", "lambda"},
        {"--preset", "preset"},         {"--model", "model"},            {"--p-scale", "p_scale"},
        {"--preprocess", "preprocess"}, {"--hidden", "hidden"},          {"--layers", "layers"},
        {"--head-init-scale", "head_init_scale"}};
    for (const auto& [flag, key] : flags) app->add_option(flag, values[key], "TrainConfig " + key);
    app_ = app;
    flags_ = &flags;
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    try {
      if (!config.empty()) cfg = TrainConfig::load(config, cfg);
      for (const auto& [flag, key] : *flags_) {
        if (app_->count(flag) > 0) cfg.set(key, values.at(key));
      }
      cfg.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }

 private:
  CLI::App* app_ = nullptr;
  const std::vector<std::pair<std::string, std::string>>* flags_ = nullptr;
};

TrainResult run_training(const TrainConfig& cfg, std::size_t threads, bool verbose) {
  TrainConfig c = cfg;
  c.threads = threads;
  return train(c, [&](std::size_t mb, double loss, double gn) {
    if (verbose && (mb % 10 == 0 || mb + 1 == cfg.num_minibatches)) {
      std::cout << "minibatch " << mb << " meta_loss " << format_double(loss) << " grad_norm " << format_double(gn) << "\n"
                << std::flush;
    }
  });
}

void write_train_outputs(const TrainConfig& cfg, TrainResult& result, const fs::path& out) {
  save_checkpoint(result.params, out, training_meta(cfg, result.report));
  result.report.checkpoint_path = out.string();
  write_text_file(out / "train_report.json", [&](std::ostream& o) { o << result.report.to_json().dump(2) << "\n"; });
  write_text_file(out / "train_config.txt", [&](std::ostream& o) { o << cfg.to_text(); });
}

// ---------------------------------------------------------------------------
// Solvers shared by eval and bench

struct SolverFlags {
  double adam_lr = 1e-3;
  double subgrad_step = 1.0;

  void attach(CLI::App* app) {
    app->add_option("--adam-lr", adam_lr, "Adam baseline learning rate");
    app->add_option("--subgrad-step", subgrad_step, "subgradient step0 in units of 1/L");
  }

  SolverConfig base() const {
    SolverConfig c;
    c.adam_lr = adam_lr;
    c.step0 = subgrad_step;
    return c;
  }
};

std::vector<Solver> build_solvers(const std::vector<std::string>& names, const std::string& checkpoint,
                                  const std::string& generic_checkpoint, const SolverFlags& sf,
                                  const ProblemSet& testset) {
  std::vector<Solver> solvers;
  auto warn_kind = [&](const LoadedCheckpoint& ck, const std::string& path) {
    if (ck.training.is_object() && ck.training.contains("problem_kind") &&
        ck.training["problem_kind"].get<std::string>() != to_string(testset.kind)) {
      std::cerr << "warning: checkpoint " << path << " was trained on " << ck.training["problem_kind"].get<std::string>()
                << " problems, test set is " << to_string(testset.kind) << "\n";
    }
    if (testset.regularizer != RegularizerKind::l1) {
      std::cerr << "warning: checkpoint " << path << " was trained with an l1 regularizer, test set uses "
                << to_string(testset.regularizer) << "\n";
    }
  };
  if (!checkpoint.empty()) {
    auto ck = load_checkpoint(checkpoint);
    warn_kind(ck, checkpoint);
    solvers.push_back(learned_solver(std::move(ck.params)));
  }
  for (const auto& name : names) {
    if (name == "generic") {
      if (generic_checkpoint.empty()) throw UsageError("baseline 'generic' needs --generic-checkpoint");
      auto ck = load_checkpoint(generic_checkpoint);
      if (ck.params.arch.kind != ModelKind::generic) throw UsageError(generic_checkpoint + " is not a generic model");
      warn_kind(ck, generic_checkpoint);
      solvers.push_back(learned_solver(std::move(ck.params)));
    } else {
      try {
        solvers.push_back(make_classic_solver(name, sf.base()));
      } catch (const Error&) {
        throw UsageError("unknown solver '" + name + "'");
      }
    }
  }
  return solvers;
}

void write_eval_outputs(const EvalReport& report, const fs::path& out, bool svg) {
  write_text_file(out / "curves.csv", [&](std::ostream& o) { write_curves_csv(o, report); });
  write_text_file(out / "aggregate.csv", [&](std::ostream& o) { write_aggregate_csv(o, report); });
  if (svg) write_text_file(out / "gap.svg", [&](std::ostream& o) { write_svg_plot(o, report); });
}

void print_summary(const EvalReport& report) {
  for (const auto& s : report.solvers) {
    const auto& last = s.aggregate.back();
    std::cout << s.solver << ": median gap at k=" << last.k << " " << format_double(last.median_gap);
    for (const auto& t : s.to_tolerance) {
      std::cout << ", iters to " << tol_label(t.tol) << " " << (t.iters ? std::to_string(*t.iters) : "N/A");
    }
    std::cout << "\n";
  }
  std::cout << "min gap over all solvers " << format_double(report.min_gap()) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learned proximal optimizers: generate, train, evaluate"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a problem set");
  std::string gen_kind = "lasso", gen_out, gen_csv;
  std::size_t gen_m = 250, gen_n = 500, gen_s = 50, gen_count = 1024;
  double gen_lambda = 0.1;
  std::uint64_t gen_seed = 0;
  bool gen_standardize = false;
  gen->add_option("--kind", gen_kind, "lasso | logistic")->check(CLI::IsMember({"lasso", "logistic"}));
  gen->add_option("--m", gen_m);
  gen->add_option("--n", gen_n);
  gen->add_option("--sparsity", gen_s);
  gen->add_option("--lambda", gen_lambda);
  gen->add_option("--count", gen_count);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--csv", gen_csv, "load a logistic data set from CSV instead of sampling");
  gen->add_flag("--standardize", gen_standardize, "z-score CSV feature columns");
  gen->add_option("--out", gen_out)->required();

  // train
  auto* tr = app.add_subcommand("train", "meta-train a learned optimizer");
  TrainFlags train_flags;
  train_flags.attach(tr);
  std::string train_out;
  std::size_t train_threads = 0;
  tr->add_option("--out", train_out, "checkpoint directory")->required();
  tr->add_option("--threads", train_threads);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate solvers on a problem set");
  std::string ev_ck, ev_generic, ev_test, ev_out, ev_baselines = "fista";
  std::size_t ev_iters = 100, ev_threads = 0;
  bool ev_svg = false;
  SolverFlags ev_sf;
  ev->add_option("--checkpoint", ev_ck);
  ev->add_option("--generic-checkpoint", ev_generic);
  ev->add_option("--testset", ev_test)->required();
  ev->add_option("--baselines", ev_baselines, "comma list of ista,fista,pgd_metric,adam,subgrad,generic");
  ev->add_option("--iters", ev_iters);
  ev->add_option("--out", ev_out)->required();
  ev->add_flag("--svg", ev_svg);
  ev->add_option("--threads", ev_threads);
  ev_sf.attach(ev);

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and evaluate several presets");
  TrainFlags ab_flags;
  ab_flags.attach(ab);
  std::string ab_presets = "P,A,PA,PBA,PBA1,PBA2,PBA12", ab_test, ab_out;
  std::size_t ab_iters = 100, ab_threads = 0, ab_test_count = 128;
  std::uint64_t ab_test_seed = 1;
  ab->add_option("--presets", ab_presets);
  ab->add_option("--testset", ab_test, "problem set directory; generated from the recipe when absent");
  ab->add_option("--test-count", ab_test_count);
  ab->add_option("--test-seed", ab_test_seed);
  ab->add_option("--iters", ab_iters);
  ab->add_option("--out", ab_out)->required();
  ab->add_option("--threads", ab_threads);

  // check
  auto* ck = app.add_subcommand("check", "run an invariant suite");
  std::string ck_suite, ck_ckpt;
  std::size_t ck_threads = 0;
  ck->add_option("--suite", ck_suite)->required()->check(CLI::IsMember({"equivalence", "gradients", "prox", "theory"}));
  ck->add_option("--checkpoint", ck_ckpt);
  ck->add_option("--threads", ck_threads);

  // bench
  auto* be = app.add_subcommand("bench", "runtime table");
  std::string be_solvers = "ista,fista", be_ck, be_test, be_tols = "1e-3,1e-6", be_out;
  std::size_t be_max_iter = 1000, be_threads = 0;
  SolverFlags be_sf;
  be->add_option("--solvers", be_solvers);
  be->add_option("--checkpoint", be_ck, "adds the learned optimizer to the table");
  be->add_option("--testset", be_test)->required();
  be->add_option("--tolerances", be_tols);
  be->add_option("--max-iter", be_max_iter);
  be->add_option("--out", be_out)->required();
  be->add_option("--threads", be_threads);
  be_sf.attach(be);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return e.get_exit_code() == 0 ? rc : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      if (gen_count == 0 && gen_csv.empty()) throw UsageError("--count must be >= 1");
      if (gen_csv.empty() && (gen_m == 0 || gen_n == 0 || gen_s == 0 || gen_s > gen_n)) {
        throw UsageError("need m, n >= 1 and 1 <= sparsity <= n");
      }
      if (gen_lambda < 0.0) throw UsageError("--lambda must be >= 0");
      echo("gen", {{"kind", gen_kind}, {"m", std::to_string(gen_m)}, {"n", std::to_string(gen_n)},
                   {"sparsity", std::to_string(gen_s)}, {"lambda", format_double(gen_lambda)},
                   {"count", std::to_string(gen_count)}, {"seed", std::to_string(gen_seed)}, {"csv", gen_csv},
                   {"standardize", gen_standardize ? "true" : "false"}, {"out", gen_out}});
      ProblemSet set = gen_csv.empty()
                           ? generate_problemset(smooth_kind_from_string(gen_kind), gen_m, gen_n, gen_s, gen_lambda,
                                                 gen_count, gen_seed)
                           : load_logistic_csv(gen_csv, gen_lambda, gen_standardize);
      save_problemset(set, gen_out);
      std::cout << "wrote " << set.size() << " " << to_string(set.kind) << " instances (" << set.m << "x" << set.n
                << ", lambda " << format_double(set.lambda) << ") to " << gen_out << "\n";
      return kExitOk;
    }

    if (tr->parsed()) {
      const TrainConfig cfg = train_flags.resolve();
      const std::size_t threads = resolve_threads(train_threads);
      std::cout << "# proxl2o train\n" << cfg.to_text() << "out = " << train_out << "\nthreads = " << threads << "\n#\n";
      auto result = run_training(cfg, threads, true);
      write_train_outputs(cfg, result, train_out);
      std::cout << "checkpoint " << train_out << " (" << result.params.trainable_count() << " trainable weights), "
                << "final meta_loss " << format_double(result.report.meta_loss.back()) << ", wall time "
                << result.report.wall_time_s << " s\n";
      return kExitOk;
    }

    if (ev->parsed()) {
      const std::size_t threads = resolve_threads(ev_threads);
      echo("eval", {{"checkpoint", ev_ck}, {"generic_checkpoint", ev_generic}, {"testset", ev_test},
                    {"baselines", ev_baselines}, {"iters", std::to_string(ev_iters)}, {"out", ev_out},
                    {"svg", ev_svg ? "true" : "false"}, {"adam_lr", format_double(ev_sf.adam_lr)},
                    {"subgrad_step", format_double(ev_sf.subgrad_step)}, {"threads", std::to_string(threads)}});
      ProblemSet set = load_problemset(ev_test);
      auto solvers = build_solvers(split_list(ev_baselines), ev_ck, ev_generic, ev_sf, set);
      if (solvers.empty()) throw UsageError("nothing to evaluate");
      auto report = evaluate(solvers, set, ev_iters, {1e-3, 1e-6}, threads);
      write_eval_outputs(report, ev_out, ev_svg);
      print_summary(report);
      return kExitOk;
    }

    if (ab->parsed()) {
      const TrainConfig base = ab_flags.resolve();
      const std::size_t threads = resolve_threads(ab_threads);
      const auto presets = split_list(ab_presets);
      if (presets.empty()) throw UsageError("--presets is empty");
      for (const auto& p : presets) {
        try {
          (void)AblationConfig::preset(p);
        } catch (const Error&) {
          throw UsageError("unknown preset '" + p + "'");
        }
      }
      std::cout << "# proxl2o ablate\n" << base.to_text() << "presets = " << ab_presets << "\ntestset = " << ab_test
                << "\ntest_count = " << ab_test_count << "\ntest_seed = " << ab_test_seed << "\niters = " << ab_iters
                << "\nout = " << ab_out << "\nthreads = " << threads << "\n#\n";
      ProblemSet set = ab_test.empty() ? generate_problemset(base.kind, base.m, base.n, base.sparsity, base.lambda,
                                                             ab_test_count, ab_test_seed, "test")
                                       : load_problemset(ab_test);
      std::vector<Solver> solvers;
      for (const auto& p : presets) {
        TrainConfig cfg = base;
        cfg.preset = p;
        std::cout << "training " << p << "\n" << std::flush;
        auto result = run_training(cfg, threads, false);
        write_train_outputs(cfg, result, fs::path(ab_out) / p);
        solvers.push_back(learned_solver(result.params));
      }
      solvers.push_back(classic_solver(SolverKind::fista));
      auto report = evaluate(solvers, set, ab_iters, {1e-3, 1e-6}, threads);
      write_eval_outputs(report, ab_out, true);
      print_summary(report);
      return kExitOk;
    }

    if (ck->parsed()) {
      const std::size_t threads = resolve_threads(ck_threads);
      echo("check", {{"suite", ck_suite}, {"checkpoint", ck_ckpt}, {"threads", std::to_string(threads)}});
      checks::SuiteReport rep;
      if (ck_suite == "prox") rep = checks::prox_suite();
      else if (ck_suite == "gradients") rep = checks::gradient_suite();
      else if (ck_suite == "equivalence") rep = checks::equivalence_check_suite();
      else {
        if (ck_ckpt.empty()) throw UsageError("suite 'theory' needs --checkpoint");
        auto loaded = load_checkpoint(ck_ckpt);
        rep = checks::theory_suite(loaded.params, checks::recipe_of(loaded.training), 99, threads);
      }
      for (const auto& n : rep.notes) std::cout << n << "\n";
      for (const auto& r : rep.results) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << " max deviation " << format_double(r.deviation)
                  << " tolerance " << format_double(r.tolerance) << "\n";
      }
      if (!rep.pass()) {
        for (const auto& r : rep.results)
          if (!r.pass) std::cerr << "failed property: " << r.name << "\n";
        return kExitFailure;
      }
      return kExitOk;
    }

    if (be->parsed()) {
      const std::size_t threads = resolve_threads(be_threads);
      echo("bench", {{"solvers", be_solvers}, {"checkpoint", be_ck}, {"testset", be_test}, {"tolerances", be_tols},
                     {"max_iter", std::to_string(be_max_iter)}, {"out", be_out}, {"threads", std::to_string(threads)}});
      const auto names = split_list(be_solvers);
      if (names.empty() && be_ck.empty()) throw UsageError("solver list is empty");
      const auto tols = parse_doubles(be_tols);
      if (tols.empty()) throw UsageError("tolerance list is empty");
      ProblemSet set = load_problemset(be_test);
      auto solvers = build_solvers(names, be_ck, "", be_sf, set);
      auto rows = runtime_table(solvers, set, tols, be_max_iter, threads);
      write_text_file(be_out, [&](std::ostream& o) { write_runtime_csv(o, rows, tols); });
      write_runtime_csv(std::cout, rows, tols);
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericAbort& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
