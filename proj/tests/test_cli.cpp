#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(PROXL2O_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("proxl2o_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

const char* kTinyTrain =
    "--m 10 --n 20 --sparsity 4 --batch-size 4 --unroll 10 --segments 2 --minibatches 2 --seed 3";

}  // namespace

TEST(Cli, UsageErrorsExit64) {
  EXPECT_EQ(run("").code, 64);
  EXPECT_EQ(run("frobnicate").code, 64);
  EXPECT_EQ(run("gen").code, 64);  // --out missing
  EXPECT_EQ(run("check --suite nonsense").code, 64);
  const auto dir = scratch("usage");
  EXPECT_EQ(run("gen --sparsity 30 --n 20 --out " + (dir / "x").string()).code, 64);
  EXPECT_EQ(run("train --segments 3 --unroll 10 --out " + (dir / "ck").string()).code, 64);
  EXPECT_EQ(run("train --preset QQ --out " + (dir / "ck").string()).code, 64);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, GenEchoesConfigAndWritesSet) {
  const auto dir = scratch("gen");
  const auto r = run("gen --m 8 --n 16 --sparsity 3 --count 4 --seed 9 --out " + (dir / "set").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("# proxl2o gen"), std::string::npos);
  EXPECT_NE(r.out.find("m = 8"), std::string::npos);
  EXPECT_NE(r.out.find("seed = 9"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "set" / "manifest.json"));
  EXPECT_EQ(fs::file_size(dir / "set" / "data.bin"), 4u * (8u * 16u + 8u) * 8u);
}

TEST(Cli, GenRejectsBadCsvWithLocation) {
  const auto dir = scratch("csv");
  {
    std::ofstream out(dir / "d.csv");
    out << "a,b,label\n1,2,1\n3,4,7\n";
  }
  const auto r = run("gen --csv " + (dir / "d.csv").string() + " --out " + (dir / "set").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("d.csv:3"), std::string::npos) << r.out;
}

TEST(Cli, CheckSuitesPass) {
  for (const char* suite : {"prox", "equivalence", "gradients"}) {
    const auto r = run(std::string("check --suite ") + suite + " --threads 1");
    EXPECT_EQ(r.code, 0) << suite << "\n" << r.out;
    EXPECT_NE(r.out.find("PASS"), std::string::npos);
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
  }
  EXPECT_EQ(run("check --suite theory").code, 64);
}

TEST(Cli, TrainEvalBenchPipeline) {
  const auto dir = scratch("pipeline");
  const std::string set = (dir / "set").string(), ck = (dir / "ck").string();
  ASSERT_EQ(run("gen --m 10 --n 20 --sparsity 4 --count 3 --seed 2 --out " + set).code, 0);
  const auto tr = run(std::string("train ") + kTinyTrain + " --threads 1 --out " + ck);
  ASSERT_EQ(tr.code, 0) << tr.out;
  EXPECT_NE(tr.out.find("batch_size = 4"), std::string::npos);
  EXPECT_NE(tr.out.find("meta_lr = "), std::string::npos);
  EXPECT_TRUE(fs::exists(fs::path(ck) / "weights.bin"));
  EXPECT_TRUE(fs::exists(fs::path(ck) / "train_report.json"));

  const auto ev = run("eval --checkpoint " + ck + " --testset " + set + " --baselines ista,fista --iters 20 --svg --threads 1 --out " +
                      (dir / "ev").string());
  ASSERT_EQ(ev.code, 0) << ev.out;
  EXPECT_NE(ev.out.find("iters = 20"), std::string::npos);
  const std::string curves = slurp(dir / "ev" / "curves.csv");
  EXPECT_EQ(curves.rfind("solver,instance_id,iter,objective,gap\n", 0), 0u);
  EXPECT_NE(curves.find("l2o_PA,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "ev" / "gap.svg"));

  const auto be = run("bench --testset " + set + " --solvers ista,fista --tolerances 1e-3,1e-40 --max-iter 50 --threads 1 --out " +
                      (dir / "bench.csv").string());
  ASSERT_EQ(be.code, 0) << be.out;
  EXPECT_NE(slurp(dir / "bench.csv").find("N/A"), std::string::npos);

  const auto th = run("check --suite theory --threads 1 --checkpoint " + ck);
  EXPECT_NE(th.out.find("# proxl2o check"), std::string::npos) << th.out;
  EXPECT_TRUE(th.code == 0 || th.code == 1) << th.out;
}

TEST(Cli, BenchAndEvalRejectEmptySolverLists) {
  const auto dir = scratch("empty");
  const std::string set = (dir / "set").string();
  ASSERT_EQ(run("gen --m 6 --n 12 --sparsity 2 --count 2 --out " + set).code, 0);
  EXPECT_EQ(run("bench --testset " + set + " --solvers '' --out " + (dir / "b.csv").string()).code, 64);
  EXPECT_EQ(run("bench --testset " + set + " --tolerances '' --out " + (dir / "b.csv").string()).code, 64);
  EXPECT_EQ(run("bench --testset " + set + " --solvers newton --out " + (dir / "b.csv").string()).code, 64);
  EXPECT_EQ(run("eval --testset " + set + " --baselines '' --out " + (dir / "e").string()).code, 64);
  EXPECT_EQ(run("eval --testset " + set + " --baselines generic --out " + (dir / "e").string()).code, 64);
  EXPECT_EQ(run("eval --testset " + (dir / "missing").string() + " --out " + (dir / "e").string()).code, 1);
}

TEST(Cli, TrainAndEvalAreDeterministicAcrossThreads) {
  const auto dir = scratch("determinism");
  const std::string set = (dir / "set").string();
  ASSERT_EQ(run("gen --m 10 --n 20 --sparsity 4 --count 4 --seed 8 --out " + set).code, 0);
  for (const char* t : {"1", "4"}) {
    const std::string ck = (dir / (std::string("ck") + t)).string();
    ASSERT_EQ(run(std::string("train ") + kTinyTrain + " --threads " + t + " --out " + ck).code, 0);
    ASSERT_EQ(run("eval --checkpoint " + ck + " --testset " + set + " --iters 15 --threads " + t + " --out " +
                  (dir / (std::string("ev") + t)).string())
                  .code,
              0);
  }
  EXPECT_EQ(slurp(dir / "ck1" / "weights.bin"), slurp(dir / "ck4" / "weights.bin"));
  EXPECT_EQ(slurp(dir / "ck1" / "model.json"), slurp(dir / "ck4" / "model.json"));
  EXPECT_EQ(slurp(dir / "ev1" / "curves.csv"), slurp(dir / "ev4" / "curves.csv"));
}
