#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "proxl2o/checks.hpp"
#include "proxl2o/checkpoint.hpp"
#include "proxl2o/training.hpp"

using namespace proxl2o;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny() {
  TrainConfig c;
  c.batch_size = 4;
  c.unroll_K = 10;
  c.segments = 2;
  c.num_minibatches = 3;
  c.m = 10;
  c.n = 20;
  c.sparsity = 4;
  c.meta_lr = 1e-2;
  c.seed = 5;
  c.threads = 1;
  return c;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("proxl2o_training_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(TrainConfig, ParsesKeyValueLinesOverDefaults) {
  std::istringstream in("# comment\nbatch_size = 8\n\nmeta_lr=0.005  # trailing\npreset = PBA12\nmodel = structured\n");
  const auto c = TrainConfig::parse(in, TrainConfig{});
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_EQ(c.meta_lr, 0.005);
  EXPECT_EQ(c.preset, "PBA12");
  EXPECT_EQ(c.unroll_K, 100u);
  EXPECT_EQ(c.segments, 5u);
}

TEST(TrainConfig, TextRoundTrip) {
  auto c = tiny();
  c.preset = "PBA1";
  c.meta_lr = 0.1 + 0.2;
  std::istringstream in(c.to_text());
  EXPECT_EQ(TrainConfig::parse(in, TrainConfig{}).to_text(), c.to_text());
}

TEST(TrainConfig, ErrorsNameLineAndKey) {
  std::istringstream bad_key("batch_size = 4\nwarp = 9\n");
  try {
    TrainConfig::parse(bad_key, TrainConfig{});
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("config:2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("warp"), std::string::npos);
  }
  std::istringstream bad_int("batch_size = 4x\n");
  EXPECT_THROW(TrainConfig::parse(bad_int, TrainConfig{}), FormatError);
  std::istringstream no_eq("batch_size 4\n");
  EXPECT_THROW(TrainConfig::parse(no_eq, TrainConfig{}), FormatError);
  std::istringstream negative("batch_size = -1\n");
  EXPECT_THROW(TrainConfig::parse(negative, TrainConfig{}), FormatError);
}

TEST(TrainConfig, ValidateRejectsInconsistentSettings) {
  auto c = tiny();
  c.segments = 3;
  EXPECT_THROW(c.validate(), Error);
  c = tiny();
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
  c = tiny();
  c.sparsity = 21;
  EXPECT_THROW(c.validate(), Error);
  c = tiny();
  c.preset = "Q";
  EXPECT_THROW(c.validate(), Error);
  c = tiny();
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_NO_THROW(tiny().validate());
}

TEST(Training, BatchesAreSeededAndDistinct) {
  const auto c = tiny();
  const auto a = training_batch(c, 0), b = training_batch(c, 0), other = training_batch(c, 1);
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a[2].matrix(), b[2].matrix());
  EXPECT_FALSE(a[0].matrix() == a[1].matrix());
  EXPECT_FALSE(a[0].matrix() == other[0].matrix());
}

TEST(Training, ZeroLearningRateLeavesParametersUnchanged) {
  auto c = tiny();
  c.meta_lr = 0.0;
  const auto r = train(c);
  const auto init = init_params(c.architecture(), c.ablation(), c.seed, c.head_init_scale);
  EXPECT_EQ(r.params.blocks, init.blocks);
  EXPECT_EQ(r.report.meta_loss.size(), 3u);
}

TEST(Training, UpdatesOnlyTrainableBlocks) {
  const auto c = tiny();
  const auto r = train(c);
  const auto init = init_params(c.architecture(), c.ablation(), c.seed, c.head_init_scale);
  EXPECT_FALSE(r.params.blocks[r.params.head_bias()] == init.blocks[init.head_bias()]);
  EXPECT_EQ(r.params.blocks[r.params.h0()], init.blocks[init.h0()]);
  EXPECT_EQ(r.params.blocks[r.params.c0()], init.blocks[init.c0()]);
  for (double l : r.report.meta_loss) EXPECT_TRUE(std::isfinite(l));
}

TEST(Training, BitIdenticalAcrossThreadCounts) {
  auto c = tiny();
  c.threads = 1;
  const auto a = train(c);
  c.threads = 4;
  const auto b = train(c);
  const auto again = train(c);
  EXPECT_EQ(a.params.blocks, b.params.blocks);
  EXPECT_EQ(b.params.blocks, again.params.blocks);
  EXPECT_EQ(a.report.meta_loss, b.report.meta_loss);
}

TEST(Training, BatchGradientIsMeanOfInstanceGradients) {
  const auto c = tiny();
  const auto params = init_params(c.architecture(), c.ablation(), 3);
  const auto batch = training_batch(c, 0);
  const auto bg = batch_gradient(params, batch, 10, 2, 1);
  std::vector<DenseMatrix> sum;
  double loss = 0.0;
  for (const auto& p : batch) {
    double l = 0.0;
    auto g = checks::rollout_gradient(p, params, 10, 2, &l);
    loss += l / 4.0;
    if (sum.empty()) {
      for (std::size_t i = 0; i < bg.grads.size(); ++i) sum.emplace_back(g[i].rows(), g[i].cols());
    }
    for (std::size_t i = 0; i < bg.grads.size(); ++i)
      for (std::size_t e = 0; e < g[i].size(); ++e) sum[i][e] += g[i][e] / 4.0;
  }
  EXPECT_NEAR(bg.loss, loss, 1e-13 * std::abs(loss));
  for (std::size_t i = 0; i < bg.grads.size(); ++i) EXPECT_LE(checks::max_block_diff({bg.grads[i]}, {sum[i]}), 1e-13);
}

TEST(Training, TruncationBlocksGradientAcrossSegments) {
  // With one segment per step, the gradient ignores how parameters shaped
  // earlier states, so it differs from the full-unroll gradient.
  const auto c = tiny();
  const auto params = init_params(c.architecture(), c.ablation(), 4);
  const auto p = training_batch(c, 0)[0];
  const auto full = checks::rollout_gradient(p, params, 4, 1);
  const auto cut = checks::rollout_gradient(p, params, 4, 4);
  EXPECT_GT(checks::max_block_diff(full, cut), 1e-8);
  // K = 1 has nothing to truncate.
  EXPECT_LE(checks::max_block_diff(checks::rollout_gradient(p, params, 1, 1), checks::rollout_gradient(p, params, 1, 1)), 0.0);
}

TEST(Training, SingleSegmentIsFullBpttAndSplittingKeepsForwardLoss) {
  const auto c = tiny();
  const auto params = init_params(c.architecture(), c.ablation(), 6);
  const auto p = training_batch(c, 2)[1];
  double l1 = 0.0, l2 = 0.0;
  const auto one = checks::rollout_gradient(p, params, 6, 1, &l1);
  const auto two = checks::rollout_gradient(p, params, 6, 2, &l2);
  EXPECT_EQ(l1, l2);
  EXPECT_GT(checks::max_block_diff(one, two), 1e-10);
  // Full BPTT: each coordinate matches a central difference of the loss.
  RngStream rng(7, "full-bptt");
  RolloutOptions eval;
  eval.K = 6;
  for (int t = 0; t < 5; ++t) {
    auto work = params;
    const std::size_t b = rng.uniform_index(params.trainable_blocks());
    const std::size_t e = rng.uniform_index(params.blocks[b].size());
    const double h = 1e-6, w0 = work.blocks[b][e];
    work.blocks[b][e] = w0 + h;
    const double fp = rollout(p, work, eval).loss;
    work.blocks[b][e] = w0 - h;
    const double fm = rollout(p, work, eval).loss;
    const double fd = (fp - fm) / (2.0 * h);
    const double floor = 4.0 * std::numeric_limits<double>::epsilon() * std::abs(l1) / h;
    EXPECT_LE(std::abs(fd - one[b][e]), std::max(1e-5 * std::abs(fd), floor)) << "block " << b << " entry " << e;
  }
}

TEST(Training, MetaGradientMatchesFiniteDifferences) {
  // Two instances, four steps, five random weights.
  auto c = tiny();
  c.batch_size = 2;
  const auto batch = training_batch(c, 3);
  const auto params = init_params(c.architecture(), c.ablation(), 8, 1.0);
  const auto bg = batch_gradient(params, batch, 4, 1, 1);
  RngStream rng(9, "meta-fd");
  for (int t = 0; t < 5; ++t) {
    const std::size_t b = rng.uniform_index(params.trainable_blocks());
    const std::size_t e = rng.uniform_index(params.blocks[b].size());
    auto work = params;
    const double h = 1e-6, w0 = work.blocks[b][e];
    work.blocks[b][e] = w0 + h;
    const double fp = batch_gradient(work, batch, 4, 1, 1).loss;
    work.blocks[b][e] = w0 - h;
    const double fm = batch_gradient(work, batch, 4, 1, 1).loss;
    const double fd = (fp - fm) / (2.0 * h);
    const double floor = 4.0 * std::numeric_limits<double>::epsilon() * std::abs(bg.loss) / h;
    EXPECT_LE(std::abs(fd - bg.grads[b][e]), std::max(1e-4 * std::abs(fd), floor))
        << "block " << b << " entry " << e << " fd " << fd << " analytic " << bg.grads[b][e];
  }
}

TEST(Training, ClippingBoundsTheStep) {
  // A single Adam step moves each weight by at most lr, whatever the gradient scale.
  auto c = tiny();
  c.num_minibatches = 1;
  c.meta_lr = 1e-3;
  const auto r = train(c);
  const auto init = init_params(c.architecture(), c.ablation(), c.seed, c.head_init_scale);
  for (std::size_t b = 0; b < r.params.trainable_blocks(); ++b)
    EXPECT_LE(checks::max_block_diff({r.params.blocks[b]}, {init.blocks[b]}), 1e-3 * (1.0 + 1e-12));
  EXPECT_EQ(r.report.clip_norm, 1.0);
}

TEST(Training, MetaLossDecreasesOnSmallProblems) {
  // Per-minibatch losses vary with the sampled instances, so compare on a
  // fixed held-out batch.
  auto c = tiny();
  c.batch_size = 8;
  c.unroll_K = 20;
  c.segments = 4;
  c.num_minibatches = 40;
  c.meta_lr = 2e-2;
  const auto r = train(c);
  const auto init = init_params(c.architecture(), c.ablation(), c.seed, c.head_init_scale);
  const auto held_out = training_batch(c, 100000);
  const double before = batch_gradient(init, held_out, 20, 4, 1).loss;
  const double after = batch_gradient(r.params, held_out, 20, 4, 1).loss;
  EXPECT_LT(after, before);
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto dir = scratch("roundtrip");
  const auto c = tiny();
  const auto r = train(c);
  save_checkpoint(r.params, dir, training_meta(c, r.report));
  const auto loaded = load_checkpoint(dir, AblationConfig::preset("PA"));
  EXPECT_EQ(loaded.params.blocks, r.params.blocks);
  EXPECT_EQ(loaded.params.arch, r.params.arch);
  EXPECT_EQ(loaded.params.ablation.modes, r.params.ablation.modes);
  EXPECT_EQ(loaded.params.seed, c.seed);
  EXPECT_EQ(loaded.training.at("minibatches").get<std::size_t>(), 3u);
  // Identical inputs give identical bytes.
  const auto dir2 = scratch("roundtrip2");
  save_checkpoint(r.params, dir2, training_meta(c, r.report));
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "weights.bin"), slurp(dir2 / "weights.bin"));
  EXPECT_EQ(slurp(dir / "model.json"), slurp(dir2 / "model.json"));
}

TEST(Checkpoint, RejectsTruncatedWeightsAndPresetMismatch) {
  const auto dir = scratch("bad");
  const auto params = init_params(Architecture{}, AblationConfig::preset("PBA12"), 1);
  save_checkpoint(params, dir);
  EXPECT_THROW(load_checkpoint(dir, AblationConfig::preset("PA")), FormatError);
  EXPECT_NO_THROW(load_checkpoint(dir, AblationConfig::preset("PBA12")));
  fs::resize_file(dir / "weights.bin", fs::file_size(dir / "weights.bin") - 8);
  try {
    load_checkpoint(dir);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bytes"), std::string::npos);
  }
  EXPECT_THROW(load_checkpoint(scratch("missing")), FormatError);
}
