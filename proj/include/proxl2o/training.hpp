#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "proxl2o/checkpoint.hpp"
#include "proxl2o/learned.hpp"
#include "proxl2o/parallel.hpp"
#include "proxl2o/problemset.hpp"

namespace proxl2o {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t unroll_K = 100;
  std::size_t segments = 5;
  std::size_t num_minibatches = 500;
  double meta_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;
  // problem recipe
  SmoothKind kind = SmoothKind::lasso_quadratic;
  std::size_t m = 250;
  std::size_t n = 500;
  std::size_t sparsity = 50;
  double lambda = 0.1;
  // model
  std::string preset = "PA";
  ModelKind model = ModelKind::structured;
  PScale p_scale = PScale::inverse_lipschitz;
  InputPreprocess preprocess = InputPreprocess::none;
  std::size_t hidden = 20;
  std::size_t layers = 2;
  double head_init_scale = 0.1;
  std::size_t threads = 0;  // 0: default_thread_count()

  void validate() const {
    if (batch_size < 1) throw Error("TrainConfig", "batch_size must be >= 1");
    if (unroll_K < 1) throw Error("TrainConfig", "unroll_K must be >= 1");
    if (segments < 1 || unroll_K % segments != 0) throw Error("TrainConfig", "segments must divide unroll_K");
    if (!(meta_lr >= 0.0)) throw Error("TrainConfig", "meta_lr must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) throw Error("TrainConfig", "betas must lie in (0,1)");
    if (sparsity < 1 || sparsity > n || m < 1) throw Error("TrainConfig", "invalid problem recipe");
    if (model == ModelKind::structured) (void)AblationConfig::preset(preset);
  }

  Architecture architecture() const {
    Architecture a;
    a.kind = model;
    a.hidden = hidden;
    a.layers = layers;
    a.p_scale = p_scale;
    a.preprocess = preprocess;
    return a;
  }

  AblationConfig ablation() const {
    if (model == ModelKind::generic) {
      AblationConfig g = AblationConfig::preset("PA");
      g.name = "generic";
      for (auto& mode : g.modes) mode = ChannelMode::fixed(0.0);
      return g;
    }
    return AblationConfig::preset(preset);
  }

  /// Flat `key = value` lines, in a fixed order.
  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "batch_size = " << batch_size << "\n"
       << "unroll_K = " << unroll_K << "\n"
       << "segments = " << segments << "\n"
       << "num_minibatches = " << num_minibatches << "\n"
       << "meta_lr = " << meta_lr << "\n"
       << "beta1 = " << beta1 << "\n"
       << "beta2 = " << beta2 << "\n"
       << "eps = " << eps << "\n"
       << "clip_norm = " << clip_norm << "\n"
       << "seed = " << seed << "\n"
       << "kind = " << to_string(kind) << "\n"
       << "m = " << m << "\n"
       << "n = " << n << "\n"
       << "sparsity = " << sparsity << "\n"
       << "lambda = " << lambda << "\n"
       << "preset = " << preset << "\n"
       << "model = " << to_string(model) << "\n"
       << "p_scale = " << to_string(p_scale) << "\n"
       << "preprocess = " << to_string(preprocess) << "\n"
       << "hidden = " << hidden << "\n"
       << "layers = " << layers << "\n"
       << "head_init_scale = " << head_init_scale << "\n";
    return os.str();
  }

  /// Applies one key; throws on unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value) {
    auto as_size = [&] {
      std::size_t used = 0;
      long long v = std::stoll(value, &used);
      if (used != value.size() || v < 0) throw FormatError("config", "bad integer for " + key + ": '" + value + "'");
      return static_cast<std::size_t>(v);
    };
    auto as_double = [&] {
      std::size_t used = 0;
      double v = std::stod(value, &used);
      if (used != value.size()) throw FormatError("config", "bad number for " + key + ": '" + value + "'");
      return v;
    };
    try {
      if (key == "batch_size") batch_size = as_size();
      else if (key == "unroll_K") unroll_K = as_size();
      else if (key == "segments") segments = as_size();
      else if (key == "num_minibatches") num_minibatches = as_size();
      else if (key == "meta_lr") meta_lr = as_double();
      else if (key == "beta1") beta1 = as_double();
      else if (key == "beta2") beta2 = as_double();
      else if (key == "eps") eps = as_double();
      else if (key == "clip_norm") clip_norm = as_double();
      else if (key == "seed") seed = static_cast<std::uint64_t>(std::stoull(value));
      else if (key == "kind") kind = smooth_kind_from_string(value);
      else if (key == "m") m = as_size();
      else if (key == "n") n = as_size();
      else if (key == "sparsity") sparsity = as_size();
      else if (key == "lambda") lambda = as_double();
      else if (key == "preset") preset = value;
      else if (key == "model") {
        if (value != "structured" && value != "generic") throw FormatError("config", "model must be structured|generic");
        model = value == "structured" ? ModelKind::structured : ModelKind::generic;
      } else if (key == "p_scale") {
        if (value != "unit" && value != "inverse_lipschitz") throw FormatError("config", "p_scale must be unit|inverse_lipschitz");
        p_scale = value == "unit" ? PScale::unit : PScale::inverse_lipschitz;
      } else if (key == "preprocess") {
        if (value != "none" && value != "signed_log") throw FormatError("config", "preprocess must be none|signed_log");
        preprocess = value == "none" ? InputPreprocess::none : InputPreprocess::signed_log;
      } else if (key == "hidden") hidden = as_size();
      else if (key == "layers") layers = as_size();
      else if (key == "head_init_scale") head_init_scale = as_double();
      else throw FormatError("config", "unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw FormatError("config", "cannot parse value for " + key + ": '" + value + "'");
    } catch (const std::out_of_range&) {
      throw FormatError("config", "value out of range for " + key);
    }
  }

  static TrainConfig parse(std::istream& in, TrainConfig base) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("config:" + std::to_string(line_no), "expected key = value");
      try {
        base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const FormatError& e) {
        throw FormatError("config:" + std::to_string(line_no), e.what());
      }
    }
    return base;
  }

  static TrainConfig load(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) throw FormatError(path.string(), "cannot open");
    return parse(in, base);
  }
};

struct TrainReport {
  std::vector<double> meta_loss;       // mean full-unroll loss per minibatch
  std::vector<double> grad_norm;       // pre-clip global norm per minibatch
  double wall_time_s = 0.0;
  double clip_norm = 0.0;
  std::string config_text;
  std::string checkpoint_path;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["config"] = config_text;
    j["clip_norm"] = clip_norm;
    j["wall_time_s"] = wall_time_s;
    j["meta_loss"] = meta_loss;
    j["grad_norm"] = grad_norm;
    j["checkpoint"] = checkpoint_path;
    return j;
  }
};

/// Training optimizees of minibatch `mb`: stream "train-data" of the seed.
inline std::vector<CompositeProblem> training_batch(const TrainConfig& cfg, std::size_t mb) {
  const RngStream base = RngStream(cfg.seed, "train-data").derive(mb);
  std::vector<CompositeProblem> batch;
  batch.reserve(cfg.batch_size);
  for (std::size_t j = 0; j < cfg.batch_size; ++j) {
    RngStream rng = base.derive(j);
    if (cfg.kind == SmoothKind::lasso_quadratic) {
      batch.push_back(CompositeProblem::lasso(generate_lasso(rng, cfg.m, cfg.n, cfg.sparsity, cfg.lambda)));
    } else {
      batch.push_back(CompositeProblem::logistic_l1(generate_logistic(rng, cfg.m, cfg.n, cfg.sparsity, cfg.lambda)));
    }
  }
  return batch;
}

struct BatchGradient {
  double loss = 0.0;
  std::vector<DenseMatrix> grads;  // per trainable block, averaged over the batch
};

/// Mean loss and parameter gradient over `batch`, each instance rolled out
/// with truncated BPTT. Per-instance gradients are folded in index order.
inline BatchGradient batch_gradient(const LearnedOptimizerParams& params, const std::vector<CompositeProblem>& batch,
                                    std::size_t K, std::size_t segments, std::size_t threads) {
  const std::size_t nb = params.trainable_blocks();
  std::vector<std::vector<DenseMatrix>> per(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    std::vector<DenseMatrix> g;
    for (std::size_t b = 0; b < params.blocks.size(); ++b) g.emplace_back(params.blocks[b].rows(), params.blocks[b].cols());
    RolloutOptions opt;
    opt.K = K;
    opt.segments = segments;
    ad::Tape tape;
    losses[i] = rollout(batch[i], params, opt, &g, &tape, i).loss;
    g.resize(nb);
    per[i] = std::move(g);
  });
  BatchGradient out;
  for (std::size_t b = 0; b < nb; ++b) out.grads.emplace_back(params.blocks[b].rows(), params.blocks[b].cols());
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.loss += losses[i] * inv;
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t e = 0; e < out.grads[b].size(); ++e) out.grads[b][e] += per[i][b][e] * inv;
  }
  return out;
}

class AdamMetaOptimizer {
 public:
  AdamMetaOptimizer(const LearnedOptimizerParams& params, double lr, double beta1, double beta2, double eps)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (std::size_t b = 0; b < params.trainable_blocks(); ++b) {
      m_.emplace_back(params.blocks[b].rows(), params.blocks[b].cols());
      v_.emplace_back(params.blocks[b].rows(), params.blocks[b].cols());
    }
  }

  void step(LearnedOptimizerParams& params, const std::vector<DenseMatrix>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t b = 0; b < grads.size(); ++b) {
      auto& w = params.blocks[b];
      for (std::size_t e = 0; e < w.size(); ++e) {
        const double g = grads[b][e];
        m_[b][e] = beta1_ * m_[b][e] + (1.0 - beta1_) * g;
        v_[b][e] = beta2_ * v_[b][e] + (1.0 - beta2_) * g * g;
        w[e] -= lr_ * (m_[b][e] / bc1) / (std::sqrt(v_[b][e] / bc2) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<DenseMatrix> m_, v_;
};

inline double global_norm(const std::vector<DenseMatrix>& grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (double v : g.values()) s += v * v;
  return std::sqrt(s);
}

struct TrainResult {
  LearnedOptimizerParams params;
  TrainReport report;
};

/// Called after each minibatch with (index, meta-loss, pre-clip grad norm).
using TrainProgress = std::function<void(std::size_t, double, double)>;

inline TrainResult train(const TrainConfig& cfg, const TrainProgress& progress = {}) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  TrainResult out;
  out.params = init_params(cfg.architecture(), cfg.ablation(), cfg.seed, cfg.head_init_scale);
  out.report.clip_norm = cfg.clip_norm;
  out.report.config_text = cfg.to_text();
  AdamMetaOptimizer adam(out.params, cfg.meta_lr, cfg.beta1, cfg.beta2, cfg.eps);
  const std::size_t threads = cfg.threads ? cfg.threads : default_thread_count();
  for (std::size_t mb = 0; mb < cfg.num_minibatches; ++mb) {
    auto batch = training_batch(cfg, mb);
    BatchGradient bg;
    try {
      bg = batch_gradient(out.params, batch, cfg.unroll_K, cfg.segments, threads);
    } catch (const NumericAbort& e) {
      throw NumericAbort("train", "minibatch " + std::to_string(mb) + ": " + e.what() +
                                      "; parameter norm " + std::to_string(global_norm(out.params.blocks)));
    }
    const double gn = global_norm(bg.grads);
    if (!std::isfinite(bg.loss) || !std::isfinite(gn)) {
      throw NumericAbort("train", "non-finite meta-loss or gradient at minibatch " + std::to_string(mb) +
                                      " (loss " + std::to_string(bg.loss) + ", grad norm " + std::to_string(gn) +
                                      ", parameter norm " + std::to_string(global_norm(out.params.blocks)) + ")");
    }
    if (cfg.clip_norm > 0.0 && gn > cfg.clip_norm) {
      const double s = cfg.clip_norm / gn;
      for (auto& g : bg.grads)
        for (std::size_t e = 0; e < g.size(); ++e) g[e] *= s;
    }
    adam.step(out.params, bg.grads);
    out.report.meta_loss.push_back(bg.loss);
    out.report.grad_norm.push_back(gn);
    if (progress) progress(mb, bg.loss, gn);
  }
  out.report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

/// Training metadata stored with checkpoints (no timings, so identical
/// configs give identical files).
inline nlohmann::ordered_json training_meta(const TrainConfig& cfg, const TrainReport& report) {
  nlohmann::ordered_json j;
  j["config"] = cfg.to_text();
  j["problem_kind"] = std::string(to_string(cfg.kind));
  j["minibatches"] = report.meta_loss.size();
  j["final_meta_loss"] = report.meta_loss.empty() ? 0.0 : report.meta_loss.back();
  j["clip_norm"] = cfg.clip_norm;
  return j;
}

}  // namespace proxl2o
