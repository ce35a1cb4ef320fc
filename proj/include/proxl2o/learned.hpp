#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "proxl2o/classic.hpp"
#include "proxl2o/problems.hpp"
#include "proxl2o/rng.hpp"
#include "proxl2o/tape.hpp"

namespace proxl2o {

// ---------------------------------------------------------------------------
// Coefficient channels and ablation presets

enum class Channel : std::size_t { p = 0, a = 1, b = 2, b1 = 3, b2 = 4 };
inline constexpr std::size_t kChannelCount = 5;
inline constexpr std::array<std::string_view, kChannelCount> kChannelNames = {"p", "a", "b", "b1", "b2"};
/// Head activations in channel order.
inline constexpr std::array<std::string_view, kChannelCount> kChannelActivations = {"softplus", "sigmoid", "sigmoid",
                                                                                     "identity", "identity"};

struct ChannelMode {
  enum class Kind { learnable, constant, inverse_lipschitz };
  Kind kind = Kind::learnable;
  double value = 0.0;  // for constant

  static ChannelMode learnable() { return {Kind::learnable, 0.0}; }
  static ChannelMode fixed(double v) { return {Kind::constant, v}; }
  static ChannelMode inv_lipschitz() { return {Kind::inverse_lipschitz, 0.0}; }

  bool is_learnable() const { return kind == Kind::learnable; }
  std::string describe() const {
    switch (kind) {
      case Kind::learnable: return "learnable";
      case Kind::inverse_lipschitz: return "fixed:1/L";
      case Kind::constant: {
        char buf[64];
        std::snprintf(buf, sizeof buf, "fixed:%.17g", value);
        return buf;
      }
    }
    return "?";
  }
  static ChannelMode parse(std::string_view s) {
    if (s == "learnable") return learnable();
    if (s == "fixed:1/L") return inv_lipschitz();
    if (s.rfind("fixed:", 0) == 0) return fixed(std::stod(std::string(s.substr(6))));
    throw FormatError("channel mode", "cannot parse '" + std::string(s) + "'");
  }
  friend bool operator==(const ChannelMode&, const ChannelMode&) = default;
};

/// Which of (p, a, b, b1, b2) come from the network and what the others are
/// pinned to.
struct AblationConfig {
  std::string name = "PA";
  std::array<ChannelMode, kChannelCount> modes{};

  const ChannelMode& mode(Channel c) const { return modes[static_cast<std::size_t>(c)]; }
  bool learnable(Channel c) const { return mode(c).is_learnable(); }

  std::size_t learnable_count() const {
    std::size_t n = 0;
    for (const auto& m : modes) n += m.is_learnable() ? 1 : 0;
    return n;
  }

  /// b = 1 and b1 = b2 = 0: the simplified two-channel update applies.
  bool is_simplified() const {
    auto fixed_to = [&](Channel c, double v) {
      return mode(c).kind == ChannelMode::Kind::constant && mode(c).value == v;
    };
    return fixed_to(Channel::b, 1.0) && fixed_to(Channel::b1, 0.0) && fixed_to(Channel::b2, 0.0);
  }

  static AblationConfig preset(std::string_view name) {
    using M = ChannelMode;
    AblationConfig c;
    c.name = std::string(name);
    const M L = M::learnable(), zero = M::fixed(0.0), one = M::fixed(1.0);
    //                 p                  a     b    b1    b2
    if (name == "PBA12") c.modes = {L, L, L, L, L};
    else if (name == "PBA1") c.modes = {L, L, L, L, zero};
    else if (name == "PBA2") c.modes = {L, L, L, zero, L};
    else if (name == "PBA") c.modes = {L, L, L, zero, zero};
    else if (name == "PA") c.modes = {L, L, one, zero, zero};
    else if (name == "P") c.modes = {L, zero, one, zero, zero};
    else if (name == "A") c.modes = {M::inv_lipschitz(), L, one, zero, zero};
    else throw Error("AblationConfig", "unknown preset '" + std::string(name) + "'");
    return c;
  }

  static std::vector<std::string> preset_names() { return {"PBA12", "PBA1", "PBA2", "PBA", "PA", "P", "A"}; }

  friend bool operator==(const AblationConfig&, const AblationConfig&) = default;
};

// ---------------------------------------------------------------------------
// Model parameters

enum class ModelKind { structured, generic };
/// p = softplus(raw) * scale with scale 1 or 1/L of the optimizee.
enum class PScale { unit, inverse_lipschitz };
enum class InputPreprocess { none, signed_log };

inline std::string_view to_string(ModelKind k) { return k == ModelKind::structured ? "structured" : "generic"; }
inline std::string_view to_string(PScale s) { return s == PScale::unit ? "unit" : "inverse_lipschitz"; }
inline std::string_view to_string(InputPreprocess s) { return s == InputPreprocess::none ? "none" : "signed_log"; }

struct Architecture {
  ModelKind kind = ModelKind::structured;
  std::size_t input_size = 2;
  std::size_t hidden = 20;
  std::size_t layers = 2;
  PScale p_scale = PScale::inverse_lipschitz;
  InputPreprocess preprocess = InputPreprocess::none;
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// LSTM + head weights. Block order: for each layer (W: in x 4h, U: h x 4h,
/// bias: 1 x 4h), then head weight (h x H), head bias (1 x H), then the
/// initial states h0 (layers x h) and c0 (layers x h). Everything before h0
/// is trainable.
struct LearnedOptimizerParams {
  Architecture arch;
  AblationConfig ablation;
  std::uint64_t seed = 0;
  std::vector<DenseMatrix> blocks;

  std::size_t head_outputs() const { return arch.kind == ModelKind::generic ? 1 : ablation.learnable_count(); }
  std::size_t layer_w(std::size_t l) const { return 3 * l; }
  std::size_t layer_u(std::size_t l) const { return 3 * l + 1; }
  std::size_t layer_bias(std::size_t l) const { return 3 * l + 2; }
  std::size_t head_w() const { return 3 * arch.layers; }
  std::size_t head_bias() const { return 3 * arch.layers + 1; }
  std::size_t h0() const { return 3 * arch.layers + 2; }
  std::size_t c0() const { return 3 * arch.layers + 3; }
  std::size_t trainable_blocks() const { return 3 * arch.layers + 2; }

  std::vector<std::string> block_names() const {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < arch.layers; ++l) {
      names.push_back("lstm" + std::to_string(l) + ".W");
      names.push_back("lstm" + std::to_string(l) + ".U");
      names.push_back("lstm" + std::to_string(l) + ".bias");
    }
    names.insert(names.end(), {"head.W", "head.bias", "h0", "c0"});
    return names;
  }

  /// Expected (rows, cols) per block, a pure function of the architecture.
  std::vector<std::pair<std::size_t, std::size_t>> block_shapes() const {
    std::vector<std::pair<std::size_t, std::size_t>> s;
    const std::size_t h = arch.hidden;
    for (std::size_t l = 0; l < arch.layers; ++l) {
      s.emplace_back(l == 0 ? arch.input_size : h, 4 * h);
      s.emplace_back(h, 4 * h);
      s.emplace_back(1, 4 * h);
    }
    s.emplace_back(h, head_outputs());
    s.emplace_back(1, head_outputs());
    s.emplace_back(arch.layers, h);
    s.emplace_back(arch.layers, h);
    return s;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto [r, c] : block_shapes()) n += r * c;
    return n;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    auto shapes = block_shapes();
    for (std::size_t i = 0; i < trainable_blocks(); ++i) n += shapes[i].first * shapes[i].second;
    return n;
  }

  /// Column of the head output for channel c, if learnable.
  std::optional<std::size_t> head_column(Channel c) const {
    if (!ablation.learnable(c)) return std::nullopt;
    std::size_t col = 0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(c); ++i) col += ablation.modes[i].is_learnable() ? 1 : 0;
    return col;
  }

  void check_layout() const {
    auto shapes = block_shapes();
    if (blocks.size() != shapes.size()) throw DimensionError("LearnedOptimizerParams", "block count mismatch");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      if (blocks[i].rows() != shapes[i].first || blocks[i].cols() != shapes[i].second) {
        throw DimensionError("LearnedOptimizerParams", "block " + block_names()[i] + " is " + shape_string(blocks[i]));
      }
    }
  }
};

/// Uniform(-1/sqrt(h), 1/sqrt(h)) LSTM weights with forget-gate bias 1,
/// head weights uniform with scale `head_scale`/sqrt(h) and zero bias,
/// h0/c0 ~ N(0, 0.1^2). Streams "init" and "h0" of `seed`.
inline LearnedOptimizerParams init_params(const Architecture& arch, const AblationConfig& ablation, std::uint64_t seed,
                                          double head_scale = 0.1) {
  LearnedOptimizerParams params;
  params.arch = arch;
  params.ablation = ablation;
  params.seed = seed;
  RngStream init(seed, "init");
  RngStream h0s(seed, "h0");
  const double bound = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
  auto shapes = params.block_shapes();
  for (std::size_t i = 0; i < shapes.size(); ++i) params.blocks.emplace_back(shapes[i].first, shapes[i].second);
  for (std::size_t l = 0; l < arch.layers; ++l) {
    for (std::size_t blk : {params.layer_w(l), params.layer_u(l), params.layer_bias(l)}) {
      for (std::size_t i = 0; i < params.blocks[blk].size(); ++i) params.blocks[blk][i] = init.uniform(-bound, bound);
    }
    auto& bias = params.blocks[params.layer_bias(l)];
    for (std::size_t j = 0; j < arch.hidden; ++j) bias[arch.hidden + j] = 1.0;
  }
  auto& hw = params.blocks[params.head_w()];
  for (std::size_t i = 0; i < hw.size(); ++i) hw[i] = init.uniform(-bound, bound) * head_scale;
  for (std::size_t blk : {params.h0(), params.c0()}) {
    for (std::size_t i = 0; i < params.blocks[blk].size(); ++i) params.blocks[blk][i] = 0.1 * h0s.normal();
  }
  return params;
}

inline LearnedOptimizerParams zero_params(const Architecture& arch, const AblationConfig& ablation) {
  LearnedOptimizerParams params;
  params.arch = arch;
  params.ablation = ablation;
  for (auto [r, c] : params.block_shapes()) params.blocks.emplace_back(r, c);
  return params;
}

// ---------------------------------------------------------------------------
// Plain-vector scheme steps

struct StructuredCoeffs {
  DenseVector p, a, b, b1, b2;
};

struct SchemeState {
  DenseVector x, y;
};

/// x^ = x - p.*grad f(x); y^ = y - p.*grad f(y);
/// x+ = prox_{r,p}((1-b).*x^ + b.*y^ - b1); y+ = x+ + a.*(x+ - x) + b2.
inline SchemeState structured_step(const CompositeProblem& problem, const SchemeState& s, const StructuredCoeffs& c) {
  const std::size_t n = s.x.size();
  DiagMetric metric(c.p);  // throws on nonpositive p
  DenseVector gx = problem.grad_smooth(s.x);
  DenseVector gy = problem.grad_smooth(s.y);
  DenseVector v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double xh = s.x[i] - c.p[i] * gx[i];
    const double yh = s.y[i] - c.p[i] * gy[i];
    v[i] = (1.0 - c.b[i]) * xh + c.b[i] * yh - c.b1[i];
  }
  SchemeState out;
  out.x = problem.prox(v, metric);
  out.y = DenseVector(n);
  for (std::size_t i = 0; i < n; ++i) out.y[i] = out.x[i] + c.a[i] * (out.x[i] - s.x[i]) + c.b2[i];
  return out;
}

/// x+ = prox_{r,p}(y - p.*grad f(y)); y+ = x+ + a.*(x+ - x).
inline SchemeState l2o_pa_step(const CompositeProblem& problem, const SchemeState& s, const DenseVector& p,
                               const DenseVector& a) {
  const std::size_t n = s.x.size();
  DiagMetric metric(p);
  DenseVector gy = problem.grad_smooth(s.y);
  DenseVector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = s.y[i] - p[i] * gy[i];
  SchemeState out;
  out.x = problem.prox(v, metric);
  out.y = DenseVector(n);
  for (std::size_t i = 0; i < n; ++i) out.y[i] = out.x[i] + a[i] * (out.x[i] - s.x[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Tape-level model

namespace model {

using ad::Tape;
using ad::Var;

struct Hidden {
  std::vector<Var> h, c;  // per layer, n x hidden
};

/// Plain values of a recurrent state, carried across tape resets.
struct HiddenValues {
  std::vector<DenseMatrix> h, c;
};

struct CoeffVars {
  Var p, a, b, b1, b2;  // structured
  Var d;                // generic
};

/// Binds parameter blocks to the tape: trainable blocks become parameter
/// leaves (slot = block index) when `trainable`, everything else constants.
inline std::vector<Var> bind(Tape& tape, const LearnedOptimizerParams& params, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(params.blocks.size());
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    if (trainable && i < params.trainable_blocks()) vars.push_back(tape.parameter(i, params.blocks[i]));
    else vars.push_back(tape.constant(params.blocks[i]));
  }
  return vars;
}

inline HiddenValues initial_hidden(const LearnedOptimizerParams& params, std::size_t n) {
  HiddenValues hv;
  const auto& h0 = params.blocks[params.h0()];
  const auto& c0 = params.blocks[params.c0()];
  for (std::size_t l = 0; l < params.arch.layers; ++l) {
    DenseMatrix h(n, params.arch.hidden), c(n, params.arch.hidden);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < params.arch.hidden; ++j) {
        h(r, j) = h0(l, j);
        c(r, j) = c0(l, j);
      }
    hv.h.push_back(std::move(h));
    hv.c.push_back(std::move(c));
  }
  return hv;
}

inline Hidden hidden_constants(Tape& tape, const HiddenValues& hv) {
  Hidden h;
  for (std::size_t l = 0; l < hv.h.size(); ++l) {
    h.h.push_back(tape.constant(hv.h[l]));
    h.c.push_back(tape.constant(hv.c[l]));
  }
  return h;
}

inline HiddenValues hidden_values(const Tape& tape, const Hidden& h) {
  HiddenValues hv;
  for (std::size_t l = 0; l < h.h.size(); ++l) {
    hv.h.push_back(tape.value(h.h[l]));
    hv.c.push_back(tape.value(h.c[l]));
  }
  return hv;
}

/// Coordinate-wise stacked LSTM over rows (x_i, g_i). Returns the top-layer
/// output (n x hidden) and updates `hidden`.
inline Var lstm_forward(Tape& tape, const LearnedOptimizerParams& params, const std::vector<Var>& w, Var x, Var g,
                        Hidden& hidden) {
  Var input = tape.concat_cols(x, g);
  if (params.arch.preprocess == InputPreprocess::signed_log) input = tape.signed_log1p(input);
  const std::size_t h = params.arch.hidden;
  for (std::size_t l = 0; l < params.arch.layers; ++l) {
    Var gates = tape.add(tape.matmul(input, w[params.layer_w(l)]), tape.matmul(hidden.h[l], w[params.layer_u(l)]));
    gates = tape.add_row(gates, w[params.layer_bias(l)]);
    Var hc = tape.lstm_cell(gates, hidden.c[l]);
    hidden.h[l] = tape.slice_cols(hc, 0, h);
    hidden.c[l] = tape.slice_cols(hc, h, h);
    input = hidden.h[l];
  }
  return input;
}

inline Var fixed_channel(Tape& tape, const ChannelMode& mode, const CompositeProblem& problem, std::size_t n) {
  const double v = mode.kind == ChannelMode::Kind::inverse_lipschitz ? 1.0 / problem.lipschitz() : mode.value;
  return tape.constant(DenseMatrix(n, 1, v));
}

/// Head: affine map of the LSTM output then per-channel activation.
inline CoeffVars head(Tape& tape, const LearnedOptimizerParams& params, const std::vector<Var>& w, Var out,
                      const CompositeProblem& problem) {
  const std::size_t n = tape.value(out).rows();
  Var raw = tape.add_row(tape.matmul(out, w[params.head_w()]), w[params.head_bias()]);
  CoeffVars cv;
  if (params.arch.kind == ModelKind::generic) {
    cv.d = raw;
    return cv;
  }
  auto channel = [&](Channel c) -> Var {
    auto col = params.head_column(c);
    if (!col) return fixed_channel(tape, params.ablation.mode(c), problem, n);
    Var r = tape.slice_cols(raw, *col, 1);
    switch (c) {
      case Channel::p: {
        Var p = tape.softplus(r);
        if (params.arch.p_scale == PScale::inverse_lipschitz) p = tape.scale(p, 1.0 / problem.lipschitz());
        return p;
      }
      case Channel::a:
      case Channel::b: return tape.sigmoid(r);
      case Channel::b1:
      case Channel::b2: return r;
    }
    return r;
  };
  cv.p = channel(Channel::p);
  cv.a = channel(Channel::a);
  cv.b = channel(Channel::b);
  cv.b1 = channel(Channel::b1);
  cv.b2 = channel(Channel::b2);
  return cv;
}

inline Var prox(Tape& tape, const CompositeProblem& problem, Var v, Var p) {
  const auto& reg = problem.regularizer();
  switch (reg.kind) {
    case RegularizerKind::l1: return tape.soft_threshold(v, tape.scale(p, reg.lambda));
    case RegularizerKind::nonneg: return tape.relu(v);
    case RegularizerKind::simplex: return tape.simplex_prox(v, p);
    case RegularizerKind::zero: return v;
  }
  throw Error("model::prox", "unknown regularizer");
}

struct StepVars {
  Var x, y;
};

inline StepVars structured_step(Tape& tape, const CompositeProblem& problem, Var x, Var y, Var gx, const CoeffVars& c) {
  Var xhat = tape.sub(x, tape.mul(c.p, gx));
  Var yhat = tape.sub(y, tape.mul(c.p, tape.smooth_grad(problem, y)));
  Var v = tape.add(tape.mul(tape.affine(c.b, -1.0, 1.0), xhat), tape.mul(c.b, yhat));
  v = tape.sub(v, c.b1);
  Var xn = prox(tape, problem, v, c.p);
  Var yn = tape.add(tape.add(xn, tape.mul(c.a, tape.sub(xn, x))), c.b2);
  return {xn, yn};
}

inline StepVars l2o_pa_step(Tape& tape, const CompositeProblem& problem, Var x, Var y, const CoeffVars& c) {
  Var v = tape.sub(y, tape.mul(c.p, tape.smooth_grad(problem, y)));
  Var xn = prox(tape, problem, v, c.p);
  Var yn = tape.add(xn, tape.mul(c.a, tape.sub(xn, x)));
  return {xn, yn};
}

/// LSTM input gradient: grad f for the structured model, the subgradient
/// of F (fixed sign selection, no derivative through the sign) for generic.
inline Var input_gradient(Tape& tape, const LearnedOptimizerParams& params, const CompositeProblem& problem, Var x) {
  Var g = tape.smooth_grad(problem, x);
  if (params.arch.kind == ModelKind::generic && problem.regularizer().kind == RegularizerKind::l1) {
    const auto& xv = tape.value(x);
    DenseMatrix s(xv.rows(), 1);
    for (std::size_t i = 0; i < xv.size(); ++i) s[i] = xv[i] > 0.0 ? problem.regularizer().lambda : (xv[i] < 0.0 ? -problem.regularizer().lambda : 0.0);
    g = tape.add(g, tape.constant(std::move(s)));
  }
  return g;
}

/// Which iterate the loss and the convergence record use: y for the
/// structured scheme on l1/zero problems, x otherwise (generic models have
/// no y; x is the always-feasible iterate under indicator regularizers).
inline bool reports_y(const LearnedOptimizerParams& params, const CompositeProblem& problem) {
  return params.arch.kind == ModelKind::structured && !problem.regularizer().is_indicator();
}

/// One full optimizer iteration on the tape: LSTM, head, update.
struct IterationVars {
  StepVars state;
  CoeffVars coeffs;
};

inline IterationVars iterate(Tape& tape, const LearnedOptimizerParams& params, const std::vector<Var>& w,
                             const CompositeProblem& problem, Var x, Var y, Hidden& hidden) {
  Var gx = input_gradient(tape, params, problem, x);
  Var out = lstm_forward(tape, params, w, x, gx, hidden);
  CoeffVars c = head(tape, params, w, out, problem);
  if (params.arch.kind == ModelKind::generic) {
    Var xn = tape.sub(x, c.d);
    return {{xn, xn}, c};
  }
  if (params.ablation.is_simplified()) return {l2o_pa_step(tape, problem, x, y, c), c};
  return {structured_step(tape, problem, x, y, gx, c), c};
}

}  // namespace model

/// Per-coordinate LSTM + head evaluated on plain vectors.
struct LstmForwardResult {
  StructuredCoeffs coeffs;
  DenseVector d;  // generic models only
  model::HiddenValues hidden;
};

inline LstmForwardResult lstm_mlp_forward(const LearnedOptimizerParams& params, const CompositeProblem& problem,
                                          const DenseVector& x, const DenseVector& grad,
                                          const model::HiddenValues& hidden) {
  ad::Tape tape;
  auto w = model::bind(tape, params, false);
  model::Hidden h = model::hidden_constants(tape, hidden);
  ad::Var out = model::lstm_forward(tape, params, w, tape.constant(DenseMatrix::column(x)),
                                    tape.constant(DenseMatrix::column(grad)), h);
  model::CoeffVars c = model::head(tape, params, w, out, problem);
  LstmForwardResult r;
  r.hidden = model::hidden_values(tape, h);
  if (params.arch.kind == ModelKind::generic) {
    r.d = tape.value(c.d).to_vector();
  } else {
    r.coeffs = {tape.value(c.p).to_vector(), tape.value(c.a).to_vector(), tape.value(c.b).to_vector(),
                tape.value(c.b1).to_vector(), tape.value(c.b2).to_vector()};
  }
  return r;
}

// ---------------------------------------------------------------------------
// Rollouts

struct CoefficientNorms {
  double p = 0.0, a = 0.0, b = 0.0, b1 = 0.0, b2 = 0.0;  // l2 norms at iteration k
};

struct RolloutOptions {
  std::size_t K = 100;
  /// Truncation segments for training; must divide K. Ignored without grads.
  std::size_t segments = 1;
  bool trace_coefficients = false;
  std::size_t record_every = 0;  // 0: every iteration up to 1000, else every 10th
};

struct RolloutResult {
  ConvergenceRecord record;
  double loss = 0.0;  // (1/K) sum_{k=1..K} F(reported iterate k)
  std::vector<CoefficientNorms> coefficient_norms;  // index k-1 for iteration k
  SchemeState final_state;
};

/// Runs K iterations from x0 = y0 = 0. With `grads` non-null, records each
/// truncation segment on a tape, back-propagates the segment's share of the
/// loss and adds d(loss)/d(block) into grads[block]; state is detached at
/// segment boundaries.
inline RolloutResult rollout(const CompositeProblem& problem, const LearnedOptimizerParams& params,
                             const RolloutOptions& opt, std::vector<DenseMatrix>* grads = nullptr,
                             ad::Tape* scratch = nullptr, std::size_t instance_id = 0) {
  if (opt.K < 1) throw Error("rollout", "K must be >= 1");
  const bool training = grads != nullptr;
  const std::size_t segments = training ? opt.segments : opt.K;
  if (segments == 0 || opt.K % segments != 0) throw Error("rollout", "segments must divide K");
  const std::size_t seg_len = opt.K / segments;
  const std::size_t n = problem.dim();
  const bool use_y = model::reports_y(params, problem);
  const std::size_t every = opt.record_every ? opt.record_every : (opt.K <= 1000 ? 1 : 10);

  ad::Tape local;
  ad::Tape& tape = scratch ? *scratch : local;

  RolloutResult res;
  res.record.instance_id = instance_id;
  DenseMatrix x(n, 1), y(n, 1);
  model::HiddenValues hidden = model::initial_hidden(params, n);
  {
    const double f0 = problem.objective(x.to_vector());
    IterPoint pt{0, f0, std::nullopt};
    if (auto fs = problem.f_star()) pt.gap = relative_gap(f0, *fs);
    res.record.iterations.push_back(pt);
  }
  std::chrono::steady_clock::duration elapsed{};
  const double inv_k = 1.0 / static_cast<double>(opt.K);
  std::size_t k = 0;
  for (std::size_t seg = 0; seg < segments; ++seg) {
    auto t0 = std::chrono::steady_clock::now();
    tape.reset();
    auto w = model::bind(tape, params, training);
    model::Hidden h = model::hidden_constants(tape, hidden);
    ad::Var xv = tape.constant(x), yv = tape.constant(y);
    std::vector<ad::Var> terms;
    std::vector<double> values;
    std::vector<DenseVector> pending;  // inference: objectives evaluated off the clock
    for (std::size_t s = 0; s < seg_len; ++s, ++k) {
      model::IterationVars it = model::iterate(tape, params, w, problem, xv, yv, h);
      xv = it.state.x;
      yv = it.state.y;
      if (opt.trace_coefficients && params.arch.kind == ModelKind::structured) {
        auto nrm = [&](ad::Var v) { return norm2(tape.value(v).span()); };
        res.coefficient_norms.push_back({nrm(it.coeffs.p), nrm(it.coeffs.a), nrm(it.coeffs.b), nrm(it.coeffs.b1), nrm(it.coeffs.b2)});
      }
      ad::Var reported = use_y ? yv : xv;
      if (training) {
        ad::Var f = tape.objective(problem, reported);
        terms.push_back(f);
        values.push_back(tape.scalar(f));
      } else {
        pending.push_back(tape.value(reported).to_vector());
      }
    }
    if (training) {
      ad::Var total = terms.front();
      for (std::size_t i = 1; i < terms.size(); ++i) total = tape.add(total, terms[i]);
      tape.backward(tape.scale(total, inv_k), *grads);
    }
    x = tape.value(xv);
    y = tape.value(yv);
    hidden = model::hidden_values(tape, h);
    elapsed += std::chrono::steady_clock::now() - t0;
    for (const auto& v : pending) values.push_back(problem.objective(v));
    for (std::size_t s = 0; s < values.size(); ++s) {
      const std::size_t kk = k - values.size() + s + 1;
      res.loss += values[s] * inv_k;
      if (!std::isfinite(values[s])) throw NumericAbort("rollout", "non-finite objective at iteration " + std::to_string(kk));
      if (kk % every == 0 || kk == opt.K) {
        IterPoint pt{kk, values[s], std::nullopt};
        if (auto fs = problem.f_star()) pt.gap = relative_gap(values[s], *fs);
        res.record.iterations.push_back(pt);
      }
    }
  }
  res.record.wall_time_per_iter = std::chrono::duration<double>(elapsed).count() / static_cast<double>(opt.K);
  res.final_state = {x.to_vector(), y.to_vector()};
  res.record.final_x = use_y ? res.final_state.y : res.final_state.x;
  return res;
}

}  // namespace proxl2o
