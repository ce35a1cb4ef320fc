#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "proxl2o/dense.hpp"
#include "proxl2o/problems.hpp"

// Reverse-mode differentiation over matrix-valued nodes. Vectors are n x 1
// matrices; the coordinate-wise recurrent model keeps one row per coordinate.
// Nodes are appended in creation order, so that order is already topological
// and backward() simply walks it in reverse.

namespace proxl2o::ad {

struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

enum class Op : std::uint8_t {
  constant,
  parameter,
  matmul,
  add,
  sub,
  mul,
  affine,  // scale * a + shift
  add_row,
  broadcast_rows,
  sigmoid,
  tanh,
  softplus,
  signed_log1p,
  slice_cols,
  concat_cols,
  lstm_cell,
  soft_threshold,
  relu,
  simplex_prox,
  smooth_grad,
  objective,
  sum,
};

class Tape {
 public:
  Tape() = default;

  /// Drops all nodes but keeps the arena allocation for the next rollout.
  void reset() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  const DenseMatrix& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const {
    const auto& m = value(v);
    if (m.size() != 1) throw DimensionError("Tape::scalar", "node is " + shape_string(m));
    return m[0];
  }

  Var constant(DenseMatrix v) { return push(Op::constant, std::move(v), {}, {}, false); }

  /// Leaf whose gradient is reported under `slot` by backward().
  Var parameter(std::size_t slot, const DenseMatrix& v) {
    Var id = push(Op::parameter, v, {}, {}, true);
    nodes_[id.id].slot = slot;
    return id;
  }

  /// Same value, no gradient flow.
  Var detach(Var a) { return constant(value(a)); }

  Var matmul(Var a, Var b) { return push(Op::matmul, proxl2o::matmul(value(a), value(b)), a, b); }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    DenseMatrix out = value(a);
    const auto& vb = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return push(Op::add, std::move(out), a, b);
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    DenseMatrix out = value(a);
    const auto& vb = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
    return push(Op::sub, std::move(out), a, b);
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    DenseMatrix out = value(a);
    const auto& vb = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return push(Op::mul, std::move(out), a, b);
  }

  Var affine(Var a, double scale, double shift = 0.0) {
    DenseMatrix out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * out[i] + shift;
    Var r = push(Op::affine, std::move(out), a, {});
    nodes_[r.id].s0 = scale;
    return r;
  }
  Var scale(Var a, double s) { return affine(a, s, 0.0); }

  /// a (n x m) plus row vector b (1 x m) broadcast over rows.
  Var add_row(Var a, Var b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    if (vb.rows() != 1 || vb.cols() != va.cols()) throw DimensionError("add_row", shape_string(va) + " + " + shape_string(vb));
    DenseMatrix out = va;
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += vb[c];
    return push(Op::add_row, std::move(out), a, b);
  }

  /// Row vector a (1 x m) repeated to n rows.
  Var broadcast_rows(Var a, std::size_t n) {
    const auto& va = value(a);
    if (va.rows() != 1) throw DimensionError("broadcast_rows", "expected a row vector, got " + shape_string(va));
    DenseMatrix out(n, va.cols());
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < va.cols(); ++c) out(r, c) = va[c];
    return push(Op::broadcast_rows, std::move(out), a, {});
  }

  Var sigmoid(Var a) { return unary(Op::sigmoid, a, [](double x) { return logistic(x); }); }
  Var tanh(Var a) { return unary(Op::tanh, a, [](double x) { return std::tanh(x); }); }
  Var softplus(Var a) { return unary(Op::softplus, a, [](double x) { return log1p_exp(x); }); }
  Var signed_log1p(Var a) {
    return unary(Op::signed_log1p, a, [](double x) { return x >= 0.0 ? std::log1p(x) : -std::log1p(-x); });
  }
  Var relu(Var a) { return unary(Op::relu, a, [](double x) { return x > 0.0 ? x : 0.0; }); }

  Var slice_cols(Var a, std::size_t start, std::size_t count) {
    const auto& va = value(a);
    if (start + count > va.cols()) throw DimensionError("slice_cols", "range exceeds " + shape_string(va));
    DenseMatrix out(va.rows(), count);
    for (std::size_t r = 0; r < va.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) out(r, c) = va(r, start + c);
    Var id = push(Op::slice_cols, std::move(out), a, {});
    nodes_[id.id].i0 = start;
    return id;
  }

  Var concat_cols(Var a, Var b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    if (va.rows() != vb.rows()) throw DimensionError("concat_cols", shape_string(va) + " | " + shape_string(vb));
    DenseMatrix out(va.rows(), va.cols() + vb.cols());
    for (std::size_t r = 0; r < va.rows(); ++r) {
      for (std::size_t c = 0; c < va.cols(); ++c) out(r, c) = va(r, c);
      for (std::size_t c = 0; c < vb.cols(); ++c) out(r, va.cols() + c) = vb(r, c);
    }
    return push(Op::concat_cols, std::move(out), a, b);
  }

  /// LSTM cell nonlinearity. `gates` is n x 4h in (input, forget, cell,
  /// output) order, `c_prev` is n x h. Returns n x 2h holding [h' | c'].
  Var lstm_cell(Var gates, Var c_prev) {
    const auto& z = value(gates);
    const auto& cp = value(c_prev);
    const std::size_t h = cp.cols();
    if (z.rows() != cp.rows() || z.cols() != 4 * h) throw DimensionError("lstm_cell", shape_string(z) + " vs " + shape_string(cp));
    DenseMatrix out(z.rows(), 2 * h);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      for (std::size_t j = 0; j < h; ++j) {
        const double ig = logistic(z(r, j));
        const double fg = logistic(z(r, h + j));
        const double cg = std::tanh(z(r, 2 * h + j));
        const double og = logistic(z(r, 3 * h + j));
        const double c = fg * cp(r, j) + ig * cg;
        out(r, j) = og * std::tanh(c);
        out(r, h + j) = c;
      }
    }
    return push(Op::lstm_cell, std::move(out), gates, c_prev);
  }

  /// sign(v) max(0, |v| - tau) with subderivative 0 on the kink |v| = tau.
  Var soft_threshold(Var v, Var tau) {
    check_same(v, tau, "soft_threshold");
    const auto& vv = value(v);
    const auto& vt = value(tau);
    DenseMatrix out(vv.rows(), vv.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = proxl2o::soft_threshold(vv[i], vt[i]);
    return push(Op::soft_threshold, std::move(out), v, tau);
  }

  /// Simplex projection in the metric diag(p); see prox_simplex.
  Var simplex_prox(Var v, Var p) {
    check_same(v, p, "simplex_prox");
    auto res = prox_simplex_detail(value(v).to_vector(), DiagMetric(value(p).to_vector()));
    Var id = push(Op::simplex_prox, DenseMatrix::column(res.x), v, p);
    nodes_[id.id].s0 = res.xi;
    return id;
  }

  /// grad f(x) for the problem's smooth part; backward applies the Hessian.
  Var smooth_grad(const CompositeProblem& problem, Var x) {
    Var id = push(Op::smooth_grad, DenseMatrix::column(problem.grad_smooth(value(x).to_vector())), x, {});
    nodes_[id.id].problem = &problem;
    return id;
  }

  /// F(x) as a 1 x 1 node. For indicator regularizers only f contributes to
  /// the derivative (x is expected to be feasible).
  Var objective(const CompositeProblem& problem, Var x) {
    DenseMatrix out(1, 1);
    out[0] = problem.objective(value(x).to_vector());
    Var id = push(Op::objective, std::move(out), x, {});
    nodes_[id.id].problem = &problem;
    return id;
  }

  Var sum(Var a) {
    DenseMatrix out(1, 1);
    for (double v : value(a).values()) out[0] += v;
    return push(Op::sum, std::move(out), a, {});
  }

  /// Reverse sweep from a scalar node. Gradients of parameter leaves are
  /// added into param_grads[slot] (which must already be shaped).
  void backward(Var loss, std::vector<DenseMatrix>& param_grads) {
    if (value(loss).size() != 1) throw DimensionError("backward", "loss must be scalar, got " + shape_string(value(loss)));
    for (auto& n : nodes_) n.has_grad = false;
    seed_grad(loss.id)[0] = 1.0;
    for (std::size_t idx = loss.id + 1; idx-- > 0;) {
      Node& n = nodes_[idx];
      if (!n.has_grad || !n.needs_grad) continue;
      propagate(n);
      if (n.op == Op::parameter) {
        auto& dst = param_grads.at(n.slot);
        if (!dst.same_shape(n.grad)) throw DimensionError("backward", "parameter slot " + std::to_string(n.slot) + " shape mismatch");
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
      }
    }
  }

  /// Gradient of the last backward() with respect to any node (zero if unreached).
  DenseMatrix grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : DenseMatrix(n.value.rows(), n.value.cols());
  }

 private:
  struct Node {
    Op op = Op::constant;
    Var a, b;
    DenseMatrix value;
    DenseMatrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    std::size_t slot = 0;
    std::size_t i0 = 0;
    double s0 = 0.0;
    const CompositeProblem* problem = nullptr;
  };

  Var push(Op op, DenseMatrix value, Var a, Var b, std::optional<bool> needs = std::nullopt) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(value);
    n.needs_grad = needs ? *needs : ((a.valid() && nodes_[a.id].needs_grad) || (b.valid() && nodes_[b.id].needs_grad));
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  template <class F>
  Var unary(Op op, Var a, F&& f) {
    DenseMatrix out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(out[i]);
    return push(op, std::move(out), a, {});
  }

  void check_same(Var a, Var b, const char* op) const {
    if (!value(a).same_shape(value(b))) throw DimensionError(op, shape_string(value(a)) + " vs " + shape_string(value(b)));
  }

  DenseMatrix& seed_grad(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      if (n.grad.same_shape(n.value)) std::fill(n.grad.span().begin(), n.grad.span().end(), 0.0);
      else n.grad = DenseMatrix(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Gradient accumulator of input `v`, or nullptr if it needs none.
  DenseMatrix* input_grad(Var v) {
    if (!v.valid() || !nodes_[v.id].needs_grad) return nullptr;
    return &seed_grad(v.id);
  }

  void propagate(Node& n) {
    const DenseMatrix& g = n.grad;
    switch (n.op) {
      case Op::constant:
      case Op::parameter:
        return;
      case Op::matmul: {
        if (auto* ga = input_grad(n.a)) matmul_nt_acc(g, nodes_[n.b.id].value, *ga);
        if (auto* gb = input_grad(n.b)) matmul_tn_acc(nodes_[n.a.id].value, g, *gb);
        return;
      }
      case Op::add:
      case Op::sub: {
        const double sb = n.op == Op::add ? 1.0 : -1.0;
        if (auto* ga = input_grad(n.a))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (auto* gb = input_grad(n.b))
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += sb * g[i];
        return;
      }
      case Op::mul: {
        const auto& va = nodes_[n.a.id].value;
        const auto& vb = nodes_[n.b.id].value;
        if (auto* ga = input_grad(n.a))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * vb[i];
        if (auto* gb = input_grad(n.b))
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * va[i];
        return;
      }
      case Op::affine: {
        if (auto* ga = input_grad(n.a))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += n.s0 * g[i];
        return;
      }
      case Op::add_row: {
        if (auto* ga = input_grad(n.a))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (auto* gb = input_grad(n.b))
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) (*gb)[c] += g(r, c);
        return;
      }
      case Op::broadcast_rows: {
        if (auto* ga = input_grad(n.a))
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) (*ga)[c] += g(r, c);
        return;
      }
      case Op::sigmoid: {
        if (auto* ga = input_grad(n.a))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
        return;
      }
      case Op::tanh: {
        if (auto* ga = input_grad(n.a))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
        return;
      }
      case Op::softplus: {
        const auto& va = nodes_[n.a.id].value;
        if (auto* ga = input_grad(n.a))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * logistic(va[i]);
        return;
      }
      case Op::signed_log1p: {
        const auto& va = nodes_[n.a.id].value;
        if (auto* ga = input_grad(n.a))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / (1.0 + std::abs(va[i]));
        return;
      }
      case Op::relu: {
        const auto& va = nodes_[n.a.id].value;
        if (auto* ga = input_grad(n.a))
          for (std::size_t i = 0; i < g.size(); ++i)
            if (va[i] > 0.0) (*ga)[i] += g[i];
        return;
      }
      case Op::slice_cols: {
        if (auto* ga = input_grad(n.a))
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) (*ga)(r, n.i0 + c) += g(r, c);
        return;
      }
      case Op::concat_cols: {
        const std::size_t ca = nodes_[n.a.id].value.cols();
        if (auto* ga = input_grad(n.a))
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < ca; ++c) (*ga)(r, c) += g(r, c);
        if (auto* gb = input_grad(n.b))
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = ca; c < g.cols(); ++c) (*gb)(r, c - ca) += g(r, c);
        return;
      }
      case Op::lstm_cell: {
        const auto& z = nodes_[n.a.id].value;
        const auto& cp = nodes_[n.b.id].value;
        const std::size_t h = cp.cols();
        DenseMatrix* gz = input_grad(n.a);
        DenseMatrix* gc = input_grad(n.b);
        for (std::size_t r = 0; r < z.rows(); ++r) {
          for (std::size_t j = 0; j < h; ++j) {
            const double ig = logistic(z(r, j));
            const double fg = logistic(z(r, h + j));
            const double cg = std::tanh(z(r, 2 * h + j));
            const double og = logistic(z(r, 3 * h + j));
            const double c = n.value(r, h + j);
            const double tc = std::tanh(c);
            const double gh = g(r, j);
            const double dc = g(r, h + j) + gh * og * (1.0 - tc * tc);
            if (gz) {
              (*gz)(r, j) += dc * cg * ig * (1.0 - ig);
              (*gz)(r, h + j) += dc * cp(r, j) * fg * (1.0 - fg);
              (*gz)(r, 2 * h + j) += dc * ig * (1.0 - cg * cg);
              (*gz)(r, 3 * h + j) += gh * tc * og * (1.0 - og);
            }
            if (gc) (*gc)(r, j) += dc * fg;
          }
        }
        return;
      }
      case Op::soft_threshold: {
        const auto& vv = nodes_[n.a.id].value;
        const auto& vt = nodes_[n.b.id].value;
        DenseMatrix* gv = input_grad(n.a);
        DenseMatrix* gt = input_grad(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (std::abs(vv[i]) > vt[i]) {
            if (gv) (*gv)[i] += g[i];
            if (gt) (*gt)[i] -= (vv[i] > 0.0 ? 1.0 : -1.0) * g[i];
          }
        }
        return;
      }
      case Op::simplex_prox: {
        // On the active set S: x_i = v_i - xi p_i, xi = (sum_S v - 1) / sum_S p.
        const auto& vp = nodes_[n.b.id].value;
        double gp_sum = 0.0, p_sum = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (n.value[i] > 0.0) {
            gp_sum += g[i] * vp[i];
            p_sum += vp[i];
          }
        }
        const double ratio = p_sum > 0.0 ? gp_sum / p_sum : 0.0;
        DenseMatrix* gv = input_grad(n.a);
        DenseMatrix* gpp = input_grad(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (n.value[i] <= 0.0) continue;
          if (gv) (*gv)[i] += g[i] - ratio;
          if (gpp) (*gpp)[i] += n.s0 * (ratio - g[i]);
        }
        return;
      }
      case Op::smooth_grad: {
        if (auto* ga = input_grad(n.a)) {
          DenseVector hv = n.problem->hess_vec(nodes_[n.a.id].value.to_vector(), g.to_vector());
          for (std::size_t i = 0; i < hv.size(); ++i) (*ga)[i] += hv[i];
        }
        return;
      }
      case Op::objective: {
        if (auto* ga = input_grad(n.a)) {
          const DenseVector x = nodes_[n.a.id].value.to_vector();
          DenseVector d = n.problem->grad_smooth(x);
          const auto& reg = n.problem->regularizer();
          if (reg.kind == RegularizerKind::l1) {
            for (std::size_t i = 0; i < d.size(); ++i) {
              if (x[i] > 0.0) d[i] += reg.lambda;
              else if (x[i] < 0.0) d[i] -= reg.lambda;
            }
          }
          for (std::size_t i = 0; i < d.size(); ++i) (*ga)[i] += g[0] * d[i];
        }
        return;
      }
      case Op::sum: {
        if (auto* ga = input_grad(n.a))
          for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[0];
        return;
      }
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace proxl2o::ad
