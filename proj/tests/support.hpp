#pragma once

// Shared test machinery: a random expression generator over a small 1-D
// problem, environment sampling with rejection (away from non-finite values
// and derivative kinks), and a central-difference oracle.

#include <random>
#include <vector>

#include "minopt/autodiff.hpp"
#include "minopt/eval.hpp"
#include "minopt/simplify.hpp"

namespace testsup {

using namespace minopt;

// Fixed shape used by the generator: one 1-D grid of W elements with a
// 2-channel unknown X, a 1-channel array A, and two params.
struct RandomExprRig {
  static constexpr int64_t W = 5;
  ExprArena arena;
  std::vector<double> x;       // 2 channels, W elements
  std::vector<double> adata;   // 1 channel
  std::vector<double> params;  // 2

  RandomExprRig() : x(2 * W), adata(W), params(2) {}

  EvalEnv<double> env(int64_t pix, size_t* oob = nullptr) const {
    EvalEnv<double> e;
    e.params = params;
    e.unknowns = {FieldView<double>{x.data(), 2, {W, 1, 1}, 1}};
    e.arrays = {FieldView<double>{adata.data(), 1, {W, 1, 1}, 1}};
    e.domain_shape = {W, 1, 1};
    e.domain_nd = 1;
    e.pix = {pix, 0, 0};
    e.oob_count = oob;
    return e;
  }

  void randomize(std::mt19937& rng) {
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (double& v : x) v = d(rng);
    for (double& v : adata) v = d(rng);
    for (double& v : params) v = d(rng);
  }

  // Positive-by-construction wrapper for log/sqrt/fractional-pow arguments.
  ExprId positive(ExprId e) {
    return arena.add2(arena.unary(UnaryFn::kAbs, e), arena.constant(0.25));
  }

  ExprId gen_value(std::mt19937& rng, int depth) {
    std::uniform_int_distribution<int> pick(0, depth <= 0 ? 4 : 13);
    switch (pick(rng)) {
      case 0: return arena.constant(std::uniform_real_distribution<double>(-2, 2)(rng));
      case 1: return arena.param(std::uniform_int_distribution<int>(0, 1)(rng));
      case 2: case 3: {
        int off = std::uniform_int_distribution<int>(-1, 1)(rng);
        int ch = std::uniform_int_distribution<int>(0, 1)(rng);
        return arena.unknown(0, ch, Access::stencil(off));
      }
      case 4: {
        int off = std::uniform_int_distribution<int>(-1, 1)(rng);
        return arena.array(0, 0, Access::stencil(off));
      }
      case 5: {
        std::vector<ExprId> kids;
        int n = std::uniform_int_distribution<int>(2, 3)(rng);
        for (int i = 0; i < n; ++i) kids.push_back(gen_value(rng, depth - 1));
        return arena.sum(std::move(kids));
      }
      case 6: {
        std::vector<ExprId> kids;
        int n = std::uniform_int_distribution<int>(2, 3)(rng);
        for (int i = 0; i < n; ++i) kids.push_back(gen_value(rng, depth - 1));
        return arena.product(std::move(kids));
      }
      case 7: {
        static const Rat exps[] = {Rat(2), Rat(3), Rat(-1), Rat(1, 2), Rat(5, 2)};
        Rat q = exps[std::uniform_int_distribution<int>(0, 4)(rng)];
        ExprId b = gen_value(rng, depth - 1);
        if (!q.is_integer() || q.num < 0) b = positive(b);
        return arena.pow(b, q);
      }
      case 8: {
        static const UnaryFn fns[] = {UnaryFn::kSin, UnaryFn::kCos, UnaryFn::kExp,
                                      UnaryFn::kAbs, UnaryFn::kAtan};
        return arena.unary(fns[std::uniform_int_distribution<int>(0, 4)(rng)],
                           gen_value(rng, depth - 1));
      }
      case 9:
        return arena.unary(UnaryFn::kLog, positive(gen_value(rng, depth - 1)));
      case 10:
        return arena.unary(UnaryFn::kSqrt, positive(gen_value(rng, depth - 1)));
      case 11:
        return arena.select(gen_bool(rng, depth - 1), gen_value(rng, depth - 1),
                            gen_value(rng, depth - 1));
      case 12:
        return arena.mul2(gen_bool(rng, depth - 1), gen_value(rng, depth - 1));
      default:
        return arena.sub2(gen_value(rng, depth - 1), gen_value(rng, depth - 1));
    }
  }

  ExprId gen_bool(std::mt19937& rng, int depth) {
    std::uniform_int_distribution<int> pick(0, depth <= 0 ? 1 : 4);
    switch (pick(rng)) {
      case 0: case 1: {
        static const CmpOp ops[] = {CmpOp::kEq, CmpOp::kNe, CmpOp::kLt,
                                    CmpOp::kLe, CmpOp::kGt, CmpOp::kGe};
        CmpOp op = ops[std::uniform_int_distribution<int>(0, 5)(rng)];
        return arena.compare(op, gen_value(rng, depth - 1), gen_value(rng, depth - 1));
      }
      case 2: {
        int off = std::uniform_int_distribution<int>(-2, 2)(rng);
        return arena.inbounds(Access::stencil(off));
      }
      case 3:
        return arena.logical(BoolFn::kNot, {gen_bool(rng, depth - 1)});
      default: {
        BoolFn f = std::uniform_int_distribution<int>(0, 1)(rng) ? BoolFn::kAnd : BoolFn::kOr;
        return arena.logical(f, {gen_bool(rng, depth - 1), gen_bool(rng, depth - 1)});
      }
    }
  }
};

inline void collect_nodes(const ExprArena& a, ExprId root, std::vector<ExprId>& out) {
  std::vector<ExprId> stack{root};
  std::unordered_map<ExprId, bool> seen;
  while (!stack.empty()) {
    ExprId id = stack.back();
    stack.pop_back();
    if (seen.count(id)) continue;
    seen[id] = true;
    out.push_back(id);
    for (ExprId k : a.at(id).kids) stack.push_back(k);
  }
}

// Environment acceptable for value-comparison tests: every reachable
// subexpression evaluates finite.
inline bool env_all_finite(const ExprArena& a, ExprId root, const EvalEnv<double>& env) {
  std::vector<ExprId> nodes;
  collect_nodes(a, root, nodes);
  Evaluator<double> ev(a, env);
  for (ExprId id : nodes)
    if (!std::isfinite(ev.eval(id))) return false;
  return true;
}

// Environment additionally acceptable for finite-difference checks: keep a
// margin from every kink (compare ties, abs at 0) and singularity (fractional
// or negative powers, log near 0) so the central difference is trustworthy.
inline bool env_ok_for_fd(const ExprArena& a, ExprId root, const EvalEnv<double>& env,
                          double margin = 1e-3) {
  std::vector<ExprId> nodes;
  collect_nodes(a, root, nodes);
  Evaluator<double> ev(a, env);
  for (ExprId id : nodes) {
    const ExprNode& n = a.at(id);
    double v = ev.eval(id);
    if (!std::isfinite(v)) return false;
    switch (n.kind) {
      case ExprKind::kCompare:
        if (std::fabs(ev.eval(n.kids[0]) - ev.eval(n.kids[1])) < margin) return false;
        break;
      case ExprKind::kUnary:
        if (UnaryFn(n.sub) == UnaryFn::kAbs && std::fabs(ev.eval(n.kids[0])) < margin)
          return false;
        if ((UnaryFn(n.sub) == UnaryFn::kLog || UnaryFn(n.sub) == UnaryFn::kSqrt) &&
            ev.eval(n.kids[0]) < 1e-2)
          return false;
        break;
      case ExprKind::kPow:
        if ((!n.expo.is_integer() || n.expo.num < 0) &&
            std::fabs(ev.eval(n.kids[0])) < 1e-2)
          return false;
        break;
      default: break;
    }
  }
  return true;
}

// Central finite difference of `expr` w.r.t. the unknown access `var`,
// evaluated at pixel `pix` of the rig. Perturbs the storage slot the access
// resolves to; if it is out of bounds, the true derivative is 0.
inline double fd_derivative(RandomExprRig& rig, ExprId expr, ExprId var, int64_t pix,
                            double h = 1e-6) {
  const ExprNode& v = rig.arena.at(var);
  int64_t elem = pix + v.acc.off[0];
  if (elem < 0 || elem >= RandomExprRig::W) return 0.0;
  size_t slot = size_t(elem) * 2 + size_t(v.channel);
  double saved = rig.x[slot];
  rig.x[slot] = saved + h;
  double fp = eval_expr(rig.arena, expr, rig.env(pix));
  rig.x[slot] = saved - h;
  double fm = eval_expr(rig.arena, expr, rig.env(pix));
  rig.x[slot] = saved;
  return (fp - fm) / (2 * h);
}

// Multiplications in the DAG below root: n-ary products count (arity - 1),
// every Pow counts 1. Backs the factoring monotonicity property.
inline int mult_count(const ExprArena& a, ExprId root) {
  std::vector<ExprId> nodes;
  collect_nodes(a, root, nodes);
  int count = 0;
  for (ExprId id : nodes) {
    const ExprNode& n = a.at(id);
    if (n.kind == ExprKind::kProduct) count += int(n.kids.size()) - 1;
    if (n.kind == ExprKind::kPow) count += 1;
  }
  return count;
}

}  // namespace testsup
