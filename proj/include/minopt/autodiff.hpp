#pragma once

#include "minopt/problem.hpp"
#include "minopt/simplify.hpp"

namespace minopt {

// Symbolic derivative of `expr` with respect to one unknown access `var`
// (a kUnknown node: field, channel, and stencil offset or hyperedge slot).
// Single bottom-up pass over the DAG, memoized per (expr, var) in the arena,
// every intermediate interned through canonicalize so like terms collapse as
// they appear and the result stays polynomial-sized in the input DAG.
//
// `spec` supplies computed-array definitions: freeze-mode arrays are treated
// as constants; cache-mode arrays differentiate to reads of their stored
// partial channels (chain rule through the shifted defining expression).
inline ExprId derivative(ExprArena& a, ExprId expr, ExprId var,
                         const ProblemSpec* spec = nullptr) {
  check(a.at(var).kind == ExprKind::kUnknown, Err::kInternal,
        "derivative variable must be an unknown access");
  uint64_t key = (uint64_t(expr) << 32) | uint64_t(var);
  auto& memo = a.deriv_memo();
  if (auto it = memo.find(key); it != memo.end()) return it->second;

  auto is_zero = [&](ExprId e) {
    const ExprNode& n = a.at(e);
    return n.kind == ExprKind::kConst && n.cval == 0;
  };

  const ExprNode n = a.at(expr);  // copy: arena grows below
  ExprId d;
  if (expr == var) {
    d = a.constant(1);
  } else if (!n.has_unknown) {
    d = a.constant(0);
  } else {
    switch (n.kind) {
      case ExprKind::kUnknown:
        d = a.constant(0);  // different access than var
        break;
      case ExprKind::kComputed: {
        const ExprNode& v = a.at(var);
        check(spec != nullptr, Err::kInternal, "computed access without problem context");
        const ComputedArray& ca = spec->computed[n.field];
        if (ca.mode == ComputedMode::kFreeze || v.acc.graph || n.acc.graph) {
          d = a.constant(0);
          break;
        }
        // C_ch(q + o) depends on x_f,c(q + w) exactly when the defining
        // expression of channel ch reads that unknown at offset w - o.
        std::vector<ExprId> terms;
        for (const ComputedPartial& p : ca.partials) {
          if (p.channel != n.channel || p.ufield != v.field || p.uchannel != v.channel)
            continue;
          bool match = true;
          for (int ax = 0; ax < 3; ++ax)
            if (int16_t(p.off[ax] + n.acc.off[ax]) != v.acc.off[ax]) match = false;
          if (match) terms.push_back(a.computed(n.field, p.store_channel, n.acc));
        }
        d = a.sum(std::move(terms));
        break;
      }
      case ExprKind::kSum: {
        std::vector<ExprId> terms;
        for (ExprId k : n.kids) {
          ExprId dk = derivative(a, k, var, spec);
          if (!is_zero(dk)) terms.push_back(dk);
        }
        d = a.sum(std::move(terms));
        break;
      }
      case ExprKind::kProduct: {
        std::vector<ExprId> terms;
        for (size_t i = 0; i < n.kids.size(); ++i) {
          ExprId dk = derivative(a, n.kids[i], var, spec);
          if (is_zero(dk)) continue;
          std::vector<ExprId> factors{dk};
          for (size_t j = 0; j < n.kids.size(); ++j)
            if (j != i) factors.push_back(n.kids[j]);
          terms.push_back(a.product(std::move(factors)));
        }
        d = a.sum(std::move(terms));
        break;
      }
      case ExprKind::kPow: {
        ExprId db = derivative(a, n.kids[0], var, spec);
        if (is_zero(db)) {
          d = a.constant(0);
        } else {
          d = a.product({a.constant(n.expo.to_double()), a.pow(n.kids[0], n.expo - Rat(1)), db});
        }
        break;
      }
      case ExprKind::kUnary: {
        ExprId b = n.kids[0];
        ExprId db = derivative(a, b, var, spec);
        if (is_zero(db)) {
          d = a.constant(0);
          break;
        }
        ExprId outer;
        switch (UnaryFn(n.sub)) {
          case UnaryFn::kSqrt: outer = a.product({a.constant(0.5), a.pow(b, Rat(-1, 2))}); break;
          case UnaryFn::kSin: outer = a.unary(UnaryFn::kCos, b); break;
          case UnaryFn::kCos: outer = a.neg(a.unary(UnaryFn::kSin, b)); break;
          case UnaryFn::kExp: outer = expr; break;
          case UnaryFn::kLog: outer = a.pow(b, Rat(-1)); break;
          case UnaryFn::kAbs:
            // sign(b) as gt - lt: exactly 0 at b = 0, no Select needed.
            outer = a.sub2(a.compare(CmpOp::kGt, b, a.constant(0)),
                           a.compare(CmpOp::kLt, b, a.constant(0)));
            break;
          case UnaryFn::kAtan:
            outer = a.pow(a.add2(a.constant(1), a.pow(b, Rat(2))), Rat(-1));
            break;
        }
        d = a.mul2(outer, db);
        break;
      }
      case ExprKind::kSelect:
        d = a.select(n.kids[0], derivative(a, n.kids[1], var, spec),
                     derivative(a, n.kids[2], var, spec));
        break;
      default:
        // Const/Param/Index/Array/P/Compare/Bool/InBounds carry no unknowns
        // (booleans are piecewise constant; their kinks have measure zero).
        d = a.constant(0);
        break;
    }
  }
  d = canonicalize(a, d);
  memo.emplace(key, d);
  return d;
}

namespace detail {

inline void sort_accesses(const ExprArena& a, std::vector<ExprId>& v) {
  std::sort(v.begin(), v.end(), [&](ExprId x, ExprId y) {
    const ExprNode& p = a.at(x);
    const ExprNode& q = a.at(y);
    if (p.field != q.field) return p.field < q.field;
    if (p.channel != q.channel) return p.channel < q.channel;
    if (p.acc.graph != q.acc.graph) return p.acc.graph < q.acc.graph;
    if (p.acc.slot != q.acc.slot) return p.acc.slot < q.acc.slot;
    return p.acc.off < q.acc.off;
  });
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace detail

// Every distinct unknown access appearing syntactically in `expr`, in
// deterministic (field, channel, access) order.
inline std::vector<ExprId> unknown_accesses(const ExprArena& a, ExprId expr) {
  std::vector<ExprId> found;
  std::vector<ExprId> stack{expr};
  std::unordered_map<ExprId, bool> seen;
  while (!stack.empty()) {
    ExprId id = stack.back();
    stack.pop_back();
    if (seen.count(id)) continue;
    seen[id] = true;
    const ExprNode& n = a.at(id);
    if (!n.has_unknown) continue;
    if (n.kind == ExprKind::kUnknown) found.push_back(id);
    for (ExprId k : n.kids) stack.push_back(k);
  }
  detail::sort_accesses(a, found);
  return found;
}

// Every unknown access `expr` actually depends on: the syntactic ones plus,
// for cache-mode computed reads, the shifted accesses their defining
// expressions reach (frozen arrays contribute none). These are the
// differentiation variables of a residual template.
inline std::vector<ExprId> dependent_unknowns(ExprArena& a, const ProblemSpec& spec,
                                              ExprId expr) {
  std::vector<ExprId> found;
  std::vector<ExprId> stack{expr};
  std::unordered_map<ExprId, bool> seen;
  while (!stack.empty()) {
    ExprId id = stack.back();
    stack.pop_back();
    if (seen.count(id)) continue;
    seen[id] = true;
    const ExprNode n = a.at(id);  // copy: interning below may grow the arena
    if (!n.has_unknown) continue;
    if (n.kind == ExprKind::kUnknown) found.push_back(id);
    if (n.kind == ExprKind::kComputed && !n.acc.graph) {
      const ComputedArray& ca = spec.computed[n.field];
      if (ca.mode == ComputedMode::kCache) {
        for (const ComputedPartial& p : ca.partials) {
          if (p.channel != n.channel) continue;
          Access acc = Access::stencil(n.acc.off[0] + p.off[0], n.acc.off[1] + p.off[1],
                                       n.acc.off[2] + p.off[2]);
          found.push_back(a.unknown(p.ufield, p.uchannel, acc));
        }
      }
    }
    for (ExprId k : n.kids) stack.push_back(k);
  }
  detail::sort_accesses(a, found);
  return found;
}

}  // namespace minopt
