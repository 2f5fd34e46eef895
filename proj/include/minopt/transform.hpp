#pragma once

#include <algorithm>
#include <array>
#include <unordered_map>
#include <vector>

#include "minopt/autodiff.hpp"
#include "minopt/problem.hpp"
#include "minopt/simplify.hpp"

namespace minopt {

// ---- shift_exp -------------------------------------------------------------
//
// Rewrites an expression so that evaluating it at pixel q yields the original
// expression's value at pixel q + s: every stencil access offset gains s,
// InBounds tests shift with their access, and index(axis) becomes
// index(axis) + s[axis]. Slot (hyperedge) accesses never shift.

namespace detail {

inline ExprId rebuild_with_kids(ExprArena& a, const ExprNode& proto, std::vector<ExprId> kids) {
  switch (proto.kind) {
    case ExprKind::kSum: return a.sum(std::move(kids));
    case ExprKind::kProduct: return a.product(std::move(kids));
    case ExprKind::kPow: return a.pow(kids[0], proto.expo);
    case ExprKind::kUnary: return a.unary(UnaryFn(proto.sub), kids[0]);
    case ExprKind::kCompare: return a.compare(CmpOp(proto.sub), kids[0], kids[1]);
    case ExprKind::kBool: return a.logical(BoolFn(proto.sub), std::move(kids));
    case ExprKind::kSelect: return a.select(kids[0], kids[1], kids[2]);
    default: fail(Err::kInternal, "rebuild_with_kids: leaf node");
  }
}

}  // namespace detail

inline ExprId shift_exp(ExprArena& a, ExprId e, const std::array<int16_t, 3>& s) {
  if (s[0] == 0 && s[1] == 0 && s[2] == 0) return e;
  std::unordered_map<ExprId, ExprId> memo;
  auto rec = [&](auto&& self, ExprId id) -> ExprId {
    auto it = memo.find(id);
    if (it != memo.end()) return it->second;
    const ExprNode n = a.at(id);  // copy: arena may grow
    ExprId out;
    switch (n.kind) {
      case ExprKind::kUnknown:
      case ExprKind::kArray:
      case ExprKind::kComputed:
      case ExprKind::kP:
      case ExprKind::kInBounds: {
        if (n.acc.graph) {
          out = id;  // hyperedge access: no spatial position
          break;
        }
        Access acc = n.acc;
        for (int ax = 0; ax < 3; ++ax) acc.off[ax] = int16_t(acc.off[ax] + s[ax]);
        switch (n.kind) {
          case ExprKind::kUnknown: out = a.unknown(n.field, n.channel, acc); break;
          case ExprKind::kArray: out = a.array(n.field, n.channel, acc); break;
          case ExprKind::kComputed: out = a.computed(n.field, n.channel, acc); break;
          case ExprKind::kP: out = a.pfield(n.field, n.channel, acc); break;
          default: out = a.inbounds(acc); break;
        }
        break;
      }
      case ExprKind::kIndex:
        out = s[n.field] == 0 ? id : a.add2(id, a.constant(double(s[n.field])));
        break;
      default: {
        if (n.kids.empty()) {
          out = id;
          break;
        }
        std::vector<ExprId> kids;
        kids.reserve(n.kids.size());
        bool changed = false;
        for (ExprId k : n.kids) {
          ExprId r = self(self, k);
          changed |= (r != k);
          kids.push_back(r);
        }
        out = changed ? detail::rebuild_with_kids(a, n, std::move(kids)) : id;
        break;
      }
    }
    memo.emplace(id, out);
    return out;
  };
  return rec(rec, e);
}

// ---- transform -------------------------------------------------------------
//
// Turns scalar residual templates into the symbolic kernels the solver needs:
//
//  * every grid template acquires an implicit boundary guard — the conjunction
//    of InBounds over all of its distinct stencil access offsets — so a
//    residual contributes exactly zero wherever any of its reads would leave
//    the domain;
//  * per-template partial derivatives for every unknown the residual depends
//    on (including dependence routed through cached computed arrays), which
//    materialize Jacobian rows;
//  * a per-template J*p expression (partials contracted against the direction
//    field read through P accesses);
//  * per unknown scalar channel, gathered normal-equation kernels built from
//    residual instances shifted back to the origin:
//      b   = -2 * sum_r r * dr/dx        (right-hand side)
//      m   =  2 * sum_r (dr/dx)^2        (Jacobi preconditioner diagonal)
//      jtj =  2 * sum_r dr/dx * (J p)_r  (matrix-free normal-matrix apply)
//    A shifted instance's guard is rebuilt from the template's offset set at
//    the shifted position rather than shifted textually: InBounds(0) folds
//    away at the origin but must reappear as InBounds(-w) once shifted.
//
// Graph templates stay per-edge (residual, partials, jp); the executor
// scatters their contributions into b, m, and JtJ*p through edge columns.

struct ResidualTerm {
  DomainKind kind = DomainKind::kGrid;
  GridDomain domain;   // grid templates: iteration domain
  int graph = -1;      // graph templates: hyperedge set
  int rank = 0;
  ExprId residual = kNoExpr;     // guarded, canonical
  ExprId bound_guard = kNoExpr;  // the implicit guard alone (const 1 if none)
  std::vector<std::array<int16_t, 3>> offsets;  // distinct stencil access offsets
  struct Partial {
    int field = 0;
    int channel = 0;
    Access acc;          // unknown access this column corresponds to
    ExprId d = kNoExpr;  // d residual / d x[field,channel](acc), guarded
  };
  std::vector<Partial> partials;
  ExprId jp = kNoExpr;  // sum_k partials[k].d * P_k
};

struct GatherKernel {
  int field = 0;
  int channel = 0;
  ExprId b = kNoExpr;
  ExprId m = kNoExpr;
  ExprId jtj = kNoExpr;
};

struct TransformedProblem {
  std::vector<ResidualTerm> residuals;  // template-major: Jacobian row order
  std::vector<GatherKernel> gather;     // one per unknown scalar channel
};

namespace detail {

inline void collect_access_offsets(const ExprArena& a, ExprId e,
                                   std::vector<std::array<int16_t, 3>>& out) {
  std::vector<ExprId> stack = {e};
  std::unordered_map<ExprId, bool> seen;
  while (!stack.empty()) {
    ExprId id = stack.back();
    stack.pop_back();
    if (seen.count(id)) continue;
    seen.emplace(id, true);
    const ExprNode& n = a.at(id);
    switch (n.kind) {
      case ExprKind::kUnknown:
      case ExprKind::kArray:
      case ExprKind::kComputed:
        if (!n.acc.graph) out.push_back(n.acc.off);
        break;
      default: break;
    }
    for (ExprId k : n.kids) stack.push_back(k);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
}

// Guard for the residual instance shifted by -w: conjunction of InBounds over
// the template's access offsets, each relocated by -w.
inline std::vector<ExprId> instance_guard(ExprArena& a,
                                          const std::vector<std::array<int16_t, 3>>& offs,
                                          const std::array<int16_t, 3>& w) {
  std::vector<ExprId> ibs;
  for (const auto& v : offs) {
    Access acc = Access::stencil(int(v[0]) - w[0], int(v[1]) - w[1], int(v[2]) - w[2]);
    ExprId ib = a.inbounds(acc);
    const ExprNode& n = a.at(ib);
    if (n.kind == ExprKind::kConst && n.cval == 1) continue;  // origin folds away
    ibs.push_back(ib);
  }
  return ibs;
}

// core evaluated at pixel q - w, guarded for that instance.
inline ExprId shifted_instance(ExprArena& a, const ResidualTerm& t, ExprId core,
                               const std::array<int16_t, 3>& w) {
  std::array<int16_t, 3> s{int16_t(-w[0]), int16_t(-w[1]), int16_t(-w[2])};
  std::vector<ExprId> kids = instance_guard(a, t.offsets, w);
  kids.push_back(shift_exp(a, core, s));
  return a.product(std::move(kids));
}

}  // namespace detail

inline TransformedProblem transform(ProblemSpec& spec) {
  ExprArena& a = spec.arena;
  TransformedProblem out;

  for (const EnergyTemplate& et : spec.energies) {
    ResidualTerm t;
    t.kind = et.kind;
    t.domain = et.domain;
    t.graph = et.graph;
    ExprId r = et.expr;
    if (et.kind == DomainKind::kGrid) {
      t.rank = int(et.domain.dims.size());
      detail::collect_access_offsets(a, r, t.offsets);
      std::vector<ExprId> ibs = detail::instance_guard(a, t.offsets, {0, 0, 0});
      t.bound_guard = canonicalize(a, a.product(std::vector<ExprId>(ibs)));
      ibs.push_back(r);
      r = a.product(std::move(ibs));
    } else {
      t.rank = 1;
      t.bound_guard = a.constant(1);
    }
    t.residual = canonicalize(a, r);

    std::vector<ExprId> jp_terms;
    for (ExprId var : dependent_unknowns(a, spec, t.residual)) {
      const ExprNode vn = a.at(var);
      ExprId d = canonicalize(a, derivative(a, t.residual, var, &spec));
      const ExprNode& dn = a.at(d);
      if (dn.kind == ExprKind::kConst && dn.cval == 0) continue;
      t.partials.push_back({vn.field, vn.channel, vn.acc, d});
      jp_terms.push_back(a.mul2(d, a.pfield(vn.field, vn.channel, vn.acc)));
    }
    t.jp = canonicalize(a, a.sum(std::move(jp_terms)));
    out.residuals.push_back(std::move(t));
  }

  for (size_t fi = 0; fi < spec.unknowns.size(); ++fi) {
    const UnknownField& f = spec.unknowns[fi];
    for (int c = 0; c < f.channels; ++c) {
      std::vector<ExprId> bs, ms, js;
      for (const ResidualTerm& t : out.residuals) {
        if (t.kind != DomainKind::kGrid || !(t.domain == f.domain)) continue;
        for (const ResidualTerm::Partial& p : t.partials) {
          if (p.field != int(fi) || p.channel != c || p.acc.graph) continue;
          const std::array<int16_t, 3>& w = p.acc.off;
          bs.push_back(detail::shifted_instance(a, t, a.mul2(t.residual, p.d), w));
          ms.push_back(detail::shifted_instance(a, t, a.mul2(p.d, p.d), w));
          js.push_back(detail::shifted_instance(a, t, a.mul2(p.d, t.jp), w));
        }
      }
      GatherKernel g;
      g.field = int(fi);
      g.channel = c;
      g.b = canonicalize(a, a.mul2(a.constant(-2), a.sum(std::move(bs))));
      g.m = canonicalize(a, a.mul2(a.constant(2), a.sum(std::move(ms))));
      g.jtj = canonicalize(a, a.mul2(a.constant(2), a.sum(std::move(js))));
      out.gather.push_back(g);
    }
  }
  return out;
}

}  // namespace minopt
