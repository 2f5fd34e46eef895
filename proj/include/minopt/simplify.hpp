#pragma once

#include <algorithm>
#include <unordered_map>
#include <vector>

#include "minopt/eval.hpp"
#include "minopt/expr.hpp"

namespace minopt {

// ---- canonicalize ---------------------------------------------------------
//
// Rewrites an expression into canonical polynomial form: flattened n-ary
// sums/products, constants merged, like terms collected by coefficient,
// repeated factors collected by exponent, booleans reduced by idempotence
// (b^n -> b), and sqrt normalized to Pow(., 1/2). Select is left in place
// (its children are canonicalized); products are never distributed over sums.
// Results are interned, so canonicalization is idempotent by construction and
// memoized per arena.

namespace detail {

struct RatLess {
  bool operator()(const Rat& a, const Rat& b) const {
    return a.num * b.den < b.num * a.den;
  }
};

class Canon {
 public:
  explicit Canon(ExprArena& a) : a_(a) {}

  ExprId run(ExprId id) {
    auto& memo = a_.canon_memo();
    auto it = memo.find(id);
    if (it != memo.end()) return it->second;
    ExprId out = rewrite(id);
    memo.emplace(id, out);
    memo.emplace(out, out);  // canonical forms are fixed points
    return out;
  }

 private:
  ExprId rewrite(ExprId id) {
    const ExprNode n = a_.at(id);  // copy: arena may grow while we build
    switch (n.kind) {
      case ExprKind::kSum: return rebuild_sum(n.kids);
      case ExprKind::kProduct: return rebuild_product(n.kids);
      case ExprKind::kPow: return rebuild_pow(run(n.kids[0]), n.expo);
      case ExprKind::kUnary: {
        ExprId k = run(n.kids[0]);
        if (UnaryFn(n.sub) == UnaryFn::kSqrt) return rebuild_pow(k, Rat(1, 2));
        return a_.unary(UnaryFn(n.sub), k);
      }
      case ExprKind::kCompare: return a_.compare(CmpOp(n.sub), run(n.kids[0]), run(n.kids[1]));
      case ExprKind::kBool: {
        if (BoolFn(n.sub) == BoolFn::kNot) return a_.logical(BoolFn::kNot, {run(n.kids[0])});
        // Flatten nested conjunctions/disjunctions and drop duplicates.
        std::vector<ExprId> flat;
        for (ExprId k : n.kids) {
          ExprId c = run(k);
          const ExprNode& cn = a_.at(c);
          if (cn.kind == ExprKind::kBool && cn.sub == n.sub)
            flat.insert(flat.end(), cn.kids.begin(), cn.kids.end());
          else
            flat.push_back(c);
        }
        std::sort(flat.begin(), flat.end());
        flat.erase(std::unique(flat.begin(), flat.end()), flat.end());
        // Identity/absorbing constants.
        std::vector<ExprId> kept;
        for (ExprId k : flat) {
          const ExprNode& kn = a_.at(k);
          if (kn.kind == ExprKind::kConst) {
            bool truth = kn.cval != 0;
            if (BoolFn(n.sub) == BoolFn::kAnd && !truth) return a_.constant(0);
            if (BoolFn(n.sub) == BoolFn::kOr && truth) return a_.constant(1);
            continue;  // neutral element
          }
          kept.push_back(k);
        }
        if (kept.empty()) return a_.constant(BoolFn(n.sub) == BoolFn::kAnd ? 1 : 0);
        return a_.logical(BoolFn(n.sub), std::move(kept));
      }
      case ExprKind::kSelect:
        return a_.select(run(n.kids[0]), run(n.kids[1]), run(n.kids[2]));
      default:
        return id;  // leaves are already canonical
    }
  }

  // Decompose a canonical term into (coefficient, monomial id or kNoExpr for 1).
  std::pair<double, ExprId> split_coeff(ExprId t) {
    const ExprNode& n = a_.at(t);
    if (n.kind == ExprKind::kConst) return {n.cval, kNoExpr};
    if (n.kind == ExprKind::kProduct) {
      double c = 1;
      std::vector<ExprId> rest;
      for (ExprId k : n.kids) {
        const ExprNode& kn = a_.at(k);
        if (kn.kind == ExprKind::kConst)
          c *= kn.cval;
        else
          rest.push_back(k);
      }
      if (rest.empty()) return {c, kNoExpr};
      return {c, a_.product(std::move(rest))};
    }
    return {1.0, t};
  }

  ExprId rebuild_sum(const std::vector<ExprId>& kids) {
    // monomial -> accumulated coefficient; insertion into std::map keyed by
    // (kind, hash, id) keeps merge order deterministic.
    double const_term = 0;
    std::vector<ExprId> order;
    std::unordered_map<ExprId, double> coeff;
    auto add_term = [&](ExprId t) {
      auto [c, mono] = split_coeff(t);
      if (mono == kNoExpr) {
        const_term += c;
        return;
      }
      auto [it, fresh] = coeff.try_emplace(mono, 0.0);
      if (fresh) order.push_back(mono);
      it->second += c;
    };
    for (ExprId k : kids) {
      ExprId c = run(k);
      const ExprNode& cn = a_.at(c);
      if (cn.kind == ExprKind::kSum)
        for (ExprId t : cn.kids) add_term(t);
      else
        add_term(c);
    }
    std::vector<ExprId> terms;
    for (ExprId mono : order) {
      double c = coeff[mono];
      if (c == 0) continue;
      terms.push_back(c == 1 ? mono : mul_flat(a_.constant(c), mono));
    }
    if (const_term != 0) terms.push_back(a_.constant(const_term));
    return a_.sum(std::move(terms));
  }

  // factor * term, splicing rather than nesting when term is a product, so
  // downstream factoring keeps seeing every factor at the top level.
  ExprId mul_flat(ExprId factor, ExprId term) {
    const ExprNode& tn = a_.at(term);
    std::vector<ExprId> kids;
    if (tn.kind == ExprKind::kProduct)
      kids = tn.kids;
    else
      kids = {term};
    kids.push_back(factor);
    return a_.product(std::move(kids));
  }

  // x^a * x^b -> x^(a+b) is only an IEEE identity when both exponents share a
  // sign (mixed signs break at x = 0, where 0 * inf = NaN) and when a
  // fractional pair does not sum to an integer (sqrt(x)*sqrt(x) is NaN for
  // x < 0, x is not). Booleans merge freely: the result renormalizes to b.
  bool merge_ok(ExprId base, Rat a, Rat b) const {
    if (a_.at(base).boolean) return a.num > 0 && b.num > 0;
    if ((a.num > 0) != (b.num > 0)) return false;
    Rat s = a + b;
    if (!s.is_integer()) return true;
    return a.is_integer() && b.is_integer();
  }

  ExprId rebuild_product(const std::vector<ExprId>& kids) {
    double coeff = 1;
    std::vector<ExprId> order;
    std::unordered_map<ExprId, std::vector<Rat>> expo;
    auto add_factor = [&](ExprId base, Rat q) {
      if (q.num == 0) return;  // x^0 folds to 1
      auto [it, fresh] = expo.try_emplace(base);
      if (fresh) order.push_back(base);
      for (Rat& e : it->second) {
        if (merge_ok(base, e, q)) {
          e = e + q;
          return;
        }
      }
      it->second.push_back(q);
    };
    // Collect one factor: distribute integer powers of products, and merge
    // through a nested Pow only when that is value-preserving.
    auto collect = [&](ExprId f, Rat outer, auto&& self) -> void {
      const ExprNode& fn = a_.at(f);
      if (fn.kind == ExprKind::kConst) {
        coeff *= pow_eval(fn.cval, outer.num, outer.den);
        return;
      }
      if (fn.kind == ExprKind::kProduct && outer.is_integer()) {
        for (ExprId ik : fn.kids) self(ik, outer, self);
        return;
      }
      if (fn.kind == ExprKind::kPow) {
        if (outer == Rat(1)) {
          add_factor(fn.kids[0], fn.expo);
          return;
        }
        // (x^e)^outer -> x^(e*outer) needs odd e (sign-preserving) and an
        // outer denominator <= 2: for larger denominators the merged exponent
        // can cancel to an integer, turning a NaN path (negative base to a
        // fractional power) into a finite one.
        if (fn.expo.is_integer() && (fn.expo.num & 1) && outer.den <= 2) {
          self(fn.kids[0], fn.expo * outer, self);
          return;
        }
      }
      add_factor(f, outer);
    };
    for (ExprId k : kids) collect(run(k), Rat(1), collect);

    if (coeff == 0) return a_.constant(0);
    std::vector<ExprId> factors;
    for (ExprId base : order)
      for (Rat q : expo[base]) factors.push_back(rebuild_pow(base, q));
    if (coeff != 1 || factors.empty()) factors.push_back(a_.constant(coeff));
    return a_.product(std::move(factors));
  }

  ExprId rebuild_pow(ExprId base, Rat q) {
    if (q.num == 0) return a_.constant(1);
    const ExprNode& bn = a_.at(base);
    // Boolean idempotence: b^q = b for any positive exponent.
    if (bn.boolean && q.num > 0) return base;
    // Merge nested powers only when the inner exponent is an odd integer
    // (sign-preserving, so IEEE semantics match on negative bases) and q's
    // denominator is at most 2 — for larger denominators the merged exponent
    // can cancel to an integer, e.g. (x^3)^(1/3) -> x, which is finite where
    // the original is NaN for negative x.
    if (bn.kind == ExprKind::kPow && bn.expo.is_integer() && (bn.expo.num & 1) && q.den <= 2)
      return rebuild_pow(bn.kids[0], bn.expo * q);
    // Distribute integer powers of products so exponent collection sees bases.
    if (bn.kind == ExprKind::kProduct && q.is_integer() && q != Rat(1)) {
      std::vector<ExprId> factored;
      for (ExprId k : bn.kids) factored.push_back(rebuild_pow(k, q));
      return rebuild_product(factored);
    }
    return a_.pow(base, q);
  }

  ExprArena& a_;
};

}  // namespace detail

inline ExprId canonicalize(ExprArena& a, ExprId e) { return detail::Canon(a).run(e); }

// ---- factor_horner --------------------------------------------------------
//
// Greedy multivariate Horner factoring of sums: repeatedly pull out the factor
// shared by the most summands. Boolean factors win ties and are preferred
// outright so that guard conditions merge. Never increases multiplication
// count.

namespace detail {

class Horner {
 public:
  explicit Horner(ExprArena& a) : a_(a) {}

  ExprId run(ExprId id) {
    auto it = memo_.find(id);
    if (it != memo_.end()) return it->second;
    const ExprNode n = a_.at(id);
    ExprId out;
    switch (n.kind) {
      case ExprKind::kSum: {
        std::vector<ExprId> terms;
        for (ExprId k : n.kids) terms.push_back(run(k));
        out = factor_sum(std::move(terms));
        break;
      }
      case ExprKind::kProduct: {
        std::vector<ExprId> kids;
        for (ExprId k : n.kids) kids.push_back(run(k));
        out = a_.product(std::move(kids));
        break;
      }
      case ExprKind::kPow: out = a_.pow(run(n.kids[0]), n.expo); break;
      case ExprKind::kUnary: out = a_.unary(UnaryFn(n.sub), run(n.kids[0])); break;
      case ExprKind::kCompare: out = a_.compare(CmpOp(n.sub), run(n.kids[0]), run(n.kids[1])); break;
      case ExprKind::kBool: {
        std::vector<ExprId> kids;
        for (ExprId k : n.kids) kids.push_back(run(k));
        out = a_.logical(BoolFn(n.sub), std::move(kids));
        break;
      }
      case ExprKind::kSelect: out = a_.select(run(n.kids[0]), run(n.kids[1]), run(n.kids[2])); break;
      default: out = id; break;
    }
    memo_.emplace(id, out);
    return out;
  }

 private:
  // Bases a term exposes with exponent >= 1 (so one power can be pulled out).
  void term_bases(ExprId t, std::vector<ExprId>& out) {
    const ExprNode& n = a_.at(t);
    if (n.kind == ExprKind::kProduct) {
      for (ExprId k : n.kids) {
        const ExprNode& kn = a_.at(k);
        if (kn.kind == ExprKind::kConst) continue;
        if (kn.kind == ExprKind::kPow) {
          if (RatLess{}(kn.expo, Rat(1))) continue;
          out.push_back(kn.kids[0]);
        } else {
          out.push_back(k);
        }
      }
    } else if (n.kind == ExprKind::kPow) {
      if (!RatLess{}(n.expo, Rat(1))) out.push_back(n.kids[0]);
    } else if (n.kind != ExprKind::kConst) {
      out.push_back(t);
    }
  }

  bool term_has_base(ExprId t, ExprId base) {
    std::vector<ExprId> bs;
    term_bases(t, bs);
    return std::find(bs.begin(), bs.end(), base) != bs.end();
  }

  // t / base, assuming base occurs with exponent >= 1.
  ExprId divide(ExprId t, ExprId base) {
    const ExprNode& n = a_.at(t);
    if (t == base) return a_.constant(1);
    if (n.kind == ExprKind::kPow && n.kids[0] == base) return a_.pow(base, n.expo - Rat(1));
    if (n.kind == ExprKind::kProduct) {
      std::vector<ExprId> kids;
      bool done = false;
      for (ExprId k : n.kids) {
        if (!done && k == base) {
          done = true;
          continue;
        }
        const ExprNode& kn = a_.at(k);
        if (!done && kn.kind == ExprKind::kPow && kn.kids[0] == base) {
          done = true;
          ExprId rem = a_.pow(base, kn.expo - Rat(1));
          if (a_.at(rem).kind != ExprKind::kConst || a_.at(rem).cval != 1) kids.push_back(rem);
          continue;
        }
        kids.push_back(k);
      }
      return a_.product(std::move(kids));
    }
    fail(Err::kInternal, "divide: base not present in term");
  }

  ExprId factor_sum(std::vector<ExprId> terms) {
    while (terms.size() >= 2) {
      // Count occurrences of every base across the summands.
      std::vector<ExprId> order;
      std::unordered_map<ExprId, int> count;
      for (ExprId t : terms) {
        std::vector<ExprId> bs;
        term_bases(t, bs);
        std::sort(bs.begin(), bs.end());
        bs.erase(std::unique(bs.begin(), bs.end()), bs.end());
        for (ExprId b : bs) {
          auto [it, fresh] = count.try_emplace(b, 0);
          if (fresh) order.push_back(b);
          ++it->second;
        }
      }
      ExprId best = kNoExpr;
      int best_count = 1;
      bool best_bool = false;
      for (ExprId b : order) {
        int c = count[b];
        if (c < 2) continue;
        bool is_bool = a_.at(b).boolean;
        // Booleans are weighted first; ties break on count then (hash, id).
        bool better;
        if (best == kNoExpr) {
          better = true;
        } else if (is_bool != best_bool) {
          better = is_bool;
        } else if (c != best_count) {
          better = c > best_count;
        } else {
          const ExprNode& bn = a_.at(b);
          const ExprNode& cn = a_.at(best);
          better = bn.hash != cn.hash ? bn.hash < cn.hash : b < best;
        }
        if (better) {
          best = b;
          best_count = c;
          best_bool = is_bool;
        }
      }
      if (best == kNoExpr) break;

      std::vector<ExprId> in, out;
      for (ExprId t : terms) (term_has_base(t, best) ? in : out).push_back(t);
      std::vector<ExprId> inner;
      for (ExprId t : in) inner.push_back(divide(t, best));
      ExprId grouped = factor_sum(std::move(inner));
      // Splice when the regrouped sum collapsed to a product, keeping the
      // factored form flat for guard peeling and further factoring.
      std::vector<ExprId> pk;
      if (a_.at(grouped).kind == ExprKind::kProduct)
        pk = a_.at(grouped).kids;
      else
        pk = {grouped};
      pk.push_back(best);
      out.push_back(a_.product(std::move(pk)));
      terms = std::move(out);
    }
    return a_.sum(std::move(terms));
  }

  ExprArena& a_;
  std::unordered_map<ExprId, ExprId> memo_;
};

}  // namespace detail

inline ExprId factor_horner(ExprArena& a, ExprId e) { return detail::Horner(a).run(e); }

// ---- lower_conditions -----------------------------------------------------
//
// Rewrites Selects into boolean-polynomial form (cond*a + !cond*b, distributed
// over sum branches so conditions reach their terms), re-simplifies, then
// splits the top-level sum into guarded reductions: each addend's boolean
// factors become its guard conjunction and are stripped from the evaluated
// root. Evaluating each root only when its guard holds and skipping it
// otherwise reproduces the original value exactly.

struct ConditionedPair {
  std::vector<ExprId> conds;  // conjunction, canonically ordered
  ExprId root = kNoExpr;
};

struct ConditionedIR {
  std::vector<ConditionedPair> pairs;
};

namespace detail {

inline ExprId rewrite_selects(ExprArena& a, ExprId id,
                              std::unordered_map<ExprId, ExprId>& memo) {
  auto it = memo.find(id);
  if (it != memo.end()) return it->second;
  const ExprNode n = a.at(id);
  ExprId out;
  if (n.kind == ExprKind::kSelect) {
    ExprId c = rewrite_selects(a, n.kids[0], memo);
    ExprId t = rewrite_selects(a, n.kids[1], memo);
    ExprId f = rewrite_selects(a, n.kids[2], memo);
    ExprId nc = a.logical(BoolFn::kNot, {c});
    // Distribute the condition over sum branches so that nested selects end
    // up as flat products of conditions against their terms.
    auto guard_terms = [&](ExprId cond, ExprId branch, std::vector<ExprId>& dst) {
      const ExprNode& bn = a.at(branch);
      if (bn.kind == ExprKind::kSum) {
        for (ExprId k : bn.kids) dst.push_back(a.product({cond, k}));
      } else {
        dst.push_back(a.product({cond, branch}));
      }
    };
    std::vector<ExprId> terms;
    guard_terms(c, t, terms);
    guard_terms(nc, f, terms);
    out = a.sum(std::move(terms));
  } else if (!n.kids.empty()) {
    ExprNode copy = n;
    bool changed = false;
    for (ExprId& k : copy.kids) {
      ExprId r = rewrite_selects(a, k, memo);
      changed |= (r != k);
      k = r;
    }
    if (!changed) {
      out = id;
    } else {
      switch (copy.kind) {
        case ExprKind::kSum: out = a.sum(std::move(copy.kids)); break;
        case ExprKind::kProduct: out = a.product(std::move(copy.kids)); break;
        case ExprKind::kPow: out = a.pow(copy.kids[0], copy.expo); break;
        case ExprKind::kUnary: out = a.unary(UnaryFn(copy.sub), copy.kids[0]); break;
        case ExprKind::kCompare:
          out = a.compare(CmpOp(copy.sub), copy.kids[0], copy.kids[1]);
          break;
        case ExprKind::kBool: out = a.logical(BoolFn(copy.sub), std::move(copy.kids)); break;
        default: fail(Err::kInternal, "rewrite_selects: unexpected node");
      }
    }
  } else {
    out = id;
  }
  memo.emplace(id, out);
  return out;
}

// Guard ordering: InBounds conditions first so short-circuit evaluation makes
// every later condition's reads safe; then by (hash, id) for determinism.
inline void sort_conds(const ExprArena& a, std::vector<ExprId>& conds) {
  std::sort(conds.begin(), conds.end(), [&](ExprId x, ExprId y) {
    bool bx = a.at(x).kind == ExprKind::kInBounds;
    bool by = a.at(y).kind == ExprKind::kInBounds;
    if (bx != by) return bx;
    if (a.at(x).hash != a.at(y).hash) return a.at(x).hash < a.at(y).hash;
    return x < y;
  });
}

}  // namespace detail

inline ConditionedIR lower_conditions(ExprArena& a, ExprId expr) {
  std::unordered_map<ExprId, ExprId> memo;
  ExprId flat = detail::rewrite_selects(a, expr, memo);
  flat = factor_horner(a, canonicalize(a, flat));

  // Conjunctions arrive either as And nodes or as products of booleans; split
  // them into unit conditions so InBounds guards can be ordered first.
  auto flatten_cond = [&](auto&& self, ExprId c, std::vector<ExprId>& dst) -> void {
    const ExprNode& cn = a.at(c);
    if ((cn.kind == ExprKind::kBool && BoolFn(cn.sub) == BoolFn::kAnd) ||
        cn.kind == ExprKind::kProduct) {
      for (ExprId k : cn.kids) self(self, k, dst);
    } else if (cn.kind != ExprKind::kConst) {
      dst.push_back(c);
    }
  };

  // Peel boolean factors off each top-level addend.
  auto peel = [&](ExprId term) -> ConditionedPair {
    ConditionedPair p;
    const ExprNode& n = a.at(term);
    if (n.boolean && n.kind != ExprKind::kConst) {
      flatten_cond(flatten_cond, term, p.conds);
      p.root = a.constant(1);
    } else if (n.kind == ExprKind::kProduct) {
      std::vector<ExprId> rest;
      for (ExprId k : n.kids) {
        const ExprNode& kn = a.at(k);
        if (kn.boolean && kn.kind != ExprKind::kConst)
          flatten_cond(flatten_cond, k, p.conds);
        else
          rest.push_back(k);
      }
      p.root = a.product(std::move(rest));
    } else {
      p.root = term;
    }
    detail::sort_conds(a, p.conds);
    p.conds.erase(std::unique(p.conds.begin(), p.conds.end()), p.conds.end());
    return p;
  };

  std::vector<ConditionedPair> raw;
  const ExprNode& fn = a.at(flat);
  if (fn.kind == ExprKind::kSum) {
    for (ExprId t : fn.kids) raw.push_back(peel(t));
  } else {
    raw.push_back(peel(flat));
  }

  // Merge addends that share a guard set (order-preserving).
  ConditionedIR out;
  for (ConditionedPair& p : raw) {
    bool merged = false;
    for (ConditionedPair& q : out.pairs) {
      if (q.conds == p.conds) {
        q.root = a.sum({q.root, p.root});
        merged = true;
        break;
      }
    }
    if (!merged) out.pairs.push_back(std::move(p));
  }
  return out;
}

// Direct evaluation of ConditionedIR: guards honored, guard-false roots
// skipped (not added as zero), mirroring compiled-kernel reduction semantics.
template <class Real, class EnvT>
inline Real eval_conditioned(const ExprArena& a, const ConditionedIR& cir, const EnvT& env) {
  Real acc = Real(0);
  Evaluator<Real> ev(a, env);
  for (const ConditionedPair& p : cir.pairs) {
    bool active = true;
    for (ExprId c : p.conds) {
      if (ev.eval(c) == Real(0)) {
        active = false;
        break;
      }
    }
    if (active) acc += ev.eval(p.root);
  }
  return acc;
}

}  // namespace minopt
