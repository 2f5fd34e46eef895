#pragma once

// Compiles ConditionedIR into a guarded register program (KernelProgram).
//
// Pipeline:
//   1. Guard normalization: interior products carrying boolean factors are
//      rewritten into nested selects (InBounds conditions first), so a
//      guarded subterm is never evaluated while its condition is false —
//      stricter than an IEEE select, and what makes out-of-bounds reads
//      skippable rather than merely harmless.
//   2. Condition inference: each DAG node runs under the intersection of its
//      users' guard sets.  A select extends the user set by its condition for
//      the taken branch; the j-th condition of a pair is guarded by the
//      conditions before it (short-circuit evaluation).
//   3. Ordering: backward greedy list scheduling with a three-level priority
//      — same guard as the previously chosen instruction, then smallest
//      live-set growth, then ready the longest (final tie: lowest node id).
//   4. Emission: adjacent instructions with equal guards form one block;
//      registers are assigned by linear scan over the final order.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "minopt/expr.hpp"
#include "minopt/program.hpp"
#include "minopt/simplify.hpp"
#include "minopt/transform.hpp"

namespace minopt {
namespace sched_detail {

// Condition ordering shared with condition lowering: InBounds guards first
// (so they can protect reads inside later conditions), then structural hash,
// then id.  Every guard set is kept sorted under this order; prefix guarding
// is sound because for any two sets the common elements sort identically.
inline bool cond_less(const ExprArena& a, ExprId x, ExprId y) {
  bool bx = a.at(x).kind == ExprKind::kInBounds;
  bool by = a.at(y).kind == ExprKind::kInBounds;
  if (bx != by) return bx;
  if (a.at(x).hash != a.at(y).hash) return a.at(x).hash < a.at(y).hash;
  return x < y;
}

inline std::vector<ExprId> cond_union(const ExprArena& a, std::vector<ExprId> s,
                                      ExprId c) {
  auto less = [&](ExprId x, ExprId y) { return cond_less(a, x, y); };
  auto it = std::lower_bound(s.begin(), s.end(), c, less);
  if (it == s.end() || *it != c) s.insert(it, c);
  return s;
}

inline std::vector<ExprId> cond_intersect(const ExprArena& a,
                                          const std::vector<ExprId>& x,
                                          const std::vector<ExprId>& y) {
  auto less = [&](ExprId u, ExprId v) { return cond_less(a, u, v); };
  std::vector<ExprId> out;
  std::set_intersection(x.begin(), x.end(), y.begin(), y.end(),
                        std::back_inserter(out), less);
  return out;
}

// Rewrites products with boolean factors into select nests so the value
// factors become a guarded branch: b1*b2*v  →  sel(b1, sel(b2, v, 0), 0).
// Boolean factors are ordered InBounds-first, matching condition lowering.
inline ExprId guard_normalize(ExprArena& a, ExprId id,
                              std::unordered_map<ExprId, ExprId>& memo) {
  auto it = memo.find(id);
  if (it != memo.end()) return it->second;
  const ExprNode n = a.at(id);  // copy: the arena may grow while we recurse
  ExprId out = id;
  if (!n.kids.empty()) {
    std::vector<ExprId> kids;
    kids.reserve(n.kids.size());
    bool changed = false;
    for (ExprId k : n.kids) {
      ExprId nk = guard_normalize(a, k, memo);
      changed |= nk != k;
      kids.push_back(nk);
    }
    bool rewritten = false;
    if (n.kind == ExprKind::kProduct) {
      std::vector<ExprId> bools, vals;
      for (ExprId k : kids) {
        const ExprNode& kn = a.at(k);
        if (kn.boolean && kn.kind != ExprKind::kConst)
          bools.push_back(k);
        else
          vals.push_back(k);
      }
      if (!bools.empty()) {
        std::sort(bools.begin(), bools.end(),
                  [&](ExprId x, ExprId y) { return cond_less(a, x, y); });
        ExprId zero = a.constant(0);
        ExprId core = a.product(std::move(vals));
        for (auto rit = bools.rbegin(); rit != bools.rend(); ++rit)
          core = a.select(*rit, core, zero);
        out = core;
        rewritten = true;
      }
    }
    if (!rewritten) out = changed ? detail::rebuild_with_kids(a, n, std::move(kids)) : id;
  }
  memo.emplace(id, out);
  return out;
}

inline int operand_count(Op op) {
  switch (op) {
    case Op::kImm:
    case Op::kParam:
    case Op::kIndex:
    case Op::kLoadU:
    case Op::kLoadA:
    case Op::kLoadC:
    case Op::kLoadP:
    case Op::kInB: return 0;
    case Op::kPow:
    case Op::kUn:
    case Op::kNot: return 1;
    case Op::kAdd:
    case Op::kMul:
    case Op::kCmp:
    case Op::kAnd:
    case Op::kOr: return 2;
    case Op::kSel: return 3;
  }
  return 0;
}

}  // namespace sched_detail

// Schedules one ConditionedIR per program output.  If `normalized_out` is
// given it receives the guard-normalized pairs the program implements; a
// conditioned evaluation of those pairs matches program execution bitwise.
inline KernelProgram schedule(ExprArena& a, std::vector<ConditionedIR> outs,
                              std::vector<ConditionedIR>* normalized_out = nullptr) {
  using sched_detail::cond_less;
  auto less = [&](ExprId x, ExprId y) { return cond_less(a, x, y); };

  // ---- 1. guard normalization ------------------------------------------
  {
    std::unordered_map<ExprId, ExprId> memo;
    for (ConditionedIR& cir : outs) {
      for (size_t pi = 0; pi < cir.pairs.size();) {
        ConditionedPair& p = cir.pairs[pi];
        p.root = sched_detail::guard_normalize(a, p.root, memo);
        bool dead = false;
        std::vector<ExprId> conds;
        for (ExprId c : p.conds) {
          ExprId nc = sched_detail::guard_normalize(a, c, memo);
          const ExprNode& cn = a.at(nc);
          if (cn.kind == ExprKind::kConst) {
            if (cn.cval == 0) dead = true;  // pair can never fire
            continue;                       // constant-true guard: drop
          }
          conds.push_back(nc);
        }
        if (dead) {
          cir.pairs.erase(cir.pairs.begin() + long(pi));
          continue;
        }
        std::sort(conds.begin(), conds.end(), less);
        conds.erase(std::unique(conds.begin(), conds.end()), conds.end());
        p.conds = std::move(conds);
        ++pi;
      }
    }
  }
  if (normalized_out) *normalized_out = outs;

  // ---- 2. reachable nodes, topological order ----------------------------
  // Arena ids are topological (children are interned before parents), so
  // ascending id order is a valid evaluation order; this is verified while
  // walking so a malformed graph fails as CyclicIR instead of misscheduling.
  std::unordered_set<ExprId> reach;
  {
    std::vector<ExprId> stack;
    auto mark = [&](ExprId r) {
      if (reach.insert(r).second) stack.push_back(r);
    };
    for (const ConditionedIR& cir : outs)
      for (const ConditionedPair& p : cir.pairs) {
        mark(p.root);
        for (ExprId c : p.conds) mark(c);
      }
    while (!stack.empty()) {
      ExprId id = stack.back();
      stack.pop_back();
      for (ExprId k : a.at(id).kids) {
        check(k < id, Err::kCyclicIR, "expression graph is not a DAG");
        mark(k);
      }
    }
  }
  std::vector<ExprId> topo(reach.begin(), reach.end());
  std::sort(topo.begin(), topo.end());

  // ---- 3. condition inference -------------------------------------------
  // Guard sets form a meet-semilattice (intersection only shrinks them), so a
  // worklist iteration converges.  Two rules feed it:
  //   * user rule — a node runs under the intersection of what its users
  //     demand; select branches add the select condition for the taken side.
  //   * chain rule — the k-th member of any guard set must be computable
  //     under that set's prefix (the first member unconditionally), because
  //     the guard's value is evaluated as a short-circuit AND chain.
  struct NodeCond {
    std::vector<ExprId> set;
    bool has = false;
  };
  std::unordered_map<ExprId, NodeCond> cond;
  cond.reserve(topo.size());
  std::vector<ExprId> wl(topo.rbegin(), topo.rend());
  std::unordered_set<ExprId> inwl(topo.begin(), topo.end());
  auto enqueue = [&](ExprId id) {
    if (inwl.insert(id).second) wl.push_back(id);
  };
  auto contribute = [&](ExprId id, const std::vector<ExprId>& s) {
    if (a.at(id).kind == ExprKind::kConst) return;  // constants run anywhere
    NodeCond& nc = cond[id];
    if (!nc.has) {
      nc.set = s;
      nc.has = true;
      enqueue(id);
      return;
    }
    std::vector<ExprId> inter = sched_detail::cond_intersect(a, nc.set, s);
    if (inter.size() == nc.set.size()) return;  // subset result ⇒ unchanged
    nc.set = std::move(inter);
    enqueue(id);
  };
  for (const ConditionedIR& cir : outs)
    for (const ConditionedPair& p : cir.pairs) {
      contribute(p.root, p.conds);
      for (size_t j = 0; j < p.conds.size(); ++j)
        contribute(p.conds[j],
                   std::vector<ExprId>(p.conds.begin(), p.conds.begin() + long(j)));
    }
  while (!wl.empty()) {
    ExprId u = wl.back();
    wl.pop_back();
    inwl.erase(u);
    NodeCond& nc = cond[u];
    if (!nc.has) continue;  // no user demand yet; revisited once one arrives
    const std::vector<ExprId> s = nc.set;  // copy: contribute() may rehash
    const ExprNode& n = a.at(u);
    if (n.kind == ExprKind::kSelect) {
      contribute(n.kids[0], s);
      contribute(n.kids[1], sched_detail::cond_union(a, s, n.kids[0]));
      // The else branch is a literal zero by construction; a non-constant
      // else is evaluated strictly (value-correct, merely less lazy).
      if (a.at(n.kids[2]).kind != ExprKind::kConst) contribute(n.kids[2], s);
    } else {
      for (ExprId k : n.kids) contribute(k, s);
    }
    for (size_t k = 0; k < s.size(); ++k)
      contribute(s[k], std::vector<ExprId>(s.begin(), s.begin() + long(k)));
  }
  for (ExprId id : topo) {
    NodeCond& nc = cond[id];
    if (!nc.has) {
      nc.has = true;
      nc.set.clear();
    }
  }

  // ---- 4. units ----------------------------------------------------------
  // A unit is an atomically emitted instruction run: one per expression node
  // plus one AND per guard-chain extension.  Guard chains evaluate a set's
  // conditions left to right, each AND running under the prefix guard, so a
  // false prefix short-circuits the rest.
  struct Unit {
    bool is_and = false;
    ExprId expr = kNoExpr;        // value units
    uint32_t gid = 0;             // guard this unit's instructions run under
    uint32_t and_gid = 0;         // and-units: the guard set they complete
    std::vector<uint32_t> ops;    // operand unit indexes
  };
  std::vector<Unit> units;
  units.reserve(topo.size());
  std::unordered_map<ExprId, uint32_t> unit_of;
  for (ExprId id : topo) {
    unit_of.emplace(id, uint32_t(units.size()));
    Unit u;
    u.expr = id;
    units.push_back(std::move(u));
  }

  std::vector<GuardInfo> guards(1);  // gid 0 = unconditionally true
  std::map<std::vector<ExprId>, uint32_t> gid_of;
  gid_of.emplace(std::vector<ExprId>{}, 0u);
  std::vector<uint32_t> provider;  // gid -> unit producing its 0/1 value
  provider.push_back(UINT32_MAX);
  auto ensure_gid = [&](auto&& self, const std::vector<ExprId>& s) -> uint32_t {
    auto it = gid_of.find(s);
    if (it != gid_of.end()) return it->second;
    uint32_t g = uint32_t(guards.size());
    guards.push_back(GuardInfo{s, 0});
    provider.push_back(UINT32_MAX);
    gid_of.emplace(s, g);
    if (s.size() == 1) {
      provider[g] = unit_of.at(s[0]);
    } else {
      std::vector<ExprId> prefix(s.begin(), s.end() - 1);
      uint32_t pg = self(self, prefix);
      Unit u;
      u.is_and = true;
      u.and_gid = g;
      u.gid = pg;
      u.ops = {provider[pg], unit_of.at(s.back())};
      provider[g] = uint32_t(units.size());
      units.push_back(std::move(u));
    }
    return g;
  };

  // Register pair guards first (output order), then node guards (topo order)
  // so guard ids are deterministic.
  std::vector<std::vector<uint32_t>> pair_gid(outs.size());
  for (size_t oi = 0; oi < outs.size(); ++oi)
    for (const ConditionedPair& p : outs[oi].pairs)
      pair_gid[oi].push_back(ensure_gid(ensure_gid, p.conds));
  for (ExprId id : topo) units[unit_of.at(id)].gid = ensure_gid(ensure_gid, cond.at(id).set);

  // Operand edges: expression children, plus the guard value each guarded
  // unit reads (and-units already list their prefix value as an operand).
  for (ExprId id : topo) {
    Unit& u = units[unit_of.at(id)];
    for (ExprId k : a.at(id).kids) u.ops.push_back(unit_of.at(k));
  }
  for (Unit& u : units)
    if (!u.is_and && u.gid != 0) u.ops.push_back(provider[u.gid]);

  // Units the outputs read at the very end.
  std::vector<uint32_t> live_out;
  for (size_t oi = 0; oi < outs.size(); ++oi)
    for (size_t pi = 0; pi < outs[oi].pairs.size(); ++pi) {
      live_out.push_back(unit_of.at(outs[oi].pairs[pi].root));
      uint32_t g = pair_gid[oi][pi];
      if (g != 0) live_out.push_back(provider[g]);
    }

  // ---- 5. backward greedy list scheduling --------------------------------
  size_t nu = units.size();
  std::vector<uint32_t> users_left(nu, 0);
  for (const Unit& u : units)
    for (uint32_t op : u.ops) users_left[op]++;
  std::vector<char> live(nu, 0);
  for (uint32_t idx : live_out) live[idx] = 1;

  struct Ready {
    uint32_t unit;
    uint64_t tick;
  };
  std::vector<Ready> ready;
  uint64_t tick = 0;
  for (uint32_t i = 0; i < nu; ++i)
    if (users_left[i] == 0) ready.push_back({i, tick++});

  auto distinct_ops = [&](uint32_t ui) {
    std::vector<uint32_t> d = units[ui].ops;
    std::sort(d.begin(), d.end());
    d.erase(std::unique(d.begin(), d.end()), d.end());
    return d;
  };
  auto live_delta = [&](uint32_t ui) {
    int delta = live[ui] ? -1 : 0;
    for (uint32_t op : distinct_ops(ui))
      if (!live[op]) delta++;
    return delta;
  };

  std::vector<uint32_t> rev;
  rev.reserve(nu);
  uint32_t last_gid = UINT32_MAX;
  while (!ready.empty()) {
    size_t bi = 0;
    for (size_t i = 1; i < ready.size(); ++i) {
      const Ready& x = ready[i];
      const Ready& b = ready[bi];
      bool xg = units[x.unit].gid == last_gid;
      bool bg = units[b.unit].gid == last_gid;
      if (xg != bg) {
        if (xg) bi = i;
        continue;
      }
      int xd = live_delta(x.unit), bd = live_delta(b.unit);
      if (xd != bd) {
        if (xd < bd) bi = i;
        continue;
      }
      if (x.tick != b.tick) {
        if (x.tick < b.tick) bi = i;
        continue;
      }
      if (x.unit < b.unit) bi = i;
    }
    uint32_t u = ready[bi].unit;
    ready[bi] = ready.back();
    ready.pop_back();
    rev.push_back(u);
    last_gid = units[u].gid;
    live[u] = 0;
    for (uint32_t op : distinct_ops(u)) live[op] = 1;
    for (uint32_t op : units[u].ops)
      if (--users_left[op] == 0) ready.push_back({op, tick++});
  }
  check(rev.size() == nu, Err::kCyclicIR, "list scheduling did not converge");
  std::vector<uint32_t> order(rev.rbegin(), rev.rend());

  // ---- 6. instruction emission (SSA) --------------------------------------
  KernelProgram prog;
  std::vector<uint32_t> ssa_gid;             // defining guard per SSA value
  std::vector<uint32_t> ssa_def;             // defining instruction per SSA
  std::vector<ExprId> sel_cond;              // per instr: select condition or kNoExpr
  std::vector<uint32_t> unit_ssa(nu, UINT32_MAX);
  auto fresh = [&](uint32_t gid) {
    check(ssa_gid.size() < 65535, Err::kInternal, "kernel exceeds 65535 values");
    ssa_gid.push_back(gid);
    ssa_def.push_back(uint32_t(prog.instrs.size()));
    return uint32_t(ssa_gid.size() - 1);
  };
  auto emit = [&](Instr in, uint32_t gid) {
    uint32_t s = fresh(gid);
    in.gid = gid;
    in.dst = uint16_t(s);
    prog.instrs.push_back(in);
    sel_cond.push_back(kNoExpr);
    return s;
  };
  auto kid_ssa = [&](ExprId k) { return unit_ssa[unit_of.at(k)]; };

  for (uint32_t ui : order) {
    const Unit& u = units[ui];
    if (u.is_and) {
      Instr in;
      in.op = Op::kAnd;
      in.a = uint16_t(unit_ssa[u.ops[0]]);
      in.b = uint16_t(unit_ssa[u.ops[1]]);
      unit_ssa[ui] = emit(in, u.gid);
      continue;
    }
    const ExprNode& n = a.at(u.expr);
    uint32_t g = u.gid;
    Instr in;
    switch (n.kind) {
      case ExprKind::kConst:
        in.op = Op::kImm;
        in.imm = n.cval;
        unit_ssa[ui] = emit(in, g);
        break;
      case ExprKind::kParam:
        in.op = Op::kParam;
        in.field = n.field;
        unit_ssa[ui] = emit(in, g);
        break;
      case ExprKind::kIndex:
        in.op = Op::kIndex;
        in.field = n.field;
        unit_ssa[ui] = emit(in, g);
        break;
      case ExprKind::kUnknown:
      case ExprKind::kArray:
      case ExprKind::kComputed:
      case ExprKind::kP:
        in.op = n.kind == ExprKind::kUnknown  ? Op::kLoadU
                : n.kind == ExprKind::kArray  ? Op::kLoadA
                : n.kind == ExprKind::kComputed ? Op::kLoadC
                                                : Op::kLoadP;
        in.field = n.field;
        in.channel = n.channel;
        in.acc = n.acc;
        unit_ssa[ui] = emit(in, g);
        break;
      case ExprKind::kInBounds:
        in.op = Op::kInB;
        in.acc = n.acc;
        unit_ssa[ui] = emit(in, g);
        break;
      case ExprKind::kSum:
      case ExprKind::kProduct:
      case ExprKind::kBool: {
        if (n.kind == ExprKind::kBool && BoolFn(n.sub) == BoolFn::kNot) {
          in.op = Op::kNot;
          in.a = uint16_t(kid_ssa(n.kids[0]));
          unit_ssa[ui] = emit(in, g);
          break;
        }
        Op op = n.kind == ExprKind::kSum     ? Op::kAdd
                : n.kind == ExprKind::kProduct ? Op::kMul
                : BoolFn(n.sub) == BoolFn::kAnd ? Op::kAnd
                                                : Op::kOr;
        check(n.kids.size() >= 2, Err::kInternal, "n-ary node with < 2 children");
        uint32_t cur = kid_ssa(n.kids[0]);
        for (size_t i = 1; i < n.kids.size(); ++i) {
          Instr step;
          step.op = op;
          step.a = uint16_t(cur);
          step.b = uint16_t(kid_ssa(n.kids[i]));
          cur = emit(step, g);
        }
        unit_ssa[ui] = cur;
        break;
      }
      case ExprKind::kPow:
        in.op = Op::kPow;
        in.a = uint16_t(kid_ssa(n.kids[0]));
        in.pnum = n.expo.num;
        in.pden = n.expo.den;
        unit_ssa[ui] = emit(in, g);
        break;
      case ExprKind::kUnary:
        in.op = Op::kUn;
        in.sub = n.sub;
        in.a = uint16_t(kid_ssa(n.kids[0]));
        unit_ssa[ui] = emit(in, g);
        break;
      case ExprKind::kCompare:
        in.op = Op::kCmp;
        in.sub = n.sub;
        in.a = uint16_t(kid_ssa(n.kids[0]));
        in.b = uint16_t(kid_ssa(n.kids[1]));
        unit_ssa[ui] = emit(in, g);
        break;
      case ExprKind::kSelect:
        in.op = Op::kSel;
        in.a = uint16_t(kid_ssa(n.kids[0]));
        in.b = uint16_t(kid_ssa(n.kids[1]));
        in.c = uint16_t(kid_ssa(n.kids[2]));
        unit_ssa[ui] = emit(in, g);
        sel_cond.back() = n.kids[0];
        break;
    }
  }

  // ---- 7. static guard availability check --------------------------------
  // Every operand must be defined earlier, by an instruction whose guard set
  // is implied by the consumer's guard.  The one sanctioned exception: a
  // select's then-operand may additionally require the select's own
  // condition, because the read is masked — when the condition is false the
  // operand register is reserved but its (deterministic) content is ignored.
  {
    auto implied = [&](const std::vector<ExprId>& use, uint32_t def_gid) {
      const std::vector<ExprId>& d = guards[def_gid].conds;
      return std::includes(use.begin(), use.end(), d.begin(), d.end(), less);
    };
    for (uint32_t i = 0; i < prog.instrs.size(); ++i) {
      const Instr& in = prog.instrs[i];
      uint16_t oprs[3] = {in.a, in.b, in.c};
      for (int k = 0; k < sched_detail::operand_count(in.op); ++k) {
        uint32_t s = oprs[k];
        check(ssa_def[s] < i, Err::kInternal, "operand defined after use");
        std::vector<ExprId> use = guards[in.gid].conds;
        if (in.op == Op::kSel && k == 1)
          use = sched_detail::cond_union(a, std::move(use), sel_cond[i]);
        check(implied(use, ssa_gid[s]), Err::kInternal,
              "operand guard not implied by consumer guard");
      }
      if (in.gid != 0) {
        uint32_t ps = unit_ssa[provider[in.gid]];
        check(ssa_def[ps] < i, Err::kInternal, "guard value defined after use");
        // A guard's value may itself be guarded, but only by a subset of its
        // own conditions: then a skipped computation leaves 0 in the register
        // exactly when the conjunction is false anyway.
        check(implied(guards[in.gid].conds, ssa_gid[ps]), Err::kInternal,
              "guard value not self-gating");
      }
    }
  }

  // ---- 8. blocks ----------------------------------------------------------
  for (uint32_t i = 0; i < prog.instrs.size(); ++i) {
    if (prog.blocks.empty() || prog.blocks.back().gid != prog.instrs[i].gid) {
      prog.blocks.push_back(Block{prog.instrs[i].gid, i, i + 1});
    } else {
      prog.blocks.back().end = i + 1;
    }
  }

  // ---- 9. linear-scan register allocation --------------------------------
  const uint32_t kEnd = UINT32_MAX;
  std::vector<uint32_t> last_use(ssa_gid.size(), 0);
  auto use_at = [&](uint32_t s, uint32_t i) {
    last_use[s] = std::max(last_use[s], i);
  };
  for (uint32_t i = 0; i < prog.instrs.size(); ++i) {
    const Instr& in = prog.instrs[i];
    uint16_t oprs[3] = {in.a, in.b, in.c};
    for (int k = 0; k < sched_detail::operand_count(in.op); ++k) use_at(oprs[k], i);
    if (in.gid != 0) use_at(unit_ssa[provider[in.gid]], i);  // block guard read
  }
  for (size_t oi = 0; oi < outs.size(); ++oi)
    for (size_t pi = 0; pi < outs[oi].pairs.size(); ++pi) {
      use_at(unit_ssa[unit_of.at(outs[oi].pairs[pi].root)], kEnd);
      uint32_t g = pair_gid[oi][pi];
      if (g != 0) use_at(unit_ssa[provider[g]], kEnd);
    }

  // Guard values are control: blocks and outputs read them in states where
  // their defining instruction was legitimately skipped, relying on the
  // zero-initialized register reading as "false".  That only holds if no
  // other value ever writes the same register, so guard registers are pinned
  // — one exclusive register per guard value, excluded from reuse.
  std::vector<uint16_t> phys(ssa_gid.size(), 0);
  std::vector<char> pinned(ssa_gid.size(), 0);
  uint16_t next_reg = 0;
  for (uint32_t g = 1; g < guards.size(); ++g) {
    uint32_t s = unit_ssa[provider[g]];
    if (!pinned[s]) {
      pinned[s] = 1;
      phys[s] = next_reg++;
    }
  }
  std::priority_queue<std::pair<uint32_t, uint16_t>,
                      std::vector<std::pair<uint32_t, uint16_t>>,
                      std::greater<>>
      active;  // (interval end, register)
  std::vector<uint16_t> free_regs;  // kept sorted descending; lowest reused first
  auto alloc = [&](uint32_t at) -> uint16_t {
    while (!active.empty() && active.top().first <= at) {
      uint16_t r = active.top().second;
      active.pop();
      free_regs.insert(std::upper_bound(free_regs.begin(), free_regs.end(), r,
                                        std::greater<>()),
                       r);
    }
    if (!free_regs.empty()) {
      uint16_t r = free_regs.back();
      free_regs.pop_back();
      return r;
    }
    return next_reg++;
  };
  {
    uint32_t ssa = 0;
    for (uint32_t i = 0; i < prog.instrs.size(); ++i) {
      Instr& in = prog.instrs[i];
      uint16_t oprs[3] = {in.a, in.b, in.c};
      int nops = sched_detail::operand_count(in.op);
      if (nops > 0) in.a = phys[oprs[0]];
      if (nops > 1) in.b = phys[oprs[1]];
      if (nops > 2) in.c = phys[oprs[2]];
      // Each instruction defines exactly one SSA value, in emission order.
      if (!pinned[ssa]) {
        uint16_t r = alloc(i);
        phys[ssa] = r;
        active.emplace(last_use[ssa], r);
        in.dst = r;
      } else {
        in.dst = phys[ssa];
      }
      ++ssa;
    }
  }
  prog.num_regs = next_reg;

  for (uint32_t g = 1; g < guards.size(); ++g)
    guards[g].reg = phys[unit_ssa[provider[g]]];
  prog.guards = std::move(guards);

  prog.outputs.resize(outs.size());
  for (size_t oi = 0; oi < outs.size(); ++oi)
    for (size_t pi = 0; pi < outs[oi].pairs.size(); ++pi)
      prog.outputs[oi].roots.emplace_back(
          pair_gid[oi][pi], phys[unit_ssa[unit_of.at(outs[oi].pairs[pi].root)]]);

  return prog;
}

inline KernelProgram schedule(ExprArena& a, const ConditionedIR& cir,
                              std::vector<ConditionedIR>* normalized_out = nullptr) {
  return schedule(a, std::vector<ConditionedIR>{cir}, normalized_out);
}

}  // namespace minopt
