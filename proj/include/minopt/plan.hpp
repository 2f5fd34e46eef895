#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "minopt/exec.hpp"
#include "minopt/schedule.hpp"
#include "minopt/transform.hpp"

namespace minopt {

enum class Method : uint8_t { kGaussNewton, kLevenbergMarquardt };
enum class Precision : uint8_t { kF32, kF64 };
enum class Materialize : uint8_t { kNone, kJ, kJtJ };

struct SolveConfig {
  Method method = Method::kGaussNewton;
  Precision precision = Precision::kF64;
  int nonlinear_iters = 8;
  int linear_iters = 100;
  double pcg_rel_tol = -1.0;  // negative: pick 1e-8 (f64) / 1e-4 (f32)
  double pcg_abs_tol = 0.0;
  bool use_preconditioner = true;
  Materialize materialize = Materialize::kNone;
  ExecMode exec = ExecMode::kSequential;
  // Trust-region control (Levenberg-Marquardt only).
  double lm_radius0 = 1e4;
  double lm_radius_min = 1e-32;
  double lm_radius_max = 1e16;
  double lm_diag_min = 1e-6;
  double lm_diag_max = 1e32;
  double lm_min_decrease = 1e-3;  // step-quality acceptance threshold
  double cost_stop_tol = 0.0;     // stop when relative cost decrease falls below
  bool force_evalj = false;       // compile Jacobian kernels even in matrix-free mode
};

// Iteration extents of one grid domain, fixed at plan time.
struct DomainInfo {
  std::array<int64_t, 3> shape{1, 1, 1};
  int nd = 1;
  int64_t extent = 0;
};

// One materialized-Jacobian value lane: program output `out` carries the
// partial whose column is determined by (field, channel) plus either a
// stencil offset (grid rows) or an edge slot (graph rows).
struct JLane {
  int out = 0;
  int field = 0;
  int channel = 0;
  std::array<int16_t, 3> off{0, 0, 0};
  int slot = -1;
};

// Kernels iterating one grid domain's residual templates.
struct GridKernels {
  GridDomain domain;
  DomainInfo info;
  std::vector<int> templates;  // indices into TransformedProblem::residuals
  KernelProgram cost;          // one output: sum of squared residuals per element
  KernelProgram evalf;         // one output per template: residual value
  KernelProgram evalj;         // compiled when the plan materializes J
  struct JTemplate {
    int tmpl = 0;
    int guard_out = 0;         // boundary-guard lane; 0 means the row is absent
    std::vector<JLane> lanes;  // column-sorted for every element (see plan())
  };
  std::vector<JTemplate> jtemplates;
};

// Normal-equation gathers for all unknown channels living on one grid domain.
struct GatherKernels {
  GridDomain domain;
  DomainInfo info;
  struct Chan {
    int field = 0;
    int channel = 0;
  };
  std::vector<Chan> chans;
  KernelProgram bm;   // outputs 2k / 2k+1: right-hand side and Jacobi diagonal of chans[k]
  KernelProgram jtj;  // output k: matrix-free normal-matrix apply of chans[k]
};

// Kernels iterating one hyperedge set's residual templates; normal-equation
// contributions scatter through edge slots into vertex-indexed vectors.
struct GraphKernels {
  int graph = -1;
  std::vector<int> templates;
  KernelProgram cost;   // one per-edge output: sum of squared residuals
  KernelProgram evalf;  // one per-edge output per template
  struct Scat {
    int slot = 0;
    int field = 0;
    int channel = 0;
  };
  std::vector<Scat> scats;  // one per (template, partial), flattened
  KernelProgram bm;         // outputs 2k / 2k+1 scatter b and m through scats[k]
  KernelProgram jtj;        // output k scatters the normal-matrix apply through scats[k]
  KernelProgram evalj;      // per-edge writes of raw partials
  struct JTemplate {
    int tmpl = 0;
    std::vector<JLane> lanes;
  };
  std::vector<JTemplate> jtemplates;
};

struct ComputedKernels {
  int index = 0;  // which ProblemSpec::computed entry
  DomainInfo info;
  KernelProgram prog;  // outputs: value channels, then cached partial channels
};

struct ExcludeKernels {
  GridDomain domain;
  DomainInfo info;
  KernelProgram prog;  // one output: 1 where the element's unknowns are frozen
};

// Everything solve() needs, compiled once: the spec (owning the expression
// arena every program references by metadata), kernel programs, and the
// unknown-vector column layout col = ubase[field] + element*channels + channel.
struct CompiledPlan {
  ProblemSpec spec;
  SolveConfig cfg;
  TransformedProblem transformed;
  std::vector<int64_t> ubase;
  int64_t num_cols = 0;
  std::vector<GridKernels> grid_sets;
  std::vector<GatherKernels> gather_sets;
  std::vector<GraphKernels> graph_sets;
  std::vector<ComputedKernels> computed_kernels;
  std::vector<ExcludeKernels> exclude_kernels;
  bool has_evalj = false;
};

namespace plan_detail {

inline DomainInfo domain_info(const ProblemSpec& spec, const GridDomain& d) {
  DomainInfo di;
  di.shape = spec.shape_of(d);
  di.nd = int(d.dims.size());
  di.extent = spec.extent_of(d);
  return di;
}

// Computed arrays may read only earlier-declared computed arrays; anything
// else would need values that are not stored yet when the kernel runs.
inline void check_computed_order(const ProblemSpec& spec) {
  for (size_t i = 0; i < spec.computed.size(); ++i) {
    std::vector<ExprId> roots;
    for (ExprId v : spec.computed[i].value) roots.push_back(v);
    for (const ComputedPartial& p : spec.computed[i].partials) roots.push_back(p.expr);
    std::vector<ExprId> stack(roots);
    std::vector<char> seen(spec.arena.size(), 0);
    while (!stack.empty()) {
      ExprId id = stack.back();
      stack.pop_back();
      if (seen[size_t(id)]) continue;
      seen[size_t(id)] = 1;
      const ExprNode& n = spec.arena.at(id);
      check(!(n.kind == ExprKind::kComputed && size_t(n.field) >= i),
            Err::kCyclicComputedArray,
            "computed '" + spec.computed[i].name + "' depends on itself or a later array");
      for (ExprId k : n.kids) stack.push_back(k);
    }
  }
}

inline KernelProgram compile(ExprArena& a, const std::vector<ExprId>& outputs) {
  std::vector<ConditionedIR> cirs;
  cirs.reserve(outputs.size());
  for (ExprId e : outputs) cirs.push_back(lower_conditions(a, e));
  return schedule(a, std::move(cirs));
}

inline ExprId sum_of_squares(ExprArena& a, const TransformedProblem& tp,
                             const std::vector<int>& templates) {
  std::vector<ExprId> sq;
  sq.reserve(templates.size());
  for (int t : templates) sq.push_back(a.pow(tp.residuals[size_t(t)].residual, Rat{2, 1}));
  return a.sum(std::move(sq));
}

}  // namespace plan_detail

inline CompiledPlan plan(ProblemSpec spec_in, SolveConfig cfg) {
  check(cfg.nonlinear_iters >= 1, Err::kBindError, "nonlinear iteration count must be >= 1");
  check(cfg.linear_iters >= 1, Err::kBindError, "linear iteration count must be >= 1");
  if (cfg.pcg_rel_tol < 0)
    cfg.pcg_rel_tol = cfg.precision == Precision::kF32 ? 1e-4 : 1e-8;
  check(cfg.pcg_abs_tol >= 0 && cfg.cost_stop_tol >= 0, Err::kBindError,
        "tolerances must be non-negative");
  check(cfg.lm_radius_min <= cfg.lm_radius0 && cfg.lm_radius0 <= cfg.lm_radius_max,
        Err::kBindError, "trust-region radius bounds must bracket the initial radius");
  check(cfg.lm_diag_min <= cfg.lm_diag_max && cfg.lm_diag_min >= 0, Err::kBindError,
        "damping diagonal clamp must be an interval");

  CompiledPlan P;
  P.spec = std::move(spec_in);
  P.cfg = cfg;
  ProblemSpec& spec = P.spec;
  ExprArena& a = spec.arena;

  plan_detail::check_computed_order(spec);
  P.transformed = transform(spec);
  P.has_evalj = cfg.materialize != Materialize::kNone || cfg.force_evalj;
  const bool need_gather_jtj = cfg.materialize == Materialize::kNone;

  P.ubase.resize(spec.unknowns.size());
  int64_t col = 0;
  for (size_t f = 0; f < spec.unknowns.size(); ++f) {
    P.ubase[f] = col;
    col += spec.extent_of(spec.unknowns[f].domain) * spec.unknowns[f].channels;
  }
  P.num_cols = col;

  // ---- grid template sets, fused per iteration domain ----------------------
  for (size_t t = 0; t < P.transformed.residuals.size(); ++t) {
    const ResidualTerm& rt = P.transformed.residuals[t];
    if (rt.kind != DomainKind::kGrid) continue;
    GridKernels* set = nullptr;
    for (GridKernels& g : P.grid_sets)
      if (g.domain == rt.domain) set = &g;
    if (!set) {
      P.grid_sets.push_back({});
      set = &P.grid_sets.back();
      set->domain = rt.domain;
      set->info = plan_detail::domain_info(spec, rt.domain);
    }
    set->templates.push_back(int(t));
  }
  for (GridKernels& g : P.grid_sets) {
    g.cost = plan_detail::compile(a, {plan_detail::sum_of_squares(a, P.transformed, g.templates)});
    std::vector<ExprId> fouts;
    for (int t : g.templates) fouts.push_back(P.transformed.residuals[size_t(t)].residual);
    g.evalf = plan_detail::compile(a, fouts);

    if (P.has_evalj) {
      std::vector<ExprId> jouts;
      for (int t : g.templates) {
        const ResidualTerm& rt = P.transformed.residuals[size_t(t)];
        GridKernels::JTemplate jt;
        jt.tmpl = t;
        jt.guard_out = int(jouts.size());
        jouts.push_back(rt.bound_guard);
        // Lanes ordered by (field, offset, channel): with the column layout
        // col = ubase + lin(pix+off)*C + ch this makes every row's columns
        // ascend without a per-element sort.
        std::vector<const ResidualTerm::Partial*> ps;
        for (const ResidualTerm::Partial& p : rt.partials) ps.push_back(&p);
        std::sort(ps.begin(), ps.end(), [](const auto* x, const auto* y) {
          return std::tie(x->field, x->acc.off, x->channel) <
                 std::tie(y->field, y->acc.off, y->channel);
        });
        for (const ResidualTerm::Partial* p : ps) {
          jt.lanes.push_back({int(jouts.size()), p->field, p->channel, p->acc.off, -1});
          jouts.push_back(p->d);
        }
        g.jtemplates.push_back(std::move(jt));
      }
      g.evalj = plan_detail::compile(a, jouts);
    }
  }

  // ---- normal-equation gathers, fused per unknown domain -------------------
  for (size_t k = 0; k < P.transformed.gather.size(); ++k) {
    const GatherKernel& gk = P.transformed.gather[k];
    const GridDomain& dom = spec.unknowns[size_t(gk.field)].domain;
    GatherKernels* set = nullptr;
    for (GatherKernels& g : P.gather_sets)
      if (g.domain == dom) set = &g;
    if (!set) {
      P.gather_sets.push_back({});
      set = &P.gather_sets.back();
      set->domain = dom;
      set->info = plan_detail::domain_info(spec, dom);
    }
    set->chans.push_back({gk.field, gk.channel});
  }
  for (GatherKernels& g : P.gather_sets) {
    std::vector<ExprId> bm, jtj;
    for (const GatherKernels::Chan& c : g.chans) {
      const GatherKernel* gk = nullptr;
      for (const GatherKernel& cand : P.transformed.gather)
        if (cand.field == c.field && cand.channel == c.channel) gk = &cand;
      bm.push_back(gk->b);
      bm.push_back(gk->m);
      jtj.push_back(gk->jtj);
    }
    g.bm = plan_detail::compile(a, bm);
    if (need_gather_jtj) g.jtj = plan_detail::compile(a, jtj);
  }

  // ---- graph template sets, fused per hyperedge set -------------------------
  for (size_t t = 0; t < P.transformed.residuals.size(); ++t) {
    const ResidualTerm& rt = P.transformed.residuals[t];
    if (rt.kind != DomainKind::kGraph) continue;
    GraphKernels* set = nullptr;
    for (GraphKernels& g : P.graph_sets)
      if (g.graph == rt.graph) set = &g;
    if (!set) {
      P.graph_sets.push_back({});
      set = &P.graph_sets.back();
      set->graph = rt.graph;
    }
    set->templates.push_back(int(t));
  }
  for (GraphKernels& g : P.graph_sets) {
    g.cost = plan_detail::compile(a, {plan_detail::sum_of_squares(a, P.transformed, g.templates)});
    std::vector<ExprId> fouts;
    for (int t : g.templates) fouts.push_back(P.transformed.residuals[size_t(t)].residual);
    g.evalf = plan_detail::compile(a, fouts);

    // Scatter contributions: the per-edge chain-rule pieces of b, m, and the
    // normal-matrix apply, routed through the edge slot each partial reads.
    std::vector<ExprId> bm, jtj, jouts;
    for (int t : g.templates) {
      const ResidualTerm& rt = P.transformed.residuals[size_t(t)];
      GraphKernels::JTemplate jt;
      jt.tmpl = t;
      for (const ResidualTerm::Partial& p : rt.partials) {
        check(p.acc.graph, Err::kInternal, "graph residual with a stencil unknown access");
        g.scats.push_back({p.acc.slot, p.field, p.channel});
        bm.push_back(a.mul2(a.constant(-2), a.mul2(p.d, rt.residual)));
        bm.push_back(a.mul2(a.constant(2), a.mul2(p.d, p.d)));
        jtj.push_back(a.mul2(a.constant(2), a.mul2(p.d, rt.jp)));
        if (P.has_evalj) {
          jt.lanes.push_back({int(jouts.size()), p.field, p.channel, {0, 0, 0}, p.acc.slot});
          jouts.push_back(p.d);
        }
      }
      if (P.has_evalj) g.jtemplates.push_back(std::move(jt));
    }
    g.bm = plan_detail::compile(a, bm);
    if (need_gather_jtj) g.jtj = plan_detail::compile(a, jtj);
    if (P.has_evalj) g.evalj = plan_detail::compile(a, jouts);
  }

  // ---- computed arrays, declaration order -----------------------------------
  for (size_t i = 0; i < spec.computed.size(); ++i) {
    const ComputedArray& ca = spec.computed[i];
    ComputedKernels ck;
    ck.index = int(i);
    ck.info = plan_detail::domain_info(spec, ca.domain);
    std::vector<ExprId> outs(ca.value);
    for (const ComputedPartial& p : ca.partials) outs.push_back(p.expr);
    ck.prog = plan_detail::compile(a, outs);
    P.computed_kernels.push_back(std::move(ck));
  }

  // ---- exclusion predicates, OR-merged per domain ---------------------------
  for (const ExcludeRule& rule : spec.excludes) {
    ExcludeKernels* set = nullptr;
    for (ExcludeKernels& e : P.exclude_kernels)
      if (e.domain == rule.domain) set = &e;
    if (!set) {
      P.exclude_kernels.push_back({});
      set = &P.exclude_kernels.back();
      set->domain = rule.domain;
      set->info = plan_detail::domain_info(spec, rule.domain);
    }
  }
  for (ExcludeKernels& e : P.exclude_kernels) {
    std::vector<ExprId> preds;
    for (const ExcludeRule& rule : spec.excludes)
      if (rule.domain == e.domain) preds.push_back(rule.predicate);
    ExprId merged = preds.size() == 1 ? preds[0] : a.logical(BoolFn::kOr, std::move(preds));
    e.prog = plan_detail::compile(a, {merged});
  }

  return P;
}

}  // namespace minopt
