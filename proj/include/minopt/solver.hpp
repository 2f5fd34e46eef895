#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "minopt/pcg.hpp"
#include "minopt/plan.hpp"
#include "minopt/sparse.hpp"

namespace minopt {

// Everything a solve reads or writes at runtime. The caller owns it;
// per-iteration callbacks may mutate arrays, params, and graphs between
// nonlinear iterations (the solver revalidates and refreshes on its own).
template <class Real>
struct SolveData {
  std::vector<Real> x;                       // unknown scalars, plan column layout
  std::vector<std::vector<Real>> arrays;     // one per declared constant array
  std::vector<double> params;
  std::vector<EdgeTable> graphs;             // one per declared hyperedge set
};

struct IterRow {
  int iter = 0;
  double cost = 0;     // energy after this trial step (frozen computed arrays)
  bool accepted = true;
  double radius = 0;   // trust-region radius used for the trial; 0 under GN
  int pcg_iters = 0;
  double wall_ms = 0;
};

enum class StopReason : uint8_t {
  kIterLimit,      // ran the configured nonlinear iterations
  kCostTol,        // relative cost decrease fell below cost_stop_tol
  kStalled,        // LM could not find an acceptable step (zero gradient, or
                   // rejections drove the radius below its minimum)
  kNonFiniteCost,  // energy or linear solve became NaN/Inf
};

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::kIterLimit: return "iteration_limit";
    case StopReason::kCostTol: return "cost_tolerance";
    case StopReason::kStalled: return "stalled";
    case StopReason::kNonFiniteCost: return "nonfinite_cost";
  }
  return "?";
}

struct SolveResult {
  double final_cost = 0;
  StopReason reason = StopReason::kIterLimit;
  std::vector<IterRow> trace;
  bool nonfinite_kernels = false;  // some kernel emitted NaN/Inf at some point
  bool indefinite_operator = false;
  int64_t unconstrained = 0;  // unknowns no residual depends on (diagnostic)

  std::string trace_csv() const {
    std::ostringstream os;
    os << "iter,cost,accepted,radius,pcg_iters,wall_ms\n";
    for (const IterRow& r : trace)
      os << r.iter << ',' << std::setprecision(17) << r.cost << ',' << int(r.accepted) << ','
         << r.radius << ',' << r.pcg_iters << ',' << r.wall_ms << '\n';
    return os.str();
  }
};

// One optimization instance: a compiled plan bound to caller data. Owns all
// solver vectors and scratch, allocated up front so the iteration loop does
// not allocate. The generated routines (cost, residuals, normal-equation
// build, matrix-free normal apply, Jacobian materialization) are public so
// oracle tests and the comparison driver can call them directly.
template <class Real>
class Solver {
 public:
  Solver(const CompiledPlan& plan, SolveData<Real>& data) : plan_(plan), data_(data) {
    const ProblemSpec& spec = plan_.spec;
    computed_.resize(spec.computed.size());
    for (size_t i = 0; i < spec.computed.size(); ++i)
      computed_[i].resize(size_t(spec.extent_of(spec.computed[i].domain)) *
                          size_t(spec.computed[i].total_channels()));
    masks_.resize(plan_.exclude_kernels.size());
    maskval_.resize(plan_.exclude_kernels.size());
    for (size_t i = 0; i < plan_.exclude_kernels.size(); ++i) {
      masks_[i].resize(size_t(plan_.exclude_kernels[i].info.extent));
      maskval_[i].resize(size_t(plan_.exclude_kernels[i].info.extent));
    }
    excluded_.resize(size_t(plan_.num_cols), 0);
    gridcost_.resize(plan_.grid_sets.size());
    for (size_t i = 0; i < plan_.grid_sets.size(); ++i)
      gridcost_[i].resize(size_t(plan_.grid_sets[i].info.extent));
    graphcost_.resize(plan_.graph_sets.size());
    const size_t n = size_t(plan_.num_cols);
    b_.resize(n);
    m_.resize(n);
    md_.resize(n);
    damp_.assign(n, Real(0));
    delta_.resize(n);
    xtrial_.resize(n);
    aptmp_.resize(n);
    base_diag_.resize(n);
    jlanes_grid_.resize(plan_.grid_sets.size());
    jlanes_graph_.resize(plan_.graph_sets.size());
    refresh();
  }

  int64_t num_cols() const { return plan_.num_cols; }
  int64_t num_rows() const { return rows_; }
  std::span<const uint8_t> excluded() const { return excluded_; }
  std::span<const Real> rhs() const { return b_; }
  std::span<const Real> precond() const { return m_; }
  bool saw_nonfinite_kernel() const { return nonfinite_seen_; }

  // Revalidate the bound data and rebuild everything derived from it:
  // computed-array storage, exclusion masks, and residual row offsets. Called
  // at the top of every nonlinear iteration so callback mutations take effect.
  void refresh() {
    validate();
    const ProblemSpec& spec = plan_.spec;
    for (const ComputedKernels& ck : plan_.computed_kernels) {
      const ComputedArray& ca = spec.computed[size_t(ck.index)];
      std::vector<OutputBinding<Real>> outs;
      const int tc = ca.total_channels();
      for (int c = 0; c < tc; ++c)
        outs.push_back({computed_[size_t(ck.index)].data(), c, tc, ck.info.extent, -1});
      note(exec_grid<Real>(ck.prog, pass_env(data_.x.data(), ck.info), outs, nullptr,
                           plan_.cfg.exec));
    }
    for (size_t i = 0; i < plan_.exclude_kernels.size(); ++i) {
      const ExcludeKernels& ek = plan_.exclude_kernels[i];
      std::vector<OutputBinding<Real>> outs{
          {maskval_[i].data(), 0, 1, ek.info.extent, -1}};
      note(exec_grid<Real>(ek.prog, pass_env(data_.x.data(), ek.info), outs, nullptr,
                           plan_.cfg.exec));
      for (size_t e = 0; e < masks_[i].size(); ++e)
        masks_[i][e] = maskval_[i][e] != Real(0) ? 1 : 0;
    }
    std::fill(excluded_.begin(), excluded_.end(), uint8_t(0));
    for (size_t i = 0; i < plan_.exclude_kernels.size(); ++i) {
      const GridDomain& dom = plan_.exclude_kernels[i].domain;
      for (size_t f = 0; f < spec.unknowns.size(); ++f) {
        if (!(spec.unknowns[f].domain == dom)) continue;
        const int ch = spec.unknowns[f].channels;
        for (size_t e = 0; e < masks_[i].size(); ++e)
          if (masks_[i][e])
            for (int c = 0; c < ch; ++c)
              excluded_[size_t(plan_.ubase[f]) + e * size_t(ch) + size_t(c)] = 1;
      }
    }
    rowbase_.assign(plan_.transformed.residuals.size(), 0);
    int64_t row = 0;
    for (size_t t = 0; t < plan_.transformed.residuals.size(); ++t) {
      rowbase_[t] = row;
      row += instances(int(t));
    }
    rows_ = row;
    for (size_t i = 0; i < plan_.graph_sets.size(); ++i)
      graphcost_[i].resize(size_t(data_.graphs[size_t(plan_.graph_sets[i].graph)].size()));
    jvalid_ = false;
  }

  // Total energy at the bound unknowns under the current frozen computed
  // arrays. Per-element contributions are written disjointly and then summed
  // sequentially in element order, so the value is bitwise reproducible for
  // any thread count (grid and per-edge outputs are write-disjoint).
  double cost() { return cost_at(data_.x.data()); }

  double cost_at(const Real* x) {
    Real total = Real(0);
    for (size_t i = 0; i < plan_.grid_sets.size(); ++i) {
      const GridKernels& g = plan_.grid_sets[i];
      std::vector<OutputBinding<Real>> outs{{gridcost_[i].data(), 0, 1, g.info.extent, -1}};
      note(exec_grid<Real>(g.cost, pass_env(x, g.info), outs, nullptr, plan_.cfg.exec));
      for (Real v : gridcost_[i]) total += v;
    }
    for (size_t i = 0; i < plan_.graph_sets.size(); ++i) {
      const GraphKernels& g = plan_.graph_sets[i];
      const EdgeTable& edges = data_.graphs[size_t(g.graph)];
      std::vector<OutputBinding<Real>> outs{
          {graphcost_[i].data(), 0, 1, edges.size(), -1}};
      note(exec_graph<Real>(g.cost, pass_env(x, {}), edges, outs, plan_.cfg.exec));
      for (Real v : graphcost_[i]) total += v;
    }
    return double(total);
  }

  // Residual vector in template-major row order (row = rowbase[t] + element).
  void residuals(std::span<Real> f) {
    check(int64_t(f.size()) == rows_, Err::kShapeMismatch,
          "residual vector size does not match the instance count");
    for (const GridKernels& g : plan_.grid_sets) {
      std::vector<OutputBinding<Real>> outs;
      for (size_t k = 0; k < g.templates.size(); ++k)
        outs.push_back({f.data(), rowbase_[size_t(g.templates[k])], 1, g.info.extent, -1});
      note(exec_grid<Real>(g.evalf, pass_env(data_.x.data(), g.info), outs, nullptr,
                           plan_.cfg.exec));
    }
    for (const GraphKernels& g : plan_.graph_sets) {
      const EdgeTable& edges = data_.graphs[size_t(g.graph)];
      std::vector<OutputBinding<Real>> outs;
      for (size_t k = 0; k < g.templates.size(); ++k)
        outs.push_back({f.data(), rowbase_[size_t(g.templates[k])], 1, edges.size(), -1});
      note(exec_graph<Real>(g.evalf, pass_env(data_.x.data(), {}), edges, outs, plan_.cfg.exec));
    }
  }

  // Build the normal-equation right-hand side b = -2 J^T F and the Jacobi
  // diagonal m = diag(2 J^T J). Grid gathers write every column once (frozen
  // columns write 0); graph contributions then accumulate. Frozen columns are
  // patched to the identity row (b=0, m=1), and unknowns no residual touches
  // get m=1 so preconditioning never divides by zero.
  void build_normal() {
    for (size_t i = 0; i < plan_.gather_sets.size(); ++i) {
      const GatherKernels& g = plan_.gather_sets[i];
      std::vector<OutputBinding<Real>> outs;
      for (const GatherKernels::Chan& c : g.chans) {
        outs.push_back(column_binding(b_.data(), c.field, c.channel));
        outs.push_back(column_binding(m_.data(), c.field, c.channel));
      }
      note(exec_grid<Real>(g.bm, pass_env(data_.x.data(), g.info), outs, mask_for(g.domain),
                           plan_.cfg.exec));
    }
    for (const GraphKernels& g : plan_.graph_sets) {
      if (g.scats.empty()) continue;
      const EdgeTable& edges = data_.graphs[size_t(g.graph)];
      std::vector<OutputBinding<Real>> outs;
      for (const GraphKernels::Scat& s : g.scats) {
        outs.push_back(scatter_binding(b_.data(), s));
        outs.push_back(scatter_binding(m_.data(), s));
      }
      note(exec_graph<Real>(g.bm, pass_env(data_.x.data(), {}), edges, outs, plan_.cfg.exec));
    }
    unconstrained_ = 0;
    for (size_t i = 0; i < b_.size(); ++i) {
      if (excluded_[i]) {
        b_[i] = Real(0);
        m_[i] = Real(1);
      } else if (m_[i] == Real(0)) {
        ++unconstrained_;
        m_[i] = Real(1);
      }
    }
  }

  // v |-> 2 J^T J v without damping, by the plan's mode: matrix-free gather/
  // scatter kernels, or sparse products against the materialized J or H.
  void apply_jtj(std::span<const Real> v, std::span<Real> out) {
    if (plan_.cfg.materialize == Materialize::kNone) {
      for (size_t i = 0; i < plan_.gather_sets.size(); ++i) {
        const GatherKernels& g = plan_.gather_sets[i];
        std::vector<OutputBinding<Real>> outs;
        for (const GatherKernels::Chan& c : g.chans)
          outs.push_back(column_binding(out.data(), c.field, c.channel));
        EvalEnv<Real> env = pass_env(data_.x.data(), g.info);
        bind_direction(env, v.data());
        note(exec_grid<Real>(g.jtj, env, outs, mask_for(g.domain), plan_.cfg.exec));
      }
      for (const GraphKernels& g : plan_.graph_sets) {
        if (g.scats.empty()) continue;
        const EdgeTable& edges = data_.graphs[size_t(g.graph)];
        std::vector<OutputBinding<Real>> outs;
        for (const GraphKernels::Scat& s : g.scats)
          outs.push_back(scatter_binding(out.data(), s));
        EvalEnv<Real> env = pass_env(data_.x.data(), {});
        bind_direction(env, v.data());
        note(exec_graph<Real>(g.jtj, env, edges, outs, plan_.cfg.exec));
      }
      return;
    }
    check(jvalid_, Err::kInternal, "normal-matrix apply before linearize()");
    if (plan_.cfg.materialize == Materialize::kJ) {
      spmv<Real>(J_, v, jtmp_);
      spmv_t<Real>(J_, jtmp_, out);
      for (Real& o : out) o *= Real(2);
    } else {
      spmv<Real>(H_, v, out);
    }
  }

  // Materialize the Jacobian (and, in full-materialization mode, assemble the
  // normal matrix H = 2 J^T J) from the current state. Row r = rowbase[t] +
  // element; grid rows whose boundary guard is false are genuinely empty.
  void linearize() {
    check(plan_.has_evalj, Err::kBindError, "plan was compiled without Jacobian kernels");
    for (size_t i = 0; i < plan_.grid_sets.size(); ++i) {
      const GridKernels& g = plan_.grid_sets[i];
      if (g.jtemplates.empty()) continue;
      size_t lanes = g.evalj.outputs.size();
      jlanes_grid_[i].resize(lanes * size_t(g.info.extent));
      std::vector<OutputBinding<Real>> outs;
      for (size_t l = 0; l < lanes; ++l)
        outs.push_back({jlanes_grid_[i].data(), int64_t(l) * g.info.extent, 1, g.info.extent, -1});
      note(exec_grid<Real>(g.evalj, pass_env(data_.x.data(), g.info), outs, nullptr,
                           plan_.cfg.exec));
    }
    for (size_t i = 0; i < plan_.graph_sets.size(); ++i) {
      const GraphKernels& g = plan_.graph_sets[i];
      if (g.jtemplates.empty()) continue;
      const EdgeTable& edges = data_.graphs[size_t(g.graph)];
      size_t lanes = g.evalj.outputs.size();
      jlanes_graph_[i].resize(lanes * size_t(edges.size()));
      std::vector<OutputBinding<Real>> outs;
      for (size_t l = 0; l < lanes; ++l)
        outs.push_back({jlanes_graph_[i].data(), int64_t(l) * edges.size(), 1, edges.size(), -1});
      note(exec_graph<Real>(g.evalj, pass_env(data_.x.data(), {}), edges, outs, plan_.cfg.exec));
    }

    J_.rows = 0;
    J_.cols = plan_.num_cols;
    J_.offs.assign(1, 0);
    J_.col.clear();
    J_.val.clear();
    const ProblemSpec& spec = plan_.spec;
    for (size_t t = 0; t < plan_.transformed.residuals.size(); ++t) {
      const ResidualTerm& rt = plan_.transformed.residuals[t];
      if (rt.kind == DomainKind::kGrid) {
        auto [gi, jt] = find_grid_jt(int(t));
        const GridKernels& g = plan_.grid_sets[size_t(gi)];
        const std::vector<Real>& buf = jlanes_grid_[size_t(gi)];
        for (int64_t e = 0; e < g.info.extent; ++e) {
          J_.begin_row();
          if (buf[size_t(jt->guard_out) * size_t(g.info.extent) + size_t(e)] == Real(0))
            continue;  // boundary guard false: the row has no entries at all
          std::array<int64_t, 3> c = exec_detail::coord_of(g.info.shape, g.info.nd, e);
          for (const JLane& l : jt->lanes) {
            std::array<int64_t, 3> cc{c[0] + l.off[0], c[1] + l.off[1], c[2] + l.off[2]};
            int64_t colidx = plan_.ubase[size_t(l.field)] +
                             linear_index(g.info.shape, g.info.nd, cc) *
                                 spec.unknowns[size_t(l.field)].channels +
                             l.channel;
            J_.push(colidx, buf[size_t(l.out) * size_t(g.info.extent) + size_t(e)]);
          }
        }
      } else {
        auto [gi, jt] = find_graph_jt(int(t));
        const GraphKernels& g = plan_.graph_sets[size_t(gi)];
        const EdgeTable& edges = data_.graphs[size_t(g.graph)];
        const std::vector<Real>& buf = jlanes_graph_[size_t(gi)];
        std::vector<std::pair<int64_t, Real>> row;
        for (int64_t e = 0; e < edges.size(); ++e) {
          J_.begin_row();
          row.clear();
          std::span<const uint64_t> verts = edges.edge(e);
          for (const JLane& l : jt->lanes) {
            int64_t colidx = plan_.ubase[size_t(l.field)] +
                             int64_t(verts[size_t(l.slot)]) *
                                 spec.unknowns[size_t(l.field)].channels +
                             l.channel;
            row.emplace_back(colidx, buf[size_t(l.out) * size_t(edges.size()) + size_t(e)]);
          }
          std::sort(row.begin(), row.end(),
                    [](const auto& x, const auto& y) { return x.first < y.first; });
          for (size_t k = 0; k < row.size();) {  // degenerate edges: merge columns
            int64_t colidx = row[k].first;
            Real v = row[k].second;
            for (++k; k < row.size() && row[k].first == colidx; ++k) v += row[k].second;
            J_.push(colidx, v);
          }
        }
      }
    }
    if (plan_.cfg.materialize == Materialize::kJtJ) {
      SparseCSR<Real> jt = transpose(J_);
      H_ = spgemm(jt, J_);
      scale_inplace(H_, Real(2));
    }
    if (plan_.cfg.materialize == Materialize::kJ) jtmp_.resize(size_t(rows_));
    jvalid_ = true;
  }

  const SparseCSR<Real>& jacobian() const {
    check(jvalid_, Err::kBindError, "no Jacobian has been materialized");
    return J_;
  }
  const SparseCSR<Real>& normal_matrix() const {
    check(jvalid_ && plan_.cfg.materialize == Materialize::kJtJ, Err::kBindError,
          "no normal matrix has been assembled");
    return H_;
  }

  SolveResult solve(const std::function<void(int, SolveData<Real>&)>& callback = {}) {
    using clock = std::chrono::steady_clock;
    const SolveConfig& cfg = plan_.cfg;
    const bool lm = cfg.method == Method::kLevenbergMarquardt;
    SolveResult res;
    double mu = cfg.lm_radius0, nu = 2.0;

    PcgOptions popt;
    popt.max_iters = cfg.linear_iters;
    popt.tol_rel = cfg.pcg_rel_tol;
    popt.tol_abs = cfg.pcg_abs_tol;
    popt.use_preconditioner = cfg.use_preconditioner;
    auto apply_damped = [&](std::span<const Real> v, std::span<Real> out) {
      apply_jtj(v, out);
      if (lm)
        for (size_t i = 0; i < out.size(); ++i) out[i] += damp_[i] * v[i];
    };

    auto t_prev = clock::now();
    auto take_ms = [&] {
      auto now = clock::now();
      double ms = std::chrono::duration<double, std::milli>(now - t_prev).count();
      t_prev = now;
      return ms;
    };

    for (int it = 0; it < cfg.nonlinear_iters; ++it) {
      refresh();
      double cost_old = cost();
      if (!std::isfinite(cost_old)) {
        res.trace.push_back({it, cost_old, false, lm ? mu : 0.0, 0, take_ms()});
        res.reason = StopReason::kNonFiniteCost;
        res.final_cost = cost_old;
        finish(res);
        return res;
      }
      build_normal();
      if (plan_.cfg.materialize != Materialize::kNone) linearize();
      if (lm)
        for (size_t i = 0; i < base_diag_.size(); ++i)
          base_diag_[i] = std::clamp(double(m_[i]) / 2.0, cfg.lm_diag_min, cfg.lm_diag_max);

      double cost_after = cost_old;
      bool stepped = false;
      while (!stepped) {
        if (lm) {
          for (size_t i = 0; i < damp_.size(); ++i)
            damp_[i] = excluded_[i] ? Real(0) : Real(2.0 / mu * base_diag_[i]);
        }
        for (size_t i = 0; i < md_.size(); ++i) md_[i] = m_[i] + damp_[i];
        PcgOutcome oc = pcg<Real>(apply_damped, b_, md_, delta_, popt, ws_, excluded_.data());
        res.indefinite_operator |= oc.indefinite;
        if (oc.nonfinite && !lm) {
          res.reason = StopReason::kNonFiniteCost;
          res.final_cost = cost_old;
          res.trace.push_back({it, cost_old, false, 0.0, oc.iterations, take_ms()});
          finish(res);
          return res;
        }
        for (size_t i = 0; i < xtrial_.size(); ++i)
          xtrial_[i] = excluded_[i] ? data_.x[i] : data_.x[i] + delta_[i];
        double cost_new = oc.nonfinite ? std::numeric_limits<double>::infinity()
                                       : cost_at(xtrial_.data());
        if (!lm) {
          data_.x = xtrial_;  // Gauss-Newton: the step is unconditional
          res.trace.push_back({it, cost_new, true, 0.0, oc.iterations, take_ms()});
          if (!std::isfinite(cost_new)) {
            res.reason = StopReason::kNonFiniteCost;
            res.final_cost = cost_new;
            finish(res);
            return res;
          }
          cost_after = cost_new;
          stepped = true;
          break;
        }
        // Step quality: actual decrease over the quadratic model's prediction
        // with the undamped normal matrix.
        apply_jtj(delta_, aptmp_);
        double predicted = 0, dot_b = 0;
        for (size_t i = 0; i < delta_.size(); ++i) {
          dot_b += double(b_[i]) * double(delta_[i]);
          predicted -= 0.5 * double(delta_[i]) * double(aptmp_[i]);
        }
        predicted += dot_b;
        double rho = predicted > 0 ? (cost_old - cost_new) / predicted : -1.0;
        if (std::isfinite(cost_new) && predicted > 0 && rho > cfg.lm_min_decrease) {
          data_.x = xtrial_;
          double shrink = std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
          res.trace.push_back({it, cost_new, true, mu, oc.iterations, take_ms()});
          mu = std::clamp(mu / shrink, cfg.lm_radius_min, cfg.lm_radius_max);
          nu = 2.0;
          cost_after = cost_new;
          stepped = true;
        } else {
          res.trace.push_back({it, cost_new, false, mu, oc.iterations, take_ms()});
          // A zero trial step means the gradient itself vanished; shrinking
          // the radius only yields the same zero step, so stop right away.
          bool zero_step = true;
          for (Real d : delta_)
            if (d != Real(0)) {
              zero_step = false;
              break;
            }
          mu /= nu;
          nu *= 2.0;
          if (zero_step || mu < cfg.lm_radius_min) {
            res.reason = StopReason::kStalled;
            res.final_cost = cost_old;
            finish(res);
            return res;
          }
        }
      }
      if (callback) callback(it, data_);
      double rel = (cost_old - cost_after) / std::max(cost_old, 1e-300);
      if (rel >= 0 && rel < cfg.cost_stop_tol) {
        res.reason = StopReason::kCostTol;
        break;
      }
    }
    refresh();
    res.final_cost = cost();
    if (!std::isfinite(res.final_cost)) res.reason = StopReason::kNonFiniteCost;
    finish(res);
    return res;
  }

 private:
  void finish(SolveResult& res) {
    res.nonfinite_kernels = nonfinite_seen_;
    res.unconstrained = unconstrained_;
  }

  int64_t instances(int t) const {
    const ResidualTerm& rt = plan_.transformed.residuals[size_t(t)];
    if (rt.kind == DomainKind::kGrid) return plan_.spec.extent_of(rt.domain);
    return data_.graphs[size_t(rt.graph)].size();
  }

  void validate() {
    const ProblemSpec& spec = plan_.spec;
    check(int64_t(data_.x.size()) == plan_.num_cols, Err::kBindError,
          "unknown vector size does not match the plan layout");
    check(data_.params.size() == spec.params.size(), Err::kBindError,
          "parameter count does not match the declaration");
    check(data_.arrays.size() == spec.arrays.size(), Err::kBindError,
          "array count does not match the declaration");
    for (size_t i = 0; i < spec.arrays.size(); ++i)
      check(int64_t(data_.arrays[i].size()) ==
                spec.extent_of(spec.arrays[i].domain) * spec.arrays[i].channels,
            Err::kBindError, "array '" + spec.arrays[i].name + "' has the wrong size");
    check(data_.graphs.size() == spec.graphs.size(), Err::kBindError,
          "graph count does not match the declaration");
    for (size_t i = 0; i < spec.graphs.size(); ++i)
      check(data_.graphs[i].arity == spec.graphs[i].arity(), Err::kBindError,
            "graph '" + spec.graphs[i].name + "' arity does not match the declaration");
  }

  EvalEnv<Real> pass_env(const Real* x, const DomainInfo& info) const {
    const ProblemSpec& spec = plan_.spec;
    EvalEnv<Real> env;
    env.params = std::span<const double>(data_.params);
    env.unknowns.resize(spec.unknowns.size());
    env.pfields.resize(spec.unknowns.size());
    for (size_t f = 0; f < spec.unknowns.size(); ++f) {
      const UnknownField& u = spec.unknowns[f];
      env.unknowns[f] = {x + plan_.ubase[f], u.channels, spec.shape_of(u.domain),
                         int(u.domain.dims.size())};
    }
    env.arrays.resize(spec.arrays.size());
    for (size_t i = 0; i < spec.arrays.size(); ++i)
      env.arrays[i] = {data_.arrays[i].data(), spec.arrays[i].channels,
                       spec.shape_of(spec.arrays[i].domain),
                       int(spec.arrays[i].domain.dims.size())};
    env.computeds.resize(spec.computed.size());
    for (size_t i = 0; i < spec.computed.size(); ++i)
      env.computeds[i] = {computed_[i].data(), spec.computed[i].total_channels(),
                          spec.shape_of(spec.computed[i].domain),
                          int(spec.computed[i].domain.dims.size())};
    env.domain_shape = info.shape;
    env.domain_nd = info.nd;
    return env;
  }

  void bind_direction(EvalEnv<Real>& env, const Real* v) const {
    const ProblemSpec& spec = plan_.spec;
    for (size_t f = 0; f < spec.unknowns.size(); ++f) {
      const UnknownField& u = spec.unknowns[f];
      env.pfields[f] = {v + plan_.ubase[f], u.channels, spec.shape_of(u.domain),
                        int(u.domain.dims.size())};
    }
  }

  OutputBinding<Real> column_binding(Real* vec, int field, int channel) const {
    const UnknownField& u = plan_.spec.unknowns[size_t(field)];
    return {vec, plan_.ubase[size_t(field)] + channel, u.channels,
            plan_.spec.extent_of(u.domain), -1};
  }

  OutputBinding<Real> scatter_binding(Real* vec, const GraphKernels::Scat& s) const {
    const UnknownField& u = plan_.spec.unknowns[size_t(s.field)];
    return {vec, plan_.ubase[size_t(s.field)] + s.channel, u.channels,
            plan_.spec.extent_of(u.domain), s.slot};
  }

  const uint8_t* mask_for(const GridDomain& dom) const {
    for (size_t i = 0; i < plan_.exclude_kernels.size(); ++i)
      if (plan_.exclude_kernels[i].domain == dom) return masks_[i].data();
    return nullptr;
  }

  std::pair<int, const GridKernels::JTemplate*> find_grid_jt(int tmpl) const {
    for (size_t i = 0; i < plan_.grid_sets.size(); ++i)
      for (const auto& jt : plan_.grid_sets[i].jtemplates)
        if (jt.tmpl == tmpl) return {int(i), &jt};
    fail(Err::kInternal, "grid template missing from the Jacobian plan");
  }
  std::pair<int, const GraphKernels::JTemplate*> find_graph_jt(int tmpl) const {
    for (size_t i = 0; i < plan_.graph_sets.size(); ++i)
      for (const auto& jt : plan_.graph_sets[i].jtemplates)
        if (jt.tmpl == tmpl) return {int(i), &jt};
    fail(Err::kInternal, "graph template missing from the Jacobian plan");
  }

  void note(const ExecReport& r) { nonfinite_seen_ |= r.nonfinite; }

  const CompiledPlan& plan_;
  SolveData<Real>& data_;
  std::vector<std::vector<Real>> computed_;
  std::vector<std::vector<uint8_t>> masks_;
  std::vector<std::vector<Real>> maskval_;
  std::vector<uint8_t> excluded_;
  std::vector<std::vector<Real>> gridcost_, graphcost_;
  std::vector<Real> b_, m_, md_, damp_, delta_, xtrial_, aptmp_, jtmp_;
  std::vector<double> base_diag_;
  PcgWorkspace<Real> ws_;
  std::vector<int64_t> rowbase_;
  int64_t rows_ = 0;
  std::vector<std::vector<Real>> jlanes_grid_, jlanes_graph_;
  SparseCSR<Real> J_, H_;
  bool jvalid_ = false;
  bool nonfinite_seen_ = false;
  int64_t unconstrained_ = 0;
};

}  // namespace minopt
