#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "minopt/lower.hpp"
#include "minopt/solver.hpp"

using namespace minopt;

namespace {

// Two-pixel chain: a data term everywhere and a forward-difference smoothness
// term whose out-of-bounds instance at the last pixel is implicitly guarded.
// Every expected number below is hand-derived in the comments where it is
// checked.
const char* kChain = R"(
dim W 2
unknown X [W]
array A [W]
energy X(0) - A(0)
energy X(0) - X(1)
)";

template <class Real>
SolveData<Real> chain_data(std::vector<Real> x, std::vector<Real> a) {
  SolveData<Real> d;
  d.x = std::move(x);
  d.arrays = {std::move(a)};
  return d;
}

EdgeTable edges2(std::vector<uint64_t> verts) { return EdgeTable{2, std::move(verts)}; }

}  // namespace

TEST_CASE("two-pixel chain: generated routines match hand-derived values") {
  ProblemSpec spec = compile_source(kChain);
  SolveConfig cfg;
  cfg.force_evalj = true;  // materialize J alongside the matrix-free kernels
  CompiledPlan plan_ = plan(spec, cfg);
  SolveData<double> data = chain_data<double>({0.0, 0.0}, {1.0, 0.0});
  Solver<double> s(plan_, data);

  CHECK(s.num_cols() == 2);
  CHECK(s.num_rows() == 4);  // two templates, two pixels each

  // F = [x0-a0, x1-a1, x0-x1, guarded] = [-1, 0, 0, 0]; cost = sum F^2 = 1.
  CHECK(s.cost() == 1.0);
  std::vector<double> f(4, 99.0);
  s.residuals(f);
  CHECK(f == std::vector<double>{-1.0, 0.0, 0.0, 0.0});

  // J rows: [1,0], [0,1], [1,-1], and an empty guarded row.
  // b = -2 J^T F = [2, 0]; m = diag(2 J^T J) = [4, 4].
  s.build_normal();
  CHECK(s.rhs()[0] == 2.0);
  CHECK(s.rhs()[1] == 0.0);
  CHECK(s.precond()[0] == 4.0);
  CHECK(s.precond()[1] == 4.0);

  // 2 J^T J = [[4,-2],[-2,4]]; applying to e0 reads off the first column.
  std::vector<double> v{1.0, 0.0}, out(2);
  s.apply_jtj(v, out);
  CHECK(out[0] == 4.0);
  CHECK(out[1] == -2.0);

  s.linearize();
  const SparseCSR<double>& j = s.jacobian();
  CHECK(j.rows == 4);
  CHECK(j.cols == 2);
  CHECK(j.offs == std::vector<int64_t>{0, 1, 2, 4, 4});
  CHECK(j.col == std::vector<int64_t>{0, 1, 0, 1});
  CHECK(j.val == std::vector<double>{1.0, 1.0, 1.0, -1.0});
}

TEST_CASE("two-pixel chain: one Gauss-Newton iteration lands on the normal solution") {
  ProblemSpec spec = compile_source(kChain);
  SolveConfig cfg;
  cfg.nonlinear_iters = 1;
  CompiledPlan plan_ = plan(spec, cfg);
  SolveData<double> data = chain_data<double>({0.0, 0.0}, {1.0, 0.0});
  Solver<double> s(plan_, data);
  SolveResult r = s.solve();

  // [[4,-2],[-2,4]] delta = [2,0] gives delta = [2/3, 1/3]; the energy is
  // quadratic so one iteration is exact and the remaining cost is 1/3.
  CHECK(data.x[0] == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(data.x[1] == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r.final_cost == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r.reason == StopReason::kIterLimit);
  REQUIRE(r.trace.size() == 1);
  CHECK(r.trace[0].accepted);
  CHECK(r.trace[0].radius == 0.0);
  CHECK(r.trace[0].pcg_iters <= 2);  // exact CG termination for a 2x2 system
  CHECK(r.unconstrained == 0);
  CHECK_FALSE(r.nonfinite_kernels);
  CHECK(r.trace_csv().substr(0, 43) == "iter,cost,accepted,radius,pcg_iters,wall_ms");
}

TEST_CASE("materialized operators agree with the matrix-free apply") {
  // A longer chain with a nonlinear data term keeps J nontrivial.
  const char* src = R"(
dim W 9
unknown X [W]
array A [W]
energy sin(X(0)) - A(0)
energy 0.5 * (X(0) - X(1))
)";
  std::mt19937 rng(41);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x0(9), a0(9);
  for (auto& v : x0) v = u(rng);
  for (auto& v : a0) v = u(rng);

  auto make = [&](Materialize mode) {
    SolveConfig cfg;
    cfg.materialize = mode;
    return plan(compile_source(src), cfg);
  };
  CompiledPlan pn = make(Materialize::kNone);
  CompiledPlan pj = make(Materialize::kJ);
  CompiledPlan ph = make(Materialize::kJtJ);
  SolveData<double> dn = chain_data<double>(x0, a0);
  SolveData<double> dj = chain_data<double>(x0, a0);
  SolveData<double> dh = chain_data<double>(x0, a0);
  Solver<double> sn(pn, dn), sj(pj, dj), sh(ph, dh);
  sj.linearize();
  sh.linearize();

  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> v(9), on(9), oj(9), oh(9);
    for (auto& e : v) e = u(rng);
    sn.apply_jtj(v, on);
    sj.apply_jtj(v, oj);
    sh.apply_jtj(v, oh);
    for (int i = 0; i < 9; ++i) {
      CHECK(oj[i] == Catch::Approx(on[i]).margin(1e-12));
      CHECK(oh[i] == Catch::Approx(on[i]).margin(1e-12));
    }
  }

  // The three modes must also deliver the same iterates end to end.
  SolveResult rn = sn.solve(), rj = sj.solve(), rh = sh.solve();
  CHECK(rn.final_cost == Catch::Approx(rj.final_cost).epsilon(1e-10));
  CHECK(rn.final_cost == Catch::Approx(rh.final_cost).epsilon(1e-10));
  for (int i = 0; i < 9; ++i) {
    CHECK(dj.x[i] == Catch::Approx(dn.x[i]).margin(1e-8));
    CHECK(dh.x[i] == Catch::Approx(dn.x[i]).margin(1e-8));
  }
}

TEST_CASE("graph energies scatter normal-equation terms through edge slots") {
  ProblemSpec spec = compile_source(
      "dim N 2\nunknown P [N]\ngraph G (a, b)\nenergy P(G.a) - P(G.b)");
  SolveConfig cfg;
  cfg.force_evalj = true;
  CompiledPlan plan_ = plan(spec, cfg);
  SolveData<double> data;
  data.x = {3.0, 1.0};
  data.graphs = {edges2({0, 1})};
  Solver<double> s(plan_, data);

  CHECK(s.num_rows() == 1);
  CHECK(s.cost() == 4.0);  // (3-1)^2

  // J = [1, -1]; F = 2; b = -2 J^T F = [-4, 4]; m = [2, 2].
  s.build_normal();
  CHECK(s.rhs()[0] == -4.0);
  CHECK(s.rhs()[1] == 4.0);
  CHECK(s.precond()[0] == 2.0);
  CHECK(s.precond()[1] == 2.0);
  CHECK(s.solve().unconstrained == 0);

  // 2 J^T J = [[2,-2],[-2,2]]; column 0 via the scatter path.
  std::vector<double> v{1.0, 0.0}, out(2);
  s.apply_jtj(v, out);
  CHECK(out[0] == 2.0);
  CHECK(out[1] == -2.0);

  // The system is singular along (1,1) but consistent; CG started at zero
  // stays in the range space and the solve drains the energy completely.
  CHECK(s.cost() == Catch::Approx(0.0).margin(1e-20));
}

TEST_CASE("hyperedges with repeated vertices merge their Jacobian columns") {
  ProblemSpec spec = compile_source(
      "dim N 2\nunknown P [N]\ngraph G (a, b)\nenergy P(G.a) - P(G.b)");
  SolveConfig cfg;
  cfg.materialize = Materialize::kJ;
  CompiledPlan plan_ = plan(spec, cfg);
  SolveData<double> data;
  data.x = {5.0, 7.0};
  data.graphs = {edges2({0, 0})};  // degenerate edge: both slots hit vertex 0
  Solver<double> s(plan_, data);
  s.linearize();
  const SparseCSR<double>& j = s.jacobian();
  REQUIRE(j.rows == 1);
  CHECK(j.offs == std::vector<int64_t>{0, 1});
  CHECK(j.col == std::vector<int64_t>{0});
  CHECK(j.val[0] == 0.0);  // +1 and -1 land on the same column and cancel
}

TEST_CASE("frozen unknowns keep their bits and get identity rows") {
  ProblemSpec spec = compile_source(
      "dim W 2\nunknown X [W]\narray A [W]\nenergy X(0) - A(0)\n"
      "exclude less(index(0), 1)");
  SolveConfig cfg;
  cfg.nonlinear_iters = 1;
  CompiledPlan plan_ = plan(spec, cfg);
  // x0 = -0.0 can only survive if the solver never adds anything to it:
  // -0.0 + 0.0 would already flip the sign bit.
  SolveData<double> data = chain_data<double>({-0.0, 0.0}, {1.0, 2.0});
  Solver<double> s(plan_, data);

  CHECK(s.excluded()[0] == 1);
  CHECK(s.excluded()[1] == 0);
  // The energy still reads the frozen value: cost = (0-1)^2 + (0-2)^2.
  CHECK(s.cost() == 5.0);

  s.build_normal();
  CHECK(s.rhs()[0] == 0.0);      // patched identity row
  CHECK(s.precond()[0] == 1.0);  // ...
  CHECK(s.rhs()[1] == 4.0);      // -2 * (0 - 2)
  CHECK(s.precond()[1] == 2.0);

  SolveResult r = s.solve();
  const double neg_zero = -0.0;
  CHECK(std::memcmp(&data.x[0], &neg_zero, sizeof(double)) == 0);
  CHECK(data.x[1] == Catch::Approx(2.0).epsilon(1e-12));
  CHECK(r.final_cost == Catch::Approx(1.0).epsilon(1e-12));  // frozen pixel residual
}

TEST_CASE("cache-mode computed arrays reproduce the inlined energy") {
  const char* inlined = R"(
dim W 5
unknown X [W]
array A [W]
energy sin(X(0)) - A(0)
)";
  const char* cached = R"(
dim W 5
unknown X [W]
array A [W]
computed S cache = sin(X(0))
energy S(0) - A(0)
)";
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> x0(5), a0(5);
  for (auto& v : x0) v = u(rng);
  for (auto& v : a0) v = u(rng);

  SolveConfig cfg;
  CompiledPlan pi = plan(compile_source(inlined), cfg);
  CompiledPlan pc = plan(compile_source(cached), cfg);
  SolveData<double> di = chain_data<double>(x0, a0);
  SolveData<double> dc = chain_data<double>(x0, a0);
  Solver<double> si(pi, di), sc(pc, dc);

  CHECK(sc.cost() == Catch::Approx(si.cost()).epsilon(1e-14));
  si.build_normal();
  sc.build_normal();
  for (int i = 0; i < 5; ++i) {
    CHECK(sc.rhs()[i] == Catch::Approx(si.rhs()[i]).margin(1e-14));
    CHECK(sc.precond()[i] == Catch::Approx(si.precond()[i]).margin(1e-14));
  }
  std::vector<double> v(5), oi(5), oc(5);
  for (auto& e : v) e = u(rng);
  si.apply_jtj(v, oi);
  sc.apply_jtj(v, oc);
  for (int i = 0; i < 5; ++i) CHECK(oc[i] == Catch::Approx(oi[i]).margin(1e-14));

  SolveResult ri = si.solve(), rc = sc.solve();
  CHECK(rc.final_cost == Catch::Approx(ri.final_cost).margin(1e-12));
  for (int i = 0; i < 5; ++i) CHECK(dc.x[i] == Catch::Approx(di.x[i]).margin(1e-8));
}

TEST_CASE("freeze-mode computed arrays are constants for the current iteration") {
  ProblemSpec spec = compile_source(
      "dim W 3\nunknown X [W]\ncomputed S freeze = X(0) * X(0)\n"
      "energy S(0) - X(0)");
  CompiledPlan plan_ = plan(spec, SolveConfig{});
  SolveData<double> data;
  data.x = {2.0, 3.0, 4.0};
  Solver<double> s(plan_, data);

  // S is evaluated (4, 9, 16) but its dependence on X is frozen, so the
  // residual derivative is just the explicit -1 on X(0).
  CHECK(s.cost() == Catch::Approx(4.0 + 36.0 + 144.0).epsilon(1e-14));
  s.build_normal();
  CHECK(s.rhs()[0] == Catch::Approx(2.0 * 2.0).epsilon(1e-14));   // -2 * (-1) * (4-2)
  CHECK(s.precond()[0] == Catch::Approx(2.0).epsilon(1e-14));     // 2 * (-1)^2
}

TEST_CASE("LM accepts a perfect quadratic step and triples the radius") {
  ProblemSpec spec = compile_source(kChain);
  SolveConfig cfg;
  cfg.method = Method::kLevenbergMarquardt;
  cfg.nonlinear_iters = 2;
  CompiledPlan plan_ = plan(spec, cfg);
  SolveData<double> data = chain_data<double>({0.0, 0.0}, {1.0, 0.0});
  Solver<double> s(plan_, data);
  SolveResult r = s.solve();

  REQUIRE(r.trace.size() >= 2);
  CHECK(r.trace[0].accepted);
  CHECK(r.trace[0].radius == 1e4);
  // The energy is quadratic, so predicted == actual decrease and the gain
  // ratio is 1: the radius grows by the maximum factor of 3.
  CHECK(r.trace[1].radius == Catch::Approx(3e4).epsilon(1e-10));
  // Accepted LM steps must strictly decrease the energy.
  double prev = 1.0;  // cost at the start
  for (const IterRow& row : r.trace)
    if (row.accepted) {
      CHECK(row.cost < prev);
      prev = row.cost;
    }
}

TEST_CASE("LM stalls on a flat energy instead of looping") {
  // The residual is a pure constant: zero gradient, positive cost. The very
  // first trial step is exactly zero, which no radius change can improve.
  ProblemSpec spec = compile_source("dim W 2\nunknown X [W]\narray A [W]\nenergy A(0)");
  SolveConfig cfg;
  cfg.method = Method::kLevenbergMarquardt;
  CompiledPlan plan_ = plan(spec, cfg);
  SolveData<double> data = chain_data<double>({0.25, -0.75}, {3.0, 4.0});
  Solver<double> s(plan_, data);
  SolveResult r = s.solve();

  CHECK(r.reason == StopReason::kStalled);
  CHECK(r.final_cost == 25.0);
  REQUIRE(r.trace.size() == 1);
  CHECK_FALSE(r.trace[0].accepted);
  // Rejected trials must leave the iterate untouched, bit for bit.
  const double x0 = 0.25, x1 = -0.75;
  CHECK(std::memcmp(&data.x[0], &x0, sizeof(double)) == 0);
  CHECK(std::memcmp(&data.x[1], &x1, sizeof(double)) == 0);
  // This degenerate energy also has no constrained unknowns at all.
  CHECK(r.unconstrained == 2);
}

TEST_CASE("GN on the flat energy stops changing but never rejects") {
  ProblemSpec spec = compile_source("dim W 2\nunknown X [W]\narray A [W]\nenergy A(0)");
  SolveConfig cfg;
  cfg.nonlinear_iters = 3;
  CompiledPlan plan_ = plan(spec, cfg);
  SolveData<double> data = chain_data<double>({0.25, -0.75}, {3.0, 4.0});
  Solver<double> s(plan_, data);
  SolveResult r = s.solve();
  CHECK(r.reason == StopReason::kIterLimit);
  CHECK(r.final_cost == 25.0);
  CHECK(data.x[0] == 0.25);  // b is zero so every step is exactly zero
  CHECK(data.x[1] == -0.75);
}

TEST_CASE("non-finite energies stop the solve with a reason, not a throw") {
  SECTION("already non-finite at the start") {
    ProblemSpec spec = compile_source("dim W 1\nunknown X [W]\nenergy log(X(0))");
    CompiledPlan plan_ = plan(spec, SolveConfig{});
    SolveData<double> data;
    data.x = {-1.0};  // log(-1) = NaN
    Solver<double> s(plan_, data);
    SolveResult r = s.solve();
    CHECK(r.reason == StopReason::kNonFiniteCost);
    CHECK(std::isnan(r.final_cost));
    REQUIRE(r.trace.size() == 1);
    CHECK_FALSE(r.trace[0].accepted);
  }
  SECTION("a Gauss-Newton step walks into NaN") {
    ProblemSpec spec = compile_source("dim W 1\nunknown X [W]\nenergy log(X(0))");
    CompiledPlan plan_ = plan(spec, SolveConfig{});
    SolveData<double> data;
    data.x = {4.0};  // the full GN step is -x*log(x) = -5.5, landing negative
    Solver<double> s(plan_, data);
    SolveResult r = s.solve();
    CHECK(r.reason == StopReason::kNonFiniteCost);
    REQUIRE(!r.trace.empty());
    CHECK(r.trace[0].accepted);  // GN commits the step before discovering NaN
    CHECK(std::isnan(r.final_cost));
  }
  SECTION("LM treats a NaN trial as a rejection and recovers") {
    // Same energy, but LM: the damped trial that lands negative is rejected,
    // the radius shrinks, and the solve keeps decreasing log(x)^2 toward 1.
    ProblemSpec spec = compile_source("dim W 1\nunknown X [W]\nenergy log(X(0))");
    SolveConfig cfg;
    cfg.method = Method::kLevenbergMarquardt;
    cfg.lm_radius0 = 1e8;  // start with a nearly undamped (too long) step
    cfg.nonlinear_iters = 20;
    CompiledPlan plan_ = plan(spec, cfg);
    SolveData<double> data;
    data.x = {4.0};
    Solver<double> s(plan_, data);
    SolveResult r = s.solve();
    // Quadratic convergence drives the cost to exactly zero before the
    // iteration budget; the follow-up zero-gradient trial reports a stall.
    CHECK(r.reason == StopReason::kStalled);
    CHECK(data.x[0] == Catch::Approx(1.0).epsilon(1e-6));
    CHECK(r.final_cost < 1e-10);
    bool any_rejected = false;
    for (const IterRow& row : r.trace) any_rejected |= !row.accepted;
    CHECK(any_rejected);
  }
}

TEST_CASE("per-iteration callbacks observe and mutate the bound data") {
  ProblemSpec spec = compile_source("dim W 2\nunknown X [W]\narray A [W]\nenergy X(0) - A(0)");
  SolveConfig cfg;
  cfg.nonlinear_iters = 2;
  CompiledPlan plan_ = plan(spec, cfg);
  SolveData<double> data = chain_data<double>({0.0, 0.0}, {1.0, 2.0});
  Solver<double> s(plan_, data);

  int calls = 0;
  SolveResult r = s.solve([&](int iter, SolveData<double>& d) {
    ++calls;
    if (iter == 0) {
      // After the first iteration the fit is exact; retarget the data term.
      CHECK(d.x[0] == Catch::Approx(1.0).epsilon(1e-12));
      d.arrays[0] = {5.0, 6.0};
    }
  });
  CHECK(calls == 2);
  CHECK(data.x[0] == Catch::Approx(5.0).epsilon(1e-12));
  CHECK(data.x[1] == Catch::Approx(6.0).epsilon(1e-12));
  CHECK(r.final_cost == Catch::Approx(0.0).margin(1e-20));
}

TEST_CASE("callbacks may grow a hyperedge set between iterations") {
  ProblemSpec spec = compile_source(
      "dim N 3\nunknown P [N]\ngraph G (a, b)\nenergy P(G.a) - P(G.b) - 1");
  SolveConfig cfg;
  cfg.nonlinear_iters = 2;
  CompiledPlan plan_ = plan(spec, cfg);
  SolveData<double> data;
  data.x = {0.0, 0.0, 0.0};
  data.graphs = {edges2({0, 1})};
  Solver<double> s(plan_, data);
  CHECK(s.num_rows() == 1);

  SolveResult r = s.solve([&](int iter, SolveData<double>& d) {
    if (iter == 0) d.graphs[0] = edges2({0, 1, 1, 2});  // add an edge
  });
  // Both differences should now be 1; vertex 2 only became constrained after
  // the callback, which requires the row layout to have been rebuilt.
  CHECK(s.num_rows() == 2);
  CHECK(data.x[0] - data.x[1] == Catch::Approx(1.0).epsilon(1e-10));
  CHECK(data.x[1] - data.x[2] == Catch::Approx(1.0).epsilon(1e-10));
  CHECK(r.final_cost == Catch::Approx(0.0).margin(1e-18));
}

TEST_CASE("unknowns no residual touches are reported and left stationary") {
  ProblemSpec spec = compile_source(
      "dim W 2\nunknown X [W]\nunknown Y [W]\narray A [W]\nenergy X(0) - A(0)");
  SolveConfig cfg;
  cfg.nonlinear_iters = 1;
  CompiledPlan plan_ = plan(spec, cfg);
  SolveData<double> data;
  data.x = {0.0, 0.0, 41.5, -2.25};  // [X | Y]
  data.arrays = {{1.0, 2.0}};
  Solver<double> s(plan_, data);
  SolveResult r = s.solve();
  CHECK(r.unconstrained == 2);
  CHECK(data.x[0] == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(data.x[1] == Catch::Approx(2.0).epsilon(1e-12));
  CHECK(data.x[2] == 41.5);
  CHECK(data.x[3] == -2.25);
}

TEST_CASE("relative cost decrease below the threshold stops the loop early") {
  ProblemSpec spec = compile_source(kChain);
  SolveConfig cfg;
  cfg.nonlinear_iters = 8;
  cfg.cost_stop_tol = 1e-12;
  CompiledPlan plan_ = plan(spec, cfg);
  SolveData<double> data = chain_data<double>({0.0, 0.0}, {1.0, 0.0});
  Solver<double> s(plan_, data);
  SolveResult r = s.solve();
  // The quadratic converges on iteration 0; iteration 1 decreases nothing.
  CHECK(r.reason == StopReason::kCostTol);
  CHECK(r.trace.size() == 2);
  CHECK(r.final_cost == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("single-precision sessions run the same kernels") {
  ProblemSpec spec = compile_source(kChain);
  SolveConfig cfg;
  cfg.precision = Precision::kF32;
  cfg.nonlinear_iters = 1;
  CompiledPlan plan_ = plan(spec, cfg);
  SolveData<float> data;
  data.x = {0.0f, 0.0f};
  data.arrays = {{1.0f, 0.0f}};
  Solver<float> s(plan_, data);

  CHECK(s.cost() == 1.0);
  s.build_normal();
  CHECK(s.rhs()[0] == 2.0f);
  CHECK(s.precond()[0] == 4.0f);
  SolveResult r = s.solve();
  CHECK(data.x[0] == Catch::Approx(2.0 / 3.0).epsilon(1e-6));
  CHECK(data.x[1] == Catch::Approx(1.0 / 3.0).epsilon(1e-6));
  CHECK(r.final_cost == Catch::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("binding mistakes are rejected up front") {
  ProblemSpec spec = compile_source(kChain);
  CompiledPlan plan_ = plan(spec, SolveConfig{});
  SECTION("wrong unknown size") {
    SolveData<double> data = chain_data<double>({0.0}, {1.0, 0.0});
    CHECK_THROWS_AS(Solver<double>(plan_, data), Error);
  }
  SECTION("wrong array size") {
    SolveData<double> data = chain_data<double>({0.0, 0.0}, {1.0});
    CHECK_THROWS_AS(Solver<double>(plan_, data), Error);
  }
  SECTION("missing graph") {
    ProblemSpec gs = compile_source(
        "dim N 2\nunknown P [N]\ngraph G (a, b)\nenergy P(G.a) - P(G.b)");
    CompiledPlan gp = plan(gs, SolveConfig{});
    SolveData<double> data;
    data.x = {0.0, 0.0};
    CHECK_THROWS_AS(Solver<double>(gp, data), Error);
  }
  SECTION("wrong graph arity") {
    ProblemSpec gs = compile_source(
        "dim N 2\nunknown P [N]\ngraph G (a, b)\nenergy P(G.a) - P(G.b)");
    CompiledPlan gp = plan(gs, SolveConfig{});
    SolveData<double> data;
    data.x = {0.0, 0.0};
    data.graphs = {EdgeTable{3, {0, 1, 1}}};
    CHECK_THROWS_AS(Solver<double>(gp, data), Error);
  }
}

TEST_CASE("a problem with no energies solves to a zero step") {
  ProblemSpec spec = compile_source("dim W 3\nunknown X [W]");
  SolveConfig cfg;
  cfg.nonlinear_iters = 1;
  CompiledPlan plan_ = plan(spec, cfg);
  SolveData<double> data;
  data.x = {1.0, 2.0, 3.0};
  Solver<double> s(plan_, data);
  CHECK(s.num_rows() == 0);
  SolveResult r = s.solve();
  CHECK(r.final_cost == 0.0);
  CHECK(data.x == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(r.unconstrained == 3);
}
