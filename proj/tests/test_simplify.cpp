#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "minopt/simplify.hpp"
#include "support.hpp"

using namespace minopt;
using testsup::RandomExprRig;

TEST_CASE("canonicalize: algebraic goldens") {
  ExprArena a;
  ExprId x = a.unknown(0, 0, Access::stencil(0));
  ExprId y = a.unknown(0, 0, Access::stencil(1));

  CHECK(canonicalize(a, a.add2(x, x)) == a.product({a.constant(2), x}));
  CHECK(canonicalize(a, a.mul2(x, x)) == a.pow(x, Rat(2)));
  CHECK(canonicalize(a, a.sub2(x, x)) == a.constant(0));
  CHECK(canonicalize(a, a.unary(UnaryFn::kSqrt, x)) == a.pow(x, Rat(1, 2)));
  CHECK(canonicalize(a, a.add2(x, a.product({a.constant(2), x}))) ==
        a.product({a.constant(3), x}));
  CHECK(canonicalize(a, a.product({a.constant(2), a.product({a.constant(3), x})})) ==
        a.product({a.constant(6), x}));
  CHECK(canonicalize(a, a.mul2(a.pow(x, Rat(2)), a.pow(x, Rat(3)))) == a.pow(x, Rat(5)));
  CHECK(canonicalize(a, a.mul2(a.unary(UnaryFn::kSqrt, x), x)) == a.pow(x, Rat(3, 2)));
  CHECK(canonicalize(a, a.add2(a.add2(x, a.constant(1)), a.add2(x, a.constant(2)))) ==
        a.sum({a.constant(3), a.product({a.constant(2), x})}));
  CHECK(canonicalize(a, a.sub2(a.mul2(x, y), a.mul2(y, x))) == a.constant(0));

  // Boolean idempotence.
  ExprId b = a.compare(CmpOp::kLt, x, y);
  ExprId c = a.compare(CmpOp::kGt, x, a.constant(0));
  CHECK(canonicalize(a, a.mul2(b, b)) == b);
  CHECK(canonicalize(a, a.pow(b, Rat(3))) == b);
  CHECK(canonicalize(a, a.logical(BoolFn::kAnd, {b, a.logical(BoolFn::kAnd, {b, c})})) ==
        a.logical(BoolFn::kAnd, {b, c}));
  CHECK(canonicalize(a, a.logical(BoolFn::kOr, {b, a.constant(1)})) == a.constant(1));
  CHECK(canonicalize(a, a.logical(BoolFn::kAnd, {b, a.constant(1)})) == b);
}

TEST_CASE("canonicalize: idempotent and memoized") {
  RandomExprRig rig;
  std::mt19937 rng(42);
  for (int i = 0; i < 200; ++i) {
    ExprId e = rig.gen_value(rng, 4);
    ExprId c1 = canonicalize(rig.arena, e);
    ExprId c2 = canonicalize(rig.arena, c1);
    REQUIRE(c1 == c2);
  }
}

TEST_CASE("canonicalize: refuses IEEE-breaking merges") {
  RandomExprRig rig;
  ExprArena& a = rig.arena;
  ExprId x = a.unknown(0, 0, Access::stencil(0));
  auto eval_at = [&](ExprId e, double v) {
    for (double& xv : rig.x) xv = v;
    return eval_expr(a, e, rig.env(1));
  };

  // sqrt(x)*sqrt(x) stays split: NaN for x < 0, while x itself is finite.
  ExprId s = canonicalize(a, a.mul2(a.unary(UnaryFn::kSqrt, x), a.unary(UnaryFn::kSqrt, x)));
  CHECK(s != x);
  CHECK(std::isnan(eval_at(s, -2.0)));
  CHECK(eval_at(s, 4.0) == Catch::Approx(4.0));

  // x * x^-1 stays split: NaN at x = 0 (0 * inf).
  ExprId r = canonicalize(a, a.mul2(x, a.pow(x, Rat(-1))));
  CHECK(r != a.constant(1));
  CHECK(std::isnan(eval_at(r, 0.0)));
  CHECK(eval_at(r, 2.0) == Catch::Approx(1.0));

  // (x^2)^(1/2) is |x|, not x.
  ExprId p = canonicalize(a, a.pow(a.mul2(x, x), Rat(1, 2)));
  CHECK(p != x);
  CHECK(eval_at(p, -3.0) == Catch::Approx(3.0));

  // (x^3)^(1/3) stays nested: NaN for x < 0 under pow semantics.
  ExprId q = canonicalize(a, a.pow(a.pow(x, Rat(3)), Rat(1, 3)));
  CHECK(q != x);
  CHECK(std::isnan(eval_at(q, -2.0)));
  CHECK(eval_at(q, 8.0) == Catch::Approx(8.0));

  // Sound merges do happen: odd inner exponent with integer/half outer.
  CHECK(canonicalize(a, a.pow(a.pow(x, Rat(3)), Rat(3))) == a.pow(x, Rat(9)));
  CHECK(canonicalize(a, a.pow(a.pow(x, Rat(3)), Rat(1, 2))) == a.pow(x, Rat(3, 2)));
}

TEST_CASE("canonicalize: preserves value on random expressions") {
  RandomExprRig rig;
  std::mt19937 rng(77);
  int checked = 0;
  for (int i = 0; i < 400 && checked < 250; ++i) {
    ExprId e = rig.gen_value(rng, 4);
    ExprId c = canonicalize(rig.arena, e);
    for (int t = 0; t < 8; ++t) {
      rig.randomize(rng);
      int64_t pix = std::uniform_int_distribution<int64_t>(0, RandomExprRig::W - 1)(rng);
      if (!testsup::env_all_finite(rig.arena, e, rig.env(pix))) continue;
      double v0 = eval_expr(rig.arena, e, rig.env(pix));
      double v1 = eval_expr(rig.arena, c, rig.env(pix));
      double scale = std::max({1.0, std::fabs(v0), std::fabs(v1)});
      INFO("expr:\n" << rig.arena.dump(e));
      REQUIRE(std::fabs(v0 - v1) <= 1e-12 * scale);
      ++checked;
    }
  }
  CHECK(checked >= 250);
}

TEST_CASE("factor_horner: goldens") {
  ExprArena a;
  ExprId w = a.unknown(0, 0, Access::stencil(0));
  ExprId x = a.unknown(0, 0, Access::stencil(1));
  ExprId y = a.unknown(0, 1, Access::stencil(0));
  ExprId z = a.unknown(0, 1, Access::stencil(1));
  ExprId q = a.array(0, 0, Access::stencil(0));

  // w*x + w*y -> w*(x + y)
  ExprId e1 = canonicalize(a, a.add2(a.mul2(w, x), a.mul2(w, y)));
  CHECK(factor_horner(a, e1) == a.product({w, a.sum({x, y})}));

  // Boolean factors win even when outnumbered.
  ExprId b = a.inbounds(Access::stencil(1));
  ExprId e2 = canonicalize(a, a.sum({a.mul2(b, x), a.mul2(b, y), a.mul2(x, z)}));
  ExprId f2 = factor_horner(a, e2);
  CHECK(f2 == a.sum({a.product({b, a.sum({x, y})}), a.product({x, z})}));

  // Nested pull: w*x*y + w*x*z + w*q -> w*(x*(y + z) + q)
  ExprId e3 = canonicalize(
      a, a.sum({a.product({w, x, y}), a.product({w, x, z}), a.mul2(w, q)}));
  ExprId f3 = factor_horner(a, e3);
  CHECK(f3 == a.product({w, a.sum({a.product({x, a.sum({y, z})}), q})}));

  // Exponent pull: x^2*y + x*z -> x*(x*y + z)
  ExprId e4 = canonicalize(a, a.add2(a.product({x, x, y}), a.mul2(x, z)));
  ExprId f4 = factor_horner(a, e4);
  CHECK(f4 == a.product({x, a.sum({a.product({x, y}), z})}));

  // Nothing shared: unchanged.
  ExprId e5 = canonicalize(a, a.add2(a.mul2(x, y), a.mul2(w, z)));
  CHECK(factor_horner(a, e5) == e5);
}

TEST_CASE("factor_horner: never increases multiplications, preserves value") {
  RandomExprRig rig;
  std::mt19937 rng(99);
  int value_checks = 0;
  for (int i = 0; i < 300; ++i) {
    ExprId e = rig.gen_value(rng, 4);
    ExprId c = canonicalize(rig.arena, e);
    ExprId f = factor_horner(rig.arena, c);
    REQUIRE(testsup::mult_count(rig.arena, f) <= testsup::mult_count(rig.arena, c));
    for (int t = 0; t < 4; ++t) {
      rig.randomize(rng);
      int64_t pix = std::uniform_int_distribution<int64_t>(0, RandomExprRig::W - 1)(rng);
      if (!testsup::env_all_finite(rig.arena, e, rig.env(pix))) continue;
      double v0 = eval_expr(rig.arena, c, rig.env(pix));
      double v1 = eval_expr(rig.arena, f, rig.env(pix));
      double scale = std::max({1.0, std::fabs(v0), std::fabs(v1)});
      INFO("expr:\n" << rig.arena.dump(c));
      REQUIRE(std::fabs(v0 - v1) <= 1e-12 * scale);
      ++value_checks;
    }
  }
  CHECK(value_checks >= 300);
}

TEST_CASE("lower_conditions: select becomes a guarded reduction") {
  ExprArena a;
  ExprId x0 = a.unknown(0, 0, Access::stencil(0));
  ExprId x1 = a.unknown(0, 0, Access::stencil(1));
  ExprId ib = a.inbounds(Access::stencil(1));

  ConditionedIR cir = lower_conditions(a, a.select(ib, a.sub2(x1, x0), a.constant(0)));
  REQUIRE(cir.pairs.size() == 1);
  REQUIRE(cir.pairs[0].conds.size() == 1);
  CHECK(cir.pairs[0].conds[0] == ib);
  CHECK(cir.pairs[0].root == canonicalize(a, a.sub2(x1, x0)));
}

TEST_CASE("lower_conditions: terms sharing a guard merge into one pair") {
  ExprArena a;
  ExprId x0 = a.unknown(0, 0, Access::stencil(0));
  ExprId x1 = a.unknown(0, 0, Access::stencil(1));
  ExprId ib = a.inbounds(Access::stencil(1));

  ExprId e = a.add2(a.select(ib, a.mul2(x0, x0), a.constant(0)),
                    a.select(ib, x1, a.constant(0)));
  ConditionedIR cir = lower_conditions(a, e);
  REQUIRE(cir.pairs.size() == 1);
  REQUIRE(cir.pairs[0].conds == std::vector<ExprId>{ib});
  CHECK(cir.pairs[0].root == canonicalize(a, a.add2(a.mul2(x0, x0), x1)));
}

TEST_CASE("lower_conditions: unguarded polynomial is a single bare pair") {
  ExprArena a;
  ExprId x0 = a.unknown(0, 0, Access::stencil(0));
  ExprId e = a.add2(a.mul2(x0, x0), a.constant(2));
  ConditionedIR cir = lower_conditions(a, e);
  REQUIRE(cir.pairs.size() == 1);
  CHECK(cir.pairs[0].conds.empty());
  CHECK(cir.pairs[0].root == canonicalize(a, e));
}

TEST_CASE("lower_conditions: nested selects conjoin, in-bounds guards first") {
  ExprArena a;
  ExprId x0 = a.unknown(0, 0, Access::stencil(0));
  ExprId lt = a.compare(CmpOp::kLt, x0, a.constant(3));
  ExprId ib = a.inbounds(Access::stencil(1));

  // Nested selects: both conditions guard the inner term.
  ConditionedIR cir =
      lower_conditions(a, a.select(lt, a.select(ib, x0, a.constant(0)), a.constant(0)));
  REQUIRE(cir.pairs.size() == 1);
  REQUIRE(cir.pairs[0].conds.size() == 2);
  CHECK(cir.pairs[0].conds[0] == ib);  // InBounds ordered before the compare
  CHECK(cir.pairs[0].conds[1] == lt);
  CHECK(cir.pairs[0].root == x0);

  // An explicit conjunction splits into unit guards the same way.
  ConditionedIR cir2 =
      lower_conditions(a, a.select(a.logical(BoolFn::kAnd, {lt, ib}), x0, a.constant(0)));
  REQUIRE(cir2.pairs.size() == 1);
  REQUIRE(cir2.pairs[0].conds.size() == 2);
  CHECK(cir2.pairs[0].conds[0] == ib);
  CHECK(cir2.pairs[0].conds[1] == lt);
  CHECK(cir2.pairs[0].root == x0);
}

TEST_CASE("lower_conditions: non-zero else branch splits into two pairs") {
  ExprArena a;
  ExprId x0 = a.unknown(0, 0, Access::stencil(0));
  ExprId x1 = a.unknown(0, 0, Access::stencil(1));
  ExprId c = a.compare(CmpOp::kLt, x0, x1);

  ConditionedIR cir = lower_conditions(a, a.select(c, x0, x1));
  REQUIRE(cir.pairs.size() == 2);
  ExprId nc = a.logical(BoolFn::kNot, {c});
  bool saw_then = false, saw_else = false;
  for (const ConditionedPair& p : cir.pairs) {
    REQUIRE(p.conds.size() == 1);
    if (p.conds[0] == c) {
      CHECK(p.root == x0);
      saw_then = true;
    } else if (p.conds[0] == nc) {
      CHECK(p.root == x1);
      saw_else = true;
    }
  }
  CHECK(saw_then);
  CHECK(saw_else);
}

TEST_CASE("lower_conditions: bare boolean energy keeps unit root") {
  ExprArena a;
  ExprId x0 = a.unknown(0, 0, Access::stencil(0));
  ExprId c = a.compare(CmpOp::kGt, x0, a.constant(0));
  ConditionedIR cir = lower_conditions(a, c);
  REQUIRE(cir.pairs.size() == 1);
  CHECK(cir.pairs[0].conds == std::vector<ExprId>{c});
  CHECK(cir.pairs[0].root == a.constant(1));
}

TEST_CASE("lower_conditions: guards skip roots without touching their reads") {
  RandomExprRig rig;
  ExprArena& a = rig.arena;
  ExprId x1 = a.unknown(0, 0, Access::stencil(1));
  ExprId ib = a.inbounds(Access::stencil(1));
  ExprId e = a.select(ib, a.mul2(x1, x1), a.constant(0));
  ConditionedIR cir = lower_conditions(a, e);

  std::mt19937 rng(5);
  rig.randomize(rng);

  // Interior pixel: matches direct evaluation.
  auto env_in = rig.env(2);
  CHECK(eval_conditioned<double>(a, cir, env_in) == eval_expr(a, e, env_in));

  // Last pixel: the x(+1) read would be out of bounds; the guard must skip
  // the root entirely, so the trap counter stays at zero.
  size_t oob = 0;
  auto env_edge = rig.env(RandomExprRig::W - 1, &oob);
  double v = eval_conditioned<double>(a, cir, env_edge);
  CHECK(v == 0.0);
  CHECK(oob == 0);
}

TEST_CASE("lower_conditions: value preserved on random expressions") {
  RandomExprRig rig;
  std::mt19937 rng(2024);
  int checked = 0;
  for (int i = 0; i < 250; ++i) {
    ExprId e = rig.gen_value(rng, 4);
    ConditionedIR cir = lower_conditions(rig.arena, e);
    for (int t = 0; t < 4; ++t) {
      rig.randomize(rng);
      int64_t pix = std::uniform_int_distribution<int64_t>(0, RandomExprRig::W - 1)(rng);
      if (!testsup::env_all_finite(rig.arena, e, rig.env(pix))) continue;
      auto env = rig.env(pix);
      double v0 = eval_expr(rig.arena, e, env);
      double v1 = eval_conditioned<double>(rig.arena, cir, env);
      double scale = std::max({1.0, std::fabs(v0), std::fabs(v1)});
      INFO("expr:\n" << rig.arena.dump(e));
      REQUIRE(std::fabs(v0 - v1) <= 1e-12 * scale);
      ++checked;
    }
  }
  CHECK(checked >= 250);
}
