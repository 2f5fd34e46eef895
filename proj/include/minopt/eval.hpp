#pragma once

#include <cmath>
#include <span>
#include <unordered_map>
#include <vector>

#include "minopt/problem.hpp"

namespace minopt {

// A bound view of one field's storage: channel-interleaved values over the
// field's own domain. Also used by the kernel executor, so the interpreter and
// compiled programs share one out-of-bounds rule (reads outside return 0).
template <class Real>
struct FieldView {
  const Real* data = nullptr;
  int channels = 1;
  std::array<int64_t, 3> shape{1, 1, 1};
  int nd = 1;
};

// Evaluation context for one element (a pixel of a grid domain, or one
// hyperedge). `oob_count`, when set, is bumped on every out-of-bounds read —
// the trapping sampler used by guard-safety tests.
template <class Real>
struct EvalEnv {
  std::span<const double> params;
  std::vector<FieldView<Real>> unknowns;
  std::vector<FieldView<Real>> arrays;
  std::vector<FieldView<Real>> computeds;
  std::vector<FieldView<Real>> pfields;

  std::array<int64_t, 3> domain_shape{1, 1, 1};
  int domain_nd = 1;
  std::array<int64_t, 3> pix{0, 0, 0};
  std::span<const uint64_t> edge{};

  size_t* oob_count = nullptr;

  Real read(const FieldView<Real>& f, const Access& acc, int channel) const {
    int64_t elem;
    if (acc.graph) {
      elem = int64_t(edge[size_t(acc.slot)]);
    } else {
      std::array<int64_t, 3> c{0, 0, 0};
      for (int a = 0; a < f.nd; ++a) c[a] = pix[a] + acc.off[a];
      if (!in_shape(f.shape, f.nd, c)) {
        if (oob_count) ++*oob_count;
        return Real(0);
      }
      elem = linear_index(f.shape, f.nd, c);
    }
    return f.data[elem * f.channels + channel];
  }

  bool inbounds(const Access& acc) const {
    std::array<int64_t, 3> c{0, 0, 0};
    for (int a = 0; a < domain_nd; ++a) c[a] = pix[a] + acc.off[a];
    return in_shape(domain_shape, domain_nd, c);
  }
};

// Reference interpreter. Evaluates each DAG node once (memoized), n-ary
// operators left to right in stored child order — the identical association
// the compiled kernels use, so the two paths agree bitwise per element.
template <class Real>
class Evaluator {
 public:
  Evaluator(const ExprArena& arena, const EvalEnv<Real>& env) : arena_(arena), env_(env) {}

  Real eval(ExprId id) {
    auto it = memo_.find(id);
    if (it != memo_.end()) return it->second;
    Real v = compute(id);
    memo_.emplace(id, v);
    return v;
  }

 private:
  Real compute(ExprId id) {
    const ExprNode& n = arena_.at(id);
    switch (n.kind) {
      case ExprKind::kConst: return Real(n.cval);
      case ExprKind::kParam: return Real(env_.params[size_t(n.field)]);
      case ExprKind::kIndex: return Real(env_.pix[size_t(n.field)]);
      case ExprKind::kUnknown: return env_.read(env_.unknowns[size_t(n.field)], n.acc, n.channel);
      case ExprKind::kArray: return env_.read(env_.arrays[size_t(n.field)], n.acc, n.channel);
      case ExprKind::kComputed: return env_.read(env_.computeds[size_t(n.field)], n.acc, n.channel);
      case ExprKind::kP: return env_.read(env_.pfields[size_t(n.field)], n.acc, n.channel);
      case ExprKind::kSum: {
        Real acc = eval(n.kids[0]);
        for (size_t i = 1; i < n.kids.size(); ++i) acc += eval(n.kids[i]);
        return acc;
      }
      case ExprKind::kProduct: {
        Real acc = eval(n.kids[0]);
        for (size_t i = 1; i < n.kids.size(); ++i) acc *= eval(n.kids[i]);
        return acc;
      }
      case ExprKind::kPow: return pow_eval(eval(n.kids[0]), n.expo.num, n.expo.den);
      case ExprKind::kUnary: {
        Real x = eval(n.kids[0]);
        switch (UnaryFn(n.sub)) {
          case UnaryFn::kSqrt: return std::sqrt(x);
          case UnaryFn::kSin: return std::sin(x);
          case UnaryFn::kCos: return std::cos(x);
          case UnaryFn::kExp: return std::exp(x);
          case UnaryFn::kLog: return std::log(x);
          case UnaryFn::kAbs: return std::fabs(x);
          case UnaryFn::kAtan: return std::atan(x);
        }
        return Real(0);
      }
      case ExprKind::kCompare: {
        Real a = eval(n.kids[0]);
        Real b = eval(n.kids[1]);
        bool r = false;
        switch (CmpOp(n.sub)) {
          case CmpOp::kEq: r = a == b; break;
          case CmpOp::kNe: r = a != b; break;
          case CmpOp::kLt: r = a < b; break;
          case CmpOp::kLe: r = a <= b; break;
          case CmpOp::kGt: r = a > b; break;
          case CmpOp::kGe: r = a >= b; break;
        }
        return Real(r ? 1 : 0);
      }
      case ExprKind::kBool: {
        switch (BoolFn(n.sub)) {
          case BoolFn::kNot: return Real(eval(n.kids[0]) == Real(0) ? 1 : 0);
          case BoolFn::kAnd: {
            bool r = true;
            for (ExprId k : n.kids) r = (eval(k) != Real(0)) && r;
            return Real(r ? 1 : 0);
          }
          case BoolFn::kOr: {
            bool r = false;
            for (ExprId k : n.kids) r = (eval(k) != Real(0)) || r;
            return Real(r ? 1 : 0);
          }
        }
        return Real(0);
      }
      case ExprKind::kInBounds: return Real(env_.inbounds(n.acc) ? 1 : 0);
      case ExprKind::kSelect:
        // Strict guarded evaluation: the untaken branch is never touched.
        return eval(n.kids[0]) != Real(0) ? eval(n.kids[1]) : eval(n.kids[2]);
    }
    return Real(0);
  }

  const ExprArena& arena_;
  const EvalEnv<Real>& env_;
  std::unordered_map<ExprId, Real> memo_;
};

template <class Real>
inline Real eval_expr(const ExprArena& arena, ExprId id, const EvalEnv<Real>& env) {
  return Evaluator<Real>(arena, env).eval(id);
}

}  // namespace minopt
