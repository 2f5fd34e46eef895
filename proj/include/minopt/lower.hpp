#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "minopt/autodiff.hpp"
#include "minopt/parser.hpp"
#include "minopt/problem.hpp"

namespace minopt {

namespace detail {

// Parse a numeric literal's source text into an exact rational, so pow
// exponents like 2.5 become 5/2 and reach the kernel as ipow(sqrt(x), 5).
inline bool text_to_rat(const std::string& text, Rat& out) {
  long long mant = 0;
  int frac_digits = 0;
  long long exp10 = 0;
  size_t i = 0;
  bool seen_digit = false, in_frac = false;
  for (; i < text.size(); ++i) {
    char c = text[i];
    if (c >= '0' && c <= '9') {
      if (mant > (1ll << 56)) return false;  // too precise for exact handling
      mant = mant * 10 + (c - '0');
      if (in_frac) ++frac_digits;
      seen_digit = true;
    } else if (c == '.') {
      if (in_frac) return false;
      in_frac = true;
    } else if (c == 'e' || c == 'E') {
      ++i;
      break;
    } else {
      return false;
    }
  }
  if (i < text.size()) {
    bool neg = false;
    if (text[i] == '+' || text[i] == '-') {
      neg = text[i] == '-';
      ++i;
    }
    long long e = 0;
    for (; i < text.size(); ++i) {
      if (text[i] < '0' || text[i] > '9') return false;
      e = e * 10 + (text[i] - '0');
      if (e > 18) return false;
    }
    exp10 = neg ? -e : e;
  }
  if (!seen_digit) return false;
  long long net = exp10 - frac_digits;
  if (net > 18 || net < -18) return false;
  long long num = mant, den = 1;
  for (long long k = 0; k < net; ++k) num *= 10;
  for (long long k = 0; k < -net; ++k) den *= 10;
  out = Rat(num, den);
  return true;
}

enum class NameKind : uint8_t { kDim, kParam, kUnknown, kArray, kComputed, kGraph };

class Lowerer {
 public:
  ProblemSpec run(const ProblemAst& ast) {
    for (const AstStmt& s : ast.stmts) {
      switch (s.kind) {
        case StmtKind::kDim:
          declare(s.name, NameKind::kDim, int(spec_.dims.size()), s.line);
          spec_.dims.push_back({s.name, s.ival});
          break;
        case StmtKind::kParam:
          declare(s.name, NameKind::kParam, int(spec_.params.size()), s.line);
          spec_.params.push_back(s.name);
          break;
        case StmtKind::kUnknown:
          declare(s.name, NameKind::kUnknown, int(spec_.unknowns.size()), s.line);
          spec_.unknowns.push_back({s.name, resolve_domain(s), s.channels});
          break;
        case StmtKind::kArray:
          declare(s.name, NameKind::kArray, int(spec_.arrays.size()), s.line);
          spec_.arrays.push_back({s.name, resolve_domain(s), s.channels});
          break;
        case StmtKind::kGraph:
          declare(s.name, NameKind::kGraph, int(spec_.graphs.size()), s.line);
          spec_.graphs.push_back({s.name, s.slots});
          break;
        case StmtKind::kComputed: lower_computed(s); break;
        case StmtKind::kEnergy: lower_energy(s); break;
        case StmtKind::kExclude: lower_exclude(s); break;
      }
    }
    return std::move(spec_);
  }

 private:
  using Vec = std::vector<ExprId>;

  struct StmtCtx {
    int line = 0;
    bool allow_slots = true;   // computed/exclude expressions are grid-only
    int used_graph = -1;       // enforced single graph per statement
    const std::string* self = nullptr;  // computed array being defined
  };

  // ---- declarations -------------------------------------------------------

  void declare(const std::string& name, NameKind kind, int index, int line) {
    check(!names_.count(name), Err::kSyntax,
          "'" + name + "' redeclared at line " + std::to_string(line));
    names_.emplace(name, std::make_pair(kind, index));
  }

  GridDomain resolve_domain(const AstStmt& s) {
    check(s.dim_names.size() >= 1 && s.dim_names.size() <= 3, Err::kSyntax,
          "fields take 1 to 3 dims (line " + std::to_string(s.line) + ")");
    GridDomain d;
    for (const std::string& dn : s.dim_names) {
      auto it = names_.find(dn);
      check(it != names_.end() && it->second.first == NameKind::kDim,
            Err::kUndeclaredIdentifier,
            "'" + dn + "' is not a declared dim (line " + std::to_string(s.line) + ")");
      d.dims.push_back(it->second.second);
    }
    return d;
  }

  // ---- expression lowering ------------------------------------------------

  ExprArena& a() { return spec_.arena; }

  static std::string at(const AstExpr& e) {
    return " at line " + std::to_string(e.line) + ":" + std::to_string(e.col);
  }

  ExprId scalar(const Vec& v, const AstExpr& e) {
    check(v.size() == 1, Err::kShapeMismatch,
          "expected a scalar, got width " + std::to_string(v.size()) + at(e));
    return v[0];
  }

  void broadcast(Vec& x, Vec& y, const AstExpr& e) {
    if (x.size() == y.size()) return;
    if (x.size() == 1)
      x.assign(y.size(), x[0]);
    else if (y.size() == 1)
      y.assign(x.size(), y[0]);
    else
      fail(Err::kShapeMismatch, "operand widths " + std::to_string(x.size()) + " and " +
                                    std::to_string(y.size()) + " do not match" + at(e));
  }

  long long const_int(const AstExpr& e, Err code, const char* what) {
    double v;
    if (e.kind == AstKind::kNum) {
      v = e.num;
    } else if (e.kind == AstKind::kNeg && e.args[0]->kind == AstKind::kNum) {
      v = -e.args[0]->num;
    } else {
      fail(code, std::string(what) + " must be an integer literal" + at(e));
    }
    long long i = (long long)v;
    check(double(i) == v, code, std::string(what) + " must be an integer" + at(e));
    return i;
  }

  Vec lower_expr(const AstExpr& e, StmtCtx& cx) {
    switch (e.kind) {
      case AstKind::kNum: return {a().constant(e.num)};
      case AstKind::kIdent: {
        auto it = names_.find(e.text);
        check(it != names_.end(), Err::kUndeclaredIdentifier, "'" + e.text + "'" + at(e));
        check(it->second.first == NameKind::kParam, Err::kArityMismatch,
              "'" + e.text + "' must be accessed with (...)" + at(e));
        return {a().param(it->second.second)};
      }
      case AstKind::kSlotRef:
        fail(Err::kSyntax, "graph slot reference only valid as an access argument" + at(e));
      case AstKind::kNeg: {
        Vec v = lower_expr(*e.args[0], cx);
        for (ExprId& c : v) c = a().neg(c);
        return v;
      }
      case AstKind::kBinary: {
        Vec x = lower_expr(*e.args[0], cx);
        Vec y = lower_expr(*e.args[1], cx);
        broadcast(x, y, e);
        for (size_t i = 0; i < x.size(); ++i) {
          switch (e.op) {
            case '+': x[i] = a().add2(x[i], y[i]); break;
            case '-': x[i] = a().sub2(x[i], y[i]); break;
            case '*': x[i] = a().mul2(x[i], y[i]); break;
            case '/': x[i] = a().div2(x[i], y[i]); break;
          }
        }
        return x;
      }
      case AstKind::kChannel: {
        Vec v = lower_expr(*e.args[0], cx);
        check(e.channel >= 0 && size_t(e.channel) < v.size(), Err::kIndexOutOfRange,
              "channel " + std::to_string(e.channel) + " of width-" +
                  std::to_string(v.size()) + " value" + at(e));
        return {v[size_t(e.channel)]};
      }
      case AstKind::kAccess: return lower_access(e, cx);
      case AstKind::kCall: return lower_call(e, cx);
    }
    fail(Err::kInternal, "unhandled AST node");
  }

  Vec lower_access(const AstExpr& e, StmtCtx& cx) {
    auto it = names_.find(e.text);
    if (it == names_.end()) {
      if (cx.self && e.text == *cx.self)
        fail(Err::kCyclicComputedArray, "'" + e.text + "' refers to itself" + at(e));
      fail(Err::kUndeclaredIdentifier, "'" + e.text + "'" + at(e));
    }
    auto [kind, idx] = it->second;
    check(kind == NameKind::kUnknown || kind == NameKind::kArray || kind == NameKind::kComputed,
          Err::kArityMismatch, "'" + e.text + "' is not an accessible field" + at(e));

    const GridDomain* dom = kind == NameKind::kUnknown ? &spec_.unknowns[idx].domain
                            : kind == NameKind::kArray ? &spec_.arrays[idx].domain
                                                       : &spec_.computed[idx].domain;
    int channels = kind == NameKind::kUnknown ? spec_.unknowns[idx].channels
                   : kind == NameKind::kArray ? spec_.arrays[idx].channels
                                              : int(spec_.computed[idx].value.size());

    Access acc;
    if (e.args.size() == 1 && e.args[0]->kind == AstKind::kSlotRef) {
      const AstExpr& sr = *e.args[0];
      check(cx.allow_slots, Err::kGraphDomain,
            "graph slot access is not allowed in this context" + at(e));
      auto git = names_.find(sr.text);
      check(git != names_.end() && git->second.first == NameKind::kGraph,
            Err::kUndeclaredIdentifier, "'" + sr.text + "' is not a declared graph" + at(e));
      int g = git->second.second;
      check(cx.used_graph < 0 || cx.used_graph == g, Err::kMixedDomain,
            "energy mixes hyperedges of two graphs" + at(e));
      cx.used_graph = g;
      int slot = -1;
      for (size_t s = 0; s < spec_.graphs[g].slots.size(); ++s)
        if (spec_.graphs[g].slots[s] == sr.slot) slot = int(s);
      check(slot >= 0, Err::kUndeclaredIdentifier,
            "graph '" + sr.text + "' has no slot '" + sr.slot + "'" + at(e));
      check(dom->dims.size() == 1, Err::kGraphDomain,
            "'" + e.text + "' must be declared over one dim to be graph-indexed" + at(e));
      acc = Access::at_slot(slot);
    } else {
      check(e.args.size() == dom->dims.size(), Err::kArityMismatch,
            "'" + e.text + "' takes " + std::to_string(dom->dims.size()) + " offsets, got " +
                std::to_string(e.args.size()) + at(e));
      for (size_t i = 0; i < e.args.size(); ++i) {
        long long off = const_int(*e.args[i], Err::kNonConstantOffset, "stencil offset");
        check(off > -32768 && off < 32768, Err::kNonConstantOffset, "offset too large" + at(e));
        acc.off[i] = int16_t(off);
      }
    }

    Vec v;
    for (int ch = 0; ch < channels; ++ch) {
      switch (kind) {
        case NameKind::kUnknown: v.push_back(a().unknown(idx, ch, acc)); break;
        case NameKind::kArray: v.push_back(a().array(idx, ch, acc)); break;
        default: v.push_back(a().computed(idx, ch, acc)); break;
      }
    }
    return v;
  }

  Vec lower_call(const AstExpr& e, StmtCtx& cx) {
    const std::string& f = e.text;
    auto arity = [&](size_t n) {
      check(e.args.size() == n, Err::kArityMismatch,
            f + "() takes " + std::to_string(n) + " arguments" + at(e));
    };

    if (f == "sqrt" || f == "sin" || f == "cos" || f == "exp" || f == "log" || f == "abs" ||
        f == "atan") {
      arity(1);
      UnaryFn fn = f == "sqrt"  ? UnaryFn::kSqrt
                   : f == "sin" ? UnaryFn::kSin
                   : f == "cos" ? UnaryFn::kCos
                   : f == "exp" ? UnaryFn::kExp
                   : f == "log" ? UnaryFn::kLog
                   : f == "abs" ? UnaryFn::kAbs
                                : UnaryFn::kAtan;
      Vec v = lower_expr(*e.args[0], cx);
      for (ExprId& c : v) c = a().unary(fn, c);
      return v;
    }
    if (f == "pow") {
      arity(2);
      Rat q;
      const AstExpr& pe = *e.args[1];
      bool neg = pe.kind == AstKind::kNeg;
      const AstExpr& lit = neg ? *pe.args[0] : pe;
      check(lit.kind == AstKind::kNum && text_to_rat(lit.text, q), Err::kNonConstantExponent,
            "pow exponent must be a numeric literal" + at(pe));
      if (neg) q = Rat(-q.num, q.den);
      Vec v = lower_expr(*e.args[0], cx);
      for (ExprId& c : v) c = a().pow(c, q);
      return v;
    }
    if (f == "select") {
      arity(3);
      Vec c = lower_expr(*e.args[0], cx);
      Vec t = lower_expr(*e.args[1], cx);
      Vec fv = lower_expr(*e.args[2], cx);
      broadcast(t, fv, e);
      if (c.size() != t.size()) {
        check(c.size() == 1, Err::kShapeMismatch, "select condition width mismatch" + at(e));
        c.assign(t.size(), c[0]);
      }
      Vec out(t.size());
      for (size_t i = 0; i < t.size(); ++i) out[i] = a().select(c[i], t[i], fv[i]);
      return out;
    }
    if (f == "inbounds") {
      check(e.args.size() >= 1 && e.args.size() <= 3, Err::kArityMismatch,
            "inbounds() takes 1 to 3 offsets" + at(e));
      Access acc;
      for (size_t i = 0; i < e.args.size(); ++i)
        acc.off[i] = int16_t(const_int(*e.args[i], Err::kNonConstantOffset, "inbounds offset"));
      return {a().inbounds(acc)};
    }
    if (f == "index") {
      arity(1);
      long long ax = const_int(*e.args[0], Err::kNonConstantOffset, "index axis");
      check(ax >= 0 && ax < 3, Err::kIndexOutOfRange, "index axis out of range" + at(e));
      return {a().index(int(ax))};
    }
    if (f == "dot") {
      arity(2);
      Vec x = lower_expr(*e.args[0], cx);
      Vec y = lower_expr(*e.args[1], cx);
      check(x.size() == y.size(), Err::kShapeMismatch, "dot() width mismatch" + at(e));
      std::vector<ExprId> terms;
      for (size_t i = 0; i < x.size(); ++i) terms.push_back(a().mul2(x[i], y[i]));
      return {a().sum(std::move(terms))};
    }
    if (f == "vec") {
      check(!e.args.empty(), Err::kArityMismatch, "vec() needs arguments" + at(e));
      Vec out;
      for (const AstExprPtr& arg : e.args) {
        Vec v = lower_expr(*arg, cx);
        out.insert(out.end(), v.begin(), v.end());
      }
      return out;
    }
    if (f == "slice") {
      arity(3);
      Vec v = lower_expr(*e.args[0], cx);
      long long lo = const_int(*e.args[1], Err::kIndexOutOfRange, "slice bound");
      long long hi = const_int(*e.args[2], Err::kIndexOutOfRange, "slice bound");
      check(lo >= 0 && lo < hi && size_t(hi) <= v.size(), Err::kIndexOutOfRange,
            "slice [" + std::to_string(lo) + "," + std::to_string(hi) + ") of width " +
                std::to_string(v.size()) + at(e));
      return Vec(v.begin() + lo, v.begin() + hi);
    }
    if (f == "normalize") {
      arity(1);
      Vec v = lower_expr(*e.args[0], cx);
      std::vector<ExprId> terms;
      for (ExprId c : v) terms.push_back(a().mul2(c, c));
      ExprId inv_len = a().pow(a().sum(std::move(terms)), Rat(-1, 2));
      for (ExprId& c : v) c = a().mul2(c, inv_len);
      return v;
    }
    if (f == "eq" || f == "neq" || f == "less" || f == "leq" || f == "greater" || f == "geq") {
      arity(2);
      CmpOp op = f == "eq"      ? CmpOp::kEq
                 : f == "neq"   ? CmpOp::kNe
                 : f == "less"  ? CmpOp::kLt
                 : f == "leq"   ? CmpOp::kLe
                 : f == "greater" ? CmpOp::kGt
                                  : CmpOp::kGe;
      Vec x = lower_expr(*e.args[0], cx);
      Vec y = lower_expr(*e.args[1], cx);
      broadcast(x, y, e);
      for (size_t i = 0; i < x.size(); ++i) x[i] = a().compare(op, x[i], y[i]);
      return x;
    }
    if (f == "and" || f == "or") {
      check(e.args.size() >= 2, Err::kArityMismatch, f + "() takes 2+ arguments" + at(e));
      std::vector<Vec> vs;
      size_t width = 1;
      for (const AstExprPtr& arg : e.args) {
        vs.push_back(lower_expr(*arg, cx));
        if (vs.back().size() != 1) {
          check(width == 1 || width == vs.back().size(), Err::kShapeMismatch,
                f + "() width mismatch" + at(e));
          width = vs.back().size();
        }
      }
      Vec out(width);
      for (size_t i = 0; i < width; ++i) {
        std::vector<ExprId> kids;
        for (Vec& v : vs) kids.push_back(v.size() == 1 ? v[0] : v[i]);
        out[i] = a().logical(f == "and" ? BoolFn::kAnd : BoolFn::kOr, std::move(kids));
      }
      return out;
    }
    if (f == "not") {
      arity(1);
      Vec v = lower_expr(*e.args[0], cx);
      for (ExprId& c : v) c = a().logical(BoolFn::kNot, {c});
      return v;
    }
    if (f == "rotate2d") {
      arity(2);
      ExprId ang = scalar(lower_expr(*e.args[0], cx), *e.args[0]);
      Vec v = lower_expr(*e.args[1], cx);
      check(v.size() == 2, Err::kShapeMismatch, "rotate2d() expects a width-2 vector" + at(e));
      ExprId c = a().unary(UnaryFn::kCos, ang);
      ExprId s = a().unary(UnaryFn::kSin, ang);
      return {a().sub2(a().mul2(c, v[0]), a().mul2(s, v[1])),
              a().add2(a().mul2(s, v[0]), a().mul2(c, v[1]))};
    }
    if (f == "rotate3d") {
      arity(2);
      Vec ang = lower_expr(*e.args[0], cx);
      Vec v = lower_expr(*e.args[1], cx);
      check(ang.size() == 3 && v.size() == 3, Err::kShapeMismatch,
            "rotate3d() expects width-3 angles and vector" + at(e));
      // R = Rz(c) * Ry(b) * Rx(a), extrinsic x-y-z Euler angles.
      ExprId sa = a().unary(UnaryFn::kSin, ang[0]), ca = a().unary(UnaryFn::kCos, ang[0]);
      ExprId sb = a().unary(UnaryFn::kSin, ang[1]), cb = a().unary(UnaryFn::kCos, ang[1]);
      ExprId sc = a().unary(UnaryFn::kSin, ang[2]), cc = a().unary(UnaryFn::kCos, ang[2]);
      auto mul3 = [&](ExprId x, ExprId y, ExprId z) { return a().product({x, y, z}); };
      ExprId r00 = a().mul2(cc, cb);
      ExprId r01 = a().sub2(mul3(cc, sb, sa), a().mul2(sc, ca));
      ExprId r02 = a().add2(mul3(cc, sb, ca), a().mul2(sc, sa));
      ExprId r10 = a().mul2(sc, cb);
      ExprId r11 = a().add2(mul3(sc, sb, sa), a().mul2(cc, ca));
      ExprId r12 = a().sub2(mul3(sc, sb, ca), a().mul2(cc, sa));
      ExprId r20 = a().neg(sb);
      ExprId r21 = a().mul2(cb, sa);
      ExprId r22 = a().mul2(cb, ca);
      auto row = [&](ExprId x, ExprId y, ExprId z) {
        return a().sum({a().mul2(x, v[0]), a().mul2(y, v[1]), a().mul2(z, v[2])});
      };
      return {row(r00, r01, r02), row(r10, r11, r12), row(r20, r21, r22)};
    }
    fail(Err::kInternal, "unhandled builtin '" + f + "'");
  }

  // ---- domain inference ---------------------------------------------------

  struct DomainScan {
    bool slot = false;
    bool index = false;
    bool inbounds_node = false;
    std::vector<GridDomain> grids;  // deduped
  };

  void scan_domain(ExprId id, DomainScan& out, std::unordered_map<ExprId, bool>& seen) {
    if (seen.count(id)) return;
    seen[id] = true;
    const ExprNode& n = a().at(id);
    switch (n.kind) {
      case ExprKind::kUnknown:
      case ExprKind::kArray:
      case ExprKind::kComputed: {
        if (n.acc.graph) {
          out.slot = true;
        } else {
          const GridDomain& d = n.kind == ExprKind::kUnknown ? spec_.unknowns[n.field].domain
                                : n.kind == ExprKind::kArray ? spec_.arrays[n.field].domain
                                                             : spec_.computed[n.field].domain;
          if (std::find(out.grids.begin(), out.grids.end(), d) == out.grids.end())
            out.grids.push_back(d);
        }
        break;
      }
      case ExprKind::kIndex: out.index = true; break;
      case ExprKind::kInBounds: out.inbounds_node = true; break;
      default: break;
    }
    for (ExprId k : n.kids) scan_domain(k, out, seen);
  }

  DomainScan scan_domain(ExprId root) {
    DomainScan s;
    std::unordered_map<ExprId, bool> seen;
    scan_domain(root, s, seen);
    return s;
  }

  // ---- statements ---------------------------------------------------------

  void lower_computed(const AstStmt& s) {
    StmtCtx cx{s.line, /*allow_slots=*/false, -1, &s.name};
    Vec value = lower_expr(*s.expr, cx);
    DomainScan scan;
    std::unordered_map<ExprId, bool> seen;
    for (ExprId c : value) scan_domain(c, scan, seen);
    check(!scan.grids.empty(), Err::kDomainMismatch,
          "cannot infer the domain of computed '" + s.name + "' (line " +
              std::to_string(s.line) + ")");
    check(scan.grids.size() == 1, Err::kDomainMismatch,
          "computed '" + s.name + "' reads fields of different domains (line " +
              std::to_string(s.line) + ")");
    check(!scan.inbounds_node, Err::kGraphDomain,
          "inbounds() is not allowed in computed definitions (line " + std::to_string(s.line) +
              ")");

    ComputedArray ca;
    ca.name = s.name;
    ca.mode = s.cache_mode ? ComputedMode::kCache : ComputedMode::kFreeze;
    ca.domain = scan.grids[0];
    ca.value = value;

    // The array must be registered before differentiating so chain rules
    // through *earlier* computed arrays resolve, and partials of this one are
    // appended as extra stored channels.
    int idx = int(spec_.computed.size());
    declare(s.name, NameKind::kComputed, idx, s.line);
    spec_.computed.push_back(std::move(ca));
    ComputedArray& reg = spec_.computed[idx];

    if (reg.mode == ComputedMode::kCache) {
      for (int ch = 0; ch < int(reg.value.size()); ++ch) {
        for (ExprId var : dependent_unknowns(a(), spec_, reg.value[ch])) {
          ExprId d = derivative(a(), reg.value[ch], var, &spec_);
          const ExprNode& vn = a().at(var);
          if (a().at(d).kind == ExprKind::kConst && a().at(d).cval == 0) continue;
          ComputedPartial p;
          p.channel = ch;
          p.ufield = vn.field;
          p.uchannel = vn.channel;
          p.off = vn.acc.off;
          p.expr = d;
          p.store_channel = int(reg.value.size() + reg.partials.size());
          reg.partials.push_back(p);
        }
      }
    }
  }

  void lower_energy(const AstStmt& s) {
    StmtCtx cx{s.line, /*allow_slots=*/true, -1, nullptr};
    Vec comps = lower_expr(*s.expr, cx);
    for (ExprId root : comps) {
      DomainScan scan = scan_domain(root);
      EnergyTemplate t;
      t.expr = root;
      if (scan.slot) {
        check(scan.grids.empty(), Err::kMixedDomain,
              "energy mixes stencil and hyperedge accesses (line " + std::to_string(s.line) +
                  ")");
        check(!scan.index && !scan.inbounds_node, Err::kGraphDomain,
              "index()/inbounds() are stencil constructs (line " + std::to_string(s.line) + ")");
        t.kind = DomainKind::kGraph;
        t.graph = cx.used_graph;
      } else {
        check(!scan.grids.empty(), Err::kDomainMismatch,
              "cannot infer the domain of an energy with no field accesses (line " +
                  std::to_string(s.line) + ")");
        check(scan.grids.size() == 1, Err::kDomainMismatch,
              "energy reads fields of different domains (line " + std::to_string(s.line) + ")");
        t.kind = DomainKind::kGrid;
        t.domain = scan.grids[0];
      }
      spec_.energies.push_back(t);
    }
  }

  void lower_exclude(const AstStmt& s) {
    StmtCtx cx{s.line, /*allow_slots=*/false, -1, nullptr};
    ExprId pred = scalar(lower_expr(*s.expr, cx), *s.expr);
    check(a().at(pred).boolean, Err::kNonBooleanPredicate,
          "exclude predicate must be boolean (line " + std::to_string(s.line) + ")");
    DomainScan scan = scan_domain(pred);
    GridDomain dom;
    if (!scan.grids.empty()) {
      check(scan.grids.size() == 1, Err::kDomainMismatch,
            "exclude predicate reads fields of different domains (line " +
                std::to_string(s.line) + ")");
      dom = scan.grids[0];
    } else {
      // Pure index predicates (border rings): usable when all unknowns share
      // one domain.
      check(!spec_.unknowns.empty(), Err::kDomainMismatch,
            "exclude with no unknowns declared (line " + std::to_string(s.line) + ")");
      dom = spec_.unknowns[0].domain;
      for (const UnknownField& u : spec_.unknowns)
        check(u.domain == dom, Err::kDomainMismatch,
              "cannot infer the exclude domain (line " + std::to_string(s.line) + ")");
    }
    bool on_unknown = false;
    for (const UnknownField& u : spec_.unknowns) on_unknown |= (u.domain == dom);
    check(on_unknown, Err::kDomainMismatch,
          "exclude domain matches no unknown field (line " + std::to_string(s.line) + ")");

    // Multiple exclude statements on one domain: a pixel is excluded if any
    // predicate holds.
    for (ExcludeRule& r : spec_.excludes) {
      if (r.domain == dom) {
        r.predicate = a().logical(BoolFn::kOr, {r.predicate, pred});
        return;
      }
    }
    spec_.excludes.push_back({dom, pred});
  }

  ProblemSpec spec_;
  std::unordered_map<std::string, std::pair<NameKind, int>> names_;
};

}  // namespace detail

inline ProblemSpec lower(const ProblemAst& ast) { return detail::Lowerer().run(ast); }

// Parse + lower in one step; the usual entry point.
inline ProblemSpec compile_source(std::string_view src) { return lower(parse(src)); }

// Post-lowering validation of structural invariants that only make sense with
// the whole problem in view: stencil offsets and index() axes must fit each
// template's rank, and graph templates may not use grid-only constructs.
inline void validate(const ProblemSpec& spec) {
  auto walk = [&](ExprId root, auto&& visit) {
    std::vector<ExprId> stack{root};
    std::unordered_map<ExprId, bool> seen;
    while (!stack.empty()) {
      ExprId id = stack.back();
      stack.pop_back();
      if (seen.count(id)) continue;
      seen[id] = true;
      visit(spec.arena.at(id));
      for (ExprId k : spec.arena.at(id).kids) stack.push_back(k);
    }
  };
  for (const EnergyTemplate& t : spec.energies) {
    int rank = t.kind == DomainKind::kGrid ? int(t.domain.dims.size()) : 0;
    walk(t.expr, [&](const ExprNode& n) {
      if (t.kind == DomainKind::kGraph) {
        check(n.kind != ExprKind::kIndex && n.kind != ExprKind::kInBounds, Err::kGraphDomain,
              "graph energies cannot use index()/inbounds()");
        return;
      }
      if (n.kind == ExprKind::kIndex)
        check(n.field < rank, Err::kDomainMismatch, "index() axis exceeds the domain rank");
      if (n.kind == ExprKind::kInBounds || (!n.acc.graph && (n.kind == ExprKind::kUnknown ||
                                                             n.kind == ExprKind::kArray ||
                                                             n.kind == ExprKind::kComputed))) {
        for (int ax = rank; ax < 3; ++ax)
          check(n.acc.off[ax] == 0, Err::kDomainMismatch, "offset exceeds the domain rank");
      }
    });
  }
  for (const ComputedArray& ca : spec.computed) {
    int rank = int(ca.domain.dims.size());
    auto visit = [&](const ExprNode& n) {
      if (n.kind == ExprKind::kIndex)
        check(n.field < rank, Err::kDomainMismatch, "index() axis exceeds the domain rank");
    };
    for (ExprId v : ca.value) walk(v, visit);
    for (const ComputedPartial& p : ca.partials) walk(p.expr, visit);
  }
}

}  // namespace minopt
