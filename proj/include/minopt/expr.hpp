#pragma once

#include <algorithm>
#include <array>
#include <cstring>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "minopt/common.hpp"

namespace minopt {

using ExprId = uint32_t;
inline constexpr ExprId kNoExpr = 0xffffffffu;

// Kind order doubles as the canonical sort rank for Sum/Product children.
enum class ExprKind : uint8_t {
  kConst,
  kParam,
  kIndex,     // grid coordinate along one axis
  kUnknown,
  kArray,
  kComputed,
  kP,         // symbolic direction vector, mirrors an unknown field
  kSum,       // n-ary
  kProduct,   // n-ary
  kPow,       // rational constant exponent
  kUnary,
  kCompare,
  kBool,      // and/or n-ary, not unary
  kInBounds,
  kSelect,    // select(cond, if_true, if_false), strict branch evaluation
};

enum class UnaryFn : uint8_t { kSqrt, kSin, kCos, kExp, kLog, kAbs, kAtan };
enum class CmpOp : uint8_t { kEq, kNe, kLt, kLe, kGt, kGe };
enum class BoolFn : uint8_t { kAnd, kOr, kNot };

// Where a field access points: constant stencil offsets on a grid domain, or a
// slot of the enclosing hyperedge on a graph domain.
struct Access {
  bool graph = false;
  std::array<int16_t, 3> off{0, 0, 0};
  int16_t slot = 0;

  static Access stencil(int i, int j = 0, int k = 0) {
    Access a;
    a.off = {int16_t(i), int16_t(j), int16_t(k)};
    return a;
  }
  static Access at_slot(int s) {
    Access a;
    a.graph = true;
    a.slot = int16_t(s);
    return a;
  }
  bool origin() const { return !graph && off[0] == 0 && off[1] == 0 && off[2] == 0; }
  friend bool operator==(const Access& a, const Access& b) {
    return a.graph == b.graph && a.off == b.off && a.slot == b.slot;
  }
};

struct ExprNode {
  ExprKind kind;
  uint8_t sub = 0;       // UnaryFn / CmpOp / BoolFn payload
  int32_t field = -1;    // table index (param/unknown/array/computed/P); axis for kIndex
  int32_t channel = 0;
  Access acc{};
  double cval = 0;       // kConst
  Rat expo{1, 1};        // kPow
  std::vector<ExprId> kids;

  // Derived, filled in by the arena on intern.
  uint64_t hash = 0;
  bool boolean = false;      // value is always exactly 0 or 1
  bool has_unknown = false;  // contains an Unknown or Computed access

  bool payload_equal(const ExprNode& o) const {
    return kind == o.kind && sub == o.sub && field == o.field && channel == o.channel &&
           acc == o.acc && hash_double(cval) == hash_double(o.cval) && expo == o.expo &&
           kids == o.kids;
  }
};

// Hash-consed expression DAG. Structurally identical nodes share one id, so
// equality of subtrees is pointer equality and derivative/canonicalization
// caches can key on ExprId.
class ExprArena {
 public:
  const ExprNode& at(ExprId id) const { return nodes_[id]; }
  size_t size() const { return nodes_.size(); }

  ExprId constant(double v) {
    ExprNode n;
    n.kind = ExprKind::kConst;
    n.cval = v;
    return intern(std::move(n));
  }
  ExprId param(int idx) {
    ExprNode n;
    n.kind = ExprKind::kParam;
    n.field = idx;
    return intern(std::move(n));
  }
  ExprId index(int axis) {
    ExprNode n;
    n.kind = ExprKind::kIndex;
    n.field = axis;
    return intern(std::move(n));
  }
  ExprId unknown(int field, int ch, Access a) { return access_node(ExprKind::kUnknown, field, ch, a); }
  ExprId array(int field, int ch, Access a) { return access_node(ExprKind::kArray, field, ch, a); }
  ExprId computed(int field, int ch, Access a) { return access_node(ExprKind::kComputed, field, ch, a); }
  ExprId pfield(int field, int ch, Access a) { return access_node(ExprKind::kP, field, ch, a); }

  ExprId sum(std::vector<ExprId> kids) {
    if (kids.empty()) return constant(0);
    sort_kids(kids);
    if (kids.size() == 1) return kids[0];
    if (all_const(kids)) {
      double acc = 0;
      for (ExprId k : kids) acc += nodes_[k].cval;
      return constant(acc);
    }
    ExprNode n;
    n.kind = ExprKind::kSum;
    n.kids = std::move(kids);
    return intern(std::move(n));
  }

  ExprId product(std::vector<ExprId> kids) {
    if (kids.empty()) return constant(1);
    sort_kids(kids);
    for (ExprId k : kids)
      if (nodes_[k].kind == ExprKind::kConst && nodes_[k].cval == 0) return constant(0);
    if (kids.size() == 1) return kids[0];
    if (all_const(kids)) {
      double acc = 1;
      for (ExprId k : kids) acc *= nodes_[k].cval;
      return constant(acc);
    }
    ExprNode n;
    n.kind = ExprKind::kProduct;
    n.kids = std::move(kids);
    return intern(std::move(n));
  }

  ExprId pow(ExprId base, Rat e) {
    if (e.num == 0) return constant(1);
    if (e == Rat(1)) return base;
    if (nodes_[base].kind == ExprKind::kConst)
      return constant(pow_eval(nodes_[base].cval, e.num, e.den));
    ExprNode n;
    n.kind = ExprKind::kPow;
    n.expo = e;
    n.kids = {base};
    return intern(std::move(n));
  }

  ExprId unary(UnaryFn f, ExprId a) {
    if (nodes_[a].kind == ExprKind::kConst) {
      double x = nodes_[a].cval;
      switch (f) {
        case UnaryFn::kSqrt: return constant(std::sqrt(x));
        case UnaryFn::kSin: return constant(std::sin(x));
        case UnaryFn::kCos: return constant(std::cos(x));
        case UnaryFn::kExp: return constant(std::exp(x));
        case UnaryFn::kLog: return constant(std::log(x));
        case UnaryFn::kAbs: return constant(std::fabs(x));
        case UnaryFn::kAtan: return constant(std::atan(x));
      }
    }
    ExprNode n;
    n.kind = ExprKind::kUnary;
    n.sub = uint8_t(f);
    n.kids = {a};
    return intern(std::move(n));
  }

  ExprId compare(CmpOp op, ExprId a, ExprId b) {
    if (nodes_[a].kind == ExprKind::kConst && nodes_[b].kind == ExprKind::kConst) {
      double x = nodes_[a].cval, y = nodes_[b].cval;
      bool r = false;
      switch (op) {
        case CmpOp::kEq: r = x == y; break;
        case CmpOp::kNe: r = x != y; break;
        case CmpOp::kLt: r = x < y; break;
        case CmpOp::kLe: r = x <= y; break;
        case CmpOp::kGt: r = x > y; break;
        case CmpOp::kGe: r = x >= y; break;
      }
      return constant(r ? 1 : 0);
    }
    ExprNode n;
    n.kind = ExprKind::kCompare;
    n.sub = uint8_t(op);
    n.kids = {a, b};
    return intern(std::move(n));
  }

  ExprId logical(BoolFn f, std::vector<ExprId> kids) {
    for (ExprId k : kids)
      check(nodes_[k].boolean, Err::kNonBooleanPredicate, "logical op on non-boolean operand");
    if (f == BoolFn::kNot) {
      check(kids.size() == 1, Err::kArityMismatch, "not() takes one argument");
      const ExprNode& a = nodes_[kids[0]];
      if (a.kind == ExprKind::kConst) return constant(a.cval == 0 ? 1 : 0);
      if (a.kind == ExprKind::kBool && BoolFn(a.sub) == BoolFn::kNot) return a.kids[0];
      ExprNode n;
      n.kind = ExprKind::kBool;
      n.sub = uint8_t(f);
      n.kids = std::move(kids);
      return intern(std::move(n));
    }
    sort_kids(kids);
    if (kids.size() == 1) return kids[0];
    if (all_const(kids)) {
      bool anyt = false, allt = true;
      for (ExprId k : kids) {
        if (nodes_[k].cval != 0) anyt = true; else allt = false;
      }
      return constant(f == BoolFn::kAnd ? (allt ? 1 : 0) : (anyt ? 1 : 0));
    }
    ExprNode n;
    n.kind = ExprKind::kBool;
    n.sub = uint8_t(f);
    n.kids = std::move(kids);
    return intern(std::move(n));
  }

  ExprId inbounds(Access a) {
    check(!a.graph, Err::kGraphDomain, "inbounds() is a stencil construct");
    if (a.origin()) return constant(1);  // kernels only ever run on in-domain elements
    ExprNode n;
    n.kind = ExprKind::kInBounds;
    n.acc = a;
    return intern(std::move(n));
  }

  ExprId select(ExprId cond, ExprId t, ExprId f) {
    check(nodes_[cond].boolean, Err::kNonBooleanPredicate, "select condition must be boolean");
    const ExprNode& c = nodes_[cond];
    if (c.kind == ExprKind::kConst) return c.cval != 0 ? t : f;
    if (t == f) return t;
    ExprNode n;
    n.kind = ExprKind::kSelect;
    n.kids = {cond, t, f};
    return intern(std::move(n));
  }

  // Convenience combinators used throughout lowering and differentiation.
  ExprId add2(ExprId a, ExprId b) { return sum({a, b}); }
  ExprId mul2(ExprId a, ExprId b) { return product({a, b}); }
  ExprId neg(ExprId a) { return product({constant(-1), a}); }
  ExprId sub2(ExprId a, ExprId b) { return sum({a, neg(b)}); }
  ExprId div2(ExprId a, ExprId b) { return product({a, pow(b, Rat(-1))}); }

  // Debug dump: topologically ordered, one node per line, ids renumbered from 0
  // so the text is independent of interning history.
  std::string dump(std::span<const ExprId> roots) const {
    std::vector<ExprId> order;
    std::unordered_map<ExprId, int> local;
    for (ExprId r : roots) topo(r, order, local);
    std::ostringstream os;
    for (size_t i = 0; i < order.size(); ++i) {
      const ExprNode& n = nodes_[order[i]];
      os << i << ' ' << kind_name(n);
      switch (n.kind) {
        case ExprKind::kConst: os << ' ' << format_const(n.cval); break;
        case ExprKind::kParam: case ExprKind::kIndex: os << ' ' << n.field; break;
        case ExprKind::kUnknown: case ExprKind::kArray:
        case ExprKind::kComputed: case ExprKind::kP:
          os << ' ' << n.field << ' ' << n.channel << ' ' << access_str(n.acc);
          break;
        case ExprKind::kInBounds: os << ' ' << access_str(n.acc); break;
        case ExprKind::kPow:
          os << ' ' << local[n.kids[0]] << ' ' << n.expo.num << '/' << n.expo.den;
          break;
        default:
          for (ExprId k : n.kids) os << ' ' << local[k];
          break;
      }
      os << '\n';
    }
    return os.str();
  }
  std::string dump(ExprId root) const { return dump(std::span<const ExprId>(&root, 1)); }

  // Memo tables living with the DAG they describe.
  std::unordered_map<ExprId, ExprId>& canon_memo() { return canon_memo_; }
  std::unordered_map<uint64_t, ExprId>& deriv_memo() { return deriv_memo_; }

 private:
  ExprId access_node(ExprKind kind, int field, int ch, Access a) {
    check(field >= 0, Err::kInternal, "negative field index");
    ExprNode n;
    n.kind = kind;
    n.field = field;
    n.channel = ch;
    n.acc = a;
    return intern(std::move(n));
  }

  bool all_const(const std::vector<ExprId>& kids) const {
    for (ExprId k : kids)
      if (nodes_[k].kind != ExprKind::kConst) return false;
    return true;
  }

  // Canonical child order: (kind rank, structural hash, id). Total and
  // deterministic for a fixed build sequence.
  void sort_kids(std::vector<ExprId>& kids) const {
    std::sort(kids.begin(), kids.end(), [&](ExprId a, ExprId b) {
      const ExprNode& x = nodes_[a];
      const ExprNode& y = nodes_[b];
      if (x.kind != y.kind) return x.kind < y.kind;
      if (x.hash != y.hash) return x.hash < y.hash;
      return a < b;
    });
  }

  ExprId intern(ExprNode n) {
    n.hash = structural_hash(n);
    n.boolean = compute_boolean(n);
    n.has_unknown = compute_has_unknown(n);
    auto [it, inserted] = buckets_.try_emplace(n.hash);
    for (ExprId cand : it->second)
      if (nodes_[cand].payload_equal(n)) return cand;
    ExprId id = ExprId(nodes_.size());
    it->second.push_back(id);
    nodes_.push_back(std::move(n));
    return id;
  }

  uint64_t structural_hash(const ExprNode& n) const {
    uint64_t h = hash_mix(0x6d696e6f7074ull, uint64_t(n.kind));
    h = hash_mix(h, n.sub);
    h = hash_mix(h, uint64_t(uint32_t(n.field)));
    h = hash_mix(h, uint64_t(uint32_t(n.channel)));
    h = hash_mix(h, uint64_t(n.acc.graph));
    for (int16_t o : n.acc.off) h = hash_mix(h, uint64_t(uint16_t(o)));
    h = hash_mix(h, uint64_t(uint16_t(n.acc.slot)));
    h = hash_mix(h, hash_double(n.cval));
    h = hash_mix(h, uint64_t(n.expo.num));
    h = hash_mix(h, uint64_t(n.expo.den));
    for (ExprId k : n.kids) h = hash_mix(h, nodes_[k].hash);
    return h;
  }

  bool compute_boolean(const ExprNode& n) const {
    switch (n.kind) {
      case ExprKind::kConst: return n.cval == 0 || n.cval == 1;
      case ExprKind::kCompare: case ExprKind::kBool: case ExprKind::kInBounds: return true;
      case ExprKind::kProduct: {
        for (ExprId k : n.kids)
          if (!nodes_[k].boolean) return false;
        return true;
      }
      case ExprKind::kPow:
        return nodes_[n.kids[0]].boolean && n.expo.num > 0;
      case ExprKind::kSelect:
        return nodes_[n.kids[1]].boolean && nodes_[n.kids[2]].boolean;
      default: return false;
    }
  }

  bool compute_has_unknown(const ExprNode& n) const {
    if (n.kind == ExprKind::kUnknown || n.kind == ExprKind::kComputed) return true;
    for (ExprId k : n.kids)
      if (nodes_[k].has_unknown) return true;
    return false;
  }

  void topo(ExprId id, std::vector<ExprId>& order, std::unordered_map<ExprId, int>& local) const {
    if (local.count(id)) return;
    for (ExprId k : nodes_[id].kids) topo(k, order, local);
    local[id] = int(order.size());
    order.push_back(id);
  }

  static std::string format_const(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  }

  static std::string access_str(const Access& a) {
    std::ostringstream os;
    if (a.graph) {
      os << "[slot " << a.slot << ']';
    } else {
      os << '(' << a.off[0] << ' ' << a.off[1] << ' ' << a.off[2] << ')';
    }
    return os.str();
  }

  static const char* kind_name(const ExprNode& n) {
    switch (n.kind) {
      case ExprKind::kConst: return "const";
      case ExprKind::kParam: return "param";
      case ExprKind::kIndex: return "index";
      case ExprKind::kUnknown: return "unknown";
      case ExprKind::kArray: return "array";
      case ExprKind::kComputed: return "computed";
      case ExprKind::kP: return "p";
      case ExprKind::kSum: return "sum";
      case ExprKind::kProduct: return "product";
      case ExprKind::kPow: return "pow";
      case ExprKind::kUnary:
        switch (UnaryFn(n.sub)) {
          case UnaryFn::kSqrt: return "sqrt";
          case UnaryFn::kSin: return "sin";
          case UnaryFn::kCos: return "cos";
          case UnaryFn::kExp: return "exp";
          case UnaryFn::kLog: return "log";
          case UnaryFn::kAbs: return "abs";
          case UnaryFn::kAtan: return "atan";
        }
        return "unary";
      case ExprKind::kCompare:
        switch (CmpOp(n.sub)) {
          case CmpOp::kEq: return "eq";
          case CmpOp::kNe: return "neq";
          case CmpOp::kLt: return "less";
          case CmpOp::kLe: return "leq";
          case CmpOp::kGt: return "greater";
          case CmpOp::kGe: return "geq";
        }
        return "cmp";
      case ExprKind::kBool:
        switch (BoolFn(n.sub)) {
          case BoolFn::kAnd: return "and";
          case BoolFn::kOr: return "or";
          case BoolFn::kNot: return "not";
        }
        return "bool";
      case ExprKind::kInBounds: return "inbounds";
      case ExprKind::kSelect: return "select";
    }
    return "?";
  }

  std::vector<ExprNode> nodes_;
  std::unordered_map<uint64_t, std::vector<ExprId>> buckets_;
  std::unordered_map<ExprId, ExprId> canon_memo_;
  std::unordered_map<uint64_t, ExprId> deriv_memo_;
};

}  // namespace minopt
