#pragma once

#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "minopt/common.hpp"

namespace minopt {

// Surface syntax tree. Kept faithful to the source (subtraction, division,
// literal text) so pretty-print -> reparse is the identity; canonical rewrites
// happen at lowering.
struct AstExpr;
using AstExprPtr = std::unique_ptr<AstExpr>;

enum class AstKind : uint8_t {
  kNum,      // literal (text preserved)
  kIdent,    // parameter reference
  kSlotRef,  // GRAPH.slot, only valid as an access argument
  kNeg,
  kBinary,   // + - * /
  kCall,     // builtin call
  kAccess,   // field(indices...)
  kChannel,  // expr[k]
};

struct AstExpr {
  AstKind kind;
  int line = 0, col = 0;

  double num = 0;
  std::string text;   // kNum: literal text; kIdent/kAccess/kCall: name; kSlotRef: graph name
  std::string slot;   // kSlotRef
  char op = 0;        // kBinary
  int channel = 0;    // kChannel
  std::vector<AstExprPtr> args;
};

enum class StmtKind : uint8_t {
  kDim, kParam, kUnknown, kArray, kGraph, kComputed, kEnergy, kExclude,
};

struct AstStmt {
  StmtKind kind;
  int line = 0;
  std::string name;
  long long ival = 0;                  // dim extent
  std::vector<std::string> dim_names;  // unknown/array domains
  int channels = 1;
  std::vector<std::string> slots;      // graph
  bool cache_mode = false;             // computed
  AstExprPtr expr;                     // computed/energy/exclude
};

struct ProblemAst {
  std::vector<AstStmt> stmts;
};

// ---- pretty-printing ----------------------------------------------------

namespace detail {

inline int precedence(char op) { return (op == '+' || op == '-') ? 1 : 2; }

inline void print_expr(const AstExpr& e, std::ostream& os, int parent_prec) {
  switch (e.kind) {
    case AstKind::kNum: os << e.text; break;
    case AstKind::kIdent: os << e.text; break;
    case AstKind::kSlotRef: os << e.text << '.' << e.slot; break;
    case AstKind::kNeg:
      os << '-';
      print_expr(*e.args[0], os, 3);
      break;
    case AstKind::kBinary: {
      int p = precedence(e.op);
      bool paren = p < parent_prec;
      if (paren) os << '(';
      print_expr(*e.args[0], os, p);
      os << ' ' << e.op << ' ';
      // Right operand of - and / needs the stronger context.
      print_expr(*e.args[1], os, (e.op == '-' || e.op == '/') ? p + 1 : p);
      if (paren) os << ')';
      break;
    }
    case AstKind::kCall:
    case AstKind::kAccess: {
      os << e.text << '(';
      for (size_t i = 0; i < e.args.size(); ++i) {
        if (i) os << ", ";
        print_expr(*e.args[i], os, 0);
      }
      os << ')';
      break;
    }
    case AstKind::kChannel:
      print_expr(*e.args[0], os, 3);
      os << '[' << e.channel << ']';
      break;
  }
}

}  // namespace detail

inline std::string to_text(const AstExpr& e) {
  std::ostringstream os;
  detail::print_expr(e, os, 0);
  return os.str();
}

inline std::string to_text(const ProblemAst& ast) {
  std::ostringstream os;
  for (const AstStmt& s : ast.stmts) {
    switch (s.kind) {
      case StmtKind::kDim: os << "dim " << s.name << ' ' << s.ival; break;
      case StmtKind::kParam: os << "param " << s.name; break;
      case StmtKind::kUnknown:
      case StmtKind::kArray: {
        os << (s.kind == StmtKind::kUnknown ? "unknown " : "array ") << s.name << " [";
        for (size_t i = 0; i < s.dim_names.size(); ++i) {
          if (i) os << ", ";
          os << s.dim_names[i];
        }
        os << ']';
        if (s.channels != 1) os << " : " << s.channels;
        break;
      }
      case StmtKind::kGraph: {
        os << "graph " << s.name << " (";
        for (size_t i = 0; i < s.slots.size(); ++i) {
          if (i) os << ", ";
          os << s.slots[i];
        }
        os << ')';
        break;
      }
      case StmtKind::kComputed:
        os << "computed " << s.name << ' ' << (s.cache_mode ? "cache" : "freeze") << " = "
           << to_text(*s.expr);
        break;
      case StmtKind::kEnergy: os << "energy " << to_text(*s.expr); break;
      case StmtKind::kExclude: os << "exclude " << to_text(*s.expr); break;
    }
    os << '\n';
  }
  return os.str();
}

// Structural equality (ignores source locations); backs the round-trip test.
inline bool ast_equal(const AstExpr& a, const AstExpr& b) {
  if (a.kind != b.kind || a.text != b.text || a.slot != b.slot || a.op != b.op ||
      a.channel != b.channel || a.args.size() != b.args.size())
    return false;
  if (a.kind == AstKind::kNum && a.num != b.num) return false;
  for (size_t i = 0; i < a.args.size(); ++i)
    if (!ast_equal(*a.args[i], *b.args[i])) return false;
  return true;
}

inline bool ast_equal(const ProblemAst& a, const ProblemAst& b) {
  if (a.stmts.size() != b.stmts.size()) return false;
  for (size_t i = 0; i < a.stmts.size(); ++i) {
    const AstStmt& x = a.stmts[i];
    const AstStmt& y = b.stmts[i];
    if (x.kind != y.kind || x.name != y.name || x.ival != y.ival ||
        x.dim_names != y.dim_names || x.channels != y.channels || x.slots != y.slots ||
        x.cache_mode != y.cache_mode)
      return false;
    if ((x.expr == nullptr) != (y.expr == nullptr)) return false;
    if (x.expr && !ast_equal(*x.expr, *y.expr)) return false;
  }
  return true;
}

}  // namespace minopt
