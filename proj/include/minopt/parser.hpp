#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "minopt/ast.hpp"

namespace minopt {

namespace detail {

enum class Tok : uint8_t {
  kEnd, kIdent, kNumber,
  kLParen, kRParen, kLBracket, kRBracket,
  kComma, kColon, kEquals, kDot,
  kPlus, kMinus, kStar, kSlash,
};

struct Token {
  Tok kind = Tok::kEnd;
  std::string text;
  double num = 0;
  int line = 1, col = 1;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) { advance(); }

  const Token& peek() const { return tok_; }
  Token take() {
    Token t = tok_;
    advance();
    return t;
  }

 private:
  void advance() {
    skip_ws();
    tok_ = Token{};
    tok_.line = line_;
    tok_.col = col_;
    if (pos_ >= src_.size()) {
      tok_.kind = Tok::kEnd;
      return;
    }
    char c = src_[pos_];
    if (std::isalpha(uint8_t(c)) || c == '_') {
      size_t start = pos_;
      while (pos_ < src_.size() && (std::isalnum(uint8_t(src_[pos_])) || src_[pos_] == '_')) bump();
      tok_.kind = Tok::kIdent;
      tok_.text = std::string(src_.substr(start, pos_ - start));
      return;
    }
    if (std::isdigit(uint8_t(c)) || (c == '.' && pos_ + 1 < src_.size() && std::isdigit(uint8_t(src_[pos_ + 1])))) {
      size_t start = pos_;
      while (pos_ < src_.size() && (std::isdigit(uint8_t(src_[pos_])) || src_[pos_] == '.')) bump();
      if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
        size_t mark = pos_;
        bump();
        if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) bump();
        if (pos_ < src_.size() && std::isdigit(uint8_t(src_[pos_]))) {
          while (pos_ < src_.size() && std::isdigit(uint8_t(src_[pos_]))) bump();
        } else {
          pos_ = mark;  // not an exponent after all
        }
      }
      tok_.kind = Tok::kNumber;
      tok_.text = std::string(src_.substr(start, pos_ - start));
      tok_.num = std::stod(tok_.text);
      return;
    }
    bump();
    switch (c) {
      case '(': tok_.kind = Tok::kLParen; return;
      case ')': tok_.kind = Tok::kRParen; return;
      case '[': tok_.kind = Tok::kLBracket; return;
      case ']': tok_.kind = Tok::kRBracket; return;
      case ',': tok_.kind = Tok::kComma; return;
      case ':': tok_.kind = Tok::kColon; return;
      case '=': tok_.kind = Tok::kEquals; return;
      case '.': tok_.kind = Tok::kDot; return;
      case '+': tok_.kind = Tok::kPlus; return;
      case '-': tok_.kind = Tok::kMinus; return;
      case '*': tok_.kind = Tok::kStar; return;
      case '/': tok_.kind = Tok::kSlash; return;
    }
    fail(Err::kSyntax, "unexpected character '" + std::string(1, c) + "' at line " +
                           std::to_string(line_) + ":" + std::to_string(col_ - 1));
  }

  void skip_ws() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') bump();
      } else if (std::isspace(uint8_t(c))) {
        bump();
      } else {
        break;
      }
    }
  }

  void bump() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  std::string_view src_;
  size_t pos_ = 0;
  int line_ = 1, col_ = 1;
  Token tok_;
};

inline bool is_builtin(const std::string& n) {
  static const char* names[] = {
      "select", "inbounds", "sqrt", "sin", "cos", "exp", "log", "abs", "atan", "pow",
      "dot", "vec", "index", "eq", "neq", "less", "leq", "greater", "geq",
      "and", "or", "not", "rotate2d", "rotate3d", "slice", "normalize",
  };
  for (const char* b : names)
    if (n == b) return true;
  return false;
}

inline bool is_keyword(const std::string& n) {
  static const char* names[] = {"dim", "param", "unknown", "array", "graph",
                                "computed", "energy", "exclude", "freeze", "cache"};
  for (const char* k : names)
    if (n == k) return true;
  return false;
}

class Parser {
 public:
  explicit Parser(std::string_view src) : lex_(src) {}

  ProblemAst parse_program() {
    ProblemAst ast;
    while (lex_.peek().kind != Tok::kEnd) {
      Token head = expect(Tok::kIdent, "statement keyword");
      AstStmt s;
      s.line = head.line;
      if (head.text == "dim") {
        s.kind = StmtKind::kDim;
        s.name = decl_name();
        Token n = expect(Tok::kNumber, "dim extent");
        s.ival = (long long)n.num;
        check(double(s.ival) == n.num && s.ival >= 1, Err::kSyntax,
              "dim extent must be a positive integer at line " + std::to_string(n.line));
      } else if (head.text == "param") {
        s.kind = StmtKind::kParam;
        s.name = decl_name();
      } else if (head.text == "unknown" || head.text == "array") {
        s.kind = head.text == "unknown" ? StmtKind::kUnknown : StmtKind::kArray;
        s.name = decl_name();
        expect(Tok::kLBracket, "'['");
        s.dim_names.push_back(expect(Tok::kIdent, "dim name").text);
        while (lex_.peek().kind == Tok::kComma) {
          lex_.take();
          s.dim_names.push_back(expect(Tok::kIdent, "dim name").text);
        }
        expect(Tok::kRBracket, "']'");
        if (lex_.peek().kind == Tok::kColon) {
          lex_.take();
          Token n = expect(Tok::kNumber, "channel count");
          s.channels = int(n.num);
          check(double(s.channels) == n.num && s.channels >= 1, Err::kSyntax,
                "channel count must be a positive integer at line " + std::to_string(n.line));
        }
      } else if (head.text == "graph") {
        s.kind = StmtKind::kGraph;
        s.name = decl_name();
        expect(Tok::kLParen, "'('");
        s.slots.push_back(expect(Tok::kIdent, "slot name").text);
        while (lex_.peek().kind == Tok::kComma) {
          lex_.take();
          s.slots.push_back(expect(Tok::kIdent, "slot name").text);
        }
        expect(Tok::kRParen, "')'");
      } else if (head.text == "computed") {
        s.kind = StmtKind::kComputed;
        s.name = decl_name();
        Token mode = expect(Tok::kIdent, "freeze|cache");
        check(mode.text == "freeze" || mode.text == "cache", Err::kSyntax,
              "expected 'freeze' or 'cache' at line " + std::to_string(mode.line));
        s.cache_mode = mode.text == "cache";
        expect(Tok::kEquals, "'='");
        s.expr = parse_expr();
      } else if (head.text == "energy") {
        s.kind = StmtKind::kEnergy;
        s.expr = parse_expr();
      } else if (head.text == "exclude") {
        s.kind = StmtKind::kExclude;
        s.expr = parse_expr();
      } else {
        fail(Err::kSyntax, "unknown statement '" + head.text + "' at line " +
                               std::to_string(head.line));
      }
      ast.stmts.push_back(std::move(s));
    }
    return ast;
  }

  AstExprPtr parse_expr() { return parse_addsub(); }

 private:
  std::string decl_name() {
    Token t = expect(Tok::kIdent, "name");
    check(!is_keyword(t.text) && !is_builtin(t.text), Err::kSyntax,
          "'" + t.text + "' is reserved (line " + std::to_string(t.line) + ")");
    return t.text;
  }

  AstExprPtr parse_addsub() {
    AstExprPtr lhs = parse_muldiv();
    while (lex_.peek().kind == Tok::kPlus || lex_.peek().kind == Tok::kMinus) {
      Token op = lex_.take();
      auto node = make(AstKind::kBinary, op);
      node->op = op.kind == Tok::kPlus ? '+' : '-';
      node->args.push_back(std::move(lhs));
      node->args.push_back(parse_muldiv());
      lhs = std::move(node);
    }
    return lhs;
  }

  AstExprPtr parse_muldiv() {
    AstExprPtr lhs = parse_unary();
    while (lex_.peek().kind == Tok::kStar || lex_.peek().kind == Tok::kSlash) {
      Token op = lex_.take();
      auto node = make(AstKind::kBinary, op);
      node->op = op.kind == Tok::kStar ? '*' : '/';
      node->args.push_back(std::move(lhs));
      node->args.push_back(parse_unary());
      lhs = std::move(node);
    }
    return lhs;
  }

  AstExprPtr parse_unary() {
    if (lex_.peek().kind == Tok::kMinus) {
      Token t = lex_.take();
      auto node = make(AstKind::kNeg, t);
      node->args.push_back(parse_unary());
      return node;
    }
    return parse_postfix();
  }

  AstExprPtr parse_postfix() {
    AstExprPtr e = parse_primary();
    while (lex_.peek().kind == Tok::kLBracket) {
      Token t = lex_.take();
      Token n = expect(Tok::kNumber, "channel index");
      check(double(int(n.num)) == n.num && n.num >= 0, Err::kSyntax,
            "channel index must be a non-negative integer at line " + std::to_string(n.line));
      expect(Tok::kRBracket, "']'");
      auto node = make(AstKind::kChannel, t);
      node->channel = int(n.num);
      node->args.push_back(std::move(e));
      e = std::move(node);
    }
    return e;
  }

  AstExprPtr parse_primary() {
    const Token& p = lex_.peek();
    if (p.kind == Tok::kNumber) {
      Token t = lex_.take();
      auto node = make(AstKind::kNum, t);
      node->num = t.num;
      node->text = t.text;
      return node;
    }
    if (p.kind == Tok::kLParen) {
      lex_.take();
      AstExprPtr e = parse_expr();
      expect(Tok::kRParen, "')'");
      return e;
    }
    if (p.kind == Tok::kIdent) {
      Token id = lex_.take();
      check(!is_keyword(id.text), Err::kSyntax,
            "keyword '" + id.text + "' used in expression at line " + std::to_string(id.line));
      if (lex_.peek().kind == Tok::kDot) {
        lex_.take();
        Token slot = expect(Tok::kIdent, "slot name");
        auto node = make(AstKind::kSlotRef, id);
        node->text = id.text;
        node->slot = slot.text;
        return node;
      }
      if (lex_.peek().kind == Tok::kLParen) {
        lex_.take();
        auto node = make(is_builtin(id.text) ? AstKind::kCall : AstKind::kAccess, id);
        node->text = id.text;
        if (lex_.peek().kind != Tok::kRParen) {
          node->args.push_back(parse_expr());
          while (lex_.peek().kind == Tok::kComma) {
            lex_.take();
            node->args.push_back(parse_expr());
          }
        }
        expect(Tok::kRParen, "')'");
        return node;
      }
      auto node = make(AstKind::kIdent, id);
      node->text = id.text;
      return node;
    }
    fail(Err::kSyntax, "unexpected token at line " + std::to_string(p.line) + ":" +
                           std::to_string(p.col));
  }

  AstExprPtr make(AstKind k, const Token& t) {
    auto e = std::make_unique<AstExpr>();
    e->kind = k;
    e->line = t.line;
    e->col = t.col;
    return e;
  }

  Token expect(Tok k, const char* what) {
    const Token& p = lex_.peek();
    check(p.kind == k, Err::kSyntax,
          std::string("expected ") + what + " at line " + std::to_string(p.line) + ":" +
              std::to_string(p.col));
    return lex_.take();
  }

  Lexer lex_;
};

}  // namespace detail

inline ProblemAst parse(std::string_view source) {
  return detail::Parser(source).parse_program();
}

}  // namespace minopt
