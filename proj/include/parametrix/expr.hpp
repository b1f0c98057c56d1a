#pragma once

#include <cctype>
#include <cmath>
#include <memory>
#include <sstream>
#include <string>

#include "parametrix/common.hpp"

namespace parametrix {

// ---------------------------------------------------------------------------
// Coefficient DSL: expressions over variables t, x1..xd with the usual
// precedence (pow > unary > mul/div > add/sub) and calls sin/cos/exp/sqrt/abs.
// Evaluation is total on the declared domain: division by zero, sqrt of a
// negative number and pow of a negative base to a fractional exponent all
// raise evaluation_error instead of producing NaN.
// ---------------------------------------------------------------------------

struct expr_node;
using expr_ptr = std::shared_ptr<const expr_node>;

struct expr_node {
  enum class kind_t { constant, time_var, space_var, unary, binary } kind;
  enum class fn_t { neg, sin, cos, exp, sqrt, abs } fn{};
  double value = 0.0;  // constant
  int index = 0;       // space_var, 1-based
  char op = 0;         // binary: + - * / ^
  expr_ptr a, b;
};

struct CoefficientExpr {
  expr_ptr ast;
};

namespace detail {

struct token {
  enum class type_t { number, ident, op, lparen, rparen, comma, end } type;
  double num = 0.0;
  std::string text;
  char op = 0;
  std::size_t offset = 0;
};

class lexer {
 public:
  explicit lexer(std::string_view src) : src_(src) { advance(); }
  const token& peek() const { return tok_; }
  token next() {
    token t = tok_;
    advance();
    return t;
  }

 private:
  void advance() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    tok_.offset = pos_;
    if (pos_ >= src_.size()) {
      tok_.type = token::type_t::end;
      return;
    }
    const char c = src_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t used = 0;
      try {
        tok_.num = std::stod(std::string(src_.substr(pos_)), &used);
      } catch (const std::exception&) {
        throw syntax_error("malformed number", pos_);
      }
      tok_.type = token::type_t::number;
      pos_ += used;
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t end = pos_;
      while (end < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[end])) || src_[end] == '_'))
        ++end;
      tok_.type = token::type_t::ident;
      tok_.text = std::string(src_.substr(pos_, end - pos_));
      pos_ = end;
      return;
    }
    switch (c) {
      case '+': case '-': case '*': case '/': case '^':
        tok_.type = token::type_t::op;
        tok_.op = c;
        break;
      case '(': tok_.type = token::type_t::lparen; break;
      case ')': tok_.type = token::type_t::rparen; break;
      case ',': tok_.type = token::type_t::comma; break;
      default:
        throw syntax_error(std::string("unexpected character '") + c + "'", pos_);
    }
    ++pos_;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  token tok_;
};

inline expr_ptr make_const(double v) {
  auto n = std::make_shared<expr_node>();
  n->kind = expr_node::kind_t::constant;
  n->value = v;
  return n;
}

inline expr_ptr make_unary(expr_node::fn_t fn, expr_ptr a) {
  auto n = std::make_shared<expr_node>();
  n->kind = expr_node::kind_t::unary;
  n->fn = fn;
  n->a = std::move(a);
  return n;
}

inline expr_ptr make_binary(char op, expr_ptr a, expr_ptr b) {
  auto n = std::make_shared<expr_node>();
  n->kind = expr_node::kind_t::binary;
  n->op = op;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

class parser {
 public:
  explicit parser(std::string_view src) : lex_(src) {}

  expr_ptr parse() {
    expr_ptr e = additive();
    if (lex_.peek().type != token::type_t::end)
      throw syntax_error("trailing input", lex_.peek().offset);
    return e;
  }

 private:
  expr_ptr additive() {
    expr_ptr e = multiplicative();
    while (lex_.peek().type == token::type_t::op &&
           (lex_.peek().op == '+' || lex_.peek().op == '-')) {
      const char op = lex_.next().op;
      e = make_binary(op, e, multiplicative());
    }
    return e;
  }

  expr_ptr multiplicative() {
    expr_ptr e = unary();
    while (lex_.peek().type == token::type_t::op &&
           (lex_.peek().op == '*' || lex_.peek().op == '/')) {
      const char op = lex_.next().op;
      e = make_binary(op, e, unary());
    }
    return e;
  }

  expr_ptr unary() {
    if (lex_.peek().type == token::type_t::op && lex_.peek().op == '-') {
      lex_.next();
      return make_unary(expr_node::fn_t::neg, unary());
    }
    if (lex_.peek().type == token::type_t::op && lex_.peek().op == '+') {
      lex_.next();
      return unary();
    }
    return power();
  }

  expr_ptr power() {
    expr_ptr base = primary();
    if (lex_.peek().type == token::type_t::op && lex_.peek().op == '^') {
      lex_.next();
      // right-associative; a unary sign is allowed in the exponent
      return make_binary('^', base, unary());
    }
    return base;
  }

  expr_ptr primary() {
    token t = lex_.next();
    switch (t.type) {
      case token::type_t::number:
        return make_const(t.num);
      case token::type_t::lparen: {
        expr_ptr e = additive();
        expect_rparen();
        return e;
      }
      case token::type_t::ident:
        return ident(std::move(t));
      default:
        throw syntax_error("expected expression", t.offset);
    }
  }

  expr_ptr ident(token t) {
    if (lex_.peek().type == token::type_t::lparen) {
      lex_.next();
      expr_node::fn_t fn;
      if (t.text == "sin") fn = expr_node::fn_t::sin;
      else if (t.text == "cos") fn = expr_node::fn_t::cos;
      else if (t.text == "exp") fn = expr_node::fn_t::exp;
      else if (t.text == "sqrt") fn = expr_node::fn_t::sqrt;
      else if (t.text == "abs") fn = expr_node::fn_t::abs;
      else throw unknown_identifier("unknown function '" + t.text + "'");
      expr_ptr arg = additive();
      if (lex_.peek().type == token::type_t::comma)
        throw arity_error("function '" + t.text + "' takes one argument");
      expect_rparen();
      return make_unary(fn, arg);
    }
    if (t.text == "t") {
      auto n = std::make_shared<expr_node>();
      n->kind = expr_node::kind_t::time_var;
      return n;
    }
    if (t.text.size() >= 2 && t.text[0] == 'x') {
      bool digits = true;
      for (std::size_t i = 1; i < t.text.size(); ++i)
        digits = digits && std::isdigit(static_cast<unsigned char>(t.text[i]));
      if (digits) {
        const int idx = std::stoi(t.text.substr(1));
        if (idx < 1) throw unknown_identifier("bad variable index in '" + t.text + "'");
        auto n = std::make_shared<expr_node>();
        n->kind = expr_node::kind_t::space_var;
        n->index = idx;
        return n;
      }
    }
    // "x" alone reads as x1 in one-dimensional sources
    if (t.text == "x") {
      auto n = std::make_shared<expr_node>();
      n->kind = expr_node::kind_t::space_var;
      n->index = 1;
      return n;
    }
    throw unknown_identifier("unknown identifier '" + t.text + "'");
  }

  void expect_rparen() {
    token t = lex_.next();
    if (t.type != token::type_t::rparen)
      throw syntax_error("expected ')'", t.offset);
  }

  lexer lex_;
};

}  // namespace detail

inline CoefficientExpr parse_expr(std::string_view source) {
  if (source.empty()) throw syntax_error("empty expression", 0);
  return CoefficientExpr{detail::parser(source).parse()};
}

inline int max_space_index(const expr_ptr& e) {
  if (!e) return 0;
  int m = e->kind == expr_node::kind_t::space_var ? e->index : 0;
  if (e->a) m = std::max(m, max_space_index(e->a));
  if (e->b) m = std::max(m, max_space_index(e->b));
  return m;
}

inline double eval(const CoefficientExpr& expr, double t,
                   std::span<const double> x) {
  struct visitor {
    double t;
    std::span<const double> x;
    double run(const expr_node& n) const {
      switch (n.kind) {
        case expr_node::kind_t::constant: return n.value;
        case expr_node::kind_t::time_var: return t;
        case expr_node::kind_t::space_var:
          if (n.index > static_cast<int>(x.size()))
            throw unknown_identifier("variable x" + std::to_string(n.index) +
                                     " exceeds dimension " +
                                     std::to_string(x.size()));
          return x[n.index - 1];
        case expr_node::kind_t::unary: {
          const double a = run(*n.a);
          switch (n.fn) {
            case expr_node::fn_t::neg: return -a;
            case expr_node::fn_t::sin: return std::sin(a);
            case expr_node::fn_t::cos: return std::cos(a);
            case expr_node::fn_t::exp: return std::exp(a);
            case expr_node::fn_t::abs: return std::abs(a);
            case expr_node::fn_t::sqrt:
              if (a < 0.0) throw evaluation_error("sqrt of negative value");
              return std::sqrt(a);
          }
          throw evaluation_error("corrupt ast");
        }
        case expr_node::kind_t::binary: {
          const double a = run(*n.a), b = run(*n.b);
          switch (n.op) {
            case '+': return a + b;
            case '-': return a - b;
            case '*': return a * b;
            case '/':
              if (b == 0.0) throw evaluation_error("division by zero");
              return a / b;
            case '^':
              if (a < 0.0 && b != std::floor(b))
                throw evaluation_error(
                    "pow of negative base to fractional exponent");
              if (a == 0.0 && b < 0.0)
                throw evaluation_error("pow: zero base, negative exponent");
              return std::pow(a, b);
          }
          throw evaluation_error("corrupt ast");
        }
      }
      throw evaluation_error("corrupt ast");
    }
  };
  return visitor{t, x}.run(*expr.ast);
}

namespace detail {
inline int precedence(const expr_node& n) {
  if (n.kind == expr_node::kind_t::binary) {
    if (n.op == '+' || n.op == '-') return 1;
    if (n.op == '*' || n.op == '/') return 2;
    return 4;  // ^
  }
  if (n.kind == expr_node::kind_t::unary && n.fn == expr_node::fn_t::neg)
    return 3;
  return 5;
}

inline void print_node(std::ostringstream& os, const expr_node& n, int parent) {
  const int prec = precedence(n);
  const bool paren = prec < parent;
  if (paren) os << '(';
  switch (n.kind) {
    case expr_node::kind_t::constant: {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.17g", n.value);
      os << buf;
      break;
    }
    case expr_node::kind_t::time_var: os << 't'; break;
    case expr_node::kind_t::space_var: os << 'x' << n.index; break;
    case expr_node::kind_t::unary:
      switch (n.fn) {
        case expr_node::fn_t::neg:
          os << '-';
          print_node(os, *n.a, prec + 1);
          break;
        case expr_node::fn_t::sin: os << "sin("; print_node(os, *n.a, 0); os << ')'; break;
        case expr_node::fn_t::cos: os << "cos("; print_node(os, *n.a, 0); os << ')'; break;
        case expr_node::fn_t::exp: os << "exp("; print_node(os, *n.a, 0); os << ')'; break;
        case expr_node::fn_t::sqrt: os << "sqrt("; print_node(os, *n.a, 0); os << ')'; break;
        case expr_node::fn_t::abs: os << "abs("; print_node(os, *n.a, 0); os << ')'; break;
      }
      break;
    case expr_node::kind_t::binary:
      print_node(os, *n.a, prec);
      os << n.op;
      // right operand needs a strictly higher context for - / and left-assoc
      print_node(os, *n.b, n.op == '^' ? prec : prec + 1);
      break;
  }
  if (paren) os << ')';
}
}  // namespace detail

inline std::string to_string(const CoefficientExpr& expr) {
  std::ostringstream os;
  detail::print_node(os, *expr.ast, 0);
  return os.str();
}

}  // namespace parametrix
