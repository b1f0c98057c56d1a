#include <catch_amalgamated.hpp>

#include "parametrix/expr.hpp"

using namespace parametrix;

namespace {
double ev(const std::string& src, double t, std::vector<double> x) {
  return eval(parse_expr(src), t, {x.data(), x.size()});
}
}  // namespace

TEST_CASE("identity expression") {
  CHECK(ev("x1", 0.0, {3.5}) == 3.5);
  CHECK(ev("t", 2.0, {0.0}) == 2.0);
}

TEST_CASE("precedence and associativity") {
  CHECK(ev("2+3*4", 0, {0}) == 14.0);
  CHECK(ev("2*3^2", 0, {0}) == 18.0);
  CHECK(ev("-2^2", 0, {0}) == -4.0);    // pow binds tighter than unary minus
  CHECK(ev("2^-1", 0, {0}) == 0.5);     // sign allowed in the exponent
  CHECK(ev("2^3^2", 0, {0}) == 512.0);  // right-associative
  CHECK(ev("6-2-1", 0, {0}) == 3.0);
  CHECK(ev("8/4/2", 0, {0}) == 1.0);
  CHECK(ev("(2+3)*4", 0, {0}) == 20.0);
}

TEST_CASE("the oscillating perturbation term parses") {
  const std::string src =
      "exp(-t^2/(2.01*0.5))*sin(t/sqrt(0.5))^(2/2.01)*cos(x1)";
  const CoefficientExpr e = parse_expr(src);
  // at t where sin > 0 the value matches the direct formula
  const double t = 0.9, x = 0.3;
  const double want = std::exp(-t * t / (2.01 * 0.5)) *
                      std::pow(std::sin(t / std::sqrt(0.5)), 2.0 / 2.01) *
                      std::cos(x);
  double xv[1] = {x};
  CHECK(eval(e, t, {xv, 1}) == Catch::Approx(want).epsilon(1e-15));
}

TEST_CASE("evaluation never produces silent NaN") {
  CHECK_THROWS_AS(ev("1/(x1-x1)", 0, {2.0}), evaluation_error);
  CHECK_THROWS_AS(ev("sqrt(-1)", 0, {0}), evaluation_error);
  CHECK_THROWS_AS(ev("(-2)^0.5", 0, {0}), evaluation_error);
  CHECK_THROWS_AS(ev("0^-1", 0, {0}), evaluation_error);
  CHECK(ev("(-2)^2", 0, {0}) == 4.0);  // integral exponents stay legal
}

TEST_CASE("parse errors carry byte offsets") {
  try {
    parse_expr("2+*3");
    FAIL("expected syntax_error");
  } catch (const syntax_error& e) {
    CHECK(e.offset == 2);
  }
  CHECK_THROWS_AS(parse_expr("sin(x1, t)"), arity_error);
  CHECK_THROWS_AS(parse_expr("foo(3)"), unknown_identifier);
  CHECK_THROWS_AS(parse_expr("y2"), unknown_identifier);
  CHECK_THROWS_AS(parse_expr(""), syntax_error_base);
}

TEST_CASE("unknown variable index surfaces at evaluation") {
  const CoefficientExpr e = parse_expr("x2+1");
  double xv[1] = {0.0};
  CHECK_THROWS_AS(eval(e, 0.0, {xv, 1}), unknown_identifier);
}

namespace {
// random AST for the round-trip property
expr_ptr random_ast(std::uint64_t seed, std::uint64_t& ctr, int depth) {
  const double pick = uniform01(seed, ctr++);
  if (depth >= 4 || pick < 0.3) {
    if (pick < 0.1) {
      auto n = std::make_shared<expr_node>();
      n->kind = expr_node::kind_t::time_var;
      return n;
    }
    if (pick < 0.2) {
      auto n = std::make_shared<expr_node>();
      n->kind = expr_node::kind_t::space_var;
      n->index = 1;
      return n;
    }
    return detail::make_const(std::floor(uniform01(seed, ctr++) * 200) / 10.0 -
                              10.0);
  }
  if (pick < 0.55) {
    const char ops[] = {'+', '-', '*', '/'};
    const char op = ops[static_cast<int>(uniform01(seed, ctr++) * 4) % 4];
    return detail::make_binary(op, random_ast(seed, ctr, depth + 1),
                               random_ast(seed, ctr, depth + 1));
  }
  const expr_node::fn_t fns[] = {expr_node::fn_t::neg, expr_node::fn_t::sin,
                                 expr_node::fn_t::cos, expr_node::fn_t::exp,
                                 expr_node::fn_t::abs};
  const auto fn = fns[static_cast<int>(uniform01(seed, ctr++) * 5) % 5];
  return detail::make_unary(fn, random_ast(seed, ctr, depth + 1));
}
}  // namespace

TEST_CASE("print/parse round trip preserves evaluation") {
  std::uint64_t ctr = 0;
  int checked = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const CoefficientExpr e{random_ast(0xABCDE, ctr, 0)};
    const std::string printed = to_string(e);
    const CoefficientExpr back = parse_expr(printed);
    for (int p = 0; p < 5; ++p) {
      const double t = uniform01(7, ctr++) * 2.0 - 1.0;
      double xv[1] = {uniform01(8, ctr++) * 4.0 - 2.0};
      double v1, v2;
      try {
        v1 = eval(e, t, {xv, 1});
      } catch (const evaluation_error&) {
        CHECK_THROWS_AS(eval(back, t, {xv, 1}), evaluation_error);
        continue;
      }
      v2 = eval(back, t, {xv, 1});
      if (std::isfinite(v1)) {
        CHECK(v2 == Catch::Approx(v1).margin(1e-12).epsilon(1e-12));
        ++checked;
      }
    }
  }
  CHECK(checked > 300);
}
