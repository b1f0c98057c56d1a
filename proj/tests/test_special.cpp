#include <catch_amalgamated.hpp>

#include "parametrix/oracle.hpp"
#include "parametrix/special.hpp"

using namespace parametrix;

TEST_CASE("gamma function reference values") {
  CHECK(gamma_fn(0.5) == Catch::Approx(std::sqrt(M_PI)).epsilon(1e-12));
  CHECK(gamma_fn(1.0) == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(gamma_fn(5.0) == Catch::Approx(24.0).epsilon(1e-12));
  CHECK(gamma_fn(0.25) == Catch::Approx(3.625609908221908).epsilon(1e-12));
}

TEST_CASE("lgamma matches the standard library") {
  for (double z : {0.1, 0.37, 1.0, 2.5, 7.3, 41.0, 120.0})
    CHECK(lgamma_fn(z) ==
          Catch::Approx(std::lgamma(z)).epsilon(1e-12).margin(1e-13));
}

TEST_CASE("beta function values") {
  CHECK(beta_fn(1.0, 0.5) == Catch::Approx(2.0).epsilon(1e-12));
  CHECK(beta_fn(0.5, 0.5) == Catch::Approx(M_PI).epsilon(1e-12));
}

TEST_CASE("beta(0.75, 0.5) against its defining integral") {
  // int_0^1 t^(-1/4) (1-t)^(-1/2) dt, desingularized with t = sin^2(theta)
  const double oracle = oracle::adaptive_integrate(
      [](double th) { return 2.0 * std::sqrt(std::sin(th)); }, 0.0, M_PI / 2,
      1e-11);
  CHECK(beta_fn(0.75, 0.5) == Catch::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("non-positive arguments are rejected") {
  CHECK_THROWS_AS(gamma_fn(0.0), non_positive_argument);
  CHECK_THROWS_AS(gamma_fn(-1.5), non_positive_argument);
  CHECK_THROWS_AS(beta_fn(1.0, 0.0), non_positive_argument);
}
