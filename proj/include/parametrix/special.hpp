#pragma once

#include <cmath>

#include "parametrix/common.hpp"

namespace parametrix {

// Lanczos approximation with g = 7, n = 9 (Godfrey's coefficients).
// Relative error below 1e-13 on the positive real axis.
namespace detail {
inline constexpr double lanczos_g = 7.0;
inline constexpr double lanczos_coeff[9] = {
    0.99999999999980993,      676.5203681218851,     -1259.1392167224028,
    771.32342877765313,       -176.61502916214059,   12.507343278686905,
    -0.13857109526572012,     9.9843695780195716e-6, 1.5056327351493116e-7};

inline double lanczos_sum(double z) {
  // z >= 1 here; series in 1/(z-1+k).
  double s = lanczos_coeff[0];
  for (int k = 1; k < 9; ++k) s += lanczos_coeff[k] / (z - 1.0 + k);
  return s;
}
}  // namespace detail

// log Gamma for z > 0.
inline double lgamma_fn(double z) {
  if (!(z > 0.0)) throw non_positive_argument("lgamma_fn: z must be > 0");
  if (z < 0.5) {
    // reflection: Gamma(z) Gamma(1-z) = pi / sin(pi z)
    return std::log(M_PI / std::sin(M_PI * z)) - lgamma_fn(1.0 - z);
  }
  const double g = detail::lanczos_g;
  const double base = z + g - 0.5;
  return 0.5 * std::log(2.0 * M_PI) + (z - 0.5) * std::log(base) - base +
         std::log(detail::lanczos_sum(z));
}

inline double gamma_fn(double z) {
  if (!(z > 0.0)) throw non_positive_argument("gamma_fn: z must be > 0");
  if (z > 170.0) throw evaluation_error("gamma_fn: overflow");
  if (z < 0.5)
    return M_PI / (std::sin(M_PI * z) * gamma_fn(1.0 - z));
  const double g = detail::lanczos_g;
  const double base = z + g - 0.5;
  return std::sqrt(2.0 * M_PI) * std::pow(base, z - 0.5) * std::exp(-base) *
         detail::lanczos_sum(z);
}

inline double beta_fn(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0))
    throw non_positive_argument("beta_fn: arguments must be > 0");
  return std::exp(lgamma_fn(a) + lgamma_fn(b) - lgamma_fn(a + b));
}

}  // namespace parametrix
