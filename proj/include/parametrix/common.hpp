#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace parametrix {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Error taxonomy. Every precondition violation or numerical failure maps to
// one of these; nothing returns NaN silently.
// ---------------------------------------------------------------------------

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define PARAMETRIX_ERROR_TYPE(NAME)            \
  struct NAME : error {                        \
    using error::error;                        \
  }

PARAMETRIX_ERROR_TYPE(syntax_error_base);
PARAMETRIX_ERROR_TYPE(unknown_identifier);
PARAMETRIX_ERROR_TYPE(arity_error);
PARAMETRIX_ERROR_TYPE(evaluation_error);
PARAMETRIX_ERROR_TYPE(unknown_model);
PARAMETRIX_ERROR_TYPE(missing_param);
PARAMETRIX_ERROR_TYPE(invalid_param);
PARAMETRIX_ERROR_TYPE(empty_grid);
PARAMETRIX_ERROR_TYPE(empty_probes);
PARAMETRIX_ERROR_TYPE(non_finite_state);
PARAMETRIX_ERROR_TYPE(non_finite_path);
PARAMETRIX_ERROR_TYPE(non_finite_integrand);
PARAMETRIX_ERROR_TYPE(unsorted_nodes);
PARAMETRIX_ERROR_TYPE(degenerate_interval);
PARAMETRIX_ERROR_TYPE(non_spd);
PARAMETRIX_ERROR_TYPE(unsupported_order);
PARAMETRIX_ERROR_TYPE(quadrature_budget_exceeded);
PARAMETRIX_ERROR_TYPE(non_positive_argument);
PARAMETRIX_ERROR_TYPE(out_of_interval);
PARAMETRIX_ERROR_TYPE(dimension_mismatch);
PARAMETRIX_ERROR_TYPE(max_depth_exceeded);
PARAMETRIX_ERROR_TYPE(config_error);

#undef PARAMETRIX_ERROR_TYPE

// Parse failure with the byte offset of the offending token.
struct syntax_error : syntax_error_base {
  std::size_t offset;
  syntax_error(const std::string& what, std::size_t off)
      : syntax_error_base(what + " (at byte " + std::to_string(off) + ")"),
        offset(off) {}
};

// ---------------------------------------------------------------------------
// SplitMix64: counter-based 64-bit generator (Steele, Lea, Flood 2014).
// A draw is a pure function of (seed, counter), so disjoint counter ranges
// give independent reproducible streams.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t seed, std::uint64_t counter) {
  std::uint64_t z = seed + (counter + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Uniform in (0,1); never returns 0 so it is safe under log().
inline double uniform01(std::uint64_t seed, std::uint64_t counter) {
  return (static_cast<double>(splitmix64(seed, counter) >> 11) + 0.5) *
         0x1.0p-53;
}

// Standard normal pair via Box-Muller, indexed by a single counter.
inline void normal_pair(std::uint64_t seed, std::uint64_t counter, double& n0,
                        double& n1) {
  const double u1 = uniform01(seed, 2 * counter);
  const double u2 = uniform01(seed, 2 * counter + 1);
  const double r = std::sqrt(-2.0 * std::log(u1));
  n0 = r * std::cos(2.0 * M_PI * u2);
  n1 = r * std::sin(2.0 * M_PI * u2);
}

inline double normal_draw(std::uint64_t seed, std::uint64_t counter) {
  double a, b;
  normal_pair(seed, counter, a, b);
  return a;
}

// ---------------------------------------------------------------------------
// Deterministic parallel map: results land in caller-owned slots indexed by
// i, so the output is independent of scheduling.
// ---------------------------------------------------------------------------

inline void parallel_for(std::size_t n, unsigned threads,
                         const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(threads);
  const unsigned used = static_cast<unsigned>(
      std::min<std::size_t>(threads, n));
  for (unsigned t = 0; t < used; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (std::size_t i = t; i < n; i += used) body(i);
      } catch (...) {
        errs[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

inline unsigned default_threads() {
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// FNV-1a 64-bit, used for config hashes in CSV trailers.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace parametrix
