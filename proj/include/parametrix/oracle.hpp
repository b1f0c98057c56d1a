#pragma once

#include <algorithm>
#include <cmath>

#include "parametrix/coeffs.hpp"
#include "parametrix/proxy.hpp"

namespace parametrix::oracle {

// ---------------------------------------------------------------------------
// Independent references: Euler-Maruyama + KDE density estimation, exact
// linear-SDE densities via the resolvent, and adaptive Simpson quadrature.
// These never route through the parametrix series.
// ---------------------------------------------------------------------------

struct McConfig {
  long n_paths = 100000;
  int n_steps = 64;
  std::uint64_t seed = 1;
  bool silverman = true;  // else fixed bandwidth
  double fixed_h = 0.1;

  void validate() const {
    if (n_paths < 1000) throw invalid_param("McConfig: n_paths >= 1000");
    if (n_steps < 16) throw invalid_param("McConfig: n_steps >= 16");
  }
};

// Euler-Maruyama paths from (t, x), Gaussian-kernel density estimate on
// y_grid. Normals come from the SplitMix64 counter stream indexed by
// (path, step, component), so results are bit-reproducible for a seed.
inline std::vector<double> em_density(const DiffusionSpec& spec, double t,
                                      double s, const Vec& x,
                                      const std::vector<Vec>& y_grid,
                                      const McConfig& cfg) {
  cfg.validate();
  if (!(t < s)) throw degenerate_interval("em_density requires t < s");
  const int d = spec.d;
  const double dt = (s - t) / cfg.n_steps;
  const double sq_dt = std::sqrt(dt);
  std::vector<Vec> ends(cfg.n_paths);

  Vec state(d), bvec(d), noise(d);
  Mat sig(d, d);
  for (long i = 0; i < cfg.n_paths; ++i) {
    state = x;
    for (int k = 0; k < cfg.n_steps; ++k) {
      const double u = t + k * dt;
      spec.drift(u, {state.data(), static_cast<std::size_t>(d)},
                 {bvec.data(), static_cast<std::size_t>(d)});
      sig = spec.sigma_at(u, state);
      for (int c = 0; c < d; ++c)
        noise(c) = normal_draw(
            cfg.seed,
            (static_cast<std::uint64_t>(i) * cfg.n_steps + k) * d + c);
      state += dt * bvec + sq_dt * (sig * noise);
      if (!state.allFinite())
        throw non_finite_path("em_density: path blew up");
    }
    ends[i] = state;
  }

  // per-dimension Silverman bandwidths
  Vec h(d);
  for (int c = 0; c < d; ++c) {
    if (!cfg.silverman) {
      h(c) = cfg.fixed_h;
      continue;
    }
    std::vector<double> col(cfg.n_paths);
    for (long i = 0; i < cfg.n_paths; ++i) col[i] = ends[i](c);
    double mean = 0.0;
    for (double v : col) mean += v;
    mean /= col.size();
    double var = 0.0;
    for (double v : col) var += (v - mean) * (v - mean);
    var /= (col.size() - 1);
    std::sort(col.begin(), col.end());
    const double q1 = col[col.size() / 4], q3 = col[(col.size() * 3) / 4];
    const double sd = std::sqrt(var);
    const double spread = std::min(sd, (q3 - q1) / 1.34);
    h(c) = 0.9 * spread * std::pow(static_cast<double>(cfg.n_paths), -0.2);
    if (!(h(c) > 0.0)) h(c) = 1e-3;
  }

  std::vector<double> out(y_grid.size(), 0.0);
  const double norm = std::pow(2.0 * M_PI, -0.5 * d);
  for (std::size_t g = 0; g < y_grid.size(); ++g) {
    double acc = 0.0;
    for (long i = 0; i < cfg.n_paths; ++i) {
      double q2 = 0.0;
      for (int c = 0; c < d; ++c) {
        const double z = (y_grid[g](c) - ends[i](c)) / h(c);
        q2 += z * z;
      }
      acc += std::exp(-0.5 * q2);
    }
    double hprod = 1.0;
    for (int c = 0; c < d; ++c) hprod *= h(c);
    out[g] = acc * norm / (cfg.n_paths * hprod);
  }
  return out;
}

// Exact Gaussian transition density for b(t,x) = G_t x and constant sigma:
// mean R(s,t) x, covariance int_t^s R(s,u) sigma sigma^* R^*(s,u) du, both
// advanced jointly by RK4 (R' = G R, V' = G V + V G^* + sigma sigma^*).
inline double exact_linear_density(
    const std::function<Mat(double)>& G, const Mat& sigma_const, double t,
    double s, const Vec& x, const Vec& y, int n_steps = 400) {
  const int d = static_cast<int>(x.size());
  if (sigma_const.rows() != d || sigma_const.cols() != d || y.size() != d)
    throw dimension_mismatch("exact_linear_density: dimension mismatch");
  if (!(t < s)) throw degenerate_interval("exact_linear_density: t < s");
  const Mat A = sigma_const * sigma_const.transpose();
  Mat R = Mat::Identity(d, d), V = Mat::Zero(d, d);
  const double h = (s - t) / n_steps;
  for (int i = 0; i < n_steps; ++i) {
    const double u = t + i * h;
    auto fR = [&](double w, const Mat& r) { return (G(w) * r).eval(); };
    auto fV = [&](double w, const Mat& v) {
      return (G(w) * v + v * G(w).transpose() + A).eval();
    };
    const Mat k1r = fR(u, R), k1v = fV(u, V);
    const Mat k2r = fR(u + 0.5 * h, R + 0.5 * h * k1r);
    const Mat k2v = fV(u + 0.5 * h, V + 0.5 * h * k1v);
    const Mat k3r = fR(u + 0.5 * h, R + 0.5 * h * k2r);
    const Mat k3v = fV(u + 0.5 * h, V + 0.5 * h * k2v);
    const Mat k4r = fR(u + h, R + h * k3r);
    const Mat k4v = fV(u + h, V + h * k3v);
    R += (h / 6.0) * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
    V += (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  }
  return gaussian_density(y - R * x, 0.5 * (V + V.transpose().eval()));
}

inline double exact_linear_density(const Mat& G_const, const Mat& sigma_const,
                                   double t, double s, const Vec& x,
                                   const Vec& y, int n_steps = 400) {
  return exact_linear_density([&](double) { return G_const; }, sigma_const, t,
                              s, x, y, n_steps);
}

// ---------------------------------------------------------------------------
// Adaptive Simpson. b may be +infinity; the tail is mapped through
// x = a + u/(1-u). Used as the pre-build oracle for derived quadrature
// values, so it must not depend on any other numerical path in the library.
// ---------------------------------------------------------------------------

namespace detail {
// Bisection is forced for the first levels so narrow features that happen to
// vanish on the initial stencil (spikes with zeros at dyadic points) cannot
// terminate the recursion early.
inline constexpr int simpson_forced_depth = 8;

template <class F>
double simpson_rec(const F& f, double a, double b, double fa, double fm,
                   double fb, double whole, double tol, int depth) {
  if (depth > 48) throw max_depth_exceeded("adaptive_integrate: depth > 48");
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth >= simpson_forced_depth && std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  // tol decays by 1/sqrt(2) per branch: halving makes algebraic endpoint
  // singularities unreachable within the depth guard
  const double child_tol = tol * M_SQRT1_2;
  return simpson_rec(f, a, m, fa, flm, fm, left, child_tol, depth + 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, child_tol, depth + 1);
}

template <class F>
double simpson(const F& f, double a, double b, double tol) {
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, tol, 0);
}
}  // namespace detail

inline double adaptive_integrate(const std::function<double(double)>& f,
                                 double a, double b, double tol = 1e-10) {
  if (!(tol > 0.0)) throw invalid_param("adaptive_integrate: tol > 0");
  if (std::isinf(b)) {
    if (b < 0.0) throw invalid_param("adaptive_integrate: b = -inf");
    auto g = [&](double u) {
      if (u >= 1.0) return 0.0;
      const double x = a + u / (1.0 - u);
      const double jac = 1.0 / ((1.0 - u) * (1.0 - u));
      const double v = f(x) * jac;
      return std::isfinite(v) ? v : 0.0;
    };
    return detail::simpson(g, 0.0, 1.0, tol);
  }
  if (!(a < b))
    throw invalid_param("adaptive_integrate requires a < b (no sign-flip convention)");
  return detail::simpson(f, a, b, tol);
}

}  // namespace parametrix::oracle
