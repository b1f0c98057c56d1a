#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <map>
#include <mutex>

#include "parametrix/common.hpp"
#include "parametrix/special.hpp"

namespace parametrix {

// Quadrature rule on a reference interval, with affine mapping helpers.
struct quad_rule {
  std::vector<double> nodes;    // in [-1, 1]
  std::vector<double> weights;

  // Apply to [a, b] (plain weight).
  template <class F>
  double integrate(double a, double b, F&& f) const {
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double s = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      s += weights[i] * f(mid + half * nodes[i]);
    return half * s;
  }
};

// Gauss-Legendre via Newton iteration on the Legendre recurrence.
inline quad_rule gauss_legendre(int n) {
  if (n < 1) throw invalid_param("gauss_legendre: n >= 1 required");
  quad_rule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    r.nodes[i] = -x;
    r.nodes[n - 1 - i] = x;
    r.weights[i] = r.weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * pp * pp);
  }
  return r;
}

// Gauss-Jacobi for weight (1-x)^alpha (1+x)^beta on [-1,1], alpha,beta > -1.
// Golub-Welsch on the symmetric Jacobi matrix.
inline quad_rule gauss_jacobi(int n, double alpha, double beta) {
  if (n < 1) throw invalid_param("gauss_jacobi: n >= 1 required");
  if (alpha <= -1.0 || beta <= -1.0)
    throw invalid_param("gauss_jacobi: alpha, beta > -1 required");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  const double ab = alpha + beta;
  for (int k = 0; k < n; ++k) {
    double ak;
    if (k == 0)
      ak = (beta - alpha) / (ab + 2.0);
    else
      ak = (beta * beta - alpha * alpha) /
           ((2.0 * k + ab) * (2.0 * k + ab + 2.0));
    J(k, k) = ak;
    if (k + 1 < n) {
      const double kk = k + 1.0;
      double bk;
      if (k == 0)
        bk = 4.0 * (1.0 + alpha) * (1.0 + beta) /
             ((ab + 2.0) * (ab + 2.0) * (ab + 3.0));
      else
        bk = 4.0 * kk * (kk + alpha) * (kk + beta) * (kk + ab) /
             ((2.0 * kk + ab) * (2.0 * kk + ab) * (2.0 * kk + ab + 1.0) *
              (2.0 * kk + ab - 1.0));
      J(k, k + 1) = J(k + 1, k) = std::sqrt(bk);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  const double mu0 = std::pow(2.0, ab + 1.0) * beta_fn(alpha + 1.0, beta + 1.0);
  quad_rule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    r.nodes[i] = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    r.weights[i] = mu0 * v0 * v0;
  }
  return r;
}

namespace detail {
// Rules are immutable once built; cache them per (kind, n, alpha).
inline const quad_rule& cached_gl(int n) {
  static std::mutex mu;
  static std::map<int, quad_rule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, gauss_legendre(n)).first;
  return it->second;
}

inline const quad_rule& cached_gj_end(int n, double alpha) {
  // weight (1-x)^alpha, i.e. singularity at the right endpoint
  static std::mutex mu;
  static std::map<std::pair<int, long long>, quad_rule> cache;
  std::lock_guard<std::mutex> lock(mu);
  const auto key = std::make_pair(n, static_cast<long long>(alpha * 1e12));
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, gauss_jacobi(n, alpha, 0.0)).first;
  return it->second;
}
}  // namespace detail

// Integral of (s-u)^(g2-1) * f(u) over [t,s] with g2 = gamma/2 in (0,1].
// The endpoint weight is absorbed by Gauss-Jacobi; away from the endpoint an
// oscillation hint can force composite Gauss-Legendre panels so that rapidly
// oscillating integrands (the section-3.3 perturbations) stay resolved.
template <class F>
double singular_weighted_integral(double t, double s, double g2, int n, F&& f,
                                  double osc_scale = 0.0) {
  if (!(s > t)) throw degenerate_interval("singular_weighted_integral: s > t");
  const double len = s - t;
  double panel = len;
  if (osc_scale > 0.0 && osc_scale < len) panel = osc_scale;
  if (panel >= len) {
    // single Gauss-Jacobi panel: u = t + (s-t)(1+x)/2, s-u = (s-t)(1-x)/2
    const quad_rule& gj = detail::cached_gj_end(n, g2 - 1.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < gj.nodes.size(); ++i)
      acc += gj.weights[i] * f(t + 0.5 * len * (1.0 + gj.nodes[i]));
    return std::pow(0.5 * len, g2) * acc;
  }
  // composite: GJ panel of width `panel` at the singular end, GL elsewhere
  const double cut = s - panel;
  const quad_rule& gj = detail::cached_gj_end(n, g2 - 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < gj.nodes.size(); ++i)
    acc += gj.weights[i] * f(cut + 0.5 * panel * (1.0 + gj.nodes[i]));
  acc *= std::pow(0.5 * panel, g2);
  const int n_panels = static_cast<int>(std::ceil((cut - t) / panel));
  const quad_rule& gl = detail::cached_gl(std::max(8, n / 2));
  const double w = (cut - t) / n_panels;
  for (int p = 0; p < n_panels; ++p) {
    const double a = t + p * w, b = a + w;
    acc += gl.integrate(a, b, [&](double u) {
      return std::pow(s - u, g2 - 1.0) * f(u);
    });
  }
  return acc;
}

}  // namespace parametrix
