#pragma once

#include <cmath>
#include <memory>
#include <mutex>

#include "parametrix/proxy.hpp"

namespace parametrix {

// ---------------------------------------------------------------------------
// McKean-Singer series  p = p~ + sum_r p~ (x) H^r  with the time-space
// convolution (f (x) g)(t,s,x,y) = int_t^s du int f(t,u,x,z) g(u,s,z,y) dz.
//
// The kernel H(u,s,z,y) carries an (s-u)^(gamma/2 - 1) endpoint singularity
// after the z-integral; every time integral is computed after the
// substitution u = s - (s-t)(1-w)^(1/p), p = gamma/2, whose Jacobian makes
// the integrand bounded at the endpoint.
// ---------------------------------------------------------------------------

struct QuadConfig {
  int n_time = 24;     // time nodes per convolution layer
  int n_space = 61;    // spatial nodes per axis
  int n_mc = 20000;    // Monte Carlo samples for d >= 3 space integrals
  std::uint64_t seed = 0x50A9E5D3ULL;
  double space_radius = 6.0;       // in units of sqrt(Lambda (s-t))
  double singularity_power = 0.0;  // 0 means gamma/2

  void validate() const {
    if (n_time < 8) throw invalid_param("QuadConfig: n_time >= 8");
    if (space_radius < 5.0) throw invalid_param("QuadConfig: space_radius >= 5");
    if (n_space < 9) throw invalid_param("QuadConfig: n_space >= 9");
    if (n_mc < 100) throw invalid_param("QuadConfig: n_mc >= 100");
  }

  double power_or(double gamma) const {
    return singularity_power > 0.0 ? singularity_power : 0.5 * gamma;
  }
};

// H(t,s,x,y) = (L_t - L~_t) p~(t,s,x,y), assembled from the coefficient
// mismatch between x and theta_{t,s}(y) and the analytic proxy derivatives.
inline double kernel_H(const DiffusionSpec& spec, double t, double s,
                       const Vec& x, const Vec& y) {
  if (!(t < s)) throw degenerate_interval("kernel_H requires t < s");
  FrozenProxy fp(spec, s, y, t);
  return fp.kernel(t, x);
}

using kernel_map = std::function<double(double, double, const Vec&, const Vec&)>;

namespace detail {

struct bridge_geometry {
  Vec center;
  double width;  // scalar scale; isotropic nodes
};

// Importance region of z |-> f(t,u,x,z) g(u,s,z,y) for kernel-type factors:
// the mass of f sits near the forward transport of x, the mass of g near the
// backward transport of y, and the product concentrates on their
// variance-weighted combination (a flow bridge).
inline bridge_geometry bridge(const DiffusionSpec& spec, double t, double u,
                              double s, const Vec& fwd_of_x,
                              const Vec& bwd_of_y) {
  const double L = spec.ellipticity_Lambda;
  const double v1 = std::max(u - t, 1e-300) * L;
  const double v2 = std::max(s - u, 1e-300) * L;
  bridge_geometry g;
  g.center = (v2 * fwd_of_x + v1 * bwd_of_y) / (v1 + v2);
  g.width = std::sqrt(v1 * v2 / (v1 + v2));
  return g;
}

}  // namespace detail

// Inner spatial integral of the convolution at a fixed intermediate time u:
//   int f(t,u,x,z) g(u,s,z,y) dz,
// by a Gauss-Legendre grid on the flow bridge (d <= 2) or Monte Carlo
// importance sampling from the bridge Gaussian (d >= 3).
inline double convolve_inner(const DiffusionSpec& spec, const kernel_map& f,
                             const kernel_map& g, double t, double u, double s,
                             const Vec& x, const Vec& y,
                             const QuadConfig& quad) {
  quad.validate();
  if (!(t < u && u < s)) throw degenerate_interval("convolve_inner: t < u < s");
  const int d = spec.d;
  const Vec fwd = flow_map(spec, u, t, x);
  const Vec bwd = flow_map(spec, u, s, y);
  const auto geo = detail::bridge(spec, t, u, s, fwd, bwd);
  const double R = quad.space_radius;
  if (d <= 2) {
    const quad_rule& gl = detail::cached_gl(quad.n_space);
    double acc = 0.0;
    Vec z(d);
    if (d == 1) {
      for (int i = 0; i < quad.n_space; ++i) {
        z(0) = geo.center(0) + R * geo.width * gl.nodes[i];
        const double val = f(t, u, x, z) * g(u, s, z, y);
        if (!std::isfinite(val))
          throw non_finite_integrand("convolve: non-finite integrand");
        acc += gl.weights[i] * val;
      }
      return acc * R * geo.width;
    }
    for (int i = 0; i < quad.n_space; ++i)
      for (int j = 0; j < quad.n_space; ++j) {
        z(0) = geo.center(0) + R * geo.width * gl.nodes[i];
        z(1) = geo.center(1) + R * geo.width * gl.nodes[j];
        const double val = f(t, u, x, z) * g(u, s, z, y);
        if (!std::isfinite(val))
          throw non_finite_integrand("convolve: non-finite integrand");
        acc += gl.weights[i] * gl.weights[j] * val;
      }
    return acc * R * geo.width * R * geo.width;
  }
  // d >= 3: importance sampling z ~ N(center, width^2 I)
  double acc = 0.0;
  Vec z(d);
  const double lognorm =
      -0.5 * d * std::log(2.0 * M_PI * geo.width * geo.width);
  for (int m = 0; m < quad.n_mc; ++m) {
    double q2 = 0.0;
    for (int k = 0; k < d; ++k) {
      const double n = normal_draw(quad.seed,
                                   static_cast<std::uint64_t>(m) * d + k);
      z(k) = geo.center(k) + geo.width * n;
      q2 += n * n;
    }
    const double pdf = std::exp(lognorm - 0.5 * q2);
    const double val = f(t, u, x, z) * g(u, s, z, y);
    if (!std::isfinite(val))
      throw non_finite_integrand("convolve: non-finite integrand");
    acc += val / pdf;
  }
  return acc / quad.n_mc;
}

// Full time-space convolution (f (x) g)(t,s,x,y).
inline double convolve(const DiffusionSpec& spec, const kernel_map& f,
                       const kernel_map& g, double t, double s, const Vec& x,
                       const Vec& y, const QuadConfig& quad) {
  quad.validate();
  if (!(t < s)) throw degenerate_interval("convolve requires t < s");
  const double cost = static_cast<double>(quad.n_time) *
                      (spec.d <= 2 ? std::pow(quad.n_space, spec.d)
                                   : static_cast<double>(quad.n_mc));
  if (cost > 5e8) throw quadrature_budget_exceeded("convolve: budget exceeded");
  const double p = quad.power_or(spec.gamma);
  const double inv_p = 1.0 / p;
  const quad_rule& gl = detail::cached_gl(quad.n_time);
  double acc = 0.0;
  for (int k = 0; k < quad.n_time; ++k) {
    const double w = 0.5 * (1.0 + gl.nodes[k]);  // in (0,1)
    const double u = s - (s - t) * std::pow(1.0 - w, inv_p);
    const double jac = (s - t) * inv_p * std::pow(1.0 - w, inv_p - 1.0);
    if (!(u > t && u < s)) continue;
    acc += 0.5 * gl.weights[k] * jac * convolve_inner(spec, f, g, t, u, s, x, y, quad);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Series evaluation with layer reuse (d = 1).
//
// Each term p~ (x) H^r(t, u, x, z) is materialized on a tensor grid over
// [t,s] x [flow box] and re-sampled by the next layer. Two refinements keep
// the left factor accurate near its short-time concentration:
//   * layer 0 is never tabulated as values; the grid stores the proxy
//     moments (shift, cov), which stay smooth down to u = t, and the Gaussian
//     is reconstructed in closed form at sample points;
//   * layers r >= 1 are stored as ratios against a Gaussian envelope built
//     from the same moments, so the interpolated field is flat rather than
//     peaked.
// ---------------------------------------------------------------------------

struct SeriesApprox {
  std::vector<double> terms;  // p~, p~ (x) H, ..., order N
  double total = 0.0;
  double tail_bound = 0.0;
  QuadConfig quad;
};

class SeriesEvaluator {
 public:
  SeriesEvaluator(const DiffusionSpec& spec, double t, double s, const Vec& x,
                  const QuadConfig& quad, const std::vector<Vec>& y_hints = {},
                  unsigned threads = 1,
                  std::optional<std::pair<double, double>> box_override = {})
      : spec_(&spec), t_(t), s_(s), x_(x), quad_(quad), threads_(threads) {
    quad_.validate();
    if (!(t < s)) throw degenerate_interval("SeriesEvaluator requires t < s");
    if (spec.d != 1)
      throw quadrature_budget_exceeded(
          "layered series evaluation is implemented for d = 1; use convolve "
          "for low orders in higher dimension");
    gamma_ = spec.gamma;
    inv_p_ = 1.0 / quad_.power_or(gamma_);
    lambda_ = default_majorant(spec).lambda;

    fwd_ = detail::flow_solve(spec, s, t, x);
    double lo = x(0), hi = x(0);
    for (const auto& st : fwd_.states) {
      lo = std::min(lo, st(0));
      hi = std::max(hi, st(0));
    }
    for (const auto& y : y_hints) {
      const ode_path byp = detail::flow_solve(spec, t, s, y);
      for (const auto& st : byp.states) {
        lo = std::min(lo, st(0));
        hi = std::max(hi, st(0));
      }
    }
    const double margin =
        quad_.space_radius * std::sqrt(spec.ellipticity_Lambda * (s - t));
    box_lo_ = lo - margin;
    box_hi_ = hi + margin;
    if (box_override) {
      box_lo_ = box_override->first;
      box_hi_ = box_override->second;
    }

    // Layer grid: time rows graded as t + (s-t) (j/(n-1))^2 so the short-time
    // concentration of the terms stays resolved; spatial resolution keeps the
    // node density the defaults imply even when target hints widen the box.
    n_tg_ = std::max(quad_.n_time, 33);
    const double nominal_width = 2.0 * margin;
    double width_factor = (box_hi_ - box_lo_) / std::max(nominal_width, 1e-12);
    width_factor = std::clamp(width_factor, 1.0, 4.0);
    n_sp_ = static_cast<int>(std::ceil(quad_.n_space * width_factor));
    if (n_sp_ % 2 == 0) ++n_sp_;
    dz_ = (box_hi_ - box_lo_) / (n_sp_ - 1);
    build_moment_grid();
  }

  double box_lo() const { return box_lo_; }
  double box_hi() const { return box_hi_; }

  // p~ (x) H^r (t, s_q, x, y) for any t < s_q <= s. Layers up to r-1 are
  // materialized on demand (layer r is only consumed after r-1 is complete).
  double term(int r, double s_q, const Vec& y) {
    if (r == 0) {
      FrozenProxy fp(*spec_, s_q, y, t_);
      return fp.density(t_, x_);
    }
    ensure_layers(r - 1);
    FrozenProxy fp(*spec_, s_q, y, t_);
    return term_from(fp, r, s_q);
  }

  // All terms 0..N at (s, y) sharing one frozen proxy.
  SeriesApprox evaluate(int N, const Vec& y) {
    if (N < 0) throw invalid_param("series order N >= 0");
    ensure_layers(N - 1);
    SeriesApprox out;
    out.quad = quad_;
    out.terms.resize(N + 1);
    FrozenProxy fp(*spec_, s_, y, t_);
    out.terms[0] = fp.density(t_, x_);
    for (int r = 1; r <= N; ++r) out.terms[r] = term_from(fp, r, s_);
    out.total = 0.0;
    for (double v : out.terms) out.total += v;
    out.tail_bound = tail_bound(out, y);
    return out;
  }

  // Gamma-ratio tail: with C fitted at r = 1 (or from the kernel estimate
  // when N = 0), sum_{r>N} C^{r+1} Gamma(g/2)^r / Gamma(1+rg/2) (s-t)^{rg/2}.
  double tail_bound(const SeriesApprox& approx, const Vec& y) const {
    const double g2 = 0.5 * gamma_;
    const double span = s_ - t_;
    MajorantKernel maj(*spec_, default_majorant(*spec_), t_, s_);
    const double pbar = maj(x_, y);
    if (pbar <= 0.0) return 0.0;
    double C;
    if (approx.terms.size() >= 2) {
      const double ratio = std::abs(approx.terms[1]) /
                           (pbar * gamma_fn(g2) / gamma_fn(1.0 + g2) *
                            std::pow(span, g2));
      C = std::sqrt(ratio);
    } else {
      FrozenProxy fp(*spec_, s_, y, t_);
      C = std::abs(fp.kernel(t_, x_)) * std::pow(span, 1.0 - g2) / pbar;
    }
    if (C <= 0.0) return 0.0;
    double tail = 0.0;
    const int N = static_cast<int>(approx.terms.size()) - 1;
    for (int r = N + 1; r < 400; ++r) {
      const double inc = std::pow(C, r + 1) * std::pow(gamma_fn(g2), r) /
                         gamma_fn(1.0 + r * g2) * std::pow(span, r * g2);
      tail += inc;
      if (!(std::isfinite(tail)))
        return std::numeric_limits<double>::infinity();
      if (inc < 1e-16 * (tail + 1e-300) && r > N + 4) break;
    }
    return tail * pbar;
  }

  // Layers materialize strictly in order (layer r+1 reads the finished layer
  // r); concurrent callers serialize here, reads of complete layers are free.
  void ensure_layers(int r_max) {
    if (static_cast<int>(layers_.size()) >= r_max) return;
    std::lock_guard<std::mutex> lock(layers_mu_);
    while (static_cast<int>(layers_.size()) < r_max) materialize_next();
  }

 private:
  double grid_time(int j) const {
    const double f = static_cast<double>(j) / (n_tg_ - 1);
    return t_ + (s_ - t_) * f * f;
  }

  // fractional graded-row index of time v
  double grid_time_index(double v) const {
    const double f = std::sqrt(std::max(v - t_, 0.0) / (s_ - t_));
    return std::clamp(f * (n_tg_ - 1), 0.0, n_tg_ - 1.0);
  }

  // left-proxy moments p~(t, v, x_any, w): shift(v,w) = w - theta_{t,v}(w),
  // cov(v,w) = int_t^v a; both smooth down to v = t, tabulated once.
  void build_moment_grid() {
    shift_.assign(n_tg_ * n_sp_, 0.0);
    cov_.assign(n_tg_ * n_sp_, 0.0);
    parallel_for(static_cast<std::size_t>(n_tg_ - 1) * n_sp_, threads_,
                 [&](std::size_t idx) {
                   const int j = 1 + static_cast<int>(idx) / n_sp_;
                   const int i = static_cast<int>(idx) % n_sp_;
                   const double v = grid_time(j);
                   Vec w(1);
                   w << box_lo_ + i * dz_;
                   FrozenProxy fp(*spec_, v, w, t_);
                   double th, var;
                   fp.scalar_moments(t_, th, var);
                   shift_[j * n_sp_ + i] = w(0) - th;
                   cov_[j * n_sp_ + i] = var;
                 });
  }

  // bracketing row and the linear-in-time weight within it
  void time_bracket(double v, int& j0, double& aj) const {
    j0 = std::min(static_cast<int>(grid_time_index(v)), n_tg_ - 2);
    const double v0 = grid_time(j0), v1 = grid_time(j0 + 1);
    aj = std::clamp((v - v0) / (v1 - v0), 0.0, 1.0);
  }

  void interp_moments(double v, double w, double& shift, double& cov) const {
    const double fi = std::clamp((w - box_lo_) / dz_, 0.0, n_sp_ - 1.0);
    int j0;
    double aj;
    time_bracket(v, j0, aj);
    const int i0 = std::min(static_cast<int>(fi), n_sp_ - 2);
    const double ai = fi - i0;
    const auto at = [&](int j, int i) { return j * n_sp_ + i; };
    shift = (1 - aj) * ((1 - ai) * shift_[at(j0, i0)] + ai * shift_[at(j0, i0 + 1)]) +
            aj * ((1 - ai) * shift_[at(j0 + 1, i0)] + ai * shift_[at(j0 + 1, i0 + 1)]);
    cov = (1 - aj) * ((1 - ai) * cov_[at(j0, i0)] + ai * cov_[at(j0, i0 + 1)]) +
          aj * ((1 - ai) * cov_[at(j0 + 1, i0)] + ai * cov_[at(j0 + 1, i0 + 1)]);
  }

  // exact-form left proxy from interpolated moments
  double left_proxy(double v, double w) const {
    if (v <= t_) return 0.0;
    double sh, cv;
    interp_moments(v, w, sh, cv);
    if (cv <= 0.0) return 0.0;
    const double r = w - x_(0) - sh;
    return std::exp(-0.5 * r * r / cv) / std::sqrt(2.0 * M_PI * cv);
  }

  // Gaussian envelope used to normalize materialized layers
  double envelope(double v, double w) const {
    if (v <= t_) return 0.0;
    double sh, cv;
    interp_moments(v, w, sh, cv);
    const double var = lambda_ * lambda_ * (v - t_);
    const double r = w - x_(0) - sh;
    return std::exp(-0.5 * r * r / var) / std::sqrt(2.0 * M_PI * var);
  }

  // Catmull-Rom in z within each row: the normalized layer fields are smooth
  // and the bilinear bias was the resolution-limiting error of the series.
  double row_interp(const std::vector<double>& rho, int j, double fi) const {
    const int i1 = std::min(static_cast<int>(fi), n_sp_ - 2);
    const double u = fi - i1;
    const int i0 = std::max(i1 - 1, 0), i2 = i1 + 1,
              i3 = std::min(i1 + 2, n_sp_ - 1);
    const double p0 = rho[j * static_cast<std::size_t>(n_sp_) + i0];
    const double p1 = rho[j * static_cast<std::size_t>(n_sp_) + i1];
    const double p2 = rho[j * static_cast<std::size_t>(n_sp_) + i2];
    const double p3 = rho[j * static_cast<std::size_t>(n_sp_) + i3];
    return p1 + 0.5 * u *
                    (p2 - p0 +
                     u * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 +
                          u * (3.0 * (p1 - p2) + p3 - p0)));
  }

  double left_factor(int r, double v, double w) const {
    if (r == 0) return left_proxy(v, w);
    if (v <= t_) return 0.0;
    if (w < box_lo_ || w > box_hi_) return 0.0;
    const double fi = (w - box_lo_) / dz_;
    int j0;
    double aj;
    time_bracket(v, j0, aj);
    const auto& rho = layers_[r - 1];
    const double rr = (1 - aj) * row_interp(rho, j0, fi) +
                      aj * row_interp(rho, j0 + 1, fi);
    return rr * envelope(v, w);
  }

  // p~ (x) H^r at (t, s_q, x, target of fp), given layers < r
  double term_from(const FrozenProxy& fp, int r, double s_q) const {
    const quad_rule& gt = detail::cached_gl(quad_.n_time);
    const quad_rule& gz = detail::cached_gl(quad_.n_space);
    const double span = s_q - t_;
    const double R = quad_.space_radius;
    const double L = spec_->ellipticity_Lambda;
    double acc = 0.0;
    Vec znode(1);
    for (int k = 0; k < quad_.n_time; ++k) {
      const double w01 = 0.5 * (1.0 + gt.nodes[k]);
      const double v = s_q - span * std::pow(1.0 - w01, inv_p_);
      const double jac = span * inv_p_ * std::pow(1.0 - w01, inv_p_ - 1.0);
      if (!(v > t_ && v < s_q)) continue;
      // flow bridge between the forward transport of x and fp's path
      const double m1 = fwd_eval(v);
      double m2, var_fp;
      fp.scalar_moments(v, m2, var_fp);
      const double v1 = (v - t_) * L, v2 = (s_q - v) * L;
      const double center = (v2 * m1 + v1 * m2) / (v1 + v2);
      const double width = std::sqrt(v1 * v2 / (v1 + v2));
      double inner = 0.0;
      for (int l = 0; l < quad_.n_space; ++l) {
        const double z = center + R * width * gz.nodes[l];
        const double lf = left_factor(r - 1, v, z);
        if (lf == 0.0) continue;
        znode(0) = z;
        inner += gz.weights[l] * lf * fp.kernel(v, znode);
      }
      inner *= R * width;
      acc += 0.5 * gt.weights[k] * jac * inner;
    }
    if (!std::isfinite(acc))
      throw non_finite_integrand("series term integration failed");
    return acc;
  }

  double fwd_eval(double v) const {
    Vec out(1);
    fwd_.eval_into(v, out);
    return out(0);
  }

  void materialize_next() {
    const int r = static_cast<int>(layers_.size()) + 1;
    std::vector<double> rho(static_cast<std::size_t>(n_tg_) * n_sp_, 0.0);
    parallel_for(static_cast<std::size_t>(n_tg_ - 1) * n_sp_, threads_,
                 [&](std::size_t idx) {
                   const int j = 1 + static_cast<int>(idx) / n_sp_;
                   const int i = static_cast<int>(idx) % n_sp_;
                   const double u = grid_time(j);
                   Vec z(1);
                   z << box_lo_ + i * dz_;
                   FrozenProxy fp(*spec_, u, z, t_);
                   const double val = term_from(fp, r, u);
                   const double env = envelope(u, z(0));
                   rho[j * static_cast<std::size_t>(n_sp_) + i] =
                       env > 0.0 ? val / env : 0.0;
                 });
    layers_.push_back(std::move(rho));
  }

  const DiffusionSpec* spec_;
  double t_, s_;
  Vec x_;
  QuadConfig quad_;
  unsigned threads_;
  double gamma_ = 1.0, inv_p_ = 2.0, lambda_ = 2.0;
  double box_lo_ = 0.0, box_hi_ = 0.0, dz_ = 0.0;
  int n_tg_ = 0, n_sp_ = 0;
  ode_path fwd_;
  std::vector<double> shift_, cov_;
  std::vector<std::vector<double>> layers_;  // envelope-normalized, r = 1..
  std::mutex layers_mu_;
};

// Truncated series at a single point.
inline SeriesApprox series_density(const DiffusionSpec& spec, double t, double s,
                                   const Vec& x, const Vec& y, int N,
                                   const QuadConfig& quad,
                                   unsigned threads = 1) {
  if (spec.d == 1) {
    SeriesEvaluator ev(spec, t, s, x, quad, {y}, threads);
    return ev.evaluate(N, y);
  }
  // higher dimension: direct convolution for the first correction only
  if (N > 1)
    throw quadrature_budget_exceeded(
        "series_density: N > 1 requires d = 1 (layer grids)");
  SeriesApprox out;
  out.quad = quad;
  FrozenProxy fp(spec, s, y, t);
  out.terms.push_back(fp.density(t, x));
  if (N >= 1) {
    kernel_map proxy_map = [&spec](double a, double b, const Vec& xx,
                                   const Vec& yy) {
      FrozenProxy p(spec, b, yy, a);
      return p.density(a, xx);
    };
    kernel_map h_map = [&spec](double a, double b, const Vec& xx, const Vec& yy) {
      FrozenProxy p(spec, b, yy, a);
      return p.kernel(a, xx);
    };
    out.terms.push_back(convolve(spec, proxy_map, h_map, t, s, x, y, quad));
  }
  out.total = 0.0;
  for (double v : out.terms) out.total += v;
  MajorantKernel maj(spec, default_majorant(spec), t, s);
  const double pbar = maj(x, y);
  const double g2 = 0.5 * spec.gamma;
  double C = 0.0;
  if (out.terms.size() >= 2 && pbar > 0.0)
    C = std::sqrt(std::abs(out.terms[1]) /
                  (pbar * gamma_fn(g2) / gamma_fn(1.0 + g2) *
                   std::pow(s - t, g2)));
  double tail = 0.0;
  for (int r = N + 1; C > 0.0 && r < 400; ++r) {
    const double inc = std::pow(C, r + 1) * std::pow(gamma_fn(g2), r) /
                       gamma_fn(1.0 + r * g2) * std::pow(s - t, r * g2);
    tail += inc;
    if (inc < 1e-16 * (tail + 1e-300) && r > N + 4) break;
  }
  out.tail_bound = tail * pbar;
  return out;
}

}  // namespace parametrix
