#pragma once

#include <Eigen/Cholesky>

#include <cmath>
#include <map>

#include "parametrix/flow.hpp"
#include "parametrix/quad.hpp"

namespace parametrix {

// ---------------------------------------------------------------------------
// Flow-frozen Gaussian proxy. With the terminal pair (s,y) frozen, the proxy
// process started at x at time t is Gaussian with
//   mean  = x + y - theta_{t,s}(y),
//   cov   = int_t^s sigma sigma^*(u, theta_{u,s}(y)) du,
// and its density at y reduces to a Gaussian in theta_{t,s}(y) - x.
// ---------------------------------------------------------------------------

struct ProxyMoments {
  Vec mean;   // for the x the moments were computed at
  Vec shift;  // mean - x = y - theta_{t,s}(y), independent of x
  Mat cov;
  double t = 0.0, s = 0.0;   // span
  double s_frozen = 0.0;     // frozen terminal time (== s)
  Vec y_frozen;
};

namespace detail {
inline void validate_moments(const ProxyMoments& m, double lambda_cap) {
  const double asym = (m.cov - m.cov.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12) throw non_spd("proxy covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(m.cov);
  const double span = m.s - m.t;
  const double lo = (1.0 / lambda_cap) * span * (1.0 - 1e-6);
  const double hi = lambda_cap * span * (1.0 + 1e-6);
  if (es.eigenvalues().minCoeff() < lo || es.eigenvalues().maxCoeff() > hi)
    throw non_spd("proxy covariance violates the ellipticity envelope");
}
}  // namespace detail

inline ProxyMoments proxy_moments(const DiffusionSpec& spec, double t, double s,
                                  const Vec& x, const Vec& y, int n_quad = 16) {
  if (!(t < s)) throw degenerate_interval("proxy_moments requires t < s");
  if (n_quad < 8) throw invalid_param("proxy_moments: n_quad >= 8");
  const quad_rule gl = gauss_legendre(n_quad);
  std::vector<double> nodes;
  nodes.reserve(n_quad + 2);
  nodes.push_back(t);
  const double mid = 0.5 * (t + s), half = 0.5 * (s - t);
  for (double xi : gl.nodes) nodes.push_back(mid + half * xi);
  nodes.push_back(s);
  const FlowPath path = flow_path(spec, t, s, y, nodes);

  ProxyMoments m;
  m.t = t;
  m.s = s;
  m.s_frozen = s;
  m.y_frozen = y;
  m.cov = Mat::Zero(spec.d, spec.d);
  for (int i = 0; i < n_quad; ++i) {
    const Vec& theta = path.values[i + 1];
    m.cov += (half * gl.weights[i]) * spec.a_at(nodes[i + 1], theta);
  }
  m.cov = 0.5 * (m.cov + m.cov.transpose().eval());
  m.shift = y - path.values.front();
  m.mean = x + m.shift;
  detail::validate_moments(m, spec.ellipticity_Lambda);
  return m;
}

inline double gaussian_density(const Vec& resid, const Mat& cov) {
  const int d = static_cast<int>(resid.size());
  if (d == 1) {
    const double v = cov(0, 0);
    if (!(v > 0.0)) throw non_spd("gaussian: non-positive variance");
    return std::exp(-0.5 * resid(0) * resid(0) / v) / std::sqrt(2.0 * M_PI * v);
  }
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) throw non_spd("gaussian: covariance not SPD");
  const Vec half = llt.matrixL().solve(resid);
  double logdet = 0.0;
  for (int i = 0; i < d; ++i) logdet += std::log(llt.matrixL()(i, i));
  return std::exp(-0.5 * half.squaredNorm() - logdet -
                  0.5 * d * std::log(2.0 * M_PI));
}

// p~(t,s,x,y) for the frozen pair carried by the moments; algebraically the
// Gaussian in theta_{t,s}(y) - x.
inline double proxy_density(const ProxyMoments& m, const Vec& x, const Vec& y) {
  const Vec resid = y - x - m.shift;
  return gaussian_density(resid, m.cov);
}

// ---------------------------------------------------------------------------
// Analytic spatial derivatives d^nu/dx^nu p~, |nu| <= 4, via the Hermite
// recursion: with w = y - x - shift and v = C^{-1} w,
//   d_i (P(v) p~) = (d_i P + v_i P) p~,  d_i v_j = -C^{-1}_{ij}.
// ---------------------------------------------------------------------------

namespace detail {
using hermite_poly = std::map<std::vector<int>, double>;

inline hermite_poly poly_one(int d) { return {{std::vector<int>(d, 0), 1.0}}; }

inline hermite_poly poly_step(const hermite_poly& p, int i, const Mat& cinv) {
  hermite_poly out;
  const int d = static_cast<int>(cinv.rows());
  for (const auto& [mono, c] : p) {
    // v_i * monomial
    std::vector<int> up = mono;
    ++up[i];
    out[up] += c;
    // d_i monomial = sum_j e_j * mono/e_j * (-cinv(j,i))
    for (int j = 0; j < d; ++j) {
      if (mono[j] == 0) continue;
      std::vector<int> down = mono;
      --down[j];
      out[down] += -c * mono[j] * cinv(j, i);
    }
  }
  return out;
}

inline double poly_eval(const hermite_poly& p, const Vec& v) {
  double acc = 0.0;
  for (const auto& [mono, c] : p) {
    double term = c;
    for (std::size_t j = 0; j < mono.size(); ++j)
      for (int e = 0; e < mono[j]; ++e) term *= v(j);
    acc += term;
  }
  return acc;
}
}  // namespace detail

inline double proxy_derivative(const ProxyMoments& m, const Vec& x, const Vec& y,
                               const std::vector<int>& nu) {
  const int d = static_cast<int>(m.cov.rows());
  if (static_cast<int>(nu.size()) != d)
    throw dimension_mismatch("proxy_derivative: multi-index size != d");
  int order = 0;
  for (int k : nu) {
    if (k < 0) throw invalid_param("proxy_derivative: negative multi-index");
    order += k;
  }
  if (order > 4) throw unsupported_order("proxy_derivative supports |nu| <= 4");
  const double dens = proxy_density(m, x, y);
  if (order == 0) return dens;
  const Mat cinv = m.cov.inverse();
  const Vec w = y - x - m.shift;
  const Vec v = cinv * w;
  detail::hermite_poly p = detail::poly_one(d);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < nu[i]; ++k) p = detail::poly_step(p, i, cinv);
  return detail::poly_eval(p, v) * dens;
}

// ---------------------------------------------------------------------------
// FrozenProxy: everything the kernel and the series need for one frozen
// terminal pair (s, y): the backward flow path over [t_min, s] and the
// cumulative covariance C(u) = int_u^s a(r, theta_r) dr, both with cubic
// Hermite dense output (the C' = -a derivative is known exactly at knots).
// ---------------------------------------------------------------------------

class FrozenProxy {
 public:
  FrozenProxy(const DiffusionSpec& spec, double s, Vec y, double t_min)
      : spec_(&spec), s_(s), y_(std::move(y)), d_(spec.d) {
    if (!(t_min < s)) throw degenerate_interval("FrozenProxy: t_min < s");
    path_ = detail::flow_solve(spec, t_min, s, y_);
    const std::size_t n = path_.times.size();
    cov_knots_.resize(n, Mat::Zero(d_, d_));
    a_knots_.resize(n);
    for (std::size_t k = 0; k < n; ++k)
      a_knots_[k] = spec.a_at(path_.times[k], path_.states[k]);
    Vec mid_state(d_);
    for (std::size_t k = n - 1; k-- > 0;) {
      const double h = path_.times[k + 1] - path_.times[k];
      const double tm = 0.5 * (path_.times[k] + path_.times[k + 1]);
      path_.eval_into(tm, mid_state);
      const Mat am = spec.a_at(tm, mid_state);
      cov_knots_[k] = cov_knots_[k + 1] +
                      (h / 6.0) * (a_knots_[k] + 4.0 * am + a_knots_[k + 1]);
    }
  }

  double terminal_time() const { return s_; }
  const Vec& terminal_point() const { return y_; }

  void theta_into(double u, Vec& out) const { path_.eval_into(u, out); }

  Vec theta(double u) const {
    Vec out(d_);
    path_.eval_into(u, out);
    return out;
  }

  // C(u) = int_u^s a(r, theta_r) dr, cubic Hermite between knots.
  void cov_into(double u, Mat& out) const {
    const auto& tt = path_.times;
    if (u <= tt.front()) { out = cov_knots_.front(); return; }
    if (u >= tt.back()) { out = cov_knots_.back(); return; }
    const auto it = std::upper_bound(tt.begin(), tt.end(), u);
    const std::size_t k = static_cast<std::size_t>(it - tt.begin()) - 1;
    const double h = tt[k + 1] - tt[k];
    const double w = (u - tt[k]) / h;
    const double w2 = w * w, w3 = w2 * w;
    const double h00 = 2 * w3 - 3 * w2 + 1, h10 = w3 - 2 * w2 + w;
    const double h01 = -2 * w3 + 3 * w2, h11 = w3 - w2;
    // dC/du = -a(u, theta_u)
    out = h00 * cov_knots_[k] - (h10 * h) * a_knots_[k] +
          h01 * cov_knots_[k + 1] - (h11 * h) * a_knots_[k + 1];
  }

  ProxyMoments moments(double u, const Vec& x) const {
    if (!(u < s_)) throw degenerate_interval("FrozenProxy::moments: u < s");
    ProxyMoments m;
    m.t = u;
    m.s = s_;
    m.s_frozen = s_;
    m.y_frozen = y_;
    m.shift = y_ - theta(u);
    m.mean = x + m.shift;
    m.cov = Mat(d_, d_);
    cov_into(u, m.cov);
    return m;
  }

  // p~(u, s, x, y) with the frozen y.
  double density(double u, const Vec& x) const {
    if (d_ == 1) {
      double th, var;
      scalar_moments(u, th, var);
      const double r = th - x(0);
      return std::exp(-0.5 * r * r / var) / std::sqrt(2.0 * M_PI * var);
    }
    Vec th(d_);
    theta_into(u, th);
    Mat cov(d_, d_);
    cov_into(u, cov);
    return gaussian_density(th - x, cov);
  }

  // Parametrix kernel H(u, s, x, y) = (L_u - L~_u) p~(u, s, x, y).
  double kernel(double u, const Vec& x) const {
    if (d_ == 1) {
      double th, var;
      scalar_moments(u, th, var);
      const double r = th - x(0);
      const double dens =
          std::exp(-0.5 * r * r / var) / std::sqrt(2.0 * M_PI * var);
      if (dens == 0.0) return 0.0;
      const double v1 = r / var;  // first Hermite factor
      double ax, bx, ath, bth;
      scalar_coeffs(u, x(0), ax, bx);
      scalar_coeffs(u, th, ath, bth);
      return (0.5 * (ax - ath) * (v1 * v1 - 1.0 / var) + (bx - bth) * v1) *
             dens;
    }
    Vec th(d_);
    theta_into(u, th);
    Mat cov(d_, d_);
    cov_into(u, cov);
    const Vec w = th - x;
    const double dens = gaussian_density(w, cov);
    if (dens == 0.0) return 0.0;
    const Mat cinv = cov.inverse();
    const Vec v = cinv * w;
    const Mat da = spec_->a_at(u, x) - spec_->a_at(u, th);
    const Vec db = spec_->drift_at(u, x) - spec_->drift_at(u, th);
    double acc = 0.0;
    for (int i = 0; i < d_; ++i) {
      acc += db(i) * v(i);
      for (int j = 0; j < d_; ++j)
        acc += 0.5 * da(i, j) * (v(i) * v(j) - cinv(i, j));
    }
    return acc * dens;
  }

  // d = 1 fast accessors
  void scalar_moments(double u, double& theta_out, double& var_out) const {
    Vec th(1);
    path_.eval_into(u, th);
    theta_out = th(0);
    Mat c(1, 1);
    cov_into(u, c);
    var_out = c(0, 0);
  }

 private:
  void scalar_coeffs(double u, double x, double& a_out, double& b_out) const {
    double buf = x;
    double out[1];
    spec_->diffusion(u, {&buf, 1}, {out, 1});
    a_out = out[0] * out[0];
    spec_->drift(u, {&buf, 1}, {out, 1});
    b_out = out[0];
  }

  const DiffusionSpec* spec_;
  double s_;
  Vec y_;
  int d_;
  ode_path path_;
  std::vector<Mat> cov_knots_;
  std::vector<Mat> a_knots_;
};

// ---------------------------------------------------------------------------
// Majorizing density p-bar: the transition density of dX = b dt + lambda I dW.
// Exact resolvent Gaussian when the drift is linear; otherwise the normalized
// Gaussian surrogate in |theta_{t,s}(y) - x|.
// ---------------------------------------------------------------------------

struct MajorantParams {
  double lambda = 2.0;   // diffusion level, lambda^2 >= Lambda
  double c_gauss = 8.0;  // exponent constant, >= 2 lambda^2
  double c_front = 1.0;

  void validate(double Lambda) const {
    if (!(lambda * lambda >= Lambda))
      throw invalid_param("majorant: lambda^2 >= Lambda required");
    if (!(c_gauss >= 2.0 * lambda * lambda))
      throw invalid_param("majorant: c_gauss >= 2 lambda^2 required");
    if (!(c_front > 0.0)) throw invalid_param("majorant: c_front > 0");
  }
};

inline MajorantParams default_majorant(const DiffusionSpec& spec) {
  MajorantParams p;
  p.lambda = 2.0 * std::sqrt(spec.ellipticity_Lambda);
  p.c_gauss = 2.0 * p.lambda * p.lambda;
  p.c_front = 1.0;
  return p;
}

// Reusable evaluator for fixed (t, s): precomputes the resolvent data for
// linear drifts so pointwise calls are cheap inside quadrature loops.
class MajorantKernel {
 public:
  MajorantKernel(const DiffusionSpec& spec, const MajorantParams& params,
                 double t, double s)
      : spec_(&spec), params_(params), t_(t), s_(s) {
    if (!(t < s)) throw degenerate_interval("majorant requires t < s");
    params.validate(spec.ellipticity_Lambda);
    if (spec.linear_drift_matrix) {
      const Mat& G = *spec.linear_drift_matrix;
      const int d = spec.d;
      // joint RK4 for R' = G R and V' = G V + V G^T + I over [t, s]
      Mat R = Mat::Identity(d, d), V = Mat::Zero(d, d);
      const int n = detail::flow_steps(spec, s - t);
      const double h = (s - t) / n;
      for (int i = 0; i < n; ++i) {
        auto fR = [&](const Mat& r) { return (G * r).eval(); };
        auto fV = [&](const Mat& v) {
          return (G * v + v * G.transpose() + Mat::Identity(d, d)).eval();
        };
        const Mat k1r = fR(R), k1v = fV(V);
        const Mat k2r = fR(R + 0.5 * h * k1r), k2v = fV(V + 0.5 * h * k1v);
        const Mat k3r = fR(R + 0.5 * h * k2r), k3v = fV(V + 0.5 * h * k2v);
        const Mat k4r = fR(R + h * k3r), k4v = fV(V + h * k3v);
        R += (h / 6.0) * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
        V += (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
      }
      resolvent_ = R;
      cov_exact_ = params.lambda * params.lambda * 0.5 *
                   (V + V.transpose().eval());
    }
  }

  double operator()(const Vec& x, const Vec& y) const {
    if (resolvent_) return gaussian_density(y - (*resolvent_) * x, *cov_exact_);
    const Vec theta = flow_map(*spec_, t_, s_, y);
    return surrogate(theta, x);
  }

  // surrogate given an already computed theta_{t,s}(y)
  double surrogate(const Vec& theta, const Vec& x) const {
    const double span = s_ - t_;
    const double l2 = params_.lambda * params_.lambda;
    const int d = spec_->d;
    return params_.c_front *
           std::pow(2.0 * M_PI * l2 * span, -0.5 * d) *
           std::exp(-(theta - x).squaredNorm() / (params_.c_gauss * span));
  }

  bool exact() const { return resolvent_.has_value(); }

 private:
  const DiffusionSpec* spec_;
  MajorantParams params_;
  double t_, s_;
  std::optional<Mat> resolvent_;
  std::optional<Mat> cov_exact_;
};

inline double majorant_density(const MajorantParams& params,
                               const DiffusionSpec& spec, double t, double s,
                               const Vec& x, const Vec& y) {
  MajorantKernel k(spec, params, t, s);
  return k(x, y);
}

}  // namespace parametrix
