#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include "parametrix/common.hpp"
#include "parametrix/expr.hpp"

namespace parametrix {

// ---------------------------------------------------------------------------
// DiffusionSpec: the coefficient bundle dX = b(t,X) dt + sigma(t,X) dW plus
// the regularity constants used by the bounds. Coefficient callbacks write
// into caller-provided spans so the hot loops never allocate.
// ---------------------------------------------------------------------------

using coeff_fn =
    std::function<void(double, std::span<const double>, std::span<double>)>;

struct DiffusionSpec {
  int d = 1;
  coeff_fn drift;      // out has size d
  coeff_fn diffusion;  // out has size d*d, row-major sigma(t,x)
  double gamma = 1.0;              // Holder exponent of sigma, in (0,1]
  double lipschitz_K = 1.0;        // K > 0
  double ellipticity_Lambda = 1.0; // Lambda >= 1
  double horizon_T = 1.0;          // T > 0
  std::optional<Mat> linear_drift_matrix;  // set when b(t,x) = G x exactly
  double time_scale_hint = 0.0;  // 0 = none; finest time scale of coefficients
  std::string name;

  void validate() const {
    if (d < 1) throw invalid_param("DiffusionSpec: d must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0))
      throw invalid_param("DiffusionSpec: gamma must be in (0,1]");
    if (!(lipschitz_K > 0.0)) throw invalid_param("DiffusionSpec: K > 0");
    if (!(ellipticity_Lambda >= 1.0))
      throw invalid_param("DiffusionSpec: Lambda >= 1");
    if (!(horizon_T > 0.0)) throw invalid_param("DiffusionSpec: T > 0");
    if (!drift || !diffusion)
      throw invalid_param("DiffusionSpec: coefficients not set");
  }

  void drift_into(double t, std::span<const double> x,
                  std::span<double> out) const {
    drift(t, x, out);
  }

  Vec drift_at(double t, const Vec& x) const {
    Vec out(d);
    drift(t, {x.data(), static_cast<std::size_t>(d)},
          {out.data(), static_cast<std::size_t>(d)});
    return out;
  }

  Mat sigma_at(double t, const Vec& x) const {
    Mat s(d, d);
    diffusion(t, {x.data(), static_cast<std::size_t>(d)},
              {s.data(), static_cast<std::size_t>(d * d)});
    // row-major fill into column-major Eigen: transpose in place
    Mat out(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) out(i, j) = s.data()[i * d + j];
    return out;
  }

  Mat a_at(double t, const Vec& x) const {
    const Mat s = sigma_at(t, x);
    return s * s.transpose();
  }
};

// ---------------------------------------------------------------------------
// Specs from DSL expressions (the reproducible-config path).
// ---------------------------------------------------------------------------

inline DiffusionSpec make_spec_from_expressions(
    int d, const std::vector<std::string>& drift_exprs,
    const std::vector<std::vector<std::string>>& sigma_exprs, double gamma,
    double lipschitz_K, double ellipticity_Lambda, double horizon_T) {
  if (static_cast<int>(drift_exprs.size()) != d)
    throw invalid_param("expressions: drift needs d entries");
  if (static_cast<int>(sigma_exprs.size()) != d)
    throw invalid_param("expressions: sigma needs d rows");
  auto drift_ast = std::make_shared<std::vector<CoefficientExpr>>();
  for (const auto& s : drift_exprs) {
    drift_ast->push_back(parse_expr(s));
    if (max_space_index(drift_ast->back().ast) > d)
      throw unknown_identifier("drift refers to x" +
                               std::to_string(max_space_index(drift_ast->back().ast)) +
                               " with d=" + std::to_string(d));
  }
  auto sigma_ast = std::make_shared<std::vector<std::vector<CoefficientExpr>>>();
  for (const auto& row : sigma_exprs) {
    if (static_cast<int>(row.size()) != d)
      throw invalid_param("expressions: sigma rows need d entries");
    auto& arow = sigma_ast->emplace_back();
    for (const auto& s : row) {
      arow.push_back(parse_expr(s));
      if (max_space_index(arow.back().ast) > d)
        throw unknown_identifier("sigma refers to out-of-range variable");
    }
  }
  DiffusionSpec spec;
  spec.d = d;
  spec.gamma = gamma;
  spec.lipschitz_K = lipschitz_K;
  spec.ellipticity_Lambda = ellipticity_Lambda;
  spec.horizon_T = horizon_T;
  spec.name = "expressions";
  spec.drift = [drift_ast, d](double t, std::span<const double> x,
                              std::span<double> out) {
    for (int i = 0; i < d; ++i) out[i] = eval((*drift_ast)[i], t, x);
  };
  spec.diffusion = [sigma_ast, d](double t, std::span<const double> x,
                                  std::span<double> out) {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) out[i * d + j] = eval((*sigma_ast)[i][j], t, x);
  };
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Built-in models. oscillating_pair is the section with the highly
// oscillating drift perturbation
//   b_eps(t,x) = x + exp(-t^2/(q eps)) |sin(t/sqrt(eps))|^(2/q) cos(x),
// where the fractional power of sin is read as a power of its magnitude so
// the perturbation stays nonnegative.
// ---------------------------------------------------------------------------

struct ModelBuild {
  DiffusionSpec base;
  std::optional<DiffusionSpec> perturbed;
};

inline double require_param(const std::map<std::string, double>& params,
                            const std::string& key) {
  auto it = params.find(key);
  if (it == params.end()) throw missing_param("missing parameter '" + key + "'");
  return it->second;
}

inline double param_or(const std::map<std::string, double>& params,
                       const std::string& key, double fallback) {
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

inline ModelBuild builtin_model(const std::string& name,
                                const std::map<std::string, double>& params) {
  ModelBuild out;
  const double T = param_or(params, "T", 1.0);
  if (T <= 0.0) throw invalid_param("T must be positive");
  if (name == "heat") {
    const int d = static_cast<int>(param_or(params, "d", 1.0));
    if (d < 1) throw invalid_param("d must be positive");
    DiffusionSpec s;
    s.d = d;
    s.gamma = 1.0;
    s.lipschitz_K = 1.0;
    s.ellipticity_Lambda = 1.0;
    s.horizon_T = T;
    s.name = "heat";
    s.linear_drift_matrix = Mat::Zero(d, d);
    s.drift = [d](double, std::span<const double>, std::span<double> b) {
      for (int i = 0; i < d; ++i) b[i] = 0.0;
    };
    s.diffusion = [d](double, std::span<const double>, std::span<double> m) {
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) m[i * d + j] = (i == j) ? 1.0 : 0.0;
    };
    s.validate();
    out.base = std::move(s);
    return out;
  }
  if (name == "linear_drift" || name == "ou") {
    const int d = static_cast<int>(param_or(params, "d", 1.0));
    if (d < 1) throw invalid_param("d must be positive");
    const double sig = param_or(params, "sigma", 1.0);
    if (sig <= 0.0) throw invalid_param("sigma must be positive");
    DiffusionSpec s;
    s.d = d;
    s.gamma = 1.0;
    s.lipschitz_K = 1.0;
    s.ellipticity_Lambda = std::max(sig * sig, 1.0 / (sig * sig));
    s.horizon_T = T;
    s.name = name;
    s.linear_drift_matrix = Mat::Identity(d, d);
    s.drift = [d](double, std::span<const double> x, std::span<double> b) {
      for (int i = 0; i < d; ++i) b[i] = x[i];
    };
    s.diffusion = [d, sig](double, std::span<const double>, std::span<double> m) {
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) m[i * d + j] = (i == j) ? sig : 0.0;
    };
    s.validate();
    out.base = std::move(s);
    return out;
  }
  if (name == "oscillating_pair") {
    const double eps = require_param(params, "eps");
    const double q = require_param(params, "q");
    const double sig = param_or(params, "sigma", 1.0);
    if (eps <= 0.0) throw invalid_param("eps must be positive");
    if (q < 2.0) throw invalid_param("q >= 2 required");
    if (sig <= 0.0) throw invalid_param("sigma must be positive");
    DiffusionSpec base;
    base.d = 1;
    base.gamma = 1.0;
    base.lipschitz_K = 2.0;
    base.ellipticity_Lambda = std::max(sig * sig, 1.0 / (sig * sig));
    base.horizon_T = T;
    base.name = "oscillating_base";
    base.linear_drift_matrix = Mat::Identity(1, 1);
    base.drift = [](double, std::span<const double> x, std::span<double> b) {
      b[0] = x[0];
    };
    base.diffusion = [sig](double, std::span<const double>, std::span<double> m) {
      m[0] = sig;
    };
    base.validate();

    DiffusionSpec pert = base;
    pert.name = "oscillating_perturbed";
    pert.linear_drift_matrix.reset();
    pert.time_scale_hint = M_PI * std::sqrt(eps) / 3.0;
    const double sqeps = std::sqrt(eps);
    pert.drift = [q, eps, sqeps](double t, std::span<const double> x,
                                 std::span<double> b) {
      const double env = std::exp(-t * t / (q * eps));
      const double osc = std::pow(std::abs(std::sin(t / sqeps)), 2.0 / q);
      b[0] = x[0] + env * osc * std::cos(x[0]);
    };
    pert.validate();
    out.base = std::move(base);
    out.perturbed = std::move(pert);
    return out;
  }
  throw unknown_model("unknown model '" + name + "'");
}

// Perturbation magnitude of the oscillating pair, used by the closed-form
// bound of the simulation study.
inline double oscillating_envelope(double t, double eps, double q) {
  return std::exp(-t * t / (q * eps)) *
         std::pow(std::abs(std::sin(t / std::sqrt(eps))), 2.0 / q);
}

// ---------------------------------------------------------------------------
// Assumption audit (A1)-(A3), sampled on grids. Reported constants are the
// maxima of the tested ratios, so reruns on the same grid reproduce them.
// ---------------------------------------------------------------------------

struct AuditPoint {
  double t;
  Vec x;
};

struct ProbePair {
  double t;
  Vec x;
  Vec y;
};

struct AssumptionReport {
  double ellipticity_min = 0.0;
  double ellipticity_max = 0.0;
  double holder_const_sigma = 0.0;
  double lipschitz_const_b = 0.0;
  double growth_const = 0.0;
  double flow_closeness_const = 0.0;  // Gronwall-folded A3 constant
  bool passed_a1 = false;
  bool passed_a2 = false;
  bool passed_a3 = false;
  bool passed() const { return passed_a1 && passed_a2 && passed_a3; }
};

inline double halton(std::uint64_t i, unsigned base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= base;
    r += f * (i % base);
    i /= base;
  }
  return r;
}

// 21 time nodes x 41 nodes per axis on [0,T] x [-box, box]^d; d > 2 falls
// back to a Halton cloud of comparable size.
inline std::vector<AuditPoint> default_audit_grid(const DiffusionSpec& spec,
                                                  double box = 5.0,
                                                  int n_time = 21,
                                                  int n_space = 41) {
  std::vector<AuditPoint> grid;
  const int d = spec.d;
  std::vector<double> times(n_time);
  for (int i = 0; i < n_time; ++i)
    times[i] = spec.horizon_T * i / (n_time - 1.0);
  if (d <= 2) {
    std::vector<double> axis(n_space);
    for (int j = 0; j < n_space; ++j)
      axis[j] = -box + 2.0 * box * j / (n_space - 1.0);
    for (double t : times) {
      if (d == 1) {
        for (double v : axis) {
          Vec x(1);
          x << v;
          grid.push_back({t, x});
        }
      } else {
        for (double v : axis)
          for (double w : axis) {
            Vec x(2);
            x << v, w;
            grid.push_back({t, x});
          }
      }
    }
  } else {
    const unsigned bases[] = {2, 3, 5, 7, 11, 13, 17, 19};
    const int n_cloud = n_space * n_space;
    for (double t : times)
      for (int i = 0; i < n_cloud; ++i) {
        Vec x(d);
        for (int k = 0; k < d; ++k)
          x(k) = -box + 2.0 * box * halton(i + 1, bases[k % 8]);
        grid.push_back({t, x});
      }
  }
  return grid;
}

// Low-discrepancy probe pairs at dyadic radii 2^-k, k = 0..5.
inline std::vector<ProbePair> default_probe_pairs(const DiffusionSpec& spec,
                                                  double box = 5.0,
                                                  int count = 384) {
  std::vector<ProbePair> probes;
  const int d = spec.d;
  const std::uint64_t seed = 0x9E3779B97F4A7C15ULL;  // fixed audit stream
  for (int i = 0; i < count; ++i) {
    ProbePair p;
    p.t = spec.horizon_T * halton(i + 1, 2);
    p.x = Vec(d);
    for (int k = 0; k < d; ++k)
      p.x(k) = -box + 2.0 * box * halton(i + 1, k % 2 ? 5 : 3);
    Vec dir(d);
    for (int k = 0; k < d; ++k)
      dir(k) = normal_draw(seed, static_cast<std::uint64_t>(i) * d + k);
    dir.normalize();
    const double radius = std::pow(2.0, -(i % 6));
    p.y = p.x + radius * dir;
    probes.push_back(std::move(p));
  }
  return probes;
}

namespace detail {
inline void audit_single(const DiffusionSpec& spec,
                         const std::vector<AuditPoint>& grid,
                         const std::vector<ProbePair>& probes,
                         AssumptionReport& rep) {
  for (const auto& p : grid) {
    const Mat a = spec.a_at(p.t, p.x);
    Eigen::SelfAdjointEigenSolver<Mat> es(a);
    rep.ellipticity_min = std::min(rep.ellipticity_min, es.eigenvalues().minCoeff());
    rep.ellipticity_max = std::max(rep.ellipticity_max, es.eigenvalues().maxCoeff());
    const double bn = spec.drift_at(p.t, p.x).norm();
    rep.growth_const = std::max(rep.growth_const, bn / (1.0 + p.x.norm()));
  }
  for (const auto& p : probes) {
    const double dist = (p.x - p.y).norm();
    if (dist <= 0.0) continue;
    const double ds = (spec.sigma_at(p.t, p.x) - spec.sigma_at(p.t, p.y)).norm();
    const double db = (spec.drift_at(p.t, p.x) - spec.drift_at(p.t, p.y)).norm();
    rep.holder_const_sigma =
        std::max(rep.holder_const_sigma, ds / std::pow(dist, spec.gamma));
    rep.lipschitz_const_b = std::max(rep.lipschitz_const_b, db / dist);
  }
}
}  // namespace detail

inline AssumptionReport check_assumptions(const DiffusionSpec& spec,
                                          const std::vector<AuditPoint>& grid,
                                          const std::vector<ProbePair>& probes) {
  if (grid.empty() || probes.empty())
    throw empty_grid("check_assumptions: empty audit grid");
  AssumptionReport rep;
  rep.ellipticity_min = std::numeric_limits<double>::infinity();
  rep.ellipticity_max = 0.0;
  detail::audit_single(spec, grid, probes, rep);
  const double tol = 1e-9;
  rep.passed_a1 =
      rep.ellipticity_min >= 1.0 / spec.ellipticity_Lambda - tol &&
      rep.ellipticity_max <= spec.ellipticity_Lambda + tol;
  rep.passed_a2 = rep.holder_const_sigma <= spec.lipschitz_K + tol &&
                  rep.lipschitz_const_b <= spec.lipschitz_K + tol &&
                  rep.growth_const <= spec.lipschitz_K + tol;
  rep.passed_a3 = true;  // vacuous for a single spec
  return rep;
}

// Pair audit: adds the A3 constant
//   C_theta = e^{K T} max_{t<s,x} (s-t)^{-1/2} int_t^s |b_eps - b|(u,x) du,
// the Gronwall-folded constant the flow-closeness consequence carries.
inline AssumptionReport check_assumptions(const DiffusionSpec& base,
                                          const DiffusionSpec& pert,
                                          const std::vector<AuditPoint>& grid,
                                          const std::vector<ProbePair>& probes) {
  if (grid.empty() || probes.empty())
    throw empty_grid("check_assumptions: empty audit grid");
  if (base.d != pert.d) throw dimension_mismatch("pair dimensions differ");
  AssumptionReport rep;
  rep.ellipticity_min = std::numeric_limits<double>::infinity();
  rep.ellipticity_max = 0.0;
  detail::audit_single(base, grid, probes, rep);
  detail::audit_single(pert, grid, probes, rep);

  // unique sorted audit times; spatial points from the first time block
  std::vector<double> times;
  std::vector<Vec> points;
  for (const auto& p : grid) times.push_back(p.t);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  for (const auto& p : grid)
    if (p.t == grid.front().t) points.push_back(p.x);

  const double scale = std::max(base.time_scale_hint, pert.time_scale_hint);
  double raw = 0.0;
  Vec db(base.d), dbp(base.d);
  for (std::size_t i = 0; i < times.size(); ++i)
    for (std::size_t j = i + 1; j < times.size(); ++j) {
      const double t = times[i], s = times[j];
      int n = 128;
      if (scale > 0.0)
        n = std::max(n, static_cast<int>(std::ceil((s - t) / scale * 8)));
      if (n % 2) ++n;
      const double h = (s - t) / n;
      for (const auto& x : points) {
        auto diff = [&](double u) {
          base.drift(u, {x.data(), static_cast<std::size_t>(base.d)},
                     {db.data(), static_cast<std::size_t>(base.d)});
          pert.drift(u, {x.data(), static_cast<std::size_t>(base.d)},
                     {dbp.data(), static_cast<std::size_t>(base.d)});
          return (db - dbp).norm();
        };
        double simpson = diff(t) + diff(s);
        for (int k = 1; k < n; ++k) simpson += diff(t + k * h) * (k % 2 ? 4.0 : 2.0);
        simpson *= h / 3.0;
        raw = std::max(raw, simpson / std::sqrt(s - t));
      }
    }
  const double K = std::max(base.lipschitz_K, pert.lipschitz_K);
  rep.flow_closeness_const = raw * std::exp(K * base.horizon_T);

  const double K_shared = K;
  const double L_shared =
      std::max(base.ellipticity_Lambda, pert.ellipticity_Lambda);
  const double tol = 1e-9;
  rep.passed_a1 = rep.ellipticity_min >= 1.0 / L_shared - tol &&
                  rep.ellipticity_max <= L_shared + tol;
  rep.passed_a2 = rep.holder_const_sigma <= K_shared + tol &&
                  rep.lipschitz_const_b <= K_shared + tol &&
                  rep.growth_const <= K_shared + tol;
  rep.passed_a3 = std::isfinite(rep.flow_closeness_const);
  return rep;
}

}  // namespace parametrix
