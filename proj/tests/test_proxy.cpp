#include <catch_amalgamated.hpp>

#include "parametrix/proxy.hpp"

using namespace parametrix;

namespace {
Vec v1(double x) {
  Vec v(1);
  v << x;
  return v;
}

DiffusionSpec variable_sigma_model() {
  // smooth drift and state-dependent diffusion, gamma = 1
  return make_spec_from_expressions(1, {"cos(x1)"},
                                    {{"sqrt(1+0.5*sin(x1)^2)"}}, 1.0, 1.0, 2.0,
                                    1.0);
}
}  // namespace

TEST_CASE("constant-coefficient moments") {
  const DiffusionSpec heat = builtin_model("heat", {}).base;
  const ProxyMoments m = proxy_moments(heat, 0.0, 1.0, v1(0.3), v1(1.1));
  CHECK(m.mean(0) == Catch::Approx(0.3).margin(1e-12));
  CHECK(m.cov(0, 0) == Catch::Approx(1.0).margin(1e-12));

  const DiffusionSpec ou = builtin_model("ou", {{"sigma", 0.8}}).base;
  const ProxyMoments mo = proxy_moments(ou, 0.0, 0.5, v1(2.0), v1(1.0));
  CHECK(mo.mean(0) ==
        Catch::Approx(2.0 + 1.0 - std::exp(-0.5)).margin(1e-9));
  CHECK(mo.cov(0, 0) == Catch::Approx(0.32).margin(1e-12));
}

TEST_CASE("covariance quadrature is converged at 16 nodes") {
  const DiffusionSpec vs = variable_sigma_model();
  const ProxyMoments lo = proxy_moments(vs, 0.1, 0.9, v1(0.0), v1(1.3), 16);
  const ProxyMoments hi = proxy_moments(vs, 0.1, 0.9, v1(0.0), v1(1.3), 64);
  CHECK(std::abs(lo.cov(0, 0) - hi.cov(0, 0)) <= 1e-9);
}

TEST_CASE("proxy density closed forms") {
  const DiffusionSpec heat = builtin_model("heat", {}).base;
  const ProxyMoments m = proxy_moments(heat, 0.0, 1.0, v1(0.0), v1(0.0));
  CHECK(proxy_density(m, v1(0.0), v1(0.0)) ==
        Catch::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-12));
  const ProxyMoments m1 = proxy_moments(heat, 0.0, 1.0, v1(0.0), v1(1.0));
  CHECK(proxy_density(m1, v1(0.0), v1(1.0)) ==
        Catch::Approx(std::exp(-0.5) / std::sqrt(2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("ou proxy density equals the scalar Gaussian formula") {
  const DiffusionSpec ou = builtin_model("ou", {{"sigma", 0.8}}).base;
  const ProxyMoments m = proxy_moments(ou, 0.0, 0.5, v1(1.0), v1(1.0));
  const double mean = 1.0 + 1.0 - std::exp(-0.5);
  const double var = 0.32;
  const double want =
      std::exp(-0.5 * (1.0 - mean) * (1.0 - mean) / var) /
      std::sqrt(2.0 * M_PI * var);
  CHECK(proxy_density(m, v1(1.0), v1(1.0)) ==
        Catch::Approx(want).epsilon(1e-9));
}

TEST_CASE("analytic derivatives") {
  const DiffusionSpec heat = builtin_model("heat", {}).base;
  const ProxyMoments m = proxy_moments(heat, 0.0, 1.0, v1(0.0), v1(0.0));
  CHECK(proxy_derivative(m, v1(0.0), v1(0.0), {1}) ==
        Catch::Approx(0.0).margin(1e-14));
  CHECK(proxy_derivative(m, v1(0.0), v1(0.0), {2}) ==
        Catch::Approx(-1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-12));
  // fourth Hermite polynomial at the center: H4(0) = 3
  CHECK(proxy_derivative(m, v1(0.0), v1(0.0), {4}) ==
        Catch::Approx(3.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-12));
  CHECK(proxy_derivative(m, v1(0.0), v1(0.0), {3}) ==
        Catch::Approx(0.0).margin(1e-14));
  CHECK_THROWS_AS(proxy_derivative(m, v1(0.0), v1(0.0), {5}),
                  unsupported_order);
}

TEST_CASE("first derivative against finite differences") {
  const DiffusionSpec ou = builtin_model("ou", {{"sigma", 0.8}}).base;
  const std::uint64_t seed = 11;
  for (int i = 0; i < 20; ++i) {
    const double x = -1.0 + 2.0 * uniform01(seed, 2 * i);
    const double y = -1.0 + 2.0 * uniform01(seed, 2 * i + 1);
    const ProxyMoments m = proxy_moments(ou, 0.0, 0.5, v1(x), v1(y));
    const double h = 1e-5;
    const double fd = (proxy_density(m, v1(x + h), v1(y)) -
                       proxy_density(m, v1(x - h), v1(y))) /
                      (2.0 * h);
    const double an = proxy_derivative(m, v1(x), v1(y), {1});
    if (std::abs(an) > 1e-6)
      CHECK(fd == Catch::Approx(an).epsilon(1e-6));
  }
}

TEST_CASE("moment invariants") {
  const DiffusionSpec vs = variable_sigma_model();
  const ProxyMoments m = proxy_moments(vs, 0.2, 0.8, v1(0.0), v1(1.0));
  CHECK(std::abs(m.cov(0, 0) - m.cov(0, 0)) <= 1e-12);
  const double span = 0.6;
  CHECK(m.cov(0, 0) >= span / vs.ellipticity_Lambda * (1.0 - 1e-6));
  CHECK(m.cov(0, 0) <= span * vs.ellipticity_Lambda * (1.0 + 1e-6));
  // mean - x does not depend on x
  const ProxyMoments m2 = proxy_moments(vs, 0.2, 0.8, v1(5.0), v1(1.0));
  CHECK((m.mean - v1(0.0) - (m2.mean - v1(5.0))).norm() <= 1e-12);

  const DiffusionSpec bad = make_spec_from_expressions(
      1, {"0"}, {{"2"}}, 1.0, 1.0, 1.0, 1.0);  // a = 4 breaks declared Lambda=1
  CHECK_THROWS_AS(proxy_moments(bad, 0.0, 0.5, v1(0.0), v1(0.0)), non_spd);
  CHECK_THROWS_AS(proxy_moments(vs, 0.5, 0.5, v1(0.0), v1(0.0)),
                  degenerate_interval);
}

TEST_CASE("backward Kolmogorov residual vanishes") {
  const DiffusionSpec ou = builtin_model("ou", {{"sigma", 0.8}}).base;
  const DiffusionSpec vs = variable_sigma_model();
  const std::uint64_t seed = 21;
  for (int i = 0; i < 50; ++i) {
    const DiffusionSpec& spec = (i % 2) ? ou : vs;
    const double s = 0.6 + 0.3 * uniform01(seed, 4 * i);
    const double u = 0.1 + (s - 0.3) * uniform01(seed, 4 * i + 1);
    const double x = -1.5 + 3.0 * uniform01(seed, 4 * i + 2);
    const double y = -1.5 + 3.0 * uniform01(seed, 4 * i + 3);
    const double h = 1e-5;

    const ProxyMoments m0 = proxy_moments(spec, u, s, v1(x), v1(y));
    const ProxyMoments mp = proxy_moments(spec, u + h, s, v1(x), v1(y));
    const ProxyMoments mm = proxy_moments(spec, u - h, s, v1(x), v1(y));
    const double dt_p = (proxy_density(mp, v1(x), v1(y)) -
                         proxy_density(mm, v1(x), v1(y))) /
                        (2.0 * h);

    const Vec theta = v1(y) - m0.shift;  // theta_{u,s}(y)
    const double a_f = spec.a_at(u, theta)(0, 0);
    const double b_f = spec.drift_at(u, theta)(0);
    const double gen = 0.5 * a_f * proxy_derivative(m0, v1(x), v1(y), {2}) +
                       b_f * proxy_derivative(m0, v1(x), v1(y), {1});
    const double dens = proxy_density(m0, v1(x), v1(y));
    const double scale = std::max(1.0, dens / (s - u));
    CHECK(std::abs(dt_p + gen) <= 1e-4 * scale);
  }
}

TEST_CASE("normalization in the starting variable") {
  const DiffusionSpec ou = builtin_model("ou", {{"sigma", 0.8}}).base;
  const ProxyMoments m = proxy_moments(ou, 0.0, 0.5, v1(0.0), v1(1.0));
  const double sd = std::sqrt(m.cov(0, 0));
  const double center = 1.0 - m.shift(0);
  const int n = 2000;
  const double lo = center - 10.0 * sd, hi = center + 10.0 * sd;
  const double h = (hi - lo) / n;
  double acc = proxy_density(m, v1(lo), v1(1.0)) +
               proxy_density(m, v1(hi), v1(1.0));
  for (int k = 1; k < n; ++k)
    acc += proxy_density(m, v1(lo + k * h), v1(1.0)) * (k % 2 ? 4.0 : 2.0);
  acc *= h / 3.0;
  CHECK(acc == Catch::Approx(1.0).margin(1e-8));
}

TEST_CASE("Dirac limit at the terminal time") {
  const DiffusionSpec ou = builtin_model("ou", {{"sigma", 0.8}}).base;
  const double s = 0.3, t = s - 1e-6;
  const ProxyMoments m = proxy_moments(ou, t, s, v1(0.0), v1(0.8));
  const Vec theta = v1(0.8) - m.shift;
  const double sd = std::sqrt(m.cov(0, 0));
  const int n = 400;
  const double lo = theta(0) - 8.0 * sd, hi = theta(0) + 8.0 * sd;
  const double h = (hi - lo) / n;
  auto f = [&](double x) {
    return proxy_density(m, v1(x), v1(0.8)) * std::cos(x);
  };
  double acc = f(lo) + f(hi);
  for (int k = 1; k < n; ++k) acc += f(lo + k * h) * (k % 2 ? 4.0 : 2.0);
  acc *= h / 3.0;
  CHECK(acc == Catch::Approx(std::cos(theta(0))).margin(1e-3));
}

TEST_CASE("derivative magnitudes scale like the heat-kernel exponent") {
  const DiffusionSpec ou = builtin_model("ou", {{"sigma", 0.8}}).base;
  for (int order : {1, 2}) {
    std::vector<double> lx, ly;
    for (int k = 3; k <= 8; ++k) {
      const double span = std::pow(2.0, -k);
      const ProxyMoments m =
          proxy_moments(ou, 0.5 - span, 0.5, v1(0.0), v1(0.4));
      const Vec theta = v1(0.4) - m.shift;
      double sup = 0.0;
      for (int j = -40; j <= 40; ++j) {
        const double x = theta(0) + j * 0.1 * std::sqrt(span);
        sup = std::max(sup, std::abs(proxy_derivative(
                                m, v1(x), v1(0.4),
                                std::vector<int>{order})));
      }
      lx.push_back(std::log(span));
      ly.push_back(std::log(sup));
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sx += lx[i];
      sy += ly[i];
      sxx += lx[i] * lx[i];
      sxy += lx[i] * ly[i];
    }
    const double n = static_cast<double>(lx.size());
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    CHECK(slope == Catch::Approx(-(order + 1.0) / 2.0).margin(0.05));
  }
}

TEST_CASE("majorant closed forms") {
  const DiffusionSpec heat = builtin_model("heat", {}).base;
  MajorantParams p;
  p.lambda = 1.0;
  p.c_gauss = 2.0;
  CHECK(majorant_density(p, heat, 0.0, 1.0, v1(0.0), v1(0.0)) ==
        Catch::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-10));

  const DiffusionSpec ou = builtin_model("ou", {}).base;
  const double Ks = (std::exp(1.0) - 1.0) / 2.0;
  CHECK(majorant_density(p, ou, 0.0, 0.5, v1(1.0), v1(std::exp(0.5))) ==
        Catch::Approx(1.0 / std::sqrt(2.0 * M_PI * Ks)).epsilon(1e-8));
}

TEST_CASE("exact linear majorant satisfies Chapman-Kolmogorov") {
  const DiffusionSpec ou = builtin_model("ou", {}).base;
  MajorantParams p;
  p.lambda = 1.0;
  p.c_gauss = 2.0;
  const MajorantKernel k1(ou, p, 0.0, 0.25);
  const MajorantKernel k2(ou, p, 0.25, 0.5);
  const MajorantKernel k12(ou, p, 0.0, 0.5);
  const Vec x = v1(0.7), y = v1(1.4);
  const int n = 4000;
  const double lo = -12.0, hi = 14.0, h = (hi - lo) / n;
  auto f = [&](double z) { return k1(x, v1(z)) * k2(v1(z), y); };
  double acc = f(lo) + f(hi);
  for (int k = 1; k < n; ++k) acc += f(lo + k * h) * (k % 2 ? 4.0 : 2.0);
  acc *= h / 3.0;
  CHECK(acc == Catch::Approx(k12(x, y)).epsilon(1e-6));
}

TEST_CASE("perturbed proxy is dominated by the shared majorant") {
  const ModelBuild mb = builtin_model(
      "oscillating_pair", {{"eps", 0.2}, {"q", 2.01}, {"sigma", 1.0}});
  const MajorantParams params = default_majorant(mb.base);
  const std::uint64_t seed = 31;
  auto fit = [&](std::uint64_t salt) {
    double C = 0.0;
    for (int i = 0; i < 60; ++i) {
      const double t = 0.8 * uniform01(seed + salt, 4 * i);
      const double s = t + 0.05 + 0.9 * (1.0 - t - 0.05) *
                                     uniform01(seed + salt, 4 * i + 1);
      const double x = -2.0 + 4.0 * uniform01(seed + salt, 4 * i + 2);
      const double y = -2.0 + 4.0 * uniform01(seed + salt, 4 * i + 3);
      FrozenProxy fp(*mb.perturbed, s, v1(y), t);
      const MajorantKernel maj(mb.base, params, t, s);
      const double pbar = maj(v1(x), v1(y));
      if (pbar > 1e-12)
        C = std::max(C, fp.density(t, v1(x)) / pbar);
    }
    return C;
  };
  const double c_fit = fit(0);
  const double c_check = fit(1000);
  CHECK(std::isfinite(c_fit));
  CHECK(c_fit > 0.0);
  CHECK(c_check <= 2.0 * c_fit);  // stability of the fitted constant
}
