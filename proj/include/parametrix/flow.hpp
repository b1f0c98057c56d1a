#pragma once

#include <algorithm>
#include <cmath>

#include "parametrix/coeffs.hpp"
#include "parametrix/common.hpp"

namespace parametrix {

// ---------------------------------------------------------------------------
// Deterministic flow of the drift:
//   theta'_{w,s}(y) = b(w, theta_{w,s}(y)),  theta_{s,s}(y) = y,
// integrated with classical RK4 at fixed step h = (s-t)/max(64, (s-t)/0.005).
// Backward integration runs forward in tau = s - w, so no negative-step
// conventions are needed. Dense output between knots is cubic Hermite with
// the exact knot derivatives b(t, theta).
// ---------------------------------------------------------------------------

struct integrator_meta {
  double step = 0.0;
  const char* method = "rk4";
};

// Dense-output trajectory; knots ascending in time.
struct ode_path {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> derivs;  // dtheta/dtime at each knot
  integrator_meta meta;

  void eval_into(double u, Vec& out) const {
    const auto lo = times.front(), hi = times.back();
    if (u <= lo) { out = states.front(); return; }
    if (u >= hi) { out = states.back(); return; }
    const auto it = std::upper_bound(times.begin(), times.end(), u);
    const std::size_t k = static_cast<std::size_t>(it - times.begin()) - 1;
    const double h = times[k + 1] - times[k];
    const double w = (u - times[k]) / h;
    const double w2 = w * w, w3 = w2 * w;
    const double h00 = 2 * w3 - 3 * w2 + 1, h10 = w3 - 2 * w2 + w;
    const double h01 = -2 * w3 + 3 * w2, h11 = w3 - w2;
    out = h00 * states[k] + (h10 * h) * derivs[k] + h01 * states[k + 1] +
          (h11 * h) * derivs[k + 1];
  }

  Vec eval(double u) const {
    Vec out(states.front().size());
    eval_into(u, out);
    return out;
  }
};

namespace detail {

inline int flow_steps(const DiffusionSpec& spec, double span) {
  int n = std::max(64, static_cast<int>(std::ceil(span / 0.005)));
  if (spec.time_scale_hint > 0.0)
    n = std::max(n, static_cast<int>(std::ceil(span / (spec.time_scale_hint / 8.0))));
  return n;
}

// Solve the flow ODE from (cond_time, y) to at_time, either direction,
// recording every RK knot. Returned path times ascend.
inline ode_path flow_solve(const DiffusionSpec& spec, double at_time,
                           double cond_time, const Vec& y) {
  const int d = spec.d;
  ode_path path;
  if (at_time == cond_time) {
    path.times = {cond_time};
    path.states = {y};
    path.derivs = {spec.drift_at(cond_time, y)};
    return path;
  }
  const double span = std::abs(at_time - cond_time);
  const double dir = at_time > cond_time ? 1.0 : -1.0;
  const int n = flow_steps(spec, span);
  const double h = dir * span / n;
  path.meta.step = std::abs(h);
  path.times.resize(n + 1);
  path.states.resize(n + 1);
  path.derivs.resize(n + 1);

  Vec state = y, k1(d), k2(d), k3(d), k4(d), tmp(d);
  auto f = [&](double w, const Vec& v, Vec& out) {
    spec.drift(w, {v.data(), static_cast<std::size_t>(d)},
               {out.data(), static_cast<std::size_t>(d)});
  };
  double w = cond_time;
  f(w, state, k1);
  path.times[0] = w;
  path.states[0] = state;
  path.derivs[0] = k1;
  for (int i = 0; i < n; ++i) {
    f(w, state, k1);
    tmp = state + (0.5 * h) * k1;
    f(w + 0.5 * h, tmp, k2);
    tmp = state + (0.5 * h) * k2;
    f(w + 0.5 * h, tmp, k3);
    tmp = state + h * k3;
    f(w + h, tmp, k4);
    state += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    w = cond_time + (i + 1) * h;
    if (!state.allFinite())
      throw non_finite_state("flow integration produced a non-finite state");
    f(w, state, k4);
    path.times[i + 1] = w;
    path.states[i + 1] = state;
    path.derivs[i + 1] = k4;
  }
  if (dir < 0) {
    std::reverse(path.times.begin(), path.times.end());
    std::reverse(path.states.begin(), path.states.end());
    std::reverse(path.derivs.begin(), path.derivs.end());
  }
  return path;
}

}  // namespace detail

// theta_{at,cond}(y): solution at `at_time` with value y at `cond_time`.
// Works in both directions; theta_{s,t}(x) transports forward.
inline Vec flow_map(const DiffusionSpec& spec, double at_time, double cond_time,
                    const Vec& y) {
  if (at_time == cond_time) return y;
  const ode_path p = detail::flow_solve(spec, at_time, cond_time, y);
  return at_time < cond_time ? p.states.front() : p.states.back();
}

// theta_{t,s}(y) for 0 <= t <= s <= T.
inline Vec flow_point(const DiffusionSpec& spec, double t, double s,
                      const Vec& y) {
  if (t < 0.0 || s > spec.horizon_T + 1e-12 || t > s)
    throw out_of_interval("flow_point requires 0 <= t <= s <= T");
  return flow_map(spec, t, s, y);
}

struct FlowPath {
  double s = 0.0;
  Vec y;
  std::vector<double> nodes;   // ascending, nodes.front()==t, nodes.back()==s
  std::vector<Vec> values;     // theta_{u_k, s}(y)
  integrator_meta meta;
};

// One backward integration pass, dense output at the requested nodes.
inline FlowPath flow_path(const DiffusionSpec& spec, double t, double s,
                          const Vec& y, const std::vector<double>& nodes) {
  if (t < 0.0 || s > spec.horizon_T + 1e-12 || t > s)
    throw out_of_interval("flow_path requires 0 <= t <= s <= T");
  if (nodes.size() < 2) throw unsorted_nodes("flow_path needs >= 2 nodes");
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i)
    if (!(nodes[i] < nodes[i + 1]))
      throw unsorted_nodes("flow_path nodes must strictly ascend");
  if (std::abs(nodes.front() - t) > 1e-12 || std::abs(nodes.back() - s) > 1e-12)
    throw out_of_interval("flow_path nodes must span [t, s]");

  FlowPath fp;
  fp.s = s;
  fp.y = y;
  fp.nodes = nodes;
  const ode_path p = detail::flow_solve(spec, t, s, y);
  fp.meta = p.meta;
  fp.values.resize(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) fp.values[i] = p.eval(nodes[i]);
  fp.values.back() = y;  // terminal condition is exact by definition
  return fp;
}

}  // namespace parametrix
