#ifndef METASTAB_FLOW_HPP
#define METASTAB_FLOW_HPP

#include <cmath>
#include <fstream>
#include <random>
#include <vector>

#include "metastab/model.hpp"

namespace metastab {

// One classical RK4 step of xdot = b(x); works in any dimension.
template <std::size_t N, typename Drift>
Vec<N> rk4_step(Drift&& b, const Vec<N>& x, double dt) {
  Vec<N> k1 = b(x);
  Vec<N> k2 = b(x + 0.5 * dt * k1);
  Vec<N> k3 = b(x + 0.5 * dt * k2);
  Vec<N> k4 = b(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec2> points;
  double dt = 0;
  bool forward = true;
  bool escaped = false;    // left the stop box (expected during reverse flow)
  double escape_time = 0;  // absolute |t| at which it left
};

// Fixed-step RK4 trajectory of xdot = b(x). Negative t_final integrates the
// reverse flow. If stop_box is given, integration stops (with an escape
// event) once the trajectory leaves it.
inline Trajectory integrate_flow(const Coefficients& c, const Vec2& x0, double t_final,
                                 double dt = 1e-3, const Rect* stop_box = nullptr) {
  if (dt <= 0) throw config_error("integrate_flow: dt must be positive");
  Trajectory tr;
  tr.dt = dt;
  tr.forward = t_final >= 0;
  const double T = std::abs(t_final);
  const double sgn = tr.forward ? 1.0 : -1.0;
  auto drift = [&](const Vec2& x) { return sgn * c.b(x); };
  const std::size_t n_steps = static_cast<std::size_t>(std::ceil(T / dt - 1e-12));
  tr.times.reserve(n_steps + 1);
  tr.points.reserve(n_steps + 1);
  Vec2 x = x0;
  double t = 0;
  tr.times.push_back(0);
  tr.points.push_back(x);
  for (std::size_t k = 0; k < n_steps; ++k) {
    double step = std::min(dt, T - t);
    x = rk4_step(drift, x, step);
    t += step;
    tr.times.push_back(sgn * t);
    tr.points.push_back(x);
    if (stop_box && !stop_box->contains(x)) {
      tr.escaped = true;
      tr.escape_time = t;
      break;
    }
  }
  return tr;
}

inline void write_csv(const Trajectory& tr, const std::string& path) {
  std::ofstream out(path);
  out << "t,x1,x2\n";
  out.precision(17);
  for (std::size_t k = 0; k < tr.times.size(); ++k)
    out << tr.times[k] << ',' << tr.points[k][0] << ',' << tr.points[k][1] << '\n';
}

// Smallest sampled time T such that every trajectory started on a covering
// net of B_R stays in B_r for t in [T, 2T]. Probes a doubling horizon up to
// the cap; failure to confine by then is an empirical (A4) violation.
struct ConfinementResult {
  double T = 0;
  double net_spacing = 0;
};

inline ConfinementResult confinement_time(const Coefficients& c, double r, double R,
                                          int n_samples, double dt = 1e-3,
                                          double horizon_cap = 1e3) {
  if (!(0 < r && r < R)) throw config_error("confinement_time: need 0 < r < R");
  const int m = std::max(2, static_cast<int>(std::ceil(std::sqrt(double(n_samples)))));
  std::vector<Vec2> starts;
  const double spacing = 2 * R / (m - 1);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) {
      Vec2 x = vec2(-R + i * spacing, -R + j * spacing);
      if (norm(x) <= R + 1e-12) starts.push_back(x);
    }
  const double escape_radius = 100 * R;
  for (double H = std::max(1.0, 16 * dt); H <= horizon_cap; H *= 2) {
    double last_exit = 0;
    bool blown_up = false;
    for (const Vec2& x0 : starts) {
      Vec2 x = x0;
      double t = 0;
      while (t < H) {
        if (norm(x) > r) last_exit = std::max(last_exit, t);
        x = rk4_step([&](const Vec2& y) { return c.b(y); }, x, dt);
        t += dt;
        if (norm(x) > escape_radius) {
          blown_up = true;
          break;
        }
      }
      if (blown_up) break;
      if (norm(x) > r) last_exit = std::max(last_exit, t);
    }
    if (blown_up) break;
    double T = std::ceil((last_exit + dt) / dt) * dt;
    if (2 * T <= H) return {T, spacing};
  }
  throw model_error("confinement_time: no confinement below horizon cap (A4 violated?)");
}

// Exact solution of the transport limit u_t = b.Du with initial data g:
// u(x,t) = g(X(t;x)).
inline double transport_solution(const Coefficients& c, const BoundaryData& g, const Vec2& x,
                                 double t, double dt = 1e-3) {
  if (t < 0) throw config_error("transport_solution: t must be nonnegative");
  if (t == 0) return g.g(x);
  Trajectory tr = integrate_flow(c, x, t, dt);
  return g.g(tr.points.back());
}

// Sampled verification of (A1)-(A6) for a problem instance.
inline ValidationReport validate_assumptions(const Problem& p, int n_samples = 2048,
                                             unsigned rng_seed = 12345) {
  ValidationReport rep;
  std::mt19937_64 rng(rng_seed);
  const Rect& bb = p.domain.bounding_box;
  std::uniform_real_distribution<double> ux(bb.lo[0], bb.hi[0]), uy(bb.lo[1], bb.hi[1]);
  auto sample_point = [&] { return vec2(ux(rng), uy(rng)); };

  // (A2) eigenvalue bounds against theta
  double min_ratio = 1e300, max_ratio = -1e300;
  for (int k = 0; k < n_samples; ++k) {
    Vec2 x = sample_point();
    auto ev = sym_eigenvalues(p.coefficients.a(x));
    min_ratio = std::min(min_ratio, ev[0] / p.coefficients.theta);
    max_ratio = std::max(max_ratio, ev[1] * p.coefficients.theta);
  }
  rep.min_eig_over_theta = min_ratio;
  rep.max_eig_times_theta = max_ratio;
  rep.a2_ellipticity = min_ratio >= 1.0 - 1e-9 && max_ratio <= 1.0 + 1e-9;
  if (!rep.a2_ellipticity) rep.notes.push_back("(A2) ellipticity bounds violated");

  // (A1) empirical Lipschitz quotients (diagnostic only)
  for (int k = 0; k < n_samples; ++k) {
    Vec2 x = sample_point(), y = sample_point();
    double dxy = norm(x - y);
    if (dxy < 1e-9) continue;
    rep.lip_b = std::max(rep.lip_b, norm(p.coefficients.b(x) - p.coefficients.b(y)) / dxy);
    Mat2 ax = p.coefficients.a(x), ay = p.coefficients.a(y);
    double da = 0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) da = std::max(da, std::abs(ax(i, j) - ay(i, j)));
    rep.lip_a = std::max(rep.lip_a, da / dxy);
  }
  rep.a1_finite_lipschitz = std::isfinite(rep.lip_a) && std::isfinite(rep.lip_b);

  // b(0) = 0
  rep.b0_norm = norm(p.coefficients.b(vec2(0, 0)));
  rep.b0_zero = rep.b0_norm <= 1e-10;
  if (!rep.b0_zero) rep.notes.push_back("b(0) != 0");

  // (A5) inward drift on the boundary
  double worst = -1e300;
  for (const Vec2& y : boundary_sample(p.domain, std::max(256, n_samples / 4))) {
    Vec2 nu = boundary_normal(p.domain, y, 1e-5);
    worst = std::max(worst, dot(p.coefficients.b(y), nu));
  }
  rep.max_boundary_b_dot_nu = worst;
  rep.a5_inward_drift = worst < 0;
  if (!rep.a5_inward_drift) rep.notes.push_back("(A5) b.nu >= 0 somewhere on the boundary");

  // (A4) stability probe
  try {
    double R = 0.5 * std::max(bb.width(), bb.height());
    auto conf = confinement_time(p.coefficients, 0.1 * R, R, 25, 1e-2, 256.0);
    rep.confinement_time_probe = conf.T;
    rep.a4_stability = true;
  } catch (const model_error&) {
    rep.a4_stability = false;
    rep.notes.push_back("(A4) confinement probe failed");
  }

  // (A6) when a semilinear term is present
  if (p.semilinear) {
    const SemilinearTerm& s = *p.semilinear;
    std::uniform_real_distribution<double> uu(-3, 3), up(-5, 5);
    for (int k = 0; k < n_samples; ++k) {
      Vec2 x = sample_point();
      double u = uu(rng);
      Vec2 q = vec2(up(rng), up(rng));
      double eps = 0.01 + 0.2 * std::generate_canonical<double, 53>(rng);
      if (std::abs(s.f(eps, x, u, q)) > s.M(eps) * norm(q) + 1e-12) rep.a6_bound = false;
      double u2 = u + 0.5;
      if (s.f(eps, x, u2, q) > s.f(eps, x, u, q) + 1e-12) rep.a6_monotone = false;
      if (std::abs(s.f(eps, x, u, vec2(0, 0))) > 1e-12) rep.a6_zero_at_origin = false;
    }
    rep.a6_m_vanishes = s.M(1e-3) <= 0.05 * std::max(1.0, s.M(0.1));
    if (!rep.a6_bound) rep.notes.push_back("(A6) |f| <= M|p| violated");
    if (!rep.a6_monotone) rep.notes.push_back("(A6) monotonicity in u violated");
    if (!rep.a6_zero_at_origin) rep.notes.push_back("f(x,u,0) != 0");
    if (!rep.a6_m_vanishes) rep.notes.push_back("M(eps) does not vanish as eps -> 0");
  }

  rep.passed = rep.a1_finite_lipschitz && rep.a2_ellipticity && rep.a4_stability &&
               rep.a5_inward_drift && rep.b0_zero && rep.a6_bound && rep.a6_monotone &&
               rep.a6_zero_at_origin && rep.a6_m_vanishes;
  return rep;
}

}  // namespace metastab

#endif
