#ifndef METASTAB_CERTIFICATES_HPP
#define METASTAB_CERTIFICATES_HPP

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "metastab/flow.hpp"
#include "metastab/parabolic.hpp"
#include "metastab/quasipotential.hpp"

namespace metastab {

// A constructed auxiliary function together with the measured residuals of
// the differential inequality it claims. Reports are recomputable from the
// stored values and params.
struct Certificate {
  enum class Kind { psi, psi_r, V_r, W_r, exit_W, exp_barrier, appendix_barrier };
  Kind kind = Kind::psi;
  GridFunction values;
  double time_slope = 0;  // R_eps for the exponential barrier, 0 otherwise
  double eta = 0;         // measured strict-inequality margin
  std::map<std::string, double> params;
  std::map<std::string, ResidualReport> named_reports;
  ResidualReport report;  // the binding inequality
  bool verified = false;
};

inline const char* to_string(Certificate::Kind k) {
  switch (k) {
    case Certificate::Kind::psi: return "psi";
    case Certificate::Kind::psi_r: return "psi_r";
    case Certificate::Kind::V_r: return "V_r";
    case Certificate::Kind::W_r: return "W_r";
    case Certificate::Kind::exit_W: return "exit_W";
    case Certificate::Kind::exp_barrier: return "exp_barrier";
    case Certificate::Kind::appendix_barrier: return "appendix_barrier";
  }
  return "?";
}

// Transport residual |b . D_h psi + 1| over interior annulus nodes; shared by
// the builder and the recomputation test.
inline ResidualReport measure_transport_residual(const GridFunction& psi,
                                                 const Coefficients& c, double r_inner,
                                                 double r_outer) {
  const MaskedGrid& g = *psi.grid;
  std::vector<double> res;
  std::vector<Vec2> pos;
  for (std::int32_t id : g.interior_ids) {
    Vec2 x = g.pos_of_active(id);
    double rr = norm(x);
    if (rr < r_inner || rr > r_outer) continue;
    if (!std::isfinite(psi[id])) continue;
    Vec2 grad = central_gradient(psi, id);
    res.push_back(std::abs(dot(c.b(x), grad) + 1.0));
    pos.push_back(x);
  }
  return summarize_residuals(res, pos);
}

// Reverse-flow construction of psi: psi(x) = -int_0^inf f(X(-t;x)) dt with f
// the radial ramp equal to 1 on B_{R-w} and 0 outside B_R. Nodes within 2h
// of the equilibrium are masked (NaN): psi diverges there.
inline Certificate build_psi(const Problem& p, std::shared_ptr<const MaskedGrid> grid,
                             double R, double ramp_width, double dt = 2e-3,
                             double residual_tol = 0.05) {
  const MaskedGrid& g = *grid;
  double rho_max = 0;
  for (const Vec2& y : boundary_sample(p.domain, 256)) rho_max = std::max(rho_max, norm(y));
  if (!(ramp_width > 0) || rho_max > R - ramp_width + 1e-12)
    throw config_error("build_psi: need the closed domain inside B_{R - ramp_width}");

  auto ramp = [&](const Vec2& y) {
    double rr = norm(y);
    if (rr <= R - ramp_width) return 1.0;
    if (rr >= R) return 0.0;
    return (R - rr) / ramp_width;
  };

  const double mask_radius = 2 * g.h;
  const double horizon = 1e3;
  Certificate cert;
  cert.kind = Certificate::Kind::psi;
  cert.values = GridFunction(grid, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t id = 0; id < g.n_active(); ++id) {
    Vec2 x = g.pos_of_active(static_cast<std::int32_t>(id));
    if (norm(x) <= mask_radius) continue;
    Vec2 y = x;
    double integral = 0, t = 0;
    bool escaped = false;
    while (t < horizon) {
      // RK4 on the reverse flow with the running integral of the ramp
      Vec2 k1 = -p.coefficients.b(y);
      Vec2 k2 = -p.coefficients.b(y + 0.5 * dt * k1);
      Vec2 k3 = -p.coefficients.b(y + 0.5 * dt * k2);
      Vec2 k4 = -p.coefficients.b(y + dt * k3);
      double f1 = ramp(y);
      double f2 = ramp(y + 0.5 * dt * k1);
      double f3 = ramp(y + 0.5 * dt * k2);
      double f4 = ramp(y + dt * k3);
      y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      integral += (dt / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4);
      t += dt;
      if (norm(y) >= R) {
        escaped = true;
        break;
      }
    }
    if (!escaped) {
      std::ostringstream os;
      os << "build_psi: reverse trajectory from " << x << " did not leave B_R"
         << " (stability error)";
      throw model_error(os.str());
    }
    cert.values[static_cast<std::int32_t>(id)] = -integral;
  }
  cert.params["R"] = R;
  cert.params["ramp_width"] = ramp_width;
  cert.params["mask_radius"] = mask_radius;
  cert.params["dt"] = dt;
  cert.report = measure_transport_residual(cert.values, p.coefficients, 0.1, 0.95 * rho_max);
  cert.named_reports["transport"] = cert.report;
  cert.verified = cert.report.max_residual <= residual_tol;
  return cert;
}

namespace detail {

// max |Delta f| / |Delta x| over ring-1 edges, skipping non-finite values
inline double edge_lipschitz(const GridFunction& u) {
  const MaskedGrid& g = *u.grid;
  double lip = 0;
  const int d8[8][2] = {{1, 0}, {0, 1}, {1, 1}, {1, -1}, {-1, 0}, {0, -1}, {-1, -1}, {-1, 1}};
  for (std::size_t id = 0; id < g.n_active(); ++id) {
    if (!std::isfinite(u[static_cast<std::int32_t>(id)])) continue;
    int f = g.node_of_active[id];
    int i = f % g.nx, j = f / g.nx;
    for (auto& d : d8) {
      std::int32_t nb = g.id_at(i + d[0], j + d[1]);
      if (nb < 0 || !std::isfinite(u[nb])) continue;
      double run = g.h * std::sqrt(double(d[0] * d[0] + d[1] * d[1]));
      lip = std::max(lip, std::abs(u[nb] - u[static_cast<std::int32_t>(id)]) / run);
    }
  }
  return lip;
}

// Signed residual H(x, D_c f) - rhs over interior nodes in a radial band.
inline ResidualReport measure_hj_residual(const GridFunction& u, const Coefficients& c,
                                          double rhs, double r_lo, double r_hi) {
  const MaskedGrid& g = *u.grid;
  std::vector<double> res;
  std::vector<Vec2> pos;
  for (std::int32_t id : g.interior_ids) {
    Vec2 x = g.pos_of_active(id);
    double rr = norm(x);
    if (rr < r_lo || rr >= r_hi) continue;
    res.push_back(hamiltonian(c, x, central_gradient(u, id)) - rhs);
    pos.push_back(x);
  }
  return summarize_residuals(res, pos);
}

// Supersolution residual: min over one-sided gradient selections of
// H(x, -D f), reported as eta_target - min (so max_residual <= 0 certifies
// H(x,-Df) >= eta_target at every checked node).
inline ResidualReport measure_supersolution_deficit(const GridFunction& u,
                                                    const Coefficients& c,
                                                    double eta_target) {
  const MaskedGrid& g = *u.grid;
  std::vector<double> res;
  std::vector<Vec2> pos;
  for (std::int32_t id : g.interior_ids) {
    Vec2 x = g.pos_of_active(id);
    NodeDiff dx = axis_differences(u, id, 0), dy = axis_differences(u, id, 1);
    double cands_x[2] = {dx.has_backward ? dx.backward : dx.central,
                         dx.has_forward ? dx.forward : dx.central};
    double cands_y[2] = {dy.has_backward ? dy.backward : dy.central,
                         dy.has_forward ? dy.forward : dy.central};
    double hmin = 1e300;
    for (double gx : cands_x)
      for (double gy : cands_y)
        hmin = std::min(hmin, hamiltonian(c, x, vec2(-gx, -gy)));
    hmin = std::min(hmin, hamiltonian(c, x, -central_gradient(u, id)));
    res.push_back(eta_target - hmin);
    pos.push_back(x);
  }
  return summarize_residuals(res, pos);
}

// Discrete tr(a D^2 u) via axis and diagonal second differences; NaN where a
// stencil neighbor is missing.
inline double trace_a_d2(const GridFunction& u, const Coefficients& c, std::int32_t id) {
  const MaskedGrid& g = *u.grid;
  Vec2 x = g.pos_of_active(id);
  Mat2 a = c.a(x);
  double dxx = second_difference(u, id, 1, 0);
  double dyy = second_difference(u, id, 0, 1);
  double a12 = 0.5 * (a(0, 1) + a(1, 0));
  double cross = 0;
  if (a12 != 0) {
    double dpp = second_difference(u, id, 1, 1);
    double dmm = second_difference(u, id, 1, -1);
    cross = dpp - dmm;  // ~ 2 u_xy
  }
  return a(0, 0) * dxx + a(1, 1) * dyy + a12 * cross;
}

// Shrink-pullback x -> f((1-delta) x) with mask-aware interpolation.
inline GridFunction shrink_pullback(const GridFunction& u, double delta) {
  GridFunction out(u.grid, 0.0);
  const MaskedGrid& g = *u.grid;
  for (std::size_t id = 0; id < out.values.size(); ++id)
    out.values[id] =
        interpolate(u, (1.0 - delta) * g.pos_of_active(static_cast<std::int32_t>(id)));
  return out;
}

// Discrete mollification with the compactly supported polynomial bump
// (1 - |z/gamma|^2)^3, normalized to unit mass on the lattice.
inline GridFunction mollify(const GridFunction& u, double gamma) {
  const MaskedGrid& g = *u.grid;
  const int m = std::max(1, static_cast<int>(std::floor(gamma / g.h)));
  std::vector<std::pair<std::pair<int, int>, double>> taps;
  double mass = 0;
  for (int dj = -m; dj <= m; ++dj)
    for (int di = -m; di <= m; ++di) {
      double r2 = (di * di + dj * dj) * g.h * g.h / (gamma * gamma);
      if (r2 >= 1) continue;
      double w = std::pow(1 - r2, 3);
      taps.push_back({{di, dj}, w});
      mass += w;
    }
  GridFunction out(u.grid, 0.0);
  for (std::size_t id = 0; id < out.values.size(); ++id) {
    int f = g.node_of_active[id];
    int i = f % g.nx, j = f / g.nx;
    Vec2 x = g.pos(i, j);
    double acc = 0;
    for (auto& [od, w] : taps) acc += w * interpolate(u, x - vec2(od.first * g.h, od.second * g.h));
    out.values[id] = acc / mass;
  }
  return out;
}

inline double min_boundary_radius(const Domain& d) {
  double r = 1e300;
  for (const Vec2& y : boundary_sample(d, 256)) r = std::min(r, norm(y));
  return r;
}

}  // namespace detail

enum class SubsolutionStage { psi_r, V_r, W_r };

// Staged construction of the strict subsolution ladder: clamp psi, scale by
// theta/(2C), blend with V, shrink-pull back and mollify. Each stage
// certificate reports the residuals of its claimed inequality.
inline Certificate build_strict_subsolution(const Problem& p, const PotentialField& V,
                                            const Certificate& psi, double r,
                                            SubsolutionStage stage) {
  if (psi.kind != Certificate::Kind::psi)
    throw config_error("build_strict_subsolution: psi certificate required");
  auto grid = V.field.grid;
  const MaskedGrid& g = *grid;
  const double theta = p.coefficients.theta;

  // chi_r: clamp psi from below at its minimum outside B_r (psi -> -inf at 0)
  double clamp_level = 1e300;
  for (std::size_t id = 0; id < g.n_active(); ++id) {
    double v = psi.values[static_cast<std::int32_t>(id)];
    if (!std::isfinite(v)) continue;
    if (norm(g.pos_of_active(static_cast<std::int32_t>(id))) >= r)
      clamp_level = std::min(clamp_level, v);
  }
  if (!(clamp_level < 1e300))
    throw construction_error("build_strict_subsolution: psi unbounded on the clamp mask");
  GridFunction chi(grid, clamp_level);
  for (std::size_t id = 0; id < g.n_active(); ++id) {
    double v = psi.values[static_cast<std::int32_t>(id)];
    if (std::isfinite(v)) chi.values[id] = std::max(v, clamp_level);
  }
  // C must dominate both Lip(chi_r) and Lip(chi_r)^2 for the scaling
  // lambda = theta/(2C) to yield H <= theta^{-1} lambda^2 Lip^2 - lambda
  //       <= -lambda/2.
  const double lip_chi = detail::edge_lipschitz(chi);
  const double C = std::max(lip_chi, lip_chi * lip_chi);
  const double lambda = theta / (2 * C);
  GridFunction psi_r = chi;
  for (double& v : psi_r.values) v *= lambda;
  const double eta_psi = lambda / 2;

  Certificate cert;
  cert.params["r"] = r;
  cert.params["clamp_level"] = clamp_level;
  cert.params["C"] = C;
  cert.params["lambda_scale"] = lambda;
  cert.params["theta"] = theta;

  if (stage == SubsolutionStage::psi_r) {
    cert.kind = Certificate::Kind::psi_r;
    cert.values = psi_r;
    cert.eta = eta_psi;
    cert.report = detail::measure_hj_residual(psi_r, p.coefficients, 0, r, 1e300);
    cert.named_reports["outside_Br"] = cert.report;
    cert.named_reports["inside_Br"] =
        detail::measure_hj_residual(psi_r, p.coefficients, 0, 0, r);
    cert.verified = cert.report.max_residual <= -eta_psi / 2 &&
                    cert.named_reports["inside_Br"].max_residual <= 5 * g.h;
    return cert;
  }

  // V_r = (1-delta) V + delta psi_r with delta small enough that
  // ||V_r - V|| < r
  double gap = 0;
  for (std::size_t id = 0; id < g.n_active(); ++id)
    gap = std::max(gap, std::abs(V.field.values[id] - psi_r.values[id]));
  const double delta = std::min(r / (2 * gap), 0.5);
  GridFunction vr(grid, 0.0);
  for (std::size_t id = 0; id < g.n_active(); ++id)
    vr.values[id] = (1 - delta) * V.field.values[id] + delta * psi_r.values[id];
  const double eta_vr = delta * eta_psi;
  cert.params["delta_blend"] = delta;

  if (stage == SubsolutionStage::V_r) {
    cert.kind = Certificate::Kind::V_r;
    cert.values = vr;
    cert.eta = eta_vr;
    cert.report = detail::measure_hj_residual(vr, p.coefficients, 0, r, 1e300);
    cert.named_reports["outside_Br"] = cert.report;
    double dist = 0;
    for (std::size_t id = 0; id < g.n_active(); ++id)
      dist = std::max(dist, std::abs(vr.values[id] - V.field.values[id]));
    cert.params["sup_dist_to_V"] = dist;
    cert.verified = cert.report.max_residual <= -eta_vr / 2 && dist < r;
    return cert;
  }

  // W_r: pull back by the shrink map (star-shaped presets) and mollify
  const double rho_min = detail::min_boundary_radius(p.domain);
  const double gamma = std::min(0.45 * r, std::max(3 * g.h, r / 8));
  const double shrink = std::min(0.2, 1.5 * (gamma + 2 * g.h) / rho_min);
  GridFunction pulled = detail::shrink_pullback(vr, shrink);
  GridFunction wr = detail::mollify(pulled, gamma);
  cert.params["gamma_mollify"] = gamma;
  cert.params["shrink_delta"] = shrink;

  cert.kind = Certificate::Kind::W_r;
  cert.values = wr;
  ResidualReport outside =
      detail::measure_hj_residual(wr, p.coefficients, 0, 1.25 * r, 1e300);
  ResidualReport inside = detail::measure_hj_residual(wr, p.coefficients, 0, 0, 1.25 * r);
  cert.report = outside;
  cert.named_reports["outside_Br"] = outside;
  cert.named_reports["inside_Br"] = inside;
  cert.eta = std::max(0.0, -outside.max_residual);
  double dist = 0;
  for (std::size_t id = 0; id < g.n_active(); ++id)
    dist = std::max(dist, std::abs(wr.values[id] - V.field.values[id]));
  cert.params["sup_dist_to_V"] = dist;
  double c2 = 0;
  for (std::int32_t id : g.interior_ids) {
    double t = detail::trace_a_d2(wr, p.coefficients, id);
    if (std::isfinite(t)) c2 = std::max(c2, std::abs(t));
  }
  cert.params["trace_a_d2_bound"] = c2;
  cert.verified = cert.eta > 0 && inside.max_residual <= 1.0 && dist <= 3 * r;
  return cert;
}

// Exact discrete lower envelope over a full lattice field (+inf marks
// excluded source nodes), by the separable two-pass parabola-envelope scan.
inline void inf_convolution_full(const MaskedGrid& g, std::vector<double>& field,
                                 double alpha) {
  if (alpha <= 0) throw config_error("inf_convolution: alpha must be positive");
  const double INF = std::numeric_limits<double>::infinity();
  const double w = g.h * g.h / alpha;  // cost per squared index offset

  auto envelope_1d = [&](std::vector<double>& fv) {
    const int n = static_cast<int>(fv.size());
    std::vector<double> d(n, INF);
    std::vector<int> v(n, 0);
    std::vector<double> z(n + 1, 0);
    int k = -1;
    for (int q = 0; q < n; ++q) {
      if (fv[q] == INF) continue;
      if (k < 0) {
        k = 0;
        v[0] = q;
        z[0] = -INF;
        z[1] = INF;
        continue;
      }
      double s;
      while (true) {
        int vk = v[k];
        s = ((fv[q] + w * q * q) - (fv[vk] + w * vk * vk)) / (2.0 * w * (q - vk));
        if (s > z[k]) break;
        if (--k < 0) break;
      }
      ++k;
      v[k] = q;
      z[k] = k == 0 ? -INF : s;
      z[k + 1] = INF;
    }
    if (k < 0) return;  // all-INF line
    int j = 0;
    for (int q = 0; q < n; ++q) {
      while (z[j + 1] < q) ++j;
      d[q] = fv[v[j]] + w * (q - v[j]) * (q - v[j]);
    }
    fv = d;
  };

  std::vector<double> line;
  for (int j = 0; j < g.ny; ++j) {
    line.assign(g.nx, INF);
    for (int i = 0; i < g.nx; ++i) line[i] = field[g.flat(i, j)];
    envelope_1d(line);
    for (int i = 0; i < g.nx; ++i) field[g.flat(i, j)] = line[i];
  }
  for (int i = 0; i < g.nx; ++i) {
    line.assign(g.ny, INF);
    for (int j = 0; j < g.ny; ++j) line[j] = field[g.flat(i, j)];
    envelope_1d(line);
    for (int j = 0; j < g.ny; ++j) field[g.flat(i, j)] = line[j];
  }
}

// Lower envelope of a grid function over the active mask.
inline GridFunction inf_convolution(const GridFunction& f, double alpha) {
  const MaskedGrid& g = *f.grid;
  std::vector<double> field(static_cast<std::size_t>(g.nx) * g.ny,
                            std::numeric_limits<double>::infinity());
  for (std::size_t id = 0; id < f.values.size(); ++id)
    field[g.node_of_active[id]] = f.values[id];
  inf_convolution_full(g, field, alpha);
  GridFunction out(f.grid, 0.0);
  for (std::size_t id = 0; id < out.values.size(); ++id)
    out.values[id] = field[g.node_of_active[id]];
  return out;
}

// Exit supersolution for lambda > m0: W = infconv(shrink-pullback(u_mu + c))
// with the additive constant chosen so that m0 + 3c < lambda. Verifies
// 0 < min W <= max W < lambda, the upwind inequality H(x,-DW) >= eta, and the
// semiconcavity bound standing in for eta tr(a D^2 W) <= 1.
inline Certificate build_exit_supersolution(const Problem& p,
                                            std::shared_ptr<const MaskedGrid> grid,
                                            double lambda, const PotentialField& V) {
  const MaskedGrid& g = *grid;
  const double m0 = V.m0;
  const double gamma_min = 0.01;
  if (lambda <= m0 + 4 * gamma_min) {
    std::ostringstream os;
    os << "build_exit_supersolution: infeasible margin, lambda = " << lambda
       << " <= m0 + 4*gamma_min = " << m0 + 4 * gamma_min;
    throw construction_error(os.str());
  }
  const double gamma_c = std::min((lambda - m0) / 4, 0.1);
  const double mu = gamma_c / 2;

  PotentialField umu = solve_to_boundary(p, grid, mu, V.stencil_order);
  GridFunction w0 = umu.field;
  for (double& v : w0.values) v += gamma_c;

  // Pull back by the shrink map onto a collar extending beyond the domain;
  // the inf-convolution must range over that collar or it flattens the
  // boundary layer of u_mu inside the domain.
  const double rho_min = detail::min_boundary_radius(p.domain);
  const double shrink = std::min(0.12, (10 * g.h + 0.02) / rho_min);
  const double lip = std::max(detail::edge_lipschitz(w0), 1e-6);
  const double collar = 0.8 * (shrink * rho_min - 2 * std::sqrt(2.0) * g.h);
  const double alpha =
      std::max(std::min(2 * gamma_c / (lip * lip), 0.8 * collar / lip), 1e-6);

  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> wd_full(static_cast<std::size_t>(g.nx) * g.ny, INF);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      Vec2 q = (1.0 - shrink) * g.pos(i, j);
      // strict interpolability: all four cell corners active
      double fx = q[0] / g.h - g.i0, fy = q[1] / g.h - g.j0;
      int ci = static_cast<int>(std::floor(fx)), cj = static_cast<int>(std::floor(fy));
      if (ci < 0 || cj < 0 || ci + 1 >= g.nx || cj + 1 >= g.ny) continue;
      if (g.id_at(ci, cj) < 0 || g.id_at(ci + 1, cj) < 0 || g.id_at(ci, cj + 1) < 0 ||
          g.id_at(ci + 1, cj + 1) < 0)
        continue;
      wd_full[g.flat(i, j)] = interpolate(w0, q);
    }
  inf_convolution_full(g, wd_full, alpha);
  GridFunction W(grid, 0.0);
  for (std::size_t id = 0; id < W.values.size(); ++id)
    W.values[id] = wd_full[g.node_of_active[id]];

  double tr_a_max = 0;
  for (std::int32_t id : g.interior_ids) {
    Mat2 a = p.coefficients.a(g.pos_of_active(id));
    tr_a_max = std::max(tr_a_max, trace(a));
  }
  const double eta = std::min(mu / 4, alpha / (2 * tr_a_max));

  Certificate cert;
  cert.kind = Certificate::Kind::exit_W;
  cert.values = W;
  cert.eta = eta;
  cert.params = {{"lambda", lambda}, {"m0", m0},         {"gamma_c", gamma_c},
                 {"mu", mu},         {"alpha", alpha},   {"shrink_delta", shrink},
                 {"lip", lip},       {"tr_a_max", tr_a_max}};

  double wmin = 1e300, wmax = -1e300;
  for (double v : W.values) {
    wmin = std::min(wmin, v);
    wmax = std::max(wmax, v);
  }
  cert.params["min_W"] = wmin;
  cert.params["max_W"] = wmax;

  cert.report = detail::measure_supersolution_deficit(W, p.coefficients, eta);
  cert.named_reports["supersolution_deficit"] = cert.report;

  // semiconcavity along axes and diagonals
  std::vector<double> sc;
  std::vector<Vec2> scpos;
  for (std::int32_t id : g.interior_ids) {
    for (auto [di, dj] : {std::pair{1, 0}, {0, 1}, {1, 1}, {1, -1}}) {
      double s = second_difference(W, id, di, dj);
      if (std::isfinite(s)) {
        sc.push_back(s - 2 / alpha);
        scpos.push_back(g.pos_of_active(id));
      }
    }
  }
  cert.named_reports["semiconcavity_excess"] = summarize_residuals(sc, scpos);

  // discrete stand-in for eta tr(a D^2 W) <= 1
  std::vector<double> tv;
  std::vector<Vec2> tpos;
  for (std::int32_t id : g.interior_ids) {
    double t = detail::trace_a_d2(W, p.coefficients, id);
    if (std::isfinite(t)) {
      tv.push_back(eta * t - 1.0);
      tpos.push_back(g.pos_of_active(id));
    }
  }
  cert.named_reports["eta_trace_excess"] = summarize_residuals(tv, tpos);

  const double res_tol = 10 * g.h;
  cert.verified = wmin > 0 && wmax < lambda && cert.report.max_residual <= res_tol &&
                  cert.named_reports["semiconcavity_excess"].max_residual <= 10 * g.h &&
                  cert.named_reports["eta_trace_excess"].max_residual <= 0.0;
  return cert;
}

// Exponential-in-1/eps barrier v^eps = exp((W_r - mu)/eps), w^eps = v + R t
// with R = (2/eps)||v||_{inf, B_r}. Verifies the strict discrete
// supersolution inequality R > L^h v at every interior node.
inline Certificate build_exponential_barrier(const Problem& p,
                                             std::shared_ptr<const MaskedGrid> grid,
                                             const Certificate& wr, double mu, double eps) {
  if (wr.kind != Certificate::Kind::W_r)
    throw config_error("build_exponential_barrier: W_r certificate required");
  const MaskedGrid& g = *grid;
  const double r = wr.params.at("r");
  const double c2 = wr.params.at("trace_a_d2_bound");
  const double eps0 = std::min(1.0, wr.eta) / std::max(c2, 1e-300);

  Certificate cert;
  cert.kind = Certificate::Kind::exp_barrier;
  cert.params = {{"mu", mu}, {"eps", eps}, {"eps0", eps0}, {"r", r}};

  cert.values = GridFunction(grid, 0.0);
  double vmax_br = 0;
  for (std::size_t id = 0; id < g.n_active(); ++id) {
    double v = std::exp((wr.values.values[id] - mu) / eps);
    cert.values.values[id] = v;
    if (norm(g.pos_of_active(static_cast<std::int32_t>(id))) < r)
      vmax_br = std::max(vmax_br, v);
  }
  const double R_eps = (2.0 / eps) * vmax_br;
  cert.time_slope = R_eps;
  cert.params["R_eps"] = R_eps;

  DiscreteOperator op = assemble_operator(p, grid, eps);
  std::vector<double> lv = op.apply(cert.values);
  std::vector<double> res(lv.size());
  std::vector<Vec2> pos(lv.size());
  for (std::size_t rr = 0; rr < lv.size(); ++rr) {
    res[rr] = lv[rr] - R_eps;  // < 0 required: R_eps > L^h v
    pos[rr] = g.pos_of_active(g.interior_ids[rr]);
  }
  cert.report = summarize_residuals(res, pos);
  cert.named_reports["strict_supersolution"] = cert.report;
  cert.eta = std::max(0.0, -cert.report.max_residual);
  cert.verified = eps < eps0 && cert.report.max_residual < 0;
  return cert;
}

// Perron barriers for the semilinear problem: the boundary family
// v_b(x;y,lambda) = 1 - exp(-alpha(|x-z|^2 - delta(lambda)^2)), z = y +
// lambda nu(y), with Lambda from the balance equation and alpha delta^2 =
// Lambda, plus the interior family v_i(x;y,gamma) = g(y) + B|x-y|^2 +
// omega(gamma). w_b and w_i are finite infima over (y, lambda/gamma) nets.
inline Certificate build_appendix_barriers(const Problem& p,
                                           std::shared_ptr<const MaskedGrid> grid, double eps,
                                           double M_eps,
                                           std::vector<double> lambda_net = {}) {
  const MaskedGrid& g = *grid;
  const Domain& dom = p.domain;
  const double theta = p.coefficients.theta;
  const double d = domain_diameter(dom);

  double bnorm = 0;
  for (std::size_t id = 0; id < g.n_active(); ++id)
    bnorm = std::max(bnorm, norm(p.coefficients.b(g.pos_of_active(static_cast<std::int32_t>(id)))));
  for (const Vec2& y : boundary_sample(dom, 256))
    bnorm = std::max(bnorm, norm(p.coefficients.b(y)));

  const double n_dim = 2;
  const double Lambda =
      (2 * n_dim / theta * eps + 2 * (d + 1) * (M_eps + bnorm)) / (4 * theta * eps);
  if (!(Lambda > 0)) throw config_error("build_appendix_barriers: Lambda <= 0 (bad eps/M)");
  const double balance_residual =
      std::abs(eps * (2 * n_dim / theta - 4 * theta * Lambda) + 2 * (d + 1) * (M_eps + bnorm));

  if (lambda_net.empty()) lambda_net = {0.04, 0.02, 0.01, 0.005};
  std::sort(lambda_net.begin(), lambda_net.end(), std::greater<>());
  const double lambda_min = lambda_net.back();

  // modulus of continuity of g: inflated sampled Lipschitz bound, capped at
  // the oscillation
  double lip_g = 0, gmin = 1e300, gmax = -1e300;
  {
    auto pts = boundary_sample(dom, 128);
    for (std::size_t id = 0; id < g.n_active(); ++id)
      pts.push_back(g.pos_of_active(static_cast<std::int32_t>(id)));
    for (std::size_t a = 0; a < pts.size(); ++a) {
      double gv = p.boundary_data.g(pts[a]);
      gmin = std::min(gmin, gv);
      gmax = std::max(gmax, gv);
    }
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    for (int k = 0; k < 20000; ++k) {
      Vec2 a = pts[pick(rng)], b2 = pts[pick(rng)];
      double run = norm(a - b2);
      if (run < 1e-9) continue;
      lip_g = std::max(lip_g, std::abs(p.boundary_data.g(a) - p.boundary_data.g(b2)) / run);
    }
    lip_g *= 1.05;
  }
  const double osc_g = gmax - gmin;
  auto omega = [&](double s) { return std::min(lip_g * s, osc_g); };

  const double A = 1.01 * omega(d) / std::max(1 - std::exp(-Lambda), 1e-12) + 1e-12;

  // member set: (y, lambda) with y from a uniform boundary net plus every
  // boundary projection of the grid
  struct Member {
    Vec2 y, z;
    double lambda, delta, alpha, base;  // base = g(y) + omega(3 lambda)
  };
  std::vector<Vec2> ynet = boundary_sample(dom, 256);
  for (std::int32_t id : g.boundary_ids) ynet.push_back(g.projection[id]);

  std::vector<Member> members;
  std::map<double, double> delta_of;
  for (double lam : lambda_net) {
    double del = normal_offset_gap(dom, lam);
    delta_of[lam] = del;
    double alpha = Lambda / (del * del);
    for (const Vec2& y : ynet) {
      Member m;
      m.y = y;
      m.lambda = lam;
      m.delta = del;
      m.alpha = alpha;
      m.z = y + lam * boundary_normal(dom, y, 1e-5);
      m.base = p.boundary_data.g(y) + omega(3 * lam);
      members.push_back(m);
    }
  }

  auto vb_at = [&](const Member& m, const Vec2& x) {
    Vec2 dz = x - m.z;
    double e = m.alpha * (dot(dz, dz) - m.delta * m.delta);
    // below double resolution of 1 - exp(-e); exactly the far-field value
    if (e > 46) return 1.0;
    return 1.0 - std::exp(-e);
  };
  auto wb_at = [&](const Vec2& x) {
    double best = 1e300;
    for (const Member& m : members) best = std::min(best, m.base + A * vb_at(m, x));
    return best;
  };

  // w_i at t = 0 via the exact lower envelope: min_y [g(y) + B|x-y|^2] is an
  // inf-convolution of the sampled data
  GridFunction gsamp = GridFunction::sample(grid, p.boundary_data.g);
  std::vector<double> gamma_net = {d / 8, d / 16, d / 32};
  GridFunction wi(grid, 1e300);
  double C_gamma_min = 0;
  for (double gam : gamma_net) {
    double B = omega(d) / (gam * gam);
    GridFunction env = inf_convolution(gsamp, 1.0 / B);
    for (std::size_t id = 0; id < wi.values.size(); ++id)
      wi.values[id] = std::min(wi.values[id], env.values[id] + omega(gam));
    C_gamma_min = 2 * B * (eps * n_dim / theta + (d + 1) * (M_eps + bnorm));
  }

  Certificate cert;
  cert.kind = Certificate::Kind::appendix_barrier;
  cert.params = {{"eps", eps},
                 {"M_eps", M_eps},
                 {"Lambda", Lambda},
                 {"balance_residual", balance_residual},
                 {"diameter", d},
                 {"b_norm", bnorm},
                 {"A", A},
                 {"lip_g", lip_g},
                 {"lambda_min", lambda_min},
                 {"C_gamma_min", C_gamma_min},
                 {"omega_3lambda_min", omega(3 * lambda_min)}};
  for (auto& [lam, del] : delta_of) cert.params["delta(" + std::to_string(lam) + ")"] = del;
  cert.time_slope = C_gamma_min;

  // w = min(w_b, w_i(.,0)) sampled on the grid
  cert.values = GridFunction(grid, 0.0);
  for (std::size_t id = 0; id < cert.values.values.size(); ++id) {
    Vec2 x = g.pos_of_active(static_cast<std::int32_t>(id));
    cert.values.values[id] = std::min(wb_at(x), wi.values[id]);
  }

  // (1) semilinear supersolution residual of each boundary member:
  // L^h v_b + M |D_h v_b| <= 0 up to tolerance at interior nodes. Far from
  // z the sampled barrier is exactly 1, so only the patch near z matters.
  DiscreteOperator op = assemble_operator(p, grid, eps);
  std::vector<std::int32_t> row_of(g.n_active(), -1);
  for (std::size_t r2 = 0; r2 < g.interior_ids.size(); ++r2)
    row_of[g.interior_ids[r2]] = static_cast<std::int32_t>(r2);

  double worst_member_residual = -1e300;
  Vec2 worst_pos{};
  std::size_t checked = 0;
  for (const Member& m : members) {
    double reach = std::sqrt(m.delta * m.delta + 46 / m.alpha) + 2 * g.h;
    int ci = static_cast<int>(std::lround(m.z[0] / g.h)) - g.i0;
    int cj = static_cast<int>(std::lround(m.z[1] / g.h)) - g.j0;
    int rad = static_cast<int>(std::ceil(reach / g.h)) + 1;
    for (int j = cj - rad; j <= cj + rad; ++j)
      for (int i = ci - rad; i <= ci + rad; ++i) {
        std::int32_t id = g.id_at(i, j);
        if (id < 0 || row_of[id] < 0) continue;
        std::int32_t r2 = row_of[id];
        Vec2 xi = g.pos_of_active(id);
        double vi = vb_at(m, xi);
        double acc = 0;
        for (const auto& cp : op.in[r2])
          acc += cp.c * (vb_at(m, g.pos_of_active(g.interior_ids[cp.col])) - vi);
        for (const auto& bc : op.bd[r2])
          acc += bc.c * (vb_at(m, g.pos_of_active(g.boundary_ids[bc.b])) - vi);
        // central-difference gradient for the M(eps)|Dv| part
        int fidx = g.node_of_active[id];
        int ii = fidx % g.nx, jj = fidx / g.nx;
        auto vat = [&](int i2, int j2) { return vb_at(m, g.pos(i2, j2)); };
        double gx = (vat(ii + 1, jj) - vat(ii - 1, jj)) / (2 * g.h);
        double gy = (vat(ii, jj + 1) - vat(ii, jj - 1)) / (2 * g.h);
        double r_val = acc + M_eps * std::hypot(gx, gy);
        ++checked;
        if (r_val > worst_member_residual) {
          worst_member_residual = r_val;
          worst_pos = xi;
        }
      }
  }
  ResidualReport vb_rep;
  vb_rep.max_residual = checked ? worst_member_residual : 0.0;
  vb_rep.p99_residual = vb_rep.max_residual;
  vb_rep.n_checked = checked;
  vb_rep.worst_pos = worst_pos;
  cert.named_reports["vb_supersolution"] = vb_rep;

  // (2) w >= g on the closure; (3) w close to g at boundary projections
  std::vector<double> lower, bconsist;
  std::vector<Vec2> lpos, bpos;
  for (std::size_t id = 0; id < cert.values.values.size(); ++id) {
    Vec2 x = g.pos_of_active(static_cast<std::int32_t>(id));
    lower.push_back(p.boundary_data.g(x) - cert.values.values[id]);
    lpos.push_back(x);
  }
  for (std::int32_t id : g.boundary_ids) {
    Vec2 xp = g.projection[id];
    bconsist.push_back(std::abs(wb_at(xp) - p.boundary_data.g(xp)) -
                       (omega(3 * lambda_min) + 2 * g.h * lip_g));
    bpos.push_back(xp);
  }
  cert.named_reports["lower_bound_deficit"] = summarize_residuals(lower, lpos);
  cert.named_reports["boundary_consistency_excess"] = summarize_residuals(bconsist, bpos);

  // (4) boundary consistency of the member family itself
  double vb_self_max = 0;
  for (const Vec2& y : boundary_sample(dom, 64)) {
    Member m;
    m.lambda = lambda_min;
    m.delta = delta_of[lambda_min];
    m.alpha = Lambda / (m.delta * m.delta);
    m.z = y + lambda_min * boundary_normal(dom, y, 1e-5);
    vb_self_max = std::max(vb_self_max, vb_at(m, y));
  }
  cert.params["vb_self_lambda_min"] = vb_self_max;

  cert.report = vb_rep;
  cert.verified = vb_rep.max_residual <= 1e-6 &&
                  cert.named_reports["lower_bound_deficit"].max_residual <= 1e-9 &&
                  cert.named_reports["boundary_consistency_excess"].max_residual <= 1e-9 &&
                  vb_self_max <= 0.05 && balance_residual <= 1e-12 * (1 + Lambda);
  return cert;
}

}  // namespace metastab

#endif
