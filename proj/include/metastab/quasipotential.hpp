#ifndef METASTAB_QUASIPOTENTIAL_HPP
#define METASTAB_QUASIPOTENTIAL_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>
#include <vector>

#include "metastab/grid_function.hpp"
#include "metastab/model.hpp"

namespace metastab {

// Optimal-time action of traversing the straight segment x -> y with frozen
// midpoint coefficients, plus a running cost gamma per unit time:
//   min_{T>0} [ T L(m, s/T) + gamma T ] = (1/2) sqrt(A (C + 4 gamma)) - B/2,
// with s = y-x, A = a^{-1}s.s, B = a^{-1}s.b, C = a^{-1}b.b at the midpoint.
// Nonnegative for gamma >= 0 by Cauchy-Schwarz in the a^{-1} inner product;
// the clamp removes roundoff-negative values on downstream segments.
inline double segment_action(const Coefficients& c, const Vec2& x, const Vec2& y,
                             double gamma = 0) {
  Vec2 s = y - x;
  if (dot(s, s) == 0) return 0.0;
  Vec2 m = 0.5 * (x + y);
  Mat2 ai = inverse(c.a(m));
  Vec2 bm = c.b(m);
  double A = dot(ai * s, s);
  double B = dot(ai * s, bm);
  double C = dot(ai * bm, bm);
  return std::max(0.0, 0.5 * std::sqrt(A * (C + 4 * gamma)) - 0.5 * B);
}

// Optimal traversal time of the same segment (infinite when b(m)=0, gamma=0).
inline double segment_time(const Coefficients& c, const Vec2& x, const Vec2& y,
                           double gamma = 0) {
  Vec2 s = y - x;
  if (dot(s, s) == 0) return 0.0;
  Vec2 m = 0.5 * (x + y);
  Mat2 ai = inverse(c.a(m));
  Vec2 bm = c.b(m);
  double A = dot(ai * s, s);
  double C = dot(ai * bm, bm);
  return std::sqrt(A / std::max(C + 4 * gamma, 1e-300));
}

// Signed lattice directions of the label-setting stencil: all (i,j) with
// gcd(|i|,|j|)=1 and max(|i|,|j|) <= order. Orders 1/2/3 give 8/16/32
// directions.
inline std::vector<std::pair<int, int>> stencil_directions(int order) {
  if (order < 1 || order > 3) throw config_error("stencil_order must be 1, 2 or 3");
  std::vector<std::pair<int, int>> dirs;
  for (int i = -order; i <= order; ++i)
    for (int j = -order; j <= order; ++j) {
      if (i == 0 && j == 0) continue;
      if (std::gcd(std::abs(i), std::abs(j)) != 1) continue;
      dirs.emplace_back(i, j);
    }
  return dirs;
}

struct ResidualReport {
  double max_residual = 0;
  double p99_residual = 0;
  std::size_t n_checked = 0;
  Vec2 worst_pos{};
};

inline ResidualReport summarize_residuals(std::vector<double>& r,
                                          const std::vector<Vec2>& pos) {
  ResidualReport rep;
  rep.n_checked = r.size();
  if (r.empty()) return rep;
  std::size_t worst = 0;
  for (std::size_t k = 0; k < r.size(); ++k)
    if (r[k] > r[worst]) worst = k;
  rep.max_residual = r[worst];
  rep.worst_pos = pos[worst];
  std::vector<double> sorted = r;
  std::sort(sorted.begin(), sorted.end());
  rep.p99_residual = sorted[static_cast<std::size_t>(0.99 * (sorted.size() - 1))];
  return rep;
}

// Grid function for V, U or u_gamma plus provenance and the extracted
// boundary minimum.
struct PotentialField {
  enum class Source { point, boundary };
  GridFunction field;
  Source source = Source::point;
  double gamma = 0;
  int stencil_order = 2;
  // per boundary-adjacent node (grid->boundary_ids order): value carried to
  // the boundary projection at first order
  std::vector<double> boundary_values;
  double m0 = std::numeric_limits<double>::quiet_NaN();
  std::vector<Vec2> argmin;  // cluster representatives on the boundary
  std::vector<int> argmin_cluster_sizes;
  bool argmin_uniform = false;
  double lip_estimate = 0;
};

struct BoundaryMinimum {
  double m0 = 0;
  std::vector<Vec2> argmin;
  std::vector<int> cluster_sizes;
  bool uniform = false;
};

// m0 and the clustered argmin of the boundary trace of a point-source field.
inline BoundaryMinimum boundary_minimum(const PotentialField& f, double tol) {
  const MaskedGrid& g = *f.field.grid;
  if (g.boundary_ids.empty()) throw solver_error("boundary_minimum: no boundary-adjacent nodes");
  if (f.boundary_values.size() != g.boundary_ids.size())
    throw solver_error("boundary_minimum: field has no populated boundary values");
  BoundaryMinimum out;
  out.m0 = *std::min_element(f.boundary_values.begin(), f.boundary_values.end());

  std::vector<std::size_t> cand;
  for (std::size_t k = 0; k < f.boundary_values.size(); ++k)
    if (f.boundary_values[k] <= out.m0 + tol) cand.push_back(k);
  out.uniform = cand.size() * 2 > g.boundary_ids.size();

  // greedy clustering: link candidates within 3h
  const double link = 3 * g.h;
  std::vector<bool> used(cand.size(), false);
  for (std::size_t s = 0; s < cand.size(); ++s) {
    if (used[s]) continue;
    std::vector<std::size_t> stack{s};
    used[s] = true;
    std::vector<std::size_t> members;
    while (!stack.empty()) {
      std::size_t cur = stack.back();
      stack.pop_back();
      members.push_back(cur);
      for (std::size_t t = 0; t < cand.size(); ++t) {
        if (used[t]) continue;
        if (norm(g.projection[g.boundary_ids[cand[cur]]] -
                 g.projection[g.boundary_ids[cand[t]]]) <= link) {
          used[t] = true;
          stack.push_back(t);
        }
      }
    }
    std::size_t best = members[0];
    for (std::size_t m : members)
      if (f.boundary_values[cand[m]] < f.boundary_values[cand[best]]) best = m;
    out.argmin.push_back(g.projection[g.boundary_ids[cand[best]]]);
    out.cluster_sizes.push_back(static_cast<int>(members.size()));
  }
  return out;
}

namespace detail {

inline double lipschitz_estimate(const GridFunction& u) {
  const MaskedGrid& g = *u.grid;
  std::vector<double> q;
  q.reserve(u.values.size());
  for (std::size_t id = 0; id < u.values.size(); ++id) {
    int f = g.node_of_active[static_cast<std::int32_t>(id)];
    int i = f % g.nx, j = f / g.nx;
    std::int32_t r = g.id_at(i + 1, j), t = g.id_at(i, j + 1);
    if (r >= 0) q.push_back(std::abs(u[r] - u[static_cast<std::int32_t>(id)]) / g.h);
    if (t >= 0) q.push_back(std::abs(u[t] - u[static_cast<std::int32_t>(id)]) / g.h);
  }
  if (q.empty()) return 0;
  std::sort(q.begin(), q.end());
  return q[static_cast<std::size_t>(0.99 * (q.size() - 1))];
}

// Label-setting (Dijkstra) pass over the masked lattice. `seeds` carries
// (active id, initial value); edge_cost(u,v) is the cost of relaxing v from a
// settled u. Ties break on the node index, so runs are deterministic.
template <typename EdgeCost>
std::vector<double> label_setting(const MaskedGrid& g, int stencil_order,
                                  const std::vector<std::pair<std::int32_t, double>>& seeds,
                                  EdgeCost&& edge_cost) {
  const auto dirs = stencil_directions(stencil_order);
  std::vector<double> dist(g.n_active(), std::numeric_limits<double>::infinity());
  using Entry = std::pair<double, std::int32_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> pq;
  for (auto [id, v] : seeds) {
    if (v < dist[id]) {
      dist[id] = v;
      pq.emplace(v, id);
    }
  }
  std::vector<bool> settled(g.n_active(), false);
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (settled[u]) continue;
    settled[u] = true;
    int f = g.node_of_active[u];
    int i = f % g.nx, j = f / g.nx;
    for (auto [di, dj] : dirs) {
      std::int32_t v = g.id_at(i + di, j + dj);
      if (v < 0 || settled[v]) continue;
      double c = edge_cost(u, v);
      if (c == std::numeric_limits<double>::infinity()) continue;
      double nd = d + c;
      if (nd < dist[v]) {
        dist[v] = nd;
        pq.emplace(nd, v);
      }
    }
  }
  for (std::size_t id = 0; id < dist.size(); ++id)
    if (!settled[id]) {
      std::ostringstream os;
      os << "label_setting: unreachable active node at "
         << g.pos_of_active(static_cast<std::int32_t>(id)) << " (disconnected mask)";
      throw solver_error(os.str());
    }
  return dist;
}

}  // namespace detail

// V(.) = V_Omega(0, .): single-source label setting from the node nearest the
// equilibrium, with the geometric segment action as edge cost. Values
// converge to V from above under grid and stencil refinement. m0 and the
// argmin clusters are extracted from the boundary-adjacent nodes, carried to
// their boundary projections at first order.
inline PotentialField solve_from_point(const Problem& p,
                                       std::shared_ptr<const MaskedGrid> grid,
                                       int stencil_order = 2) {
  const MaskedGrid& g = *grid;
  std::int32_t source = g.nearest_active(vec2(0, 0));
  if (!g.is_interior(source))
    throw config_error("solve_from_point: node nearest the equilibrium is not interior");
  const double h_guard = 0.5 * g.h * (1 - 1e-12);
  auto cost = [&](std::int32_t u, std::int32_t v) {
    Vec2 xu = g.pos_of_active(u), xv = g.pos_of_active(v);
    Vec2 m = 0.5 * (xu + xv);
    // never relax across the equilibrium, where the frozen-midpoint action
    // degenerates (paths route through the source node instead)
    if (norm(m) < h_guard) return std::numeric_limits<double>::infinity();
    return segment_action(p.coefficients, xu, xv, 0.0);
  };
  PotentialField out;
  out.field.grid = grid;
  out.field.values = detail::label_setting(g, stencil_order, {{source, 0.0}}, cost);
  out.source = PotentialField::Source::point;
  out.gamma = 0;
  out.stencil_order = stencil_order;
  out.lip_estimate = detail::lipschitz_estimate(out.field);

  out.boundary_values.resize(g.boundary_ids.size());
  for (std::size_t k = 0; k < g.boundary_ids.size(); ++k) {
    std::int32_t id = g.boundary_ids[k];
    double corr = g.projection_dist[id] > 1e-12
                      ? segment_action(p.coefficients, g.pos_of_active(id), g.projection[id], 0)
                      : 0.0;
    out.boundary_values[k] = out.field[id] + corr;
  }
  BoundaryMinimum bm = boundary_minimum(out, 2 * g.h * std::max(out.lip_estimate, 1e-12));
  out.m0 = bm.m0;
  out.argmin = bm.argmin;
  out.argmin_cluster_sizes = bm.cluster_sizes;
  out.argmin_uniform = bm.uniform;
  return out;
}

// u_gamma (gamma > 0) or U (gamma = 0): label setting from all
// boundary-adjacent nodes, seeded with the first-order cost of reaching the
// boundary projection. Edge costs run along the path from the interior
// point toward the boundary, so relaxing v from u charges the segment v->u.
inline PotentialField solve_to_boundary(const Problem& p,
                                        std::shared_ptr<const MaskedGrid> grid, double gamma,
                                        int stencil_order = 2) {
  if (gamma < 0) throw config_error("solve_to_boundary: gamma must be >= 0");
  const MaskedGrid& g = *grid;
  std::vector<std::pair<std::int32_t, double>> seeds;
  seeds.reserve(g.boundary_ids.size());
  for (std::int32_t id : g.boundary_ids) {
    double seed = g.projection_dist[id] > 1e-12
                      ? segment_action(p.coefficients, g.pos_of_active(id), g.projection[id],
                                       gamma)
                      : 0.0;
    seeds.emplace_back(id, seed);
  }
  const double h_guard = 0.5 * g.h * (1 - 1e-12);
  auto cost = [&](std::int32_t u, std::int32_t v) {
    Vec2 xu = g.pos_of_active(u), xv = g.pos_of_active(v);
    Vec2 m = 0.5 * (xu + xv);
    if (norm(m) < h_guard) return std::numeric_limits<double>::infinity();
    return segment_action(p.coefficients, xv, xu, gamma);
  };
  PotentialField out;
  out.field.grid = grid;
  out.field.values = detail::label_setting(g, stencil_order, seeds, cost);
  out.source = PotentialField::Source::boundary;
  out.gamma = gamma;
  out.stencil_order = stencil_order;
  out.lip_estimate = detail::lipschitz_estimate(out.field);
  out.boundary_values.resize(g.boundary_ids.size());
  for (std::size_t k = 0; k < g.boundary_ids.size(); ++k)
    out.boundary_values[k] = out.field[g.boundary_ids[k]];
  return out;
}

// Minimizing path of the geometric action between two points: gradient
// descent on interior knots with backtracking, knot projection into the
// closed domain, and periodic equal-arclength redistribution.
struct ActionPath {
  std::vector<Vec2> points;
  double total_time = 0;
  double action = 0;
  bool converged = false;
};

inline double path_action(const Coefficients& c, const std::vector<Vec2>& pts) {
  double s = 0;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) s += segment_action(c, pts[k], pts[k + 1]);
  return s;
}

inline ActionPath minimize_path_action(const Coefficients& c, const Vec2& x, const Vec2& y,
                                       int n_knots, const Domain& domain,
                                       int max_epochs = 600) {
  if (n_knots < 2) throw config_error("minimize_path_action: need at least 2 knots");
  std::vector<Vec2> pts(n_knots + 1);
  for (int k = 0; k <= n_knots; ++k)
    pts[k] = x + (static_cast<double>(k) / n_knots) * (y - x);

  auto project_in = [&](Vec2 q) {
    if (domain.rho(q) > 0) q = project_to_boundary(domain, q);
    return q;
  };
  auto redistribute = [&](std::vector<Vec2>& p) {
    std::vector<double> arc(p.size(), 0);
    for (std::size_t k = 1; k < p.size(); ++k) arc[k] = arc[k - 1] + norm(p[k] - p[k - 1]);
    if (arc.back() < 1e-14) return;
    std::vector<Vec2> np(p.size());
    np.front() = p.front();
    np.back() = p.back();
    std::size_t seg = 1;
    for (std::size_t k = 1; k + 1 < p.size(); ++k) {
      double target = arc.back() * k / (p.size() - 1);
      while (seg + 1 < p.size() && arc[seg] < target) ++seg;
      double t = (target - arc[seg - 1]) / std::max(arc[seg] - arc[seg - 1], 1e-300);
      np[k] = project_in(p[seg - 1] + t * (p[seg] - p[seg - 1]));
    }
    p = np;
  };

  double J = path_action(c, pts);
  std::vector<Vec2> best_pts = pts;
  double best_J = J;
  double alpha = 0.1 * norm(y - x) / n_knots;
  bool converged = false;
  const double fd = 1e-7;
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    // local finite-difference gradient: each knot touches two segments
    std::vector<Vec2> grad(pts.size(), vec2(0, 0));
    for (std::size_t k = 1; k + 1 < pts.size(); ++k) {
      for (int axis = 0; axis < 2; ++axis) {
        Vec2 plus = pts[k], minus = pts[k];
        plus[axis] += fd;
        minus[axis] -= fd;
        double jp = segment_action(c, pts[k - 1], plus) + segment_action(c, plus, pts[k + 1]);
        double jm = segment_action(c, pts[k - 1], minus) + segment_action(c, minus, pts[k + 1]);
        grad[k][axis] = (jp - jm) / (2 * fd);
      }
    }
    double gnorm = 0;
    for (const Vec2& gk : grad) gnorm = std::max(gnorm, norm(gk));
    if (gnorm < 1e-10) {
      converged = true;
      break;
    }
    // backtracking step on all knots at once
    bool improved = false;
    for (int ls = 0; ls < 25; ++ls) {
      std::vector<Vec2> cand = pts;
      for (std::size_t k = 1; k + 1 < cand.size(); ++k)
        cand[k] = project_in(cand[k] - alpha * grad[k]);
      double Jc = path_action(c, cand);
      if (Jc < J - 1e-15) {
        pts = cand;
        J = Jc;
        improved = true;
        alpha *= 1.3;
        break;
      }
      alpha *= 0.5;
    }
    if (J < best_J) {
      best_J = J;
      best_pts = pts;
    }
    if (!improved) {
      converged = true;
      break;
    }
    if (epoch % 10 == 9) {
      redistribute(pts);
      J = path_action(c, pts);
    }
  }
  if (J > best_J) {
    pts = best_pts;
    J = best_J;
  }
  ActionPath out;
  out.points = pts;
  out.action = J;
  out.converged = converged;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k)
    out.total_time += segment_time(c, pts[k], pts[k + 1]);
  return out;
}

// Upwind residual of the Hamilton-Jacobi equation on interior nodes.
// Point-source fields claim H(x, DV) = 0; boundary-source fields claim
// H(x, -Du) = gamma. The per-axis one-sided difference is taken from the
// side of the smaller neighbor value (the arrival side of the characteristic),
// and a 3h-ball at the point source is excluded.
inline ResidualReport check_subsolution(const PotentialField& f, const Coefficients& c,
                                        double /*tol*/ = 0) {
  const MaskedGrid& g = *f.field.grid;
  const double sgn = f.source == PotentialField::Source::point ? 1.0 : -1.0;
  std::vector<double> res;
  std::vector<Vec2> pos;
  for (std::int32_t id : g.interior_ids) {
    Vec2 xpos = g.pos_of_active(id);
    if (f.source == PotentialField::Source::point && norm(xpos) < 3 * g.h) continue;
    Vec2 grad;
    for (int axis = 0; axis < 2; ++axis) {
      NodeDiff d = axis_differences(f.field, id, axis);
      int fidx = g.node_of_active[id];
      int i = fidx % g.nx, j = fidx / g.nx;
      int di = axis == 0 ? 1 : 0, dj = axis == 0 ? 0 : 1;
      std::int32_t m = g.id_at(i - di, j - dj), p = g.id_at(i + di, j + dj);
      if (m >= 0 && p >= 0)
        grad[axis] = f.field[m] <= f.field[p] ? d.backward : d.forward;
      else
        grad[axis] = d.central;
    }
    double r = hamiltonian(c, xpos, sgn * grad) - (f.source == PotentialField::Source::point
                                                       ? 0.0
                                                       : f.gamma);
    res.push_back(r);
    pos.push_back(xpos);
  }
  return summarize_residuals(res, pos);
}

}  // namespace metastab

#endif
