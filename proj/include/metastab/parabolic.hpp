#ifndef METASTAB_PARABOLIC_HPP
#define METASTAB_PARABOLIC_HPP

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "metastab/grid_function.hpp"
#include "metastab/model.hpp"

namespace metastab {

// Monotone discretization of L_eps u = eps tr(a D^2 u) + b . D u on the
// interior nodes: 5-point diffusion for diagonal a, 9-point with the
// diagonal-pair splitting when a12 != 0 (requires |a12| <= min(a11,a22)),
// first-order upwind drift. All off-diagonal coefficients are >= 0 and the
// diagonal is minus their sum, so constants are annihilated exactly.
// Couplings to boundary-adjacent nodes are kept separate; solvers eliminate
// them onto the Dirichlet data at the boundary projections.
struct DiscreteOperator {
  std::shared_ptr<const MaskedGrid> grid;
  double eps = 0;
  std::vector<std::int32_t> row_of_active;  // active id -> row index or -1

  struct Coupling {
    std::int32_t col = 0;  // interior row index
    double c = 0;
  };
  struct BoundaryCoupling {
    std::int32_t b = 0;  // index into grid->boundary_ids
    double c = 0;
  };
  std::vector<std::vector<Coupling>> in;           // per row
  std::vector<std::vector<BoundaryCoupling>> bd;   // per row
  std::vector<double> offdiag_sum;                 // per row

  std::size_t n_rows() const { return in.size(); }

  // L^h u at every interior row, reading boundary-adjacent values from u
  // itself (used by certificate residual checks).
  std::vector<double> apply(const GridFunction& u) const {
    const MaskedGrid& g = *grid;
    std::vector<double> out(n_rows(), 0.0);
    for (std::size_t r = 0; r < n_rows(); ++r) {
      double ui = u[g.interior_ids[r]];
      double s = 0;
      for (const Coupling& cp : in[r]) s += cp.c * (u[g.interior_ids[cp.col]] - ui);
      for (const BoundaryCoupling& bc : bd[r]) s += bc.c * (u[g.boundary_ids[bc.b]] - ui);
      out[r] = s;
    }
    return out;
  }
};

// extra_drift, when nonempty, adds a per-interior-node vector to b before
// upwinding; the semilinear stepper uses it to freeze the gradient term into
// a monotone operator.
inline DiscreteOperator assemble_operator(const Problem& p,
                                          std::shared_ptr<const MaskedGrid> grid, double eps,
                                          const std::vector<Vec2>& extra_drift = {}) {
  if (eps <= 0) throw config_error("assemble_operator: eps must be positive");
  const MaskedGrid& g = *grid;
  DiscreteOperator op;
  op.grid = grid;
  op.eps = eps;
  op.row_of_active.assign(g.n_active(), -1);
  for (std::size_t r = 0; r < g.interior_ids.size(); ++r)
    op.row_of_active[g.interior_ids[r]] = static_cast<std::int32_t>(r);
  op.in.resize(g.interior_ids.size());
  op.bd.resize(g.interior_ids.size());
  op.offdiag_sum.assign(g.interior_ids.size(), 0.0);

  const double h = g.h, h2 = h * h;
  for (std::size_t r = 0; r < g.interior_ids.size(); ++r) {
    std::int32_t id = g.interior_ids[r];
    int f = g.node_of_active[id];
    int i = f % g.nx, j = f / g.nx;
    Vec2 x = g.pos(i, j);
    Mat2 a = p.coefficients.a(x);
    double a12 = 0.5 * (a(0, 1) + a(1, 0));
    if (std::abs(a12) > std::min(a(0, 0), a(1, 1)) * (1 + 1e-12)) {
      std::ostringstream os;
      os << "assemble_operator: anisotropy unsupported at node " << x
         << " (|a12| > min(a11,a22))";
      throw solver_error(os.str());
    }
    Vec2 b = p.coefficients.b(x);
    if (!extra_drift.empty()) b += extra_drift[r];

    auto couple = [&](int di, int dj, double c) {
      if (c <= 0) return;
      std::int32_t nb = g.id_at(i + di, j + dj);
      if (nb < 0) {
        std::ostringstream os;
        os << "assemble_operator: stencil leaves the mask at " << x;
        throw solver_error(os.str());
      }
      if (op.row_of_active[nb] >= 0)
        op.in[r].push_back({op.row_of_active[nb], c});
      else {
        // locate the boundary index of nb
        auto it = std::lower_bound(g.boundary_ids.begin(), g.boundary_ids.end(), nb);
        op.bd[r].push_back({static_cast<std::int32_t>(it - g.boundary_ids.begin()), c});
      }
      op.offdiag_sum[r] += c;
    };

    double cxx = eps * (a(0, 0) - std::abs(a12)) / h2;
    double cyy = eps * (a(1, 1) - std::abs(a12)) / h2;
    double cdd = eps * std::abs(a12) / h2;
    couple(1, 0, cxx);
    couple(-1, 0, cxx);
    couple(0, 1, cyy);
    couple(0, -1, cyy);
    if (cdd > 0) {
      if (a12 > 0) {
        couple(1, 1, cdd);
        couple(-1, -1, cdd);
      } else {
        couple(1, -1, cdd);
        couple(-1, 1, cdd);
      }
    }
    // first-order upwind drift
    if (b[0] >= 0)
      couple(1, 0, b[0] / h);
    else
      couple(-1, 0, -b[0] / h);
    if (b[1] >= 0)
      couple(0, 1, b[1] / h);
    else
      couple(0, -1, -b[1] / h);
  }
  return op;
}

// t_k = t_min * rho^k with rho = (t_max/t_min)^{1/n_steps}, preceded by a
// uniform 8-step ramp from 0 to t_min; ends exactly at t_max.
inline std::vector<double> geometric_time_grid(double t_min, double t_max, int n_steps) {
  if (!(0 < t_min && t_min < t_max)) throw config_error("geometric_time_grid: need 0 < t_min < t_max");
  if (n_steps < 8) throw config_error("geometric_time_grid: need n_steps >= 8");
  std::vector<double> t;
  t.reserve(9 + n_steps);
  for (int k = 0; k <= 8; ++k) t.push_back(t_min * k / 8.0);
  const double rho = std::pow(t_max / t_min, 1.0 / n_steps);
  double cur = t_min;
  for (int k = 1; k < n_steps; ++k) {
    cur *= rho;
    t.push_back(cur);
  }
  t.push_back(t_max);
  return t;
}

enum class LinearBackend {
  sparse_lu,    // direct; default
  monotone_gs,  // weighted Gauss-Seidel; order-preserving bitwise
};

namespace detail {

// One backward-Euler step (or the stationary problem when dt < 0):
//   (I - dt L) u = u_old        resp.   -L u = forcing
// with Dirichlet couplings eliminated onto gb. `forcing` may be empty.
struct StepSystem {
  const DiscreteOperator& op;
  const std::vector<double>& gb;  // per boundary index
  double dt;                      // < 0 means stationary
  const std::vector<double>* u_old = nullptr;
  const std::vector<double>* forcing = nullptr;  // added to the rhs
};

inline std::vector<double> solve_lu(const StepSystem& s) {
  const std::size_t n = s.op.n_rows();
  const bool stationary = s.dt < 0;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(10 * n);
  Eigen::VectorXd rhs(n);
  for (std::size_t r = 0; r < n; ++r) {
    double diag = stationary ? s.op.offdiag_sum[r] : 1.0 + s.dt * s.op.offdiag_sum[r];
    trip.emplace_back(r, r, diag);
    double scale = stationary ? 1.0 : s.dt;
    for (const auto& cp : s.op.in[r]) trip.emplace_back(r, cp.col, -scale * cp.c);
    double b = 0;
    for (const auto& bc : s.op.bd[r]) b += scale * bc.c * s.gb[bc.b];
    rhs[r] = b + (s.u_old ? (*s.u_old)[r] : 0.0) + (s.forcing ? (*s.forcing)[r] : 0.0);
  }
  Eigen::SparseMatrix<double> M(n, n);
  M.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(M);
  if (lu.info() != Eigen::Success) throw solver_error("sparse LU factorization failed");
  Eigen::VectorXd x = lu.solve(rhs);
  if (lu.info() != Eigen::Success) throw solver_error("sparse LU solve failed");
  return std::vector<double>(x.data(), x.data() + n);
}

// Weighted-sum Gauss-Seidel. Every update is a convex-combination-style sum
// with nonnegative weights evaluated in a fixed order, so iterates of two
// ordered problems stay ordered bitwise. The sweep count is estimated on a
// fixed probe right-hand side, which keeps it independent of the data.
inline int gs_sweeps_for(const StepSystem& s) {
  const std::size_t n = s.op.n_rows();
  const bool stationary = s.dt < 0;
  std::vector<double> u(n, 0.0), probe(n);
  for (std::size_t r = 0; r < n; ++r) probe[r] = 1.0 + 0.5 * (r % 7);
  int sweeps = 0;
  const int cap = 500000;
  double change = 1e300, umax = 0;
  while (change > 1e-13 * (1 + umax) && sweeps < cap) {
    change = 0;
    umax = 0;
    for (std::size_t r = 0; r < n; ++r) {
      double num = probe[r];
      double den = stationary ? s.op.offdiag_sum[r] : 1.0 + s.dt * s.op.offdiag_sum[r];
      double scale = stationary ? 1.0 : s.dt;
      for (const auto& cp : s.op.in[r]) num += scale * cp.c * u[cp.col];
      double next = num / den;
      change = std::max(change, std::abs(next - u[r]));
      umax = std::max(umax, std::abs(next));
      u[r] = next;
    }
    ++sweeps;
  }
  if (sweeps >= cap) throw solver_error("monotone_gs: sweep estimate did not converge");
  return 2 * sweeps + 8;
}

inline std::vector<double> solve_gs(const StepSystem& s) {
  const std::size_t n = s.op.n_rows();
  const bool stationary = s.dt < 0;
  const int sweeps = gs_sweeps_for(s);
  std::vector<double> u(n, 0.0);
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (std::size_t r = 0; r < n; ++r) {
      double num = (s.u_old ? (*s.u_old)[r] : 0.0) + (s.forcing ? (*s.forcing)[r] : 0.0);
      double den = stationary ? s.op.offdiag_sum[r] : 1.0 + s.dt * s.op.offdiag_sum[r];
      double scale = stationary ? 1.0 : s.dt;
      for (const auto& cp : s.op.in[r]) num += scale * cp.c * u[cp.col];
      for (const auto& bc : s.op.bd[r]) num += scale * bc.c * s.gb[bc.b];
      u[r] = num / den;
    }
  }
  return u;
}

inline std::vector<double> solve_step(const StepSystem& s, LinearBackend backend) {
  return backend == LinearBackend::sparse_lu ? solve_lu(s) : solve_gs(s);
}

// The scheme satisfies min(data) <= u <= max(data) exactly in exact
// arithmetic; this projects solver roundoff back into that range. min/max
// are monotone, so the projection preserves bitwise comparison.
inline void clamp_range(std::vector<double>& u, double lo, double hi) {
  for (double& v : u) v = std::min(std::max(v, lo), hi);
}

inline std::vector<Vec2> interior_gradients(const DiscreteOperator& op,
                                            const GridFunction& u) {
  std::vector<Vec2> grad(op.n_rows());
  const MaskedGrid& g = *op.grid;
  for (std::size_t r = 0; r < op.n_rows(); ++r)
    grad[r] = central_gradient(u, g.interior_ids[r]);
  return grad;
}

}  // namespace detail

struct SolveOptions {
  LinearBackend backend = LinearBackend::sparse_lu;
  bool store_slices = true;
  std::vector<Vec2> probes = {vec2(0, 0), vec2(0.5, 0), vec2(0, 0.5)};
  double fixed_point_tol = 1e-10;
  int fixed_point_max_iter = 200;
};

struct SpaceTimeSolution {
  std::vector<double> times;
  std::vector<GridFunction> slices;  // one per time when stored
  std::vector<Vec2> probe_points;
  std::vector<std::int32_t> probe_ids;
  std::vector<std::vector<double>> probe_values;  // [time][probe]
  double eps = 0;
  std::string scheme;

  double probe_at(std::size_t time_index, std::size_t probe_index) const {
    return probe_values[time_index][probe_index];
  }
};

namespace detail {

// Semilinear implicit step by policy lag: represent f(x,u,Du) as an extra
// drift f p/|p|^2 frozen from the previous iterate (|extra| <= M(eps) by
// (A6)), reassemble the monotone operator, and resolve until the iterates
// settle. The zero term reproduces the linear step after one pass.
inline std::vector<double> semilinear_step(const Problem& p, const DiscreteOperator& base_op,
                                           std::shared_ptr<const MaskedGrid> grid, double eps,
                                           const std::vector<double>& gb, double dt,
                                           const std::vector<double>* u_old,
                                           const std::vector<double>& init,
                                           const SolveOptions& opt) {
  const SemilinearTerm& f = *p.semilinear;
  const MaskedGrid& g = *grid;
  std::vector<double> v = init;
  GridFunction work(grid, 0.0);
  auto fill_work = [&](const std::vector<double>& interior) {
    for (std::size_t r = 0; r < interior.size(); ++r) work[g.interior_ids[r]] = interior[r];
    for (std::size_t k = 0; k < g.boundary_ids.size(); ++k) work[g.boundary_ids[k]] = gb[k];
  };
  std::vector<Vec2> extra(base_op.n_rows(), vec2(0, 0));
  bool have_policy = false;
  for (int it = 0; it < opt.fixed_point_max_iter; ++it) {
    fill_work(v);
    for (std::size_t r = 0; r < base_op.n_rows(); ++r) {
      std::int32_t id = g.interior_ids[r];
      Vec2 grad = central_gradient(work, id);
      double p2 = dot(grad, grad);
      // the 1e-12 floor keeps the policy direction continuous through
      // p = 0; it perturbs the represented term by O(M * 1e-6) only
      double fv = f.f(eps, g.pos_of_active(id), work[id], grad);
      Vec2 fresh = (fv / (p2 + 1e-12)) * grad;
      // damping 1/2 on the frozen policy keeps the iteration from
      // oscillating at the giant steps of a geometric grid
      extra[r] = have_policy ? 0.5 * (extra[r] + fresh) : fresh;
    }
    have_policy = true;
    DiscreteOperator op = assemble_operator(p, grid, eps, extra);
    detail::StepSystem sys{op, gb, dt, u_old, nullptr};
    std::vector<double> next = detail::solve_step(sys, opt.backend);
    double change = 0, scale = 1;
    for (std::size_t r = 0; r < next.size(); ++r) {
      change = std::max(change, std::abs(next[r] - v[r]));
      scale = std::max(scale, std::abs(next[r]));
    }
    v = std::move(next);
    if (change <= opt.fixed_point_tol * scale) return v;
  }
  throw solver_error(
      "semilinear step: fixed point did not converge (M(eps) too large for this dt?)");
}

}  // namespace detail

// Backward-Euler march of u_t = L_eps u (+ f_eps) over the given time grid,
// Dirichlet data g at boundary projections, initial data g. The discrete
// maximum principle holds exactly per step.
inline SpaceTimeSolution solve_parabolic(const Problem& p,
                                         std::shared_ptr<const MaskedGrid> grid, double eps,
                                         const std::vector<double>& time_grid,
                                         const SolveOptions& opt = {}) {
  if (time_grid.empty() || time_grid.front() != 0.0)
    throw config_error("solve_parabolic: time grid must start at 0");
  const MaskedGrid& g = *grid;
  DiscreteOperator op = assemble_operator(p, grid, eps);

  std::vector<double> gb(g.boundary_ids.size());
  for (std::size_t k = 0; k < gb.size(); ++k)
    gb[k] = p.boundary_data.g(g.projection[g.boundary_ids[k]]);

  SpaceTimeSolution sol;
  sol.times = time_grid;
  sol.eps = eps;
  sol.scheme = std::string("backward_euler+upwind/") +
               (opt.backend == LinearBackend::sparse_lu ? "sparse_lu" : "monotone_gs") +
               (p.semilinear ? "/semilinear:" + p.semilinear->preset_id : "");
  sol.probe_points = opt.probes;
  for (const Vec2& q : opt.probes) {
    std::int32_t id = g.nearest_active(q);
    if (!g.is_interior(id) || -signed_distance(g.domain, g.pos_of_active(id)) < 3 * g.h) {
      std::ostringstream os;
      os << "probe " << q << " is outside the compact interior margin (3h)";
      throw config_error(os.str());
    }
    sol.probe_ids.push_back(id);
  }

  std::vector<double> u(op.n_rows());
  for (std::size_t r = 0; r < op.n_rows(); ++r)
    u[r] = p.boundary_data.g(g.pos_of_active(g.interior_ids[r]));
  double lo = gb.empty() ? 0 : *std::min_element(gb.begin(), gb.end());
  double hi = gb.empty() ? 0 : *std::max_element(gb.begin(), gb.end());
  for (double v : u) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }

  GridFunction slice(grid, 0.0);
  auto publish = [&](std::size_t /*k*/) {
    for (std::size_t r = 0; r < u.size(); ++r) slice[g.interior_ids[r]] = u[r];
    for (std::size_t k2 = 0; k2 < g.boundary_ids.size(); ++k2)
      slice[g.boundary_ids[k2]] = gb[k2];
    if (opt.store_slices) sol.slices.push_back(slice);
    std::vector<double> pv;
    pv.reserve(sol.probe_ids.size());
    for (std::int32_t id : sol.probe_ids) pv.push_back(slice[id]);
    sol.probe_values.push_back(std::move(pv));
  };
  publish(0);

  for (std::size_t k = 1; k < time_grid.size(); ++k) {
    double dt = time_grid[k] - time_grid[k - 1];
    if (dt <= 0) throw config_error("solve_parabolic: time grid must be strictly increasing");
    if (!p.semilinear) {
      detail::StepSystem sys{op, gb, dt, &u, nullptr};
      u = detail::solve_step(sys, opt.backend);
    } else {
      u = detail::semilinear_step(p, op, grid, eps, gb, dt, &u, u, opt);
    }
    detail::clamp_range(u, lo, hi);
    publish(k);
  }
  return sol;
}

// Stationary Dirichlet problem L_eps v = 0 (or L_eps v + f_eps(x,v,Dv) = 0).
inline GridFunction solve_stationary(const Problem& p,
                                     std::shared_ptr<const MaskedGrid> grid, double eps,
                                     const SolveOptions& opt = {}) {
  const MaskedGrid& g = *grid;
  DiscreteOperator op = assemble_operator(p, grid, eps);
  std::vector<double> gb(g.boundary_ids.size());
  for (std::size_t k = 0; k < gb.size(); ++k)
    gb[k] = p.boundary_data.g(g.projection[g.boundary_ids[k]]);
  if (gb.empty()) throw solver_error("solve_stationary: no boundary-adjacent nodes");

  std::vector<double> v;
  if (!p.semilinear) {
    detail::StepSystem sys{op, gb, -1.0, nullptr, nullptr};
    v = detail::solve_step(sys, opt.backend);
  } else {
    std::vector<double> init(op.n_rows(), 0.0);
    v = detail::semilinear_step(p, op, grid, eps, gb, -1.0, nullptr, init, opt);
  }
  double lo = *std::min_element(gb.begin(), gb.end());
  double hi = *std::max_element(gb.begin(), gb.end());
  detail::clamp_range(v, lo, hi);

  GridFunction out(grid, 0.0);
  for (std::size_t r = 0; r < op.n_rows(); ++r) out[g.interior_ids[r]] = v[r];
  for (std::size_t k = 0; k < g.boundary_ids.size(); ++k) out[g.boundary_ids[k]] = gb[k];
  return out;
}

}  // namespace metastab

#endif
