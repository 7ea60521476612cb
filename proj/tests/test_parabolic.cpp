#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "metastab/flow.hpp"
#include "metastab/parabolic.hpp"

using namespace metastab;
using Catch::Approx;

namespace {

Coefficients still_isotropic() {
  return make_linear_coefficients(Mat2::identity(), diag2(0, 0), 1.0, "still");
}

BoundaryData trig_data(unsigned seed, bool nonneg = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ua(-1, 1), uw(1, 6);
  double a1 = ua(rng), a2 = ua(rng), w1 = uw(rng), w2 = uw(rng), ph = ua(rng);
  BoundaryData bd;
  bd.preset_id = "trig:" + std::to_string(seed);
  bd.g = [=](Vec2 x) {
    double v = a1 * std::sin(w1 * x[0] + ph) + a2 * std::cos(w2 * x[1] - ph);
    return nonneg ? std::max(0.0, v) : v;
  };
  return bd;
}

}  // namespace

TEST_CASE("operator consistency on quadratics") {
  Domain ball = make_ball(1.0);
  auto grid = build_grid(ball, 1.0 / 32);

  // pure diffusion, a = I: L(x1^2) = 2 eps exactly (second differences are
  // exact on quadratics)
  Problem p{ball, still_isotropic(), boundary_data_preset("x1_squared"), std::nullopt};
  DiscreteOperator op = assemble_operator(p, grid, 1.0);
  GridFunction q = GridFunction::sample(grid, [](Vec2 x) { return x[0] * x[0]; });
  for (double v : op.apply(q)) CHECK(v == Approx(2.0).margin(1e-9));

  // constants are annihilated exactly
  GridFunction c1(grid, 3.7);
  for (double v : op.apply(c1)) CHECK(v == 0.0);

  // cross-diffusion via the diagonal-pair stencil: L(x1 x2) = 2 eps a12
  Problem pc{ball, make_linear_coefficients(mat2(1, 0.4, 0.4, 1), diag2(0, 0), 0.6, "cross"),
             boundary_data_preset("x1_squared"), std::nullopt};
  DiscreteOperator opc = assemble_operator(pc, grid, 0.5);
  GridFunction qc = GridFunction::sample(grid, [](Vec2 x) { return x[0] * x[1]; });
  for (double v : opc.apply(qc)) CHECK(v == Approx(2 * 0.5 * 0.4).margin(1e-9));

  // drift upwinding is exact on linear functions: full operator on
  // x1^2 + x2 with b = (-x1, -2 x2): eps*2 - 2 x1^2 - 2 x2 within O(h)
  Problem pd{ball, coefficients_preset("anisotropic_quadratic"),
             boundary_data_preset("x1_squared"), std::nullopt};
  DiscreteOperator opd = assemble_operator(pd, grid, 0.1);
  GridFunction qd = GridFunction::sample(grid, [](Vec2 x) { return x[0] * x[0] + x[1]; });
  auto vals = opd.apply(qd);
  for (std::size_t r = 0; r < vals.size(); ++r) {
    Vec2 x = grid->pos_of_active(grid->interior_ids[r]);
    double exact = 0.1 * 2 + (-x[0]) * 2 * x[0] + (-2 * x[1]) * 1;
    CHECK(vals[r] == Approx(exact).margin(2.5 * grid->h));
  }
}

TEST_CASE("operator monotone structure") {
  Domain ball = make_ball(1.0);
  auto grid = build_grid(ball, 1.0 / 32);
  Problem p{ball, coefficients_preset("anisotropic_diffusion"),
            boundary_data_preset("x1_squared"), std::nullopt};
  DiscreteOperator op = assemble_operator(p, grid, 0.05);
  for (std::size_t r = 0; r < op.n_rows(); ++r) {
    double s = 0;
    for (const auto& cp : op.in[r]) {
      CHECK(cp.c > 0.0);
      s += cp.c;
    }
    for (const auto& bc : op.bd[r]) {
      CHECK(bc.c > 0.0);
      s += bc.c;
    }
    CHECK(s == Approx(op.offdiag_sum[r]));
  }
}

TEST_CASE("anisotropy positivity condition") {
  Domain ball = make_ball(1.0);
  auto grid = build_grid(ball, 1.0 / 16);
  // SPD but |a12| > min(a11,a22): monotone 9-point stencil impossible
  Problem p{ball, make_linear_coefficients(mat2(1, 1.2, 1.2, 2), diag2(-1, -1), 0.3, "bad"),
            boundary_data_preset("x1_squared"), std::nullopt};
  CHECK_THROWS_AS(assemble_operator(p, grid, 0.1), solver_error);
}

TEST_CASE("geometric time grid") {
  double tmax = std::exp(14.0);
  auto t = geometric_time_grid(0.01, tmax, 400);
  CHECK(t.size() == 9 + 400);
  CHECK(t.front() == 0.0);
  CHECK(t.back() == tmax);
  CHECK(t[8] == Approx(0.01));
  double rho = std::pow(tmax / 0.01, 1.0 / 400);
  CHECK(rho == Approx(1.0476).margin(2e-4));
  for (std::size_t k = 1; k < t.size(); ++k) CHECK(t[k] > t[k - 1]);
  for (std::size_t k = 9; k + 1 < t.size(); ++k)
    CHECK(t[k + 1] / t[k] == Approx(rho).margin(1e-9));

  CHECK_THROWS_AS(geometric_time_grid(0.01, 1.0, 1), config_error);
  CHECK_THROWS_AS(geometric_time_grid(1.0, 0.5, 20), config_error);
}

TEST_CASE("constants are exact solutions") {
  Domain ball = make_ball(1.0);
  auto grid = build_grid(ball, 1.0 / 24);
  Problem p{ball, coefficients_preset("isotropic_quadratic"),
            boundary_data_preset("constant:1.25"), semilinear_preset("tanh")};
  SolveOptions opt;
  auto sol = solve_parabolic(p, grid, 0.05, geometric_time_grid(0.1, 100.0, 12), opt);
  for (const auto& slice : sol.slices)
    for (double v : slice.values) CHECK(v == 1.25);
  GridFunction v = solve_stationary(p, grid, 0.05, opt);
  for (double vv : v.values) CHECK(vv == 1.25);
}

TEST_CASE("transport limit agreement for small eps") {
  Domain ball = make_ball(1.0);
  auto grid = build_grid(ball, 1.0 / 48);
  Problem p{ball, coefficients_preset("isotropic_quadratic"),
            boundary_data_preset("x1_squared"), std::nullopt};
  std::vector<double> times(201);
  for (int k = 0; k <= 200; ++k) times[k] = 0.01 * k;
  SolveOptions opt;
  opt.probes = {vec2(0, 0)};
  auto sol = solve_parabolic(p, grid, 1e-3, times, opt);
  for (std::size_t k : {std::size_t(50), std::size_t(100), std::size_t(200)}) {
    double t = times[k];
    double worst = 0;
    for (std::int32_t id : grid->interior_ids) {
      Vec2 x = grid->pos_of_active(id);
      if (norm(x) > 0.7) continue;
      double oracle = transport_solution(p.coefficients, p.boundary_data, x, t);
      worst = std::max(worst, std::abs(sol.slices[k][id] - oracle));
    }
    CHECK(worst <= 0.05);
  }
}

TEST_CASE("bitwise comparison and maximum principles (monotone backend)") {
  Domain ball = make_ball(1.0);
  auto grid = build_grid(ball, 1.0 / 16);
  SolveOptions opt;
  opt.backend = LinearBackend::monotone_gs;
  opt.probes = {vec2(0, 0)};
  auto times = geometric_time_grid(0.05, 3.0, 10);
  for (unsigned seed = 0; seed < 10; ++seed) {
    BoundaryData g1 = trig_data(seed);
    BoundaryData gap = trig_data(seed + 1000, true);  // nonnegative, with flat zeros
    BoundaryData g2;
    g2.preset_id = "sum";
    g2.g = [&](Vec2 x) { return g1.g(x) + gap.g(x); };

    Problem p1{ball, coefficients_preset("isotropic_quadratic"), g1, std::nullopt};
    Problem p2{ball, coefficients_preset("isotropic_quadratic"), g2, std::nullopt};
    auto s1 = solve_parabolic(p1, grid, 0.1, times, opt);
    auto s2 = solve_parabolic(p2, grid, 0.1, times, opt);
    double lo1 = 1e300, hi1 = -1e300;
    for (double v : s1.slices.front().values) {
      lo1 = std::min(lo1, v);
      hi1 = std::max(hi1, v);
    }
    for (std::size_t k = 0; k < times.size(); ++k)
      for (std::size_t id = 0; id < s1.slices[k].values.size(); ++id) {
        CHECK(s1.slices[k].values[id] <= s2.slices[k].values[id]);  // comparison, bitwise
        CHECK(s1.slices[k].values[id] >= lo1);                      // max principle, bitwise
        CHECK(s1.slices[k].values[id] <= hi1);
      }

    GridFunction v1 = solve_stationary(p1, grid, 0.1, opt);
    GridFunction v2 = solve_stationary(p2, grid, 0.1, opt);
    double blo = 1e300, bhi = -1e300;
    for (std::int32_t id : grid->boundary_ids) {
      blo = std::min(blo, v1[id]);
      bhi = std::max(bhi, v1[id]);
    }
    for (std::size_t id = 0; id < v1.values.size(); ++id) {
      CHECK(v1.values[id] <= v2.values[id]);
      CHECK(v1.values[id] >= blo);
      CHECK(v1.values[id] <= bhi);
    }
  }
}

TEST_CASE("negation symmetry for the linear solver; asserted failure for semilinear") {
  Domain ball = make_ball(1.0);
  auto grid = build_grid(ball, 1.0 / 24);
  BoundaryData g = trig_data(7);
  BoundaryData gneg;
  gneg.preset_id = "neg";
  gneg.g = [&](Vec2 x) { return -g.g(x); };
  auto times = geometric_time_grid(0.05, 5.0, 12);
  SolveOptions opt;
  opt.probes = {vec2(0, 0)};

  Problem p{ball, coefficients_preset("anisotropic_quadratic"), g, std::nullopt};
  Problem pn{ball, coefficients_preset("anisotropic_quadratic"), gneg, std::nullopt};
  auto s = solve_parabolic(p, grid, 0.07, times, opt);
  auto sn = solve_parabolic(pn, grid, 0.07, times, opt);
  for (std::size_t k = 0; k < times.size(); ++k)
    for (std::size_t id = 0; id < s.slices[k].values.size(); ++id)
      CHECK(sn.slices[k].values[id] == -s.slices[k].values[id]);

  // an even semilinear term breaks the symmetry, as linearity predicts
  Problem ps = p, psn = pn;
  ps.semilinear = semilinear_preset("plus_grad_norm", 4.0);
  psn.semilinear = semilinear_preset("plus_grad_norm", 4.0);
  auto ss = solve_parabolic(ps, grid, 0.07, times, opt);
  auto ssn = solve_parabolic(psn, grid, 0.07, times, opt);
  double dev = 0;
  for (std::size_t id = 0; id < ss.slices.back().values.size(); ++id)
    dev =
        std::max(dev, std::abs(ssn.slices.back().values[id] + ss.slices.back().values[id]));
  CHECK(dev > 1e-9);
}

TEST_CASE("zero semilinear term reproduces the linear run") {
  Domain ball = make_ball(1.0);
  auto grid = build_grid(ball, 1.0 / 24);
  Problem lin{ball, coefficients_preset("anisotropic_quadratic"),
              boundary_data_preset("x1_squared"), std::nullopt};
  Problem semi = lin;
  semi.semilinear = semilinear_preset("zero");
  auto times = geometric_time_grid(0.05, 50.0, 16);
  SolveOptions opt;
  opt.probes = {vec2(0, 0)};
  auto a = solve_parabolic(lin, grid, 0.06, times, opt);
  auto b = solve_parabolic(semi, grid, 0.06, times, opt);
  double worst = 0;
  for (std::size_t k = 0; k < times.size(); ++k)
    for (std::size_t id = 0; id < a.slices[k].values.size(); ++id)
      worst = std::max(worst, std::abs(a.slices[k].values[id] - b.slices[k].values[id]));
  CHECK(worst <= 1e-8);
}

TEST_CASE("semilinear tanh run is stable and bounded") {
  Domain ball = make_ball(1.0);
  auto grid = build_grid(ball, 1.0 / 24);
  Problem p{ball, coefficients_preset("isotropic_quadratic"),
            boundary_data_preset("x1_squared"), semilinear_preset("tanh")};
  auto times = geometric_time_grid(0.05, std::exp(6.0), 60);
  SolveOptions opt;
  opt.probes = {vec2(0, 0)};
  auto sol = solve_parabolic(p, grid, 0.08, times, opt);
  for (const auto& slice : sol.slices)
    for (double v : slice.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
}

TEST_CASE("stationary solve on the anisotropic preset increases toward g0") {
  Domain ball = make_ball(1.0);
  auto grid = build_grid(ball, 1.0 / 48);
  Problem p{ball, coefficients_preset("anisotropic_quadratic"),
            boundary_data_preset("x1_squared"), std::nullopt};
  std::int32_t center = grid->nearest_active(vec2(0, 0));
  double prev = -1;
  for (double eps : {0.15, 0.1, 0.07}) {
    GridFunction v = solve_stationary(p, grid, eps);
    double v0 = v[center];
    CHECK(v0 > prev);
    prev = v0;
  }
  CHECK(prev > 0.75);  // approaching g0 = 1 from below at eps = 0.07
}

TEST_CASE("time-grid refinement changes plateau values little") {
  Domain ball = make_ball(1.0);
  auto grid = build_grid(ball, 1.0 / 32);
  Problem p{ball, coefficients_preset("anisotropic_quadratic"),
            boundary_data_preset("x1_squared"), std::nullopt};
  SolveOptions opt;
  opt.store_slices = false;
  opt.probes = {vec2(0, 0)};
  double tmax = std::exp(3.0);
  auto s1 = solve_parabolic(p, grid, 0.1, geometric_time_grid(0.01, tmax, 80), opt);
  auto s2 = solve_parabolic(p, grid, 0.1, geometric_time_grid(0.01, tmax, 160), opt);
  CHECK(std::abs(s1.probe_values.back()[0] - s2.probe_values.back()[0]) <= 0.02);
}

TEST_CASE("probe margin validation") {
  Domain ball = make_ball(1.0);
  auto grid = build_grid(ball, 1.0 / 16);
  Problem p{ball, coefficients_preset("isotropic_quadratic"),
            boundary_data_preset("x1_squared"), std::nullopt};
  SolveOptions opt;
  opt.probes = {vec2(0.95, 0)};
  CHECK_THROWS_AS(solve_parabolic(p, grid, 0.1, geometric_time_grid(0.1, 1.0, 8), opt),
                  config_error);
}
