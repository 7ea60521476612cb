#ifndef METASTAB_MODEL_HPP
#define METASTAB_MODEL_HPP

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "metastab/geometry.hpp"
#include "metastab/util.hpp"
#include "metastab/vec.hpp"

namespace metastab {

// Diffusion matrix a, drift b and the ellipticity constant theta with
// theta*I <= a(x) <= theta^{-1}*I. Presets keep a and b closed-form.
struct Coefficients {
  std::function<Mat2(Vec2)> a;
  std::function<Vec2(Vec2)> b;
  double theta = 1.0;
  std::string preset_id;
};

inline Coefficients make_linear_coefficients(const Mat2& a_const, const Mat2& drift,
                                             double theta, const std::string& id) {
  Coefficients c;
  c.a = [a_const](Vec2) { return a_const; };
  c.b = [drift](Vec2 x) { return drift * x; };
  c.theta = theta;
  c.preset_id = id;
  return c;
}

namespace detail {
inline std::map<std::string, std::function<Coefficients()>>& coefficients_registry() {
  static std::map<std::string, std::function<Coefficients()>> reg = {
      {"isotropic_quadratic",
       [] { return make_linear_coefficients(Mat2::identity(), diag2(-1, -1), 1.0,
                                            "isotropic_quadratic"); }},
      {"anisotropic_quadratic",
       [] { return make_linear_coefficients(Mat2::identity(), diag2(-1, -2), 1.0,
                                            "anisotropic_quadratic"); }},
      {"anisotropic_diffusion",
       [] { return make_linear_coefficients(diag2(1, 0.5), diag2(-1, -1), 0.5,
                                            "anisotropic_diffusion"); }},
      // outward drift; violates (A4)/(A5) on purpose, used by failure tests
      {"unstable_outward",
       [] { return make_linear_coefficients(Mat2::identity(), diag2(1, 1), 1.0,
                                            "unstable_outward"); }},
  };
  return reg;
}
}  // namespace detail

inline void register_coefficients_preset(const std::string& name,
                                         std::function<Coefficients()> factory) {
  detail::coefficients_registry()[name] = std::move(factory);
}

inline Coefficients coefficients_preset(const std::string& name) {
  auto& reg = detail::coefficients_registry();
  auto it = reg.find(name);
  if (it == reg.end()) throw config_error("unknown coefficients preset: " + name);
  return it->second();
}

// Continuous boundary/initial data g on the closed domain.
struct BoundaryData {
  std::function<double(Vec2)> g;
  std::string preset_id;
};

inline BoundaryData boundary_data_preset(const std::string& name) {
  BoundaryData bd;
  bd.preset_id = name;
  if (name == "x1_squared") {
    bd.g = [](Vec2 x) { return x[0] * x[0]; };
  } else if (name == "x1") {
    bd.g = [](Vec2 x) { return x[0]; };
  } else if (name.rfind("constant:", 0) == 0) {
    double c = std::stod(name.substr(9));
    bd.g = [c](Vec2) { return c; };
  } else {
    throw config_error("unknown boundary_data preset: " + name);
  }
  return bd;
}

// Semilinear term f_eps(x,u,p) with |f| <= M(eps)|p|, M(eps) -> 0, and
// u -> f nonincreasing.
struct SemilinearTerm {
  std::function<double(double)> M;
  std::function<double(double, Vec2, double, Vec2)> f;  // (eps, x, u, p)
  std::string preset_id;
};

inline SemilinearTerm semilinear_preset(const std::string& name, double m_scale = 1.0) {
  SemilinearTerm s;
  s.preset_id = name;
  if (name == "tanh") {
    s.M = [m_scale](double eps) { return m_scale * eps; };
    s.f = [m_scale](double eps, Vec2, double u, Vec2 p) {
      return -m_scale * eps * norm(p) * std::tanh(u);
    };
  } else if (name == "tanh_const") {
    // constant M; violates M(eps)->0, used by refusal tests
    s.M = [m_scale](double) { return m_scale; };
    s.f = [m_scale](double, Vec2, double u, Vec2 p) {
      return -m_scale * norm(p) * std::tanh(u);
    };
  } else if (name == "plus_grad_norm") {
    // the extremal admissible term f = +M(eps)|p|
    s.M = [m_scale](double eps) { return m_scale * eps; };
    s.f = [m_scale](double eps, Vec2, double, Vec2 p) { return m_scale * eps * norm(p); };
  } else if (name == "zero") {
    s.M = [](double) { return 0.0; };
    s.f = [](double, Vec2, double, Vec2) { return 0.0; };
  } else {
    throw config_error("unknown semilinear preset: " + name);
  }
  return s;
}

// A full problem instance: domain, coefficients, data, optional semilinearity.
struct Problem {
  Domain domain;
  Coefficients coefficients;
  BoundaryData boundary_data;
  std::optional<SemilinearTerm> semilinear;
};

// H(x,p) = a(x)p.p + b(x).p
inline double hamiltonian(const Coefficients& c, const Vec2& x, const Vec2& p) {
  return dot(c.a(x) * p, p) + dot(c.b(x), p);
}

// L(x,xi) = (1/4) a(x)^{-1}(xi-b(x)).(xi-b(x)), the convex conjugate of H.
inline double lagrangian(const Coefficients& c, const Vec2& x, const Vec2& xi) {
  Vec2 d = xi - c.b(x);
  return 0.25 * dot(inverse(c.a(x)) * d, d);
}

// Symmetric positive-definite square root of a(x) (closed form for 2x2).
inline Mat2 noise_root(const Coefficients& c, const Vec2& x) {
  Mat2 a = c.a(x);
  if (std::abs(a(0, 1) - a(1, 0)) > 1e-12 || a(0, 0) <= 0 || det(a) <= 0)
    throw model_error("noise_root: a(x) is not symmetric positive definite");
  double s = std::sqrt(det(a));
  double t = std::sqrt(trace(a) + 2 * s);
  return mat2((a(0, 0) + s) / t, a(0, 1) / t, a(1, 0) / t, (a(1, 1) + s) / t);
}

// Sampled verification of (A1)-(A6). Violations populate the report rather
// than throw; `passed` aggregates. The (A4) probe is run by
// validate_assumptions (flow.hpp), which fills confinement fields.
struct ValidationReport {
  bool a1_finite_lipschitz = true;
  double lip_a = 0, lip_b = 0;
  bool a2_ellipticity = true;
  double min_eig_over_theta = 0, max_eig_times_theta = 0;
  bool a4_stability = true;
  double confinement_time_probe = 0;
  bool a5_inward_drift = true;
  double max_boundary_b_dot_nu = 0;
  double b0_norm = 0;
  bool b0_zero = true;
  bool a6_bound = true, a6_monotone = true, a6_zero_at_origin = true, a6_m_vanishes = true;
  bool passed = false;
  std::vector<std::string> notes;
};

}  // namespace metastab

#endif
