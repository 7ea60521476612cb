#ifndef METASTAB_GEOMETRY_HPP
#define METASTAB_GEOMETRY_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "metastab/util.hpp"
#include "metastab/vec.hpp"

namespace metastab {

struct Rect {
  Vec2 lo{}, hi{};
  double width() const { return hi[0] - lo[0]; }
  double height() const { return hi[1] - lo[1]; }
  bool contains(const Vec2& x) const {
    return x[0] >= lo[0] && x[0] <= hi[0] && x[1] >= lo[1] && x[1] <= hi[1];
  }
};

// Samples of a defining function on a uniform grid, for `implicit` domains.
// Binary layout: int32 nx, int32 ny, double x0,y0,x1,y1, then nx*ny doubles
// row-major (x fastest).
struct LevelSetSamples {
  int nx = 0, ny = 0;
  Rect box;
  std::vector<double> rho;

  double dx() const { return box.width() / (nx - 1); }
  double dy() const { return box.height() / (ny - 1); }

  // Bilinear interpolation; outside the sample box the value grows with the
  // clamp distance so exterior points stay positive.
  double eval(const Vec2& p) const {
    const Vec2 q = vec2(std::clamp(p[0], box.lo[0], box.hi[0]),
                        std::clamp(p[1], box.lo[1], box.hi[1]));
    double fx = (q[0] - box.lo[0]) / dx();
    double fy = (q[1] - box.lo[1]) / dy();
    int i = std::min(static_cast<int>(fx), nx - 2);
    int j = std::min(static_cast<int>(fy), ny - 2);
    double tx = fx - i, ty = fy - j;
    auto at = [&](int ii, int jj) { return rho[static_cast<std::size_t>(jj) * nx + ii]; };
    double v = (1 - tx) * (1 - ty) * at(i, j) + tx * (1 - ty) * at(i + 1, j) +
               (1 - tx) * ty * at(i, j + 1) + tx * ty * at(i + 1, j + 1);
    return v + norm(p - q);
  }
};

enum class DomainKind { ball, ellipse, implicit };

// A bounded C^1 domain containing the origin, represented by a defining
// function rho (negative inside, positive outside).
struct Domain {
  DomainKind kind = DomainKind::ball;
  double radius = 1.0;           // ball
  double semi_a = 1.0, semi_b = 1.0;  // ellipse
  std::shared_ptr<const LevelSetSamples> samples;  // implicit
  Rect bounding_box;
  std::string preset_id;

  double rho(const Vec2& x) const {
    switch (kind) {
      case DomainKind::ball:
        return norm(x) - radius;
      case DomainKind::ellipse:
        return x[0] * x[0] / (semi_a * semi_a) + x[1] * x[1] / (semi_b * semi_b) - 1.0;
      case DomainKind::implicit:
        return samples->eval(x);
    }
    return 0.0;
  }

  Vec2 grad_rho(const Vec2& x) const {
    switch (kind) {
      case DomainKind::ball: {
        double n = norm(x);
        if (n < 1e-300) return vec2(1, 0);
        return x / n;
      }
      case DomainKind::ellipse:
        return vec2(2 * x[0] / (semi_a * semi_a), 2 * x[1] / (semi_b * semi_b));
      case DomainKind::implicit: {
        const double e = 0.25 * std::min(samples->dx(), samples->dy());
        return vec2((rho(vec2(x[0] + e, x[1])) - rho(vec2(x[0] - e, x[1]))) / (2 * e),
                    (rho(vec2(x[0], x[1] + e)) - rho(vec2(x[0], x[1] - e))) / (2 * e));
      }
    }
    return vec2(0, 0);
  }

  bool inside(const Vec2& x) const { return rho(x) < 0.0; }
};

inline Domain make_ball(double r) {
  if (r <= 0) throw config_error("ball radius must be positive");
  Domain d;
  d.kind = DomainKind::ball;
  d.radius = r;
  d.bounding_box = {vec2(-r, -r), vec2(r, r)};
  d.preset_id = "ball:" + std::to_string(r);
  return d;
}

inline Domain make_ellipse(double a, double b) {
  if (a <= 0 || b <= 0) throw config_error("ellipse semi-axes must be positive");
  Domain d;
  d.kind = DomainKind::ellipse;
  d.semi_a = a;
  d.semi_b = b;
  d.bounding_box = {vec2(-a, -b), vec2(a, b)};
  d.preset_id = "ellipse:" + std::to_string(a) + "," + std::to_string(b);
  return d;
}

inline Domain make_implicit(std::shared_ptr<const LevelSetSamples> s, const std::string& id) {
  Domain d;
  d.kind = DomainKind::implicit;
  d.samples = std::move(s);
  d.bounding_box = d.samples->box;
  d.preset_id = id;
  if (!(d.rho(vec2(0, 0)) < 0)) throw config_error("implicit domain must contain the origin");
  return d;
}

inline std::shared_ptr<const LevelSetSamples> load_level_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open level-set file: " + path);
  auto s = std::make_shared<LevelSetSamples>();
  std::int32_t nx = 0, ny = 0;
  in.read(reinterpret_cast<char*>(&nx), 4);
  in.read(reinterpret_cast<char*>(&ny), 4);
  double bb[4];
  in.read(reinterpret_cast<char*>(bb), 32);
  if (!in || nx < 2 || ny < 2) throw config_error("malformed level-set header: " + path);
  s->nx = nx;
  s->ny = ny;
  s->box = {vec2(bb[0], bb[1]), vec2(bb[2], bb[3])};
  s->rho.resize(static_cast<std::size_t>(nx) * ny);
  in.read(reinterpret_cast<char*>(s->rho.data()), static_cast<std::streamsize>(s->rho.size() * 8));
  if (!in) throw config_error("truncated level-set file: " + path);
  return s;
}

inline void save_level_set(const LevelSetSamples& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  std::int32_t nx = s.nx, ny = s.ny;
  out.write(reinterpret_cast<const char*>(&nx), 4);
  out.write(reinterpret_cast<const char*>(&ny), 4);
  double bb[4] = {s.box.lo[0], s.box.lo[1], s.box.hi[0], s.box.hi[1]};
  out.write(reinterpret_cast<const char*>(bb), 32);
  out.write(reinterpret_cast<const char*>(s.rho.data()),
            static_cast<std::streamsize>(s.rho.size() * 8));
}

namespace detail {

// Boundary point along the ray from the origin at angle th, by bisection of
// rho. Valid for domains star-shaped about the origin (the presets).
inline Vec2 ray_boundary_point(const Domain& d, double th) {
  Vec2 dir = vec2(std::cos(th), std::sin(th));
  const double tmax = 2.0 * std::max(d.bounding_box.width(), d.bounding_box.height());
  double lo = 0.0, hi = tmax;
  while (d.rho(hi * dir) <= 0 && hi < 64 * tmax) hi *= 2;
  for (int it = 0; it < 60; ++it) {
    double mid = 0.5 * (lo + hi);
    (d.rho(mid * dir) < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi) * dir;
}

// Nearest boundary point via coarse scan plus golden-section refinement in
// the boundary parameter. Immune to the divergence of normal-walk schemes
// near the evolute.
template <typename Curve>
Vec2 project_parametric(const Vec2& x, Curve&& point_at, int n_scan) {
  auto d2 = [&](double th) {
    Vec2 p = point_at(th);
    return dot(p - x, p - x);
  };
  double best = 1e300, best_th = 0;
  for (int k = 0; k < n_scan; ++k) {
    double th = 2.0 * M_PI * k / n_scan;
    double v = d2(th);
    if (v < best) {
      best = v;
      best_th = th;
    }
  }
  double a = best_th - 2.0 * M_PI / n_scan, b = best_th + 2.0 * M_PI / n_scan;
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - gr * (b - a), e = a + gr * (b - a);
  double fc = d2(c), fe = d2(e);
  for (int it = 0; it < 80; ++it) {
    if (fc < fe) {
      b = e;
      e = c;
      fe = fc;
      c = b - gr * (b - a);
      fc = d2(c);
    } else {
      a = c;
      c = e;
      fc = fe;
      e = a + gr * (b - a);
      fe = d2(e);
    }
  }
  return point_at(0.5 * (a + b));
}

}  // namespace detail

inline Vec2 project_to_boundary(const Domain& d, const Vec2& x) {
  switch (d.kind) {
    case DomainKind::ball: {
      double n = norm(x);
      if (n < 1e-300) return vec2(d.radius, 0);
      return x * (d.radius / n);
    }
    case DomainKind::ellipse:
      return detail::project_parametric(
          x, [&](double th) { return vec2(d.semi_a * std::cos(th), d.semi_b * std::sin(th)); },
          128);
    case DomainKind::implicit:
      return detail::project_parametric(
          x, [&](double th) { return detail::ray_boundary_point(d, th); }, 128);
  }
  throw solver_error("project_to_boundary: unknown domain kind");
}

// Negative inside, positive outside, zero on the boundary. Exact for balls,
// projection-based otherwise.
inline double signed_distance(const Domain& d, const Vec2& x) {
  if (d.kind == DomainKind::ball) return norm(x) - d.radius;
  Vec2 p = project_to_boundary(d, x);
  double dist = norm(x - p);
  return d.inside(x) ? -dist : dist;
}

inline Vec2 boundary_normal(const Domain& d, const Vec2& y, double tol = 1e-6) {
  if (std::abs(signed_distance(d, y)) > tol) {
    std::ostringstream os;
    os << "boundary_normal: point " << y << " is not on the boundary";
    throw config_error(os.str());
  }
  Vec2 g = d.grad_rho(y);
  return g / norm(g);
}

// n points on the boundary, parametrized by the ray angle from the origin.
// Presets are star-shaped about 0, which the domain invariant guarantees.
inline std::vector<Vec2> boundary_sample(const Domain& d, int n) {
  std::vector<Vec2> pts;
  pts.reserve(n);
  for (int k = 0; k < n; ++k) pts.push_back(detail::ray_boundary_point(d, 2.0 * M_PI * k / n));
  return pts;
}

inline double domain_diameter(const Domain& d) {
  if (d.kind == DomainKind::ball) return 2 * d.radius;
  if (d.kind == DomainKind::ellipse) return 2 * std::max(d.semi_a, d.semi_b);
  auto pts = boundary_sample(d, 256);
  double best = 0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, norm(pts[i] - pts[j]));
  return best;
}

// delta(lambda) = min over the boundary of dist(y + lambda*nu(y), closure of
// the domain); coarse scan over >=1024 samples then golden-section refinement
// in the angle parameter.
inline double normal_offset_gap(const Domain& d, double lambda, int n_samples = 1024) {
  if (lambda <= 0) throw config_error("normal_offset_gap: lambda must be positive");
  auto gap_at = [&](double th) {
    Vec2 y = detail::ray_boundary_point(d, th);
    Vec2 z = y + lambda * boundary_normal(d, y, 1e-5);
    double sd = signed_distance(d, z);
    if (sd <= 0) {
      std::ostringstream os;
      os << "normal_offset_gap: offset of boundary point " << y << " lands inside the domain"
         << " (lambda >= lambda0)";
      throw config_error(os.str());
    }
    return sd;
  };
  double best = std::numeric_limits<double>::infinity();
  double best_th = 0;
  for (int k = 0; k < n_samples; ++k) {
    double th = 2.0 * M_PI * k / n_samples;
    double g = gap_at(th);
    if (g < best) {
      best = g;
      best_th = th;
    }
  }
  // golden-section refinement around the coarse minimizer
  double a = best_th - 2.0 * M_PI / n_samples;
  double b = best_th + 2.0 * M_PI / n_samples;
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - gr * (b - a), e = a + gr * (b - a);
  double fc = gap_at(c), fe = gap_at(e);
  for (int it = 0; it < 60; ++it) {
    if (fc < fe) {
      b = e;
      e = c;
      fe = fc;
      c = b - gr * (b - a);
      fc = gap_at(c);
    } else {
      a = c;
      c = e;
      fc = fe;
      e = a + gr * (b - a);
      fe = gap_at(e);
    }
  }
  return std::min(best, std::min(fc, fe));
}

// Largest lambda (up to cap) for which every boundary offset lands strictly
// outside the closed domain. The threshold exists but is not quantified
// analytically, so it is probed by bisection.
inline double probe_lambda0(const Domain& d, double cap, int n_samples = 512) {
  auto feasible = [&](double lam) {
    try {
      normal_offset_gap(d, lam, n_samples);
      return true;
    } catch (const config_error&) {
      return false;
    }
  };
  if (feasible(cap)) return cap;
  double lo = 0, hi = cap;
  for (int it = 0; it < 40; ++it) {
    double mid = 0.5 * (lo + hi);
    (feasible(mid) ? lo : hi) = mid;
  }
  return lo;
}

enum class NodeClass : std::uint8_t { exterior = 0, interior = 1, boundary_adjacent = 2 };

// Uniform lattice clipped to the domain. Nodes sit at integer multiples of h
// so the origin is always a lattice node. A node strictly inside the domain is
// interior when all 8 ring-1 neighbors are strictly inside, otherwise
// boundary-adjacent; boundary-adjacent nodes carry their nearest boundary
// point, where solvers impose Dirichlet data.
struct MaskedGrid {
  Domain domain;
  double h = 0;
  int i0 = 0, j0 = 0;  // lattice index offset: node (i,j) at ((i0+i)h, (j0+j)h)
  int nx = 0, ny = 0;
  std::vector<NodeClass> cls;       // nx*ny, row-major (i fastest)
  std::vector<std::int32_t> active; // nx*ny -> active id or -1
  std::vector<std::int32_t> node_of_active;  // active id -> lattice flat index
  std::vector<Vec2> projection;     // per active id; node position for interior
  std::vector<double> projection_dist;  // per active id; 0 for interior
  std::vector<std::int32_t> interior_ids, boundary_ids;

  int flat(int i, int j) const { return j * nx + i; }
  Vec2 pos(int i, int j) const { return vec2((i0 + i) * h, (j0 + j) * h); }
  Vec2 pos_of_active(std::int32_t id) const {
    int f = node_of_active[id];
    return pos(f % nx, f / nx);
  }
  std::int32_t id_at(int i, int j) const {
    if (i < 0 || j < 0 || i >= nx || j >= ny) return -1;
    return active[flat(i, j)];
  }
  bool is_interior(std::int32_t id) const { return projection_dist[id] == 0.0; }
  std::size_t n_active() const { return node_of_active.size(); }

  // Active node nearest to p (exhaustive over the ring around the containing
  // cell, falling back to a full scan).
  std::int32_t nearest_active(const Vec2& p) const {
    int ci = static_cast<int>(std::lround(p[0] / h)) - i0;
    int cj = static_cast<int>(std::lround(p[1] / h)) - j0;
    for (int r = 0; r < std::max(nx, ny); ++r) {
      std::int32_t best = -1;
      double bd = std::numeric_limits<double>::infinity();
      for (int j = cj - r; j <= cj + r; ++j)
        for (int i = ci - r; i <= ci + r; ++i) {
          std::int32_t id = id_at(i, j);
          if (id < 0) continue;
          double dd = norm(pos(i, j) - p);
          if (dd < bd) {
            bd = dd;
            best = id;
          }
        }
      if (best >= 0) return best;
    }
    throw solver_error("nearest_active: no active nodes");
  }
};

inline std::shared_ptr<const MaskedGrid> build_grid(const Domain& dom, double h,
                                                    int min_nodes_across = 16) {
  if (h <= 0) throw config_error("grid spacing must be positive");
  const double across = std::min(dom.bounding_box.width(), dom.bounding_box.height());
  if (across / h < min_nodes_across) {
    std::ostringstream os;
    os << "grid too coarse: " << across / h << " nodes across the domain, need "
       << min_nodes_across;
    throw config_error(os.str());
  }
  if (!(dom.rho(vec2(0, 0)) < 0)) throw config_error("domain must contain the origin");

  auto g = std::make_shared<MaskedGrid>();
  g->domain = dom;
  g->h = h;
  g->i0 = static_cast<int>(std::floor(dom.bounding_box.lo[0] / h)) - 2;
  g->j0 = static_cast<int>(std::floor(dom.bounding_box.lo[1] / h)) - 2;
  g->nx = static_cast<int>(std::ceil(dom.bounding_box.hi[0] / h)) + 2 - g->i0 + 1;
  g->ny = static_cast<int>(std::ceil(dom.bounding_box.hi[1] / h)) + 2 - g->j0 + 1;

  const std::size_t n = static_cast<std::size_t>(g->nx) * g->ny;
  std::vector<std::uint8_t> in(n, 0);
  for (int j = 0; j < g->ny; ++j)
    for (int i = 0; i < g->nx; ++i) in[g->flat(i, j)] = dom.rho(g->pos(i, j)) < 0 ? 1 : 0;

  g->cls.assign(n, NodeClass::exterior);
  g->active.assign(n, -1);
  for (int j = 0; j < g->ny; ++j)
    for (int i = 0; i < g->nx; ++i) {
      if (!in[g->flat(i, j)]) continue;
      bool all_in = true;
      for (int dj = -1; dj <= 1 && all_in; ++dj)
        for (int di = -1; di <= 1 && all_in; ++di) {
          int ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= g->nx || jj >= g->ny || !in[g->flat(ii, jj)])
            all_in = false;
        }
      g->cls[g->flat(i, j)] = all_in ? NodeClass::interior : NodeClass::boundary_adjacent;
    }

  for (int j = 0; j < g->ny; ++j)
    for (int i = 0; i < g->nx; ++i) {
      int f = g->flat(i, j);
      if (g->cls[f] == NodeClass::exterior) continue;
      std::int32_t id = static_cast<std::int32_t>(g->node_of_active.size());
      g->active[f] = id;
      g->node_of_active.push_back(f);
      if (g->cls[f] == NodeClass::interior) {
        g->projection.push_back(g->pos(i, j));
        g->projection_dist.push_back(0.0);
        g->interior_ids.push_back(id);
      } else {
        Vec2 p = project_to_boundary(dom, g->pos(i, j));
        g->projection.push_back(p);
        g->projection_dist.push_back(norm(p - g->pos(i, j)));
        g->boundary_ids.push_back(id);
      }
    }
  if (g->interior_ids.empty()) throw config_error("grid has no interior nodes");
  return g;
}

}  // namespace metastab

#endif
