#ifndef METASTAB_GRID_FUNCTION_HPP
#define METASTAB_GRID_FUNCTION_HPP

#include <fstream>
#include <limits>
#include <memory>
#include <vector>

#include "metastab/geometry.hpp"

namespace metastab {

// Real values on the active nodes of a masked grid.
struct GridFunction {
  std::shared_ptr<const MaskedGrid> grid;
  std::vector<double> values;  // indexed by active id

  GridFunction() = default;
  explicit GridFunction(std::shared_ptr<const MaskedGrid> g, double fill = 0.0)
      : grid(std::move(g)), values(grid->n_active(), fill) {}

  double& operator[](std::int32_t id) { return values[id]; }
  double operator[](std::int32_t id) const { return values[id]; }

  template <typename F>
  static GridFunction sample(std::shared_ptr<const MaskedGrid> g, F&& f) {
    GridFunction u(std::move(g));
    for (std::size_t id = 0; id < u.values.size(); ++id)
      u.values[id] = f(u.grid->pos_of_active(static_cast<std::int32_t>(id)));
    return u;
  }
};

// One-sided and central differences at an active node. Missing neighbors fall
// back to the available side.
struct NodeDiff {
  double backward = 0, forward = 0, central = 0;
  bool has_backward = false, has_forward = false;
};

inline NodeDiff axis_differences(const GridFunction& u, std::int32_t id, int axis) {
  const MaskedGrid& g = *u.grid;
  int f = g.node_of_active[id];
  int i = f % g.nx, j = f / g.nx;
  int di = axis == 0 ? 1 : 0, dj = axis == 0 ? 0 : 1;
  NodeDiff d;
  std::int32_t m = g.id_at(i - di, j - dj), p = g.id_at(i + di, j + dj);
  if (m >= 0) {
    d.backward = (u[id] - u[m]) / g.h;
    d.has_backward = true;
  }
  if (p >= 0) {
    d.forward = (u[p] - u[id]) / g.h;
    d.has_forward = true;
  }
  if (d.has_backward && d.has_forward)
    d.central = 0.5 * (d.backward + d.forward);
  else if (d.has_backward)
    d.central = d.backward;
  else if (d.has_forward)
    d.central = d.forward;
  return d;
}

inline Vec2 central_gradient(const GridFunction& u, std::int32_t id) {
  return vec2(axis_differences(u, id, 0).central, axis_differences(u, id, 1).central);
}

// Second difference along a lattice direction (di,dj); NaN when a neighbor is
// missing.
inline double second_difference(const GridFunction& u, std::int32_t id, int di, int dj) {
  const MaskedGrid& g = *u.grid;
  int f = g.node_of_active[id];
  int i = f % g.nx, j = f / g.nx;
  std::int32_t m = g.id_at(i - di, j - dj), p = g.id_at(i + di, j + dj);
  if (m < 0 || p < 0) return std::numeric_limits<double>::quiet_NaN();
  double step2 = (di * di + dj * dj) * g.h * g.h;
  return (u[p] - 2 * u[id] + u[m]) / step2;
}

// Bilinear interpolation with mask-aware weights: inactive corners are
// dropped and the remaining weights renormalized; falls back to the nearest
// active node when the whole cell is inactive.
inline double interpolate(const GridFunction& u, const Vec2& p) {
  const MaskedGrid& g = *u.grid;
  double fx = p[0] / g.h - g.i0, fy = p[1] / g.h - g.j0;
  int i = std::clamp(static_cast<int>(std::floor(fx)), 0, g.nx - 2);
  int j = std::clamp(static_cast<int>(std::floor(fy)), 0, g.ny - 2);
  double tx = fx - i, ty = fy - j;
  const double w[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
  const std::int32_t id[4] = {g.id_at(i, j), g.id_at(i + 1, j), g.id_at(i, j + 1),
                              g.id_at(i + 1, j + 1)};
  double sw = 0, sv = 0;
  for (int k = 0; k < 4; ++k)
    if (id[k] >= 0) {
      sw += w[k];
      sv += w[k] * u[id[k]];
    }
  if (sw > 1e-12) return sv / sw;
  return u[g.nearest_active(p)];
}

inline void write_csv(const GridFunction& u, const std::string& path) {
  std::ofstream out(path);
  out << "i,j,x1,x2,value,class\n";
  out.precision(17);
  const MaskedGrid& g = *u.grid;
  for (std::size_t id = 0; id < u.values.size(); ++id) {
    int f = g.node_of_active[id];
    int i = f % g.nx, j = f / g.nx;
    Vec2 x = g.pos(i, j);
    out << i << ',' << j << ',' << x[0] << ',' << x[1] << ',' << u.values[id] << ','
        << (g.cls[f] == NodeClass::interior ? "interior" : "boundary") << '\n';
  }
}

}  // namespace metastab

#endif
