#pragma once

// Conductivity tensors and the finite-volume discretization of div(K grad u)
// with no-flux conditions on the outer boundary and on the cavity boundary.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "monocav/errors.hpp"
#include "monocav/geometry.hpp"
#include "monocav/sparse.hpp"

namespace monocav {

/// Symmetric 2x2 tensor.
struct Tensor2 {
  double xx = 1.0, xy = 0.0, yy = 1.0;

  std::array<double, 2> eigenvalues() const {
    const double mean = 0.5 * (xx + yy);
    const double rad = std::hypot(0.5 * (xx - yy), xy);
    return {mean - rad, mean + rad};
  }
  double normal(int axis) const { return axis == 0 ? xx : yy; }

  static Tensor2 isotropic(double k) { return {k, 0.0, k}; }
  /// Fiber-aligned tensor: conductivity `along` in direction theta, `across` normal to it.
  static Tensor2 fiber(double along, double across, double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    return {along * c * c + across * s * s, (along - across) * c * s, along * s * s + across * c * c};
  }
};

/// Per-cell conductivity on the full grid with ellipticity bound lambda > 1:
/// every eigenvalue lies in [1/lambda, lambda].
class ConductivityField {
 public:
  std::vector<Tensor2> cells;
  double lambda = 10.0;
  double gradient_bound = 1e3;

  ConductivityField() = default;
  ConductivityField(std::vector<Tensor2> tensors, double lam, int nx, int ny, double h,
                    double grad_bound = 1e3)
      : cells(std::move(tensors)), lambda(lam), gradient_bound(grad_bound) {
    validate(nx, ny, h);
  }

  template <class Fn>
  static ConductivityField from_function(const GridGeometry& grid, Fn&& fn, double lam,
                                         double grad_bound = 1e3) {
    std::vector<Tensor2> t(static_cast<std::size_t>(grid.cell_count()));
    for (int c = 0; c < grid.cell_count(); ++c) t[c] = fn(grid.cell_center(c));
    return ConductivityField(std::move(t), lam, grid.nx(), grid.ny(), grid.h, grad_bound);
  }

  static ConductivityField isotropic(const GridGeometry& grid, double k, double lam = 10.0) {
    return from_function(grid, [k](const Point&) { return Tensor2::isotropic(k); }, lam);
  }

 private:
  void validate(int nx, int ny, double h) const {
    if (!(lambda > 1.0)) fail(ErrorCode::InvalidParameter, "ellipticity bound lambda must exceed 1");
    if (static_cast<int>(cells.size()) != nx * ny)
      fail(ErrorCode::ShapeMismatch, "conductivity field size does not match grid");
    for (const auto& t : cells) {
      const auto ev = t.eigenvalues();
      if (!(ev[0] >= 1.0 / lambda && ev[1] <= lambda))
        fail(ErrorCode::InvalidParameter, "conductivity eigenvalues outside [1/lambda, lambda]");
    }
    // discrete smoothness proxy
    auto jump = [&](const Tensor2& p, const Tensor2& q) {
      return std::max({std::abs(p.xx - q.xx), std::abs(p.xy - q.xy), std::abs(p.yy - q.yy)}) / h;
    };
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const auto& t = cells[i + nx * j];
        if ((i + 1 < nx && jump(t, cells[i + 1 + nx * j]) > gradient_bound) ||
            (j + 1 < ny && jump(t, cells[i + nx * (j + 1)]) > gradient_bound))
          fail(ErrorCode::InvalidParameter, "conductivity gradient exceeds the configured bound");
      }
    }
  }
};

/// Discrete div(K grad .) on active cells, scaled per unit cell area.
///
/// Normal fluxes use the two-point stencil with the harmonic mean of nu.K.nu
/// across the face. Off-diagonal tensor entries add a vertex-based cross term
///   sum_v h^2 * 2 K_xy,v * (d_x u)(d_y u)
/// over vertices whose four surrounding cells are active. With diagonal K the
/// cross term vanishes and the operator is the 5-point scheme. Boundary and
/// cavity faces carry no flux, so every row sums to zero.
inline SparseOperator assemble_diffusion(const GridGeometry& grid, const ConductivityField& K) {
  if (static_cast<int>(K.cells.size()) != grid.cell_count())
    fail(ErrorCode::ShapeMismatch, "conductivity field does not match grid");
  const int n = grid.active_count();
  const double inv_h2 = 1.0 / (grid.h * grid.h);
  std::vector<std::map<int, double>> rows(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a) rows[a][a] = 0.0;

  for (int f = 0; f < grid.face_count(); ++f) {
    if (grid.face_class[f] != FaceClass::Interior) continue;
    const auto [lo, hi] = grid.face_cells(f);
    const int axis = grid.face_axis(f);
    const double k_lo = K.cells[lo].normal(axis), k_hi = K.cells[hi].normal(axis);
    const double coef = 2.0 * k_lo * k_hi / (k_lo + k_hi) * inv_h2;
    const int p = grid.active_index[lo], q = grid.active_index[hi];
    rows[p][p] -= coef;
    rows[q][q] -= coef;
    rows[p][q] += coef;
    rows[q][p] += coef;
  }

  // Cross term on 2x2 cell blocks (a, b, c, d) = (i,j), (i+1,j), (i,j+1), (i+1,j+1).
  // Pattern of (alpha beta^T + beta alpha^T) / 4 with alpha = d/dx weights,
  // beta = d/dy weights.
  static constexpr std::array<std::array<double, 4>, 4> cross{{
      {0.5, 0.0, 0.0, -0.5},
      {0.0, -0.5, 0.5, 0.0},
      {0.0, 0.5, -0.5, 0.0},
      {-0.5, 0.0, 0.0, 0.5},
  }};
  for (int j = 0; j + 1 < grid.ny(); ++j) {
    for (int i = 0; i + 1 < grid.nx(); ++i) {
      const std::array<int, 4> cell{grid.cell_id(i, j), grid.cell_id(i + 1, j), grid.cell_id(i, j + 1),
                                    grid.cell_id(i + 1, j + 1)};
      double kxy = 0.0;
      bool all_active = true;
      for (int c : cell) {
        all_active = all_active && grid.is_active(c);
        kxy += 0.25 * K.cells[c].xy;
      }
      if (!all_active || kxy == 0.0) continue;
      for (int r = 0; r < 4; ++r) {
        const int p = grid.active_index[cell[r]];
        for (int s = 0; s < 4; ++s) {
          if (cross[r][s] == 0.0) continue;
          rows[p][grid.active_index[cell[s]]] -= kxy * cross[r][s] * inv_h2;
        }
      }
    }
  }
  // diagonal as the negated off-diagonal sum so that row sums vanish exactly
  for (int a = 0; a < n; ++a) {
    double off = 0.0;
    for (const auto& [c, v] : rows[a])
      if (c != a) off += v;
    rows[a][a] = -off;
  }
  return SparseOperator(rows);
}

}  // namespace monocav
