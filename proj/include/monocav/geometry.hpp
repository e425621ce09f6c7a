#pragma once

// Masked structured grid over the perforated domain Omega \ D.
//
// Cells are indexed i + nx * j. Faces come in two families: x-normal faces
// (nx + 1) * ny, indexed i + (nx + 1) * j with the face at x = i * h, followed
// by y-normal faces nx * (ny + 1), indexed i + nx * j with the face at y = j * h.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "monocav/errors.hpp"

namespace monocav {

/// Spatial dimension of the implemented discretization. Types below carry
/// per-axis arrays so the grid layer does not assume more than this constant.
inline constexpr int kDim = 2;

using Point = std::array<double, kDim>;
using CellValues = std::vector<double>;

/// Rectangle [0, Lx] x [0, Ly] with a measurement arc given as arc-length
/// fractions of the boundary, counted counter-clockwise from the origin.
struct DomainSpec {
  std::array<double, kDim> extents{1.0, 1.0};
  std::array<int, kDim> cells{64, 64};
  double s0 = 0.0;
  double s1 = 0.25;

  double cell_size() const { return extents[0] / cells[0]; }
  double perimeter() const { return 2.0 * (extents[0] + extents[1]); }

  void validate() const {
    for (int axis = 0; axis < kDim; ++axis) {
      if (!(extents[axis] > 0.0) || !std::isfinite(extents[axis]))
        fail(ErrorCode::InvalidParameter, "domain extents must be positive");
      if (cells[axis] < 8) fail(ErrorCode::InvalidParameter, "resolution must be >= 8 cells per axis");
    }
    const double hx = extents[0] / cells[0];
    const double hy = extents[1] / cells[1];
    if (std::abs(hx - hy) > 1e-12 * std::max(hx, hy))
      fail(ErrorCode::InvalidParameter, "cells must be square (Lx/nx == Ly/ny)");
    if (!(s0 >= 0.0 && s0 < s1 && s1 <= 1.0))
      fail(ErrorCode::InvalidParameter, "sigma must satisfy 0 <= s0 < s1 <= 1");
  }
};

enum class CavityKind { None, Disc, Star };

inline std::string_view to_string(CavityKind k) {
  switch (k) {
    case CavityKind::None: return "none";
    case CavityKind::Disc: return "disc";
    case CavityKind::Star: return "star";
  }
  return "?";
}


/// Parametrized cavity. A star cavity has radius function
/// r(theta) = r_mean + sum_k (a_k cos(k theta) + b_k sin(k theta)).
struct CavityParam {
  CavityKind kind = CavityKind::None;
  Point center{0.5, 0.5};
  double radius = 0.0;  // disc radius, or mean radius for a star
  std::vector<std::array<double, 2>> fourier;

  static CavityParam none() { return {}; }
  static CavityParam disc(Point c, double r) { return {CavityKind::Disc, c, r, {}}; }
  static CavityParam star(Point c, double r_mean, std::vector<std::array<double, 2>> coeffs) {
    return {CavityKind::Star, c, r_mean, std::move(coeffs)};
  }

  double radius_at(double theta) const {
    double r = radius;
    if (kind == CavityKind::Star) {
      for (std::size_t k = 0; k < fourier.size(); ++k) {
        const double kk = static_cast<double>(k + 1);
        r += fourier[k][0] * std::cos(kk * theta) + fourier[k][1] * std::sin(kk * theta);
      }
    }
    return r;
  }

  bool contains(const Point& p) const {
    const double dx = p[0] - center[0];
    const double dy = p[1] - center[1];
    switch (kind) {
      case CavityKind::None: return false;
      case CavityKind::Disc: return dx * dx + dy * dy < radius * radius;
      case CavityKind::Star: {
        const double d = std::hypot(dx, dy);
        if (d == 0.0) return true;
        return d < radius_at(std::atan2(dy, dx));
      }
    }
    return false;
  }

  /// Points on the cavity boundary, uniformly spaced in angle.
  std::vector<Point> boundary_samples(int count = 720) const {
    std::vector<Point> pts;
    if (kind == CavityKind::None) return pts;
    pts.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
      const double theta = 2.0 * std::numbers::pi * k / count;
      const double r = radius_at(theta);
      pts.push_back({center[0] + r * std::cos(theta), center[1] + r * std::sin(theta)});
    }
    return pts;
  }

  void validate() const {
    if (kind == CavityKind::None) return;
    if (!(radius > 0.0) || !std::isfinite(radius))
      fail(ErrorCode::DegenerateCavity, "cavity radius must be positive");
    if (kind == CavityKind::Star) {
      // sampled positivity margin: r(theta) >= 0.1 * r_mean
      for (int k = 0; k < 720; ++k) {
        const double theta = 2.0 * std::numbers::pi * k / 720;
        if (radius_at(theta) < 0.1 * radius)
          fail(ErrorCode::DegenerateCavity, "star radius drops below 0.1 * mean radius");
      }
    }
  }
};

enum class CellState : std::uint8_t { Active, Cavity, Exterior };
enum class FaceClass : std::uint8_t { Interior, OuterBoundary, CavityBoundary, Inactive };

/// An outer-boundary face on the measurement arc.
struct SigmaFace {
  int face = -1;
  int cell = -1;         // grid cell index
  int active = -1;       // active-cell index
  double arc = 0.0;      // arc-length position of the face midpoint
};

class GridGeometry {
 public:
  DomainSpec domain;
  double h = 0.0;
  std::vector<CellState> cell_mask;
  std::vector<FaceClass> face_class;
  std::vector<int> active_index;  // cell -> active index, -1 when inactive
  std::vector<int> active_cells;  // active index -> cell
  std::vector<SigmaFace> sigma_faces;
  int dropped_cells = 0;

  int nx() const { return domain.cells[0]; }
  int ny() const { return domain.cells[1]; }
  int cell_count() const { return nx() * ny(); }
  int active_count() const { return static_cast<int>(active_cells.size()); }
  int x_face_count() const { return (nx() + 1) * ny(); }
  int face_count() const { return x_face_count() + nx() * (ny() + 1); }

  int cell_id(int i, int j) const { return i + nx() * j; }
  std::array<int, kDim> cell_ij(int cell) const { return {cell % nx(), cell / nx()}; }

  Point cell_center(int cell) const {
    const auto [i, j] = cell_ij(cell);
    return {(i + 0.5) * h, (j + 0.5) * h};
  }

  int x_face(int i, int j) const { return i + (nx() + 1) * j; }
  int y_face(int i, int j) const { return x_face_count() + i + nx() * j; }

  /// Normal axis of a face (0 for x-normal).
  int face_axis(int face) const { return face < x_face_count() ? 0 : 1; }

  /// The two cells sharing a face, lower side first; -1 outside the grid.
  std::pair<int, int> face_cells(int face) const {
    if (face < x_face_count()) {
      const int i = face % (nx() + 1);
      const int j = face / (nx() + 1);
      return {i > 0 ? cell_id(i - 1, j) : -1, i < nx() ? cell_id(i, j) : -1};
    }
    const int f = face - x_face_count();
    const int i = f % nx();
    const int j = f / nx();
    return {j > 0 ? cell_id(i, j - 1) : -1, j < ny() ? cell_id(i, j) : -1};
  }

  bool is_active(int cell) const { return cell >= 0 && cell_mask[cell] == CellState::Active; }

  int count(CellState s) const {
    return static_cast<int>(std::count(cell_mask.begin(), cell_mask.end(), s));
  }
  int count(FaceClass c) const {
    return static_cast<int>(std::count(face_class.begin(), face_class.end(), c));
  }

  /// Distance from a point to the outer boundary of the rectangle.
  double wall_distance(const Point& p) const {
    return std::min({p[0], domain.extents[0] - p[0], p[1], domain.extents[1] - p[1]});
  }

  /// Restrict a full-grid field to active cells.
  CellValues restrict_to_active(std::span<const double> full) const {
    if (static_cast<int>(full.size()) != cell_count())
      fail(ErrorCode::ShapeMismatch, "full-grid field has wrong size");
    CellValues out(active_cells.size());
    for (std::size_t a = 0; a < active_cells.size(); ++a) out[a] = full[active_cells[a]];
    return out;
  }

  /// Evaluate a function at every cell center of the full grid.
  template <class Fn>
  CellValues sample(Fn&& fn) const {
    CellValues out(static_cast<std::size_t>(cell_count()));
    for (int c = 0; c < cell_count(); ++c) out[c] = fn(cell_center(c));
    return out;
  }
};

namespace detail {

/// Outer-boundary faces in counter-clockwise arc order with their cells and
/// arc-length midpoints.
inline std::vector<SigmaFace> outer_faces_in_arc_order(const GridGeometry& g) {
  const int nx = g.nx(), ny = g.ny();
  const double lx = g.domain.extents[0], ly = g.domain.extents[1];
  std::vector<SigmaFace> out;
  out.reserve(static_cast<std::size_t>(2 * (nx + ny)));
  for (int i = 0; i < nx; ++i) out.push_back({g.y_face(i, 0), g.cell_id(i, 0), -1, (i + 0.5) * g.h});
  for (int j = 0; j < ny; ++j)
    out.push_back({g.x_face(nx, j), g.cell_id(nx - 1, j), -1, lx + (j + 0.5) * g.h});
  for (int i = nx - 1; i >= 0; --i)
    out.push_back({g.y_face(i, ny), g.cell_id(i, ny - 1), -1, lx + ly + (nx - 1 - i + 0.5) * g.h});
  for (int j = ny - 1; j >= 0; --j)
    out.push_back({g.x_face(0, j), g.cell_id(0, j), -1, 2.0 * lx + ly + (ny - 1 - j + 0.5) * g.h});
  return out;
}

/// Classify faces and number active cells from a finished cell mask.
inline void finalize_topology(GridGeometry& g) {
  g.active_index.assign(g.cell_mask.size(), -1);
  g.active_cells.clear();
  for (int c = 0; c < g.cell_count(); ++c) {
    if (g.cell_mask[c] == CellState::Active) {
      g.active_index[c] = static_cast<int>(g.active_cells.size());
      g.active_cells.push_back(c);
    }
  }
  g.face_class.assign(static_cast<std::size_t>(g.face_count()), FaceClass::Inactive);
  for (int f = 0; f < g.face_count(); ++f) {
    const auto [lo, hi] = g.face_cells(f);
    const bool a_lo = g.is_active(lo), a_hi = g.is_active(hi);
    if (a_lo && a_hi) {
      g.face_class[f] = FaceClass::Interior;
    } else if (a_lo || a_hi) {
      const int other = a_lo ? hi : lo;
      if (other < 0)
        g.face_class[f] = FaceClass::OuterBoundary;
      else if (g.cell_mask[other] == CellState::Cavity)
        g.face_class[f] = FaceClass::CavityBoundary;
    }
  }
  for (auto& sf : g.sigma_faces) sf.active = g.active_index[sf.cell];
}

}  // namespace detail

/// Build a grid from an explicit cell mask, bypassing the resolution limits of
/// DomainSpec. No connectivity pruning and no measurement arc.
inline GridGeometry grid_from_mask(double h, int nx, int ny, std::vector<CellState> mask) {
  if (static_cast<int>(mask.size()) != nx * ny)
    fail(ErrorCode::ShapeMismatch, "mask size does not match nx * ny");
  GridGeometry g;
  g.domain.cells = {nx, ny};
  g.domain.extents = {nx * h, ny * h};
  g.h = h;
  g.cell_mask = std::move(mask);
  detail::finalize_topology(g);
  return g;
}

/// Voxelize Omega \ D: a cell is cavity iff its center lies inside the cavity.
/// Only the active component connected to the measurement arc is kept;
/// disconnected pockets are marked Exterior and counted in dropped_cells.
inline GridGeometry build_masked_grid(const DomainSpec& domain, const CavityParam& cavity) {
  domain.validate();
  cavity.validate();

  GridGeometry g;
  g.domain = domain;
  g.h = domain.cell_size();
  const int nx = g.nx(), ny = g.ny();

  g.cell_mask.assign(static_cast<std::size_t>(nx * ny), CellState::Active);
  for (int c = 0; c < g.cell_count(); ++c)
    if (cavity.contains(g.cell_center(c))) g.cell_mask[c] = CellState::Cavity;

  if (cavity.kind != CavityKind::None) {
    for (const auto& p : cavity.boundary_samples()) {
      if (!(p[0] > 0.0 && p[0] < domain.extents[0] && p[1] > 0.0 && p[1] < domain.extents[1]))
        fail(ErrorCode::CavityTouchesBoundary, "cavity is not strictly inside the domain");
    }
    for (int c = 0; c < g.cell_count(); ++c) {
      if (g.cell_mask[c] != CellState::Cavity) continue;
      const auto [i, j] = g.cell_ij(c);
      if (i < 2 || j < 2 || i >= nx - 2 || j >= ny - 2)
        fail(ErrorCode::CavityTouchesBoundary, "cavity cell within 2 cells of the outer boundary");
    }
  }

  const double perimeter = domain.perimeter();
  for (const auto& sf : detail::outer_faces_in_arc_order(g)) {
    const double frac = sf.arc / perimeter;
    if (frac >= domain.s0 && frac <= domain.s1 && g.cell_mask[sf.cell] == CellState::Active)
      g.sigma_faces.push_back(sf);
  }
  if (g.sigma_faces.empty()) fail(ErrorCode::EmptySigma, "no outer face lies on the measurement arc");

  // keep the active component reachable from the measurement arc
  std::vector<char> reached(g.cell_mask.size(), 0);
  std::queue<int> frontier;
  for (const auto& sf : g.sigma_faces) {
    if (!reached[sf.cell]) {
      reached[sf.cell] = 1;
      frontier.push(sf.cell);
    }
  }
  while (!frontier.empty()) {
    const int c = frontier.front();
    frontier.pop();
    const auto [i, j] = g.cell_ij(c);
    const std::array<std::array<int, 2>, 4> nbrs{{{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}}};
    for (const auto& [ni, nj] : nbrs) {
      if (ni < 0 || nj < 0 || ni >= nx || nj >= ny) continue;
      const int n = g.cell_id(ni, nj);
      if (!reached[n] && g.cell_mask[n] == CellState::Active) {
        reached[n] = 1;
        frontier.push(n);
      }
    }
  }
  for (int c = 0; c < g.cell_count(); ++c) {
    if (g.cell_mask[c] == CellState::Active && !reached[c]) {
      g.cell_mask[c] = CellState::Exterior;
      ++g.dropped_cells;
    }
  }

  detail::finalize_topology(g);
  return g;
}

/// Geometric and initial-data hypotheses of the uniqueness result, evaluated
/// on the discrete configuration. Report only; nothing is rejected here.
struct AssumptionReport {
  double d0 = 0.0;
  double cavity_wall_distance = std::numeric_limits<double>::infinity();
  bool distance_ok = true;
  // collar reading: every cell with u0 != 0 lies within d0/2 of the wall
  double support_max_wall_distance = 0.0;
  bool support_in_collar = true;
  // literal inf-distance reading: dist(supp u0, wall) <= d0/2
  double support_min_wall_distance = 0.0;
  bool support_inf_distance_ok = true;
  bool support_avoids_cavity = true;

  bool all_passed() const { return distance_ok && support_in_collar && support_avoids_cavity; }
};

/// `u0` holds full-grid values (one per cell, cavity cells included).
/// d0 defaults to 4h.
inline AssumptionReport check_assumptions(const GridGeometry& grid, const CavityParam& cavity,
                                          std::span<const double> u0,
                                          std::optional<double> d0 = std::nullopt) {
  if (static_cast<int>(u0.size()) != grid.cell_count())
    fail(ErrorCode::ShapeMismatch, "initial field must hold one value per grid cell");
  AssumptionReport rep;
  rep.d0 = d0.value_or(4.0 * grid.h);

  for (const auto& p : cavity.boundary_samples())
    rep.cavity_wall_distance = std::min(rep.cavity_wall_distance, grid.wall_distance(p));
  rep.distance_ok = rep.cavity_wall_distance >= rep.d0;

  bool any_support = false;
  double max_d = 0.0, min_d = std::numeric_limits<double>::infinity();
  for (int c = 0; c < grid.cell_count(); ++c) {
    if (u0[c] == 0.0) continue;
    const Point p = grid.cell_center(c);
    if (grid.cell_mask[c] == CellState::Cavity || cavity.contains(p)) rep.support_avoids_cavity = false;
    if (grid.cell_mask[c] != CellState::Active) continue;
    any_support = true;
    const double d = grid.wall_distance(p);
    max_d = std::max(max_d, d);
    min_d = std::min(min_d, d);
  }
  if (any_support) {
    rep.support_max_wall_distance = max_d;
    rep.support_min_wall_distance = min_d;
    rep.support_in_collar = max_d <= 0.5 * rep.d0;
    rep.support_inf_distance_ok = min_d <= 0.5 * rep.d0;
  }
  return rep;
}

/// ASCII PGM: 255 for active cells, 0 otherwise; top row of the image is y = Ly.
inline void write_mask_pgm(const GridGeometry& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::InvalidParameter, "cannot open " + path);
  out << "P2\n" << grid.nx() << ' ' << grid.ny() << "\n255\n";
  for (int j = grid.ny() - 1; j >= 0; --j) {
    for (int i = 0; i < grid.nx(); ++i) {
      out << (grid.cell_mask[grid.cell_id(i, j)] == CellState::Active ? 255 : 0)
          << (i + 1 < grid.nx() ? ' ' : '\n');
    }
  }
}

}  // namespace monocav
