#pragma once

// Forward solvers for the monodomain system on Omega \ D:
//   u_t = div(K grad u) - f(u, w),   w_t = -g(u, w),   no-flux on both boundaries.
//
// solve_forward: IMEX Euler (implicit diffusion, explicit reaction).
// solve_picard:  whole-window fixed-point iteration whose fixed point is the
//                IMEX trajectory with f, g evaluated on the rectangle-clamped
//                state; reports contraction in the exponentially weighted norm.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <span>
#include <tuple>
#include <string>
#include <string_view>
#include <vector>

#include "monocav/diffusion.hpp"
#include "monocav/errors.hpp"
#include "monocav/geometry.hpp"
#include "monocav/ionic.hpp"
#include "monocav/sparse.hpp"

namespace monocav {

enum class Scheme { Imex, Picard, Nonlocal };

inline std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::Imex: return "imex";
    case Scheme::Picard: return "picard";
    case Scheme::Nonlocal: return "nonlocal";
  }
  return "unknown";
}

inline std::optional<Scheme> parse_scheme(std::string_view s) {
  if (s == "imex") return Scheme::Imex;
  if (s == "picard") return Scheme::Picard;
  if (s == "nonlocal") return Scheme::Nonlocal;
  return std::nullopt;
}

struct StateFields {
  CellValues u;
  CellValues w;
  double t = 0.0;
};

/// Source term s(x, t) added to the u-equation (manufactured solutions).
using SourceFn = std::function<double(const Point&, double)>;

struct SolverConfig {
  double dt = 0.05;
  double T = 20.0;
  Scheme scheme = Scheme::Imex;
  std::optional<double> kappa;  // Picard shift; default 2 max(M1, M2)
  double picard_tol = 1e-8;
  int picard_max_iter = 50;
  double picard_window = 1.0;
  double cg_tol = 1e-8;
  int cg_max_iter = 5000;
  int snapshot_stride = 0;  // 0 keeps only the initial and final states
  std::optional<double> rectangle_slack;  // default 10 (dt + h^2)
  RectangleOptions rectangle;
  bool reaction = true;  // false disables f and g
  SourceFn source;

  int step_count() const { return static_cast<int>(std::llround(T / dt)); }

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) fail(ErrorCode::InvalidParameter, "dt > 0 violated");
    if (!(dt < T)) fail(ErrorCode::InvalidParameter, "dt < T violated");
    if (std::abs(step_count() * dt - T) > 1e-9 * T)
      fail(ErrorCode::InvalidParameter, "T must be an integer multiple of dt");
    if (!(cg_tol > 0.0) || !(picard_tol > 0.0))
      fail(ErrorCode::InvalidParameter, "tolerances must be positive");
    if (cg_max_iter < 1 || picard_max_iter < 1)
      fail(ErrorCode::InvalidParameter, "iteration caps must be positive");
    if (!(picard_window > 0.0)) fail(ErrorCode::InvalidParameter, "picard_window > 0 violated");
    if (snapshot_stride < 0) fail(ErrorCode::InvalidParameter, "snapshot_stride >= 0 violated");
  }
};

struct StepDiagnostics {
  int step = 0;
  double t = 0.0;
  double min_u = 0.0, max_u = 0.0;
  double min_w = 0.0, max_w = 0.0;
  int picard_iters = 0;
  double picard_ratio = std::numeric_limits<double>::quiet_NaN();
};

struct Trajectory {
  std::string scheme;
  IonicModel model;
  double dt = 0.0;
  double T = 0.0;
  std::vector<StateFields> snapshots;
  std::vector<double> trace_times;               // one per step, t_1 .. t_N
  std::vector<std::vector<double>> trace_buffer;  // u on the measurement cells, per step
  std::vector<StepDiagnostics> diagnostics;      // steps 0 .. N
  Rectangle rectangle;
  double rectangle_slack = 0.0;
  bool rectangle_escape = false;
  std::vector<std::string> warnings;

  int step_count() const { return static_cast<int>(trace_times.size()); }

  double min_u() const { return reduce(&StepDiagnostics::min_u, true); }
  double max_u() const { return reduce(&StepDiagnostics::max_u, false); }
  double min_w() const { return reduce(&StepDiagnostics::min_w, true); }
  double max_w() const { return reduce(&StepDiagnostics::max_w, false); }

  const StateFields& final_state() const { return snapshots.back(); }

 private:
  double reduce(double StepDiagnostics::*field, bool take_min) const {
    double v = take_min ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    for (const auto& d : diagnostics) v = take_min ? std::min(v, d.*field) : std::max(v, d.*field);
    return v;
  }
};

/// Backward-Euler diffusion solves (I - dt D) x = rhs with a cached operator.
class ImplicitDiffusion {
 public:
  ImplicitDiffusion(const SparseOperator& D, double dt, double cg_tol, int cg_max_iter)
      : M_(D.shifted_identity(-dt)), cg_(M_), tol_(cg_tol), max_iter_(cg_max_iter) {}
  ImplicitDiffusion(const ImplicitDiffusion&) = delete;
  ImplicitDiffusion& operator=(const ImplicitDiffusion&) = delete;

  CgResult solve(std::span<const double> rhs, std::span<double> x) {
    return cg_.solve(rhs, x, tol_, max_iter_);
  }
  void set_tolerance(double tol) { tol_ = tol; }

 private:
  SparseOperator M_;
  CgSolver cg_;
  double tol_;
  int max_iter_;
};

struct StepOptions {
  bool reaction = true;
  double cg_tol = 1e-8;
  int cg_max_iter = 5000;
};

namespace detail {

// One IMEX step. `source_next` (possibly empty) is s(x, t_{n+1}) on active cells.
inline StateFields imex_step(ImplicitDiffusion& diffusion, const StateFields& s, const IonicModel& m,
                             double dt, bool reaction, std::span<const double> source_next) {
  const std::size_t n = s.u.size();
  StateFields next;
  next.t = s.t + dt;
  next.w.resize(n);
  CellValues rhs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double fu = reaction ? eval_f(m, s.u[i], s.w[i]) : 0.0;
    const double gw = reaction ? eval_g(m, s.u[i], s.w[i]) : 0.0;
    rhs[i] = s.u[i] - dt * fu + (source_next.empty() ? 0.0 : dt * source_next[i]);
    next.w[i] = s.w[i] - dt * gw;
  }
  next.u = s.u;  // warm start
  diffusion.solve(rhs, next.u);
  return next;
}

inline std::vector<Point> active_centers(const GridGeometry& grid) {
  std::vector<Point> pts(grid.active_cells.size());
  for (std::size_t a = 0; a < pts.size(); ++a) pts[a] = grid.cell_center(grid.active_cells[a]);
  return pts;
}

inline void eval_source(const SourceFn& fn, const std::vector<Point>& pts, double t, CellValues& out) {
  if (!fn) {
    out.clear();
    return;
  }
  out.resize(pts.size());
  for (std::size_t a = 0; a < pts.size(); ++a) out[a] = fn(pts[a], t);
}

inline std::pair<double, double> min_max(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

/// Shared bookkeeping for all solvers: diagnostics, trace buffer, snapshots.
class TrajectoryRecorder {
 public:
  TrajectoryRecorder(const GridGeometry& grid, const IonicModel& m, const SolverConfig& cfg,
                     std::string scheme)
      : grid_(grid), stride_(cfg.snapshot_stride), steps_(cfg.step_count()) {
    traj_.scheme = std::move(scheme);
    traj_.model = m;
    traj_.dt = cfg.dt;
    traj_.T = cfg.T;
    traj_.rectangle = invariant_rectangle(m, cfg.rectangle);
    traj_.rectangle_slack = cfg.rectangle_slack.value_or(10.0 * (cfg.dt + grid.h * grid.h));
    traj_.trace_times.reserve(static_cast<std::size_t>(steps_));
    traj_.trace_buffer.reserve(static_cast<std::size_t>(steps_));
  }

  void record(int step, const StateFields& s, int picard_iters = 0,
              double picard_ratio = std::numeric_limits<double>::quiet_NaN()) {
    StepDiagnostics d;
    d.step = step;
    d.t = s.t;
    std::tie(d.min_u, d.max_u) = min_max(s.u);
    std::tie(d.min_w, d.max_w) = min_max(s.w);
    d.picard_iters = picard_iters;
    d.picard_ratio = picard_ratio;
    traj_.diagnostics.push_back(d);

    const Rectangle& r = traj_.rectangle;
    const double slack = traj_.rectangle_slack;
    if (step == 0 && !(r.contains(d.min_u, d.min_w) && r.contains(d.max_u, d.max_w))) {
      traj_.warnings.push_back("initial data outside the invariant rectangle");
    } else if (step > 0 && !traj_.rectangle_escape &&
               !(r.contains(d.min_u, d.min_w, slack) && r.contains(d.max_u, d.max_w, slack))) {
      traj_.rectangle_escape = true;
      traj_.warnings.push_back("RectangleEscape at step " + std::to_string(step));
    }

    if (step > 0) {
      traj_.trace_times.push_back(s.t);
      std::vector<double> row(grid_.sigma_faces.size());
      for (std::size_t k = 0; k < row.size(); ++k) row[k] = s.u[grid_.sigma_faces[k].active];
      traj_.trace_buffer.push_back(std::move(row));
    }
    if (step == 0 || step == steps_ || (stride_ > 0 && step % stride_ == 0)) traj_.snapshots.push_back(s);
  }

  Trajectory finish() && { return std::move(traj_); }

 private:
  const GridGeometry& grid_;
  int stride_;
  int steps_;
  Trajectory traj_;
};

inline void check_initial(const GridGeometry& grid, std::span<const double> u0, std::span<const double> w0) {
  if (static_cast<int>(u0.size()) != grid.active_count() || static_cast<int>(w0.size()) != grid.active_count())
    fail(ErrorCode::ShapeMismatch, "initial data must hold one value per active cell");
}

}  // namespace detail

/// Single IMEX step with a freshly built (I - dt D):
///   (I - dt D) u_{n+1} = u_n - dt f(u_n, w_n),   w_{n+1} = w_n - dt g(u_n, w_n).
inline StateFields step_imex(const StateFields& state, const SparseOperator& D, const IonicModel& m, double dt,
                             const StepOptions& opt = {}) {
  if (!(dt > 0.0)) fail(ErrorCode::InvalidParameter, "dt > 0 violated");
  ImplicitDiffusion diffusion(D, dt, opt.cg_tol, opt.cg_max_iter);
  return detail::imex_step(diffusion, state, m, dt, opt.reaction, {});
}

/// Integrate over [0, T] with the IMEX scheme. `u0`, `w0` are active-cell values.
inline Trajectory solve_forward(const GridGeometry& grid, const ConductivityField& K, const IonicModel& m,
                                std::span<const double> u0, std::span<const double> w0,
                                const SolverConfig& cfg) {
  cfg.validate();
  m.validate();
  detail::check_initial(grid, u0, w0);
  const SparseOperator D = assemble_diffusion(grid, K);
  ImplicitDiffusion diffusion(D, cfg.dt, cfg.cg_tol, cfg.cg_max_iter);
  const auto centers = detail::active_centers(grid);

  detail::TrajectoryRecorder rec(grid, m, cfg, "imex");
  StateFields s{CellValues(u0.begin(), u0.end()), CellValues(w0.begin(), w0.end()), 0.0};
  rec.record(0, s);
  CellValues source;
  const int steps = cfg.step_count();
  for (int n = 0; n < steps; ++n) {
    detail::eval_source(cfg.source, centers, (n + 1) * cfg.dt, source);
    s = detail::imex_step(diffusion, s, m, cfg.dt, cfg.reaction, source);
    s.t = (n + 1) * cfg.dt;
    rec.record(n + 1, s);
  }
  return std::move(rec).finish();
}

/// Convergence history of one Picard window.
struct PicardWindow {
  double t0 = 0.0, t1 = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> updates;           // sup|du| + sup|dw| over the window
  std::vector<double> weighted_updates;  // same with weight exp(-kappa (t - t0))
  std::vector<double> ratios;            // successive weighted ratios (NaN below round-off)
};

struct PicardDiagnostics {
  double kappa = 0.0;
  LipschitzConstants lipschitz;
  Rectangle rectangle;
  std::vector<PicardWindow> windows;

  double contraction_bound() const { return (lipschitz.M1 + lipschitz.M2) / kappa; }
  double max_ratio() const {
    double r = 0.0;
    for (const auto& w : windows)
      for (double x : w.ratios)
        if (std::isfinite(x)) r = std::max(r, x);
    return r;
  }
  int max_iterations() const {
    int k = 0;
    for (const auto& w : windows) k = std::max(k, w.iterations);
    return k;
  }
};

struct PicardResult {
  Trajectory trajectory;
  PicardDiagnostics diagnostics;
};

/// Weighted updates smaller than this are round-off; their ratios carry no information.
inline constexpr double kPicardRatioFloor = 1e-13;

/// Whole-window fixed-point iteration
///   (I - dt D) u^k_{n+1} = u^k_n - dt f(P_S(u^{k-1}_n, w^{k-1}_n)),
///   w^k_{n+1}            = w^k_n - dt g(P_S(u^{k-1}_n, w^{k-1}_n)),
/// which in the variables v = e^{-kappa t} u is the map v -> A^{-1} f*(v, w),
/// w -> G(v, w). The window [0, T] is split into pieces of length <= picard_window.
inline PicardResult solve_picard(const GridGeometry& grid, const ConductivityField& K, const IonicModel& m,
                                 std::span<const double> u0, std::span<const double> w0,
                                 const SolverConfig& cfg) {
  cfg.validate();
  m.validate();
  detail::check_initial(grid, u0, w0);

  PicardDiagnostics diag;
  diag.rectangle = invariant_rectangle(m, cfg.rectangle);
  diag.lipschitz = lipschitz_constants(m, diag.rectangle);
  const double m_max = std::max(diag.lipschitz.M1, diag.lipschitz.M2);
  diag.kappa = cfg.kappa.value_or(2.0 * m_max);
  if (!(diag.kappa > m_max)) fail(ErrorCode::InvalidParameter, "kappa > max(M1, M2) violated");
  const Rectangle& S = diag.rectangle;

  const SparseOperator D = assemble_diffusion(grid, K);
  ImplicitDiffusion diffusion(D, cfg.dt, std::min(cfg.cg_tol, 1e-3 * cfg.picard_tol), cfg.cg_max_iter);
  const auto centers = detail::active_centers(grid);
  const std::size_t n_cells = u0.size();

  detail::TrajectoryRecorder rec(grid, m, cfg, "picard");
  StateFields start{CellValues(u0.begin(), u0.end()), CellValues(w0.begin(), w0.end()), 0.0};
  rec.record(0, start);

  const int total_steps = cfg.step_count();
  const int window_steps = std::max(1, static_cast<int>(std::floor(cfg.picard_window / cfg.dt + 1e-9)));
  std::vector<CellValues> sources;

  for (int first = 0; first < total_steps; first += window_steps) {
    const int steps = std::min(window_steps, total_steps - first);
    PicardWindow win;
    win.t0 = first * cfg.dt;
    win.t1 = (first + steps) * cfg.dt;

    sources.assign(static_cast<std::size_t>(steps), {});
    for (int n = 0; n < steps; ++n) detail::eval_source(cfg.source, centers, (first + n + 1) * cfg.dt, sources[n]);

    // iterate 0: constant continuation of the window's initial state
    std::vector<CellValues> U(static_cast<std::size_t>(steps + 1), start.u);
    std::vector<CellValues> W(static_cast<std::size_t>(steps + 1), start.w);
    std::vector<CellValues> U_new = U, W_new = W;
    CellValues rhs(n_cells);
    double prev_weighted = std::numeric_limits<double>::quiet_NaN();

    for (int k = 1; k <= cfg.picard_max_iter; ++k) {
      for (int n = 0; n < steps; ++n) {
        for (std::size_t i = 0; i < n_cells; ++i) {
          const double u = S.clamp_u(U[n][i]);
          const double w = S.clamp_w(W[n][i]);
          const double fu = cfg.reaction ? eval_f(m, u, w) : 0.0;
          const double gw = cfg.reaction ? eval_g(m, u, w) : 0.0;
          rhs[i] = U_new[n][i] - cfg.dt * fu + (sources[n].empty() ? 0.0 : cfg.dt * sources[n][i]);
          W_new[n + 1][i] = W_new[n][i] - cfg.dt * gw;
        }
        U_new[n + 1] = U[n + 1];  // warm start from the previous iterate
        diffusion.solve(rhs, U_new[n + 1]);
      }

      double sup_u = 0.0, sup_w = 0.0, wsup_u = 0.0, wsup_w = 0.0;
      for (int n = 1; n <= steps; ++n) {
        double du = 0.0, dw = 0.0;
        for (std::size_t i = 0; i < n_cells; ++i) {
          du = std::max(du, std::abs(U_new[n][i] - U[n][i]));
          dw = std::max(dw, std::abs(W_new[n][i] - W[n][i]));
        }
        const double weight = std::exp(-diag.kappa * n * cfg.dt);
        sup_u = std::max(sup_u, du);
        sup_w = std::max(sup_w, dw);
        wsup_u = std::max(wsup_u, weight * du);
        wsup_w = std::max(wsup_w, weight * dw);
      }
      const double update = sup_u + sup_w;
      const double weighted = wsup_u + wsup_w;
      win.updates.push_back(update);
      win.weighted_updates.push_back(weighted);
      if (k > 1)
        win.ratios.push_back(prev_weighted > kPicardRatioFloor ? weighted / prev_weighted
                                                               : std::numeric_limits<double>::quiet_NaN());
      prev_weighted = weighted;
      std::swap(U, U_new);
      std::swap(W, W_new);
      win.iterations = k;
      if (update < cfg.picard_tol) {
        win.converged = true;
        break;
      }
    }
    if (!win.converged) {
      double last = std::numeric_limits<double>::quiet_NaN();
      for (double r : win.ratios)
        if (std::isfinite(r)) last = r;
      throw PicardStalledError(win.iterations, last);
    }

    double window_ratio = std::numeric_limits<double>::quiet_NaN();
    for (double r : win.ratios)
      if (std::isfinite(r)) window_ratio = std::isfinite(window_ratio) ? std::max(window_ratio, r) : r;
    for (int n = 1; n <= steps; ++n) {
      StateFields s{U[n], W[n], (first + n) * cfg.dt};
      rec.record(first + n, s, win.iterations, window_ratio);
    }
    start = StateFields{U[steps], W[steps], win.t1};
    diag.windows.push_back(std::move(win));
  }
  return {std::move(rec).finish(), std::move(diag)};
}

/// Largest one-sided normal difference |u_boundary - u_inward| / h over outer
/// faces, scaled by the normal conductivity: a discrete proxy for K grad u0 . nu.
inline double boundary_flux_incompatibility(const GridGeometry& grid, const ConductivityField& K,
                                            std::span<const double> u0_active) {
  double worst = 0.0;
  for (int f = 0; f < grid.face_count(); ++f) {
    if (grid.face_class[f] != FaceClass::OuterBoundary) continue;
    const auto [lo, hi] = grid.face_cells(f);
    const int cell = lo >= 0 ? lo : hi;
    const auto [i, j] = grid.cell_ij(cell);
    const int axis = grid.face_axis(f);
    const int step = lo >= 0 ? -1 : 1;  // toward the interior
    const int ni = axis == 0 ? i + step : i;
    const int nj = axis == 1 ? j + step : j;
    if (ni < 0 || nj < 0 || ni >= grid.nx() || nj >= grid.ny()) continue;
    const int inner = grid.cell_id(ni, nj);
    if (!grid.is_active(inner)) continue;
    const double du = u0_active[grid.active_index[cell]] - u0_active[grid.active_index[inner]];
    worst = std::max(worst, K.cells[cell].normal(axis) * std::abs(du) / grid.h);
  }
  return worst;
}

/// Diagnostics CSV: step,t,min_u,max_u,min_w,max_w,picard_iters,picard_ratio
inline void write_diagnostics_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::InvalidParameter, "cannot open " + path);
  out << "step,t,min_u,max_u,min_w,max_w,picard_iters,picard_ratio\n";
  out << std::setprecision(17);
  for (const auto& d : traj.diagnostics) {
    out << d.step << ',' << d.t << ',' << d.min_u << ',' << d.max_u << ',' << d.min_w << ',' << d.max_w << ','
        << d.picard_iters << ',';
    if (std::isfinite(d.picard_ratio)) out << d.picard_ratio;
    else out << "nan";
    out << '\n';
  }
}

/// Legacy VTK structured points, one scalar field; inactive cells are NaN.
inline void write_vtk_scalar(const GridGeometry& grid, std::span<const double> active_values,
                             const std::string& name, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::InvalidParameter, "cannot open " + path);
  out << "# vtk DataFile Version 3.0\n" << name << "\nASCII\nDATASET STRUCTURED_POINTS\n";
  out << "DIMENSIONS " << grid.nx() << ' ' << grid.ny() << " 1\n";
  out << "ORIGIN " << 0.5 * grid.h << ' ' << 0.5 * grid.h << " 0\n";
  out << "SPACING " << grid.h << ' ' << grid.h << ' ' << grid.h << '\n';
  out << "POINT_DATA " << grid.cell_count() << "\nSCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
  out << std::setprecision(17);
  for (int c = 0; c < grid.cell_count(); ++c) {
    const int a = grid.active_index[c];
    if (a >= 0) out << active_values[a] << '\n';
    else out << "nan\n";
  }
}

}  // namespace monocav
