#pragma once

// Cavity distinguishability and reconstruction from a single boundary trace.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "monocav/diffusion.hpp"
#include "monocav/errors.hpp"
#include "monocav/forward.hpp"
#include "monocav/geometry.hpp"
#include "monocav/ionic.hpp"
#include "monocav/measurements.hpp"
#include "monocav/nelder_mead.hpp"
#include "monocav/nonlocal.hpp"

namespace monocav {

/// Full-grid field generator; evaluated once per candidate grid.
using FieldFn = std::function<CellValues(const GridGeometry&)>;

inline FieldFn constant_field(double v) {
  return [v](const GridGeometry& g) { return CellValues(static_cast<std::size_t>(g.cell_count()), v); };
}

/// Outer walls of the rectangle, combinable as a bit set.
enum Wall : unsigned { kBottom = 1u, kRight = 2u, kTop = 4u, kLeft = 8u, kAllWalls = 15u };

/// Distance from p to the nearest of the selected walls.
inline double distance_to_walls(const DomainSpec& d, const Point& p, unsigned walls) {
  double dist = std::numeric_limits<double>::infinity();
  if (walls & kBottom) dist = std::min(dist, p[1]);
  if (walls & kRight) dist = std::min(dist, d.extents[0] - p[0]);
  if (walls & kTop) dist = std::min(dist, d.extents[1] - p[1]);
  if (walls & kLeft) dist = std::min(dist, p[0]);
  return dist;
}

/// Smooth bump hugging the selected walls: amplitude * cos^2(pi d / (2 width))
/// for wall distance d < width, zero beyond. Its normal derivative vanishes on the wall.
inline FieldFn collar_bump(double amplitude, double width, unsigned walls = kAllWalls) {
  if (!(width > 0.0)) fail(ErrorCode::InvalidParameter, "collar width must be positive");
  if ((walls & kAllWalls) == 0u) fail(ErrorCode::InvalidParameter, "collar needs at least one wall");
  return [=](const GridGeometry& g) {
    return g.sample([&](const Point& p) {
      const double d = distance_to_walls(g.domain, p, walls);
      if (d >= width) return 0.0;
      const double c = std::cos(0.5 * std::numbers::pi * d / width);
      return amplitude * c * c;
    });
  };
}

/// Everything except the cavity: the forward map p -> trace is evaluated by
/// swapping the cavity into this setup.
struct ForwardSetup {
  DomainSpec domain;
  IonicModel model;
  SolverConfig solver;
  std::function<Tensor2(const Point&)> conductivity = [](const Point&) { return Tensor2{}; };
  double lambda = 10.0;
  FieldFn u0 = constant_field(0.0);
  FieldFn w0 = constant_field(0.0);
  std::optional<double> d0;            // default 4h
  bool require_assumptions = true;     // reject cavities violating the separation hypotheses
};

struct ForwardRun {
  GridGeometry grid;
  AssumptionReport assumptions;
  Trajectory trajectory;
  BoundaryTrace trace;
};

namespace detail {

inline Trajectory run_scheme(const GridGeometry& grid, const ConductivityField& K, const IonicModel& m,
                             const CellValues& u0, const CellValues& w0, const SolverConfig& cfg) {
  switch (cfg.scheme) {
    case Scheme::Imex: return solve_forward(grid, K, m, u0, w0, cfg);
    case Scheme::Picard: return solve_picard(grid, K, m, u0, w0, cfg).trajectory;
    case Scheme::Nonlocal: return solve_nonlocal(grid, K, m, u0, w0, cfg);
  }
  fail(ErrorCode::InvalidParameter, "unknown scheme");
}

inline void require_admissible(const AssumptionReport& rep) {
  if (!rep.distance_ok)
    fail(ErrorCode::CavityTouchesBoundary, "cavity closer than d0 to the outer boundary");
  if (!rep.support_avoids_cavity) fail(ErrorCode::InvalidParameter, "initial datum overlaps the cavity");
}

}  // namespace detail

/// Build the masked grid and check the hypotheses without solving.
inline std::pair<GridGeometry, AssumptionReport> prepare_geometry(const ForwardSetup& s, const CavityParam& cavity) {
  cavity.validate();
  GridGeometry grid = build_masked_grid(s.domain, cavity);
  const CellValues u0 = s.u0(grid);
  AssumptionReport rep = check_assumptions(grid, cavity, u0, s.d0);
  if (s.require_assumptions) detail::require_admissible(rep);
  return {std::move(grid), rep};
}

inline ForwardRun run_forward(const ForwardSetup& s, const CavityParam& cavity) {
  auto [grid, rep] = prepare_geometry(s, cavity);
  const auto K = ConductivityField::from_function(grid, s.conductivity, s.lambda);
  const CellValues u0 = grid.restrict_to_active(s.u0(grid));
  const CellValues w0 = grid.restrict_to_active(s.w0(grid));
  Trajectory traj = detail::run_scheme(grid, K, s.model, u0, w0, s.solver);
  BoundaryTrace trace = extract_trace(traj, grid);
  return {std::move(grid), rep, std::move(traj), std::move(trace)};
}

inline BoundaryTrace forward_trace(const ForwardSetup& s, const CavityParam& cavity) {
  return run_forward(s, cavity).trace;
}

/// Misfit between the trace at step dt and the dt/2 rerun sampled at the same
/// times: the scheme-noise floor below which traces cannot be told apart.
inline double dt_refinement_floor(const ForwardSetup& s, const CavityParam& cavity) {
  const BoundaryTrace coarse = forward_trace(s, cavity);
  ForwardSetup fine = s;
  fine.solver.dt = 0.5 * s.solver.dt;
  const BoundaryTrace sub = resample_like(forward_trace(fine, cavity), coarse);
  return misfit(coarse, sub);
}

/// Worker count: MONOCAV_THREADS if set, else the hardware concurrency, capped by `jobs`.
inline int worker_count(int jobs) {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("MONOCAV_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) n = v;
  }
  return std::max(1, std::min(n, jobs));
}

/// Run jobs 0..count-1 on a small pool. Each result lands at its own index, so
/// the output order does not depend on scheduling. The exception of the
/// lowest failing index is rethrown after all workers finish.
template <class Fn>
void parallel_for(int count, Fn&& fn) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(std::max(count, 0)));
  auto guarded = [&](int i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const int workers = worker_count(count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) guarded(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int i = next++; i < count; i = next++) guarded(i);
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Distinguishability -----------------------------------------------------------

struct DistinguishabilityMatrix {
  std::vector<CavityParam> cavities;
  std::vector<std::vector<double>> misfits;  // NaN in rows of failed cavities
  std::vector<std::string> errors;           // empty string when the cavity solved
  double dt = 0.0, T = 0.0;
  std::string scheme;

  bool row_failed(std::size_t i) const { return !errors[i].empty(); }
};

inline DistinguishabilityMatrix distinguishability(const std::vector<CavityParam>& cavities,
                                                   const ForwardSetup& setup) {
  if (cavities.size() < 2) fail(ErrorCode::InvalidParameter, "need at least two cavities");
  const int n = static_cast<int>(cavities.size());
  std::vector<std::optional<BoundaryTrace>> traces(cavities.size());
  DistinguishabilityMatrix out;
  out.cavities = cavities;
  out.errors.assign(cavities.size(), "");
  out.dt = setup.solver.dt;
  out.T = setup.solver.T;
  out.scheme = std::string(to_string(setup.solver.scheme));
  parallel_for(n, [&](int i) {
    try {
      traces[i] = forward_trace(setup, cavities[i]);
    } catch (const Error& e) {
      out.errors[i] = std::string(to_string(e.code())) + ": " + e.what();
    }
  });
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.misfits.assign(cavities.size(), std::vector<double>(cavities.size(), nan));
  for (int i = 0; i < n; ++i) {
    if (!traces[i]) continue;
    out.misfits[i][i] = 0.0;
    for (int j = 0; j < i; ++j) {
      if (!traces[j]) continue;
      out.misfits[i][j] = out.misfits[j][i] = misfit(*traces[i], *traces[j]);
    }
  }
  return out;
}

inline void write_matrix_csv(const DistinguishabilityMatrix& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::InvalidParameter, "cannot open " + path);
  out << "# dt=" << detail::format_double(m.dt) << " T=" << detail::format_double(m.T) << " scheme=" << m.scheme
      << '\n';
  for (std::size_t i = 0; i < m.cavities.size(); ++i) {
    const auto& c = m.cavities[i];
    out << "# cavity " << i << ": " << to_string(c.kind);
    if (c.kind != CavityKind::None)
      out << " center=(" << detail::format_double(c.center[0]) << ',' << detail::format_double(c.center[1])
          << ") r=" << detail::format_double(c.radius);
    for (const auto& ab : c.fourier) out << " ab=(" << detail::format_double(ab[0]) << ',' << detail::format_double(ab[1]) << ')';
    if (m.row_failed(i)) out << " failed=" << m.errors[i];
    out << '\n';
  }
  for (const auto& row : m.misfits) {
    for (std::size_t j = 0; j < row.size(); ++j)
      out << (j ? "," : "") << (std::isnan(row[j]) ? std::string("nan") : detail::format_double(row[j]));
    out << '\n';
  }
}

// Parametrization ------------------------------------------------------------

/// Flat parameter vector: disc (cx, cy, r); star (cx, cy, r_mean, a1, b1, a2, b2, ...).
inline std::vector<double> to_params(const CavityParam& c) {
  std::vector<double> p{c.center[0], c.center[1], c.radius};
  if (c.kind == CavityKind::Star)
    for (const auto& ab : c.fourier) {
      p.push_back(ab[0]);
      p.push_back(ab[1]);
    }
  return p;
}

inline CavityParam from_params(CavityKind kind, const std::vector<double>& p) {
  if (kind == CavityKind::Disc) {
    if (p.size() != 3) fail(ErrorCode::ShapeMismatch, "disc needs 3 parameters");
    return CavityParam::disc({p[0], p[1]}, p[2]);
  }
  if (kind == CavityKind::Star) {
    if (p.size() < 3 || (p.size() - 3) % 2 != 0) fail(ErrorCode::ShapeMismatch, "star needs 3 + 2K parameters");
    std::vector<std::array<double, 2>> coeffs;
    for (std::size_t k = 3; k < p.size(); k += 2) coeffs.push_back({p[k], p[k + 1]});
    return CavityParam::star({p[0], p[1]}, p[2], std::move(coeffs));
  }
  fail(ErrorCode::InvalidParameter, "cannot parametrize an empty cavity");
}

inline std::vector<std::string> param_names(CavityKind kind, std::size_t count) {
  std::vector<std::string> n{"cx", "cy", kind == CavityKind::Star ? "r_mean" : "r"};
  for (std::size_t k = 1; 3 + 2 * k <= count; ++k) {
    n.push_back("a" + std::to_string(k));
    n.push_back("b" + std::to_string(k));
  }
  return n;
}

// Reconstruction ---------------------------------------------------------------

struct InverseConfig {
  CavityKind kind = CavityKind::Disc;
  std::vector<double> initial;  // start of the first restart
  Box bounds;                   // empty: derived from the domain and r_min
  NelderMeadOptions optimizer;
  int starts = 5;
  std::uint64_t seed = 0;
  int max_forward_solves = 200;  // total over all restarts and the no-cavity check
  double noise_sigma = 0.0;      // relative to the target's max |u|
  std::optional<double> r_min;   // default 4h
  bool check_no_cavity = true;   // one extra solve for the no-cavity comparison
};

struct HistoryEntry {
  int start = 0;
  int evaluation = 0;
  std::vector<double> params;
  double misfit = 0.0;
  double best_so_far = 0.0;
};

struct StartResult {
  std::vector<double> x0;
  std::vector<double> x;
  double misfit = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  int forward_solves = 0;
  int geometry_failures = 0;
  bool converged = false;
  std::string error;
};

struct ReconstructionResult {
  CavityParam cavity;
  std::vector<double> params;
  double misfit = std::numeric_limits<double>::infinity();
  int best_start = -1;
  int forward_solves = 0;
  std::vector<StartResult> starts;
  std::vector<HistoryEntry> history;  // all starts, ordered by (start, evaluation)
  std::optional<double> no_cavity_misfit;
  bool no_cavity_not_rejectable = false;
  Box bounds;
};

/// Default box: center anywhere in the domain, radius in [r_min, half the short side],
/// Fourier coefficients in [-r_max / 2, r_max / 2]. Admissibility does the rest.
inline Box default_bounds(const ForwardSetup& s, CavityKind kind, std::size_t count, double r_min) {
  const double r_max = 0.5 * std::min(s.domain.extents[0], s.domain.extents[1]);
  Box b;
  b.lower = {0.0, 0.0, r_min};
  b.upper = {s.domain.extents[0], s.domain.extents[1], r_max};
  if (kind == CavityKind::Star)
    for (std::size_t k = 3; k < count; ++k) {
      b.lower.push_back(-0.5 * r_max);
      b.upper.push_back(0.5 * r_max);
    }
  return b;
}

/// Target on the model's measurement sampling; finer or differently sampled
/// data are interpolated onto it.
inline BoundaryTrace align_target(const BoundaryTrace& target, const ForwardSetup& s) {
  const GridGeometry g = build_masked_grid(s.domain, CavityParam::none());
  if (g.sigma_faces.empty()) fail(ErrorCode::EmptySigma, "grid has no measurement faces");
  std::vector<double> arc;
  for (const auto& f : g.sigma_faces) arc.push_back(f.arc);
  std::vector<double> times;
  const int steps = s.solver.step_count();
  for (int n = 1; n <= steps; ++n) times.push_back(n * s.solver.dt);
  bool same = target.cols() == arc.size() && target.rows() == times.size() &&
              detail::close(target.meta.ds, g.h, 1e-12);
  for (std::size_t c = 0; same && c < arc.size(); ++c) same = detail::close(target.arc_coords[c], arc[c]);
  for (std::size_t r = 0; same && r < times.size(); ++r) same = detail::close(target.times[r], times[r]);
  if (same) return target;
  return resample_trace(target, arc, g.h, times);
}

namespace detail {

struct MaskKey {
  std::vector<CellState> mask;
  bool operator<(const MaskKey& o) const { return mask < o.mask; }
};

}  // namespace detail

/// Multistart Nelder-Mead on p -> misfit(trace(p), target). Candidates outside
/// the box or violating the geometric hypotheses score +inf. Forward solves are
/// cached per restart by the resulting cell mask.
inline ReconstructionResult reconstruct(const BoundaryTrace& target_in, const InverseConfig& cfg,
                                        const ForwardSetup& setup) {
  if (cfg.starts < 1) fail(ErrorCode::InvalidParameter, "starts >= 1 violated");
  if (cfg.max_forward_solves < 1) fail(ErrorCode::InvalidParameter, "max_forward_solves >= 1 violated");
  if (cfg.kind == CavityKind::None) fail(ErrorCode::InvalidParameter, "parametrization must be disc or star");
  const double h = setup.domain.cell_size();
  const double r_min = cfg.r_min.value_or(4.0 * h);

  BoundaryTrace target = align_target(target_in, setup);
  if (cfg.noise_sigma > 0.0) target = add_noise(target, cfg.noise_sigma * target.max_abs(), cfg.seed);

  std::vector<double> x_init = cfg.initial;
  if (x_init.empty()) {
    x_init = {0.5 * setup.domain.extents[0], 0.5 * setup.domain.extents[1], std::max(r_min, 0.15)};
    if (cfg.kind == CavityKind::Star) x_init.resize(3 + 4, 0.0);
  }
  Box box = cfg.bounds.lower.empty() ? default_bounds(setup, cfg.kind, x_init.size(), r_min) : cfg.bounds;
  if (box.lower.size() != x_init.size() || box.upper.size() != x_init.size())
    fail(ErrorCode::ShapeMismatch, "bounds do not match the parametrization");

  auto admissible = [&](const std::vector<double>& x) {
    if (!box.contains(x)) return false;
    try {
      prepare_geometry(setup, from_params(cfg.kind, x));
      return true;
    } catch (const Error&) {
      return false;
    }
  };

  // Start points: the configured initial guess, then seeded uniform draws from
  // the box, resampled until admissible.
  std::vector<std::vector<double>> x0s{x_init};
  std::mt19937_64 rng(cfg.seed);
  for (int k = 1; k < cfg.starts; ++k) {
    std::vector<double> x(x_init.size());
    for (int attempt = 0; attempt < 1000; ++attempt) {
      for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = std::uniform_real_distribution<double>(box.lower[i], box.upper[i])(rng);
      if (admissible(x)) break;
    }
    x0s.push_back(x);
  }

  const int reserved = cfg.check_no_cavity ? 1 : 0;
  const int solves_per_start = std::max(1, (cfg.max_forward_solves - reserved) / cfg.starts);
  std::vector<StartResult> results(x0s.size());
  std::vector<std::vector<Evaluation>> histories(x0s.size());

  parallel_for(static_cast<int>(x0s.size()), [&](int k) {
    StartResult& sr = results[k];
    sr.x0 = x0s[k];
    std::map<detail::MaskKey, double> cache;
    auto objective = [&](const std::vector<double>& x) {
      try {
        auto [grid, rep] = prepare_geometry(setup, from_params(cfg.kind, x));
        detail::MaskKey key{grid.cell_mask};
        if (const auto it = cache.find(key); it != cache.end()) return it->second;
        ++sr.forward_solves;
        const double v = misfit(run_forward(setup, from_params(cfg.kind, x)).trace, target);
        cache.emplace(std::move(key), v);
        return v;
      } catch (const Error& e) {
        switch (e.code()) {
          case ErrorCode::CavityTouchesBoundary:
          case ErrorCode::DegenerateCavity:
          case ErrorCode::InvalidParameter:
          case ErrorCode::EmptySigma: ++sr.geometry_failures; return std::numeric_limits<double>::infinity();
          default: throw;
        }
      }
    };
    try {
      auto nm = nelder_mead(objective, x0s[k], box, cfg.optimizer,
                            [&] { return sr.forward_solves >= solves_per_start; });
      sr.x = nm.x;
      sr.misfit = nm.value;
      sr.evaluations = nm.evaluations;
      sr.converged = nm.converged;
      histories[k] = std::move(nm.history);
    } catch (const Error& e) {
      sr.error = std::string(to_string(e.code())) + ": " + e.what();
    }
  });

  ReconstructionResult out;
  out.bounds = box;
  for (std::size_t k = 0; k < results.size(); ++k) {
    out.forward_solves += results[k].forward_solves;
    for (std::size_t e = 0; e < histories[k].size(); ++e)
      out.history.push_back({static_cast<int>(k), static_cast<int>(e), histories[k][e].x, histories[k][e].value,
                             histories[k][e].best_so_far});
    if (results[k].error.empty() && results[k].misfit < out.misfit) {
      out.misfit = results[k].misfit;
      out.best_start = static_cast<int>(k);
    }
  }
  out.starts = std::move(results);
  if (out.best_start < 0) fail(ErrorCode::AllStartsFailed, "every restart failed to produce an admissible cavity");
  out.params = out.starts[static_cast<std::size_t>(out.best_start)].x;
  out.cavity = from_params(cfg.kind, out.params);

  // The data cannot exclude "no cavity" when the best fit collapses onto the
  // smallest admissible radius or fits no worse than the cavity-free domain.
  const bool at_min_radius = out.params[2] <= box.lower[2] + 2.0 * h;
  if (cfg.check_no_cavity) {
    out.no_cavity_misfit = misfit(run_forward(setup, CavityParam::none()).trace, target);
    ++out.forward_solves;
  }
  out.no_cavity_not_rejectable = at_min_radius || (out.no_cavity_misfit && *out.no_cavity_misfit <= out.misfit);
  return out;
}

inline void write_history_csv(const ReconstructionResult& r, CavityKind kind, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::InvalidParameter, "cannot open " + path);
  const auto names = param_names(kind, r.params.size());
  out << "start,evaluation";
  for (const auto& n : names) out << ',' << n;
  out << ",misfit,best_so_far\n";
  auto num = [](double v) { return std::isfinite(v) ? detail::format_double(v) : std::string("inf"); };
  for (const auto& h : r.history) {
    out << h.start << ',' << h.evaluation;
    for (double p : h.params) out << ',' << detail::format_double(p);
    out << ',' << num(h.misfit) << ',' << num(h.best_so_far) << '\n';
  }
}

// Landscape ------------------------------------------------------------------

struct LandscapePoint {
  double value = 0.0;
  double misfit = std::numeric_limits<double>::infinity();
  std::string error;
};

/// Misfit along one parameter (index into the flat parameter vector) with the
/// others fixed at `base`.
inline std::vector<LandscapePoint> landscape_scan(const BoundaryTrace& target_in, const CavityParam& base,
                                                  std::size_t axis, double lo, double hi, int steps,
                                                  const ForwardSetup& setup) {
  if (steps < 2) fail(ErrorCode::InvalidParameter, "steps >= 2 violated");
  if (!(lo < hi)) fail(ErrorCode::InvalidParameter, "scan range must satisfy lo < hi");
  const auto p0 = to_params(base);
  if (axis >= p0.size()) fail(ErrorCode::InvalidParameter, "scan axis out of range");
  const BoundaryTrace target = align_target(target_in, setup);
  std::vector<LandscapePoint> pts(static_cast<std::size_t>(steps));
  parallel_for(steps, [&](int k) {
    auto p = p0;
    p[axis] = lo + (hi - lo) * k / (steps - 1);
    pts[k].value = p[axis];
    try {
      pts[k].misfit = misfit(forward_trace(setup, from_params(base.kind, p)), target);
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::CavityTouchesBoundary:
        case ErrorCode::DegenerateCavity:
        case ErrorCode::InvalidParameter: pts[k].error = e.what(); break;
        default: throw;
      }
    }
  });
  return pts;
}

inline void write_landscape_csv(const std::vector<LandscapePoint>& pts, const std::string& name,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::InvalidParameter, "cannot open " + path);
  out << name << ",misfit\n";
  for (const auto& p : pts)
    out << detail::format_double(p.value) << ','
        << (std::isfinite(p.misfit) ? detail::format_double(p.misfit) : std::string("inf")) << '\n';
}

}  // namespace monocav
