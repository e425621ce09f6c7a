#pragma once

// Scalar integro-differential form of the monodomain system after eliminating w:
//   u_t - div(K grad u) + f1(u) + k1(u) [ e^{-c1 t} w0 + int_0^t e^{-c1 (t-s)} g1(u(s)) ds ] = 0.
// The convolution is carried by an exact-exponential recursion, so memory per
// cell is O(1).

#include <cmath>
#include <span>

#include "monocav/forward.hpp"

namespace monocav {

struct MemoryState {
  CellValues u;
  CellValues memory;   // I(t) = int_0^t e^{-c1 (t-s)} g1(u(s)) ds
  CellValues w0_term;  // e^{-c1 t} w0
  double t = 0.0;

  /// w reconstructed from the memory form.
  CellValues w() const {
    CellValues out(memory.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = w0_term[i] + memory[i];
    return out;
  }
};

namespace detail {

inline MemoryState nonlocal_step(ImplicitDiffusion& diffusion, const MemoryState& s,
                                 const NonlocalDecomposition& dec, double dt, bool reaction) {
  const std::size_t n = s.u.size();
  const double decay = std::exp(-dec.c1 * dt);
  const double weight = dt * std::exp(-0.5 * dec.c1 * dt);
  MemoryState next;
  next.t = s.t + dt;
  next.memory.resize(n);
  next.w0_term.resize(n);
  CellValues rhs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = s.u[i];
    const double reaction_term = reaction ? dec.f1(u) + dec.k1(u) * (s.memory[i] + s.w0_term[i]) : 0.0;
    rhs[i] = u - dt * reaction_term;
    next.memory[i] = decay * s.memory[i] + (reaction ? weight * dec.g1(u) : 0.0);
    next.w0_term[i] = decay * s.w0_term[i];
  }
  next.u = s.u;
  diffusion.solve(rhs, next.u);
  return next;
}

}  // namespace detail

/// One step:
///   I_{n+1} = e^{-c1 dt} I_n + dt e^{-c1 dt/2} g1(u_n),
///   (I - dt D) u_{n+1} = u_n - dt [ f1(u_n) + k1(u_n) (I_n + e^{-c1 t_n} w0) ].
inline MemoryState step_nonlocal(const MemoryState& state, const SparseOperator& D,
                                 const NonlocalDecomposition& dec, double dt, const StepOptions& opt = {}) {
  if (!(dt > 0.0)) fail(ErrorCode::InvalidParameter, "dt > 0 violated");
  ImplicitDiffusion diffusion(D, dt, opt.cg_tol, opt.cg_max_iter);
  return detail::nonlocal_step(diffusion, state, dec, dt, opt.reaction);
}

/// Integrate the memory form over [0, T]; the trajectory reports w = e^{-c1 t} w0 + I
/// so its output matches the coupled solvers.
inline Trajectory solve_nonlocal(const GridGeometry& grid, const ConductivityField& K, const IonicModel& m,
                                 std::span<const double> u0, std::span<const double> w0,
                                 const SolverConfig& cfg) {
  cfg.validate();
  m.validate();
  detail::check_initial(grid, u0, w0);
  const NonlocalDecomposition dec = nonlocal_decomposition(m, cfg.rectangle);
  const SparseOperator D = assemble_diffusion(grid, K);
  ImplicitDiffusion diffusion(D, cfg.dt, cfg.cg_tol, cfg.cg_max_iter);

  detail::TrajectoryRecorder rec(grid, m, cfg, "nonlocal");
  MemoryState s{CellValues(u0.begin(), u0.end()), CellValues(u0.size(), 0.0), CellValues(w0.begin(), w0.end()),
                0.0};
  rec.record(0, StateFields{s.u, s.w(), 0.0});
  const int steps = cfg.step_count();
  for (int n = 0; n < steps; ++n) {
    s = detail::nonlocal_step(diffusion, s, dec, cfg.dt, cfg.reaction);
    s.t = (n + 1) * cfg.dt;
    rec.record(n + 1, StateFields{s.u, s.w(), s.t});
  }
  return std::move(rec).finish();
}

}  // namespace monocav
