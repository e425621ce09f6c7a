#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "monocav/forward.hpp"
#include "monocav/inverse.hpp"
#include "monocav/measurements.hpp"

using namespace monocav;

namespace {

DomainSpec unit(int n) {
  DomainSpec d;
  d.cells = {n, n};
  return d;
}

struct Setup {
  GridGeometry grid;
  ConductivityField K;
  CellValues u0, w0;
};

Setup make(int n, const CavityParam& cav, const FieldFn& u0, double k = 0.1) {
  GridGeometry g = build_masked_grid(unit(n), cav);
  ConductivityField K = ConductivityField::isotropic(g, k, 11.0);
  CellValues u = g.restrict_to_active(u0(g));
  CellValues w(u.size(), 0.0);
  return {std::move(g), std::move(K), std::move(u), std::move(w)};
}

double mass(const CellValues& u, double h) {
  double s = 0.0;
  for (double x : u) s += x * h * h;
  return s;
}

}  // namespace

TEST(Forward, ZeroStateIsEquilibrium) {
  const auto g = build_masked_grid(unit(16), CavityParam::none());
  const auto D = assemble_diffusion(g, ConductivityField::isotropic(g, 0.1, 11.0));
  for (const auto& m : {IonicModel::aliev_panfilov(), IonicModel::fitzhugh_nagumo(), IonicModel::rogers_mcculloch()}) {
    StateFields s{CellValues(g.active_count(), 0.0), CellValues(g.active_count(), 0.0), 0.0};
    for (int k = 0; k < 5; ++k) s = step_imex(s, D, m, 0.05);
    for (double v : s.u) EXPECT_EQ(v, 0.0);
    for (double v : s.w) EXPECT_EQ(v, 0.0);
    EXPECT_NEAR(s.t, 0.25, 1e-15);
  }
}

TEST(Forward, ConstantStaysConstantWithoutReaction) {
  const auto g = build_masked_grid(unit(24), CavityParam::disc({0.5, 0.5}, 0.2));
  const auto D = assemble_diffusion(g, ConductivityField::isotropic(g, 0.1, 11.0));
  StateFields s{CellValues(g.active_count(), 0.7), CellValues(g.active_count(), 0.0), 0.0};
  StepOptions opt;
  opt.reaction = false;
  opt.cg_tol = 1e-10;
  for (int k = 0; k < 10; ++k) s = step_imex(s, D, IonicModel::aliev_panfilov(), 0.1, opt);
  for (double v : s.u) EXPECT_NEAR(v, 0.7, 1e-9);
}

TEST(Forward, MassConservedWithoutReaction) {
  const auto g = build_masked_grid(unit(32), CavityParam::star({0.5, 0.5}, 0.2, {{0.03, 0.01}}));
  const auto K = ConductivityField::from_function(
      g, [](const Point& p) { return Tensor2::fiber(0.15, 0.05, p[0]); }, 25.0);
  const auto D = assemble_diffusion(g, K);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  StateFields s{CellValues(g.active_count()), CellValues(g.active_count(), 0.0), 0.0};
  for (auto& v : s.u) v = U(rng);
  StepOptions opt;
  opt.reaction = false;
  opt.cg_tol = 1e-11;
  for (int k = 0; k < 20; ++k) {
    const double before = mass(s.u, g.h);
    s = step_imex(s, D, IonicModel::aliev_panfilov(), 0.05, opt);
    EXPECT_LE(std::abs(mass(s.u, g.h) - before), 1e-10);
  }
}

TEST(Forward, ApCollarStaysInRectangle) {
  const auto c = make(64, CavityParam::none(), collar_bump(0.6, 0.05));
  SolverConfig cfg;
  cfg.dt = 0.05;
  cfg.T = 20.0;
  const auto t = solve_forward(c.grid, c.K, IonicModel::aliev_panfilov(), c.u0, c.w0, cfg);
  EXPECT_GE(t.min_u(), -1e-6);
  EXPECT_LE(t.max_u(), 1.15 + 1e-3);
  EXPECT_FALSE(t.rectangle_escape);
  EXPECT_TRUE(t.warnings.empty());
}

TEST(Forward, ZeroDataZeroTrace) {
  const auto c = make(32, CavityParam::disc({0.5, 0.5}, 0.2), constant_field(0.0));
  SolverConfig cfg;
  cfg.dt = 0.05;
  cfg.T = 2.0;
  const auto t = solve_forward(c.grid, c.K, IonicModel::rogers_mcculloch(), c.u0, c.w0, cfg);
  for (const auto& row : t.trace_buffer)
    for (double v : row) EXPECT_EQ(v, 0.0);
}

TEST(Forward, TraceCoversEveryStep) {
  const auto c = make(16, CavityParam::none(), collar_bump(0.6, 0.1));
  SolverConfig cfg;
  cfg.dt = 0.1;
  cfg.T = 3.0;
  cfg.snapshot_stride = 7;
  const auto t = solve_forward(c.grid, c.K, IonicModel::aliev_panfilov(), c.u0, c.w0, cfg);
  ASSERT_EQ(t.trace_buffer.size(), 30u);
  ASSERT_EQ(t.trace_times.size(), 30u);
  EXPECT_NEAR(t.trace_times.front(), 0.1, 1e-15);
  EXPECT_NEAR(t.trace_times.back(), 3.0, 1e-12);
  for (std::size_t k = 1; k < t.trace_times.size(); ++k) EXPECT_GT(t.trace_times[k], t.trace_times[k - 1]);
  for (const auto& row : t.trace_buffer) EXPECT_EQ(row.size(), c.grid.sigma_faces.size());
  // snapshots at 0, 7, 14, 21, 28 and the final step
  ASSERT_EQ(t.snapshots.size(), 6u);
  for (std::size_t k = 1; k < t.snapshots.size(); ++k) EXPECT_GT(t.snapshots[k].t, t.snapshots[k - 1].t);
  EXPECT_EQ(t.diagnostics.size(), 31u);
}

TEST(Forward, CavityChangesTrace) {
  auto run = [](const CavityParam& cav) {
    const auto c = make(64, cav, collar_bump(1.0, 0.05, kTop));
    SolverConfig cfg;
    cfg.dt = 0.05;
    cfg.T = 10.0;
    const auto t = solve_forward(c.grid, c.K, IonicModel::aliev_panfilov(), c.u0, c.w0, cfg);
    return extract_trace(t, c.grid);
  };
  const auto with = run(CavityParam::disc({0.5, 0.5}, 0.2));
  const auto without = run(CavityParam::none());
  EXPECT_GT(misfit(with, without), 1e-4);
}

TEST(Forward, Deterministic) {
  const auto c = make(32, CavityParam::disc({0.45, 0.5}, 0.2), collar_bump(1.0, 0.05));
  SolverConfig cfg;
  cfg.dt = 0.05;
  cfg.T = 2.0;
  cfg.snapshot_stride = 5;
  const auto a = solve_forward(c.grid, c.K, IonicModel::aliev_panfilov(), c.u0, c.w0, cfg);
  const auto b = solve_forward(c.grid, c.K, IonicModel::aliev_panfilov(), c.u0, c.w0, cfg);
  EXPECT_EQ(a.trace_buffer, b.trace_buffer);
  ASSERT_EQ(a.snapshots.size(), b.snapshots.size());
  for (std::size_t k = 0; k < a.snapshots.size(); ++k) {
    EXPECT_EQ(a.snapshots[k].u, b.snapshots[k].u);
    EXPECT_EQ(a.snapshots[k].w, b.snapshots[k].w);
  }
}

TEST(Forward, ManufacturedSolutionConverges) {
  const double k = 0.1, pi = std::numbers::pi;
  auto exact = [&](const Point& p, double t) { return std::cos(pi * p[0]) * std::cos(pi * p[1]) * std::exp(-t); };
  std::vector<double> err;
  for (int n : {16, 32}) {
    const auto g = build_masked_grid(unit(n), CavityParam::none());
    const auto K = ConductivityField::isotropic(g, k, 11.0);
    CellValues u0(g.active_count()), w0(g.active_count(), 0.0);
    for (int a = 0; a < g.active_count(); ++a) u0[a] = exact(g.cell_center(g.active_cells[a]), 0.0);
    SolverConfig cfg;
    cfg.dt = g.h * g.h;
    cfg.T = 0.5;
    cfg.reaction = false;
    cfg.cg_tol = 1e-12;
    cfg.source = [&](const Point& p, double t) { return (2 * pi * pi * k - 1.0) * exact(p, t); };
    const auto t = solve_forward(g, K, IonicModel::aliev_panfilov(), u0, w0, cfg);
    double s = 0.0;
    for (int a = 0; a < g.active_count(); ++a) {
      const double e = t.snapshots.back().u[a] - exact(g.cell_center(g.active_cells[a]), 0.5);
      s += e * e * g.h * g.h;
    }
    err.push_back(std::sqrt(s));
  }
  EXPECT_GE(std::log2(err[0] / err[1]), 1.8);
}

TEST(Forward, InitialOutsideRectangleWarns) {
  const auto c = make(16, CavityParam::none(), collar_bump(1.5, 0.1));
  SolverConfig cfg;
  cfg.dt = 0.1;
  cfg.T = 0.5;
  const auto t = solve_forward(c.grid, c.K, IonicModel::aliev_panfilov(), c.u0, c.w0, cfg);
  ASSERT_FALSE(t.warnings.empty());
  EXPECT_NE(t.warnings.front().find("initial data outside"), std::string::npos);
}

TEST(Forward, ConfigValidation) {
  SolverConfig cfg;
  cfg.dt = 1.0;
  cfg.T = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.dt = 0.3;
  EXPECT_THROW(cfg.validate(), Error);  // T not a multiple of dt
  cfg.dt = 0.25;
  EXPECT_NO_THROW(cfg.validate());
  cfg.cg_tol = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Forward, ShapeMismatch) {
  const auto c = make(16, CavityParam::none(), constant_field(0.0));
  SolverConfig cfg;
  cfg.dt = 0.1;
  cfg.T = 0.5;
  const CellValues short_u(3, 0.0);
  try {
    solve_forward(c.grid, c.K, IonicModel::aliev_panfilov(), short_u, c.w0, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Forward, FluxIncompatibility) {
  const auto g = build_masked_grid(unit(16), CavityParam::none());
  const auto K = ConductivityField::isotropic(g, 0.1, 11.0);
  EXPECT_EQ(boundary_flux_incompatibility(g, K, CellValues(g.active_count(), 0.4)), 0.0);
  const auto ramp = g.restrict_to_active(g.sample([](const Point& p) { return p[0]; }));
  EXPECT_NEAR(boundary_flux_incompatibility(g, K, ramp), 0.1, 1e-12);
}

TEST(Picard, ZeroDataOneIteration) {
  const auto c = make(16, CavityParam::none(), constant_field(0.0));
  SolverConfig cfg;
  cfg.scheme = Scheme::Picard;
  cfg.dt = 0.05;
  cfg.T = 1.0;
  const auto r = solve_picard(c.grid, c.K, IonicModel::fitzhugh_nagumo(), c.u0, c.w0, cfg);
  EXPECT_EQ(r.diagnostics.max_iterations(), 1);
  for (const auto& s : r.trajectory.snapshots)
    for (double v : s.u) EXPECT_EQ(v, 0.0);
}

TEST(Picard, ContractionRatio) {
  const auto m = IonicModel::fitzhugh_nagumo();
  const auto c = make(32, CavityParam::disc({0.5, 0.5}, 0.2), collar_bump(0.6, 0.05));
  const auto L = lipschitz_constants(m, invariant_rectangle(m));
  SolverConfig cfg;
  cfg.scheme = Scheme::Picard;
  cfg.dt = 0.01;
  cfg.T = 1.0;
  cfg.kappa = 4 * std::max(L.M1, L.M2);
  const auto r = solve_picard(c.grid, c.K, m, c.u0, c.w0, cfg);
  EXPECT_LE(r.diagnostics.max_ratio(), r.diagnostics.contraction_bound() + 0.05);
  EXPECT_LE(r.diagnostics.max_iterations(), 15);
  // unweighted updates shrink monotonically once past the first sweep
  const auto& up = r.diagnostics.windows.front().updates;
  for (std::size_t k = 2; k < up.size(); ++k) EXPECT_LT(up[k], up[k - 1]);
}

TEST(Picard, AgreesWithImex) {
  const auto m = IonicModel::aliev_panfilov();
  const auto c = make(32, CavityParam::disc({0.5, 0.5}, 0.2), collar_bump(1.0, 0.05));
  SolverConfig cfg;
  cfg.dt = 0.01;
  cfg.T = 2.0;
  cfg.cg_tol = 1e-10;
  cfg.picard_tol = 1e-9;
  const auto imex = solve_forward(c.grid, c.K, m, c.u0, c.w0, cfg);
  cfg.scheme = Scheme::Picard;
  const auto pic = solve_picard(c.grid, c.K, m, c.u0, c.w0, cfg).trajectory;
  ASSERT_EQ(imex.snapshots.size(), pic.snapshots.size());
  double worst = 0.0;
  for (std::size_t k = 0; k < imex.snapshots.size(); ++k)
    for (std::size_t i = 0; i < imex.snapshots[k].u.size(); ++i)
      worst = std::max(worst, std::abs(imex.snapshots[k].u[i] - pic.snapshots[k].u[i]));
  EXPECT_LE(worst, 5 * (cfg.dt + c.grid.h * c.grid.h));
  EXPECT_EQ(pic.trace_buffer.size(), imex.trace_buffer.size());
}

TEST(Picard, KappaMustExceedLipschitz) {
  const auto c = make(16, CavityParam::none(), constant_field(0.0));
  SolverConfig cfg;
  cfg.scheme = Scheme::Picard;
  cfg.dt = 0.05;
  cfg.T = 1.0;
  cfg.kappa = 1.0;
  EXPECT_THROW(solve_picard(c.grid, c.K, IonicModel::fitzhugh_nagumo(), c.u0, c.w0, cfg), Error);
}

TEST(Picard, StallReported) {
  const auto c = make(16, CavityParam::none(), collar_bump(0.6, 0.1));
  SolverConfig cfg;
  cfg.scheme = Scheme::Picard;
  cfg.dt = 0.05;
  cfg.T = 1.0;
  cfg.picard_max_iter = 2;
  try {
    solve_picard(c.grid, c.K, IonicModel::fitzhugh_nagumo(), c.u0, c.w0, cfg);
    FAIL() << "expected PicardStalled";
  } catch (const PicardStalledError& e) {
    EXPECT_EQ(e.code(), ErrorCode::PicardStalled);
    EXPECT_TRUE(std::isfinite(e.final_ratio()));
  }
}

TEST(Picard, WindowsSplitTheInterval) {
  const auto c = make(16, CavityParam::none(), collar_bump(0.6, 0.1));
  SolverConfig cfg;
  cfg.scheme = Scheme::Picard;
  cfg.dt = 0.05;
  cfg.T = 2.5;
  cfg.picard_window = 1.0;
  const auto r = solve_picard(c.grid, c.K, IonicModel::fitzhugh_nagumo(), c.u0, c.w0, cfg);
  ASSERT_EQ(r.diagnostics.windows.size(), 3u);
  EXPECT_NEAR(r.diagnostics.windows.back().t1, 2.5, 1e-12);
  EXPECT_EQ(r.trajectory.trace_buffer.size(), 50u);
}

TEST(Output, DiagnosticsCsvAndVtk) {
  const auto c = make(16, CavityParam::disc({0.5, 0.5}, 0.2), collar_bump(0.6, 0.1));
  SolverConfig cfg;
  cfg.dt = 0.1;
  cfg.T = 0.5;
  const auto t = solve_forward(c.grid, c.K, IonicModel::aliev_panfilov(), c.u0, c.w0, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "monocav_test_output";
  std::filesystem::create_directories(dir);
  const auto csv = (dir / "diag.csv").string();
  write_diagnostics_csv(t, csv);
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,t,min_u,max_u,min_w,max_w,picard_iters,picard_ratio");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 6);

  const auto vtk = (dir / "u.vtk").string();
  write_vtk_scalar(c.grid, t.snapshots.back().u, "u", vtk);
  std::ifstream v(vtk);
  int nan = 0, values = 0;
  bool data = false;
  while (std::getline(v, line)) {
    if (data) {
      ++values;
      nan += line == "nan";
    }
    if (line == "LOOKUP_TABLE default") data = true;
  }
  EXPECT_EQ(values, c.grid.cell_count());
  EXPECT_EQ(nan, c.grid.cell_count() - c.grid.active_count());
  std::filesystem::remove_all(dir);
}
