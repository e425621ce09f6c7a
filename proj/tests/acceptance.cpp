// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "monocav/monocav.hpp"

using namespace monocav;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kRectSlackFactor = 10.0;       // delta_S = 10 (dt + h^2)
constexpr int kFaceSamples = 200;
constexpr double kPicardRatioMargin = 0.05;
constexpr int kPicardMaxIterations = 15;
constexpr double kPicardTol = 1e-8;
constexpr double kEquivalenceC = 5.0;
constexpr double kHalvingLo = 1.8, kHalvingHi = 2.2;
constexpr double kZeroDataBound = 1e-7;          // 10 cg_tol with cg_tol = 1e-8
constexpr double kMassTol = 1e-10;
constexpr double kSpatialOrder = 1.8;
constexpr double kFloorFactor = 100.0;
constexpr int kMaxForwardSolves = 200;
constexpr double kMaxReconstructionSeconds = 300.0;

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << id << " " << name << ": " << detail << std::endl;
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(4);
  s << x;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Case {
  GridGeometry grid;
  ConductivityField K;
  CellValues u0, w0;
};

Case make_case(int n, const CavityParam& cavity, const FieldFn& u0, double k = 0.1, double lambda = 11.0) {
  DomainSpec d;
  d.cells = {n, n};
  GridGeometry g = build_masked_grid(d, cavity);
  ConductivityField K = ConductivityField::isotropic(g, k, lambda);
  CellValues u = g.restrict_to_active(u0(g));
  CellValues w(u.size(), 0.0);
  return {std::move(g), std::move(K), std::move(u), std::move(w)};
}

Trajectory run(const Case& c, const IonicModel& m, const SolverConfig& cfg) {
  switch (cfg.scheme) {
    case Scheme::Picard: return solve_picard(c.grid, c.K, m, c.u0, c.w0, cfg).trajectory;
    case Scheme::Nonlocal: return solve_nonlocal(c.grid, c.K, m, c.u0, c.w0, cfg);
    default: return solve_forward(c.grid, c.K, m, c.u0, c.w0, cfg);
  }
}

const std::vector<std::pair<std::string, IonicModel>>& models() {
  static const std::vector<std::pair<std::string, IonicModel>> all = {
      {"AP", IonicModel::aliev_panfilov(8.0, 0.15, 0.01)},
      {"RMC", IonicModel::rogers_mcculloch(8.0, 0.15, 0.01, 0.5)},
      {"FHN", IonicModel::fitzhugh_nagumo(1.0, 0.5, 0.01, 1.0)},
  };
  return all;
}

void criterion1() {
  const auto cavity = CavityParam::disc({0.5, 0.5}, 0.2);
  const Case c = make_case(64, cavity, collar_bump(1.0, 0.05));
  bool ok = true;
  std::string detail;
  for (const auto& [name, m] : models()) {
    SolverConfig cfg;
    cfg.dt = 0.05;
    cfg.T = 20.0;
    const Trajectory t = run(c, m, cfg);
    const Rectangle& S = t.rectangle;
    const double delta = kRectSlackFactor * (cfg.dt + c.grid.h * c.grid.h);
    const bool inside = t.min_u() >= S.u_lo - delta && t.max_u() <= S.u_hi + delta && t.min_w() >= S.w_lo - delta &&
                        t.max_w() <= S.w_hi + delta;
    ok = ok && inside;
    detail += name + " u[" + fmt(t.min_u()) + "," + fmt(t.max_u()) + "] w[" + fmt(t.min_w()) + "," + fmt(t.max_w()) +
              "] in S=[" + fmt(S.u_lo) + "," + fmt(S.u_hi) + "]x[" + fmt(S.w_lo) + "," + fmt(S.w_hi) + "]+" +
              fmt(delta) + (inside ? "; " : " ESCAPED; ");
  }
  report(1, "invariant rectangle", ok, detail);
}

void criterion2() {
  bool ok = true;
  std::string detail;
  for (const auto& [name, m] : models()) {
    const auto rep = check_face_conditions(m, invariant_rectangle(m), kFaceSamples);
    ok = ok && rep.holds;
    detail += name + " violations=" + std::to_string(rep.violations) + "; ";
  }
  report(2, "face conditions", ok, detail);
}

void criterion3() {
  const IonicModel m = IonicModel::fitzhugh_nagumo(1.0, 0.5, 0.01, 1.0);
  const Case c = make_case(32, CavityParam::disc({0.5, 0.5}, 0.2), collar_bump(0.6, 0.05));
  const auto L = lipschitz_constants(m, invariant_rectangle(m));
  SolverConfig cfg;
  cfg.scheme = Scheme::Picard;
  cfg.dt = 0.01;
  cfg.T = 1.0;
  cfg.picard_window = 1.0;
  cfg.picard_tol = kPicardTol;
  cfg.picard_max_iter = kPicardMaxIterations;
  cfg.kappa = 4.0 * std::max(L.M1, L.M2);
  try {
    const auto res = solve_picard(c.grid, c.K, m, c.u0, c.w0, cfg);
    const auto& d = res.diagnostics;
    const double bound = d.contraction_bound() + kPicardRatioMargin;
    const bool ok = d.max_ratio() <= bound && d.max_iterations() <= kPicardMaxIterations && d.windows.front().converged;
    report(3, "Picard contraction", ok,
           "max ratio " + fmt(d.max_ratio()) + " <= " + fmt(bound) + ", iterations " +
               std::to_string(d.max_iterations()) + " <= " + std::to_string(kPicardMaxIterations));
  } catch (const Error& e) {
    report(3, "Picard contraction", false, e.what());
  }
}

double sup_difference(const Trajectory& a, const Trajectory& b) {
  double worst = 0.0;
  for (std::size_t s = 0; s < a.snapshots.size(); ++s)
    for (std::size_t i = 0; i < a.snapshots[s].u.size(); ++i)
      worst = std::max(worst, std::abs(a.snapshots[s].u[i] - b.snapshots[s].u[i]));
  return worst;
}

void criterion4() {
  const Case c = make_case(32, CavityParam::disc({0.5, 0.5}, 0.2), collar_bump(1.0, 0.05, kTop));
  const std::vector<double> dts = {0.02, 0.01, 0.005};
  bool ok = true;
  std::string detail;
  for (const auto& [name, m] : models()) {
    std::vector<double> err;
    for (double dt : dts) {
      SolverConfig cfg;
      cfg.dt = dt;
      cfg.T = 2.0;
      cfg.cg_tol = 1e-12;
      cfg.snapshot_stride = 1;
      const Trajectory imex = run(c, m, cfg);
      cfg.scheme = Scheme::Nonlocal;
      const Trajectory nl = run(c, m, cfg);
      err.push_back(sup_difference(nl, imex));
    }
    detail += name + " C=";
    for (std::size_t k = 0; k < dts.size(); ++k) {
      const double C = err[k] / dts[k];
      ok = ok && C <= kEquivalenceC;
      detail += fmt(C) + (k + 1 < dts.size() ? "/" : "");
    }
    detail += " ratios=";
    for (std::size_t k = 0; k + 1 < dts.size(); ++k) {
      const double r = err[k] / err[k + 1];
      ok = ok && r >= kHalvingLo && r <= kHalvingHi;
      detail += fmt(r) + (k + 2 < dts.size() ? "/" : "; ");
    }
  }
  report(4, "nonlocal/IMEX equivalence", ok, detail);
}

void criterion5() {
  const std::vector<CavityParam> cavities = {CavityParam::none(), CavityParam::disc({0.5, 0.5}, 0.2),
                                             CavityParam::star({0.5, 0.5}, 0.18, {{0.02, 0.0}, {0.0, 0.01}})};
  double worst = 0.0;
  for (const auto& cav : cavities) {
    const Case c = make_case(32, cav, constant_field(0.0));
    for (const auto& [name, m] : models()) {
      SolverConfig cfg;
      cfg.scheme = Scheme::Nonlocal;
      cfg.dt = 0.02;
      cfg.T = 2.0;
      cfg.cg_tol = 1e-8;
      cfg.snapshot_stride = 1;
      const Trajectory t = run(c, m, cfg);
      for (const auto& s : t.snapshots)
        for (double u : s.u) worst = std::max(worst, std::abs(u));
    }
  }
  report(5, "zero data vanishes", worst <= kZeroDataBound,
         "max |u| = " + fmt(worst) + " <= " + fmt(kZeroDataBound) + " over 3 models x 3 cavities");
}

void criterion6() {
  // mass with reaction off, one step at a time
  const Case c = make_case(64, CavityParam::disc({0.5, 0.5}, 0.2), collar_bump(0.6, 0.05));
  SolverConfig cfg;
  cfg.dt = 0.05;
  cfg.T = 5.0;
  cfg.reaction = false;
  cfg.cg_tol = 1e-11;
  cfg.snapshot_stride = 1;
  const Trajectory t = run(c, IonicModel::aliev_panfilov(), cfg);
  const double cell_area = c.grid.h * c.grid.h;
  double worst_mass = 0.0;
  for (std::size_t s = 1; s < t.snapshots.size(); ++s) {
    double a = 0.0, b = 0.0;
    for (double u : t.snapshots[s - 1].u) a += u * cell_area;
    for (double u : t.snapshots[s].u) b += u * cell_area;
    worst_mass = std::max(worst_mass, std::abs(b - a));
  }

  // manufactured solution u* = cos(pi x) cos(pi y) e^{-t}, K = k I
  const double k = 0.1;
  const double pi = std::numbers::pi;
  auto exact = [&](const Point& p, double time) { return std::cos(pi * p[0]) * std::cos(pi * p[1]) * std::exp(-time); };
  std::vector<double> errors;
  for (int n : {32, 64, 128}) {
    DomainSpec d;
    d.cells = {n, n};
    const GridGeometry g = build_masked_grid(d, CavityParam::none());
    const ConductivityField K = ConductivityField::isotropic(g, k, 11.0);
    CellValues u0(g.active_cells.size()), w0(u0.size(), 0.0);
    for (std::size_t a = 0; a < u0.size(); ++a) u0[a] = exact(g.cell_center(g.active_cells[a]), 0.0);
    SolverConfig mc;
    mc.dt = g.h * g.h;
    mc.T = 0.5;
    mc.reaction = false;
    mc.cg_tol = 1e-12;
    mc.source = [&](const Point& p, double time) { return (2.0 * pi * pi * k - 1.0) * exact(p, time); };
    const Trajectory tr = solve_forward(g, K, IonicModel::aliev_panfilov(), u0, w0, mc);
    double sum = 0.0;
    const auto& last = tr.snapshots.back();
    for (std::size_t a = 0; a < last.u.size(); ++a) {
      const double e = last.u[a] - exact(g.cell_center(g.active_cells[a]), mc.T);
      sum += e * e * g.h * g.h;
    }
    errors.push_back(std::sqrt(sum));
  }
  const double p1 = std::log2(errors[0] / errors[1]);
  const double p2 = std::log2(errors[1] / errors[2]);
  const bool ok = worst_mass <= kMassTol && p1 >= kSpatialOrder && p2 >= kSpatialOrder;
  report(6, "conservation and convergence", ok,
         "max mass change " + fmt(worst_mass) + " <= " + fmt(kMassTol) + "; L2 errors " + fmt(errors[0]) + "/" +
             fmt(errors[1]) + "/" + fmt(errors[2]) + ", orders " + fmt(p1) + "/" + fmt(p2) + " >= " +
             fmt(kSpatialOrder));
}

void criterion7() {
  ForwardSetup s;
  s.domain.cells = {64, 64};
  s.domain.s0 = 0.0;
  s.domain.s1 = 0.25;
  s.model = IonicModel::aliev_panfilov(8.0, 0.15, 0.01);
  const double k = 0.03;
  s.conductivity = [k](const Point&) { return Tensor2::isotropic(k); };
  s.lambda = 1.0 / k + 1.0;
  s.u0 = collar_bump(1.0, 0.05, kTop);
  s.d0 = 0.1;
  s.solver.dt = 0.001;
  s.solver.T = 20.0;
  s.solver.cg_tol = 1e-12;

  const std::vector<CavityParam> cavities = {
      CavityParam::disc({0.4, 0.5}, 0.15), CavityParam::disc({0.6, 0.5}, 0.15),
      CavityParam::disc({0.4, 0.5}, 0.25), CavityParam::disc({0.6, 0.5}, 0.25),
      CavityParam::disc({0.4, 0.5}, 0.15),  // duplicate of row 0
  };
  try {
    const auto mat = distinguishability(cavities, s);
    double floor = 0.0;
    for (int i = 0; i < 4; ++i) floor = std::max(floor, dt_refinement_floor(s, cavities[i]));
    double min_off = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        if (i != j) min_off = std::min(min_off, mat.misfits[i][j]);
    const bool dup_zero = mat.misfits[0][4] == 0.0 && mat.misfits[4][0] == 0.0;
    const double ratio = min_off / floor;
    report(7, "distinguishability", ratio >= kFloorFactor && dup_zero,
           "min off-diagonal " + fmt(min_off) + ", noise floor " + fmt(floor) + ", ratio " + fmt(ratio) +
               " >= " + fmt(kFloorFactor) + "; duplicate misfit " + fmt(mat.misfits[0][4]));
  } catch (const Error& e) {
    report(7, "distinguishability", false, e.what());
  }
}

void criterion8() {
  ForwardSetup s;
  s.domain.cells = {64, 64};
  s.model = IonicModel::aliev_panfilov(8.0, 0.15, 0.01);
  s.conductivity = [](const Point&) { return Tensor2::isotropic(0.1); };
  s.lambda = 11.0;
  s.u0 = collar_bump(1.0, 0.05, kTop);
  s.d0 = 0.1;
  s.solver.dt = 0.01;
  s.solver.T = 5.0;
  const double h = s.domain.cell_size();
  const CavityParam truth = CavityParam::disc({0.45, 0.55}, 0.2);

  InverseConfig cfg;
  cfg.kind = CavityKind::Disc;
  cfg.initial = {0.5, 0.5, 0.15};
  cfg.starts = 4;
  cfg.seed = 7;
  cfg.max_forward_solves = kMaxForwardSolves;
  cfg.optimizer.initial_step = {0.05, 0.05, 0.05};
  cfg.optimizer.xtol = 0.25 * h;
  cfg.optimizer.ftol = 1e-300;
  cfg.optimizer.max_evals = 400;

  ForwardSetup fine = s;
  fine.domain.cells = {128, 128};
  BoundaryTrace same, finer;
  try {
    same = forward_trace(s, truth);
    finer = forward_trace(fine, truth);
  } catch (const Error& e) {
    report(8, "reconstruction", false, std::string("target generation failed: ") + e.what());
    return;
  }

  struct Run {
    std::string label;
    const BoundaryTrace* target;
    double noise;
    double center_tol, radius_tol;
    bool check_center;
  };
  const std::vector<Run> runs = {{"same grid (inverse crime)", &same, 0.0, 2 * h, 2 * h, true},
                                 {"2x finer data grid", &finer, 0.0, 4 * h, 4 * h, true},
                                 {"1% noise", &same, 0.01, 4 * h, 4 * h, false}};
  bool ok = true;
  std::string detail;
  for (const auto& r : runs) {
    InverseConfig c = cfg;
    c.noise_sigma = r.noise;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const auto res = reconstruct(*r.target, c, s);
      const double secs = seconds_since(t0);
      const double dc = std::hypot(res.cavity.center[0] - truth.center[0], res.cavity.center[1] - truth.center[1]);
      const double dr = std::abs(res.cavity.radius - truth.radius);
      const bool pass = (!r.check_center || dc <= r.center_tol) && dr <= r.radius_tol &&
                        res.forward_solves <= kMaxForwardSolves && secs <= kMaxReconstructionSeconds &&
                        !res.no_cavity_not_rejectable;
      ok = ok && pass;
      detail += r.label + ": (" + fmt(res.cavity.center[0]) + "," + fmt(res.cavity.center[1]) + ") r=" +
                fmt(res.cavity.radius) + " center err " + fmt(dc / h) + "h radius err " + fmt(dr / h) + "h, " +
                std::to_string(res.forward_solves) + " solves, " + fmt(secs) + " s" + (pass ? "; " : " [out]; ");
    } catch (const Error& e) {
      ok = false;
      detail += r.label + ": " + e.what() + "; ";
    }
  }
  report(8, "reconstruction", ok, detail + "workers " + std::to_string(worker_count(4)));
}

// Criterion 9 drives the CLI twice per command and compares outputs bytewise.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  std::size_t count_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) ++count_b;
  if (files.empty() || files.size() != count_b) {
    why = "file sets differ under " + a.string();
    return false;
  }
  for (const auto& f : files)
    if (!fs::exists(b / f) || slurp(a / f) != slurp(b / f)) {
      why = f.string() + " differs";
      return false;
    }
  return true;
}

int shell(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void criterion9() {
  const fs::path root = fs::temp_directory_path() / "monocav_acceptance_det";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string cli = MONOCAV_CLI;
  const std::string cfg = MONOCAV_CONFIG_DIR;
  struct Cmd {
    std::string name, args, env_b;
  };
  const std::vector<Cmd> cmds = {
      {"forward-imex", "forward --config " + cfg + "/small_disc.json --noise 0.01 --seed 3", ""},
      {"forward-picard", "forward --config " + cfg + "/fhn_picard.json", ""},
      {"forward-nonlocal", "forward --config " + cfg + "/rmc_nonlocal.json", ""},
      {"verify-bounds", "verify-bounds --config " + cfg + "/small_disc.json", ""},
      {"distinguish", "distinguish --config " + cfg + "/small_disc.json", "MONOCAV_THREADS=1 "},
      {"invert", "invert --config " + cfg + "/small_disc.json --noise 0.01 --seed 11", "MONOCAV_THREADS=1 "},
      {"landscape", "landscape --config " + cfg + "/small_disc.json", ""},
  };
  bool ok = true;
  std::string detail;
  for (const auto& c : cmds) {
    // both runs write to the same path so that echoed paths match
    const fs::path out = root / c.name, a = root / (c.name + "_first");
    auto invoke = [&](const std::string& env) {
      fs::remove_all(out);
      fs::create_directories(out);
      const fs::path log = root / (c.name + ".stdout");
      const int rc = shell(env + cli + " " + c.args + " --out " + out.string() + " > " + log.string() + " 2>&1");
      fs::rename(log, out / "stdout.txt");
      return rc;
    };
    const int ra = invoke("MONOCAV_THREADS=3 ");
    fs::rename(out, a);
    const int rb = invoke(c.env_b);
    std::string why;
    const bool same = ra == 0 && rb == 0 && same_tree(a, out, why);
    if (!same) {
      ok = false;
      detail += c.name + " (rc " + std::to_string(ra) + "/" + std::to_string(rb) + (why.empty() ? "" : ", " + why) +
                "); ";
    }
  }
  fs::remove_all(root);
  report(9, "determinism", ok, ok ? std::to_string(cmds.size()) + " commands reproduced bitwise" : detail);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  auto want = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  const auto t0 = std::chrono::steady_clock::now();
  void (*const fns[])() = {criterion1, criterion2, criterion3, criterion4, criterion5,
                           criterion6, criterion7, criterion8, criterion9};
  for (int id = 1; id <= 9; ++id) {
    if (!want(id)) continue;
    const auto t = std::chrono::steady_clock::now();
    try {
      fns[id - 1]();
    } catch (const std::exception& e) {
      report(id, "unexpected exception", false, e.what());
    }
    std::cerr << "  (criterion " << id << " took " << fmt(seconds_since(t)) << " s)\n";
  }
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << " in "
            << fmt(seconds_since(t0)) << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}
