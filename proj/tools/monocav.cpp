// monocav: forward runs, bound checks, distinguishability and cavity inversion.
//
// Exit codes: 0 ok, 1 check failed, 2 config or input error, 3 solver error,
// 4 initial data outside the invariant rectangle.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "monocav/monocav.hpp"

#ifndef MONOCAV_VERSION
#define MONOCAV_VERSION "0.1.0"
#endif

namespace fs = std::filesystem;
using namespace monocav;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kConfigError = 2, kSolverError = 3, kHypothesisUnmet = 4 };

struct CommonArgs {
  std::string config;
  std::string out;
  std::string scheme;
  std::optional<std::uint64_t> seed;
  std::optional<double> noise;
};

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::LinearSolveDiverged:
    case ErrorCode::PicardStalled:
    case ErrorCode::AllStartsFailed: return kSolverError;
    default: return kConfigError;
  }
}

RunConfig load(const CommonArgs& a) {
  RunConfig c = load_config(a.config);
  if (!a.scheme.empty()) {
    const auto s = parse_scheme(a.scheme);
    if (!s) fail(ErrorCode::InvalidConfig, "--scheme must be imex, picard or nonlocal");
    c.solver.scheme = *s;
  }
  if (a.seed) c.inverse.seed = *a.seed;
  if (a.noise) {
    if (!(*a.noise >= 0.0)) fail(ErrorCode::InvalidConfig, "--noise must be nonnegative");
    c.inverse.noise_sigma = *a.noise;
  }
  if (!a.out.empty()) c.output = a.out;
  return c;
}

fs::path prepare_out(const RunConfig& c) {
  fs::path dir(c.output);
  fs::create_directories(dir);
  return dir;
}

Json provenance(const RunConfig& c, const std::string& command) {
  return {{"version", MONOCAV_VERSION}, {"command", command}, {"config", to_json(c)}};
}

void write_json(const Json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::InvalidParameter, "cannot open " + path.string());
  out << j.dump(2) << '\n';
}

Json rectangle_json(const Rectangle& r) { return {{"u", {r.u_lo, r.u_hi}}, {"w", {r.w_lo, r.w_hi}}}; }

Json assumptions_json(const AssumptionReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return {{"d0", r.d0},
          {"cavity_wall_distance", num(r.cavity_wall_distance)},
          {"distance_ok", r.distance_ok},
          {"support_max_wall_distance", r.support_max_wall_distance},
          {"support_in_collar", r.support_in_collar},
          {"support_min_wall_distance", r.support_min_wall_distance},
          {"support_inf_distance_ok", r.support_inf_distance_ok},
          {"support_avoids_cavity", r.support_avoids_cavity}};
}

struct ForwardOutcome {
  GridGeometry grid;
  AssumptionReport assumptions;
  Trajectory traj;
  std::optional<PicardDiagnostics> picard;
  CellValues u0, w0;
};

ForwardOutcome run_configured(const RunConfig& c) {
  const ForwardSetup s = c.setup();
  c.cavity.validate();
  ForwardOutcome o{build_masked_grid(c.domain, c.cavity), {}, {}, std::nullopt, {}, {}};
  const CellValues u0_full = s.u0(o.grid);
  o.assumptions = check_assumptions(o.grid, c.cavity, u0_full, c.d0);
  const auto K = ConductivityField::from_function(o.grid, s.conductivity, s.lambda);
  o.u0 = o.grid.restrict_to_active(u0_full);
  o.w0 = o.grid.restrict_to_active(s.w0(o.grid));
  if (c.solver.scheme == Scheme::Picard) {
    auto r = solve_picard(o.grid, K, c.model, o.u0, o.w0, c.solver);
    o.traj = std::move(r.trajectory);
    o.picard = std::move(r.diagnostics);
  } else if (c.solver.scheme == Scheme::Nonlocal) {
    o.traj = solve_nonlocal(o.grid, K, c.model, o.u0, o.w0, c.solver);
  } else {
    o.traj = solve_forward(o.grid, K, c.model, o.u0, o.w0, c.solver);
  }
  return o;
}

Json trajectory_summary(const ForwardOutcome& o) {
  Json j = {{"scheme", o.traj.scheme},
            {"steps", o.traj.step_count()},
            {"active_cells", o.grid.active_count()},
            {"dropped_cells", o.grid.dropped_cells},
            {"sigma_faces", o.grid.sigma_faces.size()},
            {"min_u", o.traj.min_u()},
            {"max_u", o.traj.max_u()},
            {"min_w", o.traj.min_w()},
            {"max_w", o.traj.max_w()},
            {"rectangle", rectangle_json(o.traj.rectangle)},
            {"rectangle_slack", o.traj.rectangle_slack},
            {"rectangle_escape", o.traj.rectangle_escape},
            {"warnings", o.traj.warnings},
            {"assumptions", assumptions_json(o.assumptions)}};
  if (o.picard) {
    const auto& p = *o.picard;
    j["picard"] = {{"kappa", p.kappa},
                   {"M1", p.lipschitz.M1},
                   {"M2", p.lipschitz.M2},
                   {"contraction_bound", p.contraction_bound()},
                   {"max_ratio", std::isfinite(p.max_ratio()) ? Json(p.max_ratio()) : Json(nullptr)},
                   {"max_iterations", p.max_iterations()},
                   {"windows", p.windows.size()}};
  }
  return j;
}

int cmd_forward(const CommonArgs& a) {
  const RunConfig c = load(a);
  const fs::path dir = prepare_out(c);
  ForwardOutcome o = run_configured(c);
  BoundaryTrace trace = extract_trace(o.traj, o.grid);
  if (c.inverse.noise_sigma > 0.0) trace = add_noise(trace, c.inverse.noise_sigma * trace.max_abs(), c.inverse.seed);
  write_trace(trace, (dir / "trace.csv").string());
  write_diagnostics_csv(o.traj, (dir / "diagnostics.csv").string());
  write_mask_pgm(o.grid, (dir / "mask.pgm").string());
  for (std::size_t k = 0; k < o.traj.snapshots.size(); ++k) {
    const auto& snap = o.traj.snapshots[k];
    const int step = static_cast<int>(std::llround(snap.t / c.solver.dt));
    char name[64];
    std::snprintf(name, sizeof(name), "state_%06d.vtk", step);
    write_vtk_scalar(o.grid, snap.u, "u", (dir / name).string());
    std::snprintf(name, sizeof(name), "gating_%06d.vtk", step);
    write_vtk_scalar(o.grid, snap.w, "w", (dir / name).string());
  }
  Json result = provenance(c, "forward");
  result["summary"] = trajectory_summary(o);
  write_json(result, dir / "result.json");
  for (const auto& w : o.traj.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "forward: " << o.traj.step_count() << " steps, trace " << trace.rows() << " x " << trace.cols()
            << " -> " << (dir / "trace.csv").string() << '\n';
  return kOk;
}

int cmd_verify_bounds(const CommonArgs& a) {
  const RunConfig c = load(a);
  const fs::path dir = prepare_out(c);
  ForwardOutcome o = run_configured(c);
  const Rectangle& S = o.traj.rectangle;
  const auto& d0 = o.traj.diagnostics.front();
  const bool initial_inside = S.contains(d0.min_u, d0.min_w) && S.contains(d0.max_u, d0.max_w);
  Json result = provenance(c, "verify-bounds");
  result["summary"] = trajectory_summary(o);
  result["initial_inside"] = initial_inside;
  std::printf("S = [%.6g, %.6g] x [%.6g, %.6g], slack %.3g\n", S.u_lo, S.u_hi, S.w_lo, S.w_hi,
              o.traj.rectangle_slack);
  std::printf("observed u in [%.6g, %.6g], w in [%.6g, %.6g]\n", o.traj.min_u(), o.traj.max_u(), o.traj.min_w(),
              o.traj.max_w());
  if (!initial_inside) {
    result["verdict"] = "hypotheses unmet";
    write_json(result, dir / "result.json");
    std::printf("initial data outside S: theorem hypotheses unmet\n");
    return kHypothesisUnmet;
  }
  const bool held = !o.traj.rectangle_escape;
  result["verdict"] = held ? "contained" : "escaped";
  write_json(result, dir / "result.json");
  std::printf("%s\n", held ? "containment holds" : "containment FAILED");
  return held ? kOk : kCheckFailed;
}

std::vector<CavityParam> load_cavities(const std::string& path, const RunConfig& c) {
  if (path.empty()) {
    if (c.cavities.size() < 2) fail(ErrorCode::InvalidConfig, "need --cavities or at least two 'cavities' in the config");
    return c.cavities;
  }
  std::ifstream in(path);
  if (!in) fail(ErrorCode::InvalidConfig, "cannot open cavity list " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::InvalidConfig, path + ": " + e.what());
  }
  if (j.is_object()) {
    detail::allow_keys(j, "cavity list", {"cavities"});
    j = j.value("cavities", Json::array());
  }
  if (!j.is_array()) fail(ErrorCode::InvalidConfig, path + ": expected an array of cavities");
  std::vector<CavityParam> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(detail::parse_cavity(j[i], "cavities[" + std::to_string(i) + "]"));
  return out;
}

int cmd_distinguish(const CommonArgs& a, const std::string& cavities_path) {
  RunConfig c = load(a);
  c.cavities = load_cavities(cavities_path, c);
  const fs::path dir = prepare_out(c);
  const auto m = distinguishability(c.cavities, c.setup());
  write_matrix_csv(m, (dir / "matrix.csv").string());
  Json result = provenance(c, "distinguish");
  Json rows = Json::array();
  for (std::size_t i = 0; i < m.misfits.size(); ++i) {
    Json row = Json::array();
    for (double v : m.misfits[i]) row.push_back(std::isnan(v) ? Json(nullptr) : Json(v));
    rows.push_back(row);
  }
  result["misfits"] = rows;
  result["errors"] = m.errors;
  write_json(result, dir / "result.json");
  for (std::size_t i = 0; i < m.errors.size(); ++i)
    if (m.row_failed(i)) std::cerr << "cavity " << i << " failed: " << m.errors[i] << '\n';
  std::cout << "distinguish: " << m.cavities.size() << " cavities -> " << (dir / "matrix.csv").string() << '\n';
  return kOk;
}

BoundaryTrace load_or_make_target(const std::string& path, const RunConfig& c) {
  if (!path.empty()) {
    if (!fs::exists(path)) fail(ErrorCode::InvalidConfig, "target trace not found: " + path);
    return read_trace(path);
  }
  return forward_trace(c.setup(), c.cavity);
}

int cmd_invert(const CommonArgs& a, const std::string& target_path) {
  const RunConfig c = load(a);
  const BoundaryTrace target = load_or_make_target(target_path, c);
  const fs::path dir = prepare_out(c);
  const InverseConfig ic = c.inverse.resolve();
  const auto r = reconstruct(target, ic, c.setup());
  write_history_csv(r, ic.kind, (dir / "history.csv").string());
  const double h = c.domain.cell_size();
  Json result = provenance(c, "invert");
  result["target"] = target_path.empty() ? Json("generated from config cavity") : Json(target_path);
  Json rec = {{"cavity", detail::cavity_to_json(r.cavity)},
              {"params", r.params},
              {"misfit", r.misfit},
              {"best_start", r.best_start},
              {"forward_solves", r.forward_solves},
              {"no_cavity_not_rejectable", r.no_cavity_not_rejectable},
              {"h", h}};
  if (r.no_cavity_misfit) rec["no_cavity_misfit"] = *r.no_cavity_misfit;
  Json starts = Json::array();
  for (const auto& s : r.starts)
    starts.push_back({{"x0", s.x0},
                      {"x", s.x},
                      {"misfit", std::isfinite(s.misfit) ? Json(s.misfit) : Json(nullptr)},
                      {"evaluations", s.evaluations},
                      {"forward_solves", s.forward_solves},
                      {"converged", s.converged},
                      {"error", s.error}});
  rec["starts"] = starts;
  if (c.cavity.kind != CavityKind::None) {
    const double dc = std::hypot(r.cavity.center[0] - c.cavity.center[0], r.cavity.center[1] - c.cavity.center[1]);
    const double dr = std::abs(r.cavity.radius - c.cavity.radius);
    rec["reference"] = detail::cavity_to_json(c.cavity);
    rec["center_error"] = dc;
    rec["radius_error"] = dr;
    rec["center_error_h"] = dc / h;
    rec["radius_error_h"] = dr / h;
  }
  result["reconstruction"] = rec;
  write_json(result, dir / "result.json");
  std::printf("invert: center (%.6g, %.6g) radius %.6g misfit %.6g after %d forward solves\n", r.cavity.center[0],
              r.cavity.center[1], r.cavity.radius, r.misfit, r.forward_solves);
  if (r.no_cavity_not_rejectable) std::printf("no-cavity hypothesis not rejectable\n");
  return kOk;
}

int cmd_landscape(const CommonArgs& a, const std::string& target_path, const std::string& axis,
                  std::optional<double> lo, std::optional<double> hi, std::optional<int> steps) {
  RunConfig c = load(a);
  if (!axis.empty()) c.landscape.axis = axis;
  if (lo) c.landscape.lo = *lo;
  if (hi) c.landscape.hi = *hi;
  if (steps) c.landscape.steps = *steps;
  if (c.cavity.kind == CavityKind::None) fail(ErrorCode::InvalidConfig, "landscape needs a cavity to scan around");
  if (!(c.landscape.lo < c.landscape.hi) || c.landscape.steps < 2)
    fail(ErrorCode::InvalidConfig, "landscape range must satisfy lo < hi and steps >= 2");
  const BoundaryTrace target = load_or_make_target(target_path, c);
  const fs::path dir = prepare_out(c);
  const auto p = to_params(c.cavity);
  const std::size_t idx = param_index(c.cavity.kind, p.size(), c.landscape.axis);
  const auto pts = landscape_scan(target, c.cavity, idx, c.landscape.lo, c.landscape.hi, c.landscape.steps, c.setup());
  write_landscape_csv(pts, c.landscape.axis, (dir / "landscape.csv").string());
  Json result = provenance(c, "landscape");
  result["target"] = target_path.empty() ? Json("generated from config cavity") : Json(target_path);
  std::size_t best = 0;
  for (std::size_t k = 1; k < pts.size(); ++k)
    if (pts[k].misfit < pts[best].misfit) best = k;
  result["argmin"] = pts[best].value;
  write_json(result, dir / "result.json");
  std::printf("landscape: %zu points, argmin %s = %.6g\n", pts.size(), c.landscape.axis.c_str(), pts[best].value);
  return kOk;
}

void add_common(CLI::App* sub, CommonArgs& a) {
  sub->add_option("--config", a.config, "JSON run configuration")->required();
  sub->add_option("--out", a.out, "output directory (overrides config 'output')");
  sub->add_option("--scheme", a.scheme, "imex, picard or nonlocal")
      ->check(CLI::IsMember({"imex", "picard", "nonlocal"}));
  sub->add_option("--seed", a.seed, "random seed for restarts and noise");
  sub->add_option("--noise", a.noise, "Gaussian noise level relative to the trace maximum");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monodomain cavity simulator and inverse-problem harness"};
  app.set_version_flag("--version", std::string(MONOCAV_VERSION));
  app.require_subcommand(1);

  CommonArgs args;
  std::string cavities_path, target_path, axis;
  std::optional<double> lo, hi;
  std::optional<int> steps;

  auto* fwd = app.add_subcommand("forward", "run the forward solver; write trace, diagnostics and VTK snapshots");
  add_common(fwd, args);
  auto* vb = app.add_subcommand("verify-bounds", "check the trajectory stays in the invariant rectangle");
  add_common(vb, args);
  auto* dist = app.add_subcommand("distinguish", "pairwise boundary-trace misfits for a list of cavities");
  add_common(dist, args);
  dist->add_option("--cavities", cavities_path, "JSON array of cavities (default: config 'cavities')");
  auto* inv = app.add_subcommand("invert", "reconstruct a cavity from a boundary trace");
  add_common(inv, args);
  inv->add_option("--target", target_path, "trace CSV (default: generated from the config cavity)");
  auto* land = app.add_subcommand("landscape", "misfit along one cavity parameter");
  add_common(land, args);
  land->add_option("--target", target_path, "trace CSV (default: generated from the config cavity)");
  land->add_option("--axis", axis, "cx, cy, r, a1, b1, ...");
  land->add_option("--lo", lo, "scan start");
  land->add_option("--hi", hi, "scan end");
  land->add_option("--steps", steps, "number of scan points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (*fwd) return cmd_forward(args);
    if (*vb) return cmd_verify_bounds(args);
    if (*dist) return cmd_distinguish(args, cavities_path);
    if (*inv) return cmd_invert(args, target_path);
    if (*land) return cmd_landscape(args, target_path, axis, lo, hi, steps);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  return kOk;
}
