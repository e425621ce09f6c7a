#pragma once

// JSON experiment description. Unknown keys are rejected; every number is
// range-checked before any solver runs.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "monocav/diffusion.hpp"
#include "monocav/errors.hpp"
#include "monocav/forward.hpp"
#include "monocav/geometry.hpp"
#include "monocav/inverse.hpp"
#include "monocav/ionic.hpp"

namespace monocav {

using Json = nlohmann::json;

/// base + sx * x + sy * y
struct LinearRamp {
  double base = 0.0;
  double sx = 0.0, sy = 0.0;

  double at(const Point& p) const { return base + sx * p[0] + sy * p[1]; }
};

struct ConductivitySpec {
  enum class Kind { Isotropic, Diagonal, Fiber };
  Kind kind = Kind::Isotropic;
  double value = 1.0;                     // isotropic
  LinearRamp xx{1.0}, yy{1.0};            // diagonal
  double along = 1.0, across = 1.0;       // fiber
  LinearRamp theta{0.0};                  // fiber angle field
  double lambda = 10.0;

  std::function<Tensor2(const Point&)> field() const {
    switch (kind) {
      case Kind::Isotropic: return [v = value](const Point&) { return Tensor2::isotropic(v); };
      case Kind::Diagonal:
        return [xx = xx, yy = yy](const Point& p) { return Tensor2{xx.at(p), 0.0, yy.at(p)}; };
      case Kind::Fiber:
        return [along = along, across = across, th = theta](const Point& p) {
          return Tensor2::fiber(along, across, th.at(p));
        };
    }
    return {};
  }
};

struct FieldSpec {
  enum class Kind { Zero, CollarBump, File };
  Kind kind = Kind::Zero;
  double amplitude = 0.0;
  double width = 0.0;
  unsigned walls = kAllWalls;
  std::string path;  // as written in the config
  std::filesystem::path base_dir;

  FieldFn make() const;
};

struct InverseSpec {
  CavityKind kind = CavityKind::Disc;
  std::vector<double> initial;
  std::vector<double> lower, upper;
  int starts = 5;
  std::uint64_t seed = 0;
  int max_forward_solves = 200;
  double noise_sigma = 0.0;
  std::optional<double> r_min;
  bool check_no_cavity = true;
  NelderMeadOptions optimizer;

  InverseConfig resolve() const {
    InverseConfig c;
    c.kind = kind;
    c.initial = initial;
    c.bounds = {lower, upper};
    c.optimizer = optimizer;
    c.starts = starts;
    c.seed = seed;
    c.max_forward_solves = max_forward_solves;
    c.noise_sigma = noise_sigma;
    c.r_min = r_min;
    c.check_no_cavity = check_no_cavity;
    return c;
  }
};

struct LandscapeSpec {
  std::string axis = "r";
  double lo = 0.1, hi = 0.3;
  int steps = 21;
};

struct RunConfig {
  DomainSpec domain;
  std::optional<double> d0;
  bool enforce_assumptions = true;
  CavityParam cavity;
  ConductivitySpec conductivity;
  IonicModel model = IonicModel::aliev_panfilov();
  FieldSpec u0, w0;
  SolverConfig solver;
  InverseSpec inverse;
  LandscapeSpec landscape;
  std::vector<CavityParam> cavities;
  std::string output = "out";

  ForwardSetup setup() const {
    ForwardSetup s;
    s.domain = domain;
    s.model = model;
    s.solver = solver;
    s.conductivity = conductivity.field();
    s.lambda = conductivity.lambda;
    s.u0 = u0.make();
    s.w0 = w0.make();
    s.d0 = d0;
    s.require_assumptions = enforce_assumptions;
    return s;
  }
};

// Parsing -----------------------------------------------------------------------

namespace detail {

[[noreturn]] inline void config_error(const std::string& where, const std::string& msg) {
  fail(ErrorCode::InvalidConfig, where + ": " + msg);
}

inline void allow_keys(const Json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) config_error(where, "expected an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* a : keys) known = known || k == a;
    if (!known) config_error(where, "unknown key '" + k + "'");
  }
}

inline double get_number(const Json& j, const std::string& where) {
  if (!j.is_number()) config_error(where, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) config_error(where, "must be finite");
  return v;
}

inline int get_int(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) config_error(where, "expected an integer");
  return j.get<int>();
}

inline std::string get_string(const Json& j, const std::string& where) {
  if (!j.is_string()) config_error(where, "expected a string");
  return j.get<std::string>();
}

inline bool get_bool(const Json& j, const std::string& where) {
  if (!j.is_boolean()) config_error(where, "expected true or false");
  return j.get<bool>();
}

inline std::vector<double> get_numbers(const Json& j, const std::string& where, std::optional<std::size_t> n = {}) {
  if (!j.is_array()) config_error(where, "expected an array");
  if (n && j.size() != *n) config_error(where, "expected " + std::to_string(*n) + " entries");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_number(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

template <class Fn>
void with(const Json& j, const char* key, Fn&& fn) {
  if (j.contains(key)) fn(j.at(key));
}

inline void require_range(bool ok, const std::string& where, const std::string& what) {
  if (!ok) config_error(where, what + " violated");
}

inline unsigned parse_walls(const Json& j, const std::string& where) {
  if (j.is_string() && j.get<std::string>() == "all") return kAllWalls;
  if (!j.is_array() || j.empty()) config_error(where, "expected \"all\" or a nonempty list of walls");
  unsigned walls = 0;
  for (const auto& w : j) {
    const std::string s = get_string(w, where);
    if (s == "bottom") walls |= kBottom;
    else if (s == "right") walls |= kRight;
    else if (s == "top") walls |= kTop;
    else if (s == "left") walls |= kLeft;
    else config_error(where, "unknown wall '" + s + "'");
  }
  return walls;
}

inline Json walls_to_json(unsigned walls) {
  if (walls == kAllWalls) return "all";
  Json a = Json::array();
  if (walls & kBottom) a.push_back("bottom");
  if (walls & kRight) a.push_back("right");
  if (walls & kTop) a.push_back("top");
  if (walls & kLeft) a.push_back("left");
  return a;
}

inline CavityKind parse_cavity_kind(const std::string& s, const std::string& where) {
  if (s == "none") return CavityKind::None;
  if (s == "disc") return CavityKind::Disc;
  if (s == "star") return CavityKind::Star;
  config_error(where, "unknown cavity kind '" + s + "'");
}

inline CavityParam parse_cavity(const Json& j, const std::string& where) {
  allow_keys(j, where, {"kind", "center", "radius", "fourier"});
  if (!j.contains("kind")) config_error(where, "missing 'kind'");
  CavityParam c;
  c.kind = parse_cavity_kind(get_string(j["kind"], where + ".kind"), where + ".kind");
  if (c.kind == CavityKind::None) {
    if (j.size() > 1) config_error(where, "a 'none' cavity takes no parameters");
    return c;
  }
  if (!j.contains("center") || !j.contains("radius")) config_error(where, "needs 'center' and 'radius'");
  const auto ctr = get_numbers(j["center"], where + ".center", 2);
  c.center = {ctr[0], ctr[1]};
  c.radius = get_number(j["radius"], where + ".radius");
  require_range(c.radius > 0.0, where + ".radius", "radius > 0");
  if (j.contains("fourier")) {
    if (c.kind != CavityKind::Star) config_error(where, "'fourier' only applies to star cavities");
    const Json& f = j["fourier"];
    if (!f.is_array()) config_error(where + ".fourier", "expected an array of [a_k, b_k] pairs");
    for (std::size_t k = 0; k < f.size(); ++k) {
      const auto ab = get_numbers(f[k], where + ".fourier[" + std::to_string(k) + "]", 2);
      c.fourier.push_back({ab[0], ab[1]});
    }
  }
  try {
    c.validate();
  } catch (const Error& e) {
    config_error(where, e.what());
  }
  return c;
}

inline Json cavity_to_json(const CavityParam& c) {
  Json j;
  j["kind"] = std::string(to_string(c.kind));
  if (c.kind == CavityKind::None) return j;
  j["center"] = {c.center[0], c.center[1]};
  j["radius"] = c.radius;
  if (c.kind == CavityKind::Star) {
    j["fourier"] = Json::array();
    for (const auto& ab : c.fourier) j["fourier"].push_back({ab[0], ab[1]});
  }
  return j;
}

inline LinearRamp parse_ramp(const Json& j, const std::string& where) {
  if (j.is_number()) return {get_number(j, where)};
  allow_keys(j, where, {"base", "slope"});
  LinearRamp r;
  with(j, "base", [&](const Json& v) { r.base = get_number(v, where + ".base"); });
  with(j, "slope", [&](const Json& v) {
    const auto s = get_numbers(v, where + ".slope", 2);
    r.sx = s[0];
    r.sy = s[1];
  });
  return r;
}

inline Json ramp_to_json(const LinearRamp& r) { return {{"base", r.base}, {"slope", {r.sx, r.sy}}}; }

inline ConductivitySpec parse_conductivity(const Json& j) {
  const std::string where = "conductivity";
  allow_keys(j, where, {"kind", "value", "xx", "yy", "along", "across", "theta", "lambda"});
  ConductivitySpec c;
  const std::string kind = j.contains("kind") ? get_string(j["kind"], where + ".kind") : "isotropic";
  auto only = [&](std::initializer_list<const char*> keys) {
    for (const auto& [k, v] : j.items()) {
      bool ok = k == "kind" || k == "lambda";
      for (const char* a : keys) ok = ok || k == a;
      if (!ok) config_error(where, "key '" + k + "' does not apply to kind '" + kind + "'");
    }
  };
  if (kind == "isotropic") {
    only({"value"});
    c.kind = ConductivitySpec::Kind::Isotropic;
    with(j, "value", [&](const Json& v) { c.value = get_number(v, where + ".value"); });
  } else if (kind == "diagonal") {
    only({"xx", "yy"});
    c.kind = ConductivitySpec::Kind::Diagonal;
    with(j, "xx", [&](const Json& v) { c.xx = parse_ramp(v, where + ".xx"); });
    with(j, "yy", [&](const Json& v) { c.yy = parse_ramp(v, where + ".yy"); });
  } else if (kind == "fiber") {
    only({"along", "across", "theta"});
    c.kind = ConductivitySpec::Kind::Fiber;
    with(j, "along", [&](const Json& v) { c.along = get_number(v, where + ".along"); });
    with(j, "across", [&](const Json& v) { c.across = get_number(v, where + ".across"); });
    with(j, "theta", [&](const Json& v) { c.theta = parse_ramp(v, where + ".theta"); });
  } else {
    config_error(where + ".kind", "expected isotropic, diagonal or fiber");
  }
  with(j, "lambda", [&](const Json& v) { c.lambda = get_number(v, where + ".lambda"); });
  require_range(c.lambda > 1.0, where + ".lambda", "lambda > 1");
  return c;
}

inline Json conductivity_to_json(const ConductivitySpec& c) {
  Json j;
  switch (c.kind) {
    case ConductivitySpec::Kind::Isotropic:
      j = {{"kind", "isotropic"}, {"value", c.value}};
      break;
    case ConductivitySpec::Kind::Diagonal:
      j = {{"kind", "diagonal"}, {"xx", ramp_to_json(c.xx)}, {"yy", ramp_to_json(c.yy)}};
      break;
    case ConductivitySpec::Kind::Fiber:
      j = {{"kind", "fiber"}, {"along", c.along}, {"across", c.across}, {"theta", ramp_to_json(c.theta)}};
      break;
  }
  j["lambda"] = c.lambda;
  return j;
}

inline FieldSpec parse_field(const Json& j, const std::string& where, const std::filesystem::path& base) {
  allow_keys(j, where, {"preset", "amplitude", "width", "walls", "path"});
  FieldSpec f;
  f.base_dir = base;
  const std::string preset = j.contains("preset") ? get_string(j["preset"], where + ".preset") : "zero";
  auto only = [&](std::initializer_list<const char*> keys) {
    for (const auto& [k, v] : j.items()) {
      bool ok = k == "preset";
      for (const char* a : keys) ok = ok || k == a;
      if (!ok) config_error(where, "key '" + k + "' does not apply to preset '" + preset + "'");
    }
  };
  if (preset == "zero") {
    only({});
    f.kind = FieldSpec::Kind::Zero;
  } else if (preset == "collar_bump") {
    only({"amplitude", "width", "walls"});
    f.kind = FieldSpec::Kind::CollarBump;
    if (!j.contains("amplitude") || !j.contains("width")) config_error(where, "collar_bump needs amplitude and width");
    f.amplitude = get_number(j["amplitude"], where + ".amplitude");
    f.width = get_number(j["width"], where + ".width");
    require_range(f.width > 0.0, where + ".width", "width > 0");
    with(j, "walls", [&](const Json& v) { f.walls = parse_walls(v, where + ".walls"); });
  } else if (preset == "file") {
    only({"path"});
    f.kind = FieldSpec::Kind::File;
    if (!j.contains("path")) config_error(where, "file preset needs 'path'");
    f.path = get_string(j["path"], where + ".path");
  } else {
    config_error(where + ".preset", "expected zero, collar_bump or file");
  }
  return f;
}

inline Json field_to_json(const FieldSpec& f) {
  switch (f.kind) {
    case FieldSpec::Kind::Zero: return {{"preset", "zero"}};
    case FieldSpec::Kind::CollarBump:
      return {{"preset", "collar_bump"}, {"amplitude", f.amplitude}, {"width", f.width},
              {"walls", walls_to_json(f.walls)}};
    case FieldSpec::Kind::File: return {{"preset", "file"}, {"path", f.path}};
  }
  return {};
}

/// Whitespace- or comma-separated values, one per grid cell in index order
/// i + nx * j (rows of constant y, bottom row first).
inline CellValues read_field_file(const std::filesystem::path& path, int expected) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::InvalidConfig, "cannot open initial-data file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  for (char& ch : text)
    if (ch == ',') ch = ' ';
  std::istringstream ss(text);
  CellValues v;
  std::string tok;
  while (ss >> tok) {
    double x = 0.0;
    if (!parse_double(tok, x) || !std::isfinite(x))
      fail(ErrorCode::InvalidConfig, "bad value '" + tok + "' in " + path.string());
    v.push_back(x);
  }
  if (static_cast<int>(v.size()) != expected)
    fail(ErrorCode::InvalidConfig, path.string() + " holds " + std::to_string(v.size()) + " values, grid has " +
                                       std::to_string(expected) + " cells");
  return v;
}

}  // namespace detail

inline FieldFn FieldSpec::make() const {
  switch (kind) {
    case Kind::Zero: return constant_field(0.0);
    case Kind::CollarBump: return collar_bump(amplitude, width, walls);
    case Kind::File: {
      const std::filesystem::path p(path);
      const std::filesystem::path full = p.is_absolute() ? p : base_dir / p;
      return [full](const GridGeometry& g) { return detail::read_field_file(full, g.cell_count()); };
    }
  }
  return constant_field(0.0);
}

namespace detail {

inline IonicModel parse_model(const Json& j) {
  const std::string where = "model";
  allow_keys(j, where, {"kind", "A", "a", "eps", "gamma"});
  const std::string kind = j.contains("kind") ? get_string(j["kind"], where + ".kind") : "aliev_panfilov";
  const auto k = parse_ionic_kind(kind);
  if (!k) config_error(where + ".kind", "expected aliev_panfilov, fitzhugh_nagumo or rogers_mcculloch");
  IonicModel m = *k == IonicKind::AlievPanfilov    ? IonicModel::aliev_panfilov()
                 : *k == IonicKind::FitzHughNagumo ? IonicModel::fitzhugh_nagumo()
                                                   : IonicModel::rogers_mcculloch();
  with(j, "A", [&](const Json& v) { m.A = get_number(v, where + ".A"); });
  with(j, "a", [&](const Json& v) { m.a = get_number(v, where + ".a"); });
  with(j, "eps", [&](const Json& v) { m.eps = get_number(v, where + ".eps"); });
  with(j, "gamma", [&](const Json& v) { m.gamma = get_number(v, where + ".gamma"); });
  try {
    m.validate();
  } catch (const Error& e) {
    config_error(where, e.what());
  }
  return m;
}

inline Json model_to_json(const IonicModel& m) {
  return {{"kind", std::string(to_string(m.kind))}, {"A", m.A}, {"a", m.a}, {"eps", m.eps}, {"gamma", m.gamma}};
}

inline SolverConfig parse_solver(const Json& j) {
  const std::string where = "solver";
  allow_keys(j, where,
             {"scheme", "dt", "T", "kappa", "picard_tol", "picard_max_iter", "picard_window", "cg_tol", "cg_max_iter",
              "snapshot_stride", "rectangle_slack", "fhn_branch", "fhn_m", "rmc_u_bar", "reaction"});
  SolverConfig c;
  with(j, "scheme", [&](const Json& v) {
    const auto s = parse_scheme(get_string(v, where + ".scheme"));
    if (!s) config_error(where + ".scheme", "expected imex, picard or nonlocal");
    c.scheme = *s;
  });
  with(j, "dt", [&](const Json& v) { c.dt = get_number(v, where + ".dt"); });
  with(j, "T", [&](const Json& v) { c.T = get_number(v, where + ".T"); });
  with(j, "kappa", [&](const Json& v) { c.kappa = get_number(v, where + ".kappa"); });
  with(j, "picard_tol", [&](const Json& v) { c.picard_tol = get_number(v, where + ".picard_tol"); });
  with(j, "picard_max_iter", [&](const Json& v) { c.picard_max_iter = get_int(v, where + ".picard_max_iter"); });
  with(j, "picard_window", [&](const Json& v) { c.picard_window = get_number(v, where + ".picard_window"); });
  with(j, "cg_tol", [&](const Json& v) { c.cg_tol = get_number(v, where + ".cg_tol"); });
  with(j, "cg_max_iter", [&](const Json& v) { c.cg_max_iter = get_int(v, where + ".cg_max_iter"); });
  with(j, "snapshot_stride", [&](const Json& v) { c.snapshot_stride = get_int(v, where + ".snapshot_stride"); });
  with(j, "rectangle_slack", [&](const Json& v) { c.rectangle_slack = get_number(v, where + ".rectangle_slack"); });
  with(j, "fhn_branch", [&](const Json& v) {
    const std::string b = get_string(v, where + ".fhn_branch");
    if (b == "upper") c.rectangle.fhn_branch = FhnBranch::Upper;
    else if (b == "lower") c.rectangle.fhn_branch = FhnBranch::Lower;
    else config_error(where + ".fhn_branch", "expected upper or lower");
  });
  with(j, "fhn_m", [&](const Json& v) { c.rectangle.fhn_m = get_number(v, where + ".fhn_m"); });
  with(j, "rmc_u_bar", [&](const Json& v) { c.rectangle.rmc_u_bar = get_number(v, where + ".rmc_u_bar"); });
  with(j, "reaction", [&](const Json& v) { c.reaction = get_bool(v, where + ".reaction"); });
  try {
    c.validate();
  } catch (const Error& e) {
    config_error(where, e.what());
  }
  if (c.kappa) require_range(*c.kappa > 0.0, where + ".kappa", "kappa > 0");
  if (c.rectangle_slack) require_range(*c.rectangle_slack >= 0.0, where + ".rectangle_slack", "rectangle_slack >= 0");
  return c;
}

inline Json solver_to_json(const SolverConfig& c) {
  Json j = {{"scheme", std::string(to_string(c.scheme))},
            {"dt", c.dt},
            {"T", c.T},
            {"picard_tol", c.picard_tol},
            {"picard_max_iter", c.picard_max_iter},
            {"picard_window", c.picard_window},
            {"cg_tol", c.cg_tol},
            {"cg_max_iter", c.cg_max_iter},
            {"snapshot_stride", c.snapshot_stride},
            {"fhn_branch", c.rectangle.fhn_branch == FhnBranch::Upper ? "upper" : "lower"},
            {"reaction", c.reaction}};
  if (c.kappa) j["kappa"] = *c.kappa;
  if (c.rectangle_slack) j["rectangle_slack"] = *c.rectangle_slack;
  if (c.rectangle.fhn_m) j["fhn_m"] = *c.rectangle.fhn_m;
  if (c.rectangle.rmc_u_bar) j["rmc_u_bar"] = *c.rectangle.rmc_u_bar;
  return j;
}

inline InverseSpec parse_inverse(const Json& j) {
  const std::string where = "inverse";
  allow_keys(j, where,
             {"parametrization", "initial", "lower", "upper", "starts", "seed", "max_forward_solves", "noise_sigma",
              "r_min", "check_no_cavity", "optimizer"});
  InverseSpec s;
  with(j, "parametrization", [&](const Json& v) {
    s.kind = parse_cavity_kind(get_string(v, where + ".parametrization"), where + ".parametrization");
    if (s.kind == CavityKind::None) config_error(where + ".parametrization", "expected disc or star");
  });
  with(j, "initial", [&](const Json& v) { s.initial = get_numbers(v, where + ".initial"); });
  with(j, "lower", [&](const Json& v) { s.lower = get_numbers(v, where + ".lower"); });
  with(j, "upper", [&](const Json& v) { s.upper = get_numbers(v, where + ".upper"); });
  with(j, "starts", [&](const Json& v) { s.starts = get_int(v, where + ".starts"); });
  with(j, "seed", [&](const Json& v) {
    if (!v.is_number_unsigned()) config_error(where + ".seed", "expected a nonnegative integer");
    s.seed = v.get<std::uint64_t>();
  });
  with(j, "max_forward_solves", [&](const Json& v) { s.max_forward_solves = get_int(v, where + ".max_forward_solves"); });
  with(j, "noise_sigma", [&](const Json& v) { s.noise_sigma = get_number(v, where + ".noise_sigma"); });
  with(j, "r_min", [&](const Json& v) { s.r_min = get_number(v, where + ".r_min"); });
  with(j, "check_no_cavity", [&](const Json& v) { s.check_no_cavity = get_bool(v, where + ".check_no_cavity"); });
  with(j, "optimizer", [&](const Json& o) {
    const std::string w = where + ".optimizer";
    allow_keys(o, w, {"initial_step", "reflect", "expand", "contract", "shrink", "max_evals", "ftol", "xtol"});
    auto& opt = s.optimizer;
    with(o, "initial_step", [&](const Json& v) { opt.initial_step = get_numbers(v, w + ".initial_step"); });
    with(o, "reflect", [&](const Json& v) { opt.reflect = get_number(v, w + ".reflect"); });
    with(o, "expand", [&](const Json& v) { opt.expand = get_number(v, w + ".expand"); });
    with(o, "contract", [&](const Json& v) { opt.contract = get_number(v, w + ".contract"); });
    with(o, "shrink", [&](const Json& v) { opt.shrink = get_number(v, w + ".shrink"); });
    with(o, "max_evals", [&](const Json& v) { opt.max_evals = get_int(v, w + ".max_evals"); });
    with(o, "ftol", [&](const Json& v) { opt.ftol = get_number(v, w + ".ftol"); });
    with(o, "xtol", [&](const Json& v) { opt.xtol = get_number(v, w + ".xtol"); });
    try {
      opt.validate();
    } catch (const Error& e) {
      config_error(w, e.what());
    }
  });
  require_range(s.starts >= 1, where + ".starts", "starts >= 1");
  require_range(s.max_forward_solves >= 1, where + ".max_forward_solves", "max_forward_solves >= 1");
  require_range(s.noise_sigma >= 0.0, where + ".noise_sigma", "noise_sigma >= 0");
  if (s.r_min) require_range(*s.r_min > 0.0, where + ".r_min", "r_min > 0");
  const std::size_t n = s.kind == CavityKind::Disc ? 3 : (s.initial.empty() ? 7 : s.initial.size());
  if (s.kind == CavityKind::Star) require_range(n >= 3 && (n - 3) % 2 == 0, where + ".initial", "3 + 2K entries");
  if (!s.initial.empty()) require_range(s.initial.size() == n, where + ".initial", "parameter count");
  require_range(s.lower.size() == s.upper.size(), where, "lower/upper sizes match");
  if (!s.lower.empty()) {
    require_range(s.lower.size() == n, where + ".lower", "parameter count");
    for (std::size_t i = 0; i < n; ++i) require_range(s.lower[i] < s.upper[i], where, "lower < upper");
  }
  if (!s.optimizer.initial_step.empty())
    require_range(s.optimizer.initial_step.size() == n, where + ".optimizer.initial_step", "parameter count");
  return s;
}

inline Json inverse_to_json(const InverseSpec& s) {
  const auto& o = s.optimizer;
  Json j = {{"parametrization", std::string(to_string(s.kind))},
            {"starts", s.starts},
            {"seed", s.seed},
            {"max_forward_solves", s.max_forward_solves},
            {"noise_sigma", s.noise_sigma},
            {"check_no_cavity", s.check_no_cavity},
            {"optimizer",
             {{"reflect", o.reflect},
              {"expand", o.expand},
              {"contract", o.contract},
              {"shrink", o.shrink},
              {"max_evals", o.max_evals},
              {"ftol", o.ftol},
              {"xtol", o.xtol}}}};
  if (!o.initial_step.empty()) j["optimizer"]["initial_step"] = o.initial_step;
  if (!s.initial.empty()) j["initial"] = s.initial;
  if (!s.lower.empty()) {
    j["lower"] = s.lower;
    j["upper"] = s.upper;
  }
  if (s.r_min) j["r_min"] = *s.r_min;
  return j;
}

}  // namespace detail

/// Parse a configuration document. `base_dir` resolves relative file paths.
inline RunConfig parse_config(const Json& j, const std::filesystem::path& base_dir = ".") {
  using namespace detail;
  allow_keys(j, "config",
             {"domain", "cavity", "conductivity", "model", "initial", "solver", "inverse", "landscape", "cavities",
              "output"});
  RunConfig c;
  with(j, "domain", [&](const Json& d) {
    allow_keys(d, "domain", {"extents", "cells", "sigma", "d0", "enforce_assumptions"});
    with(d, "extents", [&](const Json& v) {
      const auto e = get_numbers(v, "domain.extents", 2);
      c.domain.extents = {e[0], e[1]};
    });
    with(d, "cells", [&](const Json& v) {
      if (!v.is_array() || v.size() != 2) config_error("domain.cells", "expected two integers");
      c.domain.cells = {get_int(v[0], "domain.cells[0]"), get_int(v[1], "domain.cells[1]")};
    });
    with(d, "sigma", [&](const Json& v) {
      const auto s = get_numbers(v, "domain.sigma", 2);
      c.domain.s0 = s[0];
      c.domain.s1 = s[1];
    });
    with(d, "d0", [&](const Json& v) { c.d0 = get_number(v, "domain.d0"); });
    with(d, "enforce_assumptions", [&](const Json& v) { c.enforce_assumptions = get_bool(v, "domain.enforce_assumptions"); });
  });
  try {
    c.domain.validate();
  } catch (const Error& e) {
    config_error("domain", e.what());
  }
  if (c.d0) require_range(*c.d0 > 0.0, "domain.d0", "d0 > 0");

  with(j, "cavity", [&](const Json& v) { c.cavity = parse_cavity(v, "cavity"); });
  with(j, "conductivity", [&](const Json& v) { c.conductivity = parse_conductivity(v); });
  with(j, "model", [&](const Json& v) { c.model = parse_model(v); });
  with(j, "initial", [&](const Json& v) {
    allow_keys(v, "initial", {"u", "w"});
    with(v, "u", [&](const Json& f) { c.u0 = parse_field(f, "initial.u", base_dir); });
    with(v, "w", [&](const Json& f) { c.w0 = parse_field(f, "initial.w", base_dir); });
  });
  with(j, "solver", [&](const Json& v) { c.solver = parse_solver(v); });
  with(j, "inverse", [&](const Json& v) { c.inverse = parse_inverse(v); });
  with(j, "landscape", [&](const Json& v) {
    allow_keys(v, "landscape", {"axis", "lo", "hi", "steps"});
    with(v, "axis", [&](const Json& a) { c.landscape.axis = get_string(a, "landscape.axis"); });
    with(v, "lo", [&](const Json& a) { c.landscape.lo = get_number(a, "landscape.lo"); });
    with(v, "hi", [&](const Json& a) { c.landscape.hi = get_number(a, "landscape.hi"); });
    with(v, "steps", [&](const Json& a) { c.landscape.steps = get_int(a, "landscape.steps"); });
    require_range(c.landscape.lo < c.landscape.hi, "landscape", "lo < hi");
    require_range(c.landscape.steps >= 2, "landscape.steps", "steps >= 2");
  });
  with(j, "cavities", [&](const Json& v) {
    if (!v.is_array()) config_error("cavities", "expected an array");
    for (std::size_t i = 0; i < v.size(); ++i) c.cavities.push_back(parse_cavity(v[i], "cavities[" + std::to_string(i) + "]"));
  });
  with(j, "output", [&](const Json& v) { c.output = get_string(v, "output"); });

  // Conductivity bounds are checked on the cavity-free grid.
  try {
    const GridGeometry g = build_masked_grid(c.domain, CavityParam::none());
    ConductivityField::from_function(g, c.conductivity.field(), c.conductivity.lambda);
  } catch (const Error& e) {
    config_error("conductivity", e.what());
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::InvalidConfig, "cannot open config " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

/// Fully resolved configuration: every default written out.
inline Json to_json(const RunConfig& c) {
  using namespace detail;
  Json d = {{"extents", {c.domain.extents[0], c.domain.extents[1]}},
            {"cells", {c.domain.cells[0], c.domain.cells[1]}},
            {"sigma", {c.domain.s0, c.domain.s1}},
            {"enforce_assumptions", c.enforce_assumptions}};
  if (c.d0) d["d0"] = *c.d0;
  Json j = {{"domain", d},
            {"cavity", cavity_to_json(c.cavity)},
            {"conductivity", conductivity_to_json(c.conductivity)},
            {"model", model_to_json(c.model)},
            {"initial", {{"u", field_to_json(c.u0)}, {"w", field_to_json(c.w0)}}},
            {"solver", solver_to_json(c.solver)},
            {"inverse", inverse_to_json(c.inverse)},
            {"landscape",
             {{"axis", c.landscape.axis}, {"lo", c.landscape.lo}, {"hi", c.landscape.hi}, {"steps", c.landscape.steps}}},
            {"output", c.output}};
  if (!c.cavities.empty()) {
    j["cavities"] = Json::array();
    for (const auto& cav : c.cavities) j["cavities"].push_back(cavity_to_json(cav));
  }
  return j;
}

/// Index of a named parameter ("cx", "cy", "r", "r_mean", "a1", "b1", ...).
inline std::size_t param_index(CavityKind kind, std::size_t count, const std::string& name) {
  const auto names = param_names(kind, count);
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name || (i == 2 && (name == "r" || name == "r_mean"))) return i;
  fail(ErrorCode::InvalidConfig, "unknown scan axis '" + name + "'");
}

}  // namespace monocav
