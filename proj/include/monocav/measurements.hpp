#pragma once

// Boundary traces u|_{Sigma x (0,T)}: extraction, comparison, CSV storage.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "monocav/errors.hpp"
#include "monocav/forward.hpp"
#include "monocav/geometry.hpp"

namespace monocav {

struct TraceMeta {
  std::string model = "aliev_panfilov";
  double A = 0.0, a = 0.0, eps = 0.0, gamma = 0.0;
  double dt = 0.0, T = 0.0;
  int nx = 0, ny = 0;
  double s0 = 0.0, s1 = 0.0;
  double ds = 0.0;  // arc length carried by each sample
  std::string scheme = "imex";

  bool operator==(const TraceMeta&) const = default;
};

struct BoundaryTrace {
  std::vector<double> arc_coords;  // arc-length positions, increasing
  std::vector<double> times;       // increasing, one per solver step
  std::vector<double> values;      // row-major, times.size() x arc_coords.size()
  TraceMeta meta;

  std::size_t rows() const { return times.size(); }
  std::size_t cols() const { return arc_coords.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double max_abs() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }

  bool operator==(const BoundaryTrace&) const = default;
};

/// u in the cells adjacent to the measurement faces, every step, ordered by arc length.
inline BoundaryTrace extract_trace(const Trajectory& traj, const GridGeometry& grid) {
  if (grid.sigma_faces.empty()) fail(ErrorCode::EmptySigma, "grid has no measurement faces");
  BoundaryTrace tr;
  tr.arc_coords.reserve(grid.sigma_faces.size());
  for (const auto& sf : grid.sigma_faces) tr.arc_coords.push_back(sf.arc);
  tr.times = traj.trace_times;
  tr.values.reserve(tr.times.size() * tr.arc_coords.size());
  for (const auto& row : traj.trace_buffer) {
    if (row.size() != tr.arc_coords.size())
      fail(ErrorCode::ShapeMismatch, "trajectory trace rows do not match the grid's measurement arc");
    tr.values.insert(tr.values.end(), row.begin(), row.end());
  }
  const IonicModel& m = traj.model;
  tr.meta = TraceMeta{std::string(to_string(m.kind)), m.A, m.a, m.eps, m.gamma, traj.dt, traj.T,
                      grid.nx(), grid.ny(), grid.domain.s0, grid.domain.s1, grid.h, traj.scheme};
  return tr;
}

namespace detail {

inline bool close(double x, double y, double rel = 1e-9) {
  return std::abs(x - y) <= rel * std::max({1.0, std::abs(x), std::abs(y)});
}

inline void require_compatible(const BoundaryTrace& p, const BoundaryTrace& q) {
  if (p.cols() != q.cols() || p.rows() != q.rows())
    fail(ErrorCode::IncompatibleTraces, "trace dimensions differ");
  if (p.values.size() != p.rows() * p.cols() || q.values.size() != q.rows() * q.cols())
    fail(ErrorCode::IncompatibleTraces, "trace value matrix is inconsistent");
  if (!close(p.meta.ds, q.meta.ds, 1e-12)) fail(ErrorCode::IncompatibleTraces, "arc sample widths differ");
  for (std::size_t c = 0; c < p.cols(); ++c)
    if (!close(p.arc_coords[c], q.arc_coords[c])) fail(ErrorCode::IncompatibleTraces, "arc sampling differs");
  for (std::size_t r = 0; r < p.rows(); ++r)
    if (!close(p.times[r], q.times[r])) fail(ErrorCode::IncompatibleTraces, "time stamps differ");
}

}  // namespace detail

/// Discrete L2(Sigma x (0,T)) distance: sqrt(sum_t sum_s (u1 - u2)^2 ds dt),
/// with dt_k = t_k - t_{k-1} and t_{-1} = 0.
inline double misfit(const BoundaryTrace& p, const BoundaryTrace& q) {
  detail::require_compatible(p, q);
  double total = 0.0;
  double t_prev = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < p.cols(); ++c) {
      const double d = p.at(r, c) - q.at(r, c);
      row += d * d;
    }
    total += row * p.meta.ds * (p.times[r] - t_prev);
    t_prev = p.times[r];
  }
  return std::sqrt(total);
}

namespace detail {

// Bracketing index and weight for linear interpolation; exact hits get weight 0.
inline std::pair<std::size_t, double> bracket(const std::vector<double>& xs, double x) {
  const double tol = 1e-9 * std::max(1.0, std::abs(x));
  if (xs.empty() || x < xs.front() - tol || x > xs.back() + tol)
    fail(ErrorCode::IncompatibleTraces, "resampling point outside the trace range");
  const auto it = std::lower_bound(xs.begin(), xs.end(), x - tol);
  std::size_t k = static_cast<std::size_t>(it - xs.begin());
  if (k < xs.size() && std::abs(xs[k] - x) <= tol) return {k, 0.0};
  if (k == 0) return {0, 0.0};
  k -= 1;
  if (k + 1 >= xs.size()) return {xs.size() - 1, 0.0};
  return {k, (x - xs[k]) / (xs[k + 1] - xs[k])};
}

}  // namespace detail

/// Linear interpolation of a trace onto other arc positions and time stamps
/// (e.g. fine-grid data onto a coarse measurement arc).
inline BoundaryTrace resample_trace(const BoundaryTrace& src, const std::vector<double>& arc_coords, double ds,
                                    const std::vector<double>& times) {
  BoundaryTrace out;
  out.arc_coords = arc_coords;
  out.times = times;
  out.meta = src.meta;
  out.meta.ds = ds;
  out.values.assign(times.size() * arc_coords.size(), 0.0);
  std::vector<std::pair<std::size_t, double>> col_w(arc_coords.size());
  for (std::size_t c = 0; c < arc_coords.size(); ++c) col_w[c] = detail::bracket(src.arc_coords, arc_coords[c]);
  for (std::size_t r = 0; r < times.size(); ++r) {
    const auto [tr, tw] = detail::bracket(src.times, times[r]);
    for (std::size_t c = 0; c < arc_coords.size(); ++c) {
      const auto [sc, sw] = col_w[c];
      auto value_at = [&](std::size_t row) {
        const double lo = src.at(row, sc);
        return sw == 0.0 ? lo : (1.0 - sw) * lo + sw * src.at(row, sc + 1);
      };
      const double v0 = value_at(tr);
      out.at(r, c) = tw == 0.0 ? v0 : (1.0 - tw) * v0 + tw * value_at(tr + 1);
    }
  }
  return out;
}

/// Resample onto the sampling of `like` (arc positions, width, time stamps).
inline BoundaryTrace resample_like(const BoundaryTrace& src, const BoundaryTrace& like) {
  return resample_trace(src, like.arc_coords, like.meta.ds, like.times);
}

/// Additive i.i.d. Gaussian noise with standard deviation `sigma`.
inline BoundaryTrace add_noise(BoundaryTrace trace, double sigma, std::uint64_t seed) {
  if (sigma <= 0.0) return trace;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (double& v : trace.values) v += normal(rng);
  return trace;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

}  // namespace detail

/// CSV trace file: `# key=value` meta lines, then one row `t,v_1,...,v_m` per
/// step. Numbers use shortest round-trip formatting.
inline void write_trace(const BoundaryTrace& tr, const std::string& path) {
  using detail::format_double;
  std::ofstream out(path);
  if (!out) fail(ErrorCode::InvalidParameter, "cannot open " + path);
  const auto& m = tr.meta;
  out << "# model=" << m.model << '\n';
  out << "# scheme=" << m.scheme << '\n';
  out << "# A=" << format_double(m.A) << '\n';
  out << "# a=" << format_double(m.a) << '\n';
  out << "# eps=" << format_double(m.eps) << '\n';
  out << "# gamma=" << format_double(m.gamma) << '\n';
  out << "# dt=" << format_double(m.dt) << '\n';
  out << "# T=" << format_double(m.T) << '\n';
  out << "# nx=" << m.nx << '\n';
  out << "# ny=" << m.ny << '\n';
  out << "# sigma=[" << format_double(m.s0) << ',' << format_double(m.s1) << "]\n";
  out << "# ds=" << format_double(m.ds) << '\n';
  out << "# arc=[";
  for (std::size_t c = 0; c < tr.arc_coords.size(); ++c) out << (c ? "," : "") << format_double(tr.arc_coords[c]);
  out << "]\n";
  for (std::size_t r = 0; r < tr.rows(); ++r) {
    out << format_double(tr.times[r]);
    for (std::size_t c = 0; c < tr.cols(); ++c) out << ',' << format_double(tr.at(r, c));
    out << '\n';
  }
  if (!out) fail(ErrorCode::InvalidParameter, "write failed for " + path);
}

inline BoundaryTrace read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::MalformedFile, "cannot open " + path);
  BoundaryTrace tr;
  bool have_arc = false, have_ds = false;
  std::string line;
  std::size_t line_no = 0;

  auto number = [&](std::string_view s) {
    double v = 0.0;
    if (!detail::parse_double(s, v)) throw MalformedFileError(line_no, "bad number '" + std::string(s) + "'");
    return v;
  };
  auto list = [&](std::string_view s) {
    if (s.size() < 2 || s.front() != '[' || s.back() != ']') throw MalformedFileError(line_no, "expected [..]");
    std::vector<double> out;
    s = s.substr(1, s.size() - 2);
    if (s.empty()) return out;
    for (auto part : detail::split(s, ',')) out.push_back(number(part));
    return out;
  };
  auto integer = [&](std::string_view s) {
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw MalformedFileError(line_no, "bad integer");
    return v;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string_view sv(line);
    if (sv.empty()) continue;
    if (sv.front() == '#') {
      sv.remove_prefix(1);
      while (!sv.empty() && sv.front() == ' ') sv.remove_prefix(1);
      const auto eq = sv.find('=');
      if (eq == std::string_view::npos) throw MalformedFileError(line_no, "meta line without '='");
      const std::string_view key = sv.substr(0, eq), val = sv.substr(eq + 1);
      auto& m = tr.meta;
      if (key == "model") m.model = std::string(val);
      else if (key == "scheme") m.scheme = std::string(val);
      else if (key == "A") m.A = number(val);
      else if (key == "a") m.a = number(val);
      else if (key == "eps") m.eps = number(val);
      else if (key == "gamma") m.gamma = number(val);
      else if (key == "dt") m.dt = number(val);
      else if (key == "T") m.T = number(val);
      else if (key == "nx") m.nx = integer(val);
      else if (key == "ny") m.ny = integer(val);
      else if (key == "ds") { m.ds = number(val); have_ds = true; }
      else if (key == "sigma") {
        const auto s = list(val);
        if (s.size() != 2) throw MalformedFileError(line_no, "sigma needs two entries");
        m.s0 = s[0];
        m.s1 = s[1];
      } else if (key == "arc") {
        tr.arc_coords = list(val);
        have_arc = true;
      } else {
        throw MalformedFileError(line_no, "unknown meta key '" + std::string(key) + "'");
      }
      continue;
    }
    if (!have_arc) throw MalformedFileError(line_no, "data row before '# arc=' header");
    const auto parts = detail::split(sv, ',');
    if (parts.size() != tr.arc_coords.size() + 1)
      throw MalformedFileError(line_no, "expected " + std::to_string(tr.arc_coords.size() + 1) + " fields, got " +
                                            std::to_string(parts.size()));
    const double t = number(parts[0]);
    if (!tr.times.empty() && !(t > tr.times.back())) throw MalformedFileError(line_no, "times must increase");
    tr.times.push_back(t);
    for (std::size_t c = 1; c < parts.size(); ++c) tr.values.push_back(number(parts[c]));
  }
  if (!have_arc || !have_ds) throw MalformedFileError(line_no, "missing '# arc=' or '# ds=' header");
  return tr;
}

}  // namespace monocav
