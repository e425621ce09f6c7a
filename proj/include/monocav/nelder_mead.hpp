#pragma once

// Box-constrained Nelder-Mead. Candidates outside the box are rejected with
// +inf instead of being projected back.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "monocav/errors.hpp"

namespace monocav {

struct NelderMeadOptions {
  double reflect = 1.0;
  double expand = 2.0;
  double contract = 0.5;
  double shrink = 0.5;
  int max_evals = 200;
  double ftol = 1e-12;  // spread of simplex values
  double xtol = 1e-4;   // simplex diameter (max-norm)
  std::vector<double> initial_step;  // per coordinate; default 10% of the box width

  void validate() const {
    if (!(reflect > 0.0 && expand > 1.0 && contract > 0.0 && contract < 1.0 && shrink > 0.0 && shrink < 1.0))
      fail(ErrorCode::InvalidParameter, "simplex coefficients out of range");
    if (max_evals < 1) fail(ErrorCode::InvalidParameter, "max_evals >= 1 violated");
    if (!(ftol >= 0.0 && xtol >= 0.0)) fail(ErrorCode::InvalidParameter, "tolerances must be nonnegative");
  }
};

struct Box {
  std::vector<double> lower, upper;

  bool contains(const std::vector<double>& x) const {
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!(x[i] >= lower[i] && x[i] <= upper[i])) return false;
    return true;
  }
};

struct Evaluation {
  std::vector<double> x;
  double value = 0.0;
  double best_so_far = 0.0;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<Evaluation> history;
};

/// Minimize `fn` from `x0`. `stop` (optional) is polled before each evaluation
/// and ends the run early when it returns true.
inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& fn,
                                    std::vector<double> x0, const Box& box, const NelderMeadOptions& opt,
                                    const std::function<bool()>& stop = {}) {
  opt.validate();
  const std::size_t n = x0.size();
  if (box.lower.size() != n || box.upper.size() != n)
    fail(ErrorCode::ShapeMismatch, "box dimension does not match the start point");
  for (std::size_t i = 0; i < n; ++i)
    if (!(box.lower[i] < box.upper[i])) fail(ErrorCode::InvalidParameter, "empty box");

  NelderMeadResult res;
  bool halted = false;
  auto eval = [&](const std::vector<double>& x) {
    if (halted || res.evaluations >= opt.max_evals || (stop && stop())) {
      halted = true;
      return std::numeric_limits<double>::infinity();
    }
    const double v = box.contains(x) ? fn(x) : std::numeric_limits<double>::infinity();
    ++res.evaluations;
    if (v < res.value) {
      res.value = v;
      res.x = x;
    }
    res.history.push_back({x, v, res.value});
    return v;
  };

  std::vector<std::vector<double>> simplex(n + 1, x0);
  for (std::size_t i = 0; i < n; ++i) {
    double step = opt.initial_step.size() == n ? opt.initial_step[i] : 0.1 * (box.upper[i] - box.lower[i]);
    if (x0[i] + step > box.upper[i]) step = -step;
    simplex[i + 1][i] += step;
  }
  std::vector<double> f(n + 1);
  for (std::size_t k = 0; k <= n; ++k) f[k] = eval(simplex[k]);
  if (res.x.empty()) res.x = x0;

  std::vector<std::size_t> order(n + 1);
  auto combine = [&](const std::vector<double>& c, const std::vector<double>& w, double t) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = c[i] + t * (w[i] - c[i]);
    return out;
  };

  while (!halted) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t p, std::size_t q) { return f[p] < f[q]; });
    {
      std::vector<std::vector<double>> s(n + 1);
      std::vector<double> fs(n + 1);
      for (std::size_t k = 0; k <= n; ++k) {
        s[k] = simplex[order[k]];
        fs[k] = f[order[k]];
      }
      simplex.swap(s);
      f.swap(fs);
    }
    double diameter = 0.0;
    for (std::size_t k = 1; k <= n; ++k)
      for (std::size_t i = 0; i < n; ++i) diameter = std::max(diameter, std::abs(simplex[k][i] - simplex[0][i]));
    const double spread = std::isfinite(f[n]) ? f[n] - f[0] : std::numeric_limits<double>::infinity();
    if (diameter <= opt.xtol && spread <= opt.ftol) {
      res.converged = true;
      break;
    }
    if (diameter <= 0.0) break;
    ++res.iterations;

    std::vector<double> centroid(n, 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i) centroid[i] += simplex[k][i] / static_cast<double>(n);

    const auto xr = combine(centroid, simplex[n], -opt.reflect);
    const double fr = eval(xr);
    if (fr < f[0]) {
      const auto xe = combine(centroid, simplex[n], -opt.reflect * opt.expand);
      const double fe = eval(xe);
      if (fe < fr) {
        simplex[n] = xe;
        f[n] = fe;
      } else {
        simplex[n] = xr;
        f[n] = fr;
      }
      continue;
    }
    if (fr < f[n - 1]) {
      simplex[n] = xr;
      f[n] = fr;
      continue;
    }
    const bool outside = fr < f[n];
    const auto xc = outside ? combine(centroid, simplex[n], -opt.reflect * opt.contract)
                            : combine(centroid, simplex[n], opt.contract);
    const double fc = eval(xc);
    if (outside ? fc <= fr : fc < f[n]) {
      simplex[n] = xc;
      f[n] = fc;
      continue;
    }
    for (std::size_t k = 1; k <= n && !halted; ++k) {
      simplex[k] = combine(simplex[0], simplex[k], opt.shrink);
      f[k] = eval(simplex[k]);
    }
  }
  return res;
}

}  // namespace monocav
