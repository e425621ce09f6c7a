#pragma once

// Ionic nonlinearities (f, g) of the monodomain system
//   u_t - div(K grad u) + f(u, w) = 0,   w_t + g(u, w) = 0
// for the Aliev-Panfilov, FitzHugh-Nagumo and Rogers-McCulloch models, with
// their invariant rectangles and Lipschitz bounds.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>

#include "monocav/errors.hpp"

namespace monocav {

enum class IonicKind { AlievPanfilov, FitzHughNagumo, RogersMcCulloch };

inline std::string_view to_string(IonicKind k) {
  switch (k) {
    case IonicKind::AlievPanfilov: return "aliev_panfilov";
    case IonicKind::FitzHughNagumo: return "fitzhugh_nagumo";
    case IonicKind::RogersMcCulloch: return "rogers_mcculloch";
  }
  return "unknown";
}

inline std::optional<IonicKind> parse_ionic_kind(std::string_view s) {
  if (s == "aliev_panfilov") return IonicKind::AlievPanfilov;
  if (s == "fitzhugh_nagumo") return IonicKind::FitzHughNagumo;
  if (s == "rogers_mcculloch") return IonicKind::RogersMcCulloch;
  return std::nullopt;
}

struct IonicModel {
  IonicKind kind = IonicKind::AlievPanfilov;
  double A = 8.0;
  double a = 0.15;
  double eps = 0.01;
  double gamma = 0.5;  // unused by Aliev-Panfilov

  static IonicModel aliev_panfilov(double A = 8.0, double a = 0.15, double eps = 0.01) {
    return {IonicKind::AlievPanfilov, A, a, eps, 0.5};
  }
  static IonicModel fitzhugh_nagumo(double A = 1.0, double a = 0.5, double eps = 0.01,
                                    double gamma = 1.0) {
    return {IonicKind::FitzHughNagumo, A, a, eps, gamma};
  }
  static IonicModel rogers_mcculloch(double A = 8.0, double a = 0.15, double eps = 0.01,
                                     double gamma = 0.5) {
    return {IonicKind::RogersMcCulloch, A, a, eps, gamma};
  }

  bool uses_gamma() const { return kind != IonicKind::AlievPanfilov; }

  void validate() const {
    if (!(A > 0.0)) fail(ErrorCode::InvalidParameter, "A > 0 violated");
    if (!(a > 0.0 && a < 1.0)) fail(ErrorCode::InvalidParameter, "a in (0,1) violated");
    if (!(eps > 0.0)) fail(ErrorCode::InvalidParameter, "eps > 0 violated");
    if (uses_gamma() && !(gamma > 0.0)) fail(ErrorCode::InvalidParameter, "gamma > 0 violated");
  }
};

/// Cubic part A u (u - a)(u - 1) shared by all three models.
inline double cubic(const IonicModel& m, double u) { return m.A * u * (u - m.a) * (u - 1.0); }

inline double eval_f(const IonicModel& m, double u, double w) {
  const double coupling = m.kind == IonicKind::FitzHughNagumo ? w : u * w;
  return cubic(m, u) + coupling;
}

inline double eval_g(const IonicModel& m, double u, double w) {
  if (m.kind == IonicKind::AlievPanfilov) return m.eps * (m.A * u * (u - 1.0 - m.a) + w);
  return m.eps * (m.gamma * w - u);
}

struct Partials {
  double du = 0.0;
  double dw = 0.0;
};

inline Partials df(const IonicModel& m, double u, double w) {
  const double q = m.A * (3.0 * u * u - 2.0 * (1.0 + m.a) * u + m.a);
  if (m.kind == IonicKind::FitzHughNagumo) return {q, 1.0};
  return {q + w, u};
}

inline Partials dg(const IonicModel& m, double u, double /*w*/) {
  if (m.kind == IonicKind::AlievPanfilov) return {m.eps * m.A * (2.0 * u - 1.0 - m.a), m.eps};
  return {-m.eps, m.eps * m.gamma};
}

struct Rectangle {
  double u_lo = 0.0, u_hi = 0.0;
  double w_lo = 0.0, w_hi = 0.0;

  bool contains(double u, double w, double slack = 0.0) const {
    return u >= u_lo - slack && u <= u_hi + slack && w >= w_lo - slack && w <= w_hi + slack;
  }
  double clamp_u(double u) const { return std::clamp(u, u_lo, u_hi); }
  double clamp_w(double w) const { return std::clamp(w, w_lo, w_hi); }
};

enum class FhnBranch { Upper, Lower };

struct RectangleOptions {
  FhnBranch fhn_branch = FhnBranch::Upper;
  std::optional<double> fhn_m;    // explicit half-width; must satisfy the branch condition
  std::optional<double> rmc_u_bar;
};

/// Roots K- <= K+ of A (m - a)(m - 1) = 1/gamma.
inline std::pair<double, double> fhn_roots(const IonicModel& m) {
  const double inv = 1.0 / (m.gamma * m.A);
  const double b = m.a + 1.0;
  const double disc = std::sqrt(b * b + 4.0 * (inv - m.a));
  const double k_plus = 0.5 * (b + disc);
  // product of the roots is a - 1/(gamma A); avoids cancellation in K-
  const double k_minus = (m.a - inv) / k_plus;
  return {k_minus, k_plus};
}

/// A(m - a)(m - 1) - 1/gamma; nonnegative exactly when the FHN upper face
/// points inward.
inline double fhn_face_residual(const IonicModel& m, double half_width) {
  return m.A * (half_width - m.a) * (half_width - 1.0) - 1.0 / m.gamma;
}

namespace detail {

// Evaluate the FHN sign conditions at the two extreme corners so that
// floating-point rounding cannot flip them.
inline bool fhn_faces_hold(const IonicModel& m, double half, double w_half) {
  return eval_f(m, half, -w_half) >= 0.0 && eval_f(m, -half, w_half) <= 0.0 &&
         eval_g(m, half, w_half) >= 0.0 && eval_g(m, -half, -w_half) <= 0.0;
}

}  // namespace detail

/// Constant upper/lower solutions of each model, as a rectangle S in (u, w).
inline Rectangle invariant_rectangle(const IonicModel& m, const RectangleOptions& opt = {}) {
  m.validate();
  switch (m.kind) {
    case IonicKind::AlievPanfilov: {
      const double u_hi = 1.0 + m.a;
      return {0.0, u_hi, 0.0, m.A * u_hi * u_hi / 4.0};
    }
    case IonicKind::RogersMcCulloch: {
      const double u_bar = opt.rmc_u_bar.value_or(1.1 * std::max(1.0, m.a + 1.0));
      if (!((u_bar > 0.0 && u_bar < m.a) || u_bar > 1.0))
        fail(ErrorCode::InvalidParameter, "Rogers-McCulloch u_bar must lie in (0,a) or (1,inf)");
      double w_bar = u_bar / m.gamma;
      while (m.gamma * w_bar < u_bar) w_bar = std::nextafter(w_bar, std::numeric_limits<double>::infinity());
      return {0.0, u_bar, 0.0, w_bar};
    }
    case IonicKind::FitzHughNagumo: {
      const auto [k_minus, k_plus] = fhn_roots(m);
      const bool small_allowed = m.a > 1.0 / (m.gamma * m.A);
      if (opt.fhn_branch == FhnBranch::Lower && !small_allowed)
        fail(ErrorCode::InvalidBranch, "K- branch requires a > 1/(gamma A)");
      double half = 0.0;
      if (opt.fhn_m) {
        half = *opt.fhn_m;
        const bool ok = opt.fhn_branch == FhnBranch::Upper ? half >= k_plus
                                                            : (half > 0.0 && half <= k_minus);
        if (!ok) fail(ErrorCode::InvalidParameter, "FHN half-width outside the admissible branch");
      } else {
        half = opt.fhn_branch == FhnBranch::Upper ? k_plus : k_minus;
      }
      double w_half = half / m.gamma;
      // smallest representable widths for which the face signs hold exactly
      const double dir = opt.fhn_branch == FhnBranch::Upper ? std::numeric_limits<double>::infinity() : 0.0;
      for (int k = 0; k < 64 && !detail::fhn_faces_hold(m, half, w_half); ++k) {
        if (m.gamma * w_half < half) w_half = std::nextafter(w_half, std::numeric_limits<double>::infinity());
        if (eval_f(m, half, -w_half) < 0.0) {
          half = std::nextafter(half, dir);
          w_half = half / m.gamma;
        }
      }
      return {-half, half, -w_half, w_half};
    }
  }
  return {};
}

struct LipschitzConstants {
  double M1 = 0.0;  // for f
  double M2 = 0.0;  // for g
};

/// Exact sup over the rectangle of max(|d/du|, |d/dw|) for f and g. These are
/// Lipschitz constants for the l1 modulus |du| + |dw|.
inline LipschitzConstants lipschitz_constants(const IonicModel& m, const Rectangle& r) {
  // cubic' = A (3u^2 - 2(1+a) u + a): extremes at the ends and at the vertex
  const double vertex = (1.0 + m.a) / 3.0;
  auto q = [&](double u) { return m.A * (3.0 * u * u - 2.0 * (1.0 + m.a) * u + m.a); };
  double q_max = std::max(q(r.u_lo), q(r.u_hi));
  double q_min = std::min(q(r.u_lo), q(r.u_hi));
  if (vertex > r.u_lo && vertex < r.u_hi) q_min = std::min(q_min, q(vertex));

  LipschitzConstants out;
  const double u_abs = std::max(std::abs(r.u_lo), std::abs(r.u_hi));
  if (m.kind == IonicKind::FitzHughNagumo) {
    const double fu = std::max(std::abs(q_max), std::abs(q_min));
    out.M1 = std::max(fu, 1.0);
  } else {
    // f_u = q(u) + w, f_w = u
    const double fu = std::max(std::abs(q_max + r.w_hi), std::abs(q_min + r.w_lo));
    const double fu_all = std::max({fu, std::abs(q_max + r.w_lo), std::abs(q_min + r.w_hi)});
    out.M1 = std::max(fu_all, u_abs);
  }
  if (m.kind == IonicKind::AlievPanfilov) {
    const double gu = m.eps * m.A *
                      std::max(std::abs(2.0 * r.u_lo - 1.0 - m.a), std::abs(2.0 * r.u_hi - 1.0 - m.a));
    out.M2 = std::max(gu, m.eps);
  } else {
    out.M2 = m.eps * std::max(1.0, m.gamma);
  }
  return out;
}

/// Result of sampling the inward-pointing conditions on the faces of S.
struct FaceConditionReport {
  bool holds = true;
  int violations = 0;
  double worst = 0.0;  // most negative signed margin seen
};

/// Samples n points along each face of the rectangle and checks, with no
/// tolerance, f(u_lo, w) <= 0 <= f(u_hi, w) and g(u, w_lo) <= 0 <= g(u, w_hi).
inline FaceConditionReport check_face_conditions(const IonicModel& m, const Rectangle& r, int n = 200) {
  FaceConditionReport rep;
  auto record = [&](double margin) {
    if (margin < 0.0) {
      rep.holds = false;
      ++rep.violations;
      rep.worst = std::min(rep.worst, margin);
    }
  };
  for (int k = 0; k < n; ++k) {
    const double s = n == 1 ? 0.0 : static_cast<double>(k) / (n - 1);
    const double w = k == n - 1 ? r.w_hi : r.w_lo + s * (r.w_hi - r.w_lo);
    const double u = k == n - 1 ? r.u_hi : r.u_lo + s * (r.u_hi - r.u_lo);
    record(-eval_f(m, r.u_lo, w));
    record(eval_f(m, r.u_hi, w));
    record(-eval_g(m, u, r.w_lo));
    record(eval_g(m, u, r.w_hi));
  }
  return rep;
}

enum class K1Kind { ConstantOne, EqualsU };

/// Elimination of w: with w_t + c1 w = g1(u), f(u, w) = f1(u) + k1(u) w and
///   w(t) = e^{-c1 t} w0 + int_0^t e^{-c1 (t-s)} g1(u(s)) ds.
struct NonlocalDecomposition {
  double c1 = 0.0;
  K1Kind k1_kind = K1Kind::ConstantOne;
  std::function<double(double)> g1;
  std::function<double(double)> f1;
  double C1 = 0.0;  // sup |g1'| over the model rectangle

  double k1(double u) const { return k1_kind == K1Kind::ConstantOne ? 1.0 : u; }
};

inline NonlocalDecomposition nonlocal_decomposition(const IonicModel& m, const RectangleOptions& opt = {}) {
  const Rectangle r = invariant_rectangle(m, opt);
  NonlocalDecomposition d;
  d.f1 = [m](double u) { return cubic(m, u); };
  const double eps = m.eps;
  switch (m.kind) {
    case IonicKind::FitzHughNagumo:
    case IonicKind::RogersMcCulloch:
      d.c1 = m.eps * m.gamma;
      d.k1_kind = m.kind == IonicKind::FitzHughNagumo ? K1Kind::ConstantOne : K1Kind::EqualsU;
      d.g1 = [eps](double u) { return eps * u; };
      d.C1 = eps;
      break;
    case IonicKind::AlievPanfilov: {
      // w_t + eps w = -eps A u (u - 1 - a)
      d.c1 = m.eps;
      d.k1_kind = K1Kind::EqualsU;
      const double A = m.A, a = m.a;
      d.g1 = [eps, A, a](double u) { return -eps * A * u * (u - 1.0 - a); };
      d.C1 = eps * A * std::max(std::abs(2.0 * r.u_lo - 1.0 - a), std::abs(2.0 * r.u_hi - 1.0 - a));
      break;
    }
  }
  return d;
}

}  // namespace monocav
