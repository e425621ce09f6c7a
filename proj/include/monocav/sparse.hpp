#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "monocav/errors.hpp"

namespace monocav {

/// Compressed sparse row matrix. Column indices within a row are sorted, so
/// every product is evaluated in a fixed order.
class SparseOperator {
 public:
  SparseOperator() = default;

  /// Build from per-row (column -> value) maps.
  explicit SparseOperator(const std::vector<std::map<int, double>>& rows) {
    row_ptr_.reserve(rows.size() + 1);
    row_ptr_.push_back(0);
    for (const auto& row : rows) {
      for (const auto& [c, v] : row) {
        cols_.push_back(c);
        vals_.push_back(v);
      }
      row_ptr_.push_back(static_cast<int>(cols_.size()));
    }
  }

  int size() const { return row_ptr_.empty() ? 0 : static_cast<int>(row_ptr_.size()) - 1; }
  std::size_t nonzeros() const { return vals_.size(); }

  double at(int row, int col) const {
    for (int k = row_ptr_[row]; k < row_ptr_[row + 1]; ++k)
      if (cols_[k] == col) return vals_[k];
    return 0.0;
  }

  /// Off-diagonal entries in column order, then the diagonal.
  double row_sum(int row) const {
    double s = 0.0, diag = 0.0;
    for (int k = row_ptr_[row]; k < row_ptr_[row + 1]; ++k) {
      if (cols_[k] == row) diag += vals_[k];
      else s += vals_[k];
    }
    return s + diag;
  }

  template <class Fn>
  void for_each_in_row(int row, Fn&& fn) const {
    for (int k = row_ptr_[row]; k < row_ptr_[row + 1]; ++k) fn(cols_[k], vals_[k]);
  }

  void apply(std::span<const double> x, std::span<double> y) const {
    const int n = size();
    for (int r = 0; r < n; ++r) {
      double s = 0.0;
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s += vals_[k] * x[cols_[k]];
      y[r] = s;
    }
  }

  /// I + scale * this, keeping the sparsity pattern (diagonal inserted if absent).
  SparseOperator shifted_identity(double scale) const {
    std::vector<std::map<int, double>> rows(static_cast<std::size_t>(size()));
    for (int r = 0; r < size(); ++r) {
      rows[r][r] = 1.0;
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) rows[r][cols_[k]] += scale * vals_[k];
    }
    return SparseOperator(rows);
  }

  std::vector<double> diagonal() const {
    std::vector<double> d(static_cast<std::size_t>(size()), 0.0);
    for (int r = 0; r < size(); ++r) d[r] = at(r, r);
    return d;
  }

  bool is_symmetric(double tol = 0.0) const {
    for (int r = 0; r < size(); ++r)
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
        if (std::abs(vals_[k] - at(cols_[k], r)) > tol) return false;
    return true;
  }

 private:
  std::vector<int> row_ptr_;
  std::vector<int> cols_;
  std::vector<double> vals_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct CgResult {
  int iterations = 0;
  double relative_residual = 0.0;
};

/// Jacobi-preconditioned conjugate gradients for a symmetric positive definite
/// operator, with workspace reused across solves. `x` holds the initial guess
/// on entry. Stops when ||b - A x||_2 <= tol * ||b||_2; a zero right-hand side
/// returns x = 0 exactly.
class CgSolver {
 public:
  explicit CgSolver(const SparseOperator& A) : A_(&A) {
    const auto d = A.diagonal();
    inv_diag_.resize(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) inv_diag_[i] = 1.0 / d[i];
    r_.resize(d.size());
    z_.resize(d.size());
    p_.resize(d.size());
    q_.resize(d.size());
  }

  CgResult solve(std::span<const double> b, std::span<double> x, double tol, int max_iter) {
    const std::size_t n = b.size();
    const double b_norm = std::sqrt(dot(b, b));
    if (b_norm == 0.0) {
      std::fill(x.begin(), x.end(), 0.0);
      return {0, 0.0};
    }
    A_->apply(x, q_);
    for (std::size_t i = 0; i < n; ++i) r_[i] = b[i] - q_[i];
    double r_norm = std::sqrt(dot(r_, r_));
    if (r_norm <= tol * b_norm) return {0, r_norm / b_norm};

    for (std::size_t i = 0; i < n; ++i) z_[i] = r_[i] * inv_diag_[i];
    p_ = z_;
    double rz = dot(r_, z_);
    for (int it = 1; it <= max_iter; ++it) {
      A_->apply(p_, q_);
      const double alpha = rz / dot(p_, q_);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] += alpha * p_[i];
        r_[i] -= alpha * q_[i];
      }
      r_norm = std::sqrt(dot(r_, r_));
      if (r_norm <= tol * b_norm) return {it, r_norm / b_norm};
      for (std::size_t i = 0; i < n; ++i) z_[i] = r_[i] * inv_diag_[i];
      const double rz_new = dot(r_, z_);
      const double beta = rz_new / rz;
      rz = rz_new;
      for (std::size_t i = 0; i < n; ++i) p_[i] = z_[i] + beta * p_[i];
    }
    fail(ErrorCode::LinearSolveDiverged,
         "CG did not reach tolerance in " + std::to_string(max_iter) + " iterations (residual " +
             std::to_string(r_norm / b_norm) + ")");
  }

 private:
  const SparseOperator* A_;
  std::vector<double> inv_diag_, r_, z_, p_, q_;
};

inline CgResult solve_cg(const SparseOperator& A, std::span<const double> b, std::span<double> x,
                         double tol, int max_iter) {
  CgSolver cg(A);
  return cg.solve(b, x, tol, max_iter);
}

}  // namespace monocav
