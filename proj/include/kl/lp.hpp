#pragma once

// Dense linear programming: max c^T z subject to A z <= b with z free.
//
// The solver runs a two-phase revised simplex on the dual problem
//   min b^T y  s.t.  A^T y = c,  y >= 0,
// whose basis has only n = dim(z) columns. This suits the tall constraint
// systems built by the polytope refinement (few unknowns, many rows).

#include "kl/core.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace kl {

enum class LPStatus { Optimal, Infeasible, Unbounded };

inline const char* to_string(LPStatus s) {
  switch (s) {
    case LPStatus::Optimal: return "optimal";
    case LPStatus::Infeasible: return "infeasible";
    case LPStatus::Unbounded: return "unbounded";
  }
  return "?";
}

struct LPOutcome {
  LPStatus status = LPStatus::Infeasible;
  Vec point;  // primal optimum when status == Optimal
  double objective = 0.0;
  int iterations = 0;
};

struct LPOptions {
  double feas_tol = 1e-9;
  double opt_tol = 1e-9;
  double pivot_tol = 1e-9;
  int degenerate_switch = 50;  // consecutive degenerate pivots before Bland's rule
  int refactor_every = 64;
};

namespace detail {

class DualSimplex {
 public:
  DualSimplex(const Mat& A, const Vec& b, const Vec& c, const LPOptions& opt)
      : A_(A), b_(b), c_(c), opt_(opt), m_(A.rows()), n_(A.cols()) {}

  LPOutcome solve() {
    LPOutcome out;
    init_artificial_basis();
    // Phase 1: drive the artificial variables to zero.
    cost_.assign(static_cast<std::size_t>(m_), 0.0);
    iterate(true, out.iterations);
    double infeas = 0.0;
    for (Eigen::Index i = 0; i < n_; ++i)
      if (basis_[static_cast<std::size_t>(i)] < 0) infeas += xB_(i);
    if (infeas > opt_.feas_tol * std::max(1.0, c_.cwiseAbs().maxCoeff())) {
      out.status = LPStatus::Unbounded;  // dual infeasible; caller disambiguates
      dual_infeasible_ = true;
      return out;
    }
    drive_out_artificials();
    // Phase 2: minimise b^T y.
    for (Eigen::Index k = 0; k < m_; ++k) cost_[static_cast<std::size_t>(k)] = b_(k);
    const bool bounded = iterate(false, out.iterations);
    if (!bounded) {
      out.status = LPStatus::Infeasible;  // dual unbounded below: primal infeasible
      return out;
    }
    out.status = LPStatus::Optimal;
    out.point = multipliers();
    out.objective = c_.dot(out.point);
    return out;
  }

  bool dual_infeasible() const { return dual_infeasible_; }

 private:
  // Basis entries: k >= 0 is constraint row k of A; -(j+1) is artificial j.
  Vec column(int idx) const {
    if (idx >= 0) return A_.row(idx).transpose();
    Vec e = Vec::Zero(n_);
    const Eigen::Index j = -idx - 1;
    e(j) = sign_(j);
    return e;
  }
  double cost(int idx) const { return idx >= 0 ? cost_[static_cast<std::size_t>(idx)] : art_cost_; }

  void init_artificial_basis() {
    sign_.resize(n_);
    basis_.resize(static_cast<std::size_t>(n_));
    for (Eigen::Index j = 0; j < n_; ++j) {
      sign_(j) = c_(j) >= 0.0 ? 1.0 : -1.0;
      basis_[static_cast<std::size_t>(j)] = -static_cast<int>(j) - 1;
    }
    in_basis_.assign(static_cast<std::size_t>(m_), false);
    Binv_ = sign_.asDiagonal();
    xB_ = c_.cwiseAbs();
  }

  void refactor() {
    Mat B(n_, n_);
    for (Eigen::Index i = 0; i < n_; ++i) B.col(i) = column(basis_[static_cast<std::size_t>(i)]);
    Eigen::FullPivLU<Mat> lu(B);
    if (!lu.isInvertible()) throw NumericalError("lp_solve: basis became singular");
    Binv_ = lu.inverse();
    xB_ = Binv_ * c_;
    for (Eigen::Index i = 0; i < n_; ++i)
      if (xB_(i) < 0.0 && xB_(i) > -opt_.feas_tol) xB_(i) = 0.0;
  }

  Vec multipliers() const {
    Vec cB(n_);
    for (Eigen::Index i = 0; i < n_; ++i) cB(i) = cost(basis_[static_cast<std::size_t>(i)]);
    return Binv_.transpose() * cB;
  }

  void pivot(Eigen::Index r, int entering, const Vec& u) {
    const int leaving = basis_[static_cast<std::size_t>(r)];
    if (leaving >= 0) in_basis_[static_cast<std::size_t>(leaving)] = false;
    const double theta = xB_(r) / u(r);
    xB_ -= theta * u;
    xB_(r) = theta;
    for (Eigen::Index i = 0; i < n_; ++i)
      if (xB_(i) < 0.0) xB_(i) = 0.0;
    const Vec prow = Binv_.row(r) / u(r);
    for (Eigen::Index i = 0; i < n_; ++i) {
      if (i == r || u(i) == 0.0) continue;
      Binv_.row(i) -= u(i) * prow.transpose();
    }
    Binv_.row(r) = prow.transpose();
    basis_[static_cast<std::size_t>(r)] = entering;
    in_basis_[static_cast<std::size_t>(entering)] = true;
    if (++since_refactor_ >= opt_.refactor_every) {
      refactor();
      since_refactor_ = 0;
    }
  }

  // Returns false when the current phase objective is unbounded below.
  bool iterate(bool phase1, int& iters) {
    art_cost_ = phase1 ? 1.0 : 0.0;
    int degenerate = 0;
    const double cscale = phase1 ? 1.0 : std::max(1.0, b_.cwiseAbs().maxCoeff());
    const long limit = 50L * (m_ + n_) + 1000;
    for (long it = 0;; ++it) {
      if (it > limit) throw NumericalError("lp_solve: iteration limit reached (cycling or breakdown)");
      const Vec pi = multipliers();
      const bool bland = degenerate >= opt_.degenerate_switch;
      int q = -1;
      double best = -opt_.opt_tol * cscale;
      for (Eigen::Index k = 0; k < m_; ++k) {
        if (in_basis_[static_cast<std::size_t>(k)]) continue;
        const double d = cost_[static_cast<std::size_t>(k)] - A_.row(k).dot(pi);
        if (!std::isfinite(d)) throw NumericalError("lp_solve: non-finite reduced cost");
        if (bland) {
          if (d < -opt_.opt_tol * cscale) {
            q = static_cast<int>(k);
            break;
          }
        } else if (d < best) {
          best = d;
          q = static_cast<int>(k);
        }
      }
      if (q < 0) return true;
      const Vec u = Binv_ * A_.row(q).transpose();
      Eigen::Index r = -1;
      double ratio = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < n_; ++i) {
        if (u(i) <= opt_.pivot_tol) continue;
        const double t = xB_(i) / u(i);
        bool take = false;
        if (r < 0 || t < ratio - 1e-12) {
          take = true;
        } else if (t <= ratio + 1e-12) {
          // Ties: Bland picks the smallest variable index, otherwise prefer the larger pivot.
          take = bland ? var_order(basis_[static_cast<std::size_t>(i)]) < var_order(basis_[static_cast<std::size_t>(r)])
                       : u(i) > u(r);
        }
        if (take) {
          r = i;
          ratio = std::min(ratio, t);
        }
      }
      if (r < 0) return false;
      degenerate = ratio <= opt_.feas_tol ? degenerate + 1 : 0;
      pivot(r, q, u);
      ++iters;
    }
  }

  // Artificials first, then constraint rows, for Bland's ordering.
  long var_order(int idx) const { return idx < 0 ? (-idx - 1) : n_ + idx; }

  void drive_out_artificials() {
    for (Eigen::Index r = 0; r < n_; ++r) {
      if (basis_[static_cast<std::size_t>(r)] >= 0) continue;
      const Vec brow = Binv_.row(r).transpose();
      int best = -1;
      double mag = 1e-7;
      for (Eigen::Index k = 0; k < m_; ++k) {
        if (in_basis_[static_cast<std::size_t>(k)]) continue;
        const double v = std::abs(A_.row(k).dot(brow));
        if (v > mag) {
          mag = v;
          best = static_cast<int>(k);
        }
      }
      if (best < 0) continue;  // redundant equality: artificial stays at zero
      const Vec u = Binv_ * A_.row(best).transpose();
      xB_(r) = 0.0;
      const Vec prow = Binv_.row(r) / u(r);
      for (Eigen::Index i = 0; i < n_; ++i) {
        if (i == r || u(i) == 0.0) continue;
        Binv_.row(i) -= u(i) * prow.transpose();
      }
      Binv_.row(r) = prow.transpose();
      basis_[static_cast<std::size_t>(r)] = best;
      in_basis_[static_cast<std::size_t>(best)] = true;
    }
    refactor();
    since_refactor_ = 0;
  }

  const Mat& A_;
  const Vec& b_;
  const Vec& c_;
  LPOptions opt_;
  Eigen::Index m_, n_;
  Vec sign_;
  std::vector<int> basis_;
  std::vector<bool> in_basis_;
  std::vector<double> cost_;
  double art_cost_ = 1.0;
  Mat Binv_;
  Vec xB_;
  int since_refactor_ = 0;
  bool dual_infeasible_ = false;
};

}  // namespace detail

/// max c^T z subject to A z <= b. Infeasible and unbounded problems are reported
/// through the status; numerical breakdown raises NumericalError.
inline LPOutcome lp_solve(const Mat& A, const Vec& b, const Vec& c, const LPOptions& opt = {}) {
  require_dim(b.size(), A.rows(), "lp_solve b");
  require_dim(c.size(), A.cols(), "lp_solve c");
  if (A.cols() == 0) throw InvalidArgument("lp_solve: no variables");
  if (!A.allFinite() || !b.allFinite() || !c.allFinite()) throw InvalidArgument("lp_solve: non-finite input");
  detail::DualSimplex s(A, b, c, opt);
  LPOutcome out = s.solve();
  if (s.dual_infeasible()) {
    // Either the primal is infeasible or unbounded in direction c: settle it with c = 0.
    const Vec zero = Vec::Zero(A.cols());
    detail::DualSimplex f(A, b, zero, opt);
    const auto feas = f.solve();
    out.iterations += feas.iterations;
    out.status = feas.status == LPStatus::Optimal ? LPStatus::Unbounded : LPStatus::Infeasible;
  }
  return out;
}

/// Some point of {A z <= b}, or status Infeasible.
inline LPOutcome lp_feasible_point(const Mat& A, const Vec& b, const LPOptions& opt = {}) {
  return lp_solve(A, b, Vec::Zero(A.cols()), opt);
}

struct ChebyshevResult {
  LPStatus status = LPStatus::Infeasible;
  Vec center;
  double radius = 0.0;
  int iterations = 0;
};

/// Largest ball inside {A z <= b}: max r s.t. a_k^T z + r ||a_k|| <= b_k.
/// A negative optimal radius means the polytope is empty.
inline ChebyshevResult chebyshev_lp(const Mat& A, const Vec& b, const LPOptions& opt = {}) {
  const Eigen::Index n = A.cols();
  Mat Ar(A.rows(), n + 1);
  Ar.leftCols(n) = A;
  Ar.col(n) = A.rowwise().norm();
  Vec c = Vec::Zero(n + 1);
  c(n) = 1.0;
  const auto lp = lp_solve(Ar, b, c, opt);
  ChebyshevResult r;
  r.status = lp.status;
  r.iterations = lp.iterations;
  if (lp.status == LPStatus::Optimal) {
    r.center = lp.point.head(n);
    r.radius = lp.point(n);
  }
  return r;
}

}  // namespace kl
