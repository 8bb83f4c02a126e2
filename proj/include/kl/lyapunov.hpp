#pragma once

// Lyapunov basis V_i = |psi_i|^2 / 2 built from stable Koopman eigenfunctions,
// the error model |eps_i| <= kappa_i V_i^2 + omega_i, the forward-invariance
// interval and sufficient condition, softmax weights, products and Gram forms.

#include "kl/any_dictionary.hpp"
#include "kl/core.hpp"
#include "kl/koopman.hpp"
#include "kl/polynomial.hpp"
#include "kl/systems.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace kl {

/// One basis element: a product of one or more base eigenfunctions.
struct LyapunovEntry {
  std::vector<int> factors;  // columns of LyapunovBasis::vectors
  Complex lambda;            // sum of the factor eigenvalues
  double eps_hat = 0.0;
  double kappa = 0.0;
  double omega = 0.0;
  bool bounds_fitted = false;

  /// Exponential rate of V along an exact eigenfunction: dV/dt = 2 Re(lambda) V.
  double rate() const { return 2.0 * lambda.real(); }
};

class LyapunovBasis {
 public:
  AnyDictionary dict;
  CMat vectors;                     // base eigenvectors v (N x m)
  std::vector<Complex> base_lambda;  // eigenvalue of each column
  std::vector<int> spectrum_index;   // provenance of each column
  std::vector<LyapunovEntry> entries;

  int size() const noexcept { return static_cast<int>(entries.size()); }
  int dim() const { return dict.dim(); }

  /// Base eigenfunctions psi at every column of X (m x S).
  CMat eval_psi(const Mat& X) const {
    return vectors.transpose() * dict.eval_batch(X).cast<Complex>();
  }

  /// Entry eigenfunctions (products of base factors) from base values (M x S).
  CMat entry_values(const CMat& psi) const {
    CMat out(size(), psi.cols());
    for (int e = 0; e < size(); ++e) {
      out.row(e).setOnes();
      for (int f : entries[static_cast<std::size_t>(e)].factors) out.row(e).array() *= psi.row(f).array();
    }
    return out;
  }
};

/// Basis from selected spectrum indices; error bounds are filled in later.
inline LyapunovBasis make_basis(const Spectrum& sp, const std::vector<int>& idx, const AnyDictionary& dict) {
  LyapunovBasis b;
  b.dict = dict;
  b.vectors.resize(dict.size(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) {
    const auto& p = sp.pairs.at(static_cast<std::size_t>(idx[c]));
    require_dim(p.v.size(), dict.size(), "make_basis");
    b.vectors.col(static_cast<Eigen::Index>(c)) = p.v;
    b.base_lambda.push_back(p.lambda);
    b.spectrum_index.push_back(idx[c]);
    b.entries.push_back({{static_cast<int>(c)}, p.lambda});
  }
  return b;
}

/// Rescales every base eigenvector so that max |psi_i| over the columns of X is 1.
/// Eigenfunctions are defined up to scale; this keeps V_i = O(1) on the data so the
/// unit box of Algorithm 1 does not bind. Call before products are formed.
inline void normalize_basis(LyapunovBasis& b, const Mat& X) {
  if (X.cols() == 0) throw InvalidArgument("normalize_basis: no samples");
  const CMat psi = b.eval_psi(X);
  for (Eigen::Index c = 0; c < b.vectors.cols(); ++c) {
    const double m = psi.row(c).cwiseAbs().maxCoeff();
    if (!(m > 0.0) || !std::isfinite(m)) throw NumericalError("normalize_basis: eigenfunction vanishes on the data");
    b.vectors.col(c) /= m;
  }
}

/// V_i(x) = |psi_i(x)|^2 / 2 at every column of X (M x S).
inline Mat eval_basis_batch(const LyapunovBasis& b, const Mat& X) {
  return 0.5 * b.entry_values(b.eval_psi(X)).cwiseAbs2();
}

inline Vec eval_basis(const LyapunovBasis& b, const Vec& x) {
  require_dim(x.size(), b.dim(), "eval_basis");
  return eval_basis_batch(b, x);
}

/// dV_i/dt along f: Re(conj(P) dP/dt) with P the entry eigenfunction and
/// dpsi/dt = v^T (grad Phi) f. Network dictionaries raise UnsupportedError.
inline Vec eval_basis_dot_analytic(const LyapunovBasis& b, const VectorField& f, const Vec& x) {
  require_dim(x.size(), b.dim(), "eval_basis_dot_analytic");
  require_dim(f.dim(), b.dim(), "eval_basis_dot_analytic field");
  const Mat J = b.dict.jacobian(x);
  const Vec phi = b.dict.eval(x);
  const Vec lie = J * f(x);
  const CVec psi = b.vectors.transpose() * phi.cast<Complex>();
  const CVec dpsi = b.vectors.transpose() * lie.cast<Complex>();
  Vec out(b.size());
  for (int e = 0; e < b.size(); ++e) {
    const auto& fac = b.entries[static_cast<std::size_t>(e)].factors;
    Complex P(1.0, 0.0), dP(0.0, 0.0);
    for (std::size_t a = 0; a < fac.size(); ++a) {
      Complex term = dpsi(fac[a]);
      for (std::size_t c = 0; c < fac.size(); ++c)
        if (c != a) term *= psi(fac[c]);
      dP += term;
      P *= psi(fac[a]);
    }
    out(e) = (std::conj(P) * dP).real();
  }
  return out;
}

inline Mat eval_basis_dot_analytic_batch(const LyapunovBasis& b, const VectorField& f, const Mat& X) {
  Mat out(b.size(), X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) out.col(c) = eval_basis_dot_analytic(b, f, X.col(c));
  return out;
}

/// Forward-difference estimate (V(Y) - V(X)) / dt, per basis element and sample (M x S).
inline Mat eval_basis_dot_data(const LyapunovBasis& b, const Mat& X, const Mat& Y, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("eval_basis_dot_data: dt must be positive");
  require_dim(Y.cols(), X.cols(), "eval_basis_dot_data");
  return (eval_basis_batch(b, Y) - eval_basis_batch(b, X)) / dt;
}

// ---------------------------------------------------------------------------
// Error model

inline constexpr int kKappaGridPoints = 81;
inline constexpr double kKappaMin = 1e-4;
inline constexpr double kKappaMax = 1e4;

inline double kappa_grid(int k) {
  const double lo = std::log10(kKappaMin), hi = std::log10(kKappaMax);
  return std::pow(10.0, lo + (hi - lo) * k / (kKappaGridPoints - 1));
}

struct ErrorBound {
  double eps_hat = 0.0;
  double kappa = 0.0;
  double omega = 0.0;
};

/// Tightest omega with |eps| <= kappa V^2 + omega at every sample (never negative).
inline double omega_for_kappa(const Eigen::Ref<const Vec>& eps, const Eigen::Ref<const Vec>& V, double kappa) {
  require_dim(V.size(), eps.size(), "omega_for_kappa");
  double w = 0.0;
  for (Eigen::Index s = 0; s < eps.size(); ++s) w = std::max(w, std::abs(eps(s)) - kappa * V(s) * V(s));
  return w;
}

/// Fit |eps| <= kappa V^2 + omega: for each kappa on the grid omega is the tightest
/// envelope; the pair with the smallest omega wins, ties going to the smaller kappa.
inline ErrorBound fit_error_bound(const Eigen::Ref<const Vec>& eps, const Eigen::Ref<const Vec>& V) {
  require_dim(V.size(), eps.size(), "fit_error_bound");
  ErrorBound out;
  out.eps_hat = eps.size() ? eps.cwiseAbs().maxCoeff() : 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < kKappaGridPoints; ++k) {
    const double kap = kappa_grid(k);
    const double w = omega_for_kappa(eps, V, kap);
    if (w < best - 1e-12 * (1.0 + out.eps_hat)) {
      best = w;
      out.kappa = kap;
      out.omega = w;
    }
  }
  return out;
}

/// eps_i = dV_i/dt - 2 Re(lambda_i) V_i per sample (M x S).
inline Mat error_residuals(const LyapunovBasis& b, const Mat& V, const Mat& Vdot) {
  require_dim(V.rows(), b.size(), "error_residuals");
  Mat eps = Vdot;
  for (int e = 0; e < b.size(); ++e) eps.row(e) -= b.entries[static_cast<std::size_t>(e)].rate() * V.row(e);
  return eps;
}

/// Fills eps_hat, kappa, omega of every entry from basis values and derivatives (M x S).
inline void estimate_error_bounds(LyapunovBasis& b, const Mat& V, const Mat& Vdot) {
  require_dim(Vdot.rows(), V.rows(), "estimate_error_bounds");
  require_dim(Vdot.cols(), V.cols(), "estimate_error_bounds");
  if (V.cols() < 10) throw InvalidArgument("estimate_error_bounds: needs at least 10 samples");
  const Mat eps = error_residuals(b, V, Vdot);
  for (int e = 0; e < b.size(); ++e) {
    const Vec r = eps.row(e).transpose();
    const Vec v = V.row(e).transpose();
    const auto fit = fit_error_bound(r, v);
    auto& ent = b.entries[static_cast<std::size_t>(e)];
    ent.eps_hat = fit.eps_hat;
    ent.kappa = fit.kappa;
    ent.omega = fit.omega;
    ent.bounds_fitted = true;
  }
}

/// Bounds from paired snapshot data using the forward-difference derivative.
inline void estimate_error_bounds_data(LyapunovBasis& b, const Mat& X, const Mat& Y, double dt) {
  estimate_error_bounds(b, eval_basis_batch(b, X), eval_basis_dot_data(b, X, Y, dt));
}

/// Bounds from the known vector field at sample points (analytic derivative).
inline void estimate_error_bounds_field(LyapunovBasis& b, const VectorField& f, const Mat& X) {
  estimate_error_bounds(b, eval_basis_batch(b, X), eval_basis_dot_analytic_batch(b, f, X));
}

/// Empirical residual eps_hat for every stable candidate of the spectrum, indexed like
/// the spectrum (unstable entries get +inf). Used to rank "top M" eigenfunctions.
inline std::vector<double> eigen_residual_scores(const Spectrum& sp, const AnyDictionary& dict, const Mat& X,
                                                 const Mat& Y, double dt, double margin = 1e-6) {
  std::vector<double> scores(sp.size(), std::numeric_limits<double>::infinity());
  const auto idx = stable_candidates(sp, margin);
  if (idx.empty()) return scores;
  auto b = make_basis(sp, idx, dict);
  const Mat V = eval_basis_batch(b, X);
  const Mat eps = error_residuals(b, V, eval_basis_dot_data(b, X, Y, dt));
  for (std::size_t c = 0; c < idx.size(); ++c)
    scores[static_cast<std::size_t>(idx[c])] = eps.row(static_cast<Eigen::Index>(c)).cwiseAbs().maxCoeff();
  return scores;
}

// ---------------------------------------------------------------------------
// Weights, invariance intervals and the sufficient condition

/// alpha_i proportional to exp(-eps_hat_i), normalised to sum 1.
inline Vec softmax_weights(const Vec& eps_hat) {
  if (eps_hat.size() == 0) return eps_hat;
  const double m = eps_hat.minCoeff();
  Vec a = (-(eps_hat.array() - m)).exp().matrix();
  return a / a.sum();
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Levels v with kappa v^2 + lambda v + omega < 0 (lambda < 0): the open interval
/// between the two positive roots, (omega / -lambda, inf) when kappa = 0, or nothing.
inline std::optional<Interval> invariance_interval(double lambda, double kappa, double omega) {
  if (!(lambda < 0.0)) throw InvalidArgument("invariance_interval: lambda must be negative");
  if (kappa < 0.0 || omega < 0.0) throw InvalidArgument("invariance_interval: kappa and omega must be non-negative");
  if (kappa == 0.0) return Interval{omega / -lambda, std::numeric_limits<double>::infinity()};
  const double disc = lambda * lambda - 4.0 * kappa * omega;
  if (!(disc > 0.0)) return std::nullopt;
  // Cancellation-free pair: q = -(lambda - sqrt(disc)) / 2 > 0, roots q/kappa and omega/q.
  const double q = 0.5 * (-lambda + std::sqrt(disc));
  return Interval{omega / q, q / kappa};
}

struct Theorem1Term {
  double rate;  // decay rate of V_i (negative)
  double kappa;
  double omega;
};

struct Theorem1Result {
  double gamma = 0.0;
  double beta = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  bool satisfied = false;
};

/// Relative slack in the comparison below. With g_i the upper root,
/// kappa_i g_i^2 + omega_i = -rate_i g_i, so for a single element both sides agree
/// exactly and the verdict would otherwise hinge on rounding.
inline constexpr double kTheorem1RelTol = 1e-12;

/// gamma = min alpha_i g_i, beta = min(-rate_i), satisfied iff
/// gamma beta >= sum alpha_i (kappa_i g_i^2 + omega_i) with g_i the interval upper end.
/// Because the right side equals sum alpha_i (-rate_i) g_i >= gamma beta, the
/// condition holds only with equality (in particular for M = 1).
inline Theorem1Result theorem1_check(const std::vector<Theorem1Term>& terms, const Vec& alpha) {
  require_dim(alpha.size(), static_cast<Eigen::Index>(terms.size()), "theorem1_check");
  if (terms.empty()) throw InvalidArgument("theorem1_check: empty basis");
  Theorem1Result r;
  r.gamma = std::numeric_limits<double>::infinity();
  r.beta = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto iv = invariance_interval(terms[i].rate, terms[i].kappa, terms[i].omega);
    if (!iv) throw InvalidArgument("theorem1_check: basis element " + std::to_string(i) + " has no invariance interval");
    const double a = alpha(static_cast<Eigen::Index>(i));
    r.gamma = std::min(r.gamma, a * iv->high);
    r.beta = std::min(r.beta, -terms[i].rate);
    r.rhs += a * (terms[i].kappa * iv->high * iv->high + terms[i].omega);
  }
  r.lhs = r.gamma * r.beta;
  r.satisfied = r.lhs >= r.rhs - kTheorem1RelTol * std::max(std::abs(r.lhs), std::abs(r.rhs));
  return r;
}

inline Theorem1Result theorem1_check(const LyapunovBasis& b, const Vec& alpha) {
  std::vector<Theorem1Term> t;
  for (const auto& e : b.entries) t.push_back({e.rate(), e.kappa, e.omega});
  return theorem1_check(t, alpha);
}

/// Lower bound on omega admitted by the linear comparison argument:
/// (p + lambda)^2 / (4 kappa) - q^2 / (4 p^2).
inline double lemma1_min_omega(double lambda, double kappa, double p, double q) {
  return (p + lambda) * (p + lambda) / (4.0 * kappa) - q * q / (4.0 * p * p);
}

// ---------------------------------------------------------------------------
// Candidates, products, Gram forms

struct CandidateFunction {
  Vec alpha;
  double gamma = 0.0;
  double beta = 0.0;
};

inline double eval_candidate(const LyapunovBasis& b, const Vec& alpha, const Vec& x) {
  return alpha.dot(eval_basis(b, x));
}

/// Appends psi_i psi_j for every unordered pair i <= j of the current entries.
inline LyapunovBasis augment_products(const LyapunovBasis& b) {
  LyapunovBasis out = b;
  const int M = b.size();
  for (int i = 0; i < M; ++i)
    for (int j = i; j < M; ++j) {
      LyapunovEntry e;
      e.factors = b.entries[static_cast<std::size_t>(i)].factors;
      const auto& fj = b.entries[static_cast<std::size_t>(j)].factors;
      e.factors.insert(e.factors.end(), fj.begin(), fj.end());
      e.lambda = b.entries[static_cast<std::size_t>(i)].lambda + b.entries[static_cast<std::size_t>(j)].lambda;
      out.entries.push_back(std::move(e));
    }
  return out;
}

struct GramForm {
  MonomialDictionary monomials;
  Mat Q;
};

namespace detail {

// Complex polynomial as (real part, imaginary part).
struct CPoly {
  Polynomial re, im;
};

inline CPoly cmul(const CPoly& a, const CPoly& b) {
  Polynomial re = a.re * b.re + (-1.0) * (a.im * b.im);
  Polynomial im = a.re * b.im + a.im * b.re;
  return {std::move(re), std::move(im)};
}

inline CPoly eigenfunction_poly(const MonomialDictionary& d, const CVec& v) {
  return {d.combination(v.real()), d.combination(v.imag())};
}

inline CPoly entry_poly(const LyapunovBasis& b, const LyapunovEntry& e) {
  const auto& d = b.dict.monomial();
  CPoly p{Polynomial::constant(d.dim(), 1.0), Polynomial(d.dim())};
  for (int f : e.factors) p = cmul(p, eigenfunction_poly(d, b.vectors.col(f)));
  return p;
}

inline Vec coefficients(const Polynomial& p, const MonomialDictionary& d) {
  Vec c = Vec::Zero(d.size());
  for (const auto& [e, v] : p.terms()) {
    const int k = d.index_of(e);
    if (k < 0) throw InvalidArgument("coefficients: term outside the monomial vector");
    c(k) = v;
  }
  return c;
}

}  // namespace detail

/// Real polynomial V(x) = sum alpha_i |P_i(x)|^2 / 2 (monomial dictionaries only).
inline Polynomial candidate_polynomial(const LyapunovBasis& b, const Vec& alpha) {
  require_dim(alpha.size(), b.size(), "candidate_polynomial");
  Polynomial V(b.dim());
  for (int e = 0; e < b.size(); ++e) {
    const auto p = detail::entry_poly(b, b.entries[static_cast<std::size_t>(e)]);
    V += (0.5 * alpha(e)) * (p.re * p.re + p.im * p.im);
  }
  return V;
}

/// Q = sum_i (alpha_i/2)(Re c_i Re c_i^T + Im c_i Im c_i^T) over the monomial vector m(x)
/// that spans every entry (degree d, or 2d once products are present), so V = m^T Q m.
/// The identity is checked at 100 random points; a mismatch raises NumericalError.
inline GramForm gram_matrix(const LyapunovBasis& b, const Vec& alpha, std::uint64_t seed = 0) {
  require_dim(alpha.size(), b.size(), "gram_matrix");
  const auto& d = b.dict.monomial();
  std::size_t max_factors = 1;
  for (const auto& e : b.entries) max_factors = std::max(max_factors, e.factors.size());
  GramForm g;
  g.monomials = max_factors == 1 ? d : MonomialDictionary(d.dim(), d.degree() * static_cast<int>(max_factors));
  g.Q = Mat::Zero(g.monomials.size(), g.monomials.size());
  for (int e = 0; e < b.size(); ++e) {
    const auto& ent = b.entries[static_cast<std::size_t>(e)];
    Vec cr, ci;
    if (ent.factors.size() == 1 && max_factors == 1) {
      cr = b.vectors.col(ent.factors[0]).real();
      ci = b.vectors.col(ent.factors[0]).imag();
    } else {
      const auto p = detail::entry_poly(b, ent);
      cr = detail::coefficients(p.re, g.monomials);
      ci = detail::coefficients(p.im, g.monomials);
    }
    g.Q.noalias() += (0.5 * alpha(e)) * (cr * cr.transpose() + ci * ci.transpose());
  }
  g.Q = 0.5 * (g.Q + g.Q.transpose());

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    Vec x(d.dim());
    for (Eigen::Index j = 0; j < x.size(); ++j) x(j) = uni(rng);
    const Vec m = g.monomials.eval(x);
    const double lhs = m.dot(g.Q * m);
    const double rhs = eval_candidate(b, alpha, x);
    if (std::abs(lhs - rhs) > 1e-8 * std::max(std::abs(rhs), 1e-300) && std::abs(lhs - rhs) > 1e-14)
      throw NumericalError("gram_matrix: m^T Q m disagrees with the basis evaluation");
  }
  return g;
}

inline double gram_eval(const GramForm& g, const Vec& x) {
  const Vec m = g.monomials.eval(x);
  return m.dot(g.Q * m);
}

inline double min_eigenvalue(const Mat& Q) {
  Eigen::SelfAdjointEigenSolver<Mat> es(Q, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

}  // namespace kl
