#pragma once

// Koopman matrix estimation (closed-form EDMD, multi-step refinement),
// spectral decomposition and eigenfunction evaluation.

#include "kl/any_dictionary.hpp"
#include "kl/core.hpp"
#include "kl/linalg.hpp"
#include "kl/systems.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace kl {

struct KoopmanModel {
  AnyDictionary dict;
  Mat K;
  double dt = 0.0;
  FitDiagnostics diagnostics;
};

inline KoopmanModel edmd_fit(const SnapshotSet& data, const AnyDictionary& dict) {
  require_dim(data.dim(), dict.dim(), "edmd_fit");
  if (data.size() == 0) throw InvalidArgument("edmd_fit: needs at least one snapshot pair");
  if (!(data.dt > 0.0)) throw InvalidArgument("edmd_fit: dt must be positive");
  const Mat PhiX = dict.eval_batch(data.X);
  const Mat PhiY = dict.eval_batch(data.Y);
  KoopmanModel m;
  m.dict = dict;
  m.dt = data.dt;
  const Mat Gxx = PhiX * PhiX.transpose();
  const Mat Gxy = PhiY * PhiX.transpose();
  m.K = Gxy * detail::pinv_symmetric(Gxx, &m.diagnostics);
  if (!m.K.allFinite()) throw NumericalError("edmd_fit: non-finite Koopman matrix");
  m.diagnostics.residual_norm = (m.K * PhiX - PhiY).norm();
  return m;
}

// ---------------------------------------------------------------------------
// Multi-step refinement with a fixed dictionary

/// Lifted windows: Z[k] holds Phi(x_k) of every window as columns (k = 0..T).
struct LiftedWindows {
  std::vector<Mat> Z;
  int horizon() const { return static_cast<int>(Z.size()) - 1; }
  Eigen::Index count() const { return Z.empty() ? 0 : Z[0].cols(); }
};

template <class Dict>
LiftedWindows lift_windows(const std::vector<std::vector<Vec>>& trajectories, const Dict& dict, int horizon,
                           int stride = 1) {
  if (horizon < 1) throw InvalidArgument("multistep_fit: horizon must be >= 1");
  std::vector<std::pair<std::size_t, std::size_t>> starts;
  for (std::size_t t = 0; t < trajectories.size(); ++t)
    for (std::size_t s = 0; s + static_cast<std::size_t>(horizon) < trajectories[t].size();
         s += static_cast<std::size_t>(stride))
      starts.emplace_back(t, s);
  if (starts.empty()) throw InvalidArgument("multistep_fit: no trajectory of length >= T + 1");
  const int n = dict.dim();
  LiftedWindows w;
  for (int k = 0; k <= horizon; ++k) {
    Mat X(n, static_cast<Eigen::Index>(starts.size()));
    for (std::size_t c = 0; c < starts.size(); ++c)
      X.col(static_cast<Eigen::Index>(c)) = trajectories[starts[c].first][starts[c].second + static_cast<std::size_t>(k)];
    w.Z.push_back(dict.eval_batch(X));
  }
  return w;
}

/// Mean over windows of sum_{i=1..T} ||Z_i - K^i Z_0||^2.
inline double multistep_loss(const LiftedWindows& w, const Mat& K, Mat* grad = nullptr) {
  const int T = w.horizon();
  const double scale = 1.0 / static_cast<double>(w.count());
  std::vector<Mat> P(static_cast<std::size_t>(T) + 1);
  P[0] = w.Z[0];
  double loss = 0.0;
  std::vector<Mat> R(static_cast<std::size_t>(T) + 1);
  for (int k = 1; k <= T; ++k) {
    P[k] = K * P[k - 1];
    R[k] = w.Z[k] - P[k];
    loss += R[k].squaredNorm();
  }
  if (grad) {
    grad->setZero(K.rows(), K.cols());
    Mat G = Mat::Zero(K.rows(), w.count());
    for (int k = T; k >= 1; --k) {
      G -= 2.0 * scale * R[k];
      grad->noalias() += G * P[k - 1].transpose();
      if (k > 1) G = K.transpose() * G;
    }
  }
  return loss * scale;
}

struct MultistepConfig {
  int max_iters = 5000;
  double grad_tol = 1e-12;  // stop when ||grad||_F <= grad_tol * (1 + loss)
  int stride = 1;
};

struct MultistepResult {
  KoopmanModel model;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int iterations = 0;
};

/// Gradient descent on the multi-step prediction loss with Barzilai-Borwein
/// step proposals and Armijo backtracking; every accepted step decreases the loss.
inline MultistepResult multistep_fit(const std::vector<std::vector<Vec>>& trajectories, const AnyDictionary& dict,
                                     const Mat& K0, int horizon, double dt, const MultistepConfig& cfg = {}) {
  require_dim(K0.rows(), dict.size(), "multistep_fit K0 rows");
  require_dim(K0.cols(), dict.size(), "multistep_fit K0 cols");
  const auto w = lift_windows(trajectories, dict, horizon, cfg.stride);
  MultistepResult res;
  Mat K = K0;
  Mat g;
  double f = multistep_loss(w, K, &g);
  if (!std::isfinite(f)) throw NumericalError("multistep_fit: non-finite initial loss");
  res.initial_loss = f;
  double step = 1.0 / std::max(g.norm(), 1e-300);
  Mat Kprev, gprev;
  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    const double gn2 = g.squaredNorm();
    if (std::sqrt(gn2) <= cfg.grad_tol * (1.0 + f) || gn2 == 0.0) break;
    if (it > 0) {
      const Mat s = K - Kprev;
      const Mat y = g - gprev;
      const double sy = (s.array() * y.array()).sum();
      if (sy > 0.0) step = s.squaredNorm() / sy;
    }
    bool accepted = false;
    Mat Knew, gnew;
    double fnew = 0.0;
    for (int bt = 0; bt < 60; ++bt) {
      Knew = K - step * g;
      fnew = multistep_loss(w, Knew, &gnew);
      if (std::isfinite(fnew) && fnew <= f - 1e-4 * step * gn2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    Kprev = std::move(K);
    gprev = std::move(g);
    K = std::move(Knew);
    g = std::move(gnew);
    f = fnew;
  }
  res.iterations = it;
  res.final_loss = f;
  res.model.dict = dict;
  res.model.K = K;
  res.model.dt = dt;
  return res;
}

// ---------------------------------------------------------------------------
// Spectrum

struct EigenPair {
  Complex mu;
  Complex lambda;
  CVec v;  // eigenvector of K^T, unit 2-norm
  int conjugate = -1;  // index of the conjugate partner in the spectrum, or -1
};

struct Spectrum {
  std::vector<EigenPair> pairs;
  int dropped_zero = 0;  // eigenvalues with mu = 0 (lambda undefined)
  double dt = 0.0;

  std::size_t size() const noexcept { return pairs.size(); }
  const EigenPair& operator[](std::size_t i) const { return pairs[i]; }
};

/// Relative threshold under which a discrete eigenvalue is treated as zero.
inline constexpr double kZeroEigenvalue = 1e-13;

namespace detail {

inline void fix_phase(CVec& v) {
  Eigen::Index k = 0;
  v.cwiseAbs().maxCoeff(&k);
  const Complex p = v(k) / std::abs(v(k));
  v /= p;
  v(k) = Complex(std::abs(v(k)), 0.0);
}

}  // namespace detail

/// Eigenpairs of K^T with lambda = log(mu)/dt on the principal branch, sorted by
/// Re(lambda) then Im(lambda). Vectors have unit norm and their largest entry real positive.
inline Spectrum eigen_decompose(const Mat& K, double dt) {
  if (K.rows() != K.cols()) throw DimensionError("eigen_decompose: K must be square");
  if (!K.allFinite()) throw NumericalError("eigen_decompose: K is not finite");
  if (!(dt > 0.0)) throw InvalidArgument("eigen_decompose: dt must be positive");
  Eigen::EigenSolver<Mat> es(K.transpose(), true);
  if (es.info() != Eigen::Success) throw NumericalError("eigen_decompose: eigensolver did not converge");
  const CVec mu = es.eigenvalues();
  const CMat V = es.eigenvectors();
  const double scale = std::max(1.0, K.norm());
  Spectrum sp;
  sp.dt = dt;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    if (std::abs(mu(i)) <= kZeroEigenvalue * scale) {
      ++sp.dropped_zero;
      continue;
    }
    EigenPair p;
    p.mu = mu(i);
    if (p.mu.imag() == 0.0) p.mu = Complex(p.mu.real(), 0.0);  // drop signed zero
    p.lambda = std::log(p.mu) / dt;
    p.v = V.col(i);
    p.v.normalize();
    detail::fix_phase(p.v);
    if (p.mu.imag() == 0.0) p.v = p.v.real().cast<Complex>();
    sp.pairs.push_back(std::move(p));
  }
  std::stable_sort(sp.pairs.begin(), sp.pairs.end(), [](const EigenPair& a, const EigenPair& b) {
    if (a.lambda.real() != b.lambda.real()) return a.lambda.real() < b.lambda.real();
    return a.lambda.imag() < b.lambda.imag();
  });
  for (std::size_t i = 0; i < sp.pairs.size(); ++i) {
    if (sp.pairs[i].mu.imag() == 0.0 || sp.pairs[i].conjugate >= 0) continue;
    for (std::size_t j = 0; j < sp.pairs.size(); ++j) {
      if (j == i || sp.pairs[j].conjugate >= 0) continue;
      if (sp.pairs[j].mu == std::conj(sp.pairs[i].mu)) {
        sp.pairs[i].conjugate = static_cast<int>(j);
        sp.pairs[j].conjugate = static_cast<int>(i);
        break;
      }
    }
  }
  return sp;
}

inline Spectrum eigen_decompose(const KoopmanModel& m) { return eigen_decompose(m.K, m.dt); }

/// psi(x) = v^T Phi(x) (no conjugation).
template <class Dict>
Complex eval_eigenfunction(const EigenPair& p, const Dict& dict, const Vec& x) {
  const Vec phi = dict.eval(x);
  require_dim(phi.size(), p.v.size(), "eval_eigenfunction");
  return p.v.transpose() * phi.cast<Complex>();
}

/// Eigenfunctions of the selected pairs at every column of X (rows = pairs).
template <class Dict>
CMat eval_eigenfunctions(const Spectrum& sp, const std::vector<int>& idx, const Dict& dict, const Mat& X) {
  CMat W(dict.size(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) W.col(static_cast<Eigen::Index>(c)) = sp.pairs.at(static_cast<std::size_t>(idx[c])).v;
  const Mat Phi = dict.eval_batch(X);
  return W.transpose() * Phi.cast<Complex>();
}

/// Signals that no eigenvalue passed the stability filter.
class NoStableEigenfunctions : public Error {
 public:
  using Error::Error;
};

/// Indices of stable pairs (Re lambda < -margin) with one member per conjugate pair
/// (the one with Im lambda >= 0), in spectrum order.
inline std::vector<int> stable_candidates(const Spectrum& sp, double margin) {
  std::vector<int> out;
  for (std::size_t i = 0; i < sp.pairs.size(); ++i) {
    const auto& p = sp.pairs[i];
    if (!(p.lambda.real() < -margin)) continue;
    if (p.lambda.imag() < 0.0 && p.conjugate >= 0) continue;
    out.push_back(static_cast<int>(i));
  }
  return out;
}

/// Stable, deduplicated pairs ranked by ascending score (spectrum order when
/// `scores` is empty) and truncated to M. `scores` is indexed like the spectrum.
inline std::vector<int> select_stable(const Spectrum& sp, int M, double margin = 1e-6,
                                      const std::vector<double>& scores = {}) {
  if (M < 1) throw InvalidArgument("select_stable: M must be >= 1");
  auto idx = stable_candidates(sp, margin);
  if (idx.empty()) throw NoStableEigenfunctions("select_stable: no eigenvalue with Re(lambda) < -margin");
  if (!scores.empty()) {
    require_dim(static_cast<Eigen::Index>(scores.size()), static_cast<Eigen::Index>(sp.size()), "select_stable scores");
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)];
    });
  }
  if (static_cast<int>(idx.size()) > M) idx.resize(static_cast<std::size_t>(M));
  return idx;
}

}  // namespace kl
