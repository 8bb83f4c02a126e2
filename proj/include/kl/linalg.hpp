#pragma once

// Least-squares helpers shared by the Koopman fits.

#include "kl/core.hpp"

#include <Eigen/SVD>

namespace kl {

inline constexpr double kPinvCutoff = 1e-10;

struct FitDiagnostics {
  double residual_norm = 0.0;  // ||K Phi(X) - Phi(Y)||_F
  double condition = 0.0;      // sigma_max / smallest retained sigma of Phi_XX
  int rank = 0;
};

namespace detail {

inline Mat pinv_symmetric(const Mat& G, FitDiagnostics* diag) {
  Eigen::BDCSVD<Mat> svd(G, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  if (!(smax > 0.0)) throw NumericalError("edmd_fit: data matrix is identically zero");
  const double cut = kPinvCutoff * smax;
  Vec inv = Vec::Zero(s.size());
  int rank = 0;
  double smin = smax;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cut) {
      inv(i) = 1.0 / s(i);
      smin = s(i);
      ++rank;
    }
  if (diag) {
    diag->rank = rank;
    diag->condition = smax / smin;
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace detail

/// K = Phi_XY Phi_XX^+ from lifted snapshot matrices (columns are samples).
inline Mat edmd_matrix(const Mat& PhiX, const Mat& PhiY) {
  require_dim(PhiY.rows(), PhiX.rows(), "edmd_matrix rows");
  require_dim(PhiY.cols(), PhiX.cols(), "edmd_matrix cols");
  if (PhiX.cols() == 0) throw InvalidArgument("edmd_fit: needs at least one snapshot pair");
  const Mat Gxx = PhiX * PhiX.transpose();
  const Mat Gxy = PhiY * PhiX.transpose();
  return Gxy * detail::pinv_symmetric(Gxx, nullptr);
}

}  // namespace kl
