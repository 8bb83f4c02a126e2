#pragma once

// Brute-force LP oracles for small dimensions, shared by the LP unit tests
// and the acceptance runner.

#include "kl/core.hpp"

#include <Eigen/LU>

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace kl::oracle {

struct RandomPolytope {
  Mat A;
  Vec b;
};

// Random rows around a random interior point, inside a box so every
// instance is bounded. Some offsets are negative, which can make the set empty.
inline RandomPolytope random_polytope(int n, std::mt19937_64& rng, double p_negative = 0.15) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> extra(2, 8);
  const int k = extra(rng);
  const double box = 1.0 + 3.0 * u(rng);
  RandomPolytope p;
  p.A = Mat::Zero(2 * n + k, n);
  p.b = Vec::Zero(2 * n + k);
  Vec center(n);
  for (int j = 0; j < n; ++j) center(j) = (2.0 * u(rng) - 1.0) * 0.5 * box;
  for (int j = 0; j < n; ++j) {
    p.A(2 * j, j) = 1.0;
    p.b(2 * j) = box;
    p.A(2 * j + 1, j) = -1.0;
    p.b(2 * j + 1) = box;
  }
  for (int r = 0; r < k; ++r) {
    Vec a(n);
    for (int j = 0; j < n; ++j) a(j) = g(rng);
    a.normalize();
    double off = 0.1 + u(rng);
    if (u(rng) < p_negative) off = -off;
    p.A.row(2 * n + r) = a.transpose();
    p.b(2 * n + r) = a.dot(center) + off;
  }
  return p;
}

// Enumerate all n-row intersections; returns the best feasible vertex value, or nullopt if none.
inline std::optional<double> vertex_oracle_max(const Mat& A, const Vec& b, const Vec& c, double tol = 1e-9) {
  const int m = static_cast<int>(A.rows());
  const int n = static_cast<int>(A.cols());
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::optional<double> best;
  while (true) {
    Mat S(n, n);
    Vec s(n);
    for (int i = 0; i < n; ++i) {
      S.row(i) = A.row(idx[static_cast<std::size_t>(i)]);
      s(i) = b(idx[static_cast<std::size_t>(i)]);
    }
    Eigen::FullPivLU<Mat> lu(S);
    if (lu.isInvertible() && std::abs(S.determinant()) > 1e-12) {
      const Vec v = lu.solve(s);
      if (((A * v - b).array() <= tol * (1.0 + b.cwiseAbs().array())).all()) {
        const double val = c.dot(v);
        if (!best || val > *best) best = val;
      }
    }
    int i = n - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == m - n + i) --i;
    if (i < 0) break;
    ++idx[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < n; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
  return best;
}

// Chebyshev radius via vertex enumeration of the augmented (z, r) system.
// r is bounded below by -1e3 so that empty sets still have vertices.
inline double vertex_oracle_radius(const Mat& A, const Vec& b) {
  const Eigen::Index n = A.cols();
  Mat Ar(A.rows() + 1, n + 1);
  Vec br(A.rows() + 1);
  Ar.topLeftCorner(A.rows(), n) = A;
  Ar.topRightCorner(A.rows(), 1) = A.rowwise().norm();
  br.head(A.rows()) = b;
  Ar.bottomRows(1).setZero();
  Ar(A.rows(), n) = -1.0;
  br(A.rows()) = 1e3;
  Vec c = Vec::Zero(n + 1);
  c(n) = 1.0;
  const auto r = vertex_oracle_max(Ar, br, c);
  return r ? *r : -std::numeric_limits<double>::infinity();
}

// max over a 2-D grid of min_k (b_k - a_k^T z) / ||a_k||.
inline double grid_oracle_radius(const Mat& A, const Vec& b, double lo, double hi, int points) {
  double best = -std::numeric_limits<double>::infinity();
  const Vec norms = A.rowwise().norm();
  for (int i = 0; i < points; ++i)
    for (int j = 0; j < points; ++j) {
      Vec z(2);
      z << lo + (hi - lo) * i / (points - 1), lo + (hi - lo) * j / (points - 1);
      const Vec slack = (b - A * z).cwiseQuotient(norms);
      best = std::max(best, slack.minCoeff());
    }
  return best;
}

}  // namespace kl::oracle
