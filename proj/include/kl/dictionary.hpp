#pragma once

// Monomial dictionaries Phi(x) in graded lexicographic order.

#include "kl/core.hpp"
#include "kl/polynomial.hpp"
#include "kl/systems.hpp"

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <functional>
#include <vector>

namespace kl {

/// Anything that lifts an n-vector to an N-vector of observables.
template <class D>
concept Dictionary = requires(const D& d, const Vec& x) {
  { d.dim() } -> std::convertible_to<int>;
  { d.size() } -> std::convertible_to<int>;
  { d.eval(x) } -> std::convertible_to<Vec>;
};

/// Dictionaries that can also report their Jacobian analytically.
template <class D>
concept DifferentiableDictionary = Dictionary<D> && requires(const D& d, const Vec& x) {
  { d.jacobian(x) } -> std::convertible_to<Mat>;
};

struct MultiIndex {
  std::vector<int> exponents;

  int degree() const {
    int s = 0;
    for (int e : exponents) s += e;
    return s;
  }
  friend bool operator==(const MultiIndex&, const MultiIndex&) = default;
};

inline std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

/// All monomials of total degree <= d in n variables; constant first, then by degree,
/// and within a degree in descending lexicographic order of the exponent vector
/// (1, x1, x2, x1^2, x1 x2, x2^2, ...). A positive `min_degree` drops the lower
/// degrees (min_degree = d = 1 gives the plain state coordinates).
class MonomialDictionary {
 public:
  MonomialDictionary() = default;

  MonomialDictionary(int n, int d, int min_degree = 0) : n_(n), d_(d), min_degree_(min_degree) {
    if (n <= 0) throw InvalidArgument("build_monomials: n must be positive");
    if (d < 0) throw InvalidArgument("build_monomials: degree must be non-negative");
    if (min_degree < 0 || min_degree > d) throw InvalidArgument("build_monomials: min_degree outside [0, d]");
    terms_.reserve(static_cast<std::size_t>(binomial(n + d, d)));
    std::vector<int> e(static_cast<std::size_t>(n), 0);
    for (int deg = min_degree; deg <= d; ++deg) enumerate(0, deg, e);
    for (const auto& t : terms_) {
      std::vector<std::pair<int, int>> f;
      for (int j = 0; j < n_; ++j)
        if (t.exponents[static_cast<std::size_t>(j)] > 0) f.emplace_back(j, t.exponents[static_cast<std::size_t>(j)]);
      factors_.push_back(std::move(f));
    }
  }

  int dim() const noexcept { return n_; }
  int degree() const noexcept { return d_; }
  int min_degree() const noexcept { return min_degree_; }
  int size() const noexcept { return static_cast<int>(terms_.size()); }
  const std::vector<MultiIndex>& terms() const noexcept { return terms_; }

  /// Index of a multi-index in the ordering, or -1.
  int index_of(const std::vector<int>& exponents) const {
    for (int k = 0; k < size(); ++k)
      if (terms_[static_cast<std::size_t>(k)].exponents == exponents) return k;
    return -1;
  }

  Vec eval(const Vec& x) const {
    Vec out(size());
    eval_into(x, out);
    return out;
  }

  void eval_into(const Vec& x, Eigen::Ref<Vec> out) const {
    require_dim(x.size(), n_, "eval_dictionary");
    Mat pw;
    detail::fill_powers(x, std::max(d_, 1), pw);
    for (int k = 0; k < size(); ++k) {
      double v = 1.0;
      for (const auto& [j, e] : factors_[static_cast<std::size_t>(k)]) v *= pw(j, e);
      out(k) = v;
    }
  }

  /// Phi evaluated at every column of X (result is N x columns).
  Mat eval_batch(const Mat& X) const {
    require_dim(X.rows(), n_, "eval_dictionary batch");
    Mat out(size(), X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) eval_into(X.col(c), out.col(c));
    return out;
  }

  /// N x n matrix of partial derivatives d phi_k / d x_j.
  Mat jacobian(const Vec& x) const {
    require_dim(x.size(), n_, "eval_jacobian");
    Mat pw;
    detail::fill_powers(x, std::max(d_, 1), pw);
    Mat J = Mat::Zero(size(), n_);
    for (int k = 0; k < size(); ++k) {
      const auto& f = factors_[static_cast<std::size_t>(k)];
      for (std::size_t a = 0; a < f.size(); ++a) {
        double v = static_cast<double>(f[a].second) * pw(f[a].first, f[a].second - 1);
        for (std::size_t b = 0; b < f.size(); ++b)
          if (b != a) v *= pw(f[b].first, f[b].second);
        J(k, f[a].first) = v;
      }
    }
    return J;
  }

  /// H(k, j) = sum_i d^2 phi_k / (dx_i dx_j) w_i, i.e. the Jacobian of J(x) w at fixed w.
  Mat hessian_contract(const Vec& x, const Vec& w) const {
    require_dim(x.size(), n_, "hessian_contract");
    require_dim(w.size(), n_, "hessian_contract weights");
    Mat pw;
    detail::fill_powers(x, std::max(d_, 1), pw);
    Mat H = Mat::Zero(size(), n_);
    for (int k = 0; k < size(); ++k) {
      const auto& f = factors_[static_cast<std::size_t>(k)];
      for (std::size_t a = 0; a < f.size(); ++a) {
        const auto [va, ea] = f[a];
        for (std::size_t c = 0; c < f.size(); ++c) {
          const auto [vc, ec] = f[c];
          double v;
          if (a == c) {
            if (ea < 2) continue;
            v = static_cast<double>(ea * (ea - 1)) * pw(va, ea - 2);
          } else {
            v = static_cast<double>(ea * ec) * pw(va, ea - 1) * pw(vc, ec - 1);
          }
          for (std::size_t r = 0; r < f.size(); ++r)
            if (r != a && r != c) v *= pw(f[r].first, f[r].second);
          H(k, vc) += v * w(va);
        }
      }
    }
    return H;
  }

  /// The k-th monomial as a Polynomial.
  Polynomial monomial(int k) const {
    Polynomial p(n_);
    p.add_term(1.0, terms_.at(static_cast<std::size_t>(k)).exponents);
    return p;
  }

  /// Real linear combination sum_k c_k phi_k as a Polynomial.
  Polynomial combination(const Vec& c) const {
    require_dim(c.size(), size(), "MonomialDictionary::combination");
    Polynomial p(n_);
    for (int k = 0; k < size(); ++k)
      if (c(k) != 0.0) p.add_term(c(k), terms_[static_cast<std::size_t>(k)].exponents);
    return p;
  }

  friend bool operator==(const MonomialDictionary& a, const MonomialDictionary& b) {
    return a.n_ == b.n_ && a.d_ == b.d_ && a.min_degree_ == b.min_degree_;
  }

 private:
  // Descending lexicographic: larger leading exponents first.
  void enumerate(int j, int remaining, std::vector<int>& e) {
    if (j == n_ - 1) {
      e[static_cast<std::size_t>(j)] = remaining;
      terms_.push_back({e});
      e[static_cast<std::size_t>(j)] = 0;
      return;
    }
    for (int v = remaining; v >= 0; --v) {
      e[static_cast<std::size_t>(j)] = v;
      enumerate(j + 1, remaining - v, e);
    }
    e[static_cast<std::size_t>(j)] = 0;
  }

  int n_ = 0;
  int d_ = 0;
  int min_degree_ = 0;
  std::vector<MultiIndex> terms_;
  std::vector<std::vector<std::pair<int, int>>> factors_;
};

inline MonomialDictionary build_monomials(int n, int d) { return MonomialDictionary(n, d); }

/// The identity lift Phi(x) = x.
inline MonomialDictionary state_dictionary(int n) { return MonomialDictionary(n, 1, 1); }

template <Dictionary D>
Vec eval_dictionary(const D& dict, const Vec& x) {
  return dict.eval(x);
}

/// Batch evaluation for any dictionary; monomials use their own fast path.
template <Dictionary D>
Mat eval_dictionary_batch(const D& dict, const Mat& X) {
  if constexpr (requires { dict.eval_batch(X); }) {
    return dict.eval_batch(X);
  } else {
    Mat out(dict.size(), X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c) out.col(c) = dict.eval(X.col(c));
    return out;
  }
}

template <DifferentiableDictionary D>
Mat eval_jacobian(const D& dict, const Vec& x) {
  return dict.jacobian(x);
}

/// (grad Phi) f evaluated at x.
template <DifferentiableDictionary D>
Vec lie_derivative(const D& dict, const VectorField& field, const Vec& x) {
  require_dim(field.dim(), dict.dim(), "lie_derivative");
  return dict.jacobian(x) * field(x);
}

}  // namespace kl
