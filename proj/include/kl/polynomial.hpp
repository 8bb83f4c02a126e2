#pragma once

// Sparse multivariate polynomials with real coefficients.

#include "kl/core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

namespace kl {

using Exponents = std::vector<int>;

struct Term {
  double coef = 0.0;
  Exponents exponents;
};

/// Real polynomial in `dim` variables, stored as exponent -> coefficient.
class Polynomial {
 public:
  Polynomial() = default;
  explicit Polynomial(int dim) : dim_(dim) {
    if (dim <= 0) throw InvalidArgument("Polynomial: dimension must be positive");
  }
  Polynomial(int dim, const std::vector<Term>& terms) : Polynomial(dim) {
    for (const auto& t : terms) add_term(t.coef, t.exponents);
  }

  static Polynomial constant(int dim, double c) {
    Polynomial p(dim);
    p.add_term(c, Exponents(dim, 0));
    return p;
  }
  static Polynomial variable(int dim, int j) {
    Polynomial p(dim);
    Exponents e(dim, 0);
    e.at(j) = 1;
    p.add_term(1.0, e);
    return p;
  }

  int dim() const noexcept { return dim_; }
  const std::map<Exponents, double>& terms() const noexcept { return terms_; }
  std::size_t size() const noexcept { return terms_.size(); }

  int degree() const {
    int d = 0;
    for (const auto& [e, c] : terms_) {
      int s = 0;
      for (int v : e) s += v;
      d = std::max(d, s);
    }
    return d;
  }

  int max_exponent() const {
    int m = 0;
    for (const auto& [e, c] : terms_)
      for (int v : e) m = std::max(m, v);
    return m;
  }

  void add_term(double coef, const Exponents& e) {
    require_dim(static_cast<Eigen::Index>(e.size()), dim_, "Polynomial::add_term");
    for (int v : e)
      if (v < 0) throw InvalidArgument("Polynomial: negative exponent");
    if (coef == 0.0) return;
    auto [it, inserted] = terms_.try_emplace(e, coef);
    if (!inserted) {
      it->second += coef;
      if (it->second == 0.0) terms_.erase(it);
    }
  }

  double operator()(const Vec& x) const {
    require_dim(x.size(), dim_, "Polynomial::eval");
    const int maxe = max_exponent();
    Mat pw(dim_, maxe + 1);
    for (int j = 0; j < dim_; ++j) {
      pw(j, 0) = 1.0;
      for (int k = 1; k <= maxe; ++k) pw(j, k) = pw(j, k - 1) * x(j);
    }
    double s = 0.0;
    for (const auto& [e, c] : terms_) {
      double t = c;
      for (int j = 0; j < dim_; ++j)
        if (e[j]) t *= pw(j, e[j]);
      s += t;
    }
    return s;
  }

  Polynomial derivative(int j) const {
    Polynomial out(dim_);
    for (const auto& [e, c] : terms_) {
      if (e.at(j) == 0) continue;
      Exponents f = e;
      f[j] -= 1;
      out.add_term(c * e[j], f);
    }
    return out;
  }

  Polynomial& operator+=(const Polynomial& o) {
    require_dim(o.dim_, dim_, "Polynomial::+=");
    for (const auto& [e, c] : o.terms_) add_term(c, e);
    return *this;
  }
  Polynomial& operator*=(double s) {
    if (s == 0.0) {
      terms_.clear();
      return *this;
    }
    for (auto& [e, c] : terms_) c *= s;
    return *this;
  }

  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator*(Polynomial a, double s) { return a *= s; }
  friend Polynomial operator*(double s, Polynomial a) { return a *= s; }

  friend Polynomial operator*(const Polynomial& a, const Polynomial& b) {
    require_dim(b.dim_, a.dim_, "Polynomial::*");
    Polynomial out(a.dim_);
    Exponents e(a.dim_);
    for (const auto& [ea, ca] : a.terms_)
      for (const auto& [eb, cb] : b.terms_) {
        for (int j = 0; j < a.dim_; ++j) e[j] = ea[j] + eb[j];
        out.add_term(ca * cb, e);
      }
    return out;
  }

  std::vector<Term> to_terms() const {
    std::vector<Term> out;
    out.reserve(terms_.size());
    for (const auto& [e, c] : terms_) out.push_back({c, e});
    return out;
  }

 private:
  int dim_ = 0;
  std::map<Exponents, double> terms_;
};

}  // namespace kl
