#pragma once

// Type-erased dictionary: either a monomial basis or a trained encoder.

#include "kl/dictionary.hpp"
#include "kl/neural.hpp"

#include <variant>

namespace kl {

class AnyDictionary {
 public:
  AnyDictionary() = default;
  AnyDictionary(MonomialDictionary d) : impl_(std::move(d)) {}
  AnyDictionary(NetworkDictionary d) : impl_(std::move(d)) {}

  bool is_monomial() const noexcept { return std::holds_alternative<MonomialDictionary>(impl_); }
  const MonomialDictionary& monomial() const {
    if (!is_monomial()) throw UnsupportedError("dictionary is not a monomial basis");
    return std::get<MonomialDictionary>(impl_);
  }
  const NetworkDictionary& network() const { return std::get<NetworkDictionary>(impl_); }

  int dim() const {
    return std::visit([](const auto& d) { return d.dim(); }, impl_);
  }
  int size() const {
    return std::visit([](const auto& d) { return d.size(); }, impl_);
  }
  Vec eval(const Vec& x) const {
    return std::visit([&](const auto& d) { return d.eval(x); }, impl_);
  }
  Mat eval_batch(const Mat& X) const {
    return std::visit([&](const auto& d) { return d.eval_batch(X); }, impl_);
  }
  /// Analytic Jacobian; network dictionaries raise UnsupportedError.
  Mat jacobian(const Vec& x) const {
    if (!is_monomial()) throw UnsupportedError("analytic derivatives are unavailable for a network dictionary");
    return std::get<MonomialDictionary>(impl_).jacobian(x);
  }

 private:
  std::variant<MonomialDictionary, NetworkDictionary> impl_;
};

}  // namespace kl
