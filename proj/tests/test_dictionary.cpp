#include "kl/dictionary.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace kl;

TEST(BuildMonomials, PublishedCardinalities) {
  EXPECT_EQ(build_monomials(2, 6).size(), 28);
  EXPECT_EQ(build_monomials(11, 3).size(), 364);
  EXPECT_EQ(build_monomials(11, 5).size(), 4368);
}

TEST(BuildMonomials, CountIsBinomial) {
  for (int n = 1; n <= 12; ++n)
    for (int d = 0; d <= 6; ++d)
      EXPECT_EQ(static_cast<std::uint64_t>(build_monomials(n, d).size()), binomial(n + d, d)) << n << "," << d;
}

TEST(BuildMonomials, GradedOrderConstantFirst) {
  const auto d = build_monomials(2, 2);
  const std::vector<std::vector<int>> want = {{0, 0}, {1, 0}, {0, 1}, {2, 0}, {1, 1}, {0, 2}};
  ASSERT_EQ(d.size(), 6);
  for (int k = 0; k < 6; ++k) EXPECT_EQ(d.terms()[k].exponents, want[k]);
  const auto big = build_monomials(4, 4);
  for (int k = 1; k < big.size(); ++k) EXPECT_LE(big.terms()[k - 1].degree(), big.terms()[k].degree());
}

TEST(BuildMonomials, RejectsBadArguments) {
  EXPECT_THROW(build_monomials(0, 2), InvalidArgument);
  EXPECT_THROW(build_monomials(2, -1), InvalidArgument);
}

TEST(EvalDictionary, ProductMonomial) {
  const auto d = build_monomials(2, 2);
  const Vec x = (Vec(2) << 2.0, 3.0).finished();
  EXPECT_DOUBLE_EQ(eval_dictionary(d, x)(d.index_of({1, 1})), 6.0);
}

TEST(EvalDictionary, ConstantSlotAndOrigin) {
  const auto d = build_monomials(3, 4);
  const Vec z = eval_dictionary(d, Vec::Zero(3));
  EXPECT_DOUBLE_EQ(z(0), 1.0);
  EXPECT_DOUBLE_EQ(z.tail(z.size() - 1).cwiseAbs().sum(), 0.0);
  EXPECT_DOUBLE_EQ(eval_dictionary(d, Vec::Constant(3, -7.5))(0), 1.0);
}

TEST(EvalDictionary, DimensionMismatch) {
  EXPECT_THROW(eval_dictionary(build_monomials(2, 2), Vec::Zero(3)), DimensionError);
}

TEST(EvalDictionary, Multiplicative) {
  const auto d = build_monomials(3, 6);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::uniform_int_distribution<int> pick(0, d.size() - 1);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec x = (Vec(3) << u(rng), u(rng), u(rng)).finished();
    const Vec phi = d.eval(x);
    const auto& a = d.terms()[pick(rng)].exponents;
    const auto& b = d.terms()[pick(rng)].exponents;
    std::vector<int> s(3);
    for (int j = 0; j < 3; ++j) s[j] = a[j] + b[j];
    const int k = d.index_of(s);
    if (k < 0) continue;  // sum exceeds the degree
    EXPECT_NEAR(phi(k), phi(d.index_of(a)) * phi(d.index_of(b)), 1e-12 * (1.0 + std::abs(phi(k))));
  }
}

TEST(EvalJacobian, SimpleEntries) {
  const auto d = build_monomials(2, 2);
  const Mat J = eval_jacobian(d, (Vec(2) << 3.0, 1.0).finished());
  EXPECT_DOUBLE_EQ(J(d.index_of({2, 0}), 0), 6.0);
  EXPECT_DOUBLE_EQ(J.row(0).cwiseAbs().sum(), 0.0);
}

TEST(EvalJacobian, MatchesCentralDifferences) {
  const auto d = build_monomials(3, 5);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const Vec x = (Vec(3) << u(rng), u(rng), u(rng)).finished();
    const Mat J = d.jacobian(x);
    for (int j = 0; j < 3; ++j) {
      Vec e = Vec::Zero(3);
      e(j) = h;
      const Vec fd = (d.eval(x + e) - d.eval(x - e)) / (2 * h);
      for (int k = 0; k < d.size(); ++k) {
        const double scale = std::max(std::abs(J(k, j)), 1.0);
        EXPECT_LT(std::abs(J(k, j) - fd(k)) / scale, 1e-6);
      }
    }
  }
}

TEST(LieDerivative, ConstantTermVanishes) {
  const auto d = build_monomials(2, 3);
  EXPECT_DOUBLE_EQ(lie_derivative(d, van_der_pol(), (Vec(2) << 0.4, -2.0).finished())(0), 0.0);
}

TEST(LieDerivative, LinearScalar) {
  const auto d = build_monomials(1, 1);
  const Vec l = lie_derivative(d, linear_field(Mat::Constant(1, 1, -1.0)), Vec::Constant(1, 2.0));
  EXPECT_DOUBLE_EQ(l(1), -2.0);
}

TEST(LieDerivative, MatchesFlowDifferences) {
  const auto d = build_monomials(2, 6);
  const auto f = van_der_pol();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    const Vec x = (Vec(2) << u(rng), u(rng)).finished();
    const Vec y = integrate_rk4(f, x, h, 1).states[1];
    const Vec fd = (d.eval(y) - d.eval(x)) / h;
    const Vec l = lie_derivative(d, f, x);
    EXPECT_LT((fd - l).norm() / l.norm(), 1e-3);
  }
}

TEST(Dictionary, DegreeZeroIsConstant) {
  const auto d = build_monomials(2, 0);
  EXPECT_EQ(d.size(), 1);
  EXPECT_EQ(lie_derivative(d, van_der_pol(), Vec::Ones(2)), Vec::Zero(1));
}
