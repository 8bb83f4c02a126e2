#include "kl/verify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace kl;

namespace {

// V_j = x_j^2 / 2 on dict {1, x_1, .., x_n}; alpha = 1 gives V = |x|^2 / 2.
LyapunovBasis coordinate_basis(int n) {
  LyapunovBasis b;
  b.dict = build_monomials(n, 1);
  b.vectors = CMat::Zero(n + 1, n);
  for (int j = 0; j < n; ++j) {
    b.vectors(1 + j, j) = 1.0;
    b.base_lambda.push_back(-1.0);
    b.spectrum_index.push_back(j);
    b.entries.push_back({{j}, -1.0});
  }
  return b;
}

CandidateFunction unit_candidate(int n, double gamma = 1.0, double beta = 1.0) {
  return {Vec::Ones(n), gamma, beta};
}

VectorField scaled_identity(int n, double s) { return linear_field(s * Mat::Identity(n, n)); }

Box cube(int n, double h) { return {Vec::Constant(n, -h), Vec::Constant(n, h)}; }

struct VdpCase {
  LyapunovBasis basis;
  CandidateFunction cand;
};

// Products of learned Van der Pol eigenfunctions with softmax weights.
const VdpCase& vdp_case() {
  static const VdpCase c = [] {
    const auto data = sample_snapshots(van_der_pol(), Region::cube(2, 3.0), 40, 100, 0.01, 5);
    const auto model = edmd_fit(data, build_monomials(2, 4));
    const auto sp = eigen_decompose(model);
    const auto scores = eigen_residual_scores(sp, model.dict, data.X, data.Y, data.dt);
    VdpCase out;
    out.basis = augment_products(make_basis(sp, select_stable(sp, 2, 1e-6, scores), model.dict));
    out.cand.alpha = Vec::Constant(out.basis.size(), 1.0 / out.basis.size());
    out.cand.beta = 1.0;
    const Vec v0 = eval_basis(out.basis, Vec::Zero(2));
    out.cand.gamma = 2.0 * out.cand.alpha.dot(v0) + 1e-3;
    return out;
  }();
  return c;
}

}  // namespace

TEST(Residual, LinearExamples) {
  const auto b = coordinate_basis(2);
  const auto c = unit_candidate(2);
  const auto stable = scaled_identity(2, -1.0);
  EXPECT_DOUBLE_EQ(residual(b, c, stable, Vec::Zero(2)), -1.0);
  const Vec x = (Vec(2) << 1.0, 1.0).finished();  // |x|^2 = 2, V = 1
  EXPECT_DOUBLE_EQ(residual(b, c, stable, x), -2.0);
  EXPECT_DOUBLE_EQ(residual(b, c, scaled_identity(2, 1.0), x), 2.0);
}

TEST(Residual, NetworkDictionaryUnsupported) {
  std::mt19937_64 rng(1);
  LyapunovBasis b;
  b.dict = NetworkDictionary(init_network({1, 3, 2}, rng));
  b.vectors = CMat::Zero(2, 1);
  b.vectors(0, 0) = 1.0;
  b.base_lambda = {-1.0};
  b.spectrum_index = {0};
  b.entries.push_back({{0}, -1.0});
  EXPECT_THROW(residual(b, {Vec::Ones(1), 1.0, 1.0}, scaled_identity(1, -1.0), Vec::Zero(1)), UnsupportedError);
}

TEST(HessianContract, MatchesJacobianDifferences) {
  const MonomialDictionary d(3, 4);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int t = 0; t < 10; ++t) {
    Vec x(3), w(3);
    for (int j = 0; j < 3; ++j) {
      x(j) = u(rng);
      w(j) = u(rng);
    }
    const Mat H = d.hessian_contract(x, w);
    const double h = 1e-6;
    for (int j = 0; j < 3; ++j) {
      Vec e = Vec::Zero(3);
      e(j) = h;
      const Vec fd = (d.jacobian(x + e) * w - d.jacobian(x - e) * w) / (2 * h);
      EXPECT_LT((fd - H.col(j)).norm(), 1e-6 * (1.0 + fd.norm()));
    }
  }
}

TEST(ResidualGradient, MatchesPlainResidualAndDifferences) {
  const auto& vc = vdp_case();
  const auto f = van_der_pol();
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-2.5, 2.5);
  for (int t = 0; t < 20; ++t) {
    const Vec x = (Vec(2) << u(rng), u(rng)).finished();
    const auto r = residual_with_gradient(vc.basis, vc.cand, f, x);
    const double plain = residual(vc.basis, vc.cand, f, x);
    EXPECT_NEAR(r.value, plain, 1e-10 * (1.0 + std::abs(plain)));
    EXPECT_NEAR(r.V, eval_candidate(vc.basis, vc.cand.alpha, x), 1e-12 * (1.0 + r.V));
    const double h = 1e-6;
    Vec fd(2), fdV(2);
    for (int j = 0; j < 2; ++j) {
      Vec e = Vec::Zero(2);
      e(j) = h;
      fd(j) = (residual(vc.basis, vc.cand, f, x + e) - residual(vc.basis, vc.cand, f, x - e)) / (2 * h);
      fdV(j) = (eval_candidate(vc.basis, vc.cand.alpha, x + e) - eval_candidate(vc.basis, vc.cand.alpha, x - e)) /
               (2 * h);
    }
    EXPECT_LT((fd - r.grad).norm(), 1e-5 * (1.0 + fd.norm()));
    EXPECT_LT((fdV - r.grad_V).norm(), 1e-5 * (1.0 + fdV.norm()));
  }
}

TEST(NlpVerify, StableLinearIsVerifiedAtOrigin) {
  const auto b = coordinate_basis(2);
  NlpConfig cfg;
  cfg.seed = 4;
  const auto rep = nlp_verify(b, unit_candidate(2), scaled_identity(2, -1.0), cube(2, 2.0), cfg);
  EXPECT_EQ(rep.verdict, Verdict::Verified);
  EXPECT_NEAR(rep.max_value, -1.0, 1e-6);
  EXPECT_LT(rep.argmax.norm(), 1e-3);
  EXPECT_EQ(rep.converged_starts, rep.starts);
  EXPECT_EQ(rep.traces.size(), 64u);
}

TEST(NlpVerify, UnstableLinearIsFalsified) {
  const auto b = coordinate_basis(2);
  const auto c = unit_candidate(2);
  const auto f = scaled_identity(2, 1.0);
  const auto rep = nlp_verify(b, c, f, cube(2, 2.0));
  ASSERT_EQ(rep.verdict, Verdict::Falsified);
  EXPECT_GT(rep.max_value, 0.0);
  // Soundness coupling: the argmax re-evaluates as a feasible violation.
  EXPECT_GT(residual(b, c, f, rep.argmax), 0.0);
  EXPECT_LE(eval_candidate(b, c.alpha, rep.argmax), c.gamma + 1e-9);
  // The maximum sits on the level set: residual = 2V there, so close to 2.
  EXPECT_NEAR(rep.max_value, 2.0, 1e-6);
}

TEST(NlpVerify, Errors) {
  const auto b = coordinate_basis(2);
  EXPECT_THROW(nlp_verify(b, unit_candidate(2, -1.0), scaled_identity(2, -1.0), cube(2, 1.0)), InvalidArgument);
  Box bad{Vec::Constant(2, -1.0), Vec::Constant(2, std::numeric_limits<double>::infinity())};
  EXPECT_THROW(nlp_verify(b, unit_candidate(2), scaled_identity(2, -1.0), bad), InvalidArgument);
  EXPECT_THROW(nlp_verify(b, unit_candidate(2), scaled_identity(2, -1.0), cube(3, 1.0)), DimensionError);
  NlpConfig cfg;
  cfg.screen = 0;
  EXPECT_THROW(nlp_verify(b, unit_candidate(2), scaled_identity(2, -1.0), cube(2, 1.0), cfg), InvalidArgument);
  cfg = {};
  cfg.stall_window = 0;
  EXPECT_THROW(nlp_verify(b, unit_candidate(2), scaled_identity(2, -1.0), cube(2, 1.0), cfg), InvalidArgument);
}

TEST(NlpVerify, StallTestEndsStartsAtWindowBoundaries) {
  const auto b = coordinate_basis(2);
  NlpConfig cfg;
  cfg.seed = 4;
  cfg.stall_window = 7;
  cfg.ftol = 1e6;  // any window counts as stalled
  const auto rep = nlp_verify(b, unit_candidate(2), scaled_identity(2, -1.0), cube(2, 2.0), cfg);
  for (const auto& t : rep.traces) {
    EXPECT_TRUE(t.converged);
    EXPECT_LE(t.iterations, 7);
  }
  EXPECT_EQ(rep.converged_starts, rep.starts);
}

TEST(NlpVerify, ScreenedStartsIncludePoolMaximum) {
  // Residual of V = |x|^2 / 2 under xdot = x is 2V, largest on the level set.
  const auto b = coordinate_basis(2);
  const auto c = unit_candidate(2);
  const auto f = scaled_identity(2, 1.0);
  NlpConfig cfg;
  cfg.starts = 4;
  cfg.max_iters = 0;
  cfg.seed = 9;
  const auto screened = nlp_verify(b, c, f, cube(2, 2.0), cfg);
  cfg.screen = 1;
  const auto plain = nlp_verify(b, c, f, cube(2, 2.0), cfg);
  EXPECT_GE(screened.max_value, plain.max_value);
  EXPECT_GT(screened.max_value, 1.9);
}

TEST(NlpVerify, DeterministicForSeed) {
  const auto& vc = vdp_case();
  NlpConfig cfg;
  cfg.starts = 8;
  cfg.seed = 2;
  const auto a = nlp_verify(vc.basis, vc.cand, van_der_pol(), cube(2, 3.0), cfg);
  const auto b = nlp_verify(vc.basis, vc.cand, van_der_pol(), cube(2, 3.0), cfg);
  EXPECT_EQ(a.max_value, b.max_value);
  EXPECT_EQ(a.argmax, b.argmax);
}

TEST(GridFalsify, StableLinearMaximumAtOrigin) {
  const auto rep = grid_falsify(coordinate_basis(2), unit_candidate(2), scaled_identity(2, -1.0), cube(2, 2.0), 201);
  ASSERT_FALSE(rep.empty);
  EXPECT_NEAR(rep.max_value, -1.0, 1e-4);
  EXPECT_GT(rep.feasible_points, 0);
}

TEST(GridFalsify, EmptyFeasibleGrid) {
  const auto rep = grid_falsify(coordinate_basis(2), unit_candidate(2, -1.0), scaled_identity(2, -1.0), cube(2, 1.0), 11);
  EXPECT_TRUE(rep.empty);
  EXPECT_EQ(rep.feasible_points, 0);
}

TEST(GridFalsify, ConstantResidual) {
  // psi = 1 gives V = 1/2 and dV/dt = 0, so the residual is -beta (gamma - 1/2).
  LyapunovBasis b;
  b.dict = build_monomials(2, 1);
  b.vectors = CMat::Zero(3, 1);
  b.vectors(0, 0) = 1.0;
  b.base_lambda = {-1.0};
  b.spectrum_index = {0};
  b.entries.push_back({{0}, -1.0});
  const auto rep = grid_falsify(b, {Vec::Ones(1), 1.0, 1.0}, van_der_pol(), cube(2, 1.0), 7);
  EXPECT_DOUBLE_EQ(rep.max_value, -0.5);
}

TEST(GridFalsify, RejectsHighDimension) {
  EXPECT_THROW(grid_falsify(coordinate_basis(4), unit_candidate(4), scaled_identity(4, -1.0), cube(4, 1.0), 3),
               InvalidArgument);
}

TEST(GridFalsify, AgreesWithNlpOnVanDerPolCandidate) {
  const auto& vc = vdp_case();
  const auto f = van_der_pol();
  const Box box = cube(2, 3.0);
  const auto grid = grid_falsify(vc.basis, vc.cand, f, box, 201);
  NlpConfig cfg;
  cfg.seed = 9;
  const auto nlp = nlp_verify(vc.basis, vc.cand, f, box, cfg);
  ASSERT_FALSE(grid.empty);
  EXPECT_LE(std::abs(grid.max_value - nlp.max_value), std::max(1e-3, grid.cell_bound));
}

TEST(SimulateInvariance, StableLinearHasNoViolations) {
  SimulationConfig cfg;
  cfg.trajectories = 100;
  cfg.horizon = 5.0;
  const auto rep = simulate_invariance(coordinate_basis(2), unit_candidate(2), scaled_identity(2, -1.0), cube(2, 2.0), cfg);
  EXPECT_EQ(rep.violations, 0);
  EXPECT_EQ(rep.trajectories, 100);
  EXPECT_LE(rep.worst_overshoot, 0.0);
}

TEST(SimulateInvariance, UnstableLinearViolatesEverywhere) {
  SimulationConfig cfg;
  cfg.trajectories = 50;
  cfg.horizon = 10.0;
  const auto rep = simulate_invariance(coordinate_basis(2), unit_candidate(2), scaled_identity(2, 1.0), cube(2, 2.0), cfg);
  EXPECT_EQ(rep.violations, 50);
}

TEST(SimulateInvariance, RejectionSamplingFailure) {
  SimulationConfig cfg;
  cfg.trajectories = 10;
  // Sublevel set {|x|^2 <= 2e-12} is invisible to uniform draws on the box.
  EXPECT_THROW(simulate_invariance(coordinate_basis(2), unit_candidate(2, 1e-12), scaled_identity(2, -1.0),
                                   cube(2, 2.0), cfg),
               InvalidArgument);
}
