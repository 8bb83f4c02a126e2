#include "kl/systems.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace kl;

namespace {

VectorField decay() { return linear_field(Mat::Constant(1, 1, -1.0), "decay"); }

std::string write_temp(const std::string& name, const std::string& body) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << body;
  return p.string();
}

}  // namespace

TEST(EvalField, VanDerPolValues) {
  const auto f = van_der_pol();
  EXPECT_EQ(eval_field(f, Vec::Zero(2)), Vec::Zero(2));
  const Vec v = eval_field(f, Vec::Constant(2, 1.0));
  EXPECT_DOUBLE_EQ(v(0), 1.0);
  EXPECT_DOUBLE_EQ(v(1), -1.0);
}

TEST(EvalField, ZeroGlvIsZero) {
  const auto f = glv_field(Vec::Zero(3), Mat::Zero(3, 3));
  EXPECT_EQ(eval_field(f, Vec::Constant(3, 2.5)), Vec::Zero(3));
}

TEST(EvalField, DimensionMismatchThrows) {
  EXPECT_THROW(eval_field(van_der_pol(), Vec::Zero(3)), DimensionError);
}

TEST(EvalField, JacobianMatchesFiniteDifferences) {
  const auto f = van_der_pol();
  const Vec x = (Vec(2) << 0.7, -1.3).finished();
  const Mat J = f.jacobian(x);
  for (int j = 0; j < 2; ++j) {
    Vec e = Vec::Zero(2);
    e(j) = 1e-6;
    const Vec fd = (f(x + e) - f(x - e)) / 2e-6;
    EXPECT_NEAR((J.col(j) - fd).norm(), 0.0, 1e-7);
  }
}

TEST(IntegrateRk4, OneStepOfExponentialDecay) {
  const auto tr = integrate_rk4(decay(), Vec::Ones(1), 0.1, 1);
  ASSERT_EQ(tr.states.size(), 2u);
  EXPECT_NEAR(tr.states[1](0), std::exp(-0.1), 1e-6);
  EXPECT_NEAR(tr.states[1](0), 0.9048375, 1e-7);
}

TEST(IntegrateRk4, ZeroStepsKeepsInitialState) {
  const Vec x0 = (Vec(2) << 0.3, 0.4).finished();
  const auto tr = integrate_rk4(van_der_pol(), x0, 0.01, 0);
  ASSERT_EQ(tr.states.size(), 1u);
  EXPECT_EQ(tr.states[0], x0);
}

TEST(IntegrateRk4, VanDerPolStaysBounded) {
  const auto tr = integrate_rk4(van_der_pol(), (Vec(2) << 2.0, 0.0).finished(), 0.01, 5000);
  for (std::size_t k = tr.states.size() - 1000; k < tr.states.size(); ++k) EXPECT_LT(tr.states[k].norm(), 4.0);
}

TEST(IntegrateRk4, FourthOrderConvergence) {
  // Endpoint error at t = 1 for dt and dt/2.
  auto err = [](double dt) {
    const int steps = static_cast<int>(std::lround(1.0 / dt));
    const auto tr = integrate_rk4(decay(), Vec::Ones(1), dt, steps);
    return std::abs(tr.states.back()(0) - std::exp(-1.0));
  };
  const double ratio = err(0.1) / err(0.05);
  EXPECT_GE(ratio, 14.0);
  EXPECT_LE(ratio, 18.0);
}

TEST(IntegrateRk4, EquilibriumIsFixed) {
  const auto tr = integrate_rk4(van_der_pol(), Vec::Zero(2), 0.01, 1000);
  EXPECT_EQ(tr.states.back(), Vec::Zero(2));
}

TEST(IntegrateRk4, DivergenceReportsStep) {
  const auto blow = VectorField::from_terms(1, {{{1.0, {2}}}}, "blowup");
  try {
    integrate_rk4(blow, Vec::Constant(1, 10.0), 0.01, 1000);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GT(e.step(), 0);
    EXPECT_LT(e.step(), 1000);
  }
}

TEST(SampleSnapshots, SinglePair) {
  const auto s = sample_snapshots(van_der_pol(), Region::cube(2, 1.0), 1, 1, 0.01, 3);
  EXPECT_EQ(s.size(), 1);
}

TEST(SampleSnapshots, Deterministic) {
  const auto a = sample_snapshots(van_der_pol(), Region::cube(2, 2.0), 5, 20, 0.01, 42);
  const auto b = sample_snapshots(van_der_pol(), Region::cube(2, 2.0), 5, 20, 0.01, 42);
  EXPECT_EQ(a.X, b.X);
  EXPECT_EQ(a.Y, b.Y);
  EXPECT_EQ(a.traj_id, b.traj_id);
  const auto c = sample_snapshots(van_der_pol(), Region::cube(2, 2.0), 5, 20, 0.01, 43);
  EXPECT_NE(a.X, c.X);
}

TEST(SampleSnapshots, ExponentialRatio) {
  const double dt = 0.05;
  const auto s = sample_snapshots(decay(), Region::cube(1, 3.0), 10, 5, dt, 1);
  for (Eigen::Index k = 0; k < s.size(); ++k) EXPECT_NEAR(s.Y(0, k) / s.X(0, k), std::exp(-dt), 1e-6);
}

TEST(SampleSnapshots, BallSamplesStayInside) {
  const Vec c = Vec::Constant(11, 5.0);
  const auto r = Region::ball(c, 2.0);
  std::mt19937_64 rng(9);
  double max_r = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const Vec x = r.sample(rng);
    max_r = std::max(max_r, (x - c).norm());
  }
  EXPECT_LE(max_r, 2.0);
  // Radius law u^(1/n): most mass sits near the boundary in 11-D.
  EXPECT_GT(max_r, 1.9);
}

TEST(SampleSnapshots, TrajectoryGroupingRoundTrip) {
  const auto s = sample_snapshots(van_der_pol(), Region::cube(2, 1.0), 3, 7, 0.01, 5);
  const auto tr = s.trajectories();
  ASSERT_EQ(tr.size(), 3u);
  for (const auto& t : tr) EXPECT_EQ(t.size(), 8u);
}

TEST(LoadGlv, Logistic) {
  const auto path = write_temp("kl_glv_logistic.json", R"({"rho": [1.0], "interaction": [[-1.0]]})");
  const auto f = load_glv(path);
  EXPECT_DOUBLE_EQ(f(Vec::Constant(1, 0.5))(0), 0.25);
}

TEST(LoadGlv, ZeroParametersGiveZeroField) {
  const auto path = write_temp("kl_glv_zero.json", R"({"rho": [0, 0], "interaction": [[0, 0], [0, 0]]})");
  EXPECT_EQ(load_glv(path)(Vec::Constant(2, 3.0)), Vec::Zero(2));
}

TEST(LoadGlv, NonSquareInteractionIsRejected) {
  nlohmann::json j;
  j["rho"] = std::vector<double>(11, 1.0);
  j["interaction"] = std::vector<std::vector<double>>(11, std::vector<double>(12, 0.0));
  const auto path = write_temp("kl_glv_bad.json", j.dump());
  EXPECT_THROW(load_glv(path), DimensionError);
}

TEST(LoadGlv, MalformedFileIsRejected) {
  const auto path = write_temp("kl_glv_broken.json", "{ rho: [1, 2");
  EXPECT_THROW(load_glv(path), ParseError);
  EXPECT_THROW(load_glv("/nonexistent/kl_glv.json"), ParseError);
}
