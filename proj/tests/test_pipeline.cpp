#include "kl/pipeline.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

using namespace kl;

namespace {

// V = |x|^2 / 2 in the plane: eigenfunctions x1 and x2 of xdot = -x.
LyapunovBasis half_norm_basis() {
  LyapunovBasis b;
  b.dict = build_monomials(2, 1);
  b.vectors = CMat::Zero(3, 2);
  b.vectors(1, 0) = 1.0;
  b.vectors(2, 1) = 1.0;
  b.base_lambda = {Complex(-1.0), Complex(-1.0)};
  b.spectrum_index = {0, 1};
  b.entries.push_back({{0}, Complex(-1.0)});
  b.entries.push_back({{1}, Complex(-1.0)});
  return b;
}

Json minimal_config() {
  return Json::parse(R"({"seed": 3, "system": {"name": "van_der_pol"}})");
}

}  // namespace

TEST(ParseConfig, DefaultsAndSections) {
  const auto c = parse_config(minimal_config());
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.system, "van_der_pol");
  EXPECT_EQ(c.U.dim(), 2);
  EXPECT_EQ(c.fit_method, "edmd");

  auto j = minimal_config();
  j["algorithm1"] = {{"beta", 0.5}, {"U", {{"ball", {{"radius", 2.0}}}}}, {"derivative", "analytic"}};
  j["verify"] = {{"domain", {{"box", {{"lo", {-1, -2}}, {"hi", {1, 2}}}}}}, {"starts", 8}};
  const auto d = parse_config(j);
  EXPECT_DOUBLE_EQ(d.alg.beta, 0.5);
  EXPECT_EQ(d.alg.derivative, DerivativeMode::Analytic);
  EXPECT_TRUE(d.U.contains((Vec(2) << 1.9, 0.0).finished()));
  EXPECT_FALSE(d.U.contains((Vec(2) << 1.5, 1.5).finished()));
  ASSERT_TRUE(d.domain.has_value());
  EXPECT_DOUBLE_EQ(d.domain->hi(1), 2.0);
  EXPECT_EQ(d.nlp.starts, 8);
}

TEST(ParseConfig, RejectsBadInput) {
  auto j = minimal_config();
  j.erase("seed");
  EXPECT_THROW(parse_config(j), ParseError);
  j = minimal_config();
  j["seed"] = -1;
  EXPECT_THROW(parse_config(j), ParseError);
  j = minimal_config();
  j["system"]["name"] = "lorenz";
  EXPECT_THROW(parse_config(j), ParseError);
  j = minimal_config();
  j["system"] = {{"name", "glv"}, {"file", "/nonexistent/glv.json"}};
  EXPECT_THROW(parse_config(j), ParseError);
  j = minimal_config();
  j["sampling"] = {{"snapshots", "no_such_file.csv"}};
  EXPECT_THROW(parse_config(j), ParseError);
  j = minimal_config();
  j["fit"] = {{"method", "sindy"}};
  EXPECT_THROW(parse_config(j), ParseError);
  j = minimal_config();
  j["algorithm1"] = {{"U", {{"cube", 1.0}, {"center", {0, 0, 0}}}}};
  EXPECT_THROW(parse_config(j), DimensionError);
  j = minimal_config();
  j["system"] = {{"name", "linear"}, {"A", {{1, 2}, {3}}}};
  EXPECT_THROW(parse_config(j), DimensionError);
  EXPECT_THROW(parse_config(Json::array()), ParseError);
}

TEST(ParseConfig, RelativeFilesResolveAgainstConfigDir) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "kl_cfg_resolve";
  fs::remove_all(dir);
  SnapshotSet s;
  s.dt = 0.1;
  s.X = Mat::Ones(2, 3);
  s.Y = Mat::Ones(2, 3);
  save_snapshots((dir / "data" / "s.csv").string(), s);
  auto j = minimal_config();
  j["sampling"] = {{"snapshots", "data/s.csv"}};
  write_json_file((dir / "cfg.json").string(), j);
  const auto c = load_config((dir / "cfg.json").string());
  EXPECT_EQ(fs::path(c.snapshots_file), dir / "data" / "s.csv");
  const auto e = build_system(c);
  EXPECT_EQ(stage_simulate(c, e).size(), 3);
  fs::remove_all(dir);
}

TEST(BuildSystem, CenteredGlvHasEquilibriumAtOrigin) {
  auto j = Json::parse(R"({"seed": 4, "system": {"name": "glv", "dim": 5, "center_on_equilibrium": true}})");
  const auto c = parse_config(j);
  const auto e = build_system(c);
  ASSERT_EQ(e.equilibrium.size(), 5);
  EXPECT_LT(e.field(Vec::Zero(5)).norm(), 1e-10);
  const auto raw = random_stable_glv(5, c.seed + kSeedSystem);
  EXPECT_LT((e.equilibrium - raw.equilibrium).norm(), 1e-14);
}

TEST(ShiftedField, MatchesOriginalAtShiftedPoints) {
  const auto f = van_der_pol();
  const Vec x0 = (Vec(2) << 0.7, -1.3).finished();
  const auto g = shifted_field(f, x0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int k = 0; k < 100; ++k) {
    const Vec z = (Vec(2) << u(rng), u(rng)).finished();
    EXPECT_LT((g(z) - f(x0 + z)).norm(), 1e-12 * (1.0 + f(x0 + z).norm()));
    EXPECT_LT((g.jacobian(z) - f.jacobian(x0 + z)).norm(), 1e-11 * (1.0 + f.jacobian(x0 + z).norm()));
  }
}

TEST(RandomStableGlv, EquilibriumIsPositiveAndStable) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = random_stable_glv(11, seed);
    EXPECT_GE(g.equilibrium.minCoeff(), 6.0);
    EXPECT_LE(g.equilibrium.maxCoeff(), 10.0);
    EXPECT_LT((g.rho + g.interaction * g.equilibrium).norm(), 1e-12);
    const auto f = glv_field(g.rho, g.interaction);
    EXPECT_LT(f(g.equilibrium).norm(), 1e-10);
    const Eigen::VectorXcd ev = f.jacobian(g.equilibrium).eigenvalues();
    EXPECT_LT(ev.real().maxCoeff(), 0.0);
  }
  EXPECT_EQ(random_stable_glv(4, 9).interaction, random_stable_glv(4, 9).interaction);
}

TEST(VerificationDomain, ScalesDataBoxAboutCenter) {
  PipelineConfig c;
  SnapshotSet s;
  s.dt = 0.1;
  s.X = (Mat(2, 2) << 0, 2, 1, 3).finished();
  s.Y = s.X;
  const Box b = verification_domain(c, s);
  EXPECT_DOUBLE_EQ(b.lo(0), -0.5);
  EXPECT_DOUBLE_EQ(b.hi(0), 2.5);
  EXPECT_DOUBLE_EQ(b.lo(1), 0.5);
  EXPECT_DOUBLE_EQ(b.hi(1), 3.5);
}

TEST(ContourGrid, HalfNormOnUnitSquare) {
  const auto b = half_norm_basis();
  const CandidateFunction c{Vec::Ones(2), 1.0, 1.0};
  const auto f = linear_field(-Mat::Identity(2, 2));
  const Box box{Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)};
  const Mat g = contour_grid(b, c, f, box, 3);
  ASSERT_EQ(g.rows(), 9);
  ASSERT_EQ(g.cols(), 4);
  std::multiset<double> values;
  for (Eigen::Index r = 0; r < 9; ++r) {
    values.insert(g(r, 2));
    EXPECT_TRUE(g.row(r).allFinite());
    // xdot = -x: Vdot = -2V, so the residual is -2V - (1 - V) = -V - 1.
    EXPECT_NEAR(g(r, 3), -g(r, 2) - 1.0, 1e-12);
  }
  EXPECT_EQ(values.count(0.0), 1u);
  EXPECT_EQ(values.count(0.5), 4u);
  EXPECT_EQ(values.count(1.0), 4u);

  const Box off{(Vec(2) << 1.0, 2.0).finished(), (Vec(2) << 3.0, 4.0).finished()};
  const Mat one = contour_grid(b, c, f, off, 1);
  ASSERT_EQ(one.rows(), 1);
  EXPECT_DOUBLE_EQ(one(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(one(0, 1), 3.0);
  EXPECT_DOUBLE_EQ(one(0, 2), 6.5);
}

TEST(ContourGrid, NeedsPlanarState) {
  LyapunovBasis b;
  b.dict = build_monomials(3, 1);
  b.vectors = CMat::Zero(4, 1);
  b.vectors(1, 0) = 1.0;
  b.base_lambda = {Complex(-1.0)};
  b.spectrum_index = {0};
  b.entries.push_back({{0}, Complex(-1.0)});
  const CandidateFunction c{Vec::Ones(1), 1.0, 1.0};
  const Box box{Vec::Constant(3, -1.0), Vec::Constant(3, 1.0)};
  EXPECT_THROW(contour_grid(b, c, linear_field(-Mat::Identity(3, 3)), box, 3), DimensionError);
}

TEST(ProjectionGrid, AnchorsMapToUnitCoordinates) {
  const auto b = half_norm_basis();
  const Vec alpha = Vec::Ones(2);
  const Vec P0 = (Vec(2) << 0.3, 0.1).finished();
  const Vec P1 = (Vec(2) << 2.0, 0.0).finished();
  const Vec P2 = (Vec(2) << -1.0, 1.5).finished();
  const Mat g = projection_grid(b, alpha, P0, P1, P2, 5, -1.0, 1.0);
  ASSERT_EQ(g.rows(), 25);
  auto at = [&](double u, double v) {
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      if (g(r, 0) == u && g(r, 1) == v) return g(r, 2);
    ADD_FAILURE() << "no grid row at (" << u << ", " << v << ")";
    return 0.0;
  };
  EXPECT_NEAR(at(0.0, 0.0), 0.5 * P0.squaredNorm(), 1e-14);
  EXPECT_NEAR(at(1.0, 0.0), 0.5 * P1.squaredNorm(), 1e-14);
  EXPECT_NEAR(at(0.0, 1.0), 0.5 * P2.squaredNorm(), 1e-14);
}

TEST(ProjectionGrid, CollinearAnchorsRejected) {
  const auto b = half_norm_basis();
  const Vec P0 = Vec::Zero(2), P1 = Vec::Ones(2), P2 = 3.0 * Vec::Ones(2);
  EXPECT_THROW(projection_grid(b, Vec::Ones(2), P0, P1, P2, 3), InvalidArgument);
  EXPECT_THROW(projection_grid(b, Vec::Ones(2), P0, P1, P1, 3), InvalidArgument);
  EXPECT_THROW(projection_grid(b, Vec::Ones(2), Vec::Zero(3), P1, P2, 3), DimensionError);
}

TEST(StageBasis, NormalizedEigenfunctionsPeakAtOne) {
  auto c = parse_config(minimal_config());
  c.degree = 4;
  c.stable_m = 3;
  c.trajectories = 20;
  c.steps = 20;
  c.sample_region = Region::cube(2, 2.0);
  const auto e = build_system(c);
  const auto data = stage_simulate(c, e);
  const auto m = stage_fit(c, data);
  const auto b = stage_basis(c, m, eigen_decompose(m), data);
  ASSERT_EQ(b.vectors.cols(), 3);
  const CMat psi = b.dict.eval_batch(data.X).transpose().cast<Complex>() * b.vectors;
  for (Eigen::Index i = 0; i < psi.cols(); ++i) EXPECT_NEAR(psi.col(i).cwiseAbs().maxCoeff(), 1.0, 1e-12);
  for (const auto& en : b.entries) EXPECT_TRUE(en.bounds_fitted);
}

TEST(Pipeline, SameSeedSameArtifacts) {
  auto c = parse_config(minimal_config());
  c.degree = 3;
  c.trajectories = 10;
  c.steps = 10;
  const auto e = build_system(c);
  const auto d1 = stage_simulate(c, e), d2 = stage_simulate(c, e);
  EXPECT_EQ(snapshots_to_csv(d1), snapshots_to_csv(d2));
  EXPECT_EQ(model_to_json(stage_fit(c, d1)).dump(), model_to_json(stage_fit(c, d2)).dump());
  c.seed += 1;
  EXPECT_NE(snapshots_to_csv(stage_simulate(c, e)), snapshots_to_csv(d1));
}
