#include "kl/neural.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace kl;

namespace {

AutoencoderKoopman random_model(std::uint64_t seed, const std::vector<int>& enc, const std::vector<int>& dec) {
  std::mt19937_64 rng(seed);
  AutoencoderKoopman m;
  m.encoder = init_network(enc, rng);
  m.decoder = init_network(dec, rng);
  std::normal_distribution<double> g(0.0, 0.3);
  for (int l = 0; l < m.encoder.layers(); ++l)
    for (Eigen::Index i = 0; i < m.encoder.biases[l].size(); ++i) m.encoder.biases[l](i) = g(rng);
  for (int l = 0; l < m.decoder.layers(); ++l)
    for (Eigen::Index i = 0; i < m.decoder.biases[l].size(); ++i) m.decoder.biases[l](i) = g(rng);
  const int N = enc.back();
  m.K = Mat::Identity(N, N) * 0.9;
  for (Eigen::Index i = 0; i < m.K.size(); ++i) m.K.data()[i] += g(rng) * 0.3;
  return m;
}

std::vector<Window> random_windows(std::uint64_t seed, int n, int T, int count) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Window> w;
  for (int c = 0; c < count; ++c) {
    Window x(n, T + 1);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
    w.push_back(x);
  }
  return w;
}

// Largest relative discrepancy between the reverse-mode gradient and central differences.
double gradient_check(const AutoencoderKoopman& m, const std::vector<Window>& w, const TrainConfig& cfg) {
  const auto g = backprop_gradients(m, w, cfg);
  const Vec theta = m.flatten();
  const double h = 1e-5;
  double worst = 0.0;
  AutoencoderKoopman probe = m;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    Vec tp = theta, tm = theta;
    tp(k) += h;
    tm(k) -= h;
    probe.unflatten(tp);
    const double fp = joint_objective(probe, w, cfg);
    probe.unflatten(tm);
    const double fm = joint_objective(probe, w, cfg);
    const double fd = (fp - fm) / (2 * h);
    // Components below 1e-4 in magnitude are compared absolutely.
    const double denom = std::max({std::abs(fd), std::abs(g.flat(k)), 1e-4});
    worst = std::max(worst, std::abs(fd - g.flat(k)) / denom);
  }
  return worst;
}

}  // namespace

TEST(Encode, ZeroNetGivesZero) {
  FeedforwardNet net({2, 5, 3});
  EXPECT_EQ(encode(net, Vec::Constant(2, 1.7)), Vec::Zero(3));
}

TEST(Encode, SingleLinearLayerIsIdentity) {
  FeedforwardNet net({3, 3});
  net.weights[0] = Mat::Identity(3, 3);
  const Vec x = (Vec(3) << 0.5, -4.0, 9.0).finished();
  EXPECT_EQ(encode(net, x), x);
}

TEST(Encode, HiddenActivationsAreBounded) {
  std::mt19937_64 rng(4);
  const auto net = init_network({2, 16, 16, 4}, rng);
  FeedforwardNet::Cache cache;
  const Vec x = (Vec(2) << 30.0, -50.0).finished();
  const Mat out = net.forward(x, &cache);
  EXPECT_TRUE(out.allFinite());
  for (std::size_t l = 1; l + 1 < cache.activations.size(); ++l)
    EXPECT_LT(cache.activations[l].cwiseAbs().maxCoeff(), 1.0 + 1e-15);
}

TEST(Encode, DimensionMismatch) {
  FeedforwardNet net({2, 3});
  EXPECT_THROW(encode(net, Vec::Zero(3)), DimensionError);
}

TEST(LossAutoencoder, IdentityReconstructionIsZero) {
  FeedforwardNet enc({2, 2}), dec({2, 2});
  enc.weights[0] = Mat::Identity(2, 2);
  dec.weights[0] = Mat::Identity(2, 2);
  EXPECT_DOUBLE_EQ(loss_autoencoder(enc, dec, Mat::Random(2, 10)), 0.0);
}

TEST(LossAutoencoder, ConstantZeroDecoder) {
  FeedforwardNet enc({2, 2}), dec({2, 2});
  EXPECT_DOUBLE_EQ(loss_autoencoder(enc, dec, (Mat(2, 1) << 1.0, 0.0).finished()), 1.0);
}

TEST(LossAutoencoder, OffsetReconstruction) {
  FeedforwardNet enc({2, 2}), dec({2, 2});
  enc.weights[0] = Mat::Identity(2, 2);
  dec.weights[0] = Mat::Identity(2, 2);
  dec.biases[0] = (Vec(2) << 0.1, 0.0).finished();
  EXPECT_NEAR(loss_autoencoder(enc, dec, (Mat(2, 1) << 0.3, -0.2).finished()), 0.01, 1e-15);
}

TEST(LossForward, ConstantLiftWithIdentityK) {
  FeedforwardNet enc({1, 2});
  enc.biases[0] = (Vec(2) << 1.0, -2.0).finished();
  const std::vector<Vec> traj(5, Vec::Constant(1, 0.7));
  EXPECT_DOUBLE_EQ(loss_forward(enc, Mat::Identity(2, 2), traj, 4), 0.0);
}

TEST(LossForward, ScalarGeometricSequence) {
  FeedforwardNet enc({1, 1});
  enc.weights[0](0, 0) = 1.0;
  const std::vector<Vec> traj = {Vec::Constant(1, 1.0), Vec::Constant(1, 0.5), Vec::Constant(1, 0.25)};
  EXPECT_DOUBLE_EQ(loss_forward(enc, Mat::Constant(1, 1, 0.5), traj, 2), 0.0);
}

TEST(LossForward, HorizonOneIsOneStepResidual) {
  std::mt19937_64 rng(5);
  const auto enc = init_network({2, 4, 3}, rng);
  const Mat K = Mat::Random(3, 3);
  const std::vector<Vec> traj = {Vec::Random(2), Vec::Random(2)};
  EXPECT_NEAR(loss_forward(enc, K, traj, 1), (enc(traj[1]) - K * enc(traj[0])).squaredNorm(), 1e-14);
  EXPECT_THROW(loss_forward(enc, K, traj, 2), InvalidArgument);
}

TEST(Backprop, ZeroLossGivesZeroGradient) {
  auto m = random_model(6, {2, 3, 3, 2}, {2, 3, 3, 2});
  for (auto& b : m.encoder.biases) b.setZero();
  for (auto& b : m.decoder.biases) b.setZero();
  std::vector<Window> w(3, Window::Zero(2, 4));
  TrainConfig cfg;
  cfg.horizon = 3;
  const auto g = backprop_gradients(m, w, cfg);
  EXPECT_EQ(g.loss, 0.0);
  EXPECT_EQ(g.flat.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backprop, MatchesFiniteDifferencesOnTinyNets) {
  TrainConfig cfg;
  cfg.horizon = 3;
  cfg.p_ae = 0.7;
  cfg.p_forward = 1.3;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = random_model(100 + seed, {2, 3, 3, 2}, {2, 3, 3, 2});
    ASSERT_LE(m.parameter_count(), 200);
    const auto w = random_windows(200 + seed, 2, cfg.horizon, 4);
    EXPECT_LT(gradient_check(m, w, cfg), 1e-5) << "seed " << seed;
  }
}

TEST(Backprop, KoopmanGradientMatchesLeastSquaresFormula) {
  const auto m = random_model(7, {2, 5, 3}, {3, 5, 2});
  TrainConfig cfg;
  cfg.horizon = 1;
  const auto w = random_windows(8, 2, 1, 6);
  Mat X(2, 6), Y(2, 6);
  for (int c = 0; c < 6; ++c) {
    X.col(c) = w[c].col(0);
    Y.col(c) = w[c].col(1);
  }
  const Mat PX = m.encoder.forward(X), PY = m.encoder.forward(Y);
  // Joint objective averages over windows (and over T = 1).
  const Mat want = 2.0 * (m.K * PX - PY) * PX.transpose() / 6.0;
  const auto g = backprop_gradients(m, w, cfg);
  const Vec flat = g.flat.tail(m.K.size());
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < 3; ++c) EXPECT_NEAR(flat(r * 3 + c), want(r, c), 1e-12);
}

namespace {

SnapshotSet decay_data() {
  return sample_snapshots(linear_field(Mat::Constant(1, 1, -1.0)), Region::cube(1, 2.0), 8, 30, 0.05, 11);
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.horizon = 5;
  cfg.batch_size = 32;
  cfg.learning_rate = 2e-3;
  cfg.epochs = 2000;
  cfg.window_stride = 5;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(TrainJoint, LinearDecayConverges) {
  const auto res = train_joint(decay_data(), {1, 8, 8, 4}, {4, 8, 8, 1}, small_config());
  ASSERT_EQ(res.losses.size(), 2001u);
  EXPECT_LT(res.best_loss, 0.1 * res.losses.front());
}

TEST(TrainJoint, ZeroEpochsReturnsInitialParameters) {
  auto cfg = small_config();
  cfg.epochs = 0;
  const auto data = decay_data();
  const auto res = train_joint(data, {1, 8, 4}, {4, 8, 1}, cfg);
  std::mt19937_64 rng(cfg.seed);
  const auto enc = init_network({1, 8, 4}, rng);
  const auto dec = init_network({4, 8, 1}, rng);
  EXPECT_TRUE(res.model.encoder == enc);
  EXPECT_TRUE(res.model.decoder == dec);
  EXPECT_EQ(res.losses.size(), 1u);
  EXPECT_EQ(res.best_epoch, 0);
}

TEST(TrainJoint, DeterministicAndBestIsRunningMinimum) {
  auto cfg = small_config();
  cfg.epochs = 30;
  const auto data = decay_data();
  const auto a = train_joint(data, {1, 8, 4}, {4, 8, 1}, cfg);
  const auto b = train_joint(data, {1, 8, 4}, {4, 8, 1}, cfg);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(a.model.flatten(), b.model.flatten());
  double running = a.losses.front();
  for (double l : a.losses) running = std::min(running, l);
  EXPECT_EQ(a.best_loss, running);
}

TEST(TrainJoint, RejectsShortTrajectories) {
  auto cfg = small_config();
  cfg.horizon = 40;
  EXPECT_THROW(train_joint(decay_data(), {1, 4}, {4, 1}, cfg), InvalidArgument);
}

TEST(TrainJoint, BlowUpReportsEpoch) {
  auto cfg = small_config();
  cfg.learning_rate = 1e6;
  cfg.epochs = 50;
  try {
    train_joint(decay_data(), {1, 8, 4}, {4, 8, 1}, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDivergence& e) {
    EXPECT_GE(e.epoch(), 1);
  }
}
