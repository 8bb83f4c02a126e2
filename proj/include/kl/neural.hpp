#pragma once

// Encoder-decoder Koopman dictionary: tanh feedforward nets, autoencoder and
// multi-step prediction losses, exact reverse-mode gradients and joint training.

#include "kl/core.hpp"
#include "kl/linalg.hpp"
#include "kl/systems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace kl {

/// Dense feedforward network: tanh on hidden layers, identity on the output layer.
struct FeedforwardNet {
  std::vector<int> widths;  // input, hidden..., output
  std::vector<Mat> weights;  // weights[l] is widths[l+1] x widths[l]
  std::vector<Vec> biases;

  FeedforwardNet() = default;

  /// Zero-initialised net with the given layer widths.
  explicit FeedforwardNet(std::vector<int> w) : widths(std::move(w)) {
    if (widths.size() < 2) throw InvalidArgument("FeedforwardNet: needs at least input and output width");
    for (int v : widths)
      if (v <= 0) throw InvalidArgument("FeedforwardNet: widths must be positive");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      weights.push_back(Mat::Zero(widths[l + 1], widths[l]));
      biases.push_back(Vec::Zero(widths[l + 1]));
    }
  }

  int layers() const noexcept { return static_cast<int>(weights.size()); }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }

  Eigen::Index parameter_count() const {
    Eigen::Index c = 0;
    for (int l = 0; l < layers(); ++l) c += weights[l].size() + biases[l].size();
    return c;
  }

  struct Cache {
    std::vector<Mat> activations;  // activations[0] = input, activations[L] = output
  };

  Mat forward(const Mat& X, Cache* cache = nullptr) const {
    require_dim(X.rows(), input_dim(), "FeedforwardNet::forward");
    Mat a = X;
    if (cache) {
      cache->activations.clear();
      cache->activations.push_back(a);
    }
    for (int l = 0; l < layers(); ++l) {
      Mat z = weights[l] * a;
      z.colwise() += biases[l];
      if (l + 1 < layers()) z = z.array().tanh().matrix();
      a = std::move(z);
      if (cache) cache->activations.push_back(a);
    }
    return a;
  }

  Vec operator()(const Vec& x) const { return forward(x); }

  /// Accumulates parameter gradients into (dW, db) and returns d loss / d input.
  Mat backward(const Cache& cache, const Mat& d_out, std::vector<Mat>& dW, std::vector<Vec>& db) const {
    Mat delta = d_out;
    for (int l = layers() - 1; l >= 0; --l) {
      const Mat& a_prev = cache.activations[static_cast<std::size_t>(l)];
      dW[static_cast<std::size_t>(l)].noalias() += delta * a_prev.transpose();
      db[static_cast<std::size_t>(l)] += delta.rowwise().sum();
      Mat g = weights[l].transpose() * delta;
      if (l > 0) g = (g.array() * (1.0 - a_prev.array().square())).matrix();
      delta = std::move(g);
    }
    return delta;
  }

  /// Parameters in layer order: row-major weights then biases.
  void flatten_into(Vec& out, Eigen::Index& pos) const {
    for (int l = 0; l < layers(); ++l) {
      for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
        for (Eigen::Index c = 0; c < weights[l].cols(); ++c) out(pos++) = weights[l](r, c);
      for (Eigen::Index r = 0; r < biases[l].size(); ++r) out(pos++) = biases[l](r);
    }
  }
  void unflatten_from(const Vec& in, Eigen::Index& pos) {
    for (int l = 0; l < layers(); ++l) {
      for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
        for (Eigen::Index c = 0; c < weights[l].cols(); ++c) weights[l](r, c) = in(pos++);
      for (Eigen::Index r = 0; r < biases[l].size(); ++r) biases[l](r) = in(pos++);
    }
  }

  bool all_finite() const {
    for (int l = 0; l < layers(); ++l)
      if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    return true;
  }

  friend bool operator==(const FeedforwardNet& a, const FeedforwardNet& b) {
    if (a.widths != b.widths) return false;
    for (int l = 0; l < a.layers(); ++l)
      if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
    return true;
  }
};

/// Scale-balanced uniform init in +-sqrt(6/(fan_in+fan_out)); biases zero.
template <class Rng>
FeedforwardNet init_network(const std::vector<int>& widths, Rng& rng) {
  FeedforwardNet net(widths);
  for (int l = 0; l < net.layers(); ++l) {
    const double lim = std::sqrt(6.0 / static_cast<double>(widths[l] + widths[l + 1]));
    std::uniform_real_distribution<double> uni(-lim, lim);
    for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) net.weights[l](r, c) = uni(rng);
  }
  return net;
}

inline Vec encode(const FeedforwardNet& net, const Vec& x) {
  require_dim(x.size(), net.input_dim(), "encode");
  return net.forward(x);
}

/// Encoder viewed as a Koopman dictionary (no analytic Jacobian).
class NetworkDictionary {
 public:
  NetworkDictionary() = default;
  explicit NetworkDictionary(FeedforwardNet encoder) : encoder_(std::move(encoder)) {}

  int dim() const { return encoder_.input_dim(); }
  int size() const { return encoder_.output_dim(); }
  Vec eval(const Vec& x) const { return encode(encoder_, x); }
  Mat eval_batch(const Mat& X) const { return encoder_.forward(X); }
  const FeedforwardNet& encoder() const noexcept { return encoder_; }

 private:
  FeedforwardNet encoder_;
};

/// Mean of ||x - dec(enc(x))||^2 over the batch columns.
inline double loss_autoencoder(const FeedforwardNet& enc, const FeedforwardNet& dec, const Mat& batch) {
  require_dim(dec.output_dim(), batch.rows(), "loss_autoencoder decoder output");
  if (batch.cols() == 0) return 0.0;
  const Mat rec = dec.forward(enc.forward(batch));
  return (batch - rec).colwise().squaredNorm().mean();
}

/// sum_{i=0}^{T-1} ||enc(x_{i+1}) - K^{i+1} enc(x_0)||^2 over a window x_0..x_T.
inline double loss_forward(const FeedforwardNet& enc, const Mat& K, const std::vector<Vec>& window, int horizon) {
  if (horizon < 1) throw InvalidArgument("loss_forward: horizon must be >= 1");
  if (static_cast<int>(window.size()) < horizon + 1)
    throw InvalidArgument("loss_forward: trajectory shorter than horizon + 1");
  require_dim(K.rows(), enc.output_dim(), "loss_forward K");
  Vec pred = enc(window[0]);
  double s = 0.0;
  for (int i = 0; i < horizon; ++i) {
    pred = K * pred;
    s += (enc(window[static_cast<std::size_t>(i) + 1]) - pred).squaredNorm();
  }
  return s;
}

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 100;
  int batch_size = 16;
  int horizon = 16;  // T
  double p_ae = 1.0;  // p1
  double p_forward = 1.0;  // p2
  double momentum = 0.9;
  int window_stride = 1;
  std::uint64_t seed = 0;
};

/// Encoder, decoder and Koopman matrix trained jointly.
struct AutoencoderKoopman {
  FeedforwardNet encoder;
  FeedforwardNet decoder;
  Mat K;

  Eigen::Index parameter_count() const {
    return encoder.parameter_count() + decoder.parameter_count() + K.size();
  }
  Vec flatten() const {
    Vec v(parameter_count());
    Eigen::Index pos = 0;
    encoder.flatten_into(v, pos);
    decoder.flatten_into(v, pos);
    for (Eigen::Index r = 0; r < K.rows(); ++r)
      for (Eigen::Index c = 0; c < K.cols(); ++c) v(pos++) = K(r, c);
    return v;
  }
  void unflatten(const Vec& v) {
    require_dim(v.size(), parameter_count(), "AutoencoderKoopman::unflatten");
    Eigen::Index pos = 0;
    encoder.unflatten_from(v, pos);
    decoder.unflatten_from(v, pos);
    for (Eigen::Index r = 0; r < K.rows(); ++r)
      for (Eigen::Index c = 0; c < K.cols(); ++c) K(r, c) = v(pos++);
  }
};

/// A window x_0..x_T stored column-wise (n x (T+1)).
using Window = Mat;

/// Joint objective: mean over windows of (1/T) sum_i (p1 L_ae(x_i) + p2 L_f_i).
inline double joint_objective(const AutoencoderKoopman& m, const std::vector<Window>& windows,
                              const TrainConfig& cfg) {
  if (windows.empty()) return 0.0;
  const int T = cfg.horizon;
  double total = 0.0;
  for (const auto& w : windows) {
    if (w.cols() < T + 1) throw InvalidArgument("joint_objective: window shorter than T + 1");
    const Mat Z = m.encoder.forward(w.leftCols(T + 1));
    const Mat rec = m.decoder.forward(Z.leftCols(T));
    double ae = (w.leftCols(T) - rec).colwise().squaredNorm().sum();
    double fw = 0.0;
    Vec pred = Z.col(0);
    for (int i = 1; i <= T; ++i) {
      pred = m.K * pred;
      fw += (Z.col(i) - pred).squaredNorm();
    }
    total += (cfg.p_ae * ae + cfg.p_forward * fw) / T;
  }
  return total / static_cast<double>(windows.size());
}

struct JointGradient {
  double loss = 0.0;
  Vec flat;  // same layout as AutoencoderKoopman::flatten()
};

/// Exact reverse-mode gradient of joint_objective with respect to all parameters.
inline JointGradient backprop_gradients(const AutoencoderKoopman& m, const std::vector<Window>& windows,
                                        const TrainConfig& cfg) {
  const int T = cfg.horizon;
  const auto& enc = m.encoder;
  const auto& dec = m.decoder;
  std::vector<Mat> dWe, dWd;
  std::vector<Vec> dbe, dbd;
  for (int l = 0; l < enc.layers(); ++l) {
    dWe.push_back(Mat::Zero(enc.weights[l].rows(), enc.weights[l].cols()));
    dbe.push_back(Vec::Zero(enc.biases[l].size()));
  }
  for (int l = 0; l < dec.layers(); ++l) {
    dWd.push_back(Mat::Zero(dec.weights[l].rows(), dec.weights[l].cols()));
    dbd.push_back(Vec::Zero(dec.biases[l].size()));
  }
  Mat dK = Mat::Zero(m.K.rows(), m.K.cols());
  JointGradient out;
  if (windows.empty()) {
    out.flat = Vec::Zero(m.parameter_count());
    return out;
  }
  const double s = 1.0 / (static_cast<double>(T) * static_cast<double>(windows.size()));
  FeedforwardNet::Cache ce, cd;
  std::vector<Vec> preds(static_cast<std::size_t>(T) + 1);
  for (const auto& w : windows) {
    if (w.cols() < T + 1) throw InvalidArgument("backprop_gradients: window shorter than T + 1");
    const Mat X = w.leftCols(T + 1);
    const Mat Z = enc.forward(X, &ce);
    const Mat rec = dec.forward(Z.leftCols(T), &cd);
    const Mat r_ae = rec - X.leftCols(T);
    Mat dZ = Mat::Zero(Z.rows(), Z.cols());
    dZ.leftCols(T) += dec.backward(cd, (2.0 * cfg.p_ae * s) * r_ae, dWd, dbd);

    preds[0] = Z.col(0);
    double fw = 0.0;
    for (int k = 1; k <= T; ++k) preds[k] = m.K * preds[k - 1];
    Vec G = Vec::Zero(Z.rows());
    for (int k = T; k >= 1; --k) {
      const Vec r = Z.col(k) - preds[k];
      fw += r.squaredNorm();
      dZ.col(k) += (2.0 * cfg.p_forward * s) * r;
      G -= (2.0 * cfg.p_forward * s) * r;
      dK.noalias() += G * preds[k - 1].transpose();
      G = m.K.transpose() * G;
    }
    dZ.col(0) += G;
    enc.backward(ce, dZ, dWe, dbe);
    out.loss += (cfg.p_ae * r_ae.colwise().squaredNorm().sum() + cfg.p_forward * fw) / T;
  }
  out.loss /= static_cast<double>(windows.size());

  out.flat.resize(m.parameter_count());
  Eigen::Index pos = 0;
  auto put = [&](const std::vector<Mat>& dW, const std::vector<Vec>& db) {
    for (std::size_t l = 0; l < dW.size(); ++l) {
      for (Eigen::Index r = 0; r < dW[l].rows(); ++r)
        for (Eigen::Index c = 0; c < dW[l].cols(); ++c) out.flat(pos++) = dW[l](r, c);
      for (Eigen::Index r = 0; r < db[l].size(); ++r) out.flat(pos++) = db[l](r);
    }
  };
  put(dWe, dbe);
  put(dWd, dbd);
  for (Eigen::Index r = 0; r < dK.rows(); ++r)
    for (Eigen::Index c = 0; c < dK.cols(); ++c) out.flat(pos++) = dK(r, c);
  return out;
}

/// All windows of length T+1 taken from the grouped trajectories.
inline std::vector<Window> make_windows(const SnapshotSet& data, int horizon, int stride = 1) {
  if (stride < 1) throw InvalidArgument("make_windows: stride must be >= 1");
  std::vector<Window> out;
  for (const auto& traj : data.trajectories()) {
    const int len = static_cast<int>(traj.size());
    for (int start = 0; start + horizon < len; start += stride) {
      Window w(data.dim(), horizon + 1);
      for (int i = 0; i <= horizon; ++i) w.col(i) = traj[static_cast<std::size_t>(start + i)];
      out.push_back(std::move(w));
    }
  }
  return out;
}

/// Raised when the joint loss stops being finite during training.
class TrainingDivergence : public NumericalError {
 public:
  TrainingDivergence(const std::string& what, int epoch) : NumericalError(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

struct TrainResult {
  AutoencoderKoopman model;     // parameters at the lowest recorded loss
  std::vector<double> losses;   // losses[0] is the initial loss, then one per epoch
  double best_loss = 0.0;
  int best_epoch = 0;
};

/// Momentum gradient descent on the joint objective. K starts from a one-step
/// least-squares fit on the initial encoder outputs.
inline TrainResult train_joint(const SnapshotSet& data, const std::vector<int>& encoder_widths,
                               const std::vector<int>& decoder_widths, const TrainConfig& cfg) {
  if (cfg.horizon < 1) throw InvalidArgument("train_joint: horizon must be >= 1");
  if (!(cfg.p_ae > 0.0) || !(cfg.p_forward > 0.0)) throw InvalidArgument("train_joint: loss weights must be positive");
  if (encoder_widths.front() != data.dim() || decoder_widths.back() != data.dim())
    throw DimensionError("train_joint: network widths do not match the state dimension");
  if (encoder_widths.back() != decoder_widths.front())
    throw DimensionError("train_joint: encoder output must feed the decoder input");
  const auto windows = make_windows(data, cfg.horizon, cfg.window_stride);
  if (windows.empty()) throw InvalidArgument("train_joint: no trajectory of length >= T + 1");

  std::mt19937_64 rng(cfg.seed);
  AutoencoderKoopman m;
  m.encoder = init_network(encoder_widths, rng);
  m.decoder = init_network(decoder_widths, rng);
  m.K = edmd_matrix(m.encoder.forward(data.X), m.encoder.forward(data.Y));

  TrainResult res;
  double loss = joint_objective(m, windows, cfg);
  if (!std::isfinite(loss)) throw TrainingDivergence("train_joint: non-finite initial loss", 0);
  res.losses.push_back(loss);
  res.model = m;
  res.best_loss = loss;

  Vec theta = m.flatten();
  Vec velocity = Vec::Zero(theta.size());
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  std::vector<Window> batch;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(windows[order[k]]);
      const auto g = backprop_gradients(m, batch, cfg);
      velocity = cfg.momentum * velocity - cfg.learning_rate * g.flat;
      theta += velocity;
      m.unflatten(theta);
    }
    loss = joint_objective(m, windows, cfg);
    if (!std::isfinite(loss))
      throw TrainingDivergence("train_joint: non-finite loss at epoch " + std::to_string(epoch), epoch);
    res.losses.push_back(loss);
    if (loss < res.best_loss) {
      res.best_loss = loss;
      res.best_epoch = epoch;
      res.model = m;
    }
  }
  return res;
}

}  // namespace kl
