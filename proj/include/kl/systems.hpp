#pragma once

// Polynomial vector fields, fixed-step RK4 integration and snapshot sampling.

#include "kl/core.hpp"
#include "kl/polynomial.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace kl {

namespace detail {

// Polynomial flattened for fast repeated evaluation: only nonzero exponents kept.
struct FlatPoly {
  struct Mono {
    double coef;
    std::vector<std::pair<int, int>> factors;  // (variable, exponent)
  };
  std::vector<Mono> monos;

  FlatPoly() = default;
  explicit FlatPoly(const Polynomial& p) {
    for (const auto& [e, c] : p.terms()) {
      Mono m{c, {}};
      for (int j = 0; j < static_cast<int>(e.size()); ++j)
        if (e[j] > 0) m.factors.emplace_back(j, e[j]);
      monos.push_back(std::move(m));
    }
  }

  // `pw(j, k)` holds x_j^k.
  double eval(const Mat& pw) const {
    double s = 0.0;
    for (const auto& m : monos) {
      double t = m.coef;
      for (const auto& [j, k] : m.factors) t *= pw(j, k);
      s += t;
    }
    return s;
  }
};

inline void fill_powers(const Vec& x, int max_exp, Mat& pw) {
  pw.resize(x.size(), max_exp + 1);
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    pw(j, 0) = 1.0;
    for (int k = 1; k <= max_exp; ++k) pw(j, k) = pw(j, k - 1) * x(j);
  }
}

}  // namespace detail

/// Polynomial dynamical system dx/dt = f(x).
class VectorField {
 public:
  VectorField() = default;

  VectorField(std::vector<Polynomial> components, std::string name = {})
      : name_(std::move(name)), components_(std::move(components)) {
    if (components_.empty()) throw InvalidArgument("VectorField: needs at least one component");
    const int n = dim();
    for (const auto& p : components_) require_dim(p.dim(), n, "VectorField component");
    build_caches();
  }

  /// Build from per-coordinate term lists.
  static VectorField from_terms(int n, const std::vector<std::vector<Term>>& terms,
                                std::string name = {}) {
    require_dim(static_cast<Eigen::Index>(terms.size()), n, "VectorField::from_terms");
    std::vector<Polynomial> comps;
    comps.reserve(terms.size());
    for (const auto& t : terms) comps.emplace_back(n, t);
    return VectorField(std::move(comps), std::move(name));
  }

  int dim() const noexcept { return components_.empty() ? 0 : components_.front().dim(); }
  const std::string& name() const noexcept { return name_; }
  const std::vector<Polynomial>& components() const noexcept { return components_; }
  int max_exponent() const noexcept { return max_exp_; }

  Vec operator()(const Vec& x) const {
    require_dim(x.size(), dim(), "eval_field");
    Mat pw;
    detail::fill_powers(x, std::max(max_exp_, 1), pw);
    Vec out(dim());
    for (int i = 0; i < dim(); ++i) out(i) = flat_[i].eval(pw);
    return out;
  }

  /// Jacobian df_i/dx_j, assembled from symbolic derivatives of the terms.
  Mat jacobian(const Vec& x) const {
    require_dim(x.size(), dim(), "field jacobian");
    Mat pw;
    detail::fill_powers(x, std::max(max_exp_, 1), pw);
    const int n = dim();
    Mat J(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) J(i, j) = flat_jac_[i * n + j].eval(pw);
    return J;
  }

 private:
  void build_caches() {
    const int n = dim();
    max_exp_ = 0;
    flat_.clear();
    flat_jac_.clear();
    for (const auto& p : components_) {
      max_exp_ = std::max(max_exp_, p.max_exponent());
      flat_.emplace_back(p);
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) flat_jac_.emplace_back(components_[i].derivative(j));
  }

  std::string name_;
  std::vector<Polynomial> components_;
  std::vector<detail::FlatPoly> flat_;
  std::vector<detail::FlatPoly> flat_jac_;
  int max_exp_ = 0;
};

inline Vec eval_field(const VectorField& f, const Vec& x) { return f(x); }

// ---------------------------------------------------------------------------
// Built-in systems

/// x1' = x2, x2' = -x1 + x2 (1 - x1^2).
inline VectorField van_der_pol() {
  return VectorField::from_terms(
      2, {{{1.0, {0, 1}}}, {{-1.0, {1, 0}}, {1.0, {0, 1}}, {-1.0, {2, 1}}}}, "van_der_pol");
}

/// x' = A x.
inline VectorField linear_field(const Mat& A, std::string name = "linear") {
  if (A.rows() != A.cols()) throw DimensionError("linear_field: A must be square");
  const int n = static_cast<int>(A.rows());
  std::vector<std::vector<Term>> terms(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (A(i, j) == 0.0) continue;
      Exponents e(n, 0);
      e[j] = 1;
      terms[i].push_back({A(i, j), e});
    }
  return VectorField::from_terms(n, terms, std::move(name));
}

/// Generalized Lotka-Volterra: x_i' = x_i (rho_i + sum_j K_ij x_j).
inline VectorField glv_field(const Vec& rho, const Mat& K) {
  const auto n = rho.size();
  if (n == 0) throw DimensionError("gLV: empty growth vector");
  if (K.rows() != n || K.cols() != n)
    throw DimensionError("gLV: interaction matrix must be " + std::to_string(n) + "x" +
                         std::to_string(n));
  std::vector<std::vector<Term>> terms(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Exponents e(n, 0);
    e[i] = 1;
    terms[i].push_back({rho(i), e});
    for (Eigen::Index j = 0; j < n; ++j) {
      Exponents q(n, 0);
      q[i] += 1;
      q[j] += 1;
      terms[i].push_back({K(i, j), q});
    }
  }
  return VectorField::from_terms(static_cast<int>(n), terms, "glv");
}

struct GlvParameters {
  Vec rho;
  Mat interaction;
};

inline GlvParameters parse_glv(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("rho") || !j.contains("interaction"))
    throw ParseError("gLV file: expected keys 'rho' and 'interaction'");
  const auto& jr = j.at("rho");
  const auto& jk = j.at("interaction");
  if (!jr.is_array() || !jk.is_array()) throw ParseError("gLV file: 'rho'/'interaction' must be arrays");
  GlvParameters p;
  p.rho.resize(static_cast<Eigen::Index>(jr.size()));
  for (std::size_t i = 0; i < jr.size(); ++i) {
    if (!jr[i].is_number()) throw ParseError("gLV file: non-numeric entry in 'rho'");
    p.rho(static_cast<Eigen::Index>(i)) = jr[i].get<double>();
  }
  const auto n = p.rho.size();
  if (static_cast<Eigen::Index>(jk.size()) != n)
    throw DimensionError("gLV file: interaction has " + std::to_string(jk.size()) + " rows, rho has " +
                         std::to_string(n) + " entries");
  p.interaction.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = jk[static_cast<std::size_t>(i)];
    if (!row.is_array()) throw ParseError("gLV file: interaction rows must be arrays");
    if (static_cast<Eigen::Index>(row.size()) != n)
      throw DimensionError("gLV file: interaction row " + std::to_string(i) + " has " +
                           std::to_string(row.size()) + " entries, expected " + std::to_string(n));
    for (Eigen::Index k = 0; k < n; ++k) {
      if (!row[static_cast<std::size_t>(k)].is_number())
        throw ParseError("gLV file: non-numeric entry in 'interaction'");
      p.interaction(i, k) = row[static_cast<std::size_t>(k)].get<double>();
    }
  }
  return p;
}

/// Load a gLV parameter file (JSON with `rho` and `interaction`).
inline VectorField load_glv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open gLV parameter file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed gLV parameter file " + path + ": " + e.what());
  }
  const auto p = parse_glv(j);
  return glv_field(p.rho, p.interaction);
}

/// Seeded gLV with equilibrium x* drawn in [lo, hi]^n and K = -D + E, where D is
/// diagonal in [0.5, 1] / hi and every row of E sums to at most half of D_ii in
/// absolute value; rho = -K x*. diag(x*) K is then strictly row diagonally dominant
/// with negative diagonal, so x* is locally exponentially stable.
struct GlvSystem {
  Vec rho;
  Mat interaction;
  Vec equilibrium;
};

inline GlvSystem random_stable_glv(int n, std::uint64_t seed, double lo = 6.0, double hi = 10.0) {
  if (n < 1) throw InvalidArgument("random_stable_glv: n must be positive");
  if (!(lo > 0.0) || !(hi >= lo)) throw InvalidArgument("random_stable_glv: need 0 < lo <= hi");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  GlvSystem g;
  g.equilibrium.resize(n);
  for (int i = 0; i < n; ++i) g.equilibrium(i) = lo + (hi - lo) * uni(rng);
  g.interaction = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const double d = (0.5 + 0.5 * uni(rng)) / hi;
    g.interaction(i, i) = -d;
    if (n == 1) continue;
    Vec e(n - 1);
    for (int k = 0; k < n - 1; ++k) e(k) = 2.0 * uni(rng) - 1.0;
    e *= 0.5 * d * uni(rng) / std::max(e.cwiseAbs().sum(), 1e-300);
    for (int j = 0, k = 0; j < n; ++j)
      if (j != i) g.interaction(i, j) = e(k++);
  }
  g.rho = -g.interaction * g.equilibrium;
  return g;
}

/// The same dynamics in deviation coordinates z = x - x0: z' = f(x0 + z).
inline VectorField shifted_field(const VectorField& f, const Vec& x0) {
  const int n = f.dim();
  require_dim(x0.size(), n, "shifted_field");
  std::vector<Polynomial> shifted_var;
  for (int j = 0; j < n; ++j) shifted_var.push_back(Polynomial::variable(n, j) + Polynomial::constant(n, x0(j)));
  std::vector<Polynomial> comps;
  for (const auto& p : f.components()) {
    Polynomial out(n);
    for (const auto& [e, c] : p.terms()) {
      Polynomial t = Polynomial::constant(n, c);
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < e[static_cast<std::size_t>(j)]; ++k) t = t * shifted_var[static_cast<std::size_t>(j)];
      out += t;
    }
    comps.push_back(std::move(out));
  }
  return VectorField(std::move(comps), f.name());
}

// ---------------------------------------------------------------------------
// Integration

struct Trajectory {
  std::vector<Vec> states;
  double dt = 0.0;
  double t0 = 0.0;
};

inline constexpr double kDivergenceBound = 1e9;

inline Vec rk4_step(const VectorField& f, const Vec& x, double dt) {
  const Vec k1 = f(x);
  const Vec k2 = f(x + 0.5 * dt * k1);
  const Vec k3 = f(x + 0.5 * dt * k2);
  const Vec k4 = f(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline bool diverged(const Vec& x) {
  return !x.allFinite() || x.cwiseAbs().maxCoeff() > kDivergenceBound;
}

/// Classical fixed-step RK4. Throws DivergenceError naming the step that left the finite range.
inline Trajectory integrate_rk4(const VectorField& f, const Vec& x0, double dt, std::int64_t steps,
                                double t0 = 0.0) {
  require_dim(x0.size(), f.dim(), "integrate_rk4");
  if (!(dt > 0.0)) throw InvalidArgument("integrate_rk4: dt must be positive");
  if (steps < 0) throw InvalidArgument("integrate_rk4: steps must be non-negative");
  if (diverged(x0)) throw DivergenceError("integrate_rk4: non-finite initial state", 0);
  Trajectory tr;
  tr.dt = dt;
  tr.t0 = t0;
  tr.states.reserve(static_cast<std::size_t>(steps) + 1);
  tr.states.push_back(x0);
  Vec x = x0;
  for (std::int64_t s = 1; s <= steps; ++s) {
    x = rk4_step(f, x, dt);
    if (diverged(x)) throw DivergenceError("integrate_rk4: state diverged at step " + std::to_string(s), s);
    tr.states.push_back(x);
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Regions and sampling

struct Box {
  Vec lo;
  Vec hi;
};

struct Ball {
  Vec center;
  double radius = 1.0;
};

/// Axis-aligned box or Euclidean ball.
class Region {
 public:
  Region() = default;
  Region(Box b) : shape_(std::move(b)) { validate(); }
  Region(Ball b) : shape_(std::move(b)) { validate(); }

  static Region box(const Vec& lo, const Vec& hi) { return Region(Box{lo, hi}); }
  static Region cube(int n, double half_width) {
    return box(Vec::Constant(n, -half_width), Vec::Constant(n, half_width));
  }
  static Region ball(const Vec& c, double r) { return Region(Ball{c, r}); }

  bool is_box() const noexcept { return std::holds_alternative<Box>(shape_); }
  const Box& as_box() const { return std::get<Box>(shape_); }
  const Ball& as_ball() const { return std::get<Ball>(shape_); }

  int dim() const {
    return static_cast<int>(is_box() ? as_box().lo.size() : as_ball().center.size());
  }

  bool contains(const Vec& x) const {
    if (is_box()) {
      const auto& b = as_box();
      return (x.array() >= b.lo.array()).all() && (x.array() <= b.hi.array()).all();
    }
    const auto& b = as_ball();
    return (x - b.center).norm() <= b.radius;
  }

  /// Smallest axis-aligned box containing the region.
  Box bounding_box() const {
    if (is_box()) return as_box();
    const auto& b = as_ball();
    return {b.center.array() - b.radius, b.center.array() + b.radius};
  }

  /// Uniform sample. Balls use a normalized Gaussian direction scaled by radius * u^(1/n).
  template <class Rng>
  Vec sample(Rng& rng) const {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    if (is_box()) {
      const auto& b = as_box();
      Vec x(b.lo.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = b.lo(i) + (b.hi(i) - b.lo(i)) * uni(rng);
      return x;
    }
    const auto& b = as_ball();
    const auto n = b.center.size();
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec dir(n);
    double norm = 0.0;
    do {
      for (Eigen::Index i = 0; i < n; ++i) dir(i) = gauss(rng);
      norm = dir.norm();
    } while (norm == 0.0);
    const double r = b.radius * std::pow(uni(rng), 1.0 / static_cast<double>(n));
    return b.center + (r / norm) * dir;
  }

 private:
  void validate() const {
    if (is_box()) {
      const auto& b = as_box();
      if (b.lo.size() == 0 || b.lo.size() != b.hi.size()) throw DimensionError("Region: bad box bounds");
      if ((b.lo.array() > b.hi.array()).any()) throw InvalidArgument("Region: empty box");
    } else {
      const auto& b = as_ball();
      if (b.center.size() == 0) throw DimensionError("Region: empty ball center");
      if (!(b.radius >= 0.0)) throw InvalidArgument("Region: negative radius");
    }
  }

  std::variant<Box, Ball> shape_{Box{}};
};

/// Paired snapshots (x_i, y_i = F^dt(x_i)) stored column-wise.
struct SnapshotSet {
  Mat X;
  Mat Y;
  double dt = 0.0;
  std::vector<int> traj_id;  // one per column; empty when ungrouped

  Eigen::Index size() const noexcept { return X.cols(); }
  int dim() const noexcept { return static_cast<int>(X.rows()); }

  /// Reassemble trajectories from consecutive pairs sharing a traj_id.
  std::vector<std::vector<Vec>> trajectories() const {
    std::vector<std::vector<Vec>> out;
    if (traj_id.empty()) return out;
    std::map<int, std::size_t> slot;
    for (Eigen::Index k = 0; k < X.cols(); ++k) {
      const int id = traj_id[static_cast<std::size_t>(k)];
      auto it = slot.find(id);
      if (it == slot.end()) {
        it = slot.emplace(id, out.size()).first;
        out.push_back({X.col(k)});
      }
      out[it->second].push_back(Y.col(k));
    }
    return out;
  }
};

/// N trajectories of T steps from initial conditions drawn uniformly in `region`.
inline SnapshotSet sample_snapshots(const VectorField& f, const Region& region, int num_traj, int steps,
                                    double dt, std::uint64_t seed) {
  require_dim(region.dim(), f.dim(), "sample_snapshots");
  if (num_traj < 0 || steps < 0) throw InvalidArgument("sample_snapshots: negative count");
  std::mt19937_64 rng(seed);
  const int n = f.dim();
  SnapshotSet s;
  s.dt = dt;
  s.X.resize(n, static_cast<Eigen::Index>(num_traj) * steps);
  s.Y.resize(n, s.X.cols());
  s.traj_id.reserve(static_cast<std::size_t>(s.X.cols()));
  Eigen::Index col = 0;
  for (int t = 0; t < num_traj; ++t) {
    const Vec x0 = region.sample(rng);
    const auto tr = integrate_rk4(f, x0, dt, steps);
    for (int k = 0; k < steps; ++k) {
      s.X.col(col) = tr.states[static_cast<std::size_t>(k)];
      s.Y.col(col) = tr.states[static_cast<std::size_t>(k) + 1];
      s.traj_id.push_back(t);
      ++col;
    }
  }
  return s;
}

/// Concatenate snapshot sets with identical dt; trajectory ids are renumbered.
inline SnapshotSet concat_snapshots(const SnapshotSet& a, const SnapshotSet& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  require_dim(b.dim(), a.dim(), "concat_snapshots");
  if (a.dt != b.dt) throw InvalidArgument("concat_snapshots: dt mismatch");
  SnapshotSet s;
  s.dt = a.dt;
  s.X.resize(a.dim(), a.size() + b.size());
  s.Y.resize(a.dim(), s.X.cols());
  s.X << a.X, b.X;
  s.Y << a.Y, b.Y;
  int offset = 0;
  for (int id : a.traj_id) offset = std::max(offset, id + 1);
  s.traj_id = a.traj_id;
  for (int id : b.traj_id) s.traj_id.push_back(id + offset);
  if (a.traj_id.empty() || b.traj_id.empty()) s.traj_id.clear();
  return s;
}

}  // namespace kl
