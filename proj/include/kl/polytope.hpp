#pragma once

// Candidate polytopes over Z = [alpha_1 .. alpha_M, gamma] and the sampling
// loop that cuts them down with Lyapunov rows.
//
// Every generated row is stored (normalized, tagged). Rows carry an active
// flag: LPs run on the active rows only, and any inactive row violated by the
// result is switched back on and the LP re-solved, so reported centers and
// radii are exact for the full row set. Pruning just clears flags.

#include "kl/core.hpp"
#include "kl/lp.hpp"
#include "kl/lyapunov.hpp"
#include "kl/parallel.hpp"
#include "kl/systems.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace kl {

enum class RowTag { Init, Lyap, Decay, Exclusion, Separatrix, Refine };

inline const char* to_string(RowTag t) {
  switch (t) {
    case RowTag::Init: return "init";
    case RowTag::Lyap: return "lyap";
    case RowTag::Decay: return "decay";
    case RowTag::Exclusion: return "exclusion";
    case RowTag::Separatrix: return "separatrix";
    case RowTag::Refine: return "refine";
  }
  return "?";
}

inline RowTag row_tag_from_string(const std::string& s) {
  for (RowTag t : {RowTag::Init, RowTag::Lyap, RowTag::Decay, RowTag::Exclusion, RowTag::Separatrix, RowTag::Refine})
    if (s == to_string(t)) return t;
  throw ParseError("unknown row provenance '" + s + "'");
}

class EmptyPolytopeError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kStrictDelta = 1e-6;
inline constexpr double kFeasTol = 1e-9;
inline constexpr double kReactivateTol = 1e-10;

class HalfspacePolytope {
 public:
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  HalfspacePolytope() = default;
  explicit HalfspacePolytope(int dim) : dim_(dim) {
    if (dim < 1) throw InvalidArgument("HalfspacePolytope: dimension must be positive");
  }

  int dim() const noexcept { return dim_; }
  Eigen::Index rows() const noexcept { return static_cast<Eigen::Index>(b_.size()); }

  /// Adds a^T Z <= b scaled to ||a|| = 1. A zero row with b >= 0 is vacuous and
  /// skipped (returns false); with b < 0 it is kept and makes the set empty.
  bool add_row(const Eigen::Ref<const Vec>& a, double b, RowTag tag, bool active = true) {
    require_dim(a.size(), dim_, "HalfspacePolytope::add_row");
    if (!a.allFinite() || !std::isfinite(b)) throw InvalidArgument("HalfspacePolytope: non-finite row");
    const double norm = a.norm();
    if (norm == 0.0) {
      if (b >= 0.0) return false;
      push(a, b, tag, active);
      return true;
    }
    push(a / norm, b / norm, tag, active);
    return true;
  }

  /// Stores the row exactly as given (used when loading files).
  void add_row_raw(const Eigen::Ref<const Vec>& a, double b, RowTag tag, bool active) {
    require_dim(a.size(), dim_, "HalfspacePolytope::add_row_raw");
    if (!a.allFinite() || !std::isfinite(b)) throw InvalidArgument("HalfspacePolytope: non-finite row");
    push(a, b, tag, active);
  }

  Eigen::Map<const RowMat> A() const { return {a_.data(), rows(), dim_}; }
  Eigen::Map<const Vec> b() const { return {b_.data(), rows()}; }
  Eigen::Map<const Vec> row(Eigen::Index k) const { return {a_.data() + k * dim_, dim_}; }
  double rhs(Eigen::Index k) const { return b_[static_cast<std::size_t>(k)]; }
  RowTag tag(Eigen::Index k) const { return tags_[static_cast<std::size_t>(k)]; }
  bool active(Eigen::Index k) const { return active_[static_cast<std::size_t>(k)] != 0; }
  void set_active(Eigen::Index k, bool on) { active_[static_cast<std::size_t>(k)] = on ? 1 : 0; }
  const std::vector<char>& active_flags() const noexcept { return active_; }
  void set_active_flags(const std::vector<char>& f) {
    if (f.size() != active_.size()) throw DimensionError("HalfspacePolytope: flag count mismatch");
    active_ = f;
  }

  Eigen::Index count(RowTag t) const {
    return std::count(tags_.begin(), tags_.end(), t);
  }
  Eigen::Index active_count() const {
    return std::count(active_.begin(), active_.end(), char{1});
  }

  /// b - A Z for every row.
  Vec slack(const Vec& Z) const {
    require_dim(Z.size(), dim_, "HalfspacePolytope::slack");
    return b() - A() * Z;
  }
  bool contains(const Vec& Z, double tol = kFeasTol) const {
    return rows() == 0 || slack(Z).minCoeff() >= -tol;
  }

  /// Drops every row from index `n` on.
  void truncate(Eigen::Index n) {
    if (n < 0 || n > rows()) throw InvalidArgument("HalfspacePolytope::truncate: bad row count");
    const auto un = static_cast<std::size_t>(n);
    a_.resize(un * static_cast<std::size_t>(dim_));
    b_.resize(un);
    tags_.resize(un);
    active_.resize(un);
  }

  /// Copy holding the active rows only.
  HalfspacePolytope retained() const {
    HalfspacePolytope out(dim_);
    for (Eigen::Index k = 0; k < rows(); ++k)
      if (active(k)) out.push(row(k), rhs(k), tag(k), true);
    return out;
  }

  bool operator==(const HalfspacePolytope& o) const {
    return dim_ == o.dim_ && a_ == o.a_ && b_ == o.b_ && tags_ == o.tags_ && active_ == o.active_;
  }

 private:
  void push(const Eigen::Ref<const Vec>& a, double b, RowTag tag, bool active) {
    a_.insert(a_.end(), a.data(), a.data() + dim_);
    b_.push_back(b);
    tags_.push_back(tag);
    active_.push_back(active ? 1 : 0);
  }

  int dim_ = 0;
  std::vector<double> a_;
  std::vector<double> b_;
  std::vector<RowTag> tags_;
  std::vector<char> active_;
};

/// {Z in [0,1]^{M+1}, sum_{i<=M} Z_i >= 1}.
inline HalfspacePolytope init_polytope(int M) {
  if (M < 1) throw InvalidArgument("init_polytope: M must be at least 1");
  HalfspacePolytope P(M + 1);
  for (int j = 0; j <= M; ++j) {
    Vec e = Vec::Zero(M + 1);
    e(j) = 1.0;
    P.add_row(e, 1.0, RowTag::Init);
    P.add_row(-e, 0.0, RowTag::Init);
  }
  Vec s = Vec::Constant(M + 1, -1.0);
  s(M) = 0.0;
  P.add_row(s, -1.0, RowTag::Init);
  return P;
}

namespace detail {

struct LazySolve {
  LPStatus status = LPStatus::Infeasible;
  Vec z;
  double radius = 0.0;
  int lp_solves = 0;
};

// Solves over rows [0, limit) starting from the active ones; violated inactive
// rows are switched on (most violated first) until none remain.
inline LazySolve lazy_solve(const HalfspacePolytope& P, std::vector<char>& active, Eigen::Index limit,
                            bool chebyshev) {
  const int n = P.dim();
  const auto A = P.A().topRows(limit);
  const auto b = P.b().head(limit);
  const Vec norms = A.rowwise().norm();
  const Eigen::Index batch = std::max<Eigen::Index>(16, n);
  bool any = false;
  for (Eigen::Index k = 0; k < limit; ++k) any = any || active[static_cast<std::size_t>(k)];
  if (!any)
    for (Eigen::Index k = 0; k < limit; ++k) active[static_cast<std::size_t>(k)] = 1;
  LazySolve out;
  // A subset can be unbounded where the full set is not.
  auto activate_all = [](std::vector<char>& flags, Eigen::Index lim) {
    bool changed = false;
    for (Eigen::Index k = 0; k < lim; ++k) {
      changed = changed || !flags[static_cast<std::size_t>(k)];
      flags[static_cast<std::size_t>(k)] = 1;
    }
    return changed;
  };
  while (true) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index k = 0; k < limit; ++k)
      if (active[static_cast<std::size_t>(k)]) idx.push_back(k);
    Mat Aw(static_cast<Eigen::Index>(idx.size()), n);
    Vec bw(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Aw.row(static_cast<Eigen::Index>(i)) = A.row(idx[i]);
      bw(static_cast<Eigen::Index>(i)) = b(idx[i]);
    }
    ++out.lp_solves;
    double r = 0.0;
    if (chebyshev) {
      const auto c = chebyshev_lp(Aw, bw);
      out.status = c.status;
      if (c.status == LPStatus::Unbounded && activate_all(active, limit)) continue;
      if (c.status != LPStatus::Optimal) return out;
      out.z = c.center;
      r = c.radius;
    } else {
      const auto f = lp_feasible_point(Aw, bw);
      out.status = f.status;
      if (f.status != LPStatus::Optimal) return out;
      out.z = f.point;
    }
    out.radius = r;
    const Vec viol = A * out.z + r * norms - b;
    std::vector<std::pair<double, Eigen::Index>> bad;
    for (Eigen::Index k = 0; k < limit; ++k)
      if (!active[static_cast<std::size_t>(k)] && viol(k) > kReactivateTol) bad.emplace_back(-viol(k), k);
    if (bad.empty()) return out;
    const auto take = std::min<std::size_t>(bad.size(), static_cast<std::size_t>(batch));
    std::partial_sort(bad.begin(), bad.begin() + static_cast<std::ptrdiff_t>(take), bad.end());
    for (std::size_t i = 0; i < take; ++i) active[static_cast<std::size_t>(bad[i].second)] = 1;
  }
}

}  // namespace detail

/// Phase-1 verdict over all rows.
inline bool is_empty(const HalfspacePolytope& P) {
  auto flags = P.active_flags();
  return detail::lazy_solve(P, flags, P.rows(), false).status != LPStatus::Optimal;
}

struct CenterResult {
  Vec center;
  double radius = 0.0;
};

/// Largest inscribed ball over all rows. Throws EmptyPolytopeError when the
/// set is empty and InvalidArgument when the radius is unbounded.
inline CenterResult chebyshev_center(const HalfspacePolytope& P) {
  auto flags = P.active_flags();
  const auto s = detail::lazy_solve(P, flags, P.rows(), true);
  if (s.status == LPStatus::Unbounded) throw InvalidArgument("chebyshev_center: polytope is unbounded");
  if (s.status != LPStatus::Optimal || s.radius < -kFeasTol)
    throw EmptyPolytopeError("chebyshev_center: polytope is empty");
  return {s.z, s.radius};
}

/// Algorithm-1 rows for S samples: V, Vdot are S x M.
/// A1 rows [V(x_k), -1] Z <= 0 first, then decay rows [Vdot(x_k) + beta V(x_k), -beta] Z <= 0.
struct ConstraintRows {
  Mat A;
  Vec b;
  std::vector<RowTag> tags;
};

inline ConstraintRows lyapunov_constraints(const Mat& V, const Mat& Vdot, double beta) {
  if (!(beta >= 0.0)) throw InvalidArgument("lyapunov_constraints: beta must be non-negative");
  require_dim(Vdot.rows(), V.rows(), "lyapunov_constraints samples");
  require_dim(Vdot.cols(), V.cols(), "lyapunov_constraints basis size");
  if (!V.allFinite() || !Vdot.allFinite()) throw NumericalError("lyapunov_constraints: non-finite basis values");
  const Eigen::Index S = V.rows(), M = V.cols();
  ConstraintRows out;
  out.A.resize(2 * S, M + 1);
  out.b = Vec::Zero(2 * S);
  out.A.topLeftCorner(S, M) = V;
  out.A.topRightCorner(S, 1).setConstant(-1.0);
  out.A.bottomLeftCorner(S, M) = Vdot + beta * V;
  out.A.bottomRightCorner(S, 1).setConstant(-beta);
  out.tags.assign(static_cast<std::size_t>(S), RowTag::Lyap);
  out.tags.insert(out.tags.end(), static_cast<std::size_t>(S), RowTag::Decay);
  return out;
}

/// [V(x), -1] Z >= delta written as a <= row.
inline std::pair<Vec, double> strict_outside_row(const Vec& Vx, double delta) {
  Vec a(Vx.size() + 1);
  a.head(Vx.size()) = -Vx;
  a(Vx.size()) = 1.0;
  return {a, -delta};
}

// ---------------------------------------------------------------------------
// Algorithm 1

enum class DerivativeMode { Difference, Analytic };

using DataSource = std::variant<VectorField, SnapshotSet>;

/// Points where the current candidate breaks V_dot <= beta (gamma - V); empty when none is found.
using CounterexampleOracle = std::function<std::vector<Vec>(const Vec& alpha, double gamma)>;

struct Algorithm1Params {
  double beta = 1.0;
  int max_iter = 10;
  int num_traj = 10;  // N
  int horizon = 50;   // T
  double dt = 0.01;   // rollout step when sampling from a vector field
  std::uint64_t seed = 0;
  DerivativeMode derivative = DerivativeMode::Difference;
  int exclusion_count = 32;
  std::optional<Region> exclusion_region;  // default: bounding box of U scaled by 2
  std::optional<Region> keep_out;          // also excluded from the outside draws
  std::vector<Vec> separatrix;
  double delta_strict = kStrictDelta;
  bool prune = true;
  int refine_rounds = 0;
  CounterexampleOracle counterexamples;
};

enum class Algorithm1Status { Success, EmptyAtInit, EmptyAtFirstIteration, EmptyAfterExclusion };

inline const char* to_string(Algorithm1Status s) {
  switch (s) {
    case Algorithm1Status::Success: return "success";
    case Algorithm1Status::EmptyAtInit: return "empty_at_init";
    case Algorithm1Status::EmptyAtFirstIteration: return "empty_at_first_iteration";
    case Algorithm1Status::EmptyAfterExclusion: return "empty_after_exclusion";
  }
  return "?";
}

struct IterationRecord {
  int iteration = 0;
  std::string stage;  // init | sample | exclusion | refine
  Eigen::Index rows_added = 0;
  double chebyshev_radius = 0.0;
};

struct OffendingRow {
  Eigen::Index index = -1;
  Vec a;
  double b = 0.0;
  RowTag tag = RowTag::Init;
};

struct Algorithm1Result {
  Algorithm1Status status = Algorithm1Status::Success;
  HalfspacePolytope polytope;
  Vec Z;  // Chebyshev center; empty on failure
  double radius = 0.0;
  double beta = 0.0;
  int iterations = 0;     // sampling iterations kept
  bool stopped_empty = false;  // sampling loop ended on the empty-intersection branch
  int refine_rounds = 0;
  bool refine_converged = false;  // oracle returned no counterexample
  std::vector<IterationRecord> log;
  std::optional<OffendingRow> failure;

  bool ok() const { return status == Algorithm1Status::Success; }
  CandidateFunction candidate() const {
    if (!ok()) throw InvalidArgument("Algorithm1Result: no candidate on failure");
    const auto M = Z.size() - 1;
    return {Z.head(M), Z(M), beta};
  }
};

namespace detail {

struct PairBatch {
  Mat X;
  Mat Y;
  double dt = 0.0;
  int skipped = 0;  // rollouts that diverged
};

inline PairBatch sample_from_field(const VectorField& f, const Region& U, int N, int T, double dt,
                                   std::mt19937_64& rng) {
  std::vector<Vec> x0(static_cast<std::size_t>(N));
  for (auto& x : x0) x = U.sample(rng);
  std::vector<std::optional<Trajectory>> tr(x0.size());
  parallel_for(x0.size(), [&](std::size_t i) {
    try {
      tr[i] = integrate_rk4(f, x0[i], dt, T);
    } catch (const DivergenceError&) {
      tr[i].reset();
    }
  });
  PairBatch out;
  out.dt = dt;
  Eigen::Index cols = 0;
  for (const auto& t : tr) cols += t ? T : 0;
  out.X.resize(f.dim(), cols);
  out.Y.resize(f.dim(), cols);
  Eigen::Index c = 0;
  for (const auto& t : tr) {
    if (!t) {
      ++out.skipped;
      continue;
    }
    for (int k = 0; k < T; ++k, ++c) {
      out.X.col(c) = t->states[static_cast<std::size_t>(k)];
      out.Y.col(c) = t->states[static_cast<std::size_t>(k) + 1];
    }
  }
  return out;
}

// Stored data: trajectories starting in U, N per iteration in order (wrapping),
// each truncated to T pairs. Ungrouped sets use pairs with x in U, N*T per iteration.
inline PairBatch sample_from_snapshots(const SnapshotSet& s, const Region& U, int N, int T, int iteration) {
  PairBatch out;
  out.dt = s.dt;
  std::vector<std::vector<Vec>> pool;
  if (!s.traj_id.empty()) {
    for (auto& tr : s.trajectories())
      if (U.contains(tr.front())) pool.push_back(std::move(tr));
  } else {
    for (Eigen::Index k = 0; k < s.size(); ++k)
      if (U.contains(s.X.col(k))) pool.push_back({s.X.col(k), s.Y.col(k)});
    N *= T;
    T = 1;
  }
  if (pool.empty()) throw InvalidArgument("run_algorithm1: no stored data starts inside U");
  std::vector<Vec> xs, ys;
  for (int i = 0; i < N; ++i) {
    const auto& tr = pool[(static_cast<std::size_t>(iteration) * static_cast<std::size_t>(N) + static_cast<std::size_t>(i)) % pool.size()];
    for (std::size_t k = 0; k + 1 < tr.size() && k < static_cast<std::size_t>(T); ++k) {
      xs.push_back(tr[k]);
      ys.push_back(tr[k + 1]);
    }
  }
  out.X.resize(s.dim(), static_cast<Eigen::Index>(xs.size()));
  out.Y.resize(s.dim(), out.X.cols());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    out.X.col(static_cast<Eigen::Index>(k)) = xs[k];
    out.Y.col(static_cast<Eigen::Index>(k)) = ys[k];
  }
  return out;
}

// Smallest j >= from such that rows [0, j] are infeasible; assumes [0, from) is feasible.
inline Eigen::Index first_emptying_row(const HalfspacePolytope& P, Eigen::Index from) {
  auto empty_prefix = [&](Eigen::Index j) {
    std::vector<char> flags(static_cast<std::size_t>(P.rows()), 0);
    for (Eigen::Index k = 0; k <= j; ++k) flags[static_cast<std::size_t>(k)] = P.active(k) || P.tag(k) == RowTag::Init;
    const auto s = lazy_solve(P, flags, j + 1, true);
    return s.status != LPStatus::Optimal || s.radius < -kFeasTol;
  };
  Eigen::Index lo = from, hi = P.rows() - 1;
  while (lo < hi) {
    const Eigen::Index mid = lo + (hi - lo) / 2;
    if (empty_prefix(mid)) hi = mid;
    else lo = mid + 1;
  }
  return lo;
}

inline OffendingRow offending(const HalfspacePolytope& P, Eigen::Index k) {
  return {k, P.row(k), P.rhs(k), P.tag(k)};
}

// Clears flags of rows that do not touch the ball, then caps each provenance
// class at `cap` active rows (tightest kept). Init rows stay active.
inline void prune_rows(HalfspacePolytope& P, const Vec& z, double r, Eigen::Index cap) {
  const Vec slack = P.slack(z) - r * P.A().rowwise().norm();
  std::vector<std::vector<std::pair<double, Eigen::Index>>> by_tag(6);
  for (Eigen::Index k = 0; k < P.rows(); ++k) {
    if (!P.active(k) || P.tag(k) == RowTag::Init) continue;
    if (slack(k) > kFeasTol) {
      P.set_active(k, false);
      continue;
    }
    by_tag[static_cast<std::size_t>(P.tag(k))].emplace_back(slack(k), k);
  }
  for (auto& rows : by_tag) {
    if (static_cast<Eigen::Index>(rows.size()) <= cap) continue;
    std::sort(rows.begin(), rows.end());
    for (std::size_t i = static_cast<std::size_t>(cap); i < rows.size(); ++i) P.set_active(rows[i].second, false);
  }
}

}  // namespace detail

/// Sampling-based refinement of the candidate polytope: N rollouts of T steps
/// from U per iteration add A1 and decay rows; then points outside U (and the
/// optional separatrix points, added at initialization) get strict rows
/// V(x) alpha >= gamma + delta. Optional counterexample rounds add decay rows at
/// points returned by `counterexamples`. Z is the Chebyshev center at the end.
inline Algorithm1Result run_algorithm1(const LyapunovBasis& basis, const DataSource& source, const Region& U,
                                       const Algorithm1Params& prm) {
  const int M = basis.size();
  if (M < 1) throw InvalidArgument("run_algorithm1: empty basis");
  require_dim(U.dim(), basis.dim(), "run_algorithm1 region");
  if (!(prm.beta >= 0.0)) throw InvalidArgument("run_algorithm1: beta must be non-negative");
  if (prm.max_iter < 0 || prm.num_traj < 1 || prm.horizon < 1 || prm.exclusion_count < 0 || prm.refine_rounds < 0)
    throw InvalidArgument("run_algorithm1: counts out of range");
  if (!(prm.delta_strict > 0.0)) throw InvalidArgument("run_algorithm1: delta_strict must be positive");
  const VectorField* field = std::get_if<VectorField>(&source);
  if (field) {
    require_dim(field->dim(), basis.dim(), "run_algorithm1 field");
    if (!(prm.dt > 0.0)) throw InvalidArgument("run_algorithm1: dt must be positive");
  } else {
    require_dim(std::get<SnapshotSet>(source).dim(), basis.dim(), "run_algorithm1 snapshots");
  }
  if (prm.derivative == DerivativeMode::Analytic && !field)
    throw UnsupportedError("run_algorithm1: analytic derivatives need a vector field");
  if (prm.refine_rounds > 0 && (!field || !prm.counterexamples))
    throw InvalidArgument("run_algorithm1: refinement needs a vector field and a counterexample oracle");

  const Eigen::Index cap = 5 * static_cast<Eigen::Index>(M + 1);
  Algorithm1Result res;
  res.beta = prm.beta;
  HalfspacePolytope P = init_polytope(M);
  auto flags = P.active_flags();

  auto solve = [&](HalfspacePolytope& Q) {
    auto f = Q.active_flags();
    auto s = detail::lazy_solve(Q, f, Q.rows(), true);
    Q.set_active_flags(f);
    const bool empty = s.status != LPStatus::Optimal || s.radius < -kFeasTol;
    return std::make_pair(empty, s);
  };
  auto fail = [&](Algorithm1Status st, Eigen::Index from) {
    res.status = st;
    const auto k = detail::first_emptying_row(P, from);
    res.failure = detail::offending(P, k);
    P.truncate(k + 1);
    res.polytope = P;
    return res;
  };

  auto cur = solve(P).second;
  res.log.push_back({0, "init", P.rows(), cur.radius});

  if (!prm.separatrix.empty()) {
    const Eigen::Index from = P.rows();
    for (const auto& s : prm.separatrix) {
      const auto [a, b] = strict_outside_row(eval_basis(basis, s), prm.delta_strict);
      P.add_row(a, b, RowTag::Separatrix);
    }
    const auto [empty, s] = solve(P);
    if (empty) return fail(Algorithm1Status::EmptyAtInit, from);
    cur = s;
    res.log.back().rows_added = P.rows();
    res.log.back().chebyshev_radius = cur.radius;
  }

  auto derivative_rows = [&](const Mat& X, const Mat& Y, double dt) {
    const Mat V = eval_basis_batch(basis, X);
    Mat Vdot;
    if (prm.derivative == DerivativeMode::Analytic) Vdot = eval_basis_dot_analytic_batch(basis, *field, X);
    else Vdot = (eval_basis_batch(basis, Y) - V) / dt;
    return std::make_pair(Mat(V.transpose()), Mat(Vdot.transpose()));
  };

  std::mt19937_64 rng(prm.seed);
  int k = 0;
  while (k < prm.max_iter) {
    const auto batch = field ? detail::sample_from_field(*field, U, prm.num_traj, prm.horizon, prm.dt, rng)
                             : detail::sample_from_snapshots(std::get<SnapshotSet>(source), U, prm.num_traj,
                                                             prm.horizon, k);
    const auto [V, Vdot] = derivative_rows(batch.X, batch.Y, batch.dt);
    const auto rows = lyapunov_constraints(V, Vdot, prm.beta);
    const Eigen::Index before = P.rows();
    flags = P.active_flags();
    for (Eigen::Index r = 0; r < rows.A.rows(); ++r)
      P.add_row(rows.A.row(r).transpose(), rows.b(r), rows.tags[static_cast<std::size_t>(r)], false);
    const auto [empty, s] = solve(P);
    if (empty) {
      if (k == 0) return fail(Algorithm1Status::EmptyAtFirstIteration, before);
      P.truncate(before);
      P.set_active_flags(flags);
      res.stopped_empty = true;
      break;
    }
    cur = s;
    if (prm.prune) detail::prune_rows(P, cur.z, cur.radius, cap);
    ++k;
    res.log.push_back({k, "sample", P.rows() - before, cur.radius});
  }
  res.iterations = k;

  // Points outside U.
  if (prm.exclusion_count > 0) {
    Region outer = prm.exclusion_region ? *prm.exclusion_region : [&] {
      const Box bb = U.bounding_box();
      const Vec c = 0.5 * (bb.lo + bb.hi);
      return Region::box(c + 2.0 * (bb.lo - c), c + 2.0 * (bb.hi - c));
    }();
    require_dim(outer.dim(), basis.dim(), "run_algorithm1 exclusion region");
    std::mt19937_64 xrng(prm.seed ^ 0x9e3779b97f4a7c15ULL);
    const Eigen::Index before = P.rows();
    long draws = 0;
    int added = 0;
    while (added < prm.exclusion_count) {
      if (++draws > 1000L * prm.exclusion_count)
        throw InvalidArgument("run_algorithm1: could not sample points outside U");
      const Vec x = outer.sample(xrng);
      if (U.contains(x) || (prm.keep_out && prm.keep_out->contains(x))) continue;
      const auto [a, b] = strict_outside_row(eval_basis(basis, x), prm.delta_strict);
      P.add_row(a, b, RowTag::Exclusion);
      ++added;
    }
    const auto [empty, s] = solve(P);
    if (empty) return fail(Algorithm1Status::EmptyAfterExclusion, before);
    cur = s;
    res.log.push_back({k + 1, "exclusion", P.rows() - before, cur.radius});
  }

  // Counterexample rounds: decay rows at reported points. When those cannot all
  // hold, points outside U may instead be moved out of the sublevel set.
  for (int r = 0; r < prm.refine_rounds; ++r) {
    const auto pts = prm.counterexamples(cur.z.head(M), cur.z(M));
    if (pts.empty()) {
      res.refine_converged = true;
      break;
    }
    Mat X(basis.dim(), static_cast<Eigen::Index>(pts.size())), Y(X.rows(), X.cols());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      X.col(static_cast<Eigen::Index>(i)) = pts[i];
      Y.col(static_cast<Eigen::Index>(i)) = rk4_step(*field, pts[i], prm.dt);
    }
    const auto [V, Vdot] = derivative_rows(X, Y, prm.dt);
    const auto rows = lyapunov_constraints(V, Vdot, prm.beta);
    const Eigen::Index before = P.rows();
    flags = P.active_flags();
    for (Eigen::Index i = V.rows(); i < rows.A.rows(); ++i) P.add_row(rows.A.row(i).transpose(), rows.b(i), RowTag::Refine);
    auto [empty, s] = solve(P);
    if (empty) {
      // Point by point: the decay row, else (outside U only) push the point out of the sublevel set.
      P.truncate(before);
      P.set_active_flags(flags);
      for (Eigen::Index i = 0; i < V.rows(); ++i) {
        const Eigen::Index mark = P.rows();
        auto keep = P.active_flags();
        auto attempt = [&](const Vec& a, double rhs) {
          if (!P.add_row(a, rhs, RowTag::Refine)) return true;
          auto t = solve(P);
          if (!t.first) {
            s = t.second;
            return true;
          }
          P.truncate(mark);
          P.set_active_flags(keep);
          return false;
        };
        if (attempt(rows.A.row(V.rows() + i).transpose(), rows.b(V.rows() + i))) continue;
        if (U.contains(X.col(i))) continue;
        const auto [a, rhs] = strict_outside_row(V.row(i).transpose(), prm.delta_strict);
        attempt(a, rhs);
      }
      if (P.rows() == before) break;  // no counterexample could be cut off
    }
    cur = s;
    if (prm.prune) detail::prune_rows(P, cur.z, cur.radius, cap);
    ++res.refine_rounds;
    res.log.push_back({static_cast<int>(res.log.back().iteration) + 1, "refine", P.rows() - before, cur.radius});
  }

  res.Z = cur.z;
  res.radius = cur.radius;
  res.polytope = std::move(P);
  return res;
}

}  // namespace kl
