#pragma once

// Certificate checks for V = sum alpha_i V_i with level gamma and rate beta:
// the residual L_f V - beta (gamma - V) over {V <= gamma}, maximised by
// multi-start projected gradient ascent or on a dense grid, plus forward
// simulation of trajectories started inside the sublevel set.

#include "kl/core.hpp"
#include "kl/lyapunov.hpp"
#include "kl/parallel.hpp"
#include "kl/systems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace kl {

struct ResidualValue {
  double value = 0.0;  // L_f V - beta (gamma - V)
  double V = 0.0;
  Vec grad;     // of the residual
  Vec grad_V;
};

inline void require_candidate(const LyapunovBasis& b, const CandidateFunction& c) {
  require_dim(c.alpha.size(), b.size(), "candidate alpha");
  if (!c.alpha.allFinite() || !std::isfinite(c.gamma) || !std::isfinite(c.beta))
    throw InvalidArgument("candidate: non-finite coefficients");
}

/// L_f V(x) - beta (gamma - V(x)) with L_f V = sum alpha_i dV_i/dt (analytic).
inline double residual(const LyapunovBasis& b, const CandidateFunction& c, const VectorField& f, const Vec& x) {
  require_candidate(b, c);
  const double V = c.alpha.dot(eval_basis(b, x));
  const double LfV = c.alpha.dot(eval_basis_dot_analytic(b, f, x));
  return LfV - c.beta * (c.gamma - V);
}

/// Residual, V and both gradients. Needs a monomial dictionary.
inline ResidualValue residual_with_gradient(const LyapunovBasis& b, const CandidateFunction& c,
                                            const VectorField& f, const Vec& x) {
  require_candidate(b, c);
  require_dim(x.size(), b.dim(), "residual_with_gradient");
  const auto& dict = b.dict.monomial();
  const int n = b.dim();
  const Vec fx = f(x);
  const Vec phi = dict.eval(x);
  const Mat J = dict.jacobian(x);
  const Mat Hf = dict.hessian_contract(x, fx);
  const Mat Df = f.jacobian(x);
  const CMat Vt = b.vectors.transpose();
  const CVec psi = Vt * phi.cast<Complex>();
  const CMat G = Vt * J.cast<Complex>();                              // grad psi (m x n)
  const CVec dpsi = G * fx.cast<Complex>();                           // d psi / dt
  const CMat Gd = Vt * (Hf + J * Df).cast<Complex>();                 // grad of d psi / dt
  ResidualValue out;
  out.grad = Vec::Zero(n);
  out.grad_V = Vec::Zero(n);
  double LfV = 0.0;
  for (int e = 0; e < b.size(); ++e) {
    const double a = c.alpha(e);
    if (a == 0.0) continue;
    const auto& F = b.entries[static_cast<std::size_t>(e)].factors;
    const std::size_t k = F.size();
    // prod of psi over factors except the listed positions
    auto prod_except = [&](std::size_t i, std::size_t j) {
      Complex p(1.0, 0.0);
      for (std::size_t r = 0; r < k; ++r)
        if (r != i && r != j) p *= psi(F[r]);
      return p;
    };
    const std::size_t none = k;
    const Complex P = prod_except(none, none);
    CVec dP = CVec::Zero(n), dPdot = CVec::Zero(n);
    Complex Pdot(0.0, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      const Complex rest = prod_except(i, none);
      dP += G.row(F[i]).transpose() * rest;
      Pdot += dpsi(F[i]) * rest;
      dPdot += Gd.row(F[i]).transpose() * rest;
      for (std::size_t j = 0; j < k; ++j)
        if (j != i) dPdot += dpsi(F[i]) * prod_except(i, j) * G.row(F[j]).transpose();
    }
    out.V += a * 0.5 * std::norm(P);
    LfV += a * (std::conj(P) * Pdot).real();
    out.grad_V += a * (std::conj(P) * dP).real();
    out.grad += a * (dP.conjugate() * Pdot + std::conj(P) * dPdot).real();
  }
  out.value = LfV - c.beta * (c.gamma - out.V);
  out.grad += c.beta * out.grad_V;
  return out;
}

// ---------------------------------------------------------------------------
// NLP (multi-start projected gradient ascent)

enum class Verdict { Verified, Falsified, Inconclusive };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Verified: return "verified";
    case Verdict::Falsified: return "falsified";
    case Verdict::Inconclusive: return "inconclusive";
  }
  return "?";
}

struct NlpConfig {
  int starts = 64;
  int max_iters = 2000;
  double tol_margin = 1e-6;
  double initial_step = 0.05;  // fraction of the box diagonal
  std::uint64_t seed = 0;
  std::optional<Region> start_region;  // draw starts here (clamped to the box) instead of the whole box
  int screen = 32;  // pool of screen * starts samples; half the starts are the pool's highest residuals
  // Also converged when the value gains less than ftol * (1 + |value|) over stall_window iterations.
  double ftol = 1e-10;
  int stall_window = 100;
};

struct StartTrace {
  Vec x0;
  Vec x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct VerificationReport {
  double max_value = -std::numeric_limits<double>::infinity();
  Vec argmax;
  Verdict verdict = Verdict::Inconclusive;
  int starts = 0;
  int iterations = 0;  // summed over starts
  int converged_starts = 0;
  std::string domain;
  std::vector<StartTrace> traces;
};

inline std::string describe_box(const Box& box) {
  std::string s = "box [";
  for (Eigen::Index j = 0; j < box.lo.size(); ++j) {
    if (j) s += ", ";
    s += "[" + std::to_string(box.lo(j)) + ", " + std::to_string(box.hi(j)) + "]";
  }
  return s + "] intersected with {V <= gamma}";
}

namespace detail {

inline Vec clamp_to(const Box& box, const Vec& x) { return x.cwiseMax(box.lo).cwiseMin(box.hi); }

inline double candidate_value(const LyapunovBasis& b, const CandidateFunction& c, const Vec& x) {
  return c.alpha.dot(eval_basis(b, x));
}

// Largest t in [0, 1] (by bisection) with V(x + t d) <= gamma; V(x) <= gamma assumed.
inline Vec pull_back(const LyapunovBasis& b, const CandidateFunction& c, const Vec& x, const Vec& y) {
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (candidate_value(b, c, x + mid * (y - x)) <= c.gamma) lo = mid;
    else hi = mid;
  }
  return x + lo * (y - x);
}

inline StartTrace ascend(const LyapunovBasis& b, const CandidateFunction& c, const VectorField& f, const Box& box,
                         const Vec& x0, const NlpConfig& cfg) {
  const double diag = (box.hi - box.lo).norm();
  const double s_min = 1e-12 * std::max(diag, 1.0);
  StartTrace tr;
  tr.x0 = x0;
  Vec x = x0;
  auto cur = residual_with_gradient(b, c, f, x);
  double s = cfg.initial_step * diag;
  double mark = cur.value;
  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    if (it > 0 && it % cfg.stall_window == 0) {
      if (cur.value - mark <= cfg.ftol * (1.0 + std::abs(cur.value))) {
        tr.converged = true;
        break;
      }
      mark = cur.value;
    }
    Vec g = cur.grad;
    // Box faces: drop components that push outward.
    for (Eigen::Index j = 0; j < g.size(); ++j)
      if ((x(j) <= box.lo(j) && g(j) < 0.0) || (x(j) >= box.hi(j) && g(j) > 0.0)) g(j) = 0.0;
    // Level-set boundary: move along the tangent plane when the gradient points outward.
    const double slack = c.gamma - cur.V;
    const double gv2 = cur.grad_V.squaredNorm();
    if (slack <= 1e-9 * std::max(1.0, std::abs(c.gamma)) && gv2 > 0.0) {
      const double out = g.dot(cur.grad_V);
      if (out > 0.0) g -= (out / gv2) * cur.grad_V;
    }
    const double gn = g.norm();
    if (!(gn > 1e-14) || s < s_min) {
      tr.converged = true;
      break;
    }
    Vec y = clamp_to(box, x + (s / gn) * g);
    if (candidate_value(b, c, y) > c.gamma) y = pull_back(b, c, x, y);
    const auto next = residual_with_gradient(b, c, f, y);
    if (next.value > cur.value && next.V <= c.gamma) {
      x = y;
      cur = next;
      s *= 1.5;
    } else {
      s *= 0.5;
    }
  }
  tr.x = x;
  tr.value = cur.value;
  tr.iterations = it;
  return tr;
}

}  // namespace detail

/// Uniform draws from `R` (and inside `within` when given) restricted to
/// {V <= gamma}; throws InvalidArgument after `max_draws` draws.
template <class Rng>
std::vector<Vec> sample_sublevel(const LyapunovBasis& b, const CandidateFunction& c, const Region& R, int count,
                                 long max_draws, Rng& rng, const Box* within = nullptr) {
  const std::optional<Region> clip = within ? std::optional<Region>(Region(*within)) : std::nullopt;
  std::vector<Vec> out;
  long draws = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++draws > max_draws) throw InvalidArgument("sample_sublevel: too few points of the region satisfy V <= gamma");
    Vec x = R.sample(rng);
    if (clip && !clip->contains(x)) continue;
    if (detail::candidate_value(b, c, x) <= c.gamma) out.push_back(std::move(x));
  }
  return out;
}

/// Maximises the residual over box and {V <= gamma}. verified needs every start
/// to converge and the best value below -tol_margin; falsified means a feasible
/// point with positive residual was found.
inline VerificationReport nlp_verify(const LyapunovBasis& b, const CandidateFunction& c, const VectorField& f,
                                     const Box& box, const NlpConfig& cfg = {}) {
  require_candidate(b, c);
  require_dim(box.lo.size(), b.dim(), "nlp_verify box");
  require_dim(f.dim(), b.dim(), "nlp_verify field");
  if (cfg.starts < 1 || cfg.max_iters < 0) throw InvalidArgument("nlp_verify: bad configuration");
  if (!box.lo.allFinite() || !box.hi.allFinite() || (box.lo.array() > box.hi.array()).any())
    throw InvalidArgument("nlp_verify: domain box must be bounded and nonempty");
  if (cfg.screen < 1) throw InvalidArgument("nlp_verify: screen must be >= 1");
  if (cfg.stall_window < 1 || !(cfg.ftol >= 0.0)) throw InvalidArgument("nlp_verify: bad stall test");
  std::mt19937_64 rng(cfg.seed);
  const int pool_size = cfg.starts * cfg.screen;
  const auto pool = sample_sublevel(b, c, cfg.start_region ? *cfg.start_region : Region(box), pool_size,
                                    10L * pool_size, rng, &box);
  // Half the starts are the pool's highest residuals, the rest follow sampling order.
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> score(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) score[i] = residual(b, c, f, pool[i]);
  const std::size_t top = static_cast<std::size_t>(cfg.starts - cfg.starts / 2);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return score[i] > score[j]; });
  std::vector<char> taken(pool.size(), 0);
  std::vector<Vec> starts;
  for (std::size_t k = 0; k < top; ++k) {
    taken[order[k]] = 1;
    starts.push_back(pool[order[k]]);
  }
  for (std::size_t i = 0; i < pool.size() && static_cast<int>(starts.size()) < cfg.starts; ++i)
    if (!taken[i]) starts.push_back(pool[i]);
  VerificationReport rep;
  rep.domain = describe_box(box);
  rep.starts = cfg.starts;
  rep.traces.resize(starts.size());
  parallel_for(starts.size(), [&](std::size_t i) { rep.traces[i] = detail::ascend(b, c, f, box, starts[i], cfg); });
  for (const auto& t : rep.traces) {
    rep.iterations += t.iterations;
    rep.converged_starts += t.converged ? 1 : 0;
    const bool better = t.value > rep.max_value ||
                        (t.value == rep.max_value &&
                         std::lexicographical_compare(t.x.data(), t.x.data() + t.x.size(), rep.argmax.data(),
                                                      rep.argmax.data() + rep.argmax.size()));
    if (better) {
      rep.max_value = t.value;
      rep.argmax = t.x;
    }
  }
  // Verdicts rest on the plain residual evaluation, not the gradient path.
  const double check = residual(b, c, f, rep.argmax);
  const double Vmax = detail::candidate_value(b, c, rep.argmax);
  if (check > 0.0 && Vmax <= c.gamma + 1e-9) rep.verdict = Verdict::Falsified;
  else if (rep.max_value < -cfg.tol_margin && rep.converged_starts == rep.starts) rep.verdict = Verdict::Verified;
  else rep.verdict = Verdict::Inconclusive;
  return rep;
}

// ---------------------------------------------------------------------------
// Grid oracle

struct GridReport {
  bool empty = true;  // no grid point satisfies V <= gamma
  double max_value = -std::numeric_limits<double>::infinity();
  Vec argmax;
  long feasible_points = 0;
  double cell_bound = 0.0;  // max |grad residual| over feasible points times half the cell diagonal
};

/// Residual maximum over a regular grid (resolution points per axis) intersected with {V <= gamma}.
inline GridReport grid_falsify(const LyapunovBasis& b, const CandidateFunction& c, const VectorField& f,
                               const Box& box, int resolution) {
  require_candidate(b, c);
  const int n = b.dim();
  if (n > 3) throw InvalidArgument("grid_falsify: only available for n <= 3");
  require_dim(box.lo.size(), n, "grid_falsify box");
  if (resolution < 1) throw InvalidArgument("grid_falsify: resolution must be positive");
  long total = 1;
  for (int j = 0; j < n; ++j) total *= resolution;
  auto point = [&](long idx) {
    Vec x(n);
    for (int j = 0; j < n; ++j) {
      const long i = idx % resolution;
      idx /= resolution;
      x(j) = resolution == 1 ? 0.5 * (box.lo(j) + box.hi(j))
                             : box.lo(j) + (box.hi(j) - box.lo(j)) * static_cast<double>(i) / (resolution - 1);
    }
    return x;
  };
  struct Cell {
    bool feasible = false;
    double value = 0.0;
    double grad = 0.0;
  };
  std::vector<Cell> cells(static_cast<std::size_t>(total));
  parallel_for(cells.size(), [&](std::size_t i) {
    const Vec x = point(static_cast<long>(i));
    const auto r = residual_with_gradient(b, c, f, x);
    if (r.V <= c.gamma) cells[i] = {true, r.value, r.grad.norm()};
  });
  GridReport rep;
  double gmax = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!cells[i].feasible) continue;
    ++rep.feasible_points;
    gmax = std::max(gmax, cells[i].grad);
    if (cells[i].value > rep.max_value) {
      rep.max_value = cells[i].value;
      rep.argmax = point(static_cast<long>(i));
    }
  }
  rep.empty = rep.feasible_points == 0;
  if (resolution > 1) rep.cell_bound = gmax * 0.5 * ((box.hi - box.lo) / (resolution - 1)).norm();
  return rep;
}

// ---------------------------------------------------------------------------
// Simulation

struct SimulationConfig {
  int trajectories = 1000;
  double horizon = 20.0;
  double dt = 0.01;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

struct SimulationReport {
  int trajectories = 0;
  int violations = 0;
  double worst_overshoot = 0.0;  // max over trajectories of max_t V / gamma - 1
  Vec worst_start;
};

/// Starts drawn uniformly from `region` with V(x0) <= gamma; a trajectory violates
/// when max_t V(x(t)) > gamma (1 + tol) or it diverges.
inline SimulationReport simulate_invariance(const LyapunovBasis& b, const CandidateFunction& c,
                                            const VectorField& f, const Region& region, const SimulationConfig& cfg) {
  require_candidate(b, c);
  require_dim(region.dim(), b.dim(), "simulate_invariance region");
  if (cfg.trajectories < 1 || !(cfg.horizon > 0.0) || !(cfg.dt > 0.0) || !(cfg.tol >= 0.0))
    throw InvalidArgument("simulate_invariance: bad configuration");
  if (!(c.gamma > 0.0)) throw InvalidArgument("simulate_invariance: gamma must be positive");
  std::mt19937_64 rng(cfg.seed);
  const auto starts = sample_sublevel(b, c, region, cfg.trajectories, 100L * cfg.trajectories, rng);
  const auto steps = static_cast<std::int64_t>(std::llround(cfg.horizon / cfg.dt));
  std::vector<double> worst(starts.size(), 0.0);
  parallel_for(starts.size(), [&](std::size_t i) {
    Vec x = starts[i];
    double peak = detail::candidate_value(b, c, x);
    for (std::int64_t s = 0; s < steps; ++s) {
      x = rk4_step(f, x, cfg.dt);
      if (diverged(x)) {
        peak = std::numeric_limits<double>::infinity();
        break;
      }
      peak = std::max(peak, detail::candidate_value(b, c, x));
    }
    worst[i] = peak / c.gamma - 1.0;
  });
  SimulationReport rep;
  rep.trajectories = static_cast<int>(starts.size());
  rep.worst_overshoot = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < worst.size(); ++i) {
    if (worst[i] > cfg.tol) ++rep.violations;
    if (worst[i] > rep.worst_overshoot) {
      rep.worst_overshoot = worst[i];
      rep.worst_start = starts[i];
    }
  }
  return rep;
}

}  // namespace kl
