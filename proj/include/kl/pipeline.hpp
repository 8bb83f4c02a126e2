#pragma once

// Declarative experiment configuration and the stages the command-line tool
// chains together: simulate -> fit -> spectrum -> basis -> refine (Algorithm 1)
// -> verify -> falsify-sim, plus contour and plane-projection exports.

#include "kl/io.hpp"
#include "kl/koopman.hpp"
#include "kl/lyapunov.hpp"
#include "kl/neural.hpp"
#include "kl/polytope.hpp"
#include "kl/systems.hpp"
#include "kl/verify.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace kl {

// Every randomness consumer uses config seed + a fixed stage offset.
inline constexpr std::uint64_t kSeedSimulate = 1;
inline constexpr std::uint64_t kSeedFit = 2;
inline constexpr std::uint64_t kSeedAlgorithm1 = 3;
inline constexpr std::uint64_t kSeedOracle = 4;
inline constexpr std::uint64_t kSeedVerify = 5;
inline constexpr std::uint64_t kSeedSimulateInvariance = 6;
inline constexpr std::uint64_t kSeedSystem = 7;

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  // system
  std::string system = "van_der_pol";  // van_der_pol | linear | glv
  Mat linear_A;
  std::string glv_file;     // empty: seeded random stable gLV of size glv_dim
  int glv_dim = 11;
  bool center_on_equilibrium = false;  // work in z = x - x*
  Vec equilibrium;                     // explicit x*; computed for gLV when empty

  // dictionary
  int degree = 6;
  int min_degree = 0;

  // fit
  std::string fit_method = "edmd";  // edmd | multistep | neural
  int multistep_horizon = 10;
  MultistepConfig multistep;
  std::vector<int> encoder_widths;
  std::vector<int> decoder_widths;
  TrainConfig train;

  // sampling
  Region sample_region = Region::cube(2, 3.0);
  int trajectories = 100;
  int steps = 100;
  double dt = 0.01;
  std::string snapshots_file;  // use stored snapshots instead of simulating

  // basis
  int stable_m = 4;
  double margin = 1e-6;
  bool products = false;
  bool normalize = true;  // scale eigenfunctions to max |psi| = 1 on the data
  std::size_t gram_limit = 2000;  // skip the Gram export above this many monomials

  // Algorithm 1
  Algorithm1Params alg;
  Region U = Region::cube(2, 1.0);
  bool use_oracle = true;  // counterexample oracle for refinement rounds

  // verification
  std::optional<Box> domain;  // default: training data bounding box scaled by 1.5
  NlpConfig nlp;
  int grid_resolution = 201;
  int oracle_starts = 64;
  int oracle_grid = 201;

  // simulation check
  SimulationConfig sim;
  std::optional<Region> sim_region;  // default: the verification domain

  // exports
  int contour_resolution = 101;
  std::optional<Box> contour_box;
  std::vector<Vec> anchors;  // P0, P1, P2 for the plane projection
  int projection_resolution = 81;
  double projection_lo = -0.5;
  double projection_hi = 1.5;
};

// ---------------------------------------------------------------------------
// Config parsing

namespace detail {

inline Vec parse_vec(const Json& j, const char* what) { return vec_from(j, what); }

inline Region parse_region(const Json& j, int n, const char* what) {
  if (!j.is_object()) throw ParseError(std::string(what) + ": region must be an object");
  if (j.contains("cube")) {
    const double h = num(j.at("cube"), what);
    if (!(h >= 0.0)) throw ParseError(std::string(what) + ": cube half-width must be >= 0");
    const Vec c = j.contains("center") ? parse_vec(j.at("center"), what) : Vec::Zero(n);
    if (c.size() != n) throw DimensionError(std::string(what) + ": center has the wrong dimension");
    return Region::box(c.array() - h, c.array() + h);
  }
  if (j.contains("box")) {
    const auto& b = j.at("box");
    const Vec lo = parse_vec(field(b, "lo", what), what);
    const Vec hi = parse_vec(field(b, "hi", what), what);
    if (lo.size() != n || hi.size() != n) throw DimensionError(std::string(what) + ": box has the wrong dimension");
    try {
      return Region::box(lo, hi);
    } catch (const InvalidArgument& e) {
      throw ParseError(std::string(what) + ": " + e.what());
    }
  }
  if (j.contains("ball")) {
    const auto& b = j.at("ball");
    const Vec c = b.contains("center") ? parse_vec(b.at("center"), what) : Vec::Zero(n);
    if (c.size() != n) throw DimensionError(std::string(what) + ": ball center has the wrong dimension");
    const double r = num(field(b, "radius", what), what);
    if (!(r >= 0.0)) throw ParseError(std::string(what) + ": radius must be >= 0");
    return Region::ball(c, r);
  }
  throw ParseError(std::string(what) + ": expected one of cube, box, ball");
}

inline Box parse_box(const Json& j, int n, const char* what) {
  const Region r = parse_region(j, n, what);
  return r.bounding_box();
}

template <class T>
void get_to(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ParseError(std::string("config: bad value for '") + key + "'");
  }
}

inline const Json& section(const Json& j, const char* key) {
  static const Json empty = Json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ParseError(std::string("config: section '") + key + "' must be an object");
  return j.at(key);
}

inline std::string resolve(const std::string& path, const std::filesystem::path& base) {
  if (path.empty()) return path;
  const std::filesystem::path p(path);
  return p.is_absolute() ? path : (base / p).lexically_normal().string();
}

}  // namespace detail

inline int system_dim(const PipelineConfig& c);

/// Parses a config document. Relative file paths are resolved against `base_dir`
/// and must exist.
inline PipelineConfig parse_config(const Json& j, const std::filesystem::path& base_dir = {}) {
  using detail::get_to;
  using detail::section;
  if (!j.is_object()) throw ParseError("config: expected a JSON object");
  PipelineConfig c;
  if (!j.contains("seed") || !j.at("seed").is_number_unsigned()) throw ParseError("config: 'seed' (unsigned integer) is required");
  c.seed = j.at("seed").get<std::uint64_t>();
  get_to(j, "output_dir", c.output_dir);

  const auto& sys = section(j, "system");
  get_to(sys, "name", c.system);
  if (c.system == "linear") {
    if (!sys.contains("A")) throw ParseError("config: linear system needs 'A'");
    const auto& A = sys.at("A");
    if (!A.is_array() || A.empty()) throw ParseError("config: 'A' must be a nonempty array of rows");
    c.linear_A.resize(static_cast<Eigen::Index>(A.size()), static_cast<Eigen::Index>(A.size()));
    for (std::size_t i = 0; i < A.size(); ++i) {
      const Vec r = detail::parse_vec(A[i], "A row");
      if (r.size() != c.linear_A.cols()) throw DimensionError("config: 'A' must be square");
      c.linear_A.row(static_cast<Eigen::Index>(i)) = r.transpose();
    }
  } else if (c.system == "glv") {
    get_to(sys, "file", c.glv_file);
    get_to(sys, "dim", c.glv_dim);
    c.glv_file = detail::resolve(c.glv_file, base_dir);
    if (!c.glv_file.empty() && !std::filesystem::exists(c.glv_file))
      throw ParseError("config: gLV parameter file not found: " + c.glv_file);
  } else if (c.system != "van_der_pol") {
    throw ParseError("config: unknown system '" + c.system + "'");
  }
  get_to(sys, "center_on_equilibrium", c.center_on_equilibrium);
  if (sys.contains("equilibrium")) c.equilibrium = detail::parse_vec(sys.at("equilibrium"), "equilibrium");
  const int n = system_dim(c);
  if (c.equilibrium.size() && c.equilibrium.size() != n) throw DimensionError("config: equilibrium has the wrong dimension");

  const auto& dict = section(j, "dictionary");
  get_to(dict, "degree", c.degree);
  get_to(dict, "min_degree", c.min_degree);

  const auto& fit = section(j, "fit");
  get_to(fit, "method", c.fit_method);
  if (c.fit_method != "edmd" && c.fit_method != "multistep" && c.fit_method != "neural")
    throw ParseError("config: fit.method must be edmd, multistep or neural");
  get_to(fit, "horizon", c.multistep_horizon);
  get_to(fit, "max_iters", c.multistep.max_iters);
  get_to(fit, "encoder", c.encoder_widths);
  get_to(fit, "decoder", c.decoder_widths);
  get_to(fit, "learning_rate", c.train.learning_rate);
  get_to(fit, "epochs", c.train.epochs);
  get_to(fit, "batch_size", c.train.batch_size);
  get_to(fit, "p_ae", c.train.p_ae);
  get_to(fit, "p_forward", c.train.p_forward);
  c.train.horizon = c.multistep_horizon;
  if (c.fit_method == "neural" && (c.encoder_widths.empty() || c.decoder_widths.empty()))
    throw ParseError("config: neural fit needs 'encoder' and 'decoder' widths");

  const auto& smp = section(j, "sampling");
  if (smp.contains("region")) c.sample_region = detail::parse_region(smp.at("region"), n, "sampling.region");
  else c.sample_region = Region::cube(n, 3.0);
  get_to(smp, "trajectories", c.trajectories);
  get_to(smp, "steps", c.steps);
  get_to(smp, "dt", c.dt);
  get_to(smp, "snapshots", c.snapshots_file);
  c.snapshots_file = detail::resolve(c.snapshots_file, base_dir);
  if (!c.snapshots_file.empty() && !std::filesystem::exists(c.snapshots_file))
    throw ParseError("config: snapshot file not found: " + c.snapshots_file);
  if (!(c.dt > 0.0) || c.trajectories < 1 || c.steps < 1) throw ParseError("config: sampling needs dt > 0 and counts >= 1");

  const auto& bas = section(j, "basis");
  get_to(bas, "stable_m", c.stable_m);
  get_to(bas, "margin", c.margin);
  get_to(bas, "products", c.products);
  get_to(bas, "normalize", c.normalize);
  get_to(bas, "gram_limit", c.gram_limit);

  const auto& alg = section(j, "algorithm1");
  get_to(alg, "beta", c.alg.beta);
  get_to(alg, "max_iter", c.alg.max_iter);
  get_to(alg, "num_traj", c.alg.num_traj);
  get_to(alg, "horizon", c.alg.horizon);
  c.alg.dt = c.dt;
  get_to(alg, "dt", c.alg.dt);
  std::string deriv = "difference";
  get_to(alg, "derivative", deriv);
  if (deriv == "analytic") c.alg.derivative = DerivativeMode::Analytic;
  else if (deriv != "difference") throw ParseError("config: algorithm1.derivative must be difference or analytic");
  get_to(alg, "exclusion_count", c.alg.exclusion_count);
  get_to(alg, "delta_strict", c.alg.delta_strict);
  get_to(alg, "prune", c.alg.prune);
  get_to(alg, "refine_rounds", c.alg.refine_rounds);
  get_to(alg, "oracle", c.use_oracle);
  if (alg.contains("U")) c.U = detail::parse_region(alg.at("U"), n, "algorithm1.U");
  else c.U = Region::cube(n, 1.0);
  if (alg.contains("exclusion_region"))
    c.alg.exclusion_region = detail::parse_region(alg.at("exclusion_region"), n, "algorithm1.exclusion_region");
  if (alg.contains("keep_out")) c.alg.keep_out = detail::parse_region(alg.at("keep_out"), n, "algorithm1.keep_out");
  if (alg.contains("separatrix")) {
    const auto& s = alg.at("separatrix");
    if (!s.is_array()) throw ParseError("config: separatrix must be an array of points");
    for (const auto& p : s) {
      c.alg.separatrix.push_back(detail::parse_vec(p, "separatrix point"));
      if (c.alg.separatrix.back().size() != n) throw DimensionError("config: separatrix point has the wrong dimension");
    }
  }
  if (c.alg.beta < 0.0) throw ParseError("config: algorithm1.beta must be >= 0");

  const auto& ver = section(j, "verify");
  if (ver.contains("domain")) c.domain = detail::parse_box(ver.at("domain"), n, "verify.domain");
  get_to(ver, "starts", c.nlp.starts);
  if (ver.contains("start_region")) c.nlp.start_region = detail::parse_region(ver.at("start_region"), n, "verify.start_region");
  get_to(ver, "max_iters", c.nlp.max_iters);
  get_to(ver, "tol_margin", c.nlp.tol_margin);
  get_to(ver, "screen", c.nlp.screen);
  get_to(ver, "ftol", c.nlp.ftol);
  get_to(ver, "stall_window", c.nlp.stall_window);
  get_to(ver, "grid_resolution", c.grid_resolution);
  get_to(ver, "oracle_starts", c.oracle_starts);
  get_to(ver, "oracle_grid", c.oracle_grid);

  const auto& sim = section(j, "simulate");
  get_to(sim, "trajectories", c.sim.trajectories);
  get_to(sim, "horizon", c.sim.horizon);
  get_to(sim, "dt", c.sim.dt);
  get_to(sim, "tol", c.sim.tol);
  if (sim.contains("region")) c.sim_region = detail::parse_region(sim.at("region"), n, "simulate.region");

  const auto& exp = section(j, "export");
  get_to(exp, "contour_resolution", c.contour_resolution);
  if (exp.contains("contour_box")) c.contour_box = detail::parse_box(exp.at("contour_box"), n, "export.contour_box");
  if (exp.contains("anchors")) {
    const auto& a = exp.at("anchors");
    if (!a.is_array() || a.size() != 3) throw ParseError("config: export.anchors must hold three points");
    for (const auto& p : a) {
      c.anchors.push_back(detail::parse_vec(p, "anchor"));
      if (c.anchors.back().size() != n) throw DimensionError("config: anchor has the wrong dimension");
    }
  }
  get_to(exp, "projection_resolution", c.projection_resolution);
  get_to(exp, "projection_lo", c.projection_lo);
  get_to(exp, "projection_hi", c.projection_hi);
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  return parse_config(read_json_file(path), std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// System

/// The vector field the pipeline works with. With centering, everything
/// downstream (regions, certificates, exports) is in z = x - equilibrium.
struct Experiment {
  VectorField field;
  Vec equilibrium;  // x*; empty when not centered
  std::string name;
};

namespace detail {

inline GlvParameters glv_parameters(const PipelineConfig& c, Vec* equilibrium) {
  if (!c.glv_file.empty()) {
    auto p = parse_glv(read_json_file(c.glv_file));
    if (equilibrium) *equilibrium = -p.interaction.fullPivLu().solve(p.rho);
    return p;
  }
  const auto g = random_stable_glv(c.glv_dim, c.seed + kSeedSystem);
  if (equilibrium) *equilibrium = g.equilibrium;
  return {g.rho, g.interaction};
}

}  // namespace detail

inline int system_dim(const PipelineConfig& c) {
  if (c.system == "van_der_pol") return 2;
  if (c.system == "linear") return static_cast<int>(c.linear_A.rows());
  if (c.glv_file.empty()) return c.glv_dim;
  return static_cast<int>(parse_glv(read_json_file(c.glv_file)).rho.size());
}

inline Experiment build_system(const PipelineConfig& c) {
  Experiment e;
  Vec eq;
  if (c.system == "van_der_pol") {
    e.field = van_der_pol();
    eq = Vec::Zero(2);
  } else if (c.system == "linear") {
    e.field = linear_field(c.linear_A);
    eq = Vec::Zero(c.linear_A.rows());
  } else {
    const auto p = detail::glv_parameters(c, &eq);
    e.field = glv_field(p.rho, p.interaction);
  }
  e.name = e.field.name();
  if (c.center_on_equilibrium) {
    e.equilibrium = c.equilibrium.size() ? c.equilibrium : eq;
    if (!e.equilibrium.allFinite()) throw NumericalError("build_system: equilibrium is not finite");
    e.field = shifted_field(e.field, e.equilibrium);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Stages

inline SnapshotSet stage_simulate(const PipelineConfig& c, const Experiment& e) {
  if (!c.snapshots_file.empty()) {
    auto s = load_snapshots(c.snapshots_file);
    if (s.dim() != e.field.dim()) throw DimensionError("snapshot file dimension does not match the system");
    return s;
  }
  return sample_snapshots(e.field, c.sample_region, c.trajectories, c.steps, c.dt, c.seed + kSeedSimulate);
}

inline KoopmanModel stage_fit(const PipelineConfig& c, const SnapshotSet& data) {
  if (c.fit_method == "neural") {
    auto tc = c.train;
    tc.seed = c.seed + kSeedFit;
    const auto res = train_joint(data, c.encoder_widths, c.decoder_widths, tc);
    KoopmanModel m;
    m.dict = NetworkDictionary(res.model.encoder);
    m.K = res.model.K;
    m.dt = data.dt;
    return m;
  }
  const AnyDictionary dict = MonomialDictionary(data.dim(), c.degree, c.min_degree);
  auto m = edmd_fit(data, dict);
  if (c.fit_method == "multistep") {
    const auto traj = data.trajectories();
    if (traj.empty()) throw InvalidArgument("multistep fit needs trajectory ids in the snapshots");
    m = multistep_fit(traj, dict, m.K, c.multistep_horizon, data.dt, c.multistep).model;
  }
  return m;
}

/// Top-M stable eigenfunctions ranked by eps_hat, optionally rescaled and with pairwise products,
/// error bounds fitted on the training pairs.
inline LyapunovBasis stage_basis(const PipelineConfig& c, const KoopmanModel& m, const Spectrum& sp,
                                 const SnapshotSet& data) {
  const auto scores = eigen_residual_scores(sp, m.dict, data.X, data.Y, data.dt, c.margin);
  auto b = make_basis(sp, select_stable(sp, c.stable_m, c.margin, scores), m.dict);
  if (c.normalize) normalize_basis(b, data.X);
  if (c.products) b = augment_products(b);
  estimate_error_bounds_data(b, data.X, data.Y, data.dt);
  return b;
}

/// The NLP domain: configured box, else the data bounding box scaled by 1.5 about its center.
inline Box verification_domain(const PipelineConfig& c, const SnapshotSet& data) {
  if (c.domain) return *c.domain;
  if (data.size() == 0) throw InvalidArgument("verification_domain: no data to derive a domain from");
  const Vec lo = data.X.rowwise().minCoeff().cwiseMin(data.Y.rowwise().minCoeff());
  const Vec hi = data.X.rowwise().maxCoeff().cwiseMax(data.Y.rowwise().maxCoeff());
  const Vec mid = 0.5 * (lo + hi);
  const Vec half = 0.75 * (hi - lo);
  return {mid - half, mid + half};
}

/// Points where the current candidate breaks the decay condition: NLP traces
/// ending above -tol_margin, plus the grid maximum when n <= 3.
inline CounterexampleOracle make_oracle(const PipelineConfig& c, const LyapunovBasis& b, const VectorField& f,
                                        const Box& domain) {
  auto calls = std::make_shared<std::uint64_t>(0);
  return [c, &b, f, domain, calls](const Vec& alpha, double gamma) {
    const CandidateFunction cand{alpha, gamma, c.alg.beta};
    std::vector<Vec> out;
    NlpConfig cfg = c.nlp;
    cfg.starts = c.oracle_starts;
    cfg.seed = c.seed + kSeedOracle + 1000 * (*calls)++;
    try {
      const auto rep = nlp_verify(b, cand, f, domain, cfg);
      for (const auto& t : rep.traces)
        if (t.value > -c.nlp.tol_margin) out.push_back(t.x);
    } catch (const InvalidArgument&) {
      // Sublevel set too thin to seed starts; the grid below may still find points.
    }
    if (b.dim() <= 3 && c.oracle_grid > 1) {
      const auto g = grid_falsify(b, cand, f, domain, c.oracle_grid);
      if (!g.empty && g.max_value > -c.nlp.tol_margin) out.push_back(g.argmax);
    }
    return out;
  };
}

inline Algorithm1Result stage_algorithm1(const PipelineConfig& c, const LyapunovBasis& b, const Experiment& e,
                                         const Box& domain) {
  auto prm = c.alg;
  prm.seed = c.seed + kSeedAlgorithm1;
  if (prm.refine_rounds > 0 && c.use_oracle) prm.counterexamples = make_oracle(c, b, e.field, domain);
  else prm.refine_rounds = 0;
  return run_algorithm1(b, e.field, c.U, prm);
}

struct VerifyOutput {
  VerificationReport nlp;
  std::optional<GridReport> grid;
  bool grid_agrees = true;  // |grid max - nlp max| <= max(1e-3, cell bound)
};

inline VerifyOutput stage_verify(const PipelineConfig& c, const Certificate& cert, const Experiment& e,
                                 const Box& domain) {
  VerifyOutput out;
  auto cfg = c.nlp;
  cfg.seed = c.seed + kSeedVerify;
  out.nlp = nlp_verify(cert.basis, cert.candidate, e.field, domain, cfg);
  if (cert.basis.dim() <= 3 && c.grid_resolution > 1) {
    out.grid = grid_falsify(cert.basis, cert.candidate, e.field, domain, c.grid_resolution);
    if (!out.grid->empty)
      out.grid_agrees =
          std::abs(out.grid->max_value - out.nlp.max_value) <= std::max(1e-3, out.grid->cell_bound);
  }
  return out;
}

inline SimulationReport stage_simulate_invariance(const PipelineConfig& c, const Certificate& cert,
                                                  const Experiment& e, const Box& domain) {
  auto cfg = c.sim;
  cfg.seed = c.seed + kSeedSimulateInvariance;
  return simulate_invariance(cert.basis, cert.candidate, e.field, c.sim_region ? *c.sim_region : Region(domain), cfg);
}

// ---------------------------------------------------------------------------
// Exports

/// Rows (x1, x2, V, residual) over a resolution x resolution grid, x1 outer.
/// Resolution 1 gives the box center.
inline Mat contour_grid(const LyapunovBasis& b, const CandidateFunction& c, const VectorField& f, const Box& box,
                        int resolution) {
  if (b.dim() != 2) throw DimensionError("export_contour: needs a 2-D state (use export_projection otherwise)");
  require_dim(box.lo.size(), 2, "export_contour box");
  if (resolution < 1) throw InvalidArgument("export_contour: resolution must be >= 1");
  auto axis = [&](int j, int k) {
    if (resolution == 1) return 0.5 * (box.lo(j) + box.hi(j));
    return box.lo(j) + (box.hi(j) - box.lo(j)) * static_cast<double>(k) / (resolution - 1);
  };
  Mat out(static_cast<Eigen::Index>(resolution) * resolution, 4);
  Eigen::Index r = 0;
  for (int i = 0; i < resolution; ++i)
    for (int k = 0; k < resolution; ++k) {
      const Vec x = (Vec(2) << axis(0, i), axis(1, k)).finished();
      out.row(r++) << x(0), x(1), eval_candidate(b, c.alpha, x), residual(b, c, f, x);
    }
  return out;
}

/// Rows (u, v, V) on the plane x = P0 + u (P1 - P0) + v (P2 - P0), u and v on
/// [lo, hi]; (1, 0) is P1 and (0, 1) is P2.
inline Mat projection_grid(const LyapunovBasis& b, const Vec& alpha, const Vec& P0, const Vec& P1, const Vec& P2,
                           int resolution, double lo = -0.5, double hi = 1.5) {
  require_dim(P0.size(), b.dim(), "export_projection P0");
  require_dim(P1.size(), b.dim(), "export_projection P1");
  require_dim(P2.size(), b.dim(), "export_projection P2");
  if (resolution < 1) throw InvalidArgument("export_projection: resolution must be >= 1");
  if (!(hi >= lo)) throw InvalidArgument("export_projection: empty parameter range");
  Mat D(b.dim(), 2);
  D << P1 - P0, P2 - P0;
  const Vec sv = Eigen::JacobiSVD<Mat>(D).singularValues();
  if (!(sv(1) > 1e-12 * std::max(sv(0), 1e-300))) throw InvalidArgument("export_projection: anchors are collinear");
  auto coord = [&](int k) {
    return resolution == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(k) / (resolution - 1);
  };
  Mat out(static_cast<Eigen::Index>(resolution) * resolution, 3);
  Eigen::Index r = 0;
  for (int i = 0; i < resolution; ++i)
    for (int k = 0; k < resolution; ++k) {
      const double u = coord(i), v = coord(k);
      const Vec x = P0 + u * D.col(0) + v * D.col(1);
      out.row(r++) << u, v, eval_candidate(b, alpha, x);
    }
  return out;
}

}  // namespace kl
