// kl: command-line driver for the Koopman-Lyapunov pipeline.
//
// Exit codes: 0 ok, 1 malformed input, 2 verification falsified or inconclusive,
// 3 no feasible candidate (Algorithm 1 infeasible or no stable eigenfunction).

#include "kl/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace kl;

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitVerify = 2;
constexpr int kExitInfeasible = 3;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> beta;
  std::optional<double> gamma;
  std::optional<int> max_iter;
  std::optional<int> degree;
  std::optional<int> stable_m;
};

class Infeasible : public Error {
 public:
  using Error::Error;
};

struct Context {
  PipelineConfig cfg;
  Experiment exp;
  std::string dir;
  std::optional<double> gamma;

  std::string path(const char* name) const { return (std::filesystem::path(dir) / name).string(); }
};

Context load(const Flags& f) {
  Context c;
  c.cfg = load_config(f.config);
  if (f.seed) c.cfg.seed = *f.seed;
  if (f.out) c.cfg.output_dir = *f.out;
  if (f.beta) c.cfg.alg.beta = *f.beta;
  if (f.max_iter) c.cfg.alg.max_iter = *f.max_iter;
  if (f.degree) c.cfg.degree = *f.degree;
  if (f.stable_m) c.cfg.stable_m = *f.stable_m;
  if (c.cfg.alg.beta < 0.0) throw ParseError("--beta must be >= 0");
  c.gamma = f.gamma;
  c.dir = c.cfg.output_dir;
  c.exp = build_system(c.cfg);
  return c;
}

void say(const std::string& s) { std::cout << s << '\n'; }

// ---------------------------------------------------------------------------
// Commands

int cmd_simulate(const Context& c) {
  const auto data = stage_simulate(c.cfg, c.exp);
  save_snapshots(c.path("snapshots.csv"), data);
  say("snapshots: " + std::to_string(data.size()) + " pairs -> " + c.path("snapshots.csv"));
  return kExitOk;
}

int cmd_fit(const Context& c) {
  const auto data = load_snapshots(c.path("snapshots.csv"));
  const auto m = stage_fit(c.cfg, data);
  save_model(c.path("model.json"), m);
  say("model: N = " + std::to_string(m.dict.size()) + ", rank " + std::to_string(m.diagnostics.rank) + " -> " +
      c.path("model.json"));
  return kExitOk;
}

int cmd_spectrum(const Context& c) {
  const auto m = load_model(c.path("model.json")).model;
  const auto sp = eigen_decompose(m);
  write_json_file(c.path("spectrum.json"), spectrum_to_json(sp));
  save_model(c.path("model.json"), m, &sp);
  const auto stable = stable_candidates(sp, c.cfg.margin);
  say("spectrum: " + std::to_string(sp.size()) + " eigenvalues, " + std::to_string(stable.size()) +
      " stable (one per conjugate pair) -> " + c.path("spectrum.json"));
  return kExitOk;
}

Spectrum spectrum_for(const Context& c, const ModelFile& mf) {
  if (mf.spectrum) return *mf.spectrum;
  if (std::filesystem::exists(c.path("spectrum.json"))) return spectrum_from_json(read_json_file(c.path("spectrum.json")));
  return eigen_decompose(mf.model);
}

int cmd_basis(const Context& c) {
  const auto mf = load_model(c.path("model.json"));
  const auto data = load_snapshots(c.path("snapshots.csv"));
  LyapunovBasis b;
  try {
    b = stage_basis(c.cfg, mf.model, spectrum_for(c, mf), data);
  } catch (const NoStableEigenfunctions& e) {
    throw Infeasible(e.what());
  }
  save_basis(c.path("basis.json"), b);
  say("basis: M = " + std::to_string(b.size()) + " -> " + c.path("basis.json"));
  if (b.dict.is_monomial()) {
    std::size_t factors = 1;
    for (const auto& e : b.entries) factors = std::max(factors, e.factors.size());
    const auto& d = b.dict.monomial();
    if (binomial(d.dim() + d.degree() * static_cast<int>(factors), d.degree() * static_cast<int>(factors)) <=
        c.cfg.gram_limit) {
      const auto g = gram_matrix(b, softmax_weights([&] {
                                   Vec e(b.size());
                                   for (int i = 0; i < b.size(); ++i) e(i) = b.entries[static_cast<std::size_t>(i)].eps_hat;
                                   return e;
                                 }()));
      write_json_file(c.path("gram.json"), gram_to_json(g));
      say("gram: " + std::to_string(g.Q.rows()) + " monomials, softmax weights -> " + c.path("gram.json"));
    }
  }
  return kExitOk;
}

Box domain_for(const Context& c) {
  if (c.cfg.domain) return *c.cfg.domain;
  return verification_domain(c.cfg, load_snapshots(c.path("snapshots.csv")));
}

int cmd_refine(const Context& c) {
  const auto b = load_basis(c.path("basis.json"));
  const Box dom = domain_for(c);
  const auto res = stage_algorithm1(c.cfg, b, c.exp, dom);
  save_polytope(c.path("polytope.json"), res.polytope);
  write_text_atomic(c.path("iterations.csv"), iteration_log_csv(res.log));
  write_json_file(c.path("algorithm1.json"), report_to_json(res));
  if (!res.ok()) {
    std::string msg = std::string("Algorithm 1: ") + to_string(res.status);
    if (res.failure)
      msg += " (row " + std::to_string(res.failure->index) + ", " + to_string(res.failure->tag) + ")";
    throw Infeasible(msg);
  }
  Certificate cert{b, res.candidate(), c.exp.name, c.exp.equilibrium, dom};
  save_certificate(c.path("certificate.json"), cert);
  char buf[160];
  std::snprintf(buf, sizeof buf, "certificate: gamma = %.6g, radius = %.3g, %d iterations, %d refine rounds -> %s",
                cert.candidate.gamma, res.radius, res.iterations, res.refine_rounds, c.path("certificate.json").c_str());
  say(buf);
  return kExitOk;
}

Certificate certificate_for(const Context& c) {
  auto cert = load_certificate(c.path("certificate.json"));
  if (c.gamma) cert.candidate.gamma = *c.gamma;
  if (cert.basis.dim() != c.exp.field.dim()) throw DimensionError("certificate dimension does not match the system");
  return cert;
}

int cmd_verify(const Context& c) {
  const auto cert = certificate_for(c);
  const Box dom = c.cfg.domain ? *c.cfg.domain : cert.domain ? *cert.domain : domain_for(c);
  const auto out = stage_verify(c.cfg, cert, c.exp, dom);
  Json j = report_to_json(out.nlp);
  if (out.grid) {
    j["grid"] = report_to_json(*out.grid);
    j["grid_agrees"] = out.grid_agrees;
  }
  write_json_file(c.path("verification.json"), j);
  char buf[200];
  std::snprintf(buf, sizeof buf, "verify: %s, max residual %.6g (%d/%d starts converged)", to_string(out.nlp.verdict),
                out.nlp.max_value, out.nlp.converged_starts, out.nlp.starts);
  say(buf);
  if (out.grid && !out.grid->empty) {
    std::snprintf(buf, sizeof buf, "grid: max residual %.6g, cell bound %.3g, %s", out.grid->max_value,
                  out.grid->cell_bound, out.grid_agrees ? "agrees" : "DISAGREES");
    say(buf);
  }
  return out.nlp.verdict == Verdict::Verified ? kExitOk : kExitVerify;
}

int cmd_falsify_sim(const Context& c) {
  const auto cert = certificate_for(c);
  const Box dom = c.cfg.domain ? *c.cfg.domain : cert.domain ? *cert.domain : domain_for(c);
  const auto rep = stage_simulate_invariance(c.cfg, cert, c.exp, dom);
  write_json_file(c.path("simulation.json"), report_to_json(rep));
  char buf[160];
  std::snprintf(buf, sizeof buf, "falsify-sim: %d/%d trajectories left the sublevel set (worst overshoot %.3g)",
                rep.violations, rep.trajectories, rep.worst_overshoot);
  say(buf);
  return rep.violations == 0 ? kExitOk : kExitVerify;
}

int cmd_export_contour(const Context& c) {
  const auto cert = certificate_for(c);
  const Box box = c.cfg.contour_box ? *c.cfg.contour_box : cert.domain ? *cert.domain : domain_for(c);
  const Mat g = contour_grid(cert.basis, cert.candidate, c.exp.field, box, c.cfg.contour_resolution);
  write_text_atomic(c.path("contour.csv"), matrix_csv({"x1", "x2", "V", "residual"}, g));
  say("contour: " + std::to_string(g.rows()) + " rows -> " + c.path("contour.csv"));
  return kExitOk;
}

int cmd_export_projection(const Context& c) {
  const auto cert = certificate_for(c);
  if (c.cfg.anchors.size() != 3) throw ParseError("export-projection needs export.anchors (three points) in the config");
  const Mat g = projection_grid(cert.basis, cert.candidate.alpha, c.cfg.anchors[0], c.cfg.anchors[1], c.cfg.anchors[2],
                                c.cfg.projection_resolution, c.cfg.projection_lo, c.cfg.projection_hi);
  write_text_atomic(c.path("projection.csv"), matrix_csv({"u", "v", "V"}, g));
  say("projection: " + std::to_string(g.rows()) + " rows -> " + c.path("projection.csv"));
  return kExitOk;
}

int cmd_pipeline(const Context& c) {
  cmd_simulate(c);
  cmd_fit(c);
  cmd_spectrum(c);
  cmd_basis(c);
  cmd_refine(c);
  const int v = cmd_verify(c);
  const int s = cmd_falsify_sim(c);
  if (c.exp.field.dim() == 2) cmd_export_contour(c);
  if (c.cfg.anchors.size() == 3) cmd_export_projection(c);
  return v != kExitOk ? v : s;
}

int run(int (*cmd)(const Context&), const Flags& f) {
  try {
    return cmd(load(f));
  } catch (const Infeasible& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const NoStableEigenfunctions& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Koopman-Lyapunov invariant sets: learn, certify and check"};
  app.require_subcommand(1);
  Flags flags;

  struct Command {
    const char* name;
    const char* help;
    int (*fn)(const Context&);
  };
  const Command commands[] = {
      {"simulate", "sample RK4 trajectories -> snapshots.csv", cmd_simulate},
      {"fit", "fit the Koopman matrix -> model.json", cmd_fit},
      {"spectrum", "eigendecomposition -> spectrum.json", cmd_spectrum},
      {"basis", "select stable eigenfunctions, fit error bounds -> basis.json", cmd_basis},
      {"refine", "Algorithm 1 polytope refinement -> polytope.json, certificate.json", cmd_refine},
      {"verify", "NLP (and grid for n <= 3) check of the certificate -> verification.json", cmd_verify},
      {"falsify-sim", "trajectory invariance check -> simulation.json", cmd_falsify_sim},
      {"export-contour", "V and residual on a 2-D grid -> contour.csv", cmd_export_contour},
      {"export-projection", "V on the plane through three anchors -> projection.csv", cmd_export_projection},
      {"pipeline", "run every stage in order", cmd_pipeline},
  };
  int code = kExitOk;
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", flags.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "override the config seed");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--beta", flags.beta, "decay rate beta");
    sub->add_option("--gamma", flags.gamma, "override the certificate level gamma");
    sub->add_option("--max-iter", flags.max_iter, "Algorithm 1 iterations");
    sub->add_option("--degree", flags.degree, "monomial dictionary degree");
    sub->add_option("--stable-m", flags.stable_m, "number of stable eigenfunctions");
    sub->callback([&flags, &code, fn = cmd.fn] { code = run(fn, flags); });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInput;
  }
  return code;
}
