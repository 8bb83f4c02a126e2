#pragma once

// Persistence: JSON for models, bases, polytopes, certificates, networks and
// reports; CSV for snapshots, iteration logs and plot grids. Doubles are written
// in shortest round-trip form so load(save(x)) == x bit for bit.

#include "kl/any_dictionary.hpp"
#include "kl/core.hpp"
#include "kl/koopman.hpp"
#include "kl/lyapunov.hpp"
#include "kl/neural.hpp"
#include "kl/polytope.hpp"
#include "kl/systems.hpp"
#include "kl/verify.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <unistd.h>

namespace kl {

using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

// ---------------------------------------------------------------------------
// Files

/// Writes `content` to a temporary sibling and renames it over `path`, so a
/// failed write never leaves a partial artifact.
inline void write_text_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path() && !fs::exists(target.parent_path()))
    fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error("cannot rename onto " + path);
  }
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Json read_json_file(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw ParseError("malformed JSON in " + path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const Json& j) { write_text_atomic(path, j.dump(1) + "\n"); }

// ---------------------------------------------------------------------------
// Numbers

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const char* what) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ParseError(std::string(what) + ": not a number: '" + std::string(s) + "'");
  return v;
}

namespace detail {

inline const Json& field(const Json& j, const char* key, const char* what) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(std::string(what) + ": missing key '" + key + "'");
  return j.at(key);
}

inline double num(const Json& j, const char* what) {
  if (!j.is_number()) throw ParseError(std::string(what) + ": expected a number");
  return j.get<double>();
}

inline long long integer(const Json& j, const char* what) {
  if (!j.is_number_integer()) throw ParseError(std::string(what) + ": expected an integer");
  return j.get<long long>();
}

inline double finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string(what) + ": refusing to write a non-finite value");
  return v;
}

inline Json vec_json(const Vec& v, const char* what) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(finite(v(i), what));
  return a;
}

inline Vec vec_from(const Json& j, const char* what) {
  if (!j.is_array()) throw ParseError(std::string(what) + ": expected an array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = num(j[i], what);
  return v;
}

// Row-major {"rows", "cols", "data"}.
inline Json mat_json(const Mat& m, const char* what) {
  Json d = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) d.push_back(finite(m(r, c), what));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(d)}};
}

inline Mat mat_from(const Json& j, const char* what) {
  const auto rows = integer(field(j, "rows", what), what);
  const auto cols = integer(field(j, "cols", what), what);
  const auto& d = field(j, "data", what);
  if (rows < 0 || cols < 0 || !d.is_array() || static_cast<long long>(d.size()) != rows * cols)
    throw DimensionError(std::string(what) + ": data length does not match rows x cols");
  Mat m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = num(d[k++], what);
  return m;
}

inline Json complex_json(Complex z, const char* what) { return {finite(z.real(), what), finite(z.imag(), what)}; }

inline Complex complex_from(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != 2) throw ParseError(std::string(what) + ": expected [re, im]");
  return {num(j[0], what), num(j[1], what)};
}

// Interleaved [re0, im0, re1, im1, ...].
inline Json cvec_json(const CVec& v, const char* what) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    a.push_back(finite(v(i).real(), what));
    a.push_back(finite(v(i).imag(), what));
  }
  return a;
}

inline CVec cvec_from(const Json& j, const char* what) {
  if (!j.is_array() || j.size() % 2 != 0) throw ParseError(std::string(what) + ": expected interleaved re/im pairs");
  CVec v(static_cast<Eigen::Index>(j.size() / 2));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v(i) = {num(j[static_cast<std::size_t>(2 * i)], what), num(j[static_cast<std::size_t>(2 * i + 1)], what)};
  return v;
}

// Reports may carry non-finite values; nlohmann writes those as null.
inline std::vector<double> plain(const Vec& v) { return {v.data(), v.data() + v.size()}; }

inline void check_kind(const Json& j, const char* kind) {
  const auto& k = field(j, "kind", kind);
  if (!k.is_string() || k.get<std::string>() != kind)
    throw ParseError(std::string("expected a '") + kind + "' document");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Networks and dictionaries

inline Json network_to_json(const FeedforwardNet& net) {
  Json layers = Json::array();
  for (int l = 0; l < net.layers(); ++l)
    layers.push_back({{"weights", detail::mat_json(net.weights[l], "network weights")},
                      {"bias", detail::vec_json(net.biases[l], "network bias")}});
  return {{"kind", "network"}, {"widths", net.widths}, {"layers", std::move(layers)}};
}

inline FeedforwardNet network_from_json(const Json& j) {
  detail::check_kind(j, "network");
  const auto& w = detail::field(j, "widths", "network");
  if (!w.is_array()) throw ParseError("network: widths must be an array");
  std::vector<int> widths;
  for (const auto& v : w) widths.push_back(static_cast<int>(detail::integer(v, "network widths")));
  FeedforwardNet net(widths);
  const auto& layers = detail::field(j, "layers", "network");
  if (!layers.is_array() || static_cast<int>(layers.size()) != net.layers())
    throw DimensionError("network: layer count does not match widths");
  for (int l = 0; l < net.layers(); ++l) {
    const auto& L = layers[static_cast<std::size_t>(l)];
    const Mat W = detail::mat_from(detail::field(L, "weights", "network layer"), "network weights");
    const Vec b = detail::vec_from(detail::field(L, "bias", "network layer"), "network bias");
    if (W.rows() != net.weights[l].rows() || W.cols() != net.weights[l].cols() || b.size() != net.biases[l].size())
      throw DimensionError("network: layer " + std::to_string(l) + " shape does not match widths");
    net.weights[l] = W;
    net.biases[l] = b;
  }
  return net;
}

inline Json dictionary_to_json(const AnyDictionary& d) {
  if (d.is_monomial()) {
    const auto& m = d.monomial();
    return {{"type", "monomial"}, {"n", m.dim()}, {"d", m.degree()}, {"min_degree", m.min_degree()},
            {"ordering", "grlex"}};
  }
  return {{"type", "network"}, {"encoder", network_to_json(d.network().encoder())}};
}

inline AnyDictionary dictionary_from_json(const Json& j) {
  const auto& t = detail::field(j, "type", "dictionary");
  if (t == "monomial") {
    const int n = static_cast<int>(detail::integer(detail::field(j, "n", "dictionary"), "dictionary n"));
    const int d = static_cast<int>(detail::integer(detail::field(j, "d", "dictionary"), "dictionary d"));
    const int lo = j.contains("min_degree") ? static_cast<int>(detail::integer(j.at("min_degree"), "min_degree")) : 0;
    if (j.contains("ordering") && j.at("ordering") != "grlex") throw ParseError("dictionary: unsupported ordering");
    try {
      return MonomialDictionary(n, d, lo);
    } catch (const InvalidArgument& e) {
      throw ParseError(std::string("dictionary: ") + e.what());
    }
  }
  if (t == "network") return NetworkDictionary(network_from_json(detail::field(j, "encoder", "dictionary")));
  throw ParseError("dictionary: unknown type");
}

// ---------------------------------------------------------------------------
// Koopman models and spectra

inline Json spectrum_to_json(const Spectrum& sp) {
  Json pairs = Json::array();
  for (const auto& p : sp.pairs)
    pairs.push_back({{"mu", detail::complex_json(p.mu, "spectrum mu")},
                     {"lambda", detail::complex_json(p.lambda, "spectrum lambda")},
                     {"v", detail::cvec_json(p.v, "spectrum v")},
                     {"conjugate", p.conjugate}});
  return {{"kind", "spectrum"}, {"dt", sp.dt}, {"dropped_zero", sp.dropped_zero}, {"pairs", std::move(pairs)}};
}

inline Spectrum spectrum_from_json(const Json& j) {
  detail::check_kind(j, "spectrum");
  Spectrum sp;
  sp.dt = detail::num(detail::field(j, "dt", "spectrum"), "spectrum dt");
  sp.dropped_zero = static_cast<int>(detail::integer(detail::field(j, "dropped_zero", "spectrum"), "dropped_zero"));
  const auto& pairs = detail::field(j, "pairs", "spectrum");
  if (!pairs.is_array()) throw ParseError("spectrum: pairs must be an array");
  for (const auto& p : pairs) {
    EigenPair e;
    e.mu = detail::complex_from(detail::field(p, "mu", "eigenpair"), "mu");
    e.lambda = detail::complex_from(detail::field(p, "lambda", "eigenpair"), "lambda");
    e.v = detail::cvec_from(detail::field(p, "v", "eigenpair"), "v");
    e.conjugate = static_cast<int>(detail::integer(detail::field(p, "conjugate", "eigenpair"), "conjugate"));
    sp.pairs.push_back(std::move(e));
  }
  return sp;
}

struct ModelFile {
  KoopmanModel model;
  std::optional<Spectrum> spectrum;
};

inline Json model_to_json(const KoopmanModel& m, const Spectrum* sp = nullptr) {
  Json j = {{"kind", "koopman_model"},
            {"version", kFormatVersion},
            {"dictionary", dictionary_to_json(m.dict)},
            {"dt", detail::finite(m.dt, "model dt")},
            {"K", detail::mat_json(m.K, "model K")},
            {"diagnostics",
             {{"residual_norm", m.diagnostics.residual_norm},
              {"condition", m.diagnostics.condition},
              {"rank", m.diagnostics.rank}}}};
  if (sp) j["spectrum"] = spectrum_to_json(*sp);
  return j;
}

inline ModelFile model_from_json(const Json& j) {
  detail::check_kind(j, "koopman_model");
  ModelFile f;
  f.model.dict = dictionary_from_json(detail::field(j, "dictionary", "model"));
  f.model.dt = detail::num(detail::field(j, "dt", "model"), "model dt");
  f.model.K = detail::mat_from(detail::field(j, "K", "model"), "model K");
  if (f.model.K.rows() != f.model.dict.size() || f.model.K.cols() != f.model.dict.size())
    throw DimensionError("model: K is not N x N for the stored dictionary");
  if (j.contains("diagnostics")) {
    const auto& d = j.at("diagnostics");
    f.model.diagnostics.residual_norm = detail::num(detail::field(d, "residual_norm", "diagnostics"), "residual_norm");
    f.model.diagnostics.condition = detail::num(detail::field(d, "condition", "diagnostics"), "condition");
    f.model.diagnostics.rank = static_cast<int>(detail::integer(detail::field(d, "rank", "diagnostics"), "rank"));
  }
  if (j.contains("spectrum")) f.spectrum = spectrum_from_json(j.at("spectrum"));
  return f;
}

inline void save_model(const std::string& path, const KoopmanModel& m, const Spectrum* sp = nullptr) {
  write_json_file(path, model_to_json(m, sp));
}
inline ModelFile load_model(const std::string& path) { return model_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Lyapunov bases, Gram forms and certificates

inline Json basis_to_json(const LyapunovBasis& b) {
  Json entries = Json::array();
  for (const auto& e : b.entries)
    entries.push_back({{"factors", e.factors},
                       {"lambda", detail::complex_json(e.lambda, "basis lambda")},
                       {"eps_hat", detail::finite(e.eps_hat, "eps_hat")},
                       {"kappa", detail::finite(e.kappa, "kappa")},
                       {"omega", detail::finite(e.omega, "omega")},
                       {"bounds_fitted", e.bounds_fitted}});
  Json lambdas = Json::array();
  for (const auto& l : b.base_lambda) lambdas.push_back(detail::complex_json(l, "basis base lambda"));
  Json vectors = Json::array();
  for (Eigen::Index c = 0; c < b.vectors.cols(); ++c) vectors.push_back(detail::cvec_json(b.vectors.col(c), "basis v"));
  return {{"kind", "lyapunov_basis"},
          {"version", kFormatVersion},
          {"dictionary", dictionary_to_json(b.dict)},
          {"spectrum_index", b.spectrum_index},
          {"base_lambda", std::move(lambdas)},
          {"vectors", std::move(vectors)},
          {"entries", std::move(entries)}};
}

inline LyapunovBasis basis_from_json(const Json& j) {
  detail::check_kind(j, "lyapunov_basis");
  LyapunovBasis b;
  b.dict = dictionary_from_json(detail::field(j, "dictionary", "basis"));
  const auto& idx = detail::field(j, "spectrum_index", "basis");
  const auto& lam = detail::field(j, "base_lambda", "basis");
  const auto& vecs = detail::field(j, "vectors", "basis");
  if (!idx.is_array() || !lam.is_array() || !vecs.is_array() || idx.size() != lam.size() || idx.size() != vecs.size())
    throw DimensionError("basis: spectrum_index, base_lambda and vectors must have equal length");
  b.vectors.resize(b.dict.size(), static_cast<Eigen::Index>(vecs.size()));
  for (std::size_t c = 0; c < vecs.size(); ++c) {
    b.spectrum_index.push_back(static_cast<int>(detail::integer(idx[c], "spectrum_index")));
    b.base_lambda.push_back(detail::complex_from(lam[c], "base_lambda"));
    const CVec v = detail::cvec_from(vecs[c], "basis v");
    if (v.size() != b.dict.size()) throw DimensionError("basis: eigenvector length does not match the dictionary");
    b.vectors.col(static_cast<Eigen::Index>(c)) = v;
  }
  const auto& entries = detail::field(j, "entries", "basis");
  if (!entries.is_array()) throw ParseError("basis: entries must be an array");
  for (const auto& e : entries) {
    LyapunovEntry out;
    const auto& f = detail::field(e, "factors", "basis entry");
    if (!f.is_array() || f.empty()) throw ParseError("basis entry: factors must be a nonempty array");
    for (const auto& k : f) {
      const auto v = detail::integer(k, "factor");
      if (v < 0 || v >= b.vectors.cols()) throw DimensionError("basis entry: factor index out of range");
      out.factors.push_back(static_cast<int>(v));
    }
    out.lambda = detail::complex_from(detail::field(e, "lambda", "basis entry"), "lambda");
    out.eps_hat = detail::num(detail::field(e, "eps_hat", "basis entry"), "eps_hat");
    out.kappa = detail::num(detail::field(e, "kappa", "basis entry"), "kappa");
    out.omega = detail::num(detail::field(e, "omega", "basis entry"), "omega");
    out.bounds_fitted = detail::field(e, "bounds_fitted", "basis entry").get<bool>();
    b.entries.push_back(std::move(out));
  }
  return b;
}

inline void save_basis(const std::string& path, const LyapunovBasis& b) { write_json_file(path, basis_to_json(b)); }
inline LyapunovBasis load_basis(const std::string& path) { return basis_from_json(read_json_file(path)); }

inline Json gram_to_json(const GramForm& g) {
  return {{"kind", "gram_form"},
          {"monomials", dictionary_to_json(g.monomials)},
          {"Q", detail::mat_json(g.Q, "Gram matrix")},
          {"min_eigenvalue", min_eigenvalue(g.Q)}};
}

/// Lyapunov basis plus the weights, level and decay rate of a candidate.
struct Certificate {
  LyapunovBasis basis;
  CandidateFunction candidate;
  std::string system;  // name of the vector field the certificate was built for
  Vec equilibrium;     // shift of the working coordinates z = x - equilibrium; empty if none
  std::optional<Box> domain;  // verification domain used when it was produced
};

inline Json certificate_to_json(const Certificate& c) {
  if (c.candidate.alpha.size() != c.basis.size())
    throw DimensionError("certificate: alpha length does not match the basis");
  Json j = {{"kind", "certificate"},
            {"version", kFormatVersion},
            {"system", c.system},
            {"alpha", detail::vec_json(c.candidate.alpha, "alpha")},
            {"gamma", detail::finite(c.candidate.gamma, "gamma")},
            {"beta", detail::finite(c.candidate.beta, "beta")},
            {"basis", basis_to_json(c.basis)}};
  if (c.equilibrium.size()) j["equilibrium"] = detail::vec_json(c.equilibrium, "equilibrium");
  if (c.domain) j["domain"] = {{"lo", detail::vec_json(c.domain->lo, "domain")}, {"hi", detail::vec_json(c.domain->hi, "domain")}};
  return j;
}

inline Certificate certificate_from_json(const Json& j) {
  detail::check_kind(j, "certificate");
  Certificate c;
  c.basis = basis_from_json(detail::field(j, "basis", "certificate"));
  c.candidate.alpha = detail::vec_from(detail::field(j, "alpha", "certificate"), "alpha");
  c.candidate.gamma = detail::num(detail::field(j, "gamma", "certificate"), "gamma");
  c.candidate.beta = detail::num(detail::field(j, "beta", "certificate"), "beta");
  if (j.contains("system")) c.system = j.at("system").get<std::string>();
  if (j.contains("equilibrium")) c.equilibrium = detail::vec_from(j.at("equilibrium"), "equilibrium");
  if (j.contains("domain")) {
    const auto& d = j.at("domain");
    c.domain = Box{detail::vec_from(detail::field(d, "lo", "domain"), "domain"),
                   detail::vec_from(detail::field(d, "hi", "domain"), "domain")};
    if (c.domain->lo.size() != c.basis.dim() || c.domain->hi.size() != c.basis.dim())
      throw DimensionError("certificate: domain has the wrong dimension");
  }
  if (c.equilibrium.size() && c.equilibrium.size() != c.basis.dim())
    throw DimensionError("certificate: equilibrium has the wrong dimension");
  if (c.candidate.alpha.size() != c.basis.size())
    throw DimensionError("certificate: alpha length does not match the basis");
  return c;
}

inline void save_certificate(const std::string& path, const Certificate& c) {
  write_json_file(path, certificate_to_json(c));
}
inline Certificate load_certificate(const std::string& path) { return certificate_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Polytopes

inline Json polytope_to_json(const HalfspacePolytope& P) {
  Json rows = Json::array();
  for (Eigen::Index k = 0; k < P.rows(); ++k)
    rows.push_back({{"a", detail::vec_json(P.row(k), "polytope row")},
                    {"b", detail::finite(P.rhs(k), "polytope rhs")},
                    {"tag", to_string(P.tag(k))},
                    {"active", P.active(k)}});
  return {{"kind", "polytope"}, {"version", kFormatVersion}, {"dim", P.dim()}, {"rows", std::move(rows)}};
}

inline HalfspacePolytope polytope_from_json(const Json& j) {
  detail::check_kind(j, "polytope");
  const auto dim = detail::integer(detail::field(j, "dim", "polytope"), "polytope dim");
  if (dim < 1) throw ParseError("polytope: dim must be positive");
  HalfspacePolytope P(static_cast<int>(dim));
  const auto& rows = detail::field(j, "rows", "polytope");
  if (!rows.is_array()) throw ParseError("polytope: rows must be an array");
  for (const auto& r : rows) {
    const Vec a = detail::vec_from(detail::field(r, "a", "polytope row"), "polytope row");
    if (a.size() != dim) throw DimensionError("polytope: row length does not match dim");
    const double b = detail::num(detail::field(r, "b", "polytope row"), "polytope rhs");
    const auto& tag = detail::field(r, "tag", "polytope row");
    if (!tag.is_string()) throw ParseError("polytope: tag must be a string");
    const bool active = r.contains("active") ? r.at("active").get<bool>() : true;
    P.add_row_raw(a, b, row_tag_from_string(tag.get<std::string>()), active);
  }
  return P;
}

inline void save_polytope(const std::string& path, const HalfspacePolytope& P) {
  write_json_file(path, polytope_to_json(P));
}
inline HalfspacePolytope load_polytope(const std::string& path) { return polytope_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Reports (write-only)

inline Json report_to_json(const VerificationReport& r) {
  Json traces = Json::array();
  for (const auto& t : r.traces)
    traces.push_back({{"x0", detail::plain(t.x0)},
                      {"x", detail::plain(t.x)},
                      {"value", t.value},
                      {"iterations", t.iterations},
                      {"converged", t.converged}});
  return {{"kind", "verification_report"},
          {"verdict", to_string(r.verdict)},
          {"max_value", r.max_value},
          {"argmax", detail::plain(r.argmax)},
          {"starts", r.starts},
          {"converged_starts", r.converged_starts},
          {"iterations", r.iterations},
          {"domain", r.domain},
          {"traces", std::move(traces)}};
}

inline Json report_to_json(const GridReport& r) {
  return {{"kind", "grid_report"},
          {"empty", r.empty},
          {"max_value", r.empty ? Json(nullptr) : Json(r.max_value)},
          {"argmax", detail::plain(r.argmax)},
          {"feasible_points", r.feasible_points},
          {"cell_bound", r.cell_bound}};
}

inline Json report_to_json(const SimulationReport& r) {
  return {{"kind", "simulation_report"},
          {"trajectories", r.trajectories},
          {"violations", r.violations},
          {"worst_overshoot", r.worst_overshoot},
          {"worst_start", detail::plain(r.worst_start)}};
}

inline Json report_to_json(const Algorithm1Result& r) {
  Json log = Json::array();
  for (const auto& e : r.log)
    log.push_back({{"iteration", e.iteration},
                   {"stage", e.stage},
                   {"rows_added", e.rows_added},
                   {"chebyshev_radius", e.chebyshev_radius}});
  Json j = {{"kind", "algorithm1_report"},
            {"status", to_string(r.status)},
            {"iterations", r.iterations},
            {"stopped_empty", r.stopped_empty},
            {"refine_rounds", r.refine_rounds},
            {"refine_converged", r.refine_converged},
            {"rows", r.polytope.rows()},
            {"active_rows", r.polytope.active_count()},
            {"log", std::move(log)}};
  if (r.ok()) {
    j["Z"] = detail::plain(r.Z);
    j["radius"] = r.radius;
  }
  if (r.failure)
    j["failure"] = {{"index", r.failure->index},
                    {"tag", to_string(r.failure->tag)},
                    {"a", detail::plain(r.failure->a)},
                    {"b", r.failure->b}};
  return j;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i)
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  return out;
}

inline std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

}  // namespace detail

/// First line `dt=<value>`, then `traj_id,x_1..x_n,y_1..y_n`, one pair per row.
/// Ungrouped sets are written with traj_id -1.
inline std::string snapshots_to_csv(const SnapshotSet& s) {
  if (!(s.dt > 0.0)) throw InvalidArgument("snapshots_to_csv: dt must be positive");
  std::string out = "dt=" + format_double(s.dt) + "\ntraj_id";
  for (int i = 1; i <= s.dim(); ++i) out += ",x_" + std::to_string(i);
  for (int i = 1; i <= s.dim(); ++i) out += ",y_" + std::to_string(i);
  out += '\n';
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    out += std::to_string(s.traj_id.empty() ? -1 : s.traj_id[static_cast<std::size_t>(k)]);
    for (int i = 0; i < s.dim(); ++i) out += "," + format_double(detail::finite(s.X(i, k), "snapshot x"));
    for (int i = 0; i < s.dim(); ++i) out += "," + format_double(detail::finite(s.Y(i, k), "snapshot y"));
    out += '\n';
  }
  return out;
}

inline SnapshotSet snapshots_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("snapshot CSV: empty file");
  line = detail::trim(line);
  if (line.rfind("dt=", 0) != 0) throw ParseError("snapshot CSV: first line must be dt=<value>");
  SnapshotSet s;
  s.dt = parse_double(std::string_view(line).substr(3), "snapshot CSV dt");
  if (!(s.dt > 0.0) || !std::isfinite(s.dt)) throw ParseError("snapshot CSV: dt must be positive");
  if (!std::getline(in, line)) throw ParseError("snapshot CSV: missing header");
  line = detail::trim(line);
  const auto head = detail::split_csv(line);
  if (head.size() < 3 || head.size() % 2 == 0 || head[0] != "traj_id")
    throw ParseError("snapshot CSV: header must be traj_id,x_1..x_n,y_1..y_n");
  const int n = static_cast<int>((head.size() - 1) / 2);
  for (int i = 0; i < n; ++i) {
    if (head[1 + static_cast<std::size_t>(i)] != "x_" + std::to_string(i + 1) ||
        head[1 + static_cast<std::size_t>(n + i)] != "y_" + std::to_string(i + 1))
      throw ParseError("snapshot CSV: unexpected header column");
  }
  std::vector<int> ids;
  std::vector<double> xs, ys;
  long lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != head.size())
      throw DimensionError("snapshot CSV line " + std::to_string(lineno) + ": expected " +
                           std::to_string(head.size()) + " columns");
    const double id = parse_double(cells[0], "snapshot CSV traj_id");
    if (id != std::floor(id)) throw ParseError("snapshot CSV: traj_id must be an integer");
    ids.push_back(static_cast<int>(id));
    for (int i = 0; i < n; ++i) xs.push_back(parse_double(cells[1 + static_cast<std::size_t>(i)], "snapshot CSV x"));
    for (int i = 0; i < n; ++i) ys.push_back(parse_double(cells[1 + static_cast<std::size_t>(n + i)], "snapshot CSV y"));
  }
  const auto m = static_cast<Eigen::Index>(ids.size());
  s.X = Eigen::Map<const Mat>(xs.data(), n, m);
  s.Y = Eigen::Map<const Mat>(ys.data(), n, m);
  bool grouped = false;
  for (int id : ids) grouped = grouped || id >= 0;
  if (grouped) s.traj_id = std::move(ids);
  return s;
}

inline void save_snapshots(const std::string& path, const SnapshotSet& s) { write_text_atomic(path, snapshots_to_csv(s)); }
inline SnapshotSet load_snapshots(const std::string& path) { return snapshots_from_csv(read_text(path)); }

/// iteration,rows_added,chebyshev_radius
inline std::string iteration_log_csv(const std::vector<IterationRecord>& log) {
  std::string out = "iteration,rows_added,chebyshev_radius\n";
  for (const auto& e : log)
    out += std::to_string(e.iteration) + "," + std::to_string(e.rows_added) + "," + format_double(e.chebyshev_radius) + "\n";
  return out;
}

/// Header line plus one row per matrix row.
inline std::string matrix_csv(const std::vector<std::string>& header, const Mat& rows) {
  if (static_cast<Eigen::Index>(header.size()) != rows.cols()) throw DimensionError("matrix_csv: header width");
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
  out += '\n';
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) out += (c ? "," : "") + format_double(rows(r, c));
    out += '\n';
  }
  return out;
}

}  // namespace kl
