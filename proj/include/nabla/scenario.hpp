#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "nabla/checks.hpp"

namespace nabla {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

struct RunOptions {
  std::optional<double> h;
  std::optional<int> fd_order;
  std::optional<std::uint64_t> seed;
  bool timing = false;
  int threads = 1;
};

struct ReportRow {
  std::string scenario, check_id, type, s = "-", p = "-";
  double measured = 0, bound = 0, tolerance = 0;
  bool pass = false;
  double h = 0;
  int fd_order = 4;
  std::string inputs_digest;
  std::optional<double> runtime_ms;
  std::string note;
};

struct Report {
  std::string scenario;
  std::vector<ReportRow> rows;
  bool pass() const {
    for (const auto& r : rows)
      if (!r.pass) return false;
    return true;
  }
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace scenario_detail {

template <class T>
T get(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::config_error, std::string("field '") + key + "': " + e.what());
  }
}

inline Exponent exponent(const json& v) {
  if (v.is_string()) {
    require(v.get<std::string>() == "inf", ErrorKind::config_error, "exponent must be a number or \"inf\"");
    return Exponent::infinity();
  }
  require(v.is_number(), ErrorKind::config_error, "exponent must be a number or \"inf\"");
  const double p = v.get<double>();
  require(p >= 1, ErrorKind::config_error, "exponent must be at least 1");
  return p;
}

inline Exponent exponent(const json& j, const char* key, double fallback) {
  return j.contains(key) ? exponent(j.at(key)) : Exponent(fallback);
}

inline ScalarFn scalar_expr(const std::string& text, int n) {
  Expr e = Expr::parse(text, n);
  return [e](const double* x) { return e(x).real(); };
}

inline std::vector<std::string> strings(const json& j, const char* what) {
  require(j.is_array(), ErrorKind::config_error, std::string(what) + " must be an array of expressions");
  std::vector<std::string> out;
  for (const auto& v : j) {
    require(v.is_string(), ErrorKind::config_error, std::string(what) + " entries must be strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

inline std::vector<std::vector<std::string>> matrix(const json& j, const char* what) {
  require(j.is_array(), ErrorKind::config_error, std::string(what) + " must be a matrix of expressions");
  std::vector<std::vector<std::string>> out;
  for (const auto& row : j) out.push_back(strings(row, what));
  return out;
}

}  // namespace scenario_detail

/// Parsed scenario: normalized configuration plus resolved geometry.
struct Scenario {
  json config;
  std::string name;
  std::uint64_t seed = 1;
};

inline const std::vector<std::string>& check_types() {
  static const std::vector<std::string> t{
      "magnetic-closed-forms", "leibniz",          "curvature-commutator", "metric-compatibility",
      "adjoint-pairing",       "covering",         "generator-identities", "structure-functions",
      "operator-rewriting",    "mapping-bound",    "perturbed-norm",       "multiplication",
      "norm-constant",         "conformal-ratio",  "weighted-duality",     "divergence-duality",
      "convergence"};
  return t;
}

/// Fills defaults, applies command-line overrides and validates the schema.
inline Scenario normalize_scenario(const json& in, const RunOptions& opt = {}) {
  using namespace scenario_detail;
  require(in.is_object(), ErrorKind::config_error, "scenario must be a JSON object");
  for (auto it = in.begin(); it != in.end(); ++it) {
    static const std::vector<std::string> keys{"name", "chart", "metric", "bundle", "weight", "embedding",
                                               "checks", "seed", "output"};
    require(std::find(keys.begin(), keys.end(), it.key()) != keys.end(), ErrorKind::config_error,
            "unknown scenario field '" + it.key() + "'");
  }
  Scenario sc;
  json c = in;
  sc.name = get<std::string>(c, "name", "scenario");
  c["name"] = sc.name;
  json chart = c.value("chart", json::object());
  require(chart.is_object(), ErrorKind::config_error, "chart must be an object");
  if (!chart.contains("box")) {
    const int dim = get<int>(chart, "dim", 2);
    json box = json::array();
    for (int k = 0; k < dim; ++k) box.push_back({-1.0, 1.0});
    chart["box"] = box;
  }
  const json& box = chart["box"];
  require(box.is_array() && !box.empty(), ErrorKind::config_error, "chart.box must be a list of [lo, hi] pairs");
  const int dim = static_cast<int>(box.size());
  require(get<int>(chart, "dim", dim) == dim, ErrorKind::config_error, "chart.dim disagrees with chart.box");
  chart["dim"] = dim;
  for (const auto& b : box)
    require(b.is_array() && b.size() == 2 && b[0].is_number() && b[1].is_number() && b[0].get<double>() < b[1].get<double>(),
            ErrorKind::config_error, "chart.box entries must be [lo, hi] with lo < hi");
  if (opt.h) {
    require(*opt.h > 0, ErrorKind::config_error, "--h must be positive");
    json pts = json::array();
    for (const auto& b : box)
      pts.push_back(static_cast<int>(std::lround((b[1].get<double>() - b[0].get<double>()) / *opt.h)) + 1);
    chart["points"] = pts;
  }
  if (!chart.contains("points")) chart["points"] = 129;
  if (chart["points"].is_number()) {
    json pts = json::array();
    for (int k = 0; k < dim; ++k) pts.push_back(chart["points"].get<int>());
    chart["points"] = pts;
  }
  require(chart["points"].is_array() && static_cast<int>(chart["points"].size()) == dim, ErrorKind::config_error,
          "chart.points must be a number or one count per axis");
  if (opt.fd_order) chart["fd_order"] = *opt.fd_order;
  chart["fd_order"] = get<int>(chart, "fd_order", 4);
  require(chart["fd_order"] == 2 || chart["fd_order"] == 4, ErrorKind::config_error, "fd_order must be 2 or 4");
  chart["margin"] = get<int>(chart, "margin", 12);
  chart["support_tol"] = get<double>(chart, "support_tol", 1e-8);
  c["chart"] = chart;
  if (!c.contains("metric")) c["metric"] = "euclidean";
  if (!c.contains("bundle")) c["bundle"] = "trivial";
  if (opt.seed) c["seed"] = *opt.seed;
  sc.seed = get<std::uint64_t>(c, "seed", 1);
  c["seed"] = sc.seed;
  if (!c.contains("checks")) c["checks"] = json::array();
  require(c["checks"].is_array(), ErrorKind::config_error, "checks must be an array");
  std::vector<std::string> ids;
  for (auto& chk : c["checks"]) {
    require(chk.is_object(), ErrorKind::config_error, "each check must be an object");
    require(chk.contains("id") && chk["id"].is_string(), ErrorKind::config_error, "each check needs a string id");
    require(chk.contains("type") && chk["type"].is_string(), ErrorKind::config_error, "each check needs a string type");
    const std::string id = chk["id"], type = chk["type"];
    require(std::find(ids.begin(), ids.end(), id) == ids.end(), ErrorKind::config_error, "duplicate check id '" + id + "'");
    ids.push_back(id);
    const auto& types = check_types();
    require(std::find(types.begin(), types.end(), type) != types.end(), ErrorKind::resolution_error,
            "unknown check type '" + type + "'");
    require(chk.contains("tolerance") && chk["tolerance"].is_number() && chk["tolerance"].get<double>() > 0,
            ErrorKind::config_error, "check '" + id + "' needs a positive tolerance");
  }
  sc.config = c;
  return sc;
}

/// Geometry resolved for one check (check-level overrides of points, metric, bundle, weight, embedding).
struct CheckContext {
  ChartGrid grid;
  MetricField metric;
  BundleSpec bundle;
  std::optional<WeightPair> weight;
  std::optional<EmbeddingSpec> embedding;
  json resolved;  // the configuration actually used, for the digest
};

namespace scenario_detail {

inline EmbeddingSpec resolve_embedding(const json& e, int n) {
  if (e.is_string()) {
    const std::string s = e;
    if (s == "identity") return EmbeddingSpec::identity(n);
    if (s == "sphere-ambient") {
      require(n == 2, ErrorKind::chart_mismatch, "sphere-ambient embedding needs a 2-dimensional chart");
      return EmbeddingSpec::sphere_ambient();
    }
    fail(ErrorKind::resolution_error, "unknown embedding '" + s + "'");
  }
  require(e.is_object(), ErrorKind::config_error, "embedding must be a name or an object");
  if (e.contains("random")) {
    const json& r = e["random"];
    return EmbeddingSpec::random(n, get<int>(r, "N", n + 2), get<std::uint64_t>(r, "seed", 1), get<double>(r, "wobble", 0.2));
  }
  if (e.contains("graph")) {
    require(e["graph"].is_string(), ErrorKind::config_error, "embedding.graph must be an expression");
    return EmbeddingSpec::graph(n, scalar_expr(e["graph"], n));
  }
  fail(ErrorKind::resolution_error, "unknown embedding specification");
}

inline MetricField resolve_metric(const json& m, int n, const std::optional<EmbeddingSpec>& emb) {
  if (m.is_string()) {
    const std::string s = m;
    if (s == "euclidean") return MetricField::euclidean(n);
    if (s == "sphere-stereographic") {
      require(n == 2, ErrorKind::chart_mismatch, "sphere-stereographic metric needs a 2-dimensional chart");
      return MetricField::sphere_stereographic();
    }
    if (s == "embedding") {
      if (!emb) fail(ErrorKind::resolution_error, "metric 'embedding' needs an embedding");
      return metric_from_embedding(*emb);
    }
    fail(ErrorKind::resolution_error, "unknown metric '" + s + "'");
  }
  require(m.is_object(), ErrorKind::config_error, "metric must be a name or an object");
  if (m.contains("conformal")) return MetricField::conformal_flat(n, scalar_expr(m["conformal"], n));
  if (m.contains("entries")) {
    MetricField f = MetricField::from_expressions(matrix(m["entries"], "metric.entries"));
    require(f.n == n, ErrorKind::chart_mismatch, "metric dimension differs from the chart");
    return f;
  }
  fail(ErrorKind::resolution_error, "unknown metric specification");
}

inline BundleSpec resolve_bundle(const json& b, int n) {
  if (b.is_string()) {
    const std::string s = b;
    if (s == "trivial") return BundleSpec::trivial(n, 1);
    if (s == "magnetic-example") {
      require(n == 2, ErrorKind::chart_mismatch, "the magnetic example lives on a 2-dimensional chart");
      return BundleSpec::magnetic_example();
    }
    fail(ErrorKind::resolution_error, "unknown bundle '" + s + "'");
  }
  require(b.is_object(), ErrorKind::config_error, "bundle must be a name or an object");
  if (b.contains("trivial")) return BundleSpec::trivial(n, get<int>(b, "trivial", 1));
  if (b.contains("potentials")) {
    std::vector<std::vector<std::vector<std::string>>> pots;
    for (const auto& p : b["potentials"]) pots.push_back(matrix(p, "bundle.potentials"));
    std::vector<std::vector<std::string>> h;
    if (b.contains("fiber_metric")) h = matrix(b["fiber_metric"], "bundle.fiber_metric");
    return BundleSpec::from_expressions(n, pots, h);
  }
  fail(ErrorKind::resolution_error, "unknown bundle specification");
}

inline WeightPair resolve_weight(const json& w, int n) {
  require(w.is_object() && w.contains("rho"), ErrorKind::config_error, "weight needs a 'rho' expression");
  WeightPair wp;
  wp.rho = scalar_expr(get<std::string>(w, "rho", "1"), n);
  wp.f0 = scalar_expr(get<std::string>(w, "f0", "1"), n);
  wp.admissible = get<bool>(w, "admissible", true);
  return wp;
}

}  // namespace scenario_detail

inline CheckContext resolve_context(const Scenario& sc, const json& chk) {
  using namespace scenario_detail;
  const json& c = sc.config;
  json chart = c["chart"];
  const int n = chart["dim"];
  if (chk.contains("points")) {
    json pts = chk["points"];
    if (pts.is_number()) {
      json a = json::array();
      for (int k = 0; k < n; ++k) a.push_back(pts.get<int>());
      pts = a;
    }
    require(pts.is_array() && static_cast<int>(pts.size()) == n, ErrorKind::config_error, "points override has the wrong length");
    chart["points"] = pts;
  }
  if (chk.contains("margin")) chart["margin"] = chk["margin"];
  CheckContext ctx;
  std::vector<double> lo, hi;
  std::vector<int> pts;
  for (int k = 0; k < n; ++k) {
    lo.push_back(chart["box"][k][0]);
    hi.push_back(chart["box"][k][1]);
    pts.push_back(chart["points"][k]);
  }
  ctx.grid = ChartGrid::box(lo, hi, pts, chart["margin"], chart["fd_order"]);
  ctx.grid.support_tol = chart["support_tol"];
  auto pick = [&](const char* key) -> std::optional<json> {
    if (chk.contains(key)) return chk[key];
    if (c.contains(key)) return c[key];
    return std::nullopt;
  };
  json resolved = {{"chart", chart}, {"seed", sc.seed}, {"check", chk}};
  if (auto e = pick("embedding")) {
    ctx.embedding = resolve_embedding(*e, n);
    resolved["embedding"] = *e;
  }
  json metric = *pick("metric");
  ctx.metric = resolve_metric(metric, n, ctx.embedding);
  resolved["metric"] = metric;
  json bundle = *pick("bundle");
  ctx.bundle = resolve_bundle(bundle, n);
  resolved["bundle"] = bundle;
  if (auto w = pick("weight")) {
    ctx.weight = resolve_weight(*w, n);
    resolved["weight"] = *w;
  }
  ctx.resolved = resolved;
  return ctx;
}

namespace scenario_detail {

struct Outcome {
  double measured = 0, bound = 0;
  bool pass = false;
  std::string s = "-", p = "-", note;
};

inline std::string exp_str(Exponent p) { return p.str(); }

inline BumpField::Params bump_params(const json& chk) {
  BumpField::Params bp;
  bp.terms = get<int>(chk, "bump_terms", bp.terms);
  bp.center_radius = get<double>(chk, "bump_center_radius", bp.center_radius);
  bp.width_lo = get<double>(chk, "bump_width_lo", bp.width_lo);
  bp.width_hi = get<double>(chk, "bump_width_hi", bp.width_hi);
  return bp;
}

inline const EmbeddingSpec& need_embedding(const CheckContext& ctx) {
  if (!ctx.embedding) fail(ErrorKind::resolution_error, "this check needs an embedding");
  return *ctx.embedding;
}

using CheckFn = std::function<Outcome(const CheckContext&, const json&, Rng&, double)>;

inline Outcome residual(double measured, double tol) {
  Outcome o;
  o.measured = measured;
  o.bound = tol;
  o.pass = std::isfinite(measured) && measured <= tol;
  return o;
}

inline NablaOpSpec random_nabla_op(const ChartGrid& G, const BundlePtr& E, int order, Rng& rng) {
  NablaOpSpec P = NablaOpSpec::empty(E, E, 0, 0, order, G);
  for (int j = 0; j <= order; ++j) P.coef[j] = checks::random_hom(G, j, E->d, 0, E->d, rng);
  return P;
}

inline Outcome run_typed(const std::string& type, const CheckContext& ctx, const json& chk, Rng& rng, double tol);

inline const std::map<std::string, CheckFn>& registry() {
  static const std::map<std::string, CheckFn> reg = {
      {"magnetic-closed-forms",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         require(ctx.bundle.name == "magnetic-example", ErrorKind::config_error,
                 "magnetic-closed-forms needs the magnetic-example bundle");
         require(ctx.metric.flat, ErrorKind::config_error, "magnetic-closed-forms needs the euclidean metric");
         Chart chart = make_chart(ctx.grid, ctx.metric);
         auto r = checks::magnetic_closed_forms(chart, get<int>(chk, "trials", 20), rng, bump_params(chk));
         Outcome o = residual(r.fd_route, tol);
         o.s = "2";
         o.note = "exact-partials error " + fmt_double(r.analytic);
         return o;
       }},
      {"leibniz",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         Chart chart = make_chart(ctx.grid, ctx.metric);
         auto E = std::make_shared<Bundle>(make_bundle(ctx.grid, ctx.bundle));
         Outcome o = residual(checks::leibniz_residual(chart, E, get<int>(chk, "trials", 20), rng, bump_params(chk),
                                                       get<double>(chk, "coefficient_amplitude", 0.2),
                                                       get<double>(chk, "coefficient_frequency", 0.5)),
                              tol);
         o.s = "1";
         return o;
       }},
      {"curvature-commutator",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         Chart chart = make_chart(ctx.grid, ctx.metric);
         auto E = std::make_shared<Bundle>(make_bundle(ctx.grid, ctx.bundle));
         Outcome o = residual(checks::curvature_residual(chart, E, get<int>(chk, "trials", 20), rng, bump_params(chk)), tol);
         o.s = "2";
         return o;
       }},
      {"metric-compatibility",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         return residual(check_metric_compatibility(ctx.bundle, ctx.grid, get<int>(chk, "trials", 4), rng.next()), tol);
       }},
      {"adjoint-pairing",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         Chart chart = make_chart(ctx.grid, ctx.metric);
         auto E = std::make_shared<Bundle>(make_bundle(ctx.grid, ctx.bundle));
         const int n = ctx.grid.n;
         VecFn X;
         if (chk.contains("field")) {
           auto ex = strings(chk["field"], "field");
           require(static_cast<int>(ex.size()) == n, ErrorKind::config_error, "field needs one expression per axis");
           std::vector<Expr> e;
           for (const auto& s : ex) e.push_back(Expr::parse(s, n));
           X = [e](const double* x, double* out) {
             for (std::size_t a = 0; a < e.size(); ++a) out[a] = e[a](x).real();
           };
         } else {
           X = checks::random_vector_field(n, rng, get<double>(chk, "field_frequency", 1.0));
         }
         Outcome o = residual(checks::adjoint_residual(chart, E, X, get<int>(chk, "trials", 50), rng, bump_params(chk)), tol);
         o.s = "1";
         o.p = "2";
         return o;
       }},
      {"covering",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         Chart chart = make_chart(ctx.grid, ctx.metric);
         auto E = std::make_shared<Bundle>(make_bundle(ctx.grid, ctx.bundle));
         const int count = get<int>(chk, "coverings", 10), s = get<int>(chk, "s", 1), cuts = get<int>(chk, "cuts", 2);
         std::vector<int> mult = get<std::vector<int>>(chk, "multiplicities", {1, 2, 3, 4});
         require(!mult.empty(), ErrorKind::config_error, "multiplicities must not be empty");
         std::vector<Exponent> ps;
         std::string pstr;
         for (const auto& v : chk.value("p", json::array({1, 2, "inf"}))) {
           ps.push_back(exponent(v));
           pstr += (pstr.empty() ? "" : "|") + exp_str(ps.back());
         }
         double worst = 0;
         for (int t = 0; t < count; ++t) {
           const int N = mult[t % mult.size()];
           auto cover = checks::layered_covering(ctx.grid, N, cuts, rng);
           TensorSection u = checks::centred_section(ctx.grid, 0, E->d, rng, bump_params(chk));
           for (Exponent p : ps) {
             auto r = checks::covering_check(chart, E, cover, u, s, p);
             if (r.multiplicity != N) worst = std::max(worst, 1.0);
             worst = std::max({worst, -r.lower_slack, -r.upper_slack});
             if (p.inf) worst = std::max(worst, std::abs(r.lower_slack));
           }
         }
         Outcome o = residual(worst, tol);
         o.s = std::to_string(s);
         o.p = pstr;
         return o;
       }},
      {"generator-identities",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         Chart chart = make_chart(ctx.grid, ctx.metric);
         auto E = std::make_shared<Bundle>(make_bundle(ctx.grid, ctx.bundle));
         auto gs = build_generators(need_embedding(ctx), chart);
         auto r = checks::generator_identities(chart, E, gs, get<int>(chk, "trials", 5), rng, bump_params(chk));
         Outcome o = residual(r.worst(), tol);
         o.note = "psi-phi " + fmt_double(r.psi_phi) + " reconstruction " + fmt_double(r.reconstruction) + " nabla " +
                  fmt_double(r.nabla_two_route) + " divergence " + fmt_double(r.divergence_two_route);
         return o;
       }},
      {"structure-functions",
       [](const CheckContext& ctx, const json&, Rng&, double tol) {
         Chart chart = make_chart(ctx.grid, ctx.metric);
         auto gs = build_generators(need_embedding(ctx), chart);
         auto sf = structure_functions(chart, gs);
         Outcome o = residual(std::max(sf.expansion_residual, sf.torsion_residual), tol);
         o.note = "expansion " + fmt_double(sf.expansion_residual) + " torsion " + fmt_double(sf.torsion_residual);
         return o;
       }},
      {"operator-rewriting",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         Chart chart = make_chart(ctx.grid, ctx.metric);
         auto E = std::make_shared<Bundle>(make_bundle(ctx.grid, ctx.bundle));
         auto gs = build_generators(need_embedding(ctx), chart);
         auto sf = structure_functions(chart, gs);
         auto R = curvature(chart, *E);
         const int order = get<int>(chk, "order", 3), specs = get<int>(chk, "specs", 5);
         double worst = 0;
         bool sorted = true;
         for (int t = 0; t < specs; ++t) {
           const int o = 1 + t % order;
           auto r = checks::rewriting_closure(chart, E, gs, sf, R, o, 1, get<int>(chk, "sections", 2), rng, bump_params(chk));
           worst = std::max(worst, r.residual);
           sorted = sorted && r.sorted;
         }
         Outcome o = residual(worst, tol);
         o.pass = o.pass && sorted;
         o.s = std::to_string(order);
         if (!sorted) o.note = "unsorted generator tuple";
         return o;
       }},
      {"mapping-bound",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         Chart chart = make_chart(ctx.grid, ctx.metric);
         auto E = std::make_shared<Bundle>(make_bundle(ctx.grid, ctx.bundle));
         const int order = get<int>(chk, "order", 2), k = get<int>(chk, "k", 1);
         const Exponent p = exponent(chk, "p", 2.0);
         NablaOpSpec P = random_nabla_op(ctx.grid, E, order, rng);
         std::vector<TensorSection> samples;
         for (int t = 0; t < get<int>(chk, "trials", 10); ++t)
           samples.push_back(checks::centred_section(ctx.grid, 0, E->d, rng, bump_params(chk)));
         auto r = mapping_bound_check(chart, P, k, p, samples);
         Outcome o;
         o.measured = r.max_ratio / r.bound;
         o.bound = 1.0;
         o.pass = o.measured <= 1.0 + tol;
         o.s = std::to_string(k);
         o.p = exp_str(p);
         o.note = "ratio " + fmt_double(r.max_ratio) + " constant " + fmt_double(r.bound);
         return o;
       }},
      {"perturbed-norm",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         Chart chart = make_chart(ctx.grid, ctx.metric);
         const int l = get<int>(chk, "l", 2);
         const Exponent p = exponent(chk, "p", 2.0);
         auto r = checks::equivalence_trials(chart, ctx.bundle, l, p, get<int>(chk, "trials", 20), rng, bump_params(chk));
         Outcome o;
         o.measured = r.worst_ratio;
         o.bound = 1.0;
         o.pass = r.violations == 0 && r.worst_ratio <= 1.0 + tol;
         o.s = std::to_string(l);
         o.p = exp_str(p);
         o.note = std::to_string(r.violations) + " violations";
         return o;
       }},
      {"multiplication",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         Chart chart = make_chart(ctx.grid, ctx.metric);
         const int l = get<int>(chk, "l", 2);
         const Exponent q = exponent(chk, "q", 2.0);
         auto r = checks::multiplication_trials(chart, ctx.bundle, l, q, get<int>(chk, "trials", 20), rng, bump_params(chk));
         Outcome o;
         o.measured = r.worst_ratio;
         o.bound = 1.0;
         o.pass = r.violations == 0 && r.worst_ratio <= 1.0 + tol;
         o.s = std::to_string(l);
         o.p = exp_str(q);
         o.note = std::to_string(r.violations) + " violations";
         return o;
       }},
      {"norm-constant",
       [](const CheckContext&, const json& chk, Rng&, double tol) {
         const std::string kind = get<std::string>(chk, "kind", "multiplication");
         const int l = get<int>(chk, "l", 1);
         require(chk.contains("expected") && chk["expected"].is_number(), ErrorKind::config_error,
                 "norm-constant needs an expected value");
         const double expected = chk["expected"];
         double c = 0;
         Outcome o;
         if (kind == "multiplication") {
           const Exponent p = chk.contains("p") ? exponent(chk["p"]) : Exponent::infinity();
           c = multiplication_constant(l, p, exponent(chk, "q", 2.0), exponent(chk, "r", 2.0));
           const Exponent r = exponent(chk, "r", 2.0);
           o.p = exp_str(r);
         } else if (kind == "equivalence") {
           const Exponent p = exponent(chk, "p", 2.0);
           c = equivalence_constant(l, p, get<double>(chk, "normA", 1.0));
           o.p = exp_str(p);
         } else {
           fail(ErrorKind::resolution_error, "unknown constant kind '" + kind + "'");
         }
         o.measured = std::abs(c - expected) / std::abs(expected);
         o.bound = tol;
         o.pass = o.measured <= tol;
         o.s = std::to_string(l);
         o.note = "constant " + fmt_double(c);
         return o;
       }},
      {"conformal-ratio",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         if (!ctx.weight) fail(ErrorKind::resolution_error, "conformal-ratio needs a weight");
         const int l = get<int>(chk, "l", 1);
         const Exponent p = exponent(chk, "p", 2.0);
         std::vector<int> pts{ctx.grid.count[0]};
         if (chk.contains("refinements")) pts = get<std::vector<int>>(chk, "refinements", pts);
         std::vector<double> mid(ctx.grid.n);
         for (int k = 0; k < ctx.grid.n; ++k) mid[k] = 0.5 * (ctx.grid.lo[k] + ctx.grid.hi[k]);
         BumpField::Params bp = bump_params(chk);
         if (!chk.contains("bump_center_radius")) bp.center_radius = 0.3;
         BumpField bf = BumpField::random(ctx.grid.n, ctx.bundle.d, rng, bp, mid);
         std::vector<double> dev;
         for (int P : pts) {
           std::vector<int> counts(ctx.grid.n, P);
           ChartGrid g = ChartGrid::box(ctx.grid.lo, ctx.grid.hi, counts, ctx.grid.margin, ctx.grid.fd_order);
           g.support_tol = ctx.grid.support_tol;
           Chart chart = make_chart(g, ctx.metric);
           auto r = conformal_weighted_check(chart, ctx.bundle, *ctx.weight, bf.sample(g, 0, ctx.bundle.d), l, p);
           dev.push_back(std::abs(r.two_route_ratio - 1.0));
         }
         bool monotone = true;
         for (std::size_t i = 1; i < dev.size(); ++i) monotone = monotone && dev[i] <= dev[i - 1] + 1e-13;
         Outcome o = residual(dev[0], tol);
         o.pass = o.pass && monotone;
         o.s = std::to_string(l);
         o.p = exp_str(p);
         std::string d;
         for (double v : dev) d += (d.empty() ? "" : " ") + fmt_double(v);
         o.note = "deviation by refinement " + d + (monotone ? "" : " (not monotone)");
         return o;
       }},
      {"weighted-duality",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         if (!ctx.weight) fail(ErrorKind::resolution_error, "weighted-duality needs a weight");
         Chart chart = make_chart(ctx.grid, ctx.metric);
         auto E = std::make_shared<Bundle>(make_bundle(ctx.grid, ctx.bundle));
         EmbeddingSpec emb = ctx.embedding ? *ctx.embedding : EmbeddingSpec::identity(ctx.grid.n);
         auto gs = build_generators(emb, chart);
         const int m = get<int>(chk, "m", 1);
         BumpField::Params bp = bump_params(chk);
         if (!chk.contains("bump_center_radius")) bp.center_radius = 0.3;
         double worst = 0, worst_op = 0;
         for (int t = 0; t < get<int>(chk, "trials", 3); ++t) {
           auto b = checks::random_bidiff(ctx.grid, E, m, rng);
           auto u = checks::centred_section(ctx.grid, 0, E->d, rng, bp), w = checks::centred_section(ctx.grid, 0, E->d, rng, bp);
           auto r = weighted_duality_check(chart, b, *ctx.weight, gs, u, w);
           worst = std::max(worst, r.residual);
           worst_op = std::max(worst_op, r.operator_residual);
         }
         Outcome o = residual(worst, tol);
         o.s = std::to_string(m);
         o.p = "2";
         o.note = "operator-route residual " + fmt_double(worst_op);
         return o;
       }},
      {"divergence-duality",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         Chart chart = make_chart(ctx.grid, ctx.metric);
         auto E = std::make_shared<Bundle>(make_bundle(ctx.grid, ctx.bundle));
         EmbeddingSpec emb = ctx.embedding ? *ctx.embedding : EmbeddingSpec::identity(ctx.grid.n);
         auto gs = build_generators(emb, chart);
         const int m = get<int>(chk, "m", 1);
         auto r = checks::divergence_form_duality(chart, E, gs, m, get<int>(chk, "forms", 3), get<int>(chk, "pairs", 3), rng,
                                                  bump_params(chk));
         Outcome o = residual(r.worst, tol);
         o.pass = o.pass && r.order <= 2 * m;
         o.s = std::to_string(m);
         o.p = "2";
         o.note = "operator order " + std::to_string(r.order);
         return o;
       }},
      {"convergence",
       [](const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
         require(chk.contains("of") && chk["of"].is_object() && chk["of"].contains("type"), ErrorKind::config_error,
                 "convergence needs an inner check under 'of'");
         json inner = chk["of"];
         const std::string type = inner["type"];
         require(type != "convergence", ErrorKind::config_error, "convergence checks do not nest");
         std::vector<int> pts = get<std::vector<int>>(chk, "refinements", {});
         require(pts.size() == 2, ErrorKind::config_error, "convergence needs two refinements");
         std::vector<double> res;
         const std::uint64_t stream = rng.next();
         for (int P : pts) {
           CheckContext c2 = ctx;
           std::vector<int> counts(ctx.grid.n, P);
           c2.grid = ChartGrid::box(ctx.grid.lo, ctx.grid.hi, counts, ctx.grid.margin, ctx.grid.fd_order);
           c2.grid.support_tol = ctx.grid.support_tol;
           Rng r2(stream);
           res.push_back(run_typed(type, c2, inner, r2, 1.0).measured);
         }
         Outcome o;
         o.measured = res[0] / res[1];
         o.bound = tol;
         o.pass = std::isfinite(o.measured) && o.measured >= tol;
         o.note = type + " residuals " + fmt_double(res[0]) + " " + fmt_double(res[1]);
         return o;
       }},
  };
  return reg;
}

inline Outcome run_typed(const std::string& type, const CheckContext& ctx, const json& chk, Rng& rng, double tol) {
  auto it = registry().find(type);
  if (it == registry().end()) fail(ErrorKind::resolution_error, "unknown check type '" + type + "'");
  return it->second(ctx, chk, rng, tol);
}

}  // namespace scenario_detail

inline ReportRow run_check(const Scenario& sc, const json& chk, bool timing) {
  const auto t0 = std::chrono::steady_clock::now();
  ReportRow row;
  row.scenario = sc.name;
  row.check_id = chk["id"];
  row.type = chk["type"];
  row.tolerance = chk["tolerance"];
  CheckContext ctx = resolve_context(sc, chk);
  row.h = ctx.grid.max_h();
  row.fd_order = ctx.grid.fd_order;
  row.inputs_digest = hex64(fnv1a(ctx.resolved.dump()));
  Rng rng(sc.seed, fnv1a(row.check_id));
  try {
    auto o = scenario_detail::run_typed(row.type, ctx, chk, rng, row.tolerance);
    row.measured = o.measured;
    row.bound = o.bound;
    row.pass = o.pass;
    row.s = o.s;
    row.p = o.p;
    row.note = o.note;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::config_error || e.kind() == ErrorKind::resolution_error) {
      throw Error(e.kind(), "check '" + row.check_id + "': " + e.message());
    }
    row.measured = std::nan("");
    row.bound = row.tolerance;
    row.pass = false;
    row.note = e.what();
  }
  if (timing)
    row.runtime_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

/// Runs every check, concurrently up to opt.threads; rows keep the configured order.
inline Report run_scenario(const Scenario& sc, const RunOptions& opt = {}) {
  Report rep;
  rep.scenario = sc.name;
  const json& checks = sc.config["checks"];
  const std::size_t n = checks.size();
  rep.rows.resize(n);
  // resolve everything up front so configuration errors surface before any work
  for (const auto& chk : checks) resolve_context(sc, chk);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        rep.rows[i] = run_check(sc, checks[i], opt.timing);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(opt.threads, static_cast<int>(n)));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rep;
}

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> c{"scenario", "check_id", "type",  "s",        "p",        "measured",      "bound",
                                          "tolerance", "pass",    "h",     "fd_order", "inputs_digest", "runtime_ms"};
  return c;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::string report_csv(const Report& r) {
  std::string out;
  for (std::size_t i = 0; i < csv_columns().size(); ++i) out += (i ? "," : "") + csv_columns()[i];
  out += "\n";
  for (const auto& row : r.rows) {
    std::vector<std::string> f{row.scenario,
                               row.check_id,
                               row.type,
                               row.s,
                               row.p,
                               fmt_double(row.measured),
                               fmt_double(row.bound),
                               fmt_double(row.tolerance),
                               row.pass ? "true" : "false",
                               fmt_double(row.h),
                               std::to_string(row.fd_order),
                               row.inputs_digest,
                               row.runtime_ms ? fmt_double(*row.runtime_ms) : "-"};
    for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + csv_field(f[i]);
    out += "\n";
  }
  return out;
}

namespace scenario_detail {

// non-finite numbers are carried as strings so the document stays valid JSON
inline ojson number(double v) { return std::isfinite(v) ? ojson(v) : ojson(fmt_double(v)); }

inline double number(const ojson& v) {
  if (v.is_number()) return v.get<double>();
  const std::string s = v.get<std::string>();
  if (s == "nan") return std::nan("");
  if (s == "inf") return HUGE_VAL;
  if (s == "-inf") return -HUGE_VAL;
  fail(ErrorKind::config_error, "bad number '" + s + "' in report");
}

}  // namespace scenario_detail

inline ojson report_to_json(const Report& r) {
  using scenario_detail::number;
  ojson rows = ojson::array();
  for (const auto& row : r.rows) {
    ojson o;
    o["scenario"] = row.scenario;
    o["check_id"] = row.check_id;
    o["type"] = row.type;
    o["s"] = row.s;
    o["p"] = row.p;
    o["measured"] = number(row.measured);
    o["bound"] = number(row.bound);
    o["tolerance"] = number(row.tolerance);
    o["pass"] = row.pass;
    o["h"] = number(row.h);
    o["fd_order"] = row.fd_order;
    o["inputs_digest"] = row.inputs_digest;
    o["runtime_ms"] = row.runtime_ms ? number(*row.runtime_ms) : ojson(nullptr);
    o["note"] = row.note;
    rows.push_back(o);
  }
  ojson out;
  out["scenario"] = r.scenario;
  out["pass"] = r.pass();
  out["rows"] = rows;
  return out;
}

inline Report report_from_json(const ojson& j) {
  using scenario_detail::number;
  Report r;
  try {
    r.scenario = j.at("scenario").get<std::string>();
    for (const auto& o : j.at("rows")) {
      ReportRow row;
      row.scenario = o.at("scenario");
      row.check_id = o.at("check_id");
      row.type = o.at("type");
      row.s = o.at("s");
      row.p = o.at("p");
      row.measured = number(o.at("measured"));
      row.bound = number(o.at("bound"));
      row.tolerance = number(o.at("tolerance"));
      row.pass = o.at("pass");
      row.h = number(o.at("h"));
      row.fd_order = o.at("fd_order");
      row.inputs_digest = o.at("inputs_digest");
      if (!o.at("runtime_ms").is_null()) row.runtime_ms = number(o.at("runtime_ms"));
      row.note = o.value("note", "");
      r.rows.push_back(row);
    }
  } catch (const ojson::exception& e) {
    fail(ErrorKind::config_error, std::string("malformed report: ") + e.what());
  }
  return r;
}

inline std::string report_text(const Report& r, const std::string& format) {
  if (format == "csv") return report_csv(r);
  if (format == "json") return report_to_json(r).dump(2) + "\n";
  fail(ErrorKind::config_error, "format must be csv or json");
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io_error, "cannot open '" + path + "' for writing");
  f << text;
  if (!f) fail(ErrorKind::io_error, "failed writing '" + path + "'");
}

inline json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::io_error, "cannot open '" + path + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    fail(ErrorKind::config_error, "'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace nabla
