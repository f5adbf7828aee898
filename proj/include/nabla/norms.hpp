#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "nabla/bundle.hpp"
#include "nabla/connection.hpp"
#include "nabla/errors.hpp"
#include "nabla/geometry.hpp"
#include "nabla/section.hpp"

namespace nabla {

/// Lebesgue exponent in [1, inf].
struct Exponent {
  double value = 2.0;
  bool inf = false;

  Exponent() = default;
  Exponent(double p) : value(p), inf(std::isinf(p)) {  // NOLINT: implicit from a number is convenient
    require(inf || p >= 1.0, ErrorKind::config_error, "exponent must lie in [1, inf]");
  }
  static Exponent infinity() { return Exponent(std::numeric_limits<double>::infinity()); }
  double reciprocal() const { return inf ? 0.0 : 1.0 / value; }
  std::string str() const {
    if (inf) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
  }
};

namespace detail {

/// y = ((g^-1)^{(x) r} (x) H) u at one point.
inline void raise_slots(const Chart& chart, std::size_t pt, const cplx* u, int r, int d, const CMat* H, cplx* y) {
  const int n = chart.grid.n;
  const std::size_t S = ipow(n, r), C = S * d;
  std::copy(u, u + C, y);
  if (!chart.flat && r > 0) {
    const double* gi = chart.Ginv(pt);
    std::vector<cplx> tmp(C);
    std::size_t pw = S / n;
    for (int s = 0; s < r; ++s, pw /= n) {
      std::fill(tmp.begin(), tmp.end(), cplx(0));
      for (std::size_t slot = 0; slot < S; ++slot) {
        const int is = static_cast<int>((slot / pw) % n);
        const std::size_t base = slot - is * pw;
        for (int m = 0; m < n; ++m) {
          const double c = gi[is * n + m];
          if (c == 0) continue;
          for (int a = 0; a < d; ++a) tmp[slot * d + a] += c * y[(base + m * pw) * d + a];
        }
      }
      std::copy(tmp.begin(), tmp.end(), y);
    }
  }
  if (H) {
    std::vector<cplx> f(d);
    for (std::size_t slot = 0; slot < S; ++slot) {
      for (int a = 0; a < d; ++a) {
        cplx acc = 0;
        for (int b = 0; b < d; ++b) acc += (*H)(a, b) * y[slot * d + b];
        f[a] = acc;
      }
      std::copy(f.begin(), f.end(), y + slot * d);
    }
  }
}

}  // namespace detail

/// (u, w) at a grid point, conjugate-linear in w.
inline cplx pointwise_inner(const Chart& chart, const Bundle& bundle, std::size_t pt, const cplx* u, const cplx* w,
                            int r, int d) {
  const std::size_t C = ipow(chart.grid.n, r) * d;
  if (chart.flat && bundle.identity_metric) {
    cplx s = 0;
    for (std::size_t a = 0; a < C; ++a) s += u[a] * std::conj(w[a]);
    return s;
  }
  std::vector<cplx> y(C);
  CMat H;
  if (!bundle.identity_metric) H = bundle.metric(pt);
  detail::raise_slots(chart, pt, u, r, d, bundle.identity_metric ? nullptr : &H, y.data());
  cplx s = 0;
  for (std::size_t a = 0; a < C; ++a) s += y[a] * std::conj(w[a]);
  return s;
}

inline double pointwise_norm(const Chart& chart, const Bundle& bundle, std::size_t pt, const cplx* u, int r, int d) {
  return std::sqrt(std::max(0.0, pointwise_inner(chart, bundle, pt, u, u, r, d).real()));
}

/// Integral of (u, w) against the Riemannian volume (trapezoid rule).
inline cplx l2_pairing(const Chart& chart, const Bundle& bundle, const TensorSection& u, const TensorSection& w) {
  u.check_shape(w);
  cplx s = 0;
  for (std::size_t pt = 0; pt < u.grid.size(); ++pt)
    s += chart.grid.quad_weight(pt) * chart.sqrtdet[pt] * pointwise_inner(chart, bundle, pt, u.at(pt), w.at(pt), u.rank, u.d);
  return s;
}

/// Sum of w |u|^p (or max |u|) restricted to points where mask(pt) holds.
template <class Mask>
double lp_power_sum(const Chart& chart, const Bundle& bundle, const TensorSection& u, Exponent p, Mask mask) {
  require_same_chart(chart.grid, u.grid);
  double s = 0;
  for (std::size_t pt = 0; pt < u.grid.size(); ++pt) {
    if (!mask(pt)) continue;
    double v = pointwise_norm(chart, bundle, pt, u.at(pt), u.rank, u.d);
    if (p.inf) s = std::max(s, v);
    else if (v > 0) s += chart.grid.quad_weight(pt) * chart.sqrtdet[pt] * std::pow(v, p.value);
  }
  return s;
}

/// L^p norm with metric-induced fiber norms; p = inf is the grid maximum.
inline double lp_norm(const Chart& chart, const Bundle& bundle, const TensorSection& u, Exponent p) {
  double s = lp_power_sum(chart, bundle, u, p, [](std::size_t) { return true; });
  return p.inf ? s : std::pow(s, 1.0 / p.value);
}

/// l^p combination of the given norms (max for p = inf).
inline double lp_combine(const std::vector<double>& parts, Exponent p) {
  double s = 0;
  for (double v : parts) s = p.inf ? std::max(s, v) : s + std::pow(v, p.value);
  return p.inf ? s : std::pow(s, 1.0 / p.value);
}

inline double sobolev_norm(const Chart& chart, const Bundle& bundle, const TensorSection& u, int s, Exponent p) {
  require(s >= 0, ErrorKind::config_error, "Sobolev order must be nonnegative");
  std::vector<double> parts;
  for (const auto& t : derivative_tower(chart, bundle, u, s)) parts.push_back(lp_norm(chart, bundle, t, p));
  return lp_combine(parts, p);
}

namespace detail {
inline void scale_pointwise(TensorSection& u, const ScalarFn& f) {
  std::vector<double> x(u.grid.n);
  const std::size_t C = u.comps();
  for (std::size_t pt = 0; pt < u.grid.size(); ++pt) {
    u.grid.coords(pt, x.data());
    const double c = f(x.data());
    for (std::size_t a = 0; a < C; ++a) u.at(pt)[a] *= c;
  }
}
}  // namespace detail

/// l^p combination of ||rho^j nabla^j (f0^-1 u)||_{L^p}, j = 0..s.
inline double weighted_sobolev_norm(const Chart& chart, const Bundle& bundle, const TensorSection& u, int s, Exponent p,
                                    const WeightPair& w) {
  check_weight(chart, w);
  TensorSection v = u;
  auto f0 = w.f0;
  detail::scale_pointwise(v, [f0](const double* x) { return 1.0 / f0(x); });
  auto tower = derivative_tower(chart, bundle, v, s);
  std::vector<double> parts;
  for (int j = 0; j <= s; ++j) {
    auto rho = w.rho;
    detail::scale_pointwise(tower[j], [rho, j](const double* x) { return std::pow(rho(x), j); });
    parts.push_back(lp_norm(chart, bundle, tower[j], p));
  }
  return lp_combine(parts, p);
}

/// Closed axis-aligned box in chart coordinates.
struct CoverBox {
  std::vector<double> lo, hi;
  bool contains(const double* x) const {
    for (std::size_t k = 0; k < lo.size(); ++k)
      if (x[k] < lo[k] || x[k] > hi[k]) return false;
    return true;
  }
};

/// Largest number of boxes with a common point, by exhaustive search over intersecting subfamilies.
inline int covering_multiplicity(const std::vector<CoverBox>& sets) {
  if (sets.empty()) return 0;
  const std::size_t n = sets[0].lo.size();
  int best = 0;
  std::function<void(std::size_t, std::vector<double>&, std::vector<double>&, int)> dfs =
      [&](std::size_t start, std::vector<double>& lo, std::vector<double>& hi, int depth) {
        best = std::max(best, depth);
        for (std::size_t i = start; i < sets.size(); ++i) {
          std::vector<double> l2(n), h2(n);
          bool ok = true;
          for (std::size_t k = 0; k < n && ok; ++k) {
            l2[k] = std::max(lo[k], sets[i].lo[k]);
            h2[k] = std::min(hi[k], sets[i].hi[k]);
            ok = l2[k] <= h2[k];
          }
          if (ok) dfs(i + 1, l2, h2, depth + 1);
        }
      };
  std::vector<double> lo(n, -std::numeric_limits<double>::infinity()), hi(n, std::numeric_limits<double>::infinity());
  dfs(0, lo, hi, 0);
  return best;
}

struct CoveringNorm {
  double value = 0;
  double plain = 0;         // the ordinary W^{s,p} norm
  int multiplicity = 0;     // N(U) from box intersections
  int max_point_count = 0;  // most sets containing a single grid point
};

/// |||u|||_{U,s,p}: l^p sum over the sets of the restricted W^{s,p} norms (max for p = inf).
inline CoveringNorm covering_norm(const Chart& chart, const Bundle& bundle, const TensorSection& u,
                                  const std::vector<CoverBox>& covering, int s, Exponent p) {
  require(!covering.empty(), ErrorKind::empty_covering, "covering has no sets");
  const auto& G = chart.grid;
  for (const auto& b : covering)
    require(static_cast<int>(b.lo.size()) == G.n && static_cast<int>(b.hi.size()) == G.n, ErrorKind::shape_mismatch,
            "covering box dimension differs from the chart");
  CoveringNorm out;
  std::vector<std::vector<char>> member(covering.size(), std::vector<char>(G.size(), 0));
  std::vector<double> x(G.n);
  for (std::size_t pt = 0; pt < G.size(); ++pt) {
    G.coords(pt, x.data());
    int cnt = 0;
    for (std::size_t i = 0; i < covering.size(); ++i)
      if (covering[i].contains(x.data())) {
        member[i][pt] = 1;
        ++cnt;
      }
    if (cnt == 0) fail(ErrorKind::config_error, "covering leaves grid points uncovered");
    out.max_point_count = std::max(out.max_point_count, cnt);
  }
  out.multiplicity = covering_multiplicity(covering);
  auto tower = derivative_tower(chart, bundle, u, s);
  std::vector<double> whole;
  for (const auto& t : tower) whole.push_back(lp_norm(chart, bundle, t, p));
  out.plain = lp_combine(whole, p);
  double acc = 0;
  for (std::size_t i = 0; i < covering.size(); ++i) {
    for (const auto& t : tower) {
      double v = lp_power_sum(chart, bundle, t, p, [&](std::size_t pt) { return member[i][pt] != 0; });
      acc = p.inf ? std::max(acc, v) : acc + v;
    }
  }
  out.value = p.inf ? acc : std::pow(acc, 1.0 / p.value);
  return out;
}

/// Constant C_{l,p,q} of the product estimate, from C^r_l = C^r_{l-1} (1 + 2^r), C_0 = 1.
inline double multiplication_constant(int l, Exponent p, Exponent q, Exponent r) {
  require(l >= 0, ErrorKind::config_error, "order must be nonnegative");
  if (std::abs(p.reciprocal() + q.reciprocal() - r.reciprocal()) > 1e-12)
    fail(ErrorKind::exponent_mismatch, "1/p + 1/q must equal 1/r");
  if (r.inf) return std::pow(2.0, l);  // limit of (1 + 2^r)^{l/r}
  double c = 1.0;
  for (int i = 0; i < l; ++i) c = std::pow(std::pow(c, r.value) * (1.0 + std::pow(2.0, r.value)), 1.0 / r.value);
  return c;
}

/// Constant C_l of the perturbed-connection equivalence:
/// C_l^p = C_{l-1}^p 2^{p-1} [2 + C_{l-1,p}^p ||A||^p], C_0 = 1.
inline double equivalence_constant(int l, Exponent p, double normA) {
  require(l >= 0, ErrorKind::config_error, "order must be nonnegative");
  require(normA >= 0, ErrorKind::config_error, "norm of A must be nonnegative");
  if (p.inf) fail(ErrorKind::exponent_mismatch, "equivalence constant needs a finite exponent");
  const double P = p.value;
  double cp = 1.0;
  for (int i = 1; i <= l; ++i) {
    double m = multiplication_constant(i - 1, Exponent::infinity(), p, p);
    cp = cp * std::pow(2.0, P - 1) * (2.0 + std::pow(m, P) * std::pow(normA, P));
  }
  return std::pow(cp, 1.0 / P);
}

/// W^{l,inf} norm of a non-compact field over the points where its first l derivatives are valid.
inline double field_sup_norm(const Chart& chart, const Bundle& bundle, const TensorSection& a, int l) {
  auto tower = field_derivative_tower(chart, bundle, a, l);
  const int band = l * chart.grid.radius();
  double m = 0;
  for (const auto& t : tower)
    for (std::size_t pt = 0; pt < chart.grid.size(); ++pt) {
      if (chart.grid.layer(pt) < band) continue;
      m = std::max(m, pointwise_norm(chart, bundle, pt, t.at(pt), t.rank, t.d));
    }
  return m;
}

/// Potential field A as a section of T* (x) End(E): slot k holds A_k.
inline TensorSection potential_section(const ChartGrid& grid, const BundleSpec& spec) {
  const int n = spec.n, d = spec.d;
  return TensorSection::sample(grid, 1, d * d, [&spec, n, d](const double* x, cplx* out) {
    for (int k = 0; k < n; ++k) {
      CMat m = spec.potential(k, x);
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) out[k * d * d + a * d + b] = m(a, b);
    }
  });
}

/// Bundle with potentials A_k + B_k.
inline BundleSpec perturb_bundle(const BundleSpec& E, const BundleSpec& B) {
  require(E.n == B.n && E.d == B.d, ErrorKind::shape_mismatch, "perturbation has a different shape");
  BundleSpec r = E;
  r.flat = E.flat && B.flat;
  r.name = E.name + "+A";
  r.A.resize(E.n);
  for (int k = 0; k < E.n; ++k)
    r.A[k] = detail::store([E, B, k](const double* x) { return CMat(E.potential(k, x) + B.potential(k, x)); });
  return r;
}

struct EquivalenceReport {
  double norm = 0, norm_tilde = 0, ratio = 0, normA = 0, constant = 0;
  bool pass = false;
};

/// Compares W^{l,p} norms for nabla and nabla + B against the explicit constant C_l(||B||).
inline EquivalenceReport perturbed_norm_check(const Chart& chart, const BundleSpec& E, const BundleSpec& B,
                                              const TensorSection& u, int l, Exponent p) {
  const auto& G = chart.grid;
  BundleSpec Et = perturb_bundle(E, B);
  Bundle b = make_bundle(G, E), bt = make_bundle(G, Et);
  EquivalenceReport r;
  r.norm = sobolev_norm(chart, b, u, l, p);
  r.norm_tilde = sobolev_norm(chart, bt, u, l, p);
  r.ratio = r.norm_tilde / r.norm;
  TensorSection As = potential_section(G, B);
  if (l >= 1) {
    double n1 = field_sup_norm(chart, make_bundle(G, hom_potential(E, E)), As, l - 1);
    double n2 = field_sup_norm(chart, make_bundle(G, hom_potential(Et, Et)), As, l - 1);
    r.normA = std::max(n1, n2);
  }
  r.constant = equivalence_constant(l, p, r.normA);
  r.pass = r.ratio <= r.constant * (1 + 1e-12) && r.ratio >= 1.0 / r.constant * (1 - 1e-12);
  return r;
}

/// Pointwise product of a Hom(E,F)-valued field (fiber dF*dE, row-major) with u.
inline TensorSection apply_pointwise(const TensorSection& a, const TensorSection& u, int dF) {
  require(a.rank == 0, ErrorKind::shape_mismatch, "coefficient must be a rank-0 Hom field");
  require(a.d == dF * u.d, ErrorKind::shape_mismatch, "coefficient shape does not match the section");
  require_same_chart(a.grid, u.grid);
  TensorSection out = TensorSection::zeros(u.grid, u.rank, dF);
  const int dE = u.d;
  const std::size_t S = u.slots();
  for (std::size_t pt = 0; pt < u.grid.size(); ++pt)
    for (std::size_t s = 0; s < S; ++s)
      for (int f = 0; f < dF; ++f) {
        cplx acc = 0;
        for (int e = 0; e < dE; ++e) acc += a.at(pt)[f * dE + e] * u.at(pt)[s * dE + e];
        out.at(pt)[s * dF + f] = acc;
      }
  return out;
}

struct MultiplicationReport {
  double lhs = 0, a_norm = 0, u_norm = 0, constant = 0, bound = 0;
  bool pass = false;
};

/// ||a u||_{W^{l,q}} <= C_{l,inf,q} ||a||_{W^{l,inf}} ||u||_{W^{l,q}} for an End(E) field a.
inline MultiplicationReport multiplication_check(const Chart& chart, const BundleSpec& E, const TensorSection& a,
                                                 const TensorSection& u, int l, Exponent q) {
  Bundle b = make_bundle(chart.grid, E);
  Bundle hb = make_bundle(chart.grid, hom_potential(E, E));
  MultiplicationReport r;
  r.lhs = sobolev_norm(chart, b, apply_pointwise(a, u, E.d), l, q);
  r.a_norm = field_sup_norm(chart, hb, a, l);
  r.u_norm = sobolev_norm(chart, b, u, l, q);
  r.constant = multiplication_constant(l, Exponent::infinity(), q, q);
  r.bound = r.constant * r.a_norm * r.u_norm;
  r.pass = r.lhs <= r.bound * (1 + 1e-12);
  return r;
}

struct ConformalReport {
  double weighted = 0;    // rho^j nabla_g^j (f0^-1 u) measured in L^p(g)
  double g0_route = 0;    // the same quantities rebuilt from the g0 picture
  double classical = 0;   // W^{l,p}(g0) norm of rho^{n/p} f0^-1 u
  double two_route_ratio = 0;
  double raw_ratio = 0;
  double sup_log_derivative = 0;
};

/// The g0 = rho^-2 g picture of u: the section rho^{n/p} f0^-1 u and the sections rho^{n/p} v_j with
/// v_j = nabla_g^j (f0^-1 u) rebuilt from nabla_0 and Delta = Gamma_g - Gamma_0.
struct G0Picture {
  Chart chart0;
  TensorSection classical;
  std::vector<TensorSection> parts;
};

inline G0Picture g0_picture(const Chart& chart, const Bundle& b, const WeightPair& w, const TensorSection& u, int l,
                            Exponent p) {
  const auto& G = chart.grid;
  const int n = G.n;
  G0Picture out{make_chart(G, conformal_rescale(chart.metric, w.rho)), u, {}};
  const Chart& chart0 = out.chart0;
  const double np = n / p.value;
  auto rho = w.rho;
  auto f0 = w.f0;
  TensorSection& ut = out.classical;
  detail::scale_pointwise(ut, [rho, f0, np](const double* x) { return std::pow(rho(x), np) / f0(x); });

  // dphi and Gamma_g - Gamma_0 at every grid point
  const std::size_t N = G.size();
  std::vector<double> dphi(N * n), delta(N * n * n * n);
  {
    std::vector<double> x(n);
    auto phi = [&w](const double* y, double* o) { o[0] = std::log(w.rho(y)); };
    for (std::size_t pt = 0; pt < N; ++pt) {
      G.coords(pt, x.data());
      Eigen::VectorXd dp(n);
      for (int k = 0; k < n; ++k) diff_callable<double>(phi, x.data(), n, k, G.h[k], G.fd_order, 1, &dphi[pt * n + k]);
      for (int k = 0; k < n; ++k) dp[k] = dphi[pt * n + k];
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> g0(chart0.G(pt), n, n);
      auto dlt = christoffel_difference(dp, RMat(g0));
      std::copy(dlt.begin(), dlt.end(), delta.begin() + pt * n * n * n);
    }
  }
  // nabla_g T = nabla_0 T - Delta . T on the cotangent slots
  auto correct = [&](TensorSection& t, const TensorSection& src) {
    if (src.rank == 0) return;
    const std::size_t C = src.comps();
    for (std::size_t pt = 0; pt < N; ++pt)
      for (int k = 0; k < n; ++k)
        detail::add_christoffel(&delta[pt * n * n * n], n, k, src.at(pt), src.rank, src.d, 1.0, t.at(pt) + k * C);
  };
  check_support(ut, l);
  std::vector<TensorSection>& v = out.parts;
  v.push_back(ut);
  detail::scale_pointwise(v[0], [rho, np](const double* x) { return std::pow(rho(x), -np); });
  if (l >= 1) {
    TensorSection v1 = detail::nabla_once(chart0, b, ut);
    correct(v1, ut);
    const std::size_t C = ut.comps();
    for (std::size_t pt = 0; pt < N; ++pt)
      for (int k = 0; k < n; ++k)
        for (std::size_t a = 0; a < C; ++a) v1.at(pt)[k * C + a] -= np * dphi[pt * n + k] * ut.at(pt)[a];
    detail::scale_pointwise(v1, [rho, np](const double* x) { return std::pow(rho(x), -np); });
    v.push_back(std::move(v1));
  }
  for (int j = 2; j <= l; ++j) {
    TensorSection nxt = detail::nabla_once(chart0, b, v.back());
    correct(nxt, v.back());
    v.push_back(std::move(nxt));
  }
  for (auto& t : v) detail::scale_pointwise(t, [rho, np](const double* x) { return std::pow(rho(x), np); });
  return out;
}

/// Relates the weighted norm under g to the g0 = rho^-2 g picture of rho^{n/p} f0^-1 u.
inline ConformalReport conformal_weighted_check(const Chart& chart, const BundleSpec& E, const WeightPair& w,
                                                const TensorSection& u, int l, Exponent p) {
  require(w.admissible, ErrorKind::nonadmissible_weight, "weight is not flagged admissible");
  require(!p.inf, ErrorKind::exponent_mismatch, "conformal check needs a finite exponent");
  ConformalReport rep;
  rep.sup_log_derivative = check_weight(chart, w);
  Bundle b = make_bundle(chart.grid, E);
  rep.weighted = weighted_sobolev_norm(chart, b, u, l, p, w);
  G0Picture pic = g0_picture(chart, b, w, u, l, p);
  rep.classical = sobolev_norm(pic.chart0, b, pic.classical, l, p);
  std::vector<double> parts;
  for (const auto& t : pic.parts) parts.push_back(lp_norm(pic.chart0, b, t, p));
  rep.g0_route = lp_combine(parts, p);
  rep.two_route_ratio = rep.weighted / rep.g0_route;
  rep.raw_ratio = rep.weighted / rep.classical;
  return rep;
}

}  // namespace nabla
