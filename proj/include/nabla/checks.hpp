#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "nabla/bidiff.hpp"

// Measurement routines shared by the scenario runner and the test suites. Each returns residuals or
// ratios; callers compare against their own tolerances.

namespace nabla::checks {

/// Gaussian-bump section centred in the chart box.
inline TensorSection centred_section(const ChartGrid& g, int rank, int d, Rng& rng, const BumpField::Params& p = {}) {
  std::vector<double> mid(g.n);
  for (int k = 0; k < g.n; ++k) mid[k] = 0.5 * (g.lo[k] + g.hi[k]);
  return BumpField::random(g.n, static_cast<int>(ipow(g.n, rank) * d), rng, p, mid).sample(g, rank, d);
}

/// Smooth closed-form field c0 + c1 exp(i(w.x + phi)) entrywise, with |w| <= freq.
struct TrigField {
  int n = 0, comps = 0;
  std::vector<cplx> c0, c1;
  std::vector<double> w, phi;

  static TrigField random(int n, int comps, Rng& rng, double amp = 0.5, double freq = 2.0, bool real = false) {
    TrigField f;
    f.n = n;
    f.comps = comps;
    for (int a = 0; a < comps; ++a) {
      f.c0.push_back(real ? cplx(rng.normal(), 0) : rng.cnormal());
      f.c1.push_back(real ? cplx(amp * rng.normal(), 0) : amp * rng.cnormal());
      f.phi.push_back(rng.uniform(0, 6.283185307179586));
      for (int k = 0; k < n; ++k) f.w.push_back(rng.uniform(-freq, freq) / std::sqrt(static_cast<double>(n)));
    }
    return f;
  }

  cplx value(const double* x, int a) const {
    double ph = phi[a];
    for (int k = 0; k < n; ++k) ph += w[a * n + k] * x[k];
    return c0[a] + c1[a] * cplx(std::cos(ph), std::sin(ph));
  }
  double real_value(const double* x, int a) const {
    double ph = phi[a];
    for (int k = 0; k < n; ++k) ph += w[a * n + k] * x[k];
    return c0[a].real() + c1[a].real() * std::sin(ph);
  }
};

inline HomField random_hom(const ChartGrid& g, int src_rank, int dsrc, int dst_rank, int ddst, Rng& rng,
                           double amp = 0.5, double freq = 2.0) {
  HomField h = HomField::shape(g, src_rank, dsrc, dst_rank, ddst);
  TrigField f = TrigField::random(g.n, static_cast<int>(h.block()), rng, amp, freq);
  return HomField::sample(g, src_rank, dsrc, dst_rank, ddst, [f](const double* x, cplx* out) {
    for (int a = 0; a < f.comps; ++a) out[a] = f.value(x, a);
  });
}

inline VecFn random_vector_field(int n, Rng& rng, double freq = 2.0) {
  TrigField f = TrigField::random(n, n, rng, 0.5, freq, true);
  return [f](const double* x, double* out) {
    for (int a = 0; a < f.n; ++a) out[a] = f.real_value(x, a);
  };
}

inline double max_abs_diff(const TensorSection& a, const TensorSection& b) { return (a - b).max_abs(); }

inline double relative(const TensorSection& a, const TensorSection& ref) {
  const double s = ref.max_abs();
  return s > 0 ? max_abs_diff(a, ref) / s : max_abs_diff(a, ref);
}

struct MagneticReport {
  double fd_route = 0;  // closed forms with discrete partials
  double analytic = 0;  // closed forms with exact partials
};

/// Second covariant derivatives of the magnetic bundle against their closed forms.
inline MagneticReport magnetic_closed_forms(const Chart& chart, int trials, Rng& rng, const BumpField::Params& bp = {}) {
  require(chart.flat && chart.grid.n == 2, ErrorKind::chart_mismatch, "closed forms hold on the flat plane");
  const ChartGrid& G = chart.grid;
  Bundle bun = make_bundle(G, BundleSpec::magnetic_example());
  MagneticReport rep;
  auto part = [&](const TensorSection& u, int k) {
    TensorSection w = TensorSection::zeros(G, u.rank, u.d);
    diff_axis(G, u.v.data(), u.comps(), k, w.v.data(), Extension::zero);
    return w;
  };
  const cplx I(0, 1);
  std::vector<double> x(2);
  for (int t = 0; t < trials; ++t) {
    std::vector<double> mid{0.5 * (G.lo[0] + G.hi[0]), 0.5 * (G.lo[1] + G.hi[1])};
    BumpField bf = BumpField::random(2, 2, rng, bp, mid);
    TensorSection u = bf.sample(G, 0, 2);
    const TensorSection n12 = multiindex_derivative(chart, bun, u, {0, 1});
    const TensorSection n21 = multiindex_derivative(chart, bun, u, {1, 0});
    const TensorSection n22 = multiindex_derivative(chart, bun, u, {1, 1});
    TensorSection d1 = part(u, 0), d2 = part(u, 1), d12 = part(d2, 0), d21 = part(d1, 1), d22 = part(d2, 1);
    double ef[3] = {0, 0, 0}, ea[3] = {0, 0, 0}, sc[3] = {0, 0, 0};
    for (std::size_t pt = 0; pt < G.size(); ++pt) {
      G.coords(pt, x.data());
      const cplx e = std::exp(cplx(0, x[0] * x[0] * x[0])), ec = std::conj(e);
      const double q = 3 * x[0] * x[0];
      const cplx* uv = u.at(pt);
      // discrete partials
      cplx f12[2] = {d12.at(pt)[0] + I * q * e * uv[1] + e * d1.at(pt)[1],
                     d12.at(pt)[1] + I * q * ec * uv[0] - ec * d1.at(pt)[0]};
      cplx f21[2] = {d21.at(pt)[0] + e * d1.at(pt)[1], d21.at(pt)[1] - ec * d1.at(pt)[0]};
      cplx f22[2] = {d22.at(pt)[0] + 2.0 * e * d2.at(pt)[1] - uv[0], d22.at(pt)[1] - 2.0 * ec * d2.at(pt)[0] - uv[1]};
      // exact partials
      cplx v[2] = {bf.value(x.data(), 0), bf.value(x.data(), 1)};
      cplx a12[2] = {bf.d2(x.data(), 0, 0, 1) + I * q * e * v[1] + e * bf.d1(x.data(), 1, 0),
                     bf.d2(x.data(), 1, 0, 1) + I * q * ec * v[0] - ec * bf.d1(x.data(), 0, 0)};
      cplx a21[2] = {bf.d2(x.data(), 0, 1, 0) + e * bf.d1(x.data(), 1, 0),
                     bf.d2(x.data(), 1, 1, 0) - ec * bf.d1(x.data(), 0, 0)};
      cplx a22[2] = {bf.d2(x.data(), 0, 1, 1) + 2.0 * e * bf.d1(x.data(), 1, 1) - v[0],
                     bf.d2(x.data(), 1, 1, 1) - 2.0 * ec * bf.d1(x.data(), 0, 1) - v[1]};
      const TensorSection* got[3] = {&n12, &n21, &n22};
      cplx* fd[3] = {f12, f21, f22};
      cplx* an[3] = {a12, a21, a22};
      for (int c = 0; c < 3; ++c)
        for (int a = 0; a < 2; ++a) {
          ef[c] = std::max(ef[c], std::abs(got[c]->at(pt)[a] - fd[c][a]));
          ea[c] = std::max(ea[c], std::abs(got[c]->at(pt)[a] - an[c][a]));
          sc[c] = std::max(sc[c], std::abs(an[c][a]));
        }
    }
    for (int c = 0; c < 3; ++c) {
      rep.fd_route = std::max(rep.fd_route, ef[c] / sc[c]);
      rep.analytic = std::max(rep.analytic, ea[c] / sc[c]);
    }
  }
  return rep;
}

/// max over trials of |nabla(a u) - (nabla a) u - (1 (x) a) nabla u| / max |nabla(a u)|.
/// The discrete product rule is off by O(h^4 |da| |d^4 u|), so coefficients should vary slowly.
inline double leibniz_residual(const Chart& chart, const BundlePtr& E, int trials, Rng& rng,
                               const BumpField::Params& bp = {}, double amp = 0.2, double freq = 0.5) {
  const ChartGrid& G = chart.grid;
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    HomField a = random_hom(G, 0, E->d, 0, E->d, rng, amp, freq);
    TensorSection u = centred_section(G, 0, E->d, rng, bp);
    TensorSection lhs = covariant_derivative(chart, *E, apply_hom(a, u));
    TensorSection rhs = apply_hom(nabla_hom(chart, *E, *E, a), u) + apply_hom(hom_lift(a), covariant_derivative(chart, *E, u));
    worst = std::max(worst, relative(rhs, lhs));
  }
  return worst;
}

/// max over trials and k < l of |(nabla_(k,l) - nabla_(l,k)) u - R_kl u| / max |nabla_(k,l) u|.
inline double curvature_residual(const Chart& chart, const BundlePtr& E, int trials, Rng& rng,
                                 const BumpField::Params& bp = {}) {
  const ChartGrid& G = chart.grid;
  const int n = G.n, d = E->d;
  CurvatureField R = curvature(chart, *E);
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    TensorSection u = centred_section(G, 0, d, rng, bp);
    for (int k = 0; k < n; ++k)
      for (int l = k + 1; l < n; ++l) {
        TensorSection nkl = multiindex_derivative(chart, *E, u, {k, l});
        TensorSection nlk = multiindex_derivative(chart, *E, u, {l, k});
        TensorSection Ru = TensorSection::zeros(G, 0, d);
        for (std::size_t pt = 0; pt < G.size(); ++pt) {
          CMat r = R.at(pt, k, l);
          for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) Ru.at(pt)[a] += r(a, b) * u.at(pt)[b];
        }
        double s = nkl.max_abs();
        double e = (nkl - nlk - Ru).max_abs();
        worst = std::max(worst, s > 0 ? e / s : e);
      }
  }
  return worst;
}

/// max over pairs of |int (nabla_X xi, eta) + int (xi, (nabla_X + div X) eta)| / (||xi|| ||eta||).
inline double adjoint_residual(const Chart& chart, const BundlePtr& E, const VecFn& X, int trials, Rng& rng,
                               const BumpField::Params& bp = {}) {
  const ChartGrid& G = chart.grid;
  VectorField Xs = VectorField::sample(G, X);
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    TensorSection xi = centred_section(G, 0, E->d, rng, bp), eta = centred_section(G, 0, E->d, rng, bp);
    cplx lhs = l2_pairing(chart, *E, directional_derivative(chart, *E, xi, Xs), eta);
    cplx rhs = l2_pairing(chart, *E, xi, formal_adjoint_directional(chart, *E, X, eta));
    double s = lp_norm(chart, *E, xi, 2.0) * lp_norm(chart, *E, eta, 2.0);
    worst = std::max(worst, std::abs(lhs - rhs) / s);
  }
  return worst;
}

/// Covering whose sets come in `layers` families; sets within a family are disjoint on the grid and each
/// family covers every grid point, so the multiplicity equals `layers`.
inline std::vector<CoverBox> layered_covering(const ChartGrid& g, int layers, int cuts, Rng& rng) {
  std::vector<CoverBox> out;
  for (int L = 0; L < layers; ++L) {
    std::vector<std::vector<double>> lo(g.n), hi(g.n);
    for (int k = 0; k < g.n; ++k) {
      std::vector<int> idx;
      while (static_cast<int>(idx.size()) < cuts) {
        int i = rng.integer(1, g.count[k] - 3);
        if (std::find(idx.begin(), idx.end(), i) == idx.end()) idx.push_back(i);
      }
      std::sort(idx.begin(), idx.end());
      lo[k].push_back(g.lo[k] - 1.0);
      for (int i : idx) {
        const double xi = g.lo[k] + i * g.h[k];
        hi[k].push_back(xi + 0.25 * g.h[k]);
        lo[k].push_back(xi + 0.75 * g.h[k]);
      }
      hi[k].push_back(g.hi[k] + 1.0);
    }
    // tensor product of the per-axis slabs
    std::vector<std::size_t> pos(g.n, 0);
    while (true) {
      CoverBox b;
      for (int k = 0; k < g.n; ++k) {
        b.lo.push_back(lo[k][pos[k]]);
        b.hi.push_back(hi[k][pos[k]]);
      }
      out.push_back(b);
      int k = g.n - 1;
      while (k >= 0 && ++pos[k] == lo[k].size()) pos[k--] = 0;
      if (k < 0) break;
    }
  }
  return out;
}

struct CoveringReport {
  int multiplicity = 0;
  int max_point_count = 0;
  double lower_slack = 0;  // (|||u||| - ||u||) / ||u||
  double upper_slack = 0;  // (N^{1/p} ||u|| - |||u|||) / ||u||
};

inline CoveringReport covering_check(const Chart& chart, const BundlePtr& E, const std::vector<CoverBox>& cover,
                                     const TensorSection& u, int s, Exponent p) {
  CoveringNorm c = covering_norm(chart, *E, u, cover, s, p);
  CoveringReport r;
  r.multiplicity = c.multiplicity;
  r.max_point_count = c.max_point_count;
  const double up = p.inf ? 1.0 : std::pow(static_cast<double>(c.multiplicity), 1.0 / p.value);
  r.lower_slack = (c.value - c.plain) / c.plain;
  r.upper_slack = (up * c.plain - c.value) / c.plain;
  return r;
}

struct GeneratorReport {
  double psi_phi = 0;
  double reconstruction = 0;
  double nabla_two_route = 0;
  double divergence_two_route = 0;
  double worst() const { return std::max({psi_phi, reconstruction, nabla_two_route, divergence_two_route}); }
};

inline GeneratorReport generator_identities(const Chart& chart, const BundlePtr& E, const GeneratorSystem& gs,
                                            int trials, Rng& rng, const BumpField::Params& bp = {}) {
  GeneratorReport r;
  r.psi_phi = psi_phi_residual(gs);
  r.reconstruction = reconstruction_residual(gs, trials, rng.next());
  const ChartGrid& G = chart.grid;
  for (int t = 0; t < trials; ++t) {
    TensorSection u = centred_section(G, 0, E->d, rng, bp);
    r.nabla_two_route =
        std::max(r.nabla_two_route, relative(nabla_via_generators(chart, *E, gs, u), covariant_derivative(chart, *E, u)));
    VecFn X = random_vector_field(G.n, rng);
    auto d1 = divergence_via_generators(chart, gs, X);
    auto d0 = divergence(chart, X);
    double e = 0, s = 0;
    for (std::size_t pt = 0; pt < d0.size(); ++pt) {
      e = std::max(e, std::abs(d1[pt] - d0[pt]));
      s = std::max(s, std::abs(d0[pt]));
    }
    r.divergence_two_route = std::max(r.divergence_two_route, s > 0 ? e / s : e);
  }
  return r;
}

/// Random mixed operator on rank-0 sections of E with orders <= order, one term per order.
inline MixedOpSpec random_mixed(const ChartGrid& G, const BundlePtr& E, int order, Rng& rng) {
  MixedOpSpec M;
  M.E = E;
  M.F = E;
  M.dst_rank = 0;
  for (int r = 0; r <= order; ++r) {
    MixedTerm t;
    t.a = random_hom(G, 0, E->d, 0, E->d, rng, 0.5, 1.5);
    for (int s = 0; s < r; ++s) t.X.push_back({-1, VectorField::sample(G, random_vector_field(G.n, rng, 1.5))});
    M.terms.push_back(std::move(t));
  }
  return M;
}

struct RewritingReport {
  double residual = 0;  // relative application residual after the full round trip
  bool sorted = true;
  std::size_t terms = 0;
};

/// mixed -> nabla -> mixed in generators -> sorted generator tuples, compared by application.
inline RewritingReport rewriting_closure(const Chart& chart, const BundlePtr& E, const GeneratorSystem& gs,
                                         const StructureFunctions& sf, const CurvatureField& R, int order,
                                         int trials, int sections, Rng& rng, const BumpField::Params& bp = {}) {
  RewritingReport rep;
  const ChartGrid& G = chart.grid;
  for (int t = 0; t < trials; ++t) {
    MixedOpSpec M = random_mixed(G, E, order, rng);
    NablaOpSpec P = mixed_to_nabla(chart, M);
    MixedOpSpec Mg = nabla_to_mixed(chart, P, gs, sf);
    MixedOpSpec S = reorder_generators(chart, Mg, gs, sf, R);
    for (const auto& term : S.terms) rep.sorted = rep.sorted && labels_sorted(term.X);
    rep.terms = std::max(rep.terms, S.terms.size());
    for (int s = 0; s < sections; ++s) {
      TensorSection u = centred_section(G, 0, E->d, rng, bp);
      rep.residual = std::max(rep.residual, relative(apply_mixed_op(chart, S, u), apply_mixed_op(chart, M, u)));
    }
  }
  return rep;
}

/// Small smooth skew-Hermitian potential, for perturbations that keep the fiber metric parallel.
inline BundleSpec random_perturbation(int n, int d, Rng& rng, double amp = 0.5) {
  BundleSpec B = BundleSpec::trivial(n, d);
  B.flat = false;
  B.name = "perturbation";
  B.A.resize(n);
  for (int k = 0; k < n; ++k) {
    TrigField f = TrigField::random(n, d * d, rng, amp, 2.0);
    B.A[k] = [f, d, amp](const double* x, cplx* m) {
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) m[a * d + b] = amp * f.value(x, a * d + b);
      for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b) {
          cplx s = 0.5 * (m[a * d + b] - std::conj(m[b * d + a]));
          m[a * d + b] = s;
          m[b * d + a] = -std::conj(s);
        }
    };
  }
  return B;
}

struct ConstantsReport {
  double worst_ratio = 0;  // max of measured / bound (<= 1 when the constant holds)
  int violations = 0;
};

inline ConstantsReport equivalence_trials(const Chart& chart, const BundleSpec& E, int l, Exponent p, int trials,
                                          Rng& rng, const BumpField::Params& bp = {}) {
  ConstantsReport r;
  for (int t = 0; t < trials; ++t) {
    BundleSpec B = random_perturbation(E.n, E.d, rng, rng.uniform(0.1, 1.0));
    TensorSection u = centred_section(chart.grid, 0, E.d, rng, bp);
    EquivalenceReport e = perturbed_norm_check(chart, E, B, u, l, p);
    const double q = std::max(e.ratio, 1.0 / e.ratio) / e.constant;
    r.worst_ratio = std::max(r.worst_ratio, q);
    if (!e.pass) ++r.violations;
  }
  return r;
}

inline ConstantsReport multiplication_trials(const Chart& chart, const BundleSpec& E, int l, Exponent q, int trials,
                                             Rng& rng, const BumpField::Params& bp = {}) {
  ConstantsReport r;
  const int d = E.d;
  for (int t = 0; t < trials; ++t) {
    TrigField f = TrigField::random(chart.grid.n, d * d, rng, 0.5, rng.uniform(0.5, 4.0));
    TensorSection a = TensorSection::sample(chart.grid, 0, d * d, [f](const double* x, cplx* out) {
      for (int c = 0; c < f.comps; ++c) out[c] = f.value(x, c);
    });
    TensorSection u = centred_section(chart.grid, 0, d, rng, bp);
    MultiplicationReport m = multiplication_check(chart, E, a, u, l, q);
    r.worst_ratio = std::max(r.worst_ratio, m.lhs / m.bound);
    if (!m.pass) ++r.violations;
  }
  return r;
}

/// Random canonical coefficients a_ij for i, j <= m.
inline BidiffSpec random_bidiff(const ChartGrid& G, const BundlePtr& E, int m, Rng& rng) {
  BidiffSpec b = BidiffSpec::empty(E, E, m, G);
  for (int i = 0; i <= m; ++i)
    for (int j = 0; j <= m; ++j) b.a[i][j] = random_hom(G, i, E->d, j, E->d, rng);
  return b;
}

struct DivergenceFormReport {
  double worst = 0;  // max |<P u, w> - B(u, w)| / (||u||_{H^m} ||w||_{H^m})
  int order = 0;
};

inline DivergenceFormReport divergence_form_duality(const Chart& chart, const BundlePtr& E, const GeneratorSystem& gs,
                                                    int m, int forms, int pairs, Rng& rng,
                                                    const BumpField::Params& bp = {}) {
  DivergenceFormReport r;
  const ChartGrid& G = chart.grid;
  for (int f = 0; f < forms; ++f) {
    BidiffSpec b = random_bidiff(G, E, m, rng);
    NablaOpSpec P = assemble_divergence_form(chart, b, gs);
    r.order = std::max(r.order, P.order());
    for (int t = 0; t < pairs; ++t) {
      TensorSection u = centred_section(G, 0, E->d, rng, bp), w = centred_section(G, 0, E->d, rng, bp);
      DualityReport d = duality_check(chart, b, P, u, w);
      r.worst = std::max(r.worst, d.residual / d.scale);
    }
  }
  return r;
}

}  // namespace nabla::checks
