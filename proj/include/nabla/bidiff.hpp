#pragma once

#include <vector>

#include "nabla/operators.hpp"

namespace nabla {

/// b(u, w) = sum_{i,j <= m} (a_ij nabla^i u, nabla^j w), a_ij : T*^i (x) E -> T*^j (x) F.
struct BidiffSpec {
  BundlePtr E, F;
  int m = 0;
  std::vector<std::vector<HomField>> a;  // a[i][j]
  CoefficientClass cls = CoefficientClass::totally_bounded;

  static BidiffSpec empty(BundlePtr E, BundlePtr F, int m, const ChartGrid& g) {
    BidiffSpec b;
    b.E = E;
    b.F = F;
    b.m = m;
    b.a.resize(m + 1);
    for (int i = 0; i <= m; ++i)
      for (int j = 0; j <= m; ++j) b.a[i].push_back(HomField::shape(g, i, E->d, j, F->d));
    return b;
  }
};

/// Pointwise sum_ij (a_ij nabla^i u, nabla^j w), conjugate-linear in w.
inline std::vector<cplx> eval_bidiff(const Chart& chart, const BidiffSpec& b, const TensorSection& u,
                                     const TensorSection& w) {
  require(u.rank == 0 && u.d == b.E->d && w.rank == 0 && w.d == b.F->d, ErrorKind::shape_mismatch,
          "bidifferential operators act on rank-0 sections of E and F");
  auto tu = derivative_tower(chart, *b.E, u, b.m);
  auto tw = derivative_tower(chart, *b.F, w, b.m);
  std::vector<cplx> out(chart.grid.size(), cplx(0));
  for (int i = 0; i <= b.m; ++i)
    for (int j = 0; j <= b.m; ++j) {
      if (b.a[i][j].zero()) continue;
      TensorSection au = apply_hom(b.a[i][j], tu[i]);
      for (std::size_t pt = 0; pt < out.size(); ++pt)
        out[pt] += pointwise_inner(chart, *b.F, pt, au.at(pt), tw[j].at(pt), j, b.F->d);
    }
  return out;
}

/// Canonical coefficients of (Pu, Qw)_G: a_ij = q_j^dagger p_i.
inline BidiffSpec bidiff_from_ops(const Chart& chart, const NablaOpSpec& P, const NablaOpSpec& Q) {
  require(P.src_rank == 0 && Q.src_rank == 0, ErrorKind::shape_mismatch, "operators must act on rank-0 sections");
  require(P.dst_rank == Q.dst_rank && P.F->d == Q.F->d, ErrorKind::shape_mismatch, "operators need a common target");
  const ChartGrid& g = chart.grid;
  const int m = std::max(P.order(), Q.order());
  BidiffSpec b = BidiffSpec::empty(P.E, Q.E, m, g);
  b.cls = meet(P.cls, Q.cls);
  const int r = P.dst_rank;
  for (int i = 0; i <= m && i < static_cast<int>(P.coef.size()); ++i) {
    if (P.coef[i].zero()) continue;
    for (int j = 0; j <= m && j < static_cast<int>(Q.coef.size()); ++j) {
      if (Q.coef[j].zero()) continue;
      HomField& a = b.a[i][j];
      a = HomField::zeros(g, i, P.E->d, j, Q.E->d);
      for (std::size_t pt = 0; pt < g.size(); ++pt) {
        CMat Mt = tensor_metric(chart, *P.F, pt, r);
        CMat Ms = tensor_metric(chart, *Q.E, pt, j);
        a.set(pt, Ms.inverse() * Q.coef[j].mat(pt).adjoint() * Mt * P.coef[i].mat(pt));
      }
    }
  }
  return b;
}

/// Quadrature of eval_bidiff against the Riemannian volume.
inline cplx dirichlet_form(const Chart& chart, const BidiffSpec& b, const TensorSection& u, const TensorSection& w) {
  check_support(u, b.m);
  check_support(w, b.m);
  auto f = eval_bidiff(chart, b, u, w);
  cplx s = 0;
  for (std::size_t pt = 0; pt < f.size(); ++pt) s += chart.grid.quad_weight(pt) * chart.sqrtdet[pt] * f[pt];
  return s;
}

/// sum_ij sup |a_ij|, the constant in |B(u, w)| <= C ||u||_{H^m} ||w||_{H^m}.
inline double dirichlet_constant(const Chart& chart, const BidiffSpec& b) {
  double c = 0;
  for (int i = 0; i <= b.m; ++i)
    for (int j = 0; j <= b.m; ++j) c += hom_sup_norm(chart, *b.E, *b.F, b.a[i][j], 0);
  return c;
}

/// nabla* from rank r to rank r-1 on F: sum_i (-nabla_{Z_i} - div Z_i) o i_{xi_i^#}.
inline NablaOpSpec nabla_adjoint_op(const Chart& chart, BundlePtr F, const GeneratorSystem& gs, int r) {
  require(r >= 1, ErrorKind::shape_mismatch, "the adjoint of nabla lowers a positive rank");
  const ChartGrid& g = chart.grid;
  const int n = g.n, d = F->d;
  const std::size_t S = ipow(n, r - 1);
  NablaOpSpec total = NablaOpSpec::empty(F, F, r, r - 1, 1, g);
  for (int i = 0; i < gs.N; ++i) {
    // contraction of the leading slot with xi_i^#
    NablaOpSpec C = NablaOpSpec::empty(F, F, r, r - 1, 0, g);
    C.coef[0] = HomField::zeros(g, r, d, r - 1, d);
    // -nabla_{Z_i} - div Z_i on rank r-1
    NablaOpSpec D = NablaOpSpec::empty(F, F, r - 1, r - 1, 1, g);
    D.coef[0] = HomField::zeros(g, r - 1, d, r - 1, d);
    D.coef[1] = HomField::zeros(g, r, d, r - 1, d);
    const auto div = divergence(chart, gs.field_fn(i));
    const std::size_t R = S * d, Cc = n * S * d;
    for (std::size_t pt = 0; pt < g.size(); ++pt) {
      Eigen::Map<const RowMat> gi(chart.Ginv(pt), n, n);
      Eigen::Map<const Eigen::VectorXd> xi(gs.xip(pt, i), n);
      Eigen::VectorXd sharp = gi * xi;
      const double* Z = gs.Zp(pt, i);
      for (std::size_t row = 0; row < R; ++row) {
        for (int k = 0; k < n; ++k) {
          C.coef[0].at(pt)[row * Cc + k * R + row] = sharp[k];
          D.coef[1].at(pt)[row * Cc + k * R + row] = -Z[k];
        }
        D.coef[0].at(pt)[row * R + row] = -div[pt];
      }
    }
    total += compose(chart, D, C);
  }
  return total;
}

/// P_b = sum_ij (nabla^j)* a_ij nabla^i with (nabla^j)* = nabla*_(1) o ... o nabla*_(j).
inline NablaOpSpec assemble_divergence_form(const Chart& chart, const BidiffSpec& b, const GeneratorSystem& gs) {
  require_same_chart(chart.grid, gs.grid);
  const ChartGrid& g = chart.grid;
  NablaOpSpec P = NablaOpSpec::empty(b.E, b.F, 0, 0, 2 * b.m, g);
  P.cls = b.cls;
  std::vector<NablaOpSpec> adj;  // adj[j] = (nabla^j)*
  adj.push_back(identity_op(g, b.F, 0));
  for (int j = 1; j <= b.m; ++j) {
    NablaOpSpec T = nabla_adjoint_op(chart, b.F, gs, j);
    for (int r = j - 1; r >= 1; --r) T = compose(chart, nabla_adjoint_op(chart, b.F, gs, r), T);
    adj.push_back(std::move(T));
  }
  for (int i = 0; i <= b.m; ++i)
    for (int j = 0; j <= b.m; ++j) {
      if (b.a[i][j].zero()) continue;
      NablaOpSpec A = NablaOpSpec::empty(b.E, b.F, 0, j, i, g);
      A.coef[i] = b.a[i][j];
      NablaOpSpec term = j == 0 ? A : compose(chart, adj[j], A);
      P += term;
    }
  P.cls = b.cls;
  return P;
}

struct DualityReport {
  cplx operator_side = 0;  // <P_b u, w>
  cplx form_side = 0;      // B_b(u, w)
  double residual = 0;     // |difference|
  double scale = 0;        // ||u||_{H^m} ||w||_{H^m}
};

inline DualityReport duality_check(const Chart& chart, const BidiffSpec& b, const NablaOpSpec& P,
                                   const TensorSection& u, const TensorSection& w) {
  DualityReport r;
  r.operator_side = l2_pairing(chart, *b.F, apply_nabla_op(chart, P, u), w);
  r.form_side = dirichlet_form(chart, b, u, w);
  r.residual = std::abs(r.operator_side - r.form_side);
  r.scale = sobolev_norm(chart, *b.E, u, b.m, 2.0) * sobolev_norm(chart, *b.F, w, b.m, 2.0);
  return r;
}

struct WeightedDualityReport {
  cplx weighted = 0;        // sum_ij int (a_ij rho^i nabla^i u', rho^j nabla^j w')_g dvol_g
  cplx g0_route = 0;        // the same pairing rebuilt in the g0 picture
  cplx operator_route = 0;  // <P u', w'> for the bidifferential operator with weights rho^{i+j} a_ij
  double ratio = 0;         // |g0_route| / |weighted|
  double residual = 0;      // |g0_route - weighted| / |weighted|
  double operator_residual = 0;
};

/// Weighted Dirichlet pairing of u' = f0^-1 u and w' = f0^-1 w in both conformal pictures (p = 2).
inline WeightedDualityReport weighted_duality_check(const Chart& chart, const BidiffSpec& b, const WeightPair& wt,
                                                    const GeneratorSystem& gs, const TensorSection& u,
                                                    const TensorSection& w) {
  require(wt.admissible, ErrorKind::nonadmissible_weight, "weight is not flagged admissible");
  require(b.E->d == b.F->d && b.E.get() == b.F.get(), ErrorKind::shape_mismatch,
          "the weighted pairing needs a single bundle");
  check_weight(chart, wt);
  const ChartGrid& g = chart.grid;
  const int n = g.n;
  const Bundle& B = *b.E;
  auto rho = wt.rho;
  auto f0 = wt.f0;
  WeightedDualityReport rep;

  TensorSection up = u, wp = w;
  detail::scale_pointwise(up, [f0](const double* x) { return 1.0 / f0(x); });
  detail::scale_pointwise(wp, [f0](const double* x) { return 1.0 / f0(x); });

  BidiffSpec bw = b;
  std::vector<double> rv(g.size()), x(n);
  for (std::size_t pt = 0; pt < g.size(); ++pt) {
    g.coords(pt, x.data());
    rv[pt] = rho(x.data());
  }
  for (int i = 0; i <= b.m; ++i)
    for (int j = 0; j <= b.m; ++j) {
      HomField& a = bw.a[i][j];
      if (a.zero()) continue;
      for (std::size_t pt = 0; pt < g.size(); ++pt) {
        const double s = std::pow(rv[pt], i + j);
        for (std::size_t e = 0; e < a.block(); ++e) a.at(pt)[e] *= s;
      }
    }
  rep.weighted = dirichlet_form(chart, bw, up, wp);

  G0Picture pu = g0_picture(chart, B, wt, u, b.m, 2.0);
  G0Picture pw = g0_picture(chart, B, wt, w, b.m, 2.0);
  const Chart& c0 = pu.chart0;
  for (int i = 0; i <= b.m; ++i)
    for (int j = 0; j <= b.m; ++j) {
      if (b.a[i][j].zero()) continue;
      TensorSection au = apply_hom(b.a[i][j], pu.parts[i]);
      for (std::size_t pt = 0; pt < g.size(); ++pt)
        rep.g0_route += g.quad_weight(pt) * c0.sqrtdet[pt] * std::pow(rv[pt], i - j) *
                        pointwise_inner(c0, B, pt, au.at(pt), pw.parts[j].at(pt), j, B.d);
    }

  NablaOpSpec P = assemble_divergence_form(chart, bw, gs);
  rep.operator_route = l2_pairing(chart, B, apply_nabla_op(chart, P, up), wp);
  const double ref = std::abs(rep.weighted);
  rep.ratio = std::abs(rep.g0_route) / ref;
  rep.residual = std::abs(rep.g0_route - rep.weighted) / ref;
  rep.operator_residual = std::abs(rep.operator_route - rep.weighted) / ref;
  return rep;
}

}  // namespace nabla
