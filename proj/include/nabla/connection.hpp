#pragma once

#include <functional>
#include <vector>

#include "nabla/bundle.hpp"
#include "nabla/errors.hpp"
#include "nabla/geometry.hpp"
#include "nabla/grid.hpp"
#include "nabla/section.hpp"

namespace nabla {

/// Real vector field sampled on a grid, optionally remembering its closed form.
struct VectorField {
  ChartGrid grid;
  std::vector<double> v;  // [pt][n]
  VecFn fn;

  const double* at(std::size_t pt) const { return &v[pt * grid.n]; }

  static VectorField sample(const ChartGrid& g, VecFn f) {
    VectorField X;
    X.grid = g;
    X.fn = f;
    X.v.resize(g.size() * g.n);
    std::vector<double> x(g.n);
    for (std::size_t pt = 0; pt < g.size(); ++pt) {
      g.coords(pt, x.data());
      f(x.data(), &X.v[pt * g.n]);
    }
    return X;
  }

  static VectorField coordinate(const ChartGrid& g, int k) {
    const int n = g.n;
    return sample(g, [n, k](const double*, double* out) {
      for (int a = 0; a < n; ++a) out[a] = (a == k) ? 1.0 : 0.0;
    });
  }
};

namespace detail {

inline void check_pair(const Chart& chart, const Bundle& bundle, const TensorSection& u) {
  require_same_chart(chart.grid, u.grid);
  require(bundle.n == chart.grid.n, ErrorKind::chart_mismatch, "bundle sampled over a different chart");
  require(u.d == bundle.d, ErrorKind::shape_mismatch, "section fiber dimension differs from the bundle");
}

/// Partials of every component along every axis with zero extension: out[k] has u's layout.
inline std::vector<std::vector<cplx>> partials(const TensorSection& u, Extension ext = Extension::zero) {
  std::vector<std::vector<cplx>> D(u.grid.n, std::vector<cplx>(u.v.size()));
  for (int k = 0; k < u.grid.n; ++k) diff_axis(u.grid, u.v.data(), u.comps(), k, D[k].data(), ext);
  return D;
}

/// out += A u  at one point for a d x d row-major A over all slots.
inline void add_potential(const cplx* A, const cplx* u, std::size_t slots, int d, cplx scale, cplx* out) {
  for (std::size_t s = 0; s < slots; ++s)
    for (int a = 0; a < d; ++a) {
      cplx acc = 0;
      for (int b = 0; b < d; ++b) acc += A[a * d + b] * u[s * d + b];
      out[s * d + a] += scale * acc;
    }
}

/// out -= sum_s Gamma^m_{k i_s} u_{i with i_s -> m}, scaled, for every slot multi-index.
inline void add_christoffel(const double* gam, int n, int k, const cplx* u, int rank, int d, double scale, cplx* out) {
  if (rank == 0) return;
  const std::size_t slots = ipow(n, rank);
  for (std::size_t slot = 0; slot < slots; ++slot) {
    std::size_t pw = slots / n;
    for (int s = 0; s < rank; ++s, pw /= n) {
      const int is = static_cast<int>((slot / pw) % n);
      const std::size_t base = slot - static_cast<std::size_t>(is) * pw;
      for (int m = 0; m < n; ++m) {
        const double c = gam[(m * n + k) * n + is];
        if (c == 0) continue;
        const cplx* src = u + (base + m * pw) * d;
        for (int a = 0; a < d; ++a) out[slot * d + a] -= scale * c * src[a];
      }
    }
  }
}

inline TensorSection nabla_once(const Chart& chart, const Bundle& bundle, const TensorSection& u,
                                Extension ext = Extension::zero) {
  const int n = chart.grid.n, d = u.d, r = u.rank;
  const auto D = partials(u, ext);
  TensorSection out = TensorSection::zeros(u.grid, r + 1, d);
  const std::size_t S = u.slots(), C = u.comps();
  const int band = ext == Extension::interior ? u.grid.radius() : 0;
  for (std::size_t pt = 0; pt < u.grid.size(); ++pt) {
    if (band && u.grid.layer(pt) < band) continue;
    const cplx* up = u.at(pt);
    cplx* op = out.at(pt);
    for (int k = 0; k < n; ++k) {
      cplx* ok = op + k * C;
      for (std::size_t a = 0; a < C; ++a) ok[a] = D[k][pt * C + a];
      add_potential(bundle.Apt(pt, k), up, S, d, 1.0, ok);
      if (!chart.flat) add_christoffel(chart.Gamma(pt), n, k, up, r, d, 1.0, ok);
    }
  }
  return out;
}

}  // namespace detail

/// (nabla u)_{k,I} = d_k u_I - sum_s Gamma^m_{k i_s} u_{I[s->m]} + A_k u_I, new slot leftmost.
inline TensorSection covariant_derivative(const Chart& chart, const Bundle& bundle, const TensorSection& u) {
  detail::check_pair(chart, bundle, u);
  check_support(u, 1);
  return detail::nabla_once(chart, bundle, u);
}

/// nabla^j of a field that is not compactly supported (coefficients, potentials). Values within
/// j stencil radii of the faces are not valid and are returned as zero.
inline std::vector<TensorSection> field_derivative_tower(const Chart& chart, const Bundle& bundle,
                                                         const TensorSection& a, int j) {
  detail::check_pair(chart, bundle, a);
  std::vector<TensorSection> out{a};
  for (int i = 0; i < j; ++i) out.push_back(detail::nabla_once(chart, bundle, out.back(), Extension::interior));
  return out;
}

/// nabla^j u; slots added by later derivatives sit further left.
inline TensorSection iterated_derivative(const Chart& chart, const Bundle& bundle, const TensorSection& u, int j) {
  detail::check_pair(chart, bundle, u);
  require(j >= 0, ErrorKind::config_error, "derivative order must be nonnegative");
  check_support(u, j);
  TensorSection v = u;
  for (int i = 0; i < j; ++i) v = detail::nabla_once(chart, bundle, v);
  return v;
}

/// All of u, nabla u, ..., nabla^s u.
inline std::vector<TensorSection> derivative_tower(const Chart& chart, const Bundle& bundle, const TensorSection& u,
                                                   int s) {
  detail::check_pair(chart, bundle, u);
  check_support(u, s);
  std::vector<TensorSection> out{u};
  for (int i = 0; i < s; ++i) out.push_back(detail::nabla_once(chart, bundle, out.back()));
  return out;
}

/// Component slots (i_1..i_r) of a rank r+rank(u) section, leaving u's own slots.
inline TensorSection extract_leading_slots(const TensorSection& w, const std::vector<int>& idx, int base_rank) {
  const int n = w.grid.n;
  TensorSection out = TensorSection::zeros(w.grid, base_rank, w.d);
  std::size_t lead = 0;
  for (int i : idx) lead = lead * n + i;
  const std::size_t C = out.comps();
  for (std::size_t pt = 0; pt < w.grid.size(); ++pt)
    std::copy(w.at(pt) + lead * C, w.at(pt) + (lead + 1) * C, out.at(pt));
  return out;
}

/// nabla_{i_1} ... nabla_{i_r} u along coordinate fields (indices 0-based).
/// Flat metric: potential recursion; curved metric: the (i_1..i_r) component of nabla^r u.
inline TensorSection multiindex_derivative(const Chart& chart, const Bundle& bundle, const TensorSection& u,
                                           const std::vector<int>& idx) {
  detail::check_pair(chart, bundle, u);
  for (int i : idx) require(i >= 0 && i < chart.grid.n, ErrorKind::config_error, "multi-index entry out of range");
  check_support(u, static_cast<int>(idx.size()));
  if (idx.empty()) return u;
  if (!chart.flat)
    return extract_leading_slots(iterated_derivative(chart, bundle, u, static_cast<int>(idx.size())), idx, u.rank);
  TensorSection v = u;
  const std::size_t C = u.comps(), S = u.slots();
  for (auto it = idx.rbegin(); it != idx.rend(); ++it) {
    const int k = *it;
    TensorSection w = TensorSection::zeros(u.grid, u.rank, u.d);
    diff_axis(u.grid, v.v.data(), C, k, w.v.data(), Extension::zero);
    for (std::size_t pt = 0; pt < u.grid.size(); ++pt) detail::add_potential(bundle.Apt(pt, k), v.at(pt), S, u.d, 1.0, w.at(pt));
    v = std::move(w);
  }
  return v;
}

/// nabla_X u computed directly along X (not through the full gradient).
inline TensorSection directional_derivative(const Chart& chart, const Bundle& bundle, const TensorSection& u,
                                            const VectorField& X, bool check = true) {
  detail::check_pair(chart, bundle, u);
  require_same_chart(chart.grid, X.grid);
  if (check) check_support(u, 1);
  const int n = chart.grid.n;
  const std::size_t C = u.comps(), S = u.slots();
  TensorSection out = TensorSection::zeros(u.grid, u.rank, u.d);
  std::vector<cplx> Dk(u.v.size());
  for (int k = 0; k < n; ++k) {
    diff_axis(u.grid, u.v.data(), C, k, Dk.data(), Extension::zero);
    for (std::size_t pt = 0; pt < u.grid.size(); ++pt) {
      const double xk = X.at(pt)[k];
      if (xk == 0) continue;
      cplx* op = out.at(pt);
      for (std::size_t a = 0; a < C; ++a) op[a] += xk * Dk[pt * C + a];
      detail::add_potential(bundle.Apt(pt, k), u.at(pt), S, u.d, xk, op);
      if (!chart.flat) detail::add_christoffel(chart.Gamma(pt), n, k, u.at(pt), u.rank, u.d, xk, op);
    }
  }
  return out;
}

/// Contraction of the leftmost slot with X.
inline TensorSection contract_leading(const TensorSection& w, const VectorField& X) {
  require(w.rank >= 1, ErrorKind::shape_mismatch, "cannot contract a rank-0 section");
  const int n = w.grid.n;
  TensorSection out = TensorSection::zeros(w.grid, w.rank - 1, w.d);
  const std::size_t C = out.comps();
  for (std::size_t pt = 0; pt < w.grid.size(); ++pt)
    for (int k = 0; k < n; ++k) {
      const double xk = X.at(pt)[k];
      for (std::size_t a = 0; a < C; ++a) out.at(pt)[a] += xk * w.at(pt)[k * C + a];
    }
  return out;
}

/// R_{kl} = d_k A_l - d_l A_k + [A_k, A_l] per grid point.
struct CurvatureField {
  int n = 0, d = 1;
  std::vector<cplx> R;  // [pt][k][l][d*d]

  CMat at(std::size_t pt, int k, int l) const {
    CMat m(d, d);
    const cplx* p = &R[((pt * n + k) * n + l) * d * d];
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) m(a, b) = p[a * d + b];
    return m;
  }
};

inline CurvatureField curvature(const Chart& chart, const Bundle& bundle) {
  const auto& G = chart.grid;
  const int n = G.n, d = bundle.d;
  CurvatureField F;
  F.n = n;
  F.d = d;
  F.R.assign(G.size() * n * n * d * d, cplx(0));
  if (bundle.spec.flat) return F;
  std::vector<double> x(n);
  std::vector<cplx> dA(n * n * d * d);  // [k][l] = d_k A_l
  for (std::size_t pt = 0; pt < G.size(); ++pt) {
    G.coords(pt, x.data());
    std::fill(dA.begin(), dA.end(), cplx(0));
    for (int l = 0; l < n; ++l) {
      if (l >= static_cast<int>(bundle.spec.A.size()) || !bundle.spec.A[l]) continue;
      for (int k = 0; k < n; ++k)
        diff_callable<cplx>(bundle.spec.A[l], x.data(), n, k, G.h[k], G.fd_order, d * d, &dA[(k * n + l) * d * d]);
    }
    for (int k = 0; k < n; ++k)
      for (int l = 0; l < n; ++l) {
        if (k == l) continue;
        CMat Ak = bundle.potential(pt, k), Al = bundle.potential(pt, l);
        CMat comm = Ak * Al - Al * Ak;
        cplx* out = &F.R[((pt * n + k) * n + l) * d * d];
        for (int a = 0; a < d; ++a)
          for (int b = 0; b < d; ++b)
            out[a * d + b] = dA[(k * n + l) * d * d + a * d + b] - dA[(l * n + k) * d * d + a * d + b] + comm(a, b);
      }
  }
  return F;
}

/// tr(nabla X) = d_k X^k + Gamma^k_{kl} X^l, partials of the closed form by central differences.
inline std::vector<double> divergence(const Chart& chart, const VecFn& X) {
  const auto& G = chart.grid;
  const int n = G.n;
  std::vector<double> out(G.size()), x(n), Xv(n), dX(n);
  for (std::size_t pt = 0; pt < G.size(); ++pt) {
    G.coords(pt, x.data());
    double s = 0;
    for (int k = 0; k < n; ++k) {
      diff_callable<double>(X, x.data(), n, k, G.h[k], G.fd_order, n, dX.data());
      s += dX[k];
    }
    if (!chart.flat) {
      X(x.data(), Xv.data());
      const double* gam = chart.Gamma(pt);
      for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l) s += gam[(k * n + k) * n + l] * Xv[l];
    }
    out[pt] = s;
  }
  return out;
}

/// (1/sqrt det g) d_k (sqrt det g X^k); independent route to the divergence.
inline std::vector<double> divergence_density_form(const Chart& chart, const VecFn& X) {
  const auto& G = chart.grid;
  const int n = G.n;
  const MetricField metric = chart.metric;
  auto weighted = [&](const double* y, double* out) {
    X(y, out);
    double s = volume_density(metric, y);
    for (int a = 0; a < n; ++a) out[a] *= s;
  };
  std::vector<double> out(G.size()), x(n), dX(n);
  for (std::size_t pt = 0; pt < G.size(); ++pt) {
    G.coords(pt, x.data());
    double s = 0;
    for (int k = 0; k < n; ++k) {
      diff_callable<double>(weighted, x.data(), n, k, G.h[k], G.fd_order, n, dX.data());
      s += dX[k];
    }
    out[pt] = s / chart.sqrtdet[pt];
  }
  return out;
}

/// -nabla_X u - div(X) u, the formal adjoint of nabla_X.
inline TensorSection formal_adjoint_directional(const Chart& chart, const Bundle& bundle, const VecFn& X,
                                                const TensorSection& u) {
  VectorField Xs = VectorField::sample(chart.grid, X);
  TensorSection out = directional_derivative(chart, bundle, u, Xs);
  const auto div = divergence(chart, X);
  const std::size_t C = u.comps();
  for (std::size_t pt = 0; pt < u.grid.size(); ++pt)
    for (std::size_t a = 0; a < C; ++a) out.at(pt)[a] = -out.at(pt)[a] - div[pt] * u.at(pt)[a];
  return out;
}

/// Trace pairing E (x) E' (x) F -> F; fiber index (e, e', f) row-major.
inline TensorSection contract_epsilon(const TensorSection& w, int dE, int dF) {
  require(w.d == dE * dE * dF, ErrorKind::shape_mismatch, "fiber dimension is not dim(E)^2 * dim(F)");
  TensorSection out = TensorSection::zeros(w.grid, w.rank, dF);
  const std::size_t S = w.slots();
  for (std::size_t pt = 0; pt < w.grid.size(); ++pt)
    for (std::size_t s = 0; s < S; ++s)
      for (int f = 0; f < dF; ++f) {
        cplx acc = 0;
        for (int e = 0; e < dE; ++e) acc += w.at(pt)[s * w.d + (e * dE + e) * dF + f];
        out.at(pt)[s * dF + f] = acc;
      }
  return out;
}

}  // namespace nabla
