#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "nabla/bundle.hpp"
#include "nabla/connection.hpp"
#include "nabla/errors.hpp"
#include "nabla/generators.hpp"
#include "nabla/geometry.hpp"
#include "nabla/norms.hpp"
#include "nabla/section.hpp"

namespace nabla {

enum class CoefficientClass { smooth = 0, totally_bounded = 1 };

inline CoefficientClass meet(CoefficientClass a, CoefficientClass b) {
  return static_cast<CoefficientClass>(std::min(static_cast<int>(a), static_cast<int>(b)));
}

inline const char* to_string(CoefficientClass c) {
  return c == CoefficientClass::totally_bounded ? "totally-bounded" : "smooth";
}

using BundlePtr = std::shared_ptr<const Bundle>;

/// Pointwise matrices T*^{src_rank} (x) E -> T*^{dst_rank} (x) F. Empty storage means zero.
struct HomField {
  ChartGrid grid;
  int n = 0, src_rank = 0, dst_rank = 0, dsrc = 1, ddst = 1;
  std::vector<cplx> m;  // [pt][rows*cols], row-major

  std::size_t rows() const { return ipow(n, dst_rank) * ddst; }
  std::size_t cols() const { return ipow(n, src_rank) * dsrc; }
  std::size_t block() const { return rows() * cols(); }
  bool zero() const { return m.empty(); }
  cplx* at(std::size_t pt) { return &m[pt * block()]; }
  const cplx* at(std::size_t pt) const { return &m[pt * block()]; }

  static HomField shape(const ChartGrid& g, int src_rank, int dsrc, int dst_rank, int ddst) {
    HomField h;
    h.grid = g;
    h.n = g.n;
    h.src_rank = src_rank;
    h.dst_rank = dst_rank;
    h.dsrc = dsrc;
    h.ddst = ddst;
    return h;
  }
  static HomField zeros(const ChartGrid& g, int src_rank, int dsrc, int dst_rank, int ddst) {
    HomField h = shape(g, src_rank, dsrc, dst_rank, ddst);
    h.m.assign(g.size() * h.block(), cplx(0));
    return h;
  }
  /// Sample a closed form f(x, out) filling the rows x cols block.
  static HomField sample(const ChartGrid& g, int src_rank, int dsrc, int dst_rank, int ddst,
                         const std::function<void(const double*, cplx*)>& f) {
    HomField h = zeros(g, src_rank, dsrc, dst_rank, ddst);
    std::vector<double> x(g.n);
    for (std::size_t pt = 0; pt < g.size(); ++pt) {
      g.coords(pt, x.data());
      f(x.data(), h.at(pt));
    }
    return h;
  }
  static HomField identity(const ChartGrid& g, int rank, int d) {
    HomField h = zeros(g, rank, d, rank, d);
    const std::size_t R = h.rows();
    for (std::size_t pt = 0; pt < g.size(); ++pt)
      for (std::size_t i = 0; i < R; ++i) h.at(pt)[i * R + i] = 1.0;
    return h;
  }

  CMat mat(std::size_t pt) const {
    CMat r = CMat::Zero(rows(), cols());
    if (zero()) return r;
    const cplx* p = at(pt);
    for (std::size_t i = 0; i < rows(); ++i)
      for (std::size_t j = 0; j < cols(); ++j) r(i, j) = p[i * cols() + j];
    return r;
  }
  void set(std::size_t pt, const CMat& a) {
    if (zero()) m.assign(grid.size() * block(), cplx(0));
    cplx* p = at(pt);
    for (std::size_t i = 0; i < rows(); ++i)
      for (std::size_t j = 0; j < cols(); ++j) p[i * cols() + j] = a(i, j);
  }

  bool same_shape(const HomField& o) const {
    return src_rank == o.src_rank && dst_rank == o.dst_rank && dsrc == o.dsrc && ddst == o.ddst && n == o.n;
  }
  HomField& operator+=(const HomField& o) {
    require(same_shape(o), ErrorKind::shape_mismatch, "adding Hom fields of different shape");
    if (o.zero()) return *this;
    if (zero()) {
      m = o.m;
      return *this;
    }
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += o.m[i];
    return *this;
  }
  double max_abs() const {
    double r = 0;
    for (const auto& z : m) r = std::max(r, std::abs(z));
    return r;
  }
};

/// Apply a Hom field pointwise: rank src_rank section of E -> rank dst_rank section of F.
inline TensorSection apply_hom(const HomField& a, const TensorSection& u) {
  require(u.rank == a.src_rank && u.d == a.dsrc, ErrorKind::shape_mismatch, "coefficient does not accept this section");
  TensorSection out = TensorSection::zeros(u.grid, a.dst_rank, a.ddst);
  if (a.zero()) return out;
  const std::size_t R = a.rows(), C = a.cols();
  for (std::size_t pt = 0; pt < u.grid.size(); ++pt) {
    const cplx* A = a.at(pt);
    const cplx* x = u.at(pt);
    cplx* y = out.at(pt);
    for (std::size_t i = 0; i < R; ++i) {
      cplx acc = 0;
      for (std::size_t j = 0; j < C; ++j) acc += A[i * C + j] * x[j];
      y[i] = acc;
    }
  }
  return out;
}

/// Pointwise product b * a.
inline HomField hom_product(const HomField& b, const HomField& a) {
  require(b.src_rank == a.dst_rank && b.dsrc == a.ddst, ErrorKind::shape_mismatch, "Hom fields do not compose");
  HomField r = HomField::shape(a.grid, a.src_rank, a.dsrc, b.dst_rank, b.ddst);
  if (a.zero() || b.zero()) return r;
  r.m.assign(a.grid.size() * r.block(), cplx(0));
  const std::size_t R = b.rows(), K = b.cols(), C = a.cols();
  for (std::size_t pt = 0; pt < a.grid.size(); ++pt) {
    const cplx* B = b.at(pt);
    const cplx* A = a.at(pt);
    cplx* out = r.at(pt);
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const cplx bik = B[i * K + k];
        if (bik == cplx(0)) continue;
        for (std::size_t j = 0; j < C; ++j) out[i * C + j] += bik * A[k * C + j];
      }
  }
  return r;
}

/// 1 (x) a: acts on a new leftmost slot on both sides.
inline HomField hom_lift(const HomField& a) {
  HomField r = HomField::shape(a.grid, a.src_rank + 1, a.dsrc, a.dst_rank + 1, a.ddst);
  if (a.zero()) return r;
  r.m.assign(a.grid.size() * r.block(), cplx(0));
  const std::size_t R = a.rows(), C = a.cols(), RC = r.cols();
  for (std::size_t pt = 0; pt < a.grid.size(); ++pt)
    for (int k = 0; k < a.n; ++k)
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) r.at(pt)[(k * R + i) * RC + k * C + j] = a.at(pt)[i * C + j];
  return r;
}

/// Connection matrix of T*^r (x) E along axis k at a grid point.
inline CMat connection_matrix(const Chart& chart, const Bundle& b, std::size_t pt, int k, int r) {
  const int n = chart.grid.n, d = b.d;
  const std::size_t S = ipow(n, r);
  CMat C = CMat::Zero(S * d, S * d);
  CMat A = b.potential(pt, k);
  for (std::size_t s = 0; s < S; ++s) C.block(s * d, s * d, d, d) = A;
  if (!chart.flat && r > 0) {
    const double* gam = chart.Gamma(pt);
    for (std::size_t slot = 0; slot < S; ++slot) {
      std::size_t pw = S / n;
      for (int s = 0; s < r; ++s, pw /= n) {
        const int is = static_cast<int>((slot / pw) % n);
        const std::size_t base = slot - is * pw;
        for (int m = 0; m < n; ++m) {
          const double c = gam[(m * n + k) * n + is];
          if (c == 0) continue;
          for (int a = 0; a < d; ++a) C(slot * d + a, (base + m * pw) * d + a) -= c;
        }
      }
    }
  }
  return C;
}

namespace detail {

/// out[(slot,a) * os] += sign * (C_k v)[(slot,a)] with C_k the connection matrix of T*^r (x) E.
inline void connection_left(const Chart& chart, const Bundle& b, std::size_t pt, int k, int r, const cplx* v,
                            std::size_t vs, cplx* out, std::size_t os, double sign) {
  const int n = chart.grid.n, d = b.d;
  const std::size_t S = ipow(n, r);
  if (!b.spec.flat) {
    const cplx* A = b.Apt(pt, k);
    for (std::size_t slot = 0; slot < S; ++slot)
      for (int a = 0; a < d; ++a) {
        cplx acc = 0;
        for (int c = 0; c < d; ++c) acc += A[a * d + c] * v[(slot * d + c) * vs];
        out[(slot * d + a) * os] += sign * acc;
      }
  }
  if (chart.flat || r == 0) return;
  const double* gam = chart.Gamma(pt);
  for (std::size_t slot = 0; slot < S; ++slot) {
    std::size_t pw = S / n;
    for (int s = 0; s < r; ++s, pw /= n) {
      const int is = static_cast<int>((slot / pw) % n);
      const std::size_t base = slot - is * pw;
      for (int m = 0; m < n; ++m) {
        const double g = gam[(m * n + k) * n + is];
        if (g == 0) continue;
        for (int a = 0; a < d; ++a) out[(slot * d + a) * os] -= sign * g * v[((base + m * pw) * d + a) * vs];
      }
    }
  }
}

/// out[c' * os] += sign * (v^T C_k)[c'].
inline void connection_right(const Chart& chart, const Bundle& b, std::size_t pt, int k, int r, const cplx* v,
                             std::size_t vs, cplx* out, std::size_t os, double sign) {
  const int n = chart.grid.n, d = b.d;
  const std::size_t S = ipow(n, r);
  if (!b.spec.flat) {
    const cplx* A = b.Apt(pt, k);
    for (std::size_t slot = 0; slot < S; ++slot)
      for (int c = 0; c < d; ++c) {
        cplx acc = 0;
        for (int a = 0; a < d; ++a) acc += v[(slot * d + a) * vs] * A[a * d + c];
        out[(slot * d + c) * os] += sign * acc;
      }
  }
  if (chart.flat || r == 0) return;
  const double* gam = chart.Gamma(pt);
  for (std::size_t slot = 0; slot < S; ++slot) {
    std::size_t pw = S / n;
    for (int s = 0; s < r; ++s, pw /= n) {
      const int is = static_cast<int>((slot / pw) % n);
      const std::size_t base = slot - is * pw;
      for (int m = 0; m < n; ++m) {
        const double g = gam[(m * n + k) * n + is];
        if (g == 0) continue;
        for (int a = 0; a < d; ++a) out[((base + m * pw) * d + a) * os] -= sign * g * v[(slot * d + a) * vs];
      }
    }
  }
}

}  // namespace detail

/// nabla a for a Hom field between (src_rank, E) and (dst_rank, F); the derivative slot is
/// prepended to the target. Interior differences: invalid within one stencil radius of the faces.
inline HomField nabla_hom(const Chart& chart, const Bundle& E, const Bundle& F, const HomField& a) {
  require_same_chart(chart.grid, a.grid);
  HomField r = HomField::shape(a.grid, a.src_rank, a.dsrc, a.dst_rank + 1, a.ddst);
  if (a.zero()) return r;
  const auto& G = chart.grid;
  const int n = G.n;
  const std::size_t R = a.rows(), C = a.cols(), B = a.block();
  r.m.assign(G.size() * r.block(), cplx(0));
  std::vector<cplx> D(a.m.size());
  const int band = G.radius();
  for (int k = 0; k < n; ++k) {
    diff_axis(G, a.m.data(), B, k, D.data(), Extension::interior);
    for (std::size_t pt = 0; pt < G.size(); ++pt) {
      if (G.layer(pt) < band) continue;
      const cplx* am = a.at(pt);
      cplx* out = r.at(pt) + k * B;
      std::copy(D.begin() + pt * B, D.begin() + (pt + 1) * B, out);
      for (std::size_t j = 0; j < C; ++j) detail::connection_left(chart, F, pt, k, a.dst_rank, am + j, C, out + j, C, 1.0);
      for (std::size_t i = 0; i < R; ++i)
        detail::connection_right(chart, E, pt, k, a.src_rank, am + i * C, 1, out + i * C, 1, -1.0);
    }
  }
  return r;
}

/// Fiber metric of T*^r (x) E at a grid point: (g^-1)^{(x) r} (x) H.
inline CMat tensor_metric(const Chart& chart, const Bundle& b, std::size_t pt, int r) {
  const int n = chart.grid.n;
  Eigen::Map<const RowMat> gi(chart.Ginv(pt), n, n);
  CMat M = b.metric(pt);
  for (int s = 0; s < r; ++s) M = kron(CMat(gi.cast<cplx>()), M);
  return M;
}

/// HS norm of a Hom field at a point with metric-induced inner products on both sides.
inline double hom_pointwise_norm(const Chart& chart, const Bundle& E, const Bundle& F, const HomField& a,
                                 std::size_t pt) {
  if (a.zero()) return 0;
  if (chart.flat && E.identity_metric && F.identity_metric) {
    double s = 0;
    for (std::size_t i = 0; i < a.block(); ++i) s += std::norm(a.at(pt)[i]);
    return std::sqrt(s);
  }
  CMat am = a.mat(pt);
  CMat t = tensor_metric(chart, E, pt, a.src_rank).inverse() * am.adjoint() * tensor_metric(chart, F, pt, a.dst_rank) * am;
  return std::sqrt(std::max(0.0, t.trace().real()));
}

/// W^{k,inf} norm of a coefficient over the points where its derivatives are valid.
inline double hom_sup_norm(const Chart& chart, const Bundle& E, const Bundle& F, const HomField& a, int k) {
  HomField cur = a;
  double m = 0;
  const int band = k * chart.grid.radius();
  for (int j = 0; j <= k; ++j) {
    for (std::size_t pt = 0; pt < chart.grid.size(); ++pt)
      if (chart.grid.layer(pt) >= band) m = std::max(m, hom_pointwise_norm(chart, E, F, cur, pt));
    if (j < k) cur = nabla_hom(chart, E, F, cur);
  }
  return m;
}

/// P = sum_j a^{[j]} nabla^j from rank src_rank sections of E to rank dst_rank sections of F.
struct NablaOpSpec {
  BundlePtr E, F;
  int src_rank = 0, dst_rank = 0;
  std::vector<HomField> coef;
  CoefficientClass cls = CoefficientClass::totally_bounded;

  int order() const {
    int o = 0;
    for (std::size_t j = 0; j < coef.size(); ++j)
      if (!coef[j].zero()) o = static_cast<int>(j);
    return o;
  }

  static NablaOpSpec empty(BundlePtr E, BundlePtr F, int src_rank, int dst_rank, int order, const ChartGrid& g) {
    NablaOpSpec P;
    P.E = E;
    P.F = F;
    P.src_rank = src_rank;
    P.dst_rank = dst_rank;
    for (int j = 0; j <= order; ++j) P.coef.push_back(HomField::shape(g, src_rank + j, E->d, dst_rank, F->d));
    return P;
  }

  void grow(int order, const ChartGrid& g) {
    while (static_cast<int>(coef.size()) <= order)
      coef.push_back(HomField::shape(g, src_rank + static_cast<int>(coef.size()), E->d, dst_rank, F->d));
  }

  NablaOpSpec& operator+=(const NablaOpSpec& o) {
    require(src_rank == o.src_rank && dst_rank == o.dst_rank && E->d == o.E->d && F->d == o.F->d,
            ErrorKind::shape_mismatch, "adding operators between different bundles");
    if (!o.coef.empty()) grow(static_cast<int>(o.coef.size()) - 1, o.coef[0].grid);
    for (std::size_t j = 0; j < o.coef.size(); ++j) coef[j] += o.coef[j];
    cls = meet(cls, o.cls);
    return *this;
  }
};

/// The identity operator on rank-r sections of E.
inline NablaOpSpec identity_op(const ChartGrid& g, BundlePtr E, int rank = 0) {
  NablaOpSpec P = NablaOpSpec::empty(E, E, rank, rank, 0, g);
  P.coef[0] = HomField::identity(g, rank, E->d);
  return P;
}

/// nabla itself as an operator from rank r to rank r+1.
inline NablaOpSpec nabla_op(const ChartGrid& g, BundlePtr E, int rank = 0) {
  NablaOpSpec P = NablaOpSpec::empty(E, E, rank, rank + 1, 1, g);
  P.coef[1] = HomField::identity(g, rank + 1, E->d);
  return P;
}

inline TensorSection apply_nabla_op(const Chart& chart, const NablaOpSpec& P, const TensorSection& u) {
  require(u.rank == P.src_rank && u.d == P.E->d, ErrorKind::shape_mismatch, "operator does not accept this section");
  const int mu = P.order();
  auto tower = derivative_tower(chart, *P.E, u, mu);
  TensorSection out = TensorSection::zeros(u.grid, P.dst_rank, P.F->d);
  for (int j = 0; j <= mu && j < static_cast<int>(P.coef.size()); ++j)
    if (!P.coef[j].zero()) out += apply_hom(P.coef[j], tower[j]);
  return out;
}

/// Q o P by b nabla^j o a nabla^N = b nabla^{j-1} o [(nabla a) nabla^N + (1 (x) a) nabla^{N+1}].
inline NablaOpSpec compose(const Chart& chart, const NablaOpSpec& Q, const NablaOpSpec& P) {
  require(Q.src_rank == P.dst_rank && Q.E->d == P.F->d, ErrorKind::shape_mismatch, "operators do not compose");
  const ChartGrid& g = chart.grid;
  NablaOpSpec R = NablaOpSpec::empty(P.E, Q.F, P.src_rank, Q.dst_rank, Q.order() + P.order(), g);
  R.cls = meet(Q.cls, P.cls);
  std::function<void(const HomField&, int, const HomField&, int)> rec = [&](const HomField& c, int N,
                                                                             const HomField& b, int depth) {
    if (c.zero()) return;
    if (depth == 0) {
      R.coef[N] += hom_product(b, c);
      return;
    }
    rec(nabla_hom(chart, *P.E, *P.F, c), N, b, depth - 1);
    rec(hom_lift(c), N + 1, b, depth - 1);
  };
  for (std::size_t j = 0; j < Q.coef.size(); ++j) {
    if (Q.coef[j].zero()) continue;
    for (std::size_t i = 0; i < P.coef.size(); ++i) rec(P.coef[i], static_cast<int>(i), Q.coef[j], static_cast<int>(j));
  }
  return R;
}

/// A vector field in a mixed term; `generator` names Z_j when the field comes from a generator system.
struct FieldRef {
  int generator = -1;
  VectorField field;
};

/// a nabla_{X_1} ... nabla_{X_r} acting on rank-0 sections of E.
struct MixedTerm {
  HomField a;  // rank 0 (E) -> dst_rank (F)
  std::vector<FieldRef> X;
};

struct MixedOpSpec {
  BundlePtr E, F;
  int dst_rank = 0;
  std::vector<MixedTerm> terms;
  CoefficientClass cls = CoefficientClass::totally_bounded;
  CoefficientClass field_cls = CoefficientClass::totally_bounded;

  int order() const {
    int o = 0;
    for (const auto& t : terms) o = std::max(o, static_cast<int>(t.X.size()));
    return o;
  }
};

inline TensorSection apply_mixed_op(const Chart& chart, const MixedOpSpec& M, const TensorSection& u) {
  require(u.rank == 0 && u.d == M.E->d, ErrorKind::shape_mismatch, "mixed operators act on rank-0 sections of E");
  check_support(u, M.order());
  TensorSection out = TensorSection::zeros(u.grid, M.dst_rank, M.F->d);
  for (const auto& t : M.terms) {
    TensorSection v = u;
    for (auto it = t.X.rbegin(); it != t.X.rend(); ++it) v = directional_derivative(chart, *M.E, v, it->field, false);
    out += apply_hom(t.a, v);
  }
  return out;
}

/// nabla_X = i_X o nabla on rank-0 sections of E.
inline NablaOpSpec directional_op(const ChartGrid& g, BundlePtr E, const VectorField& X) {
  NablaOpSpec P = NablaOpSpec::empty(E, E, 0, 0, 1, g);
  const int n = g.n, d = E->d;
  P.coef[1] = HomField::zeros(g, 1, d, 0, d);
  for (std::size_t pt = 0; pt < g.size(); ++pt)
    for (int k = 0; k < n; ++k)
      for (int a = 0; a < d; ++a) P.coef[1].at(pt)[a * (n * d) + k * d + a] = X.at(pt)[k];
  return P;
}

inline NablaOpSpec mixed_to_nabla(const Chart& chart, const MixedOpSpec& M) {
  const ChartGrid& g = chart.grid;
  NablaOpSpec R = NablaOpSpec::empty(M.E, M.F, 0, M.dst_rank, M.order(), g);
  R.cls = meet(M.cls, M.field_cls);
  for (const auto& t : M.terms) {
    NablaOpSpec A = NablaOpSpec::empty(M.E, M.F, 0, M.dst_rank, 0, g);
    A.coef[0] = t.a;
    if (t.X.empty()) {
      R += A;
      continue;
    }
    NablaOpSpec T = directional_op(g, M.E, t.X.back().field);
    for (int s = static_cast<int>(t.X.size()) - 2; s >= 0; --s) T = compose(chart, directional_op(g, M.E, t.X[s].field), T);
    R += compose(chart, A, T);
  }
  R.cls = meet(R.cls, meet(M.cls, M.field_cls));
  return R;
}

namespace detail {

struct ScalarTerm {
  std::vector<double> c;  // one value per grid point
  std::vector<int> labels;
};

/// Z(c) with interior differences.
inline std::vector<double> derive_scalar(const ChartGrid& g, const VectorField& Z, const std::vector<double>& c) {
  std::vector<double> out(g.size(), 0.0), D(g.size());
  for (int k = 0; k < g.n; ++k) {
    diff_axis(g, c.data(), 1, k, D.data(), Extension::interior);
    for (std::size_t pt = 0; pt < g.size(); ++pt) out[pt] += Z.at(pt)[k] * D[pt];
  }
  return out;
}

inline void merge_scalar(std::vector<ScalarTerm>& terms, ScalarTerm t) {
  for (auto& s : terms)
    if (s.labels == t.labels) {
      for (std::size_t i = 0; i < s.c.size(); ++i) s.c[i] += t.c[i];
      return;
    }
  terms.push_back(std::move(t));
}

}  // namespace detail

/// Rewrites sum_j a^{[j]} nabla^j (rank-0 sources) with generator derivatives:
/// (nabla^j u)(Z_{k_1},..,Z_{k_j}) = nabla_{Z_{k_1}} T(k_2..) - sum_s sum_m G^m_{k_1 k_s} T(.., m, ..).
inline MixedOpSpec nabla_to_mixed(const Chart& chart, const NablaOpSpec& P, const GeneratorSystem& gs,
                                  const StructureFunctions& sf) {
  require(P.src_rank == 0, ErrorKind::shape_mismatch, "mixed rewriting needs rank-0 sources");
  const ChartGrid& g = chart.grid;
  const int n = g.n, N = gs.N, d = P.E->d;
  const std::size_t npts = g.size();
  std::map<std::vector<int>, std::vector<detail::ScalarTerm>> memo;
  std::function<const std::vector<detail::ScalarTerm>&(const std::vector<int>&)> T =
      [&](const std::vector<int>& k) -> const std::vector<detail::ScalarTerm>& {
    auto it = memo.find(k);
    if (it != memo.end()) return it->second;
    std::vector<detail::ScalarTerm> out;
    if (k.empty()) {
      out.push_back({std::vector<double>(npts, 1.0), {}});
    } else {
      const int k1 = k[0];
      std::vector<int> rest(k.begin() + 1, k.end());
      for (const auto& t : T(rest)) {
        auto lab = t.labels;
        lab.insert(lab.begin(), k1);
        detail::merge_scalar(out, {t.c, lab});
        auto dc = detail::derive_scalar(g, gs.fields[k1], t.c);
        bool nz = std::any_of(dc.begin(), dc.end(), [](double v) { return v != 0; });
        if (nz) detail::merge_scalar(out, {dc, t.labels});
      }
      for (std::size_t s = 0; s < rest.size(); ++s)
        for (int m = 0; m < N; ++m) {
          std::vector<double> Gm(npts);
          bool nz = false;
          for (std::size_t pt = 0; pt < npts; ++pt) {
            Gm[pt] = sf.g(pt, k1, rest[s], m);
            nz |= Gm[pt] != 0;
          }
          if (!nz) continue;
          auto r2 = rest;
          r2[s] = m;
          for (const auto& t : T(r2)) {
            detail::ScalarTerm nt{t.c, t.labels};
            for (std::size_t pt = 0; pt < npts; ++pt) nt.c[pt] *= -Gm[pt];
            detail::merge_scalar(out, std::move(nt));
          }
        }
    }
    return memo.emplace(k, std::move(out)).first->second;
  };

  MixedOpSpec M;
  M.E = P.E;
  M.F = P.F;
  M.dst_rank = P.dst_rank;
  M.cls = gs.emb.isometric ? P.cls : meet(P.cls, CoefficientClass::totally_bounded);
  std::map<std::vector<int>, HomField> acc;
  for (std::size_t j = 0; j < P.coef.size(); ++j) {
    const HomField& a = P.coef[j];
    if (a.zero()) continue;
    const std::size_t tuples = ipow(N, static_cast<int>(j));
    const std::size_t S = ipow(n, static_cast<int>(j)), R = a.rows(), C = a.cols();
    for (std::size_t ti = 0; ti < tuples; ++ti) {
      std::vector<int> k(j);
      std::size_t rest = ti;
      for (int s = static_cast<int>(j) - 1; s >= 0; --s) {
        k[s] = static_cast<int>(rest % N);
        rest /= N;
      }
      // K = a . (xi_{k_1} (x) ... (x) xi_{k_j} (x) 1)
      HomField K = HomField::zeros(g, 0, d, P.dst_rank, P.F->d);
      for (std::size_t pt = 0; pt < npts; ++pt) {
        for (std::size_t slot = 0; slot < S; ++slot) {
          double w = 1;
          std::size_t r2 = slot;
          for (int s = static_cast<int>(j) - 1; s >= 0; --s) {
            w *= gs.xip(pt, k[s])[r2 % n];
            r2 /= n;
          }
          if (w == 0) continue;
          for (std::size_t row = 0; row < R; ++row)
            for (int b = 0; b < d; ++b) K.at(pt)[row * d + b] += w * a.at(pt)[row * C + slot * d + b];
        }
      }
      for (const auto& t : T(k)) {
        HomField Kt = K;
        for (std::size_t pt = 0; pt < npts; ++pt)
          for (std::size_t e = 0; e < Kt.block(); ++e) Kt.at(pt)[e] *= t.c[pt];
        auto it = acc.find(t.labels);
        if (it == acc.end()) acc.emplace(t.labels, std::move(Kt));
        else it->second += Kt;
      }
    }
  }
  for (auto& [labels, K] : acc) {
    MixedTerm mt;
    mt.a = std::move(K);
    for (int l : labels) mt.X.push_back({l, gs.fields[l]});
    M.terms.push_back(std::move(mt));
  }
  return M;
}

inline bool labels_sorted(const std::vector<FieldRef>& X) {
  for (std::size_t s = 1; s < X.size(); ++s)
    if (X[s - 1].generator > X[s].generator) return false;
  return true;
}

/// Sorts every term's generator indices into nondecreasing order with adjacent swaps
/// nabla_a nabla_b = nabla_b nabla_a + R(Z_a, Z_b) + sum_m L_ab^m nabla_{Z_m}; coefficients that land
/// between derivatives are moved left with nabla_Z (F w) = (nabla_Z F) w + F nabla_Z w.
inline MixedOpSpec reorder_generators(const Chart& chart, const MixedOpSpec& M, const GeneratorSystem& gs,
                                      const StructureFunctions& sf, const CurvatureField& R) {
  const ChartGrid& g = chart.grid;
  const int n = g.n, N = gs.N, d = M.E->d;
  const std::size_t npts = g.size();
  const Bundle& E = *M.E;
  for (const auto& t : M.terms)
    for (const auto& f : t.X)
      require(f.generator >= 0 && f.generator < N, ErrorKind::config_error, "reordering needs generator fields only");

  auto endo_derivative = [&](const HomField& F, int z) {
    // nabla_Z F = Z^m (d_m F + [A_m, F]) on End(E)
    HomField out = HomField::zeros(g, 0, d, 0, d);
    const std::size_t dd = static_cast<std::size_t>(d) * d;
    std::vector<cplx> D(F.m.size());
    for (int m = 0; m < n; ++m) {
      diff_axis(g, F.m.data(), dd, m, D.data(), Extension::interior);
      for (std::size_t pt = 0; pt < npts; ++pt) {
        if (g.layer(pt) < g.radius()) continue;
        const double zm = gs.fields[z].at(pt)[m];
        if (zm == 0) continue;
        const cplx* f = F.at(pt);
        const cplx* A = E.Apt(pt, m);
        cplx* o = out.at(pt);
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) {
            cplx c = D[pt * dd + i * d + j];
            if (!E.spec.flat)
              for (int l = 0; l < d; ++l) c += A[i * d + l] * f[l * d + j] - f[i * d + l] * A[l * d + j];
            o[i * d + j] += zm * c;
          }
      }
    }
    return out;
  };
  using Expansion = std::vector<std::pair<HomField, std::vector<int>>>;
  // nabla_{pre} o F = sum F' nabla_{rem}
  std::function<Expansion(const std::vector<int>&, const HomField&)> push = [&](const std::vector<int>& pre,
                                                                                const HomField& F) {
    Expansion out;
    if (pre.empty()) {
      out.push_back({F, {}});
      return out;
    }
    std::vector<int> tail(pre.begin() + 1, pre.end());
    for (auto& [Fp, rem] : push(tail, F)) {
      HomField dF = endo_derivative(Fp, pre[0]);
      if (dF.max_abs() > 0) out.push_back({dF, rem});
      auto r2 = rem;
      r2.insert(r2.begin(), pre[0]);
      out.push_back({Fp, r2});
    }
    return out;
  };

  // R(Z_a, Z_b) and L_ab^m for each transposed pair, computed once
  std::map<std::pair<int, int>, Expansion> corrections;
  auto corrections_for = [&](int a, int b) -> const Expansion& {
    auto it = corrections.find({a, b});
    if (it != corrections.end()) return it->second;
    Expansion c;
    HomField Rab = HomField::zeros(g, 0, d, 0, d);
    for (std::size_t pt = 0; pt < npts; ++pt) {
      CMat acc = CMat::Zero(d, d);
      for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l) {
          const double w = gs.Zp(pt, a)[k] * gs.Zp(pt, b)[l];
          if (w != 0 && k != l) acc += w * R.at(pt, k, l);
        }
      Rab.set(pt, acc);
    }
    if (Rab.max_abs() > 0) c.push_back({Rab, {}});
    for (int m = 0; m < N; ++m) {
      HomField Lm = HomField::zeros(g, 0, d, 0, d);
      for (std::size_t pt = 0; pt < npts; ++pt)
        for (int e = 0; e < d; ++e) Lm.at(pt)[e * d + e] = sf.l(pt, a, b, m);
      if (Lm.max_abs() > 0) c.push_back({Lm, {m}});
    }
    return corrections.emplace(std::make_pair(a, b), std::move(c)).first->second;
  };
  std::map<std::tuple<int, int, std::size_t, std::vector<int>>, Expansion> pushed;

  struct Work {
    HomField K;
    std::vector<int> labels;
  };
  std::deque<Work> work;
  for (const auto& t : M.terms) {
    std::vector<int> lab;
    for (const auto& f : t.X) lab.push_back(f.generator);
    work.push_back({t.a, lab});
  }
  std::map<std::vector<int>, HomField> done;
  while (!work.empty()) {
    Work w = std::move(work.front());
    work.pop_front();
    if (w.K.zero()) continue;
    std::size_t s = 0;
    while (s + 1 < w.labels.size() && w.labels[s] <= w.labels[s + 1]) ++s;
    if (s + 1 >= w.labels.size()) {
      auto it = done.find(w.labels);
      if (it == done.end()) done.emplace(w.labels, std::move(w.K));
      else it->second += w.K;
      continue;
    }
    const int a = w.labels[s], b = w.labels[s + 1];
    std::vector<int> pre(w.labels.begin(), w.labels.begin() + s), post(w.labels.begin() + s + 2, w.labels.end());
    auto swapped = w.labels;
    std::swap(swapped[s], swapped[s + 1]);
    work.push_back({w.K, swapped});
    const Expansion& corr = corrections_for(a, b);
    for (std::size_t ci = 0; ci < corr.size(); ++ci) {
      auto key = std::make_tuple(a, b, ci, pre);
      auto it = pushed.find(key);
      if (it == pushed.end()) it = pushed.emplace(key, push(pre, corr[ci].first)).first;
      for (auto& [Fp, rem] : it->second) {
        auto lab = rem;
        lab.insert(lab.end(), corr[ci].second.begin(), corr[ci].second.end());
        lab.insert(lab.end(), post.begin(), post.end());
        work.push_back({hom_product(w.K, Fp), lab});
      }
    }
  }
  MixedOpSpec out;
  out.E = M.E;
  out.F = M.F;
  out.dst_rank = M.dst_rank;
  out.cls = M.cls;
  out.field_cls = M.field_cls;
  for (auto& [labels, K] : done) {
    MixedTerm mt;
    mt.a = std::move(K);
    for (int l : labels) mt.X.push_back({l, gs.fields[l]});
    out.terms.push_back(std::move(mt));
  }
  return out;
}

struct MappingReport {
  double max_ratio = 0;
  double bound = 0;
  bool pass = false;
};

/// sup over random sections of ||Pu||_{W^{k,p}} / ||u||_{W^{k+mu,p}} against
/// sum_j C_{k,inf,p} ||a^{[j]}||_{W^{k,inf}}.
inline MappingReport mapping_bound_check(const Chart& chart, const NablaOpSpec& P, int k, Exponent p,
                                         const std::vector<TensorSection>& samples) {
  MappingReport r;
  const int mu = P.order();
  const double C = multiplication_constant(k, Exponent::infinity(), p, p);
  for (int j = 0; j <= mu; ++j) {
    // coefficient norms use Hom(T*^j E, F) with the induced connection
    r.bound += C * hom_sup_norm(chart, *P.E, *P.F, P.coef[j], k);
  }
  for (const auto& u : samples) {
    double num = sobolev_norm(chart, *P.F, apply_nabla_op(chart, P, u), k, p);
    double den = sobolev_norm(chart, *P.E, u, k + mu, p);
    r.max_ratio = std::max(r.max_ratio, num / den);
  }
  r.pass = r.max_ratio <= r.bound * (1 + 1e-12);
  return r;
}

}  // namespace nabla
