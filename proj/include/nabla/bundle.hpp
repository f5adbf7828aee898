#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <string>
#include <vector>

#include "nabla/errors.hpp"
#include "nabla/expr.hpp"
#include "nabla/geometry.hpp"
#include "nabla/grid.hpp"
#include "nabla/random.hpp"

namespace nabla {

using MatFn = std::function<void(const double*, cplx*)>;  // x -> d x d, row-major

/// Trivialized Hermitian bundle: fiber metric and potentials A_k (connection d + A).
struct BundleSpec {
  int n = 0;
  int d = 1;
  std::vector<MatFn> A;  // one per axis; empty function means zero
  MatFn fiber_metric;    // empty means identity
  bool flat = false;     // all potentials vanish
  std::string name;

  CMat potential(int k, const double* x) const {
    CMat m = CMat::Zero(d, d);
    if (A.empty() || !A[k]) return m;
    std::vector<cplx> buf(d * d);
    A[k](x, buf.data());
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) m(a, b) = buf[a * d + b];
    return m;
  }

  CMat metric(const double* x) const {
    if (!fiber_metric) return CMat::Identity(d, d);
    std::vector<cplx> buf(d * d);
    fiber_metric(x, buf.data());
    CMat m(d, d);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) m(a, b) = buf[a * d + b];
    return m;
  }

  static BundleSpec trivial(int n, int d = 1) {
    BundleSpec b;
    b.n = n;
    b.d = d;
    b.A.resize(n);
    b.flat = true;
    b.name = "trivial";
    return b;
  }

  /// Rank-2 bundle over R^2 with A_1 = 0, A_2 = [[0, e^{i x1^3}], [-e^{-i x1^3}, 0]].
  static BundleSpec magnetic_example() {
    BundleSpec b;
    b.n = 2;
    b.d = 2;
    b.name = "magnetic-example";
    b.A.resize(2);
    b.A[1] = [](const double* x, cplx* m) {
      cplx e = std::exp(cplx(0, x[0] * x[0] * x[0]));
      m[0] = 0;
      m[1] = e;
      m[2] = -std::conj(e);
      m[3] = 0;
    };
    return b;
  }

  /// Potentials given entrywise by expressions: potentials[k][a][b].
  static BundleSpec from_expressions(int n, const std::vector<std::vector<std::vector<std::string>>>& pots,
                                     const std::vector<std::vector<std::string>>& metric = {}) {
    require(static_cast<int>(pots.size()) == n, ErrorKind::config_error, "need one potential matrix per axis");
    BundleSpec b;
    b.n = n;
    b.d = pots.empty() ? 1 : static_cast<int>(pots[0].size());
    b.name = "expression";
    const int d = b.d;
    b.A.resize(n);
    for (int k = 0; k < n; ++k) {
      std::vector<Expr> ex;
      require(static_cast<int>(pots[k].size()) == d, ErrorKind::config_error, "potential matrices must be d x d");
      for (const auto& row : pots[k]) {
        require(static_cast<int>(row.size()) == d, ErrorKind::config_error, "potential matrices must be d x d");
        for (const auto& s : row) ex.push_back(Expr::parse(s, n));
      }
      b.A[k] = [ex, d](const double* x, cplx* m) {
        for (int a = 0; a < d * d; ++a) m[a] = ex[a](x);
      };
    }
    if (!metric.empty()) {
      std::vector<Expr> ex;
      require(static_cast<int>(metric.size()) == d, ErrorKind::config_error, "fiber metric must be d x d");
      for (const auto& row : metric) {
        require(static_cast<int>(row.size()) == d, ErrorKind::config_error, "fiber metric must be d x d");
        for (const auto& s : row) ex.push_back(Expr::parse(s, n));
      }
      b.fiber_metric = [ex, d](const double* x, cplx* m) {
        for (int a = 0; a < d * d; ++a) m[a] = ex[a](x);
      };
    }
    return b;
  }
};

inline CMat kron(const CMat& a, const CMat& b) {
  CMat r(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) r.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return r;
}

namespace detail {
inline MatFn store(const std::function<CMat(const double*)>& f) {
  return [f](const double* x, cplx* out) {
    CMat m = f(x);
    for (Eigen::Index a = 0; a < m.rows(); ++a)
      for (Eigen::Index b = 0; b < m.cols(); ++b) out[a * m.cols() + b] = m(a, b);
  };
}
}  // namespace detail

/// Potentials A^E (x) 1 + 1 (x) A^F on E (x) F, fiber index (e, f) row-major.
inline BundleSpec induced_potential_tensor(const BundleSpec& E, const BundleSpec& F) {
  require(E.n == F.n, ErrorKind::chart_mismatch, "bundles live over charts of different dimension");
  BundleSpec r;
  r.n = E.n;
  r.d = E.d * F.d;
  r.flat = E.flat && F.flat;
  r.name = E.name + "*" + F.name;
  r.A.resize(r.n);
  for (int k = 0; k < r.n; ++k)
    r.A[k] = detail::store([E, F, k](const double* x) {
      return CMat(kron(E.potential(k, x), CMat::Identity(F.d, F.d)) + kron(CMat::Identity(E.d, E.d), F.potential(k, x)));
    });
  if (E.fiber_metric || F.fiber_metric)
    r.fiber_metric = detail::store([E, F](const double* x) { return CMat(kron(E.metric(x), F.metric(x))); });
  return r;
}

/// Dual bundle: potential -A^T, metric (h^-1)^T.
inline BundleSpec dual_potential(const BundleSpec& E) {
  BundleSpec r;
  r.n = E.n;
  r.d = E.d;
  r.flat = E.flat;
  r.name = "dual(" + E.name + ")";
  r.A.resize(r.n);
  for (int k = 0; k < r.n; ++k) {
    if (E.A.empty() || !E.A[k]) continue;
    r.A[k] = detail::store([E, k](const double* x) { return CMat(-E.potential(k, x).transpose()); });
  }
  if (E.fiber_metric)
    r.fiber_metric = detail::store([E](const double* x) { return CMat(E.metric(x).inverse().transpose()); });
  return r;
}

/// Hom(E, F) = F (x) E'; the potential acts on a matrix a (row-major) as A^F a - a A^E.
inline BundleSpec hom_potential(const BundleSpec& E, const BundleSpec& F) {
  BundleSpec r = induced_potential_tensor(F, dual_potential(E));
  r.name = "hom(" + E.name + "," + F.name + ")";
  return r;
}

/// Sup over grid points, axes and random unit vector pairs of
/// |d_k (xi, eta) - (nabla_k xi, eta) - (xi, nabla_k eta)| for covariantly frozen xi, eta.
inline double check_metric_compatibility(const BundleSpec& spec, const ChartGrid& grid, int trials = 4,
                                         std::uint64_t seed = 1) {
  const int n = spec.n, d = spec.d;
  require(grid.n == n, ErrorKind::chart_mismatch, "bundle and grid dimensions differ");
  Rng rng(seed, 0x6d6574);
  std::vector<Eigen::VectorXcd> xs, es;
  for (int t = 0; t < trials; ++t) {
    Eigen::VectorXcd a(d), b(d);
    for (int i = 0; i < d; ++i) {
      a[i] = rng.cnormal();
      b[i] = rng.cnormal();
    }
    xs.push_back(a.normalized());
    es.push_back(b.normalized());
  }
  std::vector<double> x(n);
  double worst = 0;
  for (std::size_t pt = 0; pt < grid.size(); ++pt) {
    grid.coords(pt, x.data());
    CMat H = spec.metric(x.data());
    for (int k = 0; k < n; ++k) {
      CMat dH = CMat::Zero(d, d);
      if (spec.fiber_metric) {
        std::vector<cplx> buf(d * d);
        diff_callable<cplx>(spec.fiber_metric, x.data(), n, k, grid.h[k], grid.fd_order, d * d, buf.data());
        for (int a = 0; a < d; ++a)
          for (int b = 0; b < d; ++b) dH(a, b) = buf[a * d + b];
      }
      CMat Ak = spec.potential(k, x.data());
      CMat defect = dH - H * Ak - Ak.adjoint() * H;
      for (int t = 0; t < trials; ++t) worst = std::max(worst, std::abs(es[t].dot(defect * xs[t])));
    }
  }
  return worst;
}

/// Potentials and fiber metric sampled on a grid.
struct Bundle {
  BundleSpec spec;
  int n = 0, d = 1;
  std::vector<cplx> A;  // [pt][k][d*d]
  std::vector<cplx> H;  // [pt][d*d], empty when identity
  bool identity_metric = true;

  const cplx* Apt(std::size_t pt, int k) const { return &A[(pt * n + k) * d * d]; }

  CMat potential(std::size_t pt, int k) const {
    CMat m(d, d);
    const cplx* a = Apt(pt, k);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) m(i, j) = a[i * d + j];
    return m;
  }

  CMat metric(std::size_t pt) const {
    if (identity_metric) return CMat::Identity(d, d);
    CMat m(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) m(i, j) = H[pt * d * d + i * d + j];
    return m;
  }
};

inline Bundle make_bundle(const ChartGrid& grid, const BundleSpec& spec) {
  require(spec.n == grid.n, ErrorKind::chart_mismatch, "bundle and grid dimensions differ");
  Bundle b;
  b.spec = spec;
  b.n = spec.n;
  b.d = spec.d;
  const std::size_t N = grid.size();
  const int n = b.n, d = b.d;
  b.A.assign(N * n * d * d, cplx(0));
  b.identity_metric = !spec.fiber_metric;
  if (!b.identity_metric) b.H.resize(N * d * d);
  std::vector<double> x(n);
  for (std::size_t pt = 0; pt < N; ++pt) {
    grid.coords(pt, x.data());
    for (int k = 0; k < n; ++k)
      if (k < static_cast<int>(spec.A.size()) && spec.A[k]) spec.A[k](x.data(), &b.A[(pt * n + k) * d * d]);
    if (!b.identity_metric) {
      spec.fiber_metric(x.data(), &b.H[pt * d * d]);
      CMat h = b.metric(pt);
      require((h - h.adjoint()).norm() <= 1e-12 * h.norm(), ErrorKind::config_error, "fiber metric is not Hermitian");
      Eigen::SelfAdjointEigenSolver<CMat> es(h, Eigen::EigenvaluesOnly);
      require(es.eigenvalues().minCoeff() > 1e-12 * es.eigenvalues().cwiseAbs().maxCoeff(), ErrorKind::config_error,
              "fiber metric is not positive definite");
    }
  }
  return b;
}

}  // namespace nabla
