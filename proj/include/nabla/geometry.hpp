#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "nabla/errors.hpp"
#include "nabla/expr.hpp"
#include "nabla/grid.hpp"

namespace nabla {

using ScalarFn = std::function<double(const double*)>;
using VecFn = std::function<void(const double*, double*)>;  // R^n -> R^n (or R^m)
using RMat = Eigen::MatrixXd;
using CMat = Eigen::MatrixXcd;

/// Riemannian metric given as a callable x -> g(x) (row-major n x n).
struct MetricField {
  int n = 0;
  std::function<void(const double*, double*)> fn;
  bool flat = false;  // constant identity; Christoffel symbols are skipped
  std::string name;

  RMat at(const double* x) const {
    RMat g(n, n);
    std::vector<double> buf(n * n);
    fn(x, buf.data());
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) g(a, b) = buf[a * n + b];
    return g;
  }

  static MetricField euclidean(int n) {
    MetricField m;
    m.n = n;
    m.flat = true;
    m.name = "euclidean";
    m.fn = [n](const double*, double* g) {
      for (int a = 0; a < n * n; ++a) g[a] = 0;
      for (int a = 0; a < n; ++a) g[a * n + a] = 1;
    };
    return m;
  }

  /// c(x) * identity.
  static MetricField conformal_flat(int n, ScalarFn factor, std::string name = "conformal") {
    MetricField m;
    m.n = n;
    m.name = std::move(name);
    m.fn = [n, factor](const double* x, double* g) {
      double c = factor(x);
      for (int a = 0; a < n * n; ++a) g[a] = 0;
      for (int a = 0; a < n; ++a) g[a * n + a] = c;
    };
    return m;
  }

  /// Round metric of the unit sphere in stereographic coordinates.
  static MetricField sphere_stereographic() {
    return conformal_flat(
        2,
        [](const double* x) {
          double s = 1 + x[0] * x[0] + x[1] * x[1];
          return 4.0 / (s * s);
        },
        "sphere-stereographic");
  }

  static MetricField from_expressions(const std::vector<std::vector<std::string>>& entries) {
    const int n = static_cast<int>(entries.size());
    std::vector<Expr> ex;
    for (const auto& row : entries) {
      require(static_cast<int>(row.size()) == n, ErrorKind::config_error, "metric matrix must be square");
      for (const auto& s : row) ex.push_back(Expr::parse(s, n));
    }
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        require(entries[a][b] == entries[b][a], ErrorKind::config_error, "metric expressions must be symmetric");
    MetricField m;
    m.n = n;
    m.name = "expression";
    m.fn = [ex, n](const double* x, double* g) {
      for (int a = 0; a < n * n; ++a) g[a] = ex[a](x).real();
    };
    return m;
  }
};

inline void check_spd(const RMat& g, const char* what) {
  Eigen::SelfAdjointEigenSolver<RMat> es(g, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  double mx = ev.cwiseAbs().maxCoeff();
  if (!(ev.minCoeff() > 1e-12 * mx) || !std::isfinite(mx) || mx == 0)
    fail(ErrorKind::singular_metric, std::string(what) + " is not positive definite");
}

/// sqrt(det g) at x.
inline double volume_density(const MetricField& metric, const double* x) {
  RMat g = metric.at(x);
  check_spd(g, "metric");
  return std::sqrt(g.determinant());
}

/// Gamma^m_{kl} at x, stored [m][k][l]; partials of g by central differences with steps h.
inline std::vector<double> christoffel(const MetricField& metric, const double* x, const std::vector<double>& h,
                                       int fd_order) {
  const int n = metric.n;
  std::vector<double> gam(n * n * n, 0.0);
  if (metric.flat) return gam;
  RMat g = metric.at(x);
  check_spd(g, "metric");
  RMat gi = g.inverse();
  std::vector<double> dg(n * n * n);  // [q][a][b] = d_q g_ab
  for (int q = 0; q < n; ++q) diff_callable<double>(metric.fn, x, n, q, h[q], fd_order, n * n, &dg[q * n * n]);
  auto D = [&](int q, int a, int b) { return dg[q * n * n + a * n + b]; };
  for (int m = 0; m < n; ++m)
    for (int k = 0; k < n; ++k)
      for (int l = k; l < n; ++l) {
        double s = 0;
        for (int q = 0; q < n; ++q) s += gi(m, q) * (D(k, q, l) + D(l, q, k) - D(q, k, l));
        gam[(m * n + k) * n + l] = 0.5 * s;
        gam[(m * n + l) * n + k] = 0.5 * s;
      }
  return gam;
}

/// rho^-2 g.
inline MetricField conformal_rescale(const MetricField& metric, ScalarFn rho) {
  MetricField m;
  m.n = metric.n;
  m.name = metric.name + "/rho^2";
  auto base = metric.fn;
  const int n = metric.n;
  m.fn = [base, rho, n](const double* x, double* g) {
    double r = rho(x);
    if (!(r > 0)) fail(ErrorKind::nonpositive_weight, "rho must be positive");
    base(x, g);
    for (int a = 0; a < n * n; ++a) g[a] /= r * r;
  };
  return m;
}

/// X(phi)Y + Y(phi)X - g0(X,Y) grad_{g0} phi at a point.
inline Eigen::VectorXd levi_civita_difference(const Eigen::VectorXd& X, const Eigen::VectorXd& Y,
                                              const Eigen::VectorXd& dphi, const RMat& g0) {
  Eigen::VectorXd grad = g0.ldlt().solve(dphi);
  return dphi.dot(X) * Y + dphi.dot(Y) * X - X.dot(g0 * Y) * grad;
}

/// Gamma_g - Gamma_{g0} for g = e^{2 phi} g0, stored [m][k][l].
inline std::vector<double> christoffel_difference(const Eigen::VectorXd& dphi, const RMat& g0) {
  const int n = static_cast<int>(dphi.size());
  std::vector<double> d(n * n * n);
  Eigen::VectorXd grad = g0.ldlt().solve(dphi);
  for (int m = 0; m < n; ++m)
    for (int k = 0; k < n; ++k)
      for (int l = 0; l < n; ++l)
        d[(m * n + k) * n + l] = (m == l ? dphi[k] : 0.0) + (m == k ? dphi[l] : 0.0) - g0(k, l) * grad[m];
  return d;
}

/// Chart grid together with sampled metric data.
struct Chart {
  ChartGrid grid;
  MetricField metric;
  std::vector<double> g, ginv, sqrtdet, gamma;
  bool flat = false;

  int n() const { return grid.n; }
  const double* G(std::size_t pt) const { return &g[pt * grid.n * grid.n]; }
  const double* Ginv(std::size_t pt) const { return &ginv[pt * grid.n * grid.n]; }
  const double* Gamma(std::size_t pt) const { return &gamma[pt * grid.n * grid.n * grid.n]; }
};

inline Chart make_chart(const ChartGrid& grid, const MetricField& metric) {
  require(metric.n == grid.n, ErrorKind::chart_mismatch, "metric dimension differs from chart dimension");
  Chart c;
  c.grid = grid;
  c.metric = metric;
  c.flat = metric.flat;
  const int n = grid.n;
  const std::size_t N = grid.size();
  c.g.resize(N * n * n);
  c.ginv.resize(N * n * n);
  c.sqrtdet.resize(N);
  c.gamma.assign(N * n * n * n, 0.0);
  std::vector<double> x(n);
  for (std::size_t pt = 0; pt < N; ++pt) {
    grid.coords(pt, x.data());
    RMat g = metric.at(x.data());
    check_spd(g, "metric");
    RMat gi = g.inverse();
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        c.g[pt * n * n + a * n + b] = 0.5 * (g(a, b) + g(b, a));
        c.ginv[pt * n * n + a * n + b] = 0.5 * (gi(a, b) + gi(b, a));
      }
    c.sqrtdet[pt] = std::sqrt(g.determinant());
    if (!c.flat) {
      auto gam = christoffel(metric, x.data(), grid.h, grid.fd_order);
      std::copy(gam.begin(), gam.end(), c.gamma.begin() + pt * n * n * n);
    }
  }
  return c;
}

/// Positive weights rho, f0 with phi = log rho.
struct WeightPair {
  ScalarFn rho;
  ScalarFn f0;
  bool admissible = false;
  double admissibility_bound = 1e6;

  double phi(const double* x) const { return std::log(rho(x)); }
};

/// Validates positivity on the grid; for admissible weights returns sup |rho^-1 d rho|_{g0}.
inline double check_weight(const Chart& chart, const WeightPair& w) {
  const auto& G = chart.grid;
  const int n = G.n;
  std::vector<double> x(n);
  double sup = 0;
  for (std::size_t pt = 0; pt < G.size(); ++pt) {
    G.coords(pt, x.data());
    double r = w.rho(x.data()), f = w.f0(x.data());
    if (!(r > 0)) fail(ErrorKind::nonpositive_weight, "rho is not positive on the grid");
    if (!(f > 0)) fail(ErrorKind::nonpositive_weight, "f0 is not positive on the grid");
    if (!w.admissible) continue;
    // |rho^-1 d rho|_{g0} equals |d rho|_g since g0 = rho^-2 g.
    std::vector<double> dr(n);
    auto rf = [&](const double* y, double* out) { out[0] = w.rho(y); };
    for (int k = 0; k < n; ++k) diff_callable<double>(rf, x.data(), n, k, G.h[k], G.fd_order, 1, &dr[k]);
    double s = 0;
    const double* gi = chart.Ginv(pt);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) s += gi[a * n + b] * dr[a] * dr[b];
    sup = std::max(sup, std::sqrt(std::max(0.0, s)));
  }
  if (w.admissible && (!std::isfinite(sup) || sup > w.admissibility_bound))
    fail(ErrorKind::nonadmissible_weight, "rho^-1 d rho is not bounded in the rescaled metric");
  return sup;
}

}  // namespace nabla
