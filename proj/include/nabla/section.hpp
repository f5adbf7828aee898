#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "nabla/errors.hpp"
#include "nabla/grid.hpp"
#include "nabla/random.hpp"

namespace nabla {

/// Grid samples of a section of T*^{(x)r} (x) E. Per point: n^r slots times d fiber entries,
/// slot multi-index row-major with the leftmost slot most significant.
struct TensorSection {
  ChartGrid grid;
  int rank = 0;
  int d = 1;
  std::vector<cplx> v;

  int n() const { return grid.n; }
  std::size_t slots() const { return ipow(grid.n, rank); }
  std::size_t comps() const { return slots() * static_cast<std::size_t>(d); }
  cplx* at(std::size_t pt) { return &v[pt * comps()]; }
  const cplx* at(std::size_t pt) const { return &v[pt * comps()]; }

  static TensorSection zeros(const ChartGrid& g, int rank, int d) {
    TensorSection s;
    s.grid = g;
    s.rank = rank;
    s.d = d;
    s.v.assign(g.size() * s.comps(), cplx(0));
    return s;
  }

  static TensorSection sample(const ChartGrid& g, int rank, int d, const std::function<void(const double*, cplx*)>& f) {
    TensorSection s = zeros(g, rank, d);
    std::vector<double> x(g.n);
    for (std::size_t pt = 0; pt < g.size(); ++pt) {
      g.coords(pt, x.data());
      f(x.data(), s.at(pt));
    }
    return s;
  }

  double max_abs() const {
    double m = 0;
    for (const auto& z : v) m = std::max(m, std::abs(z));
    return m;
  }

  TensorSection& operator+=(const TensorSection& o) {
    check_shape(o);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
    return *this;
  }
  TensorSection& operator-=(const TensorSection& o) {
    check_shape(o);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= o.v[i];
    return *this;
  }
  TensorSection& operator*=(cplx c) {
    for (auto& z : v) z *= c;
    return *this;
  }
  friend TensorSection operator+(TensorSection a, const TensorSection& b) { return a += b; }
  friend TensorSection operator-(TensorSection a, const TensorSection& b) { return a -= b; }
  friend TensorSection operator*(cplx c, TensorSection a) { return a *= c; }

  void check_shape(const TensorSection& o) const {
    require_same_chart(grid, o.grid);
    require(rank == o.rank && d == o.d, ErrorKind::shape_mismatch, "sections have different rank or fiber dimension");
  }
};

/// Largest |u| over the outer `layers` layers of the grid.
inline double boundary_max(const TensorSection& u, int layers) {
  double m = 0;
  const std::size_t c = u.comps();
  for (std::size_t pt = 0; pt < u.grid.size(); ++pt) {
    if (u.grid.layer(pt) >= layers) continue;
    for (std::size_t a = 0; a < c; ++a) m = std::max(m, std::abs(u.v[pt * c + a]));
  }
  return m;
}

/// Throws SupportViolation unless u is negligible on the layers an order-`derivs` stencil would read past.
inline void check_support(const TensorSection& u, int derivs) {
  if (derivs <= 0) return;
  const int layers = derivs * u.grid.radius();
  if (layers > u.grid.margin)
    fail(ErrorKind::support_violation, "support margin " + std::to_string(u.grid.margin) + " is smaller than " +
                                           std::to_string(layers) + " stencil layers");
  const double scale = u.max_abs();
  if (scale == 0) return;
  const double edge = boundary_max(u, layers);
  if (edge > u.grid.support_tol * scale)
    fail(ErrorKind::support_violation,
         "section does not vanish on the support margin (relative edge value " + std::to_string(edge / scale) + ")");
}

/// Sum of complex-amplitude Gaussians exp(-|x-c_t|^2 / w_t^2) with analytic partials.
struct BumpField {
  int n = 0;
  int comps = 1;
  std::vector<std::vector<double>> centers;
  std::vector<double> widths;
  std::vector<cplx> amps;  // [t][comp]

  struct Params {
    int terms = 2;
    double center_radius = 0.15;
    double width_lo = 0.12;
    double width_hi = 0.16;
  };

  static BumpField random(int n, int comps, Rng& rng, const Params& p) {
    BumpField b;
    b.n = n;
    b.comps = comps;
    for (int t = 0; t < p.terms; ++t) {
      std::vector<double> c(n);
      for (auto& ci : c) ci = rng.uniform(-p.center_radius, p.center_radius);
      b.centers.push_back(c);
      b.widths.push_back(rng.uniform(p.width_lo, p.width_hi));
      for (int a = 0; a < comps; ++a) b.amps.push_back(rng.cnormal());
    }
    return b;
  }

  /// Same bumps translated by `shift` along every axis.
  static BumpField random(int n, int comps, Rng& rng, const Params& p, const std::vector<double>& shift) {
    BumpField b = random(n, comps, rng, p);
    for (auto& c : b.centers)
      for (int k = 0; k < n; ++k) c[k] += shift[k];
    return b;
  }

  double gauss(int t, const double* x) const {
    double s = 0;
    for (int k = 0; k < n; ++k) s += (x[k] - centers[t][k]) * (x[k] - centers[t][k]);
    return std::exp(-s / (widths[t] * widths[t]));
  }

  cplx value(const double* x, int a) const {
    cplx s = 0;
    for (std::size_t t = 0; t < widths.size(); ++t) s += amps[t * comps + a] * gauss(static_cast<int>(t), x);
    return s;
  }

  cplx d1(const double* x, int a, int k) const {
    cplx s = 0;
    for (std::size_t t = 0; t < widths.size(); ++t) {
      double w2 = widths[t] * widths[t];
      s += amps[t * comps + a] * (-2.0 * (x[k] - centers[t][k]) / w2) * gauss(static_cast<int>(t), x);
    }
    return s;
  }

  cplx d2(const double* x, int a, int k, int l) const {
    cplx s = 0;
    for (std::size_t t = 0; t < widths.size(); ++t) {
      double w2 = widths[t] * widths[t];
      double yk = x[k] - centers[t][k], yl = x[l] - centers[t][l];
      double f = 4.0 * yk * yl / (w2 * w2) - (k == l ? 2.0 / w2 : 0.0);
      s += amps[t * comps + a] * f * gauss(static_cast<int>(t), x);
    }
    return s;
  }

  TensorSection sample(const ChartGrid& g, int rank, int d) const {
    require(static_cast<std::size_t>(comps) == ipow(g.n, rank) * d, ErrorKind::shape_mismatch,
            "bump component count does not match the section shape");
    return TensorSection::sample(g, rank, d, [this](const double* x, cplx* out) {
      for (int a = 0; a < comps; ++a) out[a] = value(x, a);
    });
  }
};

/// Random Gaussian-bump section with the given shape.
inline TensorSection random_bump_section(const ChartGrid& g, int rank, int d, Rng& rng,
                                         const BumpField::Params& p = {}) {
  return BumpField::random(g.n, static_cast<int>(ipow(g.n, rank) * d), rng, p).sample(g, rank, d);
}

}  // namespace nabla
