#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "nabla/errors.hpp"

namespace nabla {

using cplx = std::complex<double>;

/// Uniform tensor-product grid over a box. Axis 0 varies slowest.
struct ChartGrid {
  int n = 0;
  std::vector<double> lo, hi, h;
  std::vector<int> count;
  std::vector<std::size_t> stride;
  int margin = 0;
  int fd_order = 4;
  double support_tol = 1e-8;

  static ChartGrid box(const std::vector<double>& lo, const std::vector<double>& hi,
                       const std::vector<int>& count, int margin, int fd_order = 4,
                       double support_tol = 1e-8) {
    ChartGrid g;
    g.n = static_cast<int>(lo.size());
    g.lo = lo;
    g.hi = hi;
    g.count = count;
    g.margin = margin;
    g.fd_order = fd_order;
    g.support_tol = support_tol;
    require(g.n >= 1, ErrorKind::config_error, "chart dimension must be at least 1");
    require(hi.size() == lo.size() && count.size() == lo.size(), ErrorKind::config_error,
            "box and point counts must have one entry per axis");
    require(fd_order == 2 || fd_order == 4, ErrorKind::config_error, "fd_order must be 2 or 4");
    require(support_tol > 0, ErrorKind::config_error, "support_tol must be positive");
    g.h.resize(g.n);
    for (int k = 0; k < g.n; ++k) {
      require(hi[k] > lo[k], ErrorKind::config_error, "empty box along axis " + std::to_string(k + 1));
      require(count[k] >= 2 * margin + 3, ErrorKind::config_error,
              "too few points along axis " + std::to_string(k + 1) + " for the support margin");
      g.h[k] = (hi[k] - lo[k]) / (count[k] - 1);
    }
    require(margin >= g.radius(), ErrorKind::config_error, "support margin smaller than the stencil radius");
    g.stride.assign(g.n, 1);
    for (int k = g.n - 2; k >= 0; --k) g.stride[k] = g.stride[k + 1] * static_cast<std::size_t>(count[k + 1]);
    return g;
  }

  /// Same box with `points` nodes on every axis.
  static ChartGrid cube(int n, double lo, double hi, int points, int margin, int fd_order = 4,
                        double support_tol = 1e-8) {
    return box(std::vector<double>(n, lo), std::vector<double>(n, hi), std::vector<int>(n, points), margin,
               fd_order, support_tol);
  }

  int radius() const { return fd_order / 2; }

  std::size_t size() const {
    std::size_t s = 1;
    for (int c : count) s *= static_cast<std::size_t>(c);
    return s;
  }

  int axis_index(std::size_t idx, int k) const { return static_cast<int>((idx / stride[k]) % count[k]); }

  void coords(std::size_t idx, double* x) const {
    for (int k = 0; k < n; ++k) x[k] = lo[k] + h[k] * axis_index(idx, k);
  }

  std::vector<double> point(std::size_t idx) const {
    std::vector<double> x(n);
    coords(idx, x.data());
    return x;
  }

  /// Distance, in grid layers, from the nearest face of the box.
  int layer(std::size_t idx) const {
    int best = count[0];
    for (int k = 0; k < n; ++k) {
      int i = axis_index(idx, k);
      best = std::min(best, std::min(i, count[k] - 1 - i));
    }
    return best;
  }

  double quad_weight(std::size_t idx) const {
    double w = 1.0;
    for (int k = 0; k < n; ++k) {
      int i = axis_index(idx, k);
      w *= (i == 0 || i == count[k] - 1) ? 0.5 * h[k] : h[k];
    }
    return w;
  }

  double max_h() const {
    double m = 0;
    for (double v : h) m = std::max(m, v);
    return m;
  }

  bool same_as(const ChartGrid& o) const {
    return n == o.n && lo == o.lo && hi == o.hi && count == o.count && fd_order == o.fd_order;
  }
};

inline void require_same_chart(const ChartGrid& a, const ChartGrid& b) {
  require(a.same_as(b), ErrorKind::chart_mismatch, "objects live on different chart grids");
}

/// Antisymmetric central weights c_s for offsets +-s, s = 1..radius.
inline std::vector<double> stencil_weights(int fd_order) {
  if (fd_order == 2) return {0.5};
  return {2.0 / 3.0, -1.0 / 12.0};
}

enum class Extension {
  zero,      // values outside the box are zero (compactly supported data)
  interior,  // results within one stencil radius of the faces are set to zero
};

/// d/dx_k of a field with `comps` values per grid point.
template <class T>
void diff_axis(const ChartGrid& G, const T* f, std::size_t comps, int k, T* out, Extension ext) {
  const auto c = stencil_weights(G.fd_order);
  const int r = G.radius();
  const std::size_t N = G.size();
  const std::size_t st = G.stride[k] * comps;
  const double inv_h = 1.0 / G.h[k];
  for (std::size_t idx = 0; idx < N; ++idx) {
    const int i = G.axis_index(idx, k);
    T* o = out + idx * comps;
    const T* fp = f + idx * comps;
    if (ext == Extension::interior && (i < r || i >= G.count[k] - r)) {
      for (std::size_t a = 0; a < comps; ++a) o[a] = T(0);
      continue;
    }
    for (std::size_t a = 0; a < comps; ++a) o[a] = T(0);
    for (int s = 1; s <= r; ++s) {
      const bool up = i + s < G.count[k];
      const bool dn = i - s >= 0;
      for (std::size_t a = 0; a < comps; ++a) {
        T v(0);
        if (up) v += fp[a + s * st];
        if (dn) v -= fp[a - s * st];
        o[a] += c[s - 1] * v;
      }
    }
    for (std::size_t a = 0; a < comps; ++a) o[a] *= inv_h;
  }
}

/// Central difference of a callable f: R^n -> R^m (or C^m) along axis k with step h.
template <class T, class F>
void diff_callable(const F& f, const double* x, int n, int k, double h, int fd_order, std::size_t m, T* out) {
  const auto c = stencil_weights(fd_order);
  std::vector<double> y(x, x + n);
  std::vector<T> fp(m), fm(m);
  for (std::size_t a = 0; a < m; ++a) out[a] = T(0);
  for (std::size_t s = 1; s <= c.size(); ++s) {
    y[k] = x[k] + s * h;
    f(y.data(), fp.data());
    y[k] = x[k] - s * h;
    f(y.data(), fm.data());
    for (std::size_t a = 0; a < m; ++a) out[a] += c[s - 1] * (fp[a] - fm[a]);
  }
  for (std::size_t a = 0; a < m; ++a) out[a] /= h;
}

inline std::size_t ipow(int base, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= static_cast<std::size_t>(base);
  return r;
}

}  // namespace nabla
