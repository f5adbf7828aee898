#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "nabla/connection.hpp"
#include "nabla/errors.hpp"
#include "nabla/expr.hpp"
#include "nabla/geometry.hpp"
#include "nabla/norms.hpp"
#include "nabla/random.hpp"

namespace nabla {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Fiberwise injective map Phi(x): T_x M -> R^N (row-major N x n).
struct EmbeddingSpec {
  int n = 0, N = 0;
  std::function<void(const double*, double*)> phi;
  bool isometric = false;
  std::string name;

  RMat at(const double* x) const {
    std::vector<double> buf(N * n);
    phi(x, buf.data());
    return Eigen::Map<RowMat>(buf.data(), N, n);
  }

  static EmbeddingSpec identity(int n) {
    EmbeddingSpec e;
    e.n = e.N = n;
    e.isometric = true;
    e.name = "identity";
    e.phi = [n](const double*, double* out) {
      for (int a = 0; a < n * n; ++a) out[a] = 0;
      for (int a = 0; a < n; ++a) out[a * n + a] = 1;
    };
    return e;
  }

  /// Differential of inverse stereographic projection R^2 -> S^2 in R^3.
  static EmbeddingSpec sphere_ambient() {
    EmbeddingSpec e;
    e.n = 2;
    e.N = 3;
    e.isometric = true;
    e.name = "sphere-ambient";
    e.phi = [](const double* x, double* out) {
      const double s = 1 + x[0] * x[0] + x[1] * x[1];
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) out[a * 2 + b] = (a == b ? 2.0 / s : 0.0) - 4.0 * x[a] * x[b] / (s * s);
      for (int b = 0; b < 2; ++b) out[4 + b] = 4.0 * x[b] / (s * s);
    };
    return e;
  }

  /// Graph of f: Phi = [I; grad f], isometric for the induced metric I + grad f grad f^T.
  static EmbeddingSpec graph(int n, std::function<double(const double*)> f, std::string name = "graph") {
    EmbeddingSpec e;
    e.n = n;
    e.N = n + 1;
    e.isometric = true;
    e.name = std::move(name);
    e.phi = [n, f](const double* x, double* out) {
      for (int a = 0; a < n * n; ++a) out[a] = 0;
      for (int a = 0; a < n; ++a) out[a * n + a] = 1;
      auto ff = [&f](const double* y, double* o) { o[0] = f(y); };
      for (int k = 0; k < n; ++k) diff_callable<double>(ff, x, n, k, 1e-3, 4, 1, &out[n * n + k]);
    };
    return e;
  }

  /// Smoothly varying random full-rank map (not isometric for any particular metric).
  static EmbeddingSpec random(int n, int N, std::uint64_t seed, double wobble = 0.2) {
    require(N >= n, ErrorKind::config_error, "embedding needs N >= n");
    Rng rng(seed, 0x656d62);
    std::vector<double> base(N * n), amp(N * n), phase(N * n), freq(N * n * n);
    for (int a = 0; a < N * n; ++a) {
      base[a] = rng.normal();
      amp[a] = wobble * rng.uniform(-1, 1);
      phase[a] = rng.uniform(0, 6.283185307179586);
    }
    for (auto& f : freq) f = rng.uniform(-1.5, 1.5);
    for (int a = 0; a < n; ++a) base[a * n + a] += 3.0;  // keeps the map well conditioned
    EmbeddingSpec e;
    e.n = n;
    e.N = N;
    e.name = "random";
    e.phi = [=](const double* x, double* out) {
      for (int a = 0; a < N * n; ++a) {
        double arg = phase[a];
        for (int k = 0; k < n; ++k) arg += freq[a * n + k] * x[k];
        out[a] = base[a] + amp[a] * std::sin(arg);
      }
    };
    return e;
  }
};

/// Induced metric Phi^T Phi.
inline MetricField metric_from_embedding(const EmbeddingSpec& e) {
  MetricField m;
  m.n = e.n;
  m.name = "induced(" + e.name + ")";
  m.fn = [e](const double* x, double* g) {
    RMat P = e.at(x);
    RowMat G = P.transpose() * P;
    std::copy(G.data(), G.data() + e.n * e.n, g);
  };
  return m;
}

/// Induced metric of the graph of f.
inline MetricField graph_metric(int n, std::function<double(const double*)> f) {
  return metric_from_embedding(EmbeddingSpec::graph(n, std::move(f)));
}

inline RMat sym_sqrt(const RMat& a, bool inverse) {
  Eigen::SelfAdjointEigenSolver<RMat> es(a);
  const auto& ev = es.eigenvalues();
  if (!(ev.minCoeff() > 1e-12 * ev.cwiseAbs().maxCoeff()))
    fail(ErrorKind::degenerate_embedding, "Phi^T Phi is singular");
  Eigen::VectorXd s = ev.array().sqrt();
  if (inverse) s = s.cwiseInverse();
  return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}

/// Phi (Phi^T Phi)^{-1/2} g^{1/2}, which satisfies Phi'^T Phi' = g.
inline EmbeddingSpec polar_isometrize(const EmbeddingSpec& e, const MetricField& metric) {
  require(e.n == metric.n, ErrorKind::chart_mismatch, "embedding and metric dimensions differ");
  EmbeddingSpec r = e;
  r.isometric = true;
  r.name = "polar(" + e.name + ")";
  r.phi = [e, metric](const double* x, double* out) {
    RMat P = e.at(x);
    RMat g = metric.at(x);
    RowMat Q = P * sym_sqrt(P.transpose() * P, true) * sym_sqrt(g, false);
    std::copy(Q.data(), Q.data() + e.N * e.n, out);
  };
  return r;
}

/// Z_j = Psi e_j with Psi = (Phi^T Phi)^{-1} Phi^T, xi_j = row j of Phi.
struct GeneratorSystem {
  EmbeddingSpec emb;
  ChartGrid grid;
  int n = 0, N = 0;
  std::vector<double> Z, xi;  // [pt][j][n]
  std::vector<VectorField> fields;

  const double* Zp(std::size_t pt, int j) const { return &Z[(pt * N + j) * n]; }
  const double* xip(std::size_t pt, int j) const { return &xi[(pt * N + j) * n]; }

  VecFn field_fn(int j) const {
    const EmbeddingSpec e = emb;
    return [e, j](const double* x, double* out) {
      RMat P = e.at(x);
      RMat PtP = P.transpose() * P;
      Eigen::VectorXd z = PtP.ldlt().solve(P.row(j).transpose());
      for (int a = 0; a < e.n; ++a) out[a] = z[a];
    };
  }
};

inline GeneratorSystem build_generators(const EmbeddingSpec& emb, const Chart& chart) {
  const auto& G = chart.grid;
  require(emb.n == G.n, ErrorKind::chart_mismatch, "embedding dimension differs from the chart");
  GeneratorSystem gs;
  gs.emb = emb;
  gs.grid = G;
  gs.n = G.n;
  gs.N = emb.N;
  const int n = gs.n, N = gs.N;
  gs.Z.resize(G.size() * N * n);
  gs.xi.resize(G.size() * N * n);
  std::vector<double> x(n);
  for (std::size_t pt = 0; pt < G.size(); ++pt) {
    G.coords(pt, x.data());
    RMat P = emb.at(x.data());
    Eigen::JacobiSVD<RMat> svd(P);
    const auto& sv = svd.singularValues();
    if (!(sv[sv.size() - 1] > 1e-12 * std::max(1.0, sv[0])))
      fail(ErrorKind::degenerate_embedding, "Phi is not injective at a grid point");
    RMat Psi = (P.transpose() * P).ldlt().solve(P.transpose());
    if (emb.isometric) {
      Eigen::Map<const RowMat> g(chart.G(pt), n, n);
      require((P.transpose() * P - RMat(g)).norm() <= 1e-8 * g.norm(), ErrorKind::config_error,
              "embedding flagged isometric but Phi^T Phi differs from the metric");
    }
    for (int j = 0; j < N; ++j)
      for (int a = 0; a < n; ++a) {
        gs.Z[(pt * N + j) * n + a] = Psi(a, j);
        gs.xi[(pt * N + j) * n + a] = P(j, a);
      }
  }
  for (int j = 0; j < N; ++j) {
    VectorField f;
    f.grid = G;
    f.fn = gs.field_fn(j);
    f.v.resize(G.size() * n);
    for (std::size_t pt = 0; pt < G.size(); ++pt)
      for (int a = 0; a < n; ++a) f.v[pt * n + a] = gs.Z[(pt * N + j) * n + a];
    gs.fields.push_back(std::move(f));
  }
  return gs;
}

/// max over grid points of |Psi Phi - 1| (entrywise).
inline double psi_phi_residual(const GeneratorSystem& gs) {
  double worst = 0;
  const int n = gs.n, N = gs.N;
  for (std::size_t pt = 0; pt < gs.grid.size(); ++pt)
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        double s = 0;
        for (int j = 0; j < N; ++j) s += gs.Zp(pt, j)[a] * gs.xip(pt, j)[b];
        worst = std::max(worst, std::abs(s - (a == b ? 1.0 : 0.0)));
      }
  return worst;
}

/// Largest relative error of X = sum xi_j(X) Z_j and w = sum w(Z_j) xi_j over random vectors.
inline double reconstruction_residual(const GeneratorSystem& gs, int trials, std::uint64_t seed) {
  Rng rng(seed, 0x726563);
  const int n = gs.n, N = gs.N;
  double worst = 0;
  for (std::size_t pt = 0; pt < gs.grid.size(); ++pt)
    for (int t = 0; t < trials; ++t) {
      Eigen::VectorXd X(n), w(n), Xr = Eigen::VectorXd::Zero(n), wr = Eigen::VectorXd::Zero(n);
      for (int a = 0; a < n; ++a) {
        X[a] = rng.normal();
        w[a] = rng.normal();
      }
      for (int j = 0; j < N; ++j) {
        Eigen::Map<const Eigen::VectorXd> z(gs.Zp(pt, j), n), x(gs.xip(pt, j), n);
        Xr += x.dot(X) * z;
        wr += w.dot(z) * x;
      }
      worst = std::max(worst, (Xr - X).norm() / X.norm());
      worst = std::max(worst, (wr - w).norm() / w.norm());
    }
  return worst;
}

/// sum_j xi_j (x) nabla_{Z_j} u.
inline TensorSection nabla_via_generators(const Chart& chart, const Bundle& bundle, const GeneratorSystem& gs,
                                          const TensorSection& u) {
  require_same_chart(chart.grid, gs.grid);
  check_support(u, 1);
  const int n = gs.n;
  TensorSection out = TensorSection::zeros(u.grid, u.rank + 1, u.d);
  const std::size_t C = u.comps();
  for (int j = 0; j < gs.N; ++j) {
    TensorSection dj = directional_derivative(chart, bundle, u, gs.fields[j], false);
    for (std::size_t pt = 0; pt < u.grid.size(); ++pt) {
      const double* x = gs.xip(pt, j);
      for (int k = 0; k < n; ++k)
        for (std::size_t a = 0; a < C; ++a) out.at(pt)[k * C + a] += x[k] * dj.at(pt)[a];
    }
  }
  return out;
}

namespace detail {
/// (nabla_Y X) at a point for closed-form X, Y given by value.
inline Eigen::VectorXd covariant_of_field(const Chart& chart, std::size_t pt, const VecFn& X, const double* Y) {
  const auto& G = chart.grid;
  const int n = G.n;
  std::vector<double> x(n), dX(n), Xv(n);
  G.coords(pt, x.data());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (int b = 0; b < n; ++b) {
    if (Y[b] == 0) continue;
    diff_callable<double>(X, x.data(), n, b, G.h[b], G.fd_order, n, dX.data());
    for (int a = 0; a < n; ++a) out[a] += Y[b] * dX[a];
  }
  if (!chart.flat) {
    X(x.data(), Xv.data());
    const double* gam = chart.Gamma(pt);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        for (int c = 0; c < n; ++c) out[a] += gam[(a * n + b) * n + c] * Y[b] * Xv[c];
  }
  return out;
}
}  // namespace detail

/// sum_{k,l} (xi_k, xi_l) (nabla_{Z_k} X, Z_l).
inline std::vector<double> divergence_via_generators(const Chart& chart, const GeneratorSystem& gs, const VecFn& X) {
  const int n = gs.n, N = gs.N;
  std::vector<double> out(chart.grid.size());
  for (std::size_t pt = 0; pt < chart.grid.size(); ++pt) {
    Eigen::Map<const RowMat> g(chart.G(pt), n, n), gi(chart.Ginv(pt), n, n);
    std::vector<Eigen::VectorXd> DX(N);
    for (int k = 0; k < N; ++k) DX[k] = detail::covariant_of_field(chart, pt, X, gs.Zp(pt, k));
    double s = 0;
    for (int k = 0; k < N; ++k)
      for (int l = 0; l < N; ++l) {
        Eigen::Map<const Eigen::VectorXd> xk(gs.xip(pt, k), n), xl(gs.xip(pt, l), n), zl(gs.Zp(pt, l), n);
        s += xk.dot(gi * xl) * DX[k].dot(g * zl);
      }
    out[pt] = s;
  }
  return out;
}

/// G_ij^k = xi_k(nabla_{Z_i} Z_j), L_ij^k = xi_k([Z_i, Z_j]), stored [pt][i][j][k].
struct StructureFunctions {
  int N = 0;
  std::vector<double> G, L;
  double expansion_residual = 0;  // |nabla_{Z_i} Z_j - sum_k G_ij^k Z_k|, relative
  double torsion_residual = 0;    // |G_ij - G_ji - L_ij|, relative

  double g(std::size_t pt, int i, int j, int k) const { return G[((pt * N + i) * N + j) * N + k]; }
  double l(std::size_t pt, int i, int j, int k) const { return L[((pt * N + i) * N + j) * N + k]; }
};

inline StructureFunctions structure_functions(const Chart& chart, const GeneratorSystem& gs) {
  const auto& Gd = chart.grid;
  const int n = gs.n, N = gs.N;
  StructureFunctions sf;
  sf.N = N;
  sf.G.resize(Gd.size() * N * N * N);
  sf.L.resize(Gd.size() * N * N * N);
  std::vector<VecFn> fns;
  for (int j = 0; j < N; ++j) fns.push_back(gs.field_fn(j));
  double scale = 0;
  for (std::size_t pt = 0; pt < Gd.size(); ++pt) {
    std::vector<double> x(n);
    Gd.coords(pt, x.data());
    // flat partial derivatives of each Z_j: dZ[j][b] = d_b Z_j
    std::vector<std::vector<Eigen::VectorXd>> dZ(N, std::vector<Eigen::VectorXd>(n, Eigen::VectorXd(n)));
    for (int j = 0; j < N; ++j)
      for (int b = 0; b < n; ++b) diff_callable<double>(fns[j], x.data(), n, b, Gd.h[b], Gd.fd_order, n, dZ[j][b].data());
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        Eigen::Map<const Eigen::VectorXd> zi(gs.Zp(pt, i), n), zj(gs.Zp(pt, j), n);
        Eigen::VectorXd dij = Eigen::VectorXd::Zero(n), dji = Eigen::VectorXd::Zero(n);
        for (int b = 0; b < n; ++b) {
          dij += zi[b] * dZ[j][b];
          dji += zj[b] * dZ[i][b];
        }
        Eigen::VectorXd cov = dij;
        if (!chart.flat) {
          const double* gam = chart.Gamma(pt);
          for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
              for (int c = 0; c < n; ++c) cov[a] += gam[(a * n + b) * n + c] * zi[b] * zj[c];
        }
        Eigen::VectorXd br = dij - dji;
        Eigen::VectorXd expand = Eigen::VectorXd::Zero(n);
        for (int k = 0; k < N; ++k) {
          Eigen::Map<const Eigen::VectorXd> xk(gs.xip(pt, k), n), zk(gs.Zp(pt, k), n);
          double gk = xk.dot(cov), lk = xk.dot(br);
          sf.G[((pt * N + i) * N + j) * N + k] = gk;
          sf.L[((pt * N + i) * N + j) * N + k] = lk;
          expand += gk * zk;
        }
        scale = std::max(scale, cov.norm());
        sf.expansion_residual = std::max(sf.expansion_residual, (cov - expand).norm());
      }
  }
  for (std::size_t pt = 0; pt < Gd.size(); ++pt)
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        for (int k = 0; k < N; ++k)
          sf.torsion_residual =
              std::max(sf.torsion_residual, std::abs(sf.g(pt, i, j, k) - sf.g(pt, j, i, k) - sf.l(pt, i, j, k)));
  if (scale > 0) {
    sf.expansion_residual /= scale;
    sf.torsion_residual /= scale;
  }
  return sf;
}

/// Components w(Z_{k_1}, ..., Z_{k_mu}) indexed by k in base N (k_1 most significant).
struct Decomposition {
  int N = 0, mu = 0;
  std::vector<TensorSection> components;

  std::vector<int> label(std::size_t i) const {
    std::vector<int> k(mu);
    for (int s = mu - 1; s >= 0; --s) {
      k[s] = static_cast<int>(i % N);
      i /= N;
    }
    return k;
  }
};

inline Decomposition decompose_tensor(const TensorSection& w, const GeneratorSystem& gs) {
  require_same_chart(w.grid, gs.grid);
  Decomposition dec;
  dec.N = gs.N;
  dec.mu = w.rank;
  const std::size_t count = ipow(gs.N, w.rank);
  for (std::size_t i = 0; i < count; ++i) {
    auto k = dec.label(i);
    TensorSection c = w;
    for (int s = 0; s < w.rank; ++s) c = contract_leading(c, gs.fields[k[s]]);
    dec.components.push_back(std::move(c));
  }
  return dec;
}

/// sum_k xi_{k_1} (x) ... (x) xi_{k_mu} (x) component_k.
inline TensorSection reassemble(const Decomposition& dec, const GeneratorSystem& gs) {
  const ChartGrid& G = gs.grid;
  const int n = gs.n, d = dec.components.empty() ? 1 : dec.components[0].d;
  TensorSection out = TensorSection::zeros(G, dec.mu, d);
  const std::size_t S = out.slots();
  for (std::size_t i = 0; i < dec.components.size(); ++i) {
    auto k = dec.label(i);
    for (std::size_t pt = 0; pt < G.size(); ++pt)
      for (std::size_t slot = 0; slot < S; ++slot) {
        double c = 1;
        std::size_t rest = slot;
        for (int s = dec.mu - 1; s >= 0; --s) {
          c *= gs.xip(pt, k[s])[rest % n];
          rest /= n;
        }
        if (c == 0) continue;
        for (int a = 0; a < d; ++a) out.at(pt)[slot * d + a] += c * dec.components[i].at(pt)[a];
      }
  }
  return out;
}

/// l^p combination of ||nabla_{Z_{k_1}} ... nabla_{Z_{k_j}} u||_{L^p} over tuples of length j <= s;
/// nondecreasing tuples unless all_tuples is set.
inline double generator_sobolev_norm(const Chart& chart, const Bundle& bundle, const GeneratorSystem& gs,
                                     const TensorSection& u, int s, Exponent p, bool all_tuples = false) {
  check_support(u, s);
  std::vector<double> parts;
  std::function<void(const TensorSection&, int, int)> rec = [&](const TensorSection& v, int depth, int first) {
    parts.push_back(lp_norm(chart, bundle, v, p));
    if (depth == s) return;
    const int hi = all_tuples ? gs.N - 1 : first;
    for (int k = 0; k <= hi; ++k) rec(directional_derivative(chart, bundle, v, gs.fields[k], false), depth + 1, k);
  };
  rec(u, 0, gs.N - 1);
  return lp_combine(parts, p);
}

}  // namespace nabla
