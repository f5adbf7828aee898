#include <catch2/catch_amalgamated.hpp>

#include "nabla/nabla.hpp"

using namespace nabla;

namespace {

struct Setup {
  ChartGrid G = ChartGrid::cube(2, -1, 1, 129, 12);
  Chart chart = make_chart(G, MetricField::euclidean(2));
  Bundle mag = make_bundle(G, BundleSpec::magnetic_example());
  Bundle flat2 = make_bundle(G, BundleSpec::trivial(2, 2));
  Bundle line = make_bundle(G, BundleSpec::trivial(2, 1));
};

double rel(const TensorSection& a, const TensorSection& b) { return (a - b).max_abs() / std::max(b.max_abs(), 1e-300); }

}  // namespace

TEST_CASE("covariant derivative basics", "[connection]") {
  Setup s;
  SECTION("constants are parallel for the flat bundle") {
    auto G = ChartGrid::cube(2, -1, 1, 33, 4);
    Chart c = make_chart(G, MetricField::euclidean(2));
    Bundle b = make_bundle(G, BundleSpec::trivial(2, 1));
    TensorSection one = TensorSection::sample(G, 0, 1, [](const double*, cplx* o) { o[0] = 1; });
    auto d = detail::nabla_once(c, b, one, Extension::interior);
    CHECK(d.max_abs() < 1e-12);
  }
  SECTION("magnetic connection on scalar-rank sections is d + A") {
    Rng rng(1);
    auto u = checks::centred_section(s.G, 0, 2, rng);
    auto du = covariant_derivative(s.chart, s.mag, u);
    auto dflat = covariant_derivative(s.chart, s.flat2, u);
    std::vector<double> x(2);
    double worst = 0;
    for (std::size_t pt = 0; pt < s.G.size(); ++pt) {
      s.G.coords(pt, x.data());
      CMat A2 = BundleSpec::magnetic_example().potential(1, x.data());
      for (int a = 0; a < 2; ++a) {
        cplx want = dflat.at(pt)[2 + a] + A2(a, 0) * u.at(pt)[0] + A2(a, 1) * u.at(pt)[1];
        worst = std::max(worst, std::abs(du.at(pt)[2 + a] - want));
        worst = std::max(worst, std::abs(du.at(pt)[a] - dflat.at(pt)[a]));
      }
    }
    CHECK(worst < 1e-13);
  }
  SECTION("cubic polynomials are differentiated exactly at fourth order") {
    auto G = ChartGrid::cube(2, -1, 1, 33, 4);
    Chart c = make_chart(G, MetricField::euclidean(2));
    Bundle b = make_bundle(G, BundleSpec::trivial(2, 1));
    auto p = TensorSection::sample(G, 0, 1, [](const double* x, cplx* o) { o[0] = x[0] * x[0] * x[0] - 2 * x[0] * x[1] * x[1] + x[1]; });
    auto d = detail::nabla_once(c, b, p, Extension::zero);
    std::vector<double> x(2);
    double worst = 0;
    for (std::size_t pt = 0; pt < G.size(); ++pt) {
      if (G.layer(pt) < 2) continue;
      G.coords(pt, x.data());
      worst = std::max(worst, std::abs(d.at(pt)[0] - (3 * x[0] * x[0] - 2 * x[1] * x[1])));
      worst = std::max(worst, std::abs(d.at(pt)[1] - (1 - 4 * x[0] * x[1])));
    }
    CHECK(worst < 1e-11);
  }
}

TEST_CASE("iterated and multi-index derivatives", "[connection]") {
  Setup s;
  Rng rng(2);
  auto u = checks::centred_section(s.G, 0, 2, rng);
  CHECK(rel(iterated_derivative(s.chart, s.mag, u, 0), u) == 0.0);
  CHECK(rel(multiindex_derivative(s.chart, s.mag, u, {}), u) == 0.0);
  SECTION("flat second derivative is the symmetric Hessian") {
    auto H = iterated_derivative(s.chart, s.flat2, u, 2);
    double asym = 0;
    for (std::size_t pt = 0; pt < s.G.size(); ++pt)
      for (int a = 0; a < 2; ++a) asym = std::max(asym, std::abs(H.at(pt)[(0 * 2 + 1) * 2 + a] - H.at(pt)[(1 * 2 + 0) * 2 + a]));
    CHECK(asym < 1e-10 * H.max_abs());
  }
  SECTION("iterated slots agree with multi-index components") {
    auto H = iterated_derivative(s.chart, s.mag, u, 2);
    for (auto idx : std::vector<std::vector<int>>{{0, 1}, {1, 0}, {1, 1}}) {
      auto m = multiindex_derivative(s.chart, s.mag, u, idx);
      double worst = 0;
      for (std::size_t pt = 0; pt < s.G.size(); ++pt)
        for (int a = 0; a < 2; ++a)
          worst = std::max(worst, std::abs(H.at(pt)[(idx[0] * 2 + idx[1]) * 2 + a] - m.at(pt)[a]));
      CHECK(worst < 1e-12 * m.max_abs());
    }
  }
  SECTION("magnetic closed forms") {
    auto r = checks::magnetic_closed_forms(s.chart, 3, rng);
    CHECK(r.fd_route < 1e-5);
    CHECK(r.analytic < 1e-2);
  }
}

TEST_CASE("directional derivatives", "[connection]") {
  Setup s;
  Rng rng(4);
  auto u = checks::centred_section(s.G, 0, 2, rng);
  auto full = covariant_derivative(s.chart, s.mag, u);
  SECTION("coordinate fields pick a component") {
    auto d = directional_derivative(s.chart, s.mag, u, VectorField::coordinate(s.G, 1));
    CHECK(rel(d, multiindex_derivative(s.chart, s.mag, u, {1})) < 1e-13);
  }
  SECTION("tensorial in the field") {
    auto f = [](const double* x) { return 1 + 0.5 * std::sin(x[0] + 2 * x[1]); };
    auto Y = [](const double* x, double* o) {
      o[0] = std::cos(x[1]);
      o[1] = x[0];
    };
    auto fY = VectorField::sample(s.G, [&](const double* x, double* o) {
      Y(x, o);
      o[0] *= f(x);
      o[1] *= f(x);
    });
    auto dY = directional_derivative(s.chart, s.mag, u, VectorField::sample(s.G, Y));
    detail::scale_pointwise(dY, f);
    CHECK(rel(directional_derivative(s.chart, s.mag, u, fY), dY) < 1e-12);
  }
  SECTION("direct stencil along a field agrees with contracting the gradient") {
    auto X = VectorField::sample(s.G, checks::random_vector_field(2, rng));
    CHECK(rel(directional_derivative(s.chart, s.mag, u, X), contract_leading(full, X)) < 1e-12);
  }
}

TEST_CASE("curvature", "[connection]") {
  Setup s;
  auto Rf = curvature(s.chart, s.flat2);
  double m = 0;
  for (auto z : Rf.R) m = std::max(m, std::abs(z));
  CHECK(m == 0.0);
  SECTION("magnetic R12 = d1 A2") {
    auto R = curvature(s.chart, s.mag);
    std::vector<double> x(2);
    double worst = 0;
    for (std::size_t pt = 0; pt < s.G.size(); ++pt) {
      s.G.coords(pt, x.data());
      const cplx e = std::exp(cplx(0, x[0] * x[0] * x[0]));
      CMat want = CMat::Zero(2, 2);
      want(0, 1) = cplx(0, 3 * x[0] * x[0]) * e;
      want(1, 0) = cplx(0, 3 * x[0] * x[0]) * std::conj(e);
      worst = std::max(worst, (R.at(pt, 0, 1) - want).norm());
      worst = std::max(worst, (R.at(pt, 1, 0) + want).norm());
    }
    // d1 of e^{i x1^3} carries h^4 |d^5 A| / 30
    CHECK(worst < 1e-5);
  }
  SECTION("abelian potential") {
    // A_k = i alpha_k Id with alpha = (x2^2, x1 x2): R_12 = i (x2 - 2 x2) Id
    auto E = BundleSpec::from_expressions(2, {{{"i*x2^2", "0"}, {"0", "i*x2^2"}}, {{"i*x1*x2", "0"}, {"0", "i*x1*x2"}}});
    Bundle b = make_bundle(s.G, E);
    auto R = curvature(s.chart, b);
    std::vector<double> x(2);
    double worst = 0;
    for (std::size_t pt = 0; pt < s.G.size(); pt += 7) {
      s.G.coords(pt, x.data());
      worst = std::max(worst, (R.at(pt, 0, 1) - cplx(0, -x[1]) * CMat::Identity(2, 2)).norm());
    }
    CHECK(worst < 1e-9);
  }
  SECTION("commutator of covariant derivatives") {
    Rng rng(6);
    auto E = std::make_shared<Bundle>(s.mag);
    CHECK(checks::curvature_residual(s.chart, E, 3, rng) < 1e-5);
  }
}

TEST_CASE("divergence", "[connection]") {
  Setup s;
  auto rot = [](const double* x, double* o) {
    o[0] = -x[1];
    o[1] = x[0];
  };
  auto radial = [](const double* x, double* o) {
    o[0] = x[0];
    o[1] = x[1];
  };
  for (double v : divergence(s.chart, rot)) CHECK(std::abs(v) < 1e-12);
  for (double v : divergence(s.chart, radial)) CHECK(v == Catch::Approx(2.0).margin(1e-12));
  SECTION("curved metric agrees with the density form") {
    auto G = ChartGrid::cube(2, -1, 1, 129, 12);
    Chart c = make_chart(G, MetricField::conformal_flat(2, [](const double* x) { return std::exp(-2 * x[0]); }));
    auto X = [](const double* x, double* o) {
      o[0] = std::sin(x[1]) + x[0];
      o[1] = x[0] * x[1];
    };
    auto a = divergence(c, X), b = divergence_density_form(c, X);
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("formal adjoint of a directional derivative", "[connection]") {
  auto G = ChartGrid::cube(2, -1, 1, 257, 12);
  Chart chart = make_chart(G, MetricField::euclidean(2));
  Rng rng(8);
  SECTION("scalar bumps with X = e1") {
    auto E = std::make_shared<Bundle>(make_bundle(G, BundleSpec::trivial(2, 1)));
    auto X = [](const double*, double* o) {
      o[0] = 1;
      o[1] = 0;
    };
    CHECK(checks::adjoint_residual(chart, E, X, 5, rng) < 1e-6);
  }
  SECTION("magnetic bundle with X = e2") {
    auto E = std::make_shared<Bundle>(make_bundle(G, BundleSpec::magnetic_example()));
    auto X = [](const double*, double* o) {
      o[0] = 0;
      o[1] = 1;
    };
    CHECK(checks::adjoint_residual(chart, E, X, 5, rng) < 1e-6);
  }
  SECTION("divergence-free fields give -nabla_X") {
    Bundle b = make_bundle(G, BundleSpec::magnetic_example());
    auto rot = [](const double* x, double* o) {
      o[0] = -x[1];
      o[1] = x[0];
    };
    auto u = checks::centred_section(G, 0, 2, rng);
    auto adj = formal_adjoint_directional(chart, b, rot, u);
    auto d = directional_derivative(chart, b, u, VectorField::sample(G, rot));
    CHECK((adj + d).max_abs() < 1e-10 * d.max_abs());
  }
}
