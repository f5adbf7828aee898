#include <catch2/catch_amalgamated.hpp>

#include "nabla/nabla.hpp"

using namespace nabla;

namespace {

double rel(const TensorSection& a, const TensorSection& b) { return (a - b).max_abs() / std::max(b.max_abs(), 1e-300); }

struct Flat {
  ChartGrid G = ChartGrid::cube(2, -1, 1, 129, 16);
  Chart chart = make_chart(G, MetricField::euclidean(2));
  BundlePtr mag = std::make_shared<Bundle>(make_bundle(G, BundleSpec::magnetic_example()));
  BundlePtr line = std::make_shared<Bundle>(make_bundle(G, BundleSpec::trivial(2, 1)));
  GeneratorSystem gs = build_generators(EmbeddingSpec::identity(2), chart);
  StructureFunctions sf = structure_functions(chart, gs);
};

struct Sphere {
  ChartGrid G = ChartGrid::cube(2, -1, 1, 129, 16);
  Chart chart = make_chart(G, MetricField::sphere_stereographic());
  BundlePtr mag = std::make_shared<Bundle>(make_bundle(G, BundleSpec::magnetic_example()));
  GeneratorSystem gs = build_generators(EmbeddingSpec::sphere_ambient(), chart);
  StructureFunctions sf = structure_functions(chart, gs);
};

MixedOpSpec single(const ChartGrid& G, BundlePtr E, const GeneratorSystem& gs, std::vector<int> labels) {
  MixedOpSpec M;
  M.E = M.F = E;
  MixedTerm t;
  t.a = HomField::identity(G, 0, E->d);
  for (int j : labels) t.X.push_back({j, gs.fields[j]});
  M.terms.push_back(t);
  return M;
}

// trace of the metric on the two new slots, as a coefficient rank 2 -> rank 0
HomField laplace_coefficient(const ChartGrid& G, int d) {
  HomField a = HomField::zeros(G, 2, d, 0, d);
  for (std::size_t pt = 0; pt < G.size(); ++pt)
    for (int k = 0; k < 2; ++k)
      for (int e = 0; e < d; ++e) a.at(pt)[e * (4 * d) + (k * 2 + k) * d + e] = 1.0;
  return a;
}

}  // namespace

TEST_CASE("nabla operators", "[operators]") {
  Flat f;
  Rng rng(1);
  auto u = checks::centred_section(f.G, 0, 2, rng);
  CHECK(rel(apply_nabla_op(f.chart, identity_op(f.G, f.mag), u), u) == 0.0);
  SECTION("flat Laplacian") {
    const double w = 0.15;
    auto G = ChartGrid::cube(2, -1, 1, 257, 16);
    Chart chart = make_chart(G, MetricField::euclidean(2));
    auto line = std::make_shared<Bundle>(make_bundle(G, BundleSpec::trivial(2, 1)));
    auto g = TensorSection::sample(G, 0, 1, [w](const double* x, cplx* o) {
      o[0] = std::exp(-(x[0] * x[0] + x[1] * x[1]) / (w * w));
    });
    auto want = TensorSection::sample(G, 0, 1, [w](const double* x, cplx* o) {
      const double r2 = x[0] * x[0] + x[1] * x[1];
      o[0] = (4 * r2 / (w * w * w * w) - 4 / (w * w)) * std::exp(-r2 / (w * w));
    });
    NablaOpSpec L = NablaOpSpec::empty(line, line, 0, 0, 2, G);
    L.coef[2] = laplace_coefficient(G, 1);
    CHECK(rel(apply_nabla_op(chart, L, g), want) < 1e-4);
  }
  SECTION("contraction with e2 gives d2 + A2") {
    NablaOpSpec P = NablaOpSpec::empty(f.mag, f.mag, 0, 0, 1, f.G);
    P.coef[1] = HomField::zeros(f.G, 1, 2, 0, 2);
    for (std::size_t pt = 0; pt < f.G.size(); ++pt)
      for (int a = 0; a < 2; ++a) P.coef[1].at(pt)[a * 4 + 2 + a] = 1.0;
    CHECK(rel(apply_nabla_op(f.chart, P, u), multiindex_derivative(f.chart, *f.mag, u, {1})) < 1e-14);
  }
  SECTION("shape checks") {
    auto v = checks::centred_section(f.G, 0, 1, rng);
    CHECK_THROWS_AS(apply_nabla_op(f.chart, identity_op(f.G, f.mag), v), Error);
    CHECK_THROWS_AS(compose(f.chart, identity_op(f.G, f.line), identity_op(f.G, f.mag)), Error);
  }
}

TEST_CASE("composition", "[operators]") {
  Flat f;
  Rng rng(2);
  auto u = checks::centred_section(f.G, 0, 2, rng);
  NablaOpSpec P = NablaOpSpec::empty(f.mag, f.mag, 0, 0, 1, f.G);
  P.coef[0] = checks::random_hom(f.G, 0, 2, 0, 2, rng, 0.5, 1.0);
  P.coef[1] = checks::random_hom(f.G, 1, 2, 0, 2, rng, 0.5, 1.0);
  SECTION("identity on the left") {
    auto R = compose(f.chart, identity_op(f.G, f.mag), P);
    for (int j = 0; j <= 1; ++j)
      for (std::size_t i = 0; i < P.coef[j].m.size(); ++i) CHECK(std::abs(R.coef[j].m[i] - P.coef[j].m[i]) < 1e-15);
  }
  SECTION("order-zero left factor multiplies coefficients") {
    NablaOpSpec B = NablaOpSpec::empty(f.mag, f.mag, 0, 0, 0, f.G);
    B.coef[0] = checks::random_hom(f.G, 0, 2, 0, 2, rng);
    auto R = compose(f.chart, B, P);
    HomField want = hom_product(B.coef[0], P.coef[1]);
    for (std::size_t i = 0; i < want.m.size(); ++i) CHECK(std::abs(R.coef[1].m[i] - want.m[i]) < 1e-14);
  }
  SECTION("nabla after a nabla is two-route consistent") {
    auto v = checks::centred_section(f.G, 0, 1, rng);
    NablaOpSpec S = NablaOpSpec::empty(f.line, f.line, 0, 0, 1, f.G);
    S.coef[1] = checks::random_hom(f.G, 1, 1, 0, 1, rng, 0.5, 1.0);
    auto R = compose(f.chart, nabla_op(f.G, f.line), S);
    REQUIRE(R.order() == 2);
    auto direct = apply_nabla_op(f.chart, nabla_op(f.G, f.line), apply_nabla_op(f.chart, S, v));
    CHECK(rel(apply_nabla_op(f.chart, R, v), direct) < 1e-4);
  }
  SECTION("magnetic order two after order one") {
    NablaOpSpec Q = NablaOpSpec::empty(f.mag, f.mag, 0, 0, 2, f.G);
    for (int j = 0; j <= 2; ++j) Q.coef[j] = checks::random_hom(f.G, j, 2, 0, 2, rng, 0.5, 1.0);
    auto R = compose(f.chart, Q, P);
    CHECK(R.order() == 3);
    auto direct = apply_nabla_op(f.chart, Q, apply_nabla_op(f.chart, P, u));
    CHECK(rel(apply_nabla_op(f.chart, R, u), direct) < 1e-4);
  }
}

TEST_CASE("mixed operators", "[operators]") {
  Flat f;
  Rng rng(3);
  auto u = checks::centred_section(f.G, 0, 2, rng);
  SECTION("a single coordinate derivative") {
    auto M = single(f.G, f.line, f.gs, {0});
    auto v = checks::centred_section(f.G, 0, 1, rng);
    CHECK(rel(apply_mixed_op(f.chart, M, v), multiindex_derivative(f.chart, *f.line, v, {0})) < 1e-14);
  }
  SECTION("(1, e2, e2) is the magnetic second derivative, by both routes") {
    auto M = single(f.G, f.mag, f.gs, {1, 1});
    auto want = multiindex_derivative(f.chart, *f.mag, u, {1, 1});
    CHECK(rel(apply_mixed_op(f.chart, M, u), want) < 1e-13);
    CHECK(rel(apply_nabla_op(f.chart, mixed_to_nabla(f.chart, M), u), want) < 1e-5);
  }
  SECTION("one field gives a contraction coefficient") {
    MixedOpSpec M;
    M.E = M.F = f.mag;
    MixedTerm t;
    t.a = checks::random_hom(f.G, 0, 2, 0, 2, rng);
    auto X = VectorField::sample(f.G, checks::random_vector_field(2, rng));
    t.X.push_back({-1, X});
    M.terms.push_back(t);
    auto P = mixed_to_nabla(f.chart, M);
    double worst = 0;
    for (std::size_t pt = 0; pt < f.G.size(); pt += 7) {
      CMat iX = CMat::Zero(2, 4);
      for (int k = 0; k < 2; ++k)
        for (int a = 0; a < 2; ++a) iX(a, k * 2 + a) = X.at(pt)[k];
      worst = std::max(worst, (P.coef[1].mat(pt) - t.a.mat(pt) * iX).norm());
    }
    CHECK(worst < 1e-14);
  }
  SECTION("random mixed operators of order three") {
    for (int t = 0; t < 2; ++t) {
      auto M = checks::random_mixed(f.G, f.mag, 3, rng);
      CHECK(rel(apply_nabla_op(f.chart, mixed_to_nabla(f.chart, M), u), apply_mixed_op(f.chart, M, u)) < 1e-3);
    }
  }
}

TEST_CASE("nabla to mixed", "[operators]") {
  Flat f;
  Rng rng(4);
  auto u = checks::centred_section(f.G, 0, 2, rng);
  SECTION("first order with coordinate generators") {
    NablaOpSpec P = NablaOpSpec::empty(f.mag, f.mag, 0, 0, 1, f.G);
    P.coef[1] = checks::random_hom(f.G, 1, 2, 0, 2, rng);
    auto M = nabla_to_mixed(f.chart, P, f.gs, f.sf);
    for (const auto& t : M.terms) {
      if (t.X.size() != 1) {
        CHECK(t.a.max_abs() < 1e-14);
        continue;
      }
      const int j = t.X[0].generator;
      double worst = 0;
      for (std::size_t pt = 0; pt < f.G.size(); pt += 5)
        worst = std::max(worst, (t.a.mat(pt) - P.coef[1].mat(pt).middleCols(2 * j, 2)).norm());
      CHECK(worst < 1e-14);
    }
    CHECK(rel(apply_mixed_op(f.chart, M, u), apply_nabla_op(f.chart, P, u)) < 1e-12);
  }
  SECTION("flat Laplacian is a sum of squares") {
    NablaOpSpec L = NablaOpSpec::empty(f.mag, f.mag, 0, 0, 2, f.G);
    L.coef[2] = laplace_coefficient(f.G, 2);
    auto M = nabla_to_mixed(f.chart, L, f.gs, f.sf);
    int squares = 0;
    for (const auto& t : M.terms) {
      const bool square = t.X.size() == 2 && t.X[0].generator == t.X[1].generator;
      if (square) {
        ++squares;
        CHECK((t.a.mat(100) - CMat::Identity(2, 2)).norm() < 1e-14);
      } else {
        CHECK(t.a.max_abs() < 1e-14);
      }
    }
    CHECK(squares == 2);
  }
  SECTION("second derivatives on the sphere") {
    Sphere s;
    auto v = checks::centred_section(s.G, 0, 2, rng);
    NablaOpSpec P = NablaOpSpec::empty(s.mag, s.mag, 0, 0, 2, s.G);
    for (int j = 0; j <= 2; ++j) P.coef[j] = checks::random_hom(s.G, j, 2, 0, 2, rng, 0.5, 1.0);
    auto M = nabla_to_mixed(s.chart, P, s.gs, s.sf);
    CHECK(rel(apply_mixed_op(s.chart, M, v), apply_nabla_op(s.chart, P, v)) < 1e-4);
    auto N = single(s.G, s.mag, s.gs, {0, 2});
    CHECK(rel(apply_nabla_op(s.chart, mixed_to_nabla(s.chart, N), v), apply_mixed_op(s.chart, N, v)) < 1e-3);
  }
}

TEST_CASE("reordering generator tuples", "[operators]") {
  Flat f;
  Rng rng(5);
  SECTION("sorted input is left alone") {
    auto M = single(f.G, f.mag, f.gs, {0, 1});
    auto R = reorder_generators(f.chart, M, f.gs, f.sf, curvature(f.chart, *f.mag));
    REQUIRE(R.terms.size() >= 1);
    int live = 0;
    for (const auto& t : R.terms)
      if (t.a.max_abs() > 0) {
        ++live;
        CHECK(t.X.size() == 2);
        CHECK(t.X[0].generator == 0);
        CHECK(t.X[1].generator == 1);
      }
    CHECK(live == 1);
  }
  SECTION("flat bundle commutes freely") {
    auto M = single(f.G, f.line, f.gs, {1, 0});
    auto R = reorder_generators(f.chart, M, f.gs, f.sf, curvature(f.chart, *f.line));
    for (const auto& t : R.terms) {
      CHECK(labels_sorted(t.X));
      if (t.X.size() < 2) CHECK(t.a.max_abs() == 0.0);
    }
  }
  SECTION("magnetic swap produces -R12") {
    auto Rc = curvature(f.chart, *f.mag);
    auto M = single(f.G, f.mag, f.gs, {1, 0});
    auto R = reorder_generators(f.chart, M, f.gs, f.sf, Rc);
    bool found = false;
    for (const auto& t : R.terms) {
      CHECK(labels_sorted(t.X));
      if (!t.X.empty()) continue;
      found = true;
      double worst = 0;
      for (std::size_t pt = 0; pt < f.G.size(); pt += 3) worst = std::max(worst, (t.a.mat(pt) + Rc.at(pt, 0, 1)).norm());
      CHECK(worst < 1e-12);
    }
    CHECK(found);
    auto u = checks::centred_section(f.G, 0, 2, rng);
    CHECK(rel(apply_mixed_op(f.chart, R, u), apply_mixed_op(f.chart, M, u)) < 1e-5);
  }
  SECTION("full round trip on the sphere") {
    Sphere s;
    auto r = checks::rewriting_closure(s.chart, s.mag, s.gs, s.sf, curvature(s.chart, *s.mag), 2, 2, 2, rng);
    CHECK(r.sorted);
    CHECK(r.residual < 1e-3);
  }
}

TEST_CASE("mapping bounds", "[operators]") {
  Flat f;
  Rng rng(6);
  std::vector<TensorSection> samples;
  for (int t = 0; t < 4; ++t) samples.push_back(checks::centred_section(f.G, 0, 2, rng));
  auto id = mapping_bound_check(f.chart, identity_op(f.G, f.mag), 1, 2.0, samples);
  CHECK(id.max_ratio <= 1 + 1e-12);
  CHECK(id.pass);
  auto d = mapping_bound_check(f.chart, nabla_op(f.G, f.line), 1, 2.0,
                               {checks::centred_section(f.G, 0, 1, rng), checks::centred_section(f.G, 0, 1, rng)});
  CHECK(d.max_ratio <= 1 + 1e-12);
  NablaOpSpec P = NablaOpSpec::empty(f.mag, f.mag, 0, 0, 2, f.G);
  for (int j = 0; j <= 2; ++j) P.coef[j] = checks::random_hom(f.G, j, 2, 0, 2, rng);
  CHECK(mapping_bound_check(f.chart, P, 1, 2.0, samples).pass);
}
