#include <catch2/catch_amalgamated.hpp>

#include "nabla/nabla.hpp"

using namespace nabla;
using Catch::Approx;

namespace {

const double kPi = 3.141592653589793;

struct Flat {
  ChartGrid G = ChartGrid::cube(2, -1, 1, 129, 12);
  Chart chart = make_chart(G, MetricField::euclidean(2));
  BundlePtr mag = std::make_shared<Bundle>(make_bundle(G, BundleSpec::magnetic_example()));
  BundlePtr line = std::make_shared<Bundle>(make_bundle(G, BundleSpec::trivial(2, 1)));
  GeneratorSystem gs = build_generators(EmbeddingSpec::identity(2), chart);
};

BidiffSpec unit_form(const ChartGrid& G, BundlePtr E, int i) {
  BidiffSpec b = BidiffSpec::empty(E, E, i, G);
  b.a[i][i] = HomField::identity(G, i, E->d);
  return b;
}

double max_gap(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("pointwise evaluation", "[bidiff]") {
  Flat f;
  Rng rng(1);
  auto u = checks::centred_section(f.G, 0, 2, rng), w = checks::centred_section(f.G, 0, 2, rng);
  SECTION("order zero identity is the fiber inner product") {
    auto v = eval_bidiff(f.chart, unit_form(f.G, f.mag, 0), u, w);
    std::vector<cplx> want(f.G.size());
    for (std::size_t pt = 0; pt < want.size(); ++pt)
      want[pt] = u.at(pt)[0] * std::conj(w.at(pt)[0]) + u.at(pt)[1] * std::conj(w.at(pt)[1]);
    CHECK(max_gap(v, want) < 1e-15);
  }
  SECTION("first order identity is the Dirichlet integrand") {
    auto a = checks::centred_section(f.G, 0, 1, rng), c = checks::centred_section(f.G, 0, 1, rng);
    auto v = eval_bidiff(f.chart, unit_form(f.G, f.line, 1), a, c);
    auto da = covariant_derivative(f.chart, *f.line, a), dc = covariant_derivative(f.chart, *f.line, c);
    std::vector<cplx> want(f.G.size());
    for (std::size_t pt = 0; pt < want.size(); ++pt)
      want[pt] = da.at(pt)[0] * std::conj(dc.at(pt)[0]) + da.at(pt)[1] * std::conj(dc.at(pt)[1]);
    CHECK(max_gap(v, want) < 1e-12);
  }
}

TEST_CASE("bidifferential operators from pairs of operators", "[bidiff]") {
  Flat f;
  Rng rng(2);
  auto u = checks::centred_section(f.G, 0, 2, rng), w = checks::centred_section(f.G, 0, 2, rng);
  auto pair = [&](const NablaOpSpec& P, const NablaOpSpec& Q) {
    auto pu = apply_nabla_op(f.chart, P, u), qw = apply_nabla_op(f.chart, Q, w);
    std::vector<cplx> out(f.G.size());
    for (std::size_t pt = 0; pt < out.size(); ++pt)
      out[pt] = pointwise_inner(f.chart, *P.F, pt, pu.at(pt), qw.at(pt), P.dst_rank, P.F->d);
    return out;
  };
  SECTION("identity pair gives the fiber metric") {
    auto b = bidiff_from_ops(f.chart, identity_op(f.G, f.mag), identity_op(f.G, f.mag));
    CHECK((b.a[0][0].mat(17) - CMat::Identity(2, 2)).norm() < 1e-15);
  }
  SECTION("nabla against nabla gives the cotangent pairing") {
    auto b = bidiff_from_ops(f.chart, nabla_op(f.G, f.line), nabla_op(f.G, f.line));
    REQUIRE(b.m == 1);
    CHECK((b.a[1][1].mat(17) - CMat::Identity(2, 2)).norm() < 1e-15);
    CHECK(b.a[0][0].zero());
  }
  SECTION("a nabla against nabla") {
    NablaOpSpec P = NablaOpSpec::empty(f.mag, f.mag, 0, 1, 1, f.G);
    P.coef[1] = checks::random_hom(f.G, 1, 2, 1, 2, rng);
    auto Q = nabla_op(f.G, f.mag);
    CHECK(max_gap(eval_bidiff(f.chart, bidiff_from_ops(f.chart, P, Q), u, w), pair(P, Q)) < 1e-12);
  }
  SECTION("second order against first order") {
    NablaOpSpec P = NablaOpSpec::empty(f.mag, f.mag, 0, 1, 2, f.G);
    P.coef[2] = checks::random_hom(f.G, 2, 2, 1, 2, rng);
    P.coef[1] = checks::random_hom(f.G, 1, 2, 1, 2, rng);
    auto Q = nabla_op(f.G, f.mag);
    auto b = bidiff_from_ops(f.chart, P, Q);
    CHECK(!b.a[2][1].zero());
    CHECK(max_gap(eval_bidiff(f.chart, b, u, w), pair(P, Q)) < 1e-11);
  }
  SECTION("on a curved metric the pairing is raised by the metric") {
    auto G = ChartGrid::cube(2, -1, 1, 65, 12);
    Chart sph = make_chart(G, MetricField::sphere_stereographic());
    auto E = std::make_shared<Bundle>(make_bundle(G, BundleSpec::magnetic_example()));
    NablaOpSpec P = NablaOpSpec::empty(E, E, 0, 1, 1, G);
    P.coef[1] = checks::random_hom(G, 1, 2, 1, 2, rng);
    auto Q = nabla_op(G, E);
    auto a = checks::centred_section(G, 0, 2, rng), c = checks::centred_section(G, 0, 2, rng);
    auto pa = apply_nabla_op(sph, P, a), qc = apply_nabla_op(sph, Q, c);
    std::vector<cplx> want(G.size());
    for (std::size_t pt = 0; pt < want.size(); ++pt) want[pt] = pointwise_inner(sph, *E, pt, pa.at(pt), qc.at(pt), 1, 2);
    CHECK(max_gap(eval_bidiff(sph, bidiff_from_ops(sph, P, Q), a, c), want) < 1e-12);
  }
}

TEST_CASE("Dirichlet forms", "[bidiff]") {
  Flat f;
  Rng rng(3);
  const double w = 0.15;
  auto g = TensorSection::sample(f.G, 0, 1, [w](const double* x, cplx* o) {
    o[0] = std::exp(-(x[0] * x[0] + x[1] * x[1]) / (w * w));
  });
  SECTION("disjoint supports") {
    auto left = TensorSection::sample(f.G, 0, 1, [](const double* x, cplx* o) {
      o[0] = std::exp(-((x[0] + 0.5) * (x[0] + 0.5) + x[1] * x[1]) / 0.01);
    });
    auto right = TensorSection::sample(f.G, 0, 1, [](const double* x, cplx* o) {
      o[0] = std::exp(-((x[0] - 0.5) * (x[0] - 0.5) + x[1] * x[1]) / 0.01);
    });
    CHECK(std::abs(dirichlet_form(f.chart, unit_form(f.G, f.line, 1), left, right)) < 1e-15);
  }
  SECTION("L2 mass") {
    CHECK(dirichlet_form(f.chart, unit_form(f.G, f.line, 0), g, g).real() == Approx(kPi * w * w / 2).epsilon(1e-10));
  }
  SECTION("energy") {
    auto Gf = ChartGrid::cube(2, -1, 1, 257, 12);
    Chart cf = make_chart(Gf, MetricField::euclidean(2));
    auto lf = std::make_shared<Bundle>(make_bundle(Gf, BundleSpec::trivial(2, 1)));
    auto gf = TensorSection::sample(Gf, 0, 1, [w](const double* x, cplx* o) {
      o[0] = std::exp(-(x[0] * x[0] + x[1] * x[1]) / (w * w));
    });
    CHECK(dirichlet_form(cf, unit_form(Gf, lf, 1), gf, gf).real() == Approx(kPi).epsilon(1e-5));
  }
  SECTION("the form is bounded by its constant") {
    auto b = checks::random_bidiff(f.G, f.mag, 1, rng);
    auto u = checks::centred_section(f.G, 0, 2, rng), v = checks::centred_section(f.G, 0, 2, rng);
    const double bound =
        dirichlet_constant(f.chart, b) * sobolev_norm(f.chart, *f.mag, u, 1, 2.0) * sobolev_norm(f.chart, *f.mag, v, 1, 2.0);
    CHECK(std::abs(dirichlet_form(f.chart, b, u, v)) <= bound);
  }
}

TEST_CASE("divergence-form operators", "[bidiff]") {
  Flat f;
  Rng rng(4);
  SECTION("order zero") {
    auto P = assemble_divergence_form(f.chart, unit_form(f.G, f.mag, 0), f.gs);
    CHECK(P.order() == 0);
    CHECK((P.coef[0].mat(33) - CMat::Identity(2, 2)).norm() < 1e-15);
  }
  SECTION("flat Dirichlet energy gives minus the Laplacian") {
    auto b = unit_form(f.G, f.line, 1);
    auto P = assemble_divergence_form(f.chart, b, f.gs);
    REQUIRE(P.order() == 2);
    for (std::size_t pt = 0; pt < f.G.size(); pt += 101) {
      CMat want = CMat::Zero(1, 4);
      want(0, 0) = -1;
      want(0, 3) = -1;
      CHECK((P.coef[2].mat(pt) - want).norm() < 1e-14);
    }
    auto u = checks::centred_section(f.G, 0, 1, rng), w = checks::centred_section(f.G, 0, 1, rng);
    auto r = duality_check(f.chart, b, P, u, w);
    CHECK(r.residual < 1e-5 * r.scale);
  }
  SECTION("magnetic Dirichlet energy") {
    auto b = unit_form(f.G, f.mag, 1);
    auto P = assemble_divergence_form(f.chart, b, f.gs);
    auto u = checks::centred_section(f.G, 0, 2, rng), w = checks::centred_section(f.G, 0, 2, rng);
    auto r = duality_check(f.chart, b, P, u, w);
    CHECK(r.residual < 1e-5 * r.scale);
  }
  SECTION("random forms on the sphere") {
    auto G = ChartGrid::cube(2, -1, 1, 129, 16);
    Chart sph = make_chart(G, MetricField::sphere_stereographic());
    auto E = std::make_shared<Bundle>(make_bundle(G, BundleSpec::magnetic_example()));
    auto gs = build_generators(EmbeddingSpec::sphere_ambient(), sph);
    auto r = checks::divergence_form_duality(sph, E, gs, 1, 1, 2, rng);
    CHECK(r.worst < 1e-5);
    CHECK(r.order == 2);
  }
}

TEST_CASE("weighted duality", "[bidiff]") {
  auto G = ChartGrid::cube(1, 0.2, 3.2, 257, 12);
  Chart chart = make_chart(G, MetricField::euclidean(1));
  auto E = std::make_shared<Bundle>(make_bundle(G, BundleSpec::trivial(1, 1)));
  auto gs = build_generators(EmbeddingSpec::identity(1), chart);
  Rng rng(5);
  BumpField::Params bp;
  bp.center_radius = 0.3;
  auto u = BumpField::random(1, 1, rng, bp, {1.7}).sample(G, 0, 1);
  auto w = BumpField::random(1, 1, rng, bp, {1.7}).sample(G, 0, 1);
  WeightPair one{[](const double*) { return 1.0; }, [](const double*) { return 1.0; }, true};
  WeightPair r{[](const double* x) { return x[0]; }, [](const double*) { return 1.0; }, true};
  SECTION("unit weight reduces to the plain duality") {
    auto b = unit_form(G, E, 1);
    auto rep = weighted_duality_check(chart, b, one, gs, u, w);
    auto plain = duality_check(chart, b, assemble_divergence_form(chart, b, gs), u, w);
    CHECK(std::abs(rep.weighted - plain.form_side) < 1e-14);
    CHECK(std::abs(rep.operator_route - plain.operator_side) < 1e-14);
    CHECK(rep.residual < 1e-12);
  }
  SECTION("rho = r with the Dirichlet energy") {
    auto rep = weighted_duality_check(chart, unit_form(G, E, 1), r, gs, u, w);
    CHECK(rep.ratio == Approx(1.0).epsilon(1e-4));
    CHECK(rep.operator_residual < 1e-3);
  }
  SECTION("f0 = r^0.7 twist at order zero") {
    WeightPair t{[](const double* x) { return x[0]; }, [](const double* x) { return std::pow(x[0], 0.7); }, true};
    auto rep = weighted_duality_check(chart, unit_form(G, E, 0), t, gs, u, w);
    CHECK(rep.residual < 1e-12);
  }
}
