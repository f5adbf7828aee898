#include <catch2/catch_amalgamated.hpp>

#include "nabla/nabla.hpp"

using namespace nabla;
using Catch::Approx;

namespace {

// Gamma for g = e^{2 psi} I with grad psi = dpsi
double conformal_gamma(int m, int k, int l, const double* dpsi) {
  return (m == k ? dpsi[l] : 0.0) + (m == l ? dpsi[k] : 0.0) - (k == l ? dpsi[m] : 0.0);
}

}  // namespace

TEST_CASE("euclidean metric has vanishing Christoffel symbols", "[geometry]") {
  auto g = ChartGrid::cube(2, -1, 1, 33, 4);
  Chart c = make_chart(g, MetricField::euclidean(2));
  for (double v : c.gamma) REQUIRE(v == 0.0);
}

TEST_CASE("Christoffel symbols of a conformally flat metric", "[geometry]") {
  auto metric = MetricField::conformal_flat(2, [](const double* x) { return std::exp(-2 * x[0]); });
  const double x[2] = {0.3, -0.2};
  auto gam = christoffel(metric, x, {1e-3, 1e-3}, 4);
  const double dpsi[2] = {-1.0, 0.0};
  for (int m = 0; m < 2; ++m)
    for (int k = 0; k < 2; ++k)
      for (int l = 0; l < 2; ++l) CHECK(gam[(m * 2 + k) * 2 + l] == Approx(conformal_gamma(m, k, l, dpsi)).margin(1e-9));
}

TEST_CASE("stereographic sphere Christoffel symbols match the conformal factor", "[geometry]") {
  auto metric = MetricField::sphere_stereographic();
  const double x[2] = {0.4, 0.7};
  auto gam = christoffel(metric, x, {1e-3, 1e-3}, 4);
  const double s = 1 + x[0] * x[0] + x[1] * x[1];
  const double dpsi[2] = {-2 * x[0] / s, -2 * x[1] / s};
  for (int m = 0; m < 2; ++m)
    for (int k = 0; k < 2; ++k)
      for (int l = 0; l < 2; ++l) CHECK(gam[(m * 2 + k) * 2 + l] == Approx(conformal_gamma(m, k, l, dpsi)).margin(1e-9));
}

TEST_CASE("conformal rescaling", "[geometry]") {
  const double x[2] = {0.7, -0.3};
  SECTION("rho = 1 is the identity") {
    auto g0 = conformal_rescale(MetricField::sphere_stereographic(), [](const double*) { return 1.0; });
    CHECK((g0.at(x) - MetricField::sphere_stereographic().at(x)).norm() == 0.0);
  }
  SECTION("rho = e^{x1} on the flat plane") {
    auto g0 = conformal_rescale(MetricField::euclidean(2), [](const double* y) { return std::exp(y[0]); });
    RMat want = std::exp(-2 * x[0]) * RMat::Identity(2, 2);
    CHECK((g0.at(x) - want).norm() < 1e-15);
  }
  SECTION("half-line with rho = r") {
    auto g0 = conformal_rescale(MetricField::euclidean(1), [](const double* y) { return y[0]; });
    const double r = 2.5;
    CHECK(g0.at(&r)(0, 0) == Approx(1 / (r * r)));
    CHECK(volume_density(g0, &r) == Approx(1 / r));
  }
  SECTION("nonpositive rho is rejected") {
    auto g0 = conformal_rescale(MetricField::euclidean(1), [](const double* y) { return y[0]; });
    const double r = -1;
    CHECK_THROWS_AS(g0.at(&r), Error);
  }
}

TEST_CASE("Levi-Civita difference term", "[geometry]") {
  // g = I, phi = x1, so g0 = e^{-2 x1} I
  const double x1 = 0.4;
  RMat g0 = std::exp(-2 * x1) * RMat::Identity(2, 2);
  Eigen::VectorXd dphi(2), e1(2), e2(2);
  dphi << 1, 0;
  e1 << 1, 0;
  e2 << 0, 1;
  SECTION("phi constant gives zero") {
    CHECK(levi_civita_difference(e1, e2, Eigen::VectorXd::Zero(2), g0).norm() == 0.0);
  }
  SECTION("X = Y = e1") {
    // 2 e1 - g0(e1, e1) grad_{g0} x1 = 2 e1 - e1
    CHECK((levi_civita_difference(e1, e1, dphi, g0) - e1).norm() < 1e-14);
  }
  SECTION("X = e1, Y = e2 agrees with the Christoffel difference") {
    Eigen::VectorXd v = levi_civita_difference(e1, e2, dphi, g0);
    CHECK((v - e2).norm() < 1e-14);
    auto metric = MetricField::euclidean(2);
    auto metric0 = conformal_rescale(metric, [](const double* y) { return std::exp(y[0]); });
    const double x[2] = {x1, 0.1};
    auto gam0 = christoffel(metric0, x, {1e-3, 1e-3}, 4);
    // Gamma_g = 0, so the difference is -Gamma_0 contracted with e1, e2
    for (int m = 0; m < 2; ++m) CHECK(-gam0[(m * 2 + 0) * 2 + 1] == Approx(v[m]).margin(1e-9));
  }
}

TEST_CASE("volume density", "[geometry]") {
  const double x[2] = {0.1, 0.2};
  CHECK(volume_density(MetricField::euclidean(2), x) == 1.0);
  auto diag = MetricField::from_expressions({{"4", "0"}, {"0", "9"}});
  CHECK(volume_density(diag, x) == Approx(6.0));
}

TEST_CASE("metric validation", "[geometry]") {
  auto bad = MetricField::from_expressions({{"1", "2"}, {"2", "1"}});
  auto g = ChartGrid::cube(2, -1, 1, 17, 4);
  try {
    make_chart(g, bad);
    FAIL("indefinite metric accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::singular_metric);
  }
  CHECK_THROWS_AS(MetricField::from_expressions({{"1", "x1"}, {"0", "1"}}), Error);
  CHECK_THROWS_AS(make_chart(g, MetricField::euclidean(3)), Error);
}

TEST_CASE("grid construction validates its inputs", "[geometry]") {
  CHECK_THROWS_AS(ChartGrid::cube(2, -1, 1, 9, 4), Error);
  CHECK_THROWS_AS(ChartGrid::cube(2, -1, 1, 65, 4, 3), Error);
  CHECK_THROWS_AS(ChartGrid::cube(2, 1, -1, 65, 4), Error);
  auto g = ChartGrid::cube(2, -1, 1, 65, 8);
  CHECK(g.max_h() == Approx(2.0 / 64));
  CHECK(g.size() == 65u * 65u);
}
