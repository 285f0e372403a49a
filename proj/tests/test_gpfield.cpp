#include <doctest.h>

#include <cmath>

#include "geoelim/error.hpp"
#include "geoelim/gpfield.hpp"
#include "support.hpp"

using namespace geoelim;
using testsupport::Gen;

TEST_CASE("sample covariance of simulated residuals matches sigma2 exp(-u/phi)") {
  const std::vector<Point> pts{{0, 0}, {0.1, 0}, {0.3, 0.2}, {1, 1}};
  CorrelationSpec s;
  s.phi = 0.25;
  FieldSimulator sim(pts, 2.0, s);
  Rng rng(99);
  const std::size_t n = 40000;
  const auto draws = sim.draw_residuals(rng, n);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double cov = (draws.col(i).array() * draws.col(j).array()).mean();
      const double expect = 2.0 * std::exp(-distance(pts[i], pts[j]) / 0.25);
      // Standard error of a product moment is below 2 sigma2 / sqrt(n).
      CHECK(std::abs(cov - expect) < 4 * 2.0 * 2.0 / std::sqrt(static_cast<double>(n)));
    }
}

TEST_CASE("simulate_field is seed-deterministic and carries the mean") {
  Gen g(5);
  ModelParams m;
  m.mu = -2;
  m.sigma2 = 0.5;
  m.corr.phi = 0.2;
  const auto pts = g.points(30);
  const auto a = simulate_field(m, pts, 77);
  const auto b = simulate_field(m, pts, 77);
  const auto c = simulate_field(m, pts, 78);
  CHECK(a.s_values == b.s_values);
  CHECK(a.s_values != c.s_values);
  const auto res = a.residual(m);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(res[i] == doctest::Approx(a.s_values[i] + 2.0));
    CHECK(a.p_values[i] == doctest::Approx(1 / (1 + std::exp(-a.s_values[i]))).epsilon(1e-14));
  }
  const auto z = standardise(a, m);
  CHECK(z[3] == doctest::Approx(res[3] / std::sqrt(0.5)));
}

TEST_CASE("covariates shift the linear predictor and missing values are named") {
  ModelParams m;
  m.mu = 1;
  m.beta = {2};
  m.covariate_names = {"elev"};
  CovariateMatrix d(2, 1);
  d << 0.5, -1;
  const auto p = field_to_prevalence(std::vector<double>{0, 0}, m, d);
  CHECK(p[0] == doctest::Approx(1 / (1 + std::exp(-2.0))));
  CHECK(p[1] == doctest::Approx(1 / (1 + std::exp(1.0))));
  CHECK_THROWS_AS(field_to_prevalence(std::vector<double>{0, 0}, m), InputError);
}

TEST_CASE("dense simulation refuses oversized point sets") {
  std::vector<Point> pts(11);
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {static_cast<double>(i), 0};
  CHECK_THROWS_AS(FieldSimulator(pts, 1.0, CorrelationSpec{}, JitterPolicy::retry_once, 10), InputError);
}

TEST_CASE("correlation curve contains the practical range") {
  CorrelationSpec s;
  s.phi = 0.15 / -std::log(0.05);
  const auto curve = correlation_curve(s, 1.0, 100);
  bool found = false;
  for (const auto& c : curve)
    if (std::abs(c.u - 0.15) < 1e-12) {
      found = true;
      CHECK(c.rho == doctest::Approx(0.05).epsilon(1e-9));
    }
  CHECK(found);
  CHECK(curve.front().rho == 1.0);
}

TEST_CASE("patch and increment statistics on hand-built rasters") {
  // Two 4-connected patches: a 2x2 block and a single cell.
  const std::vector<double> v{1, 1, -1, -1,
                              1, 1, -1, 1,
                              -1, -1, -1, -1};
  const double d4 = 2 * std::sqrt(4 / M_PI), d1 = 2 * std::sqrt(1 / M_PI);
  CHECK(mean_patch_diameter(v, 4, 3) == doctest::Approx((d4 + d1) / 2));
  const std::vector<double> ramp{0, 1, 2, 0, 1, 2};
  // Horizontal steps are 1, vertical ones 0: 4 ones and 3 zeros.
  CHECK(mean_neighbour_increment(ramp, 3, 2) == doctest::Approx(4.0 / 7.0));
}

TEST_CASE("demo panels order by range and smoothness") {
  double patch_short = 0, patch_long = 0, rough = 0, smooth = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto demo = figure2_demo(seed, 30);
    REQUIRE(demo.panels.size() == 3);
    CHECK(demo.panels[0].range == doctest::Approx(0.15));
    CHECK(demo.panels[1].range == doctest::Approx(0.3));
    CHECK(demo.panels[2].corr.kappa == 1.5);
    for (const auto& p : demo.panels) CHECK(practical_range(p.corr) == doctest::Approx(p.range));
    const auto& g = demo.grid;
    patch_short += mean_patch_diameter(demo.panels[0].standardised, g.ncols, g.nrows);
    patch_long += mean_patch_diameter(demo.panels[1].standardised, g.ncols, g.nrows);
    rough += mean_neighbour_increment(demo.panels[1].standardised, g.ncols, g.nrows);
    smooth += mean_neighbour_increment(demo.panels[2].standardised, g.ncols, g.nrows);
  }
  CHECK(patch_long > patch_short);
  CHECK(smooth < rough);
}
