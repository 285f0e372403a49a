#include <doctest.h>

#include <cmath>

#include "geoelim/error.hpp"
#include "geoelim/geodata.hpp"
#include "support.hpp"

using namespace geoelim;
using testsupport::Gen;

TEST_CASE("equirectangular projection round-trips and matches the haversine distance nearby") {
  Gen g(11);
  for (int trial = 0; trial < 200; ++trial) {
    const double lon0 = g.uniform(-180, 180), lat0 = g.uniform(-60, 60);
    const auto proj = Projection::equirectangular(lon0, lat0);
    const double lon = lon0 + g.uniform(-0.5, 0.5), lat = lat0 + g.uniform(-0.5, 0.5);
    const Point p = proj.forward(lon, lat);
    const Point back = proj.inverse(p);
    CHECK(back.x == doctest::Approx(lon).epsilon(1e-12));
    CHECK(back.y == doctest::Approx(lat).epsilon(1e-12));

    // Independent great-circle distance from the reference point.
    const double r = Projection::kEarthRadiusKm, d2r = M_PI / 180;
    const double dphi = (lat - lat0) * d2r, dlam = (lon - lon0) * d2r;
    const double a = std::pow(std::sin(dphi / 2), 2) +
                     std::cos(lat0 * d2r) * std::cos(lat * d2r) * std::pow(std::sin(dlam / 2), 2);
    const double hav = 2 * r * std::asin(std::sqrt(a));
    CHECK(std::hypot(p.x, p.y) == doctest::Approx(hav).epsilon(0.01));
  }
}

TEST_CASE("gazette round-trip preserves every field") {
  const auto dir = testsupport::scratch("gazette");
  std::vector<SiteRecord> sites{{"A1", "Alpha, upper", {1.5, 2.25}, 120, true, "EU1"},
                                {"B2", "Beta \"quoted\"", {-3.0, 4.0}, 0, false, ""}};
  const auto proj = Projection::planar();
  write_gazette(dir / "g.csv", sites, proj);
  const auto back = load_gazette(dir / "g.csv", proj);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].id == sites[i].id);
    CHECK(back[i].name == sites[i].name);
    CHECK(back[i].location.x == sites[i].location.x);
    CHECK(back[i].location.y == sites[i].location.y);
    CHECK(back[i].population == sites[i].population);
    CHECK(back[i].inhabited == sites[i].inhabited);
    CHECK(back[i].eu_id == sites[i].eu_id);
  }
}

TEST_CASE("malformed inputs raise InputError") {
  const auto dir = testsupport::scratch("bad_inputs");
  testsupport::spit(dir / "g.csv", "id,name,x,y\n");
  CHECK_THROWS_AS(load_gazette(dir / "g.csv", Projection::planar()), InputError);
  testsupport::spit(dir / "p.csv", "lon,lat,n_tested,n_positive,year\n0,0,10,11,2000\n");
  CHECK_THROWS_AS(load_prevalence(dir / "p.csv", Projection::planar()), InputError);
  testsupport::spit(dir / "p2.csv", "lon,lat,n_tested,n_positive,year\n0,0,ten,1,2000\n");
  CHECK_THROWS_AS(load_prevalence(dir / "p2.csv", Projection::planar()), InputError);
  CHECK_THROWS_AS(load_ascii_raster(dir / "missing.asc"), InputError);
}

TEST_CASE("prevalence extras become named covariates and the summary counts zeros") {
  const auto dir = testsupport::scratch("prev");
  testsupport::spit(dir / "p.csv",
                    "lon,lat,n_tested,n_positive,year,elev\n0,0,10,0,2000,1.5\n1,1,20,4,2001,2.5\n");
  PrevalenceSummary s;
  std::vector<std::string> names;
  const auto recs = load_prevalence(dir / "p.csv", Projection::planar(), &s, &names);
  REQUIRE(recs.size() == 2);
  CHECK(names == std::vector<std::string>{"elev"});
  CHECK(recs[1].covariates.at(0) == 2.5);
  CHECK(s.total_tested == 30);
  CHECK(s.total_positive == 4);
  CHECK(s.zero_sites == 1);
  const auto emp = empirical_prevalence(recs);
  CHECK(emp.max == doctest::Approx(0.2));
  CHECK(emp.mean == doctest::Approx(0.1));
}

TEST_CASE("point-in-polygon agrees with a rectangle oracle") {
  Gen g(3);
  EvaluationUnit eu{"R", "R", {{1, 1}, {4, 1}, {4, 3}, {1, 3}}};
  for (int i = 0; i < 1000; ++i) {
    const Point p = g.point(5.0);
    const bool inside = p.x > 1 && p.x < 4 && p.y > 1 && p.y < 3;
    CHECK(eu.contains(p) == inside);
  }
}

TEST_CASE("desk fixture grid conserves population and tags every cell") {
  const auto proj = Projection::planar();
  const auto raster = load_ascii_raster(testsupport::desk() / "population.asc");
  const auto eus = load_evaluation_units(testsupport::desk() / "eus.json", proj);
  const auto grid = build_grid({0, 0, 200, 200}, 10, raster, proj, eus);
  REQUIRE(grid.size() == 400);
  CHECK(grid.ncols == 20);
  double mass = 0;
  std::size_t tagged = 0;
  for (const auto& c : grid.cells) {
    mass += c.pop_density * grid.spacing * grid.spacing;
    tagged += c.eu_index.has_value();
  }
  CHECK(mass == doctest::Approx(raster.total()).epsilon(1e-12));
  CHECK(tagged == grid.size());
  for (std::size_t e = 0; e < eus.size(); ++e) CHECK(grid.eu_population_mass(e) > 0);
}

TEST_CASE("an EU without population mass is a domain error") {
  AsciiRaster r;
  r.ncols = r.nrows = 2;
  r.cellsize = 1;
  r.values = {0, 0, 0, 5};  // only the lower-right cell is populated
  std::vector<EvaluationUnit> eus{{"west", "", {{0, 0}, {1, 0}, {1, 2}, {0, 2}}}};
  CHECK_THROWS_AS(build_grid({0, 0, 2, 2}, 1, r, Projection::planar(), eus), DomainError);
}

TEST_CASE("raster round trip flips rows consistently with grid_to_raster") {
  const auto grid = build_grid({0, 0, 3, 2}, 1);
  std::vector<double> v(grid.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto r = grid_to_raster(grid, v);
  // Lower-left cell (id 0) sits on the bottom raster row.
  CHECK(r.at(1, 0) == 0.0);
  CHECK(r.at(0, 2) == 5.0);
  const auto dir = testsupport::scratch("raster");
  write_ascii_raster(dir / "r.asc", r);
  const auto back = load_ascii_raster(dir / "r.asc");
  CHECK(back.values == r.values);
  CHECK(back.sample(0.5, 0.5).value() == 0.0);
  CHECK(!back.sample(-1, 0.5).has_value());
}
