// Acceptance suite: one PASS/FAIL/SKIP line per criterion, nonzero exit if
// any criterion fails. Tolerances are fixed here, next to each check.

#include <omp.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <iostream>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fmt/format.h>

#include "geoelim/cli.hpp"
#include "geoelim/corrfun.hpp"
#include "geoelim/design.hpp"
#include "geoelim/error.hpp"
#include "geoelim/evaluate.hpp"
#include "geoelim/fit.hpp"
#include "geoelim/gpfield.hpp"
#include "geoelim/predict.hpp"
#include "support.hpp"

using namespace geoelim;
using testsupport::Gen;
namespace fs = std::filesystem;

namespace {

enum class Verdict { pass, fail, skip };

struct Result {
  Verdict verdict;
  std::string detail;
};

Result pass_if(bool ok, std::string detail) { return {ok ? Verdict::pass : Verdict::fail, std::move(detail)}; }

// ---------------------------------------------------------------------------
// 1. Correlation identities

Result correlation_identities() {
  Gen g(1001);
  const double target = 2.9957323;  // -log(0.05)
  double worst_ratio = 0, worst_matern = 0;
  bool unit_at_zero = true;
  for (int i = 0; i < 100; ++i) {
    CorrelationSpec e;
    e.phi = g.log_uniform(1e-3, 1e3);
    worst_ratio = std::max(worst_ratio, std::abs(practical_range(e) / e.phi - target));
    CorrelationSpec m = e;
    m.family = CorrFamily::matern;
    m.kappa = 0.5;
    for (int k = 0; k <= 50; ++k) {
      const double u = e.phi * 0.2 * k;
      worst_matern = std::max(worst_matern, std::abs(corr(m, u) - corr(e, u)));
    }
    for (double kappa : {0.5, 1.5, 2.5}) {
      m.kappa = kappa;
      unit_at_zero = unit_at_zero && corr(m, 0.0) == 1.0;
    }
    unit_at_zero = unit_at_zero && corr(e, 0.0) == 1.0;
  }
  return pass_if(unit_at_zero && worst_ratio <= 1e-6 && worst_matern <= 1e-12,
                 fmt::format("rho(0)=1: {}, max |range/phi - 2.9957323| = {:.2e}, max |matern(0.5) - exp| = {:.2e}",
                             unit_at_zero, worst_ratio, worst_matern));
}

// ---------------------------------------------------------------------------
// 2. Single-site likelihood against quadrature

double quadrature_marginal(int n, int y, double mu, double sigma2) {
  const double logc = std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0);
  auto logf = [&](double s) {
    return logc - y * std::log1p(std::exp(-s)) - (n - y) * std::log1p(std::exp(s)) -
           0.5 * (s - mu) * (s - mu) / sigma2 - 0.5 * std::log(2 * M_PI * sigma2);
  };
  // Mode by bisection on the derivative, then adaptive Gauss-Kronrod around it.
  double lo = -60, hi = 60;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (y - n / (1 + std::exp(-mid)) - (mid - mu) / sigma2 > 0 ? lo : hi) = mid;
  }
  const double mode = 0.5 * (lo + hi);
  const double p = 1 / (1 + std::exp(-mode));
  const double sd = 1 / std::sqrt(n * p * (1 - p) + 1 / sigma2);
  const double top = logf(mode);
  auto f = [&](double s) { return std::exp(logf(s) - top); };
  return std::exp(top) *
         boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, mode - 40 * sd, mode + 40 * sd, 15, 1e-14);
}

Result single_site_oracle() {
  Gen g(1002);
  const double roundoff = 1e-12;  // relative floor for floating-point agreement
  int bad_mc = 0, bad_rel = 0, small = 0;
  double worst_z = 0, worst_rel = 0;
  for (int t = 0; t < 50; ++t) {
    const int n = g.integer(1, 200);
    const int y = g.integer(0, n);
    const double mu = g.uniform(-6, 1);
    const double sigma2 = t % 3 == 0 ? g.uniform(0.001, 0.1) : g.log_uniform(0.01, 5);
    SiteData d;
    d.locations = {{0, 0}};
    d.n = {n};
    d.y = {y};
    d.covariates = CovariateMatrix(1, 0);
    ModelParams m;
    m.mu = mu;
    m.sigma2 = sigma2;
    FitConfig cfg;
    cfg.mc_samples = 10000;
    cfg.burn_in = 1000;
    cfg.thin = 5;
    const auto samples = sample_latent(d, m, cfg, derive_seed(1002, Stream::sampler, t));
    const auto est = single_site_marginal_likelihood(n, y, mu, sigma2, samples, 4000, 10, t);
    const double z = quadrature_marginal(n, y, mu, sigma2);
    const double err = std::abs(est.likelihood - z);
    if (err > 3 * est.std_error + roundoff * z) ++bad_mc;
    worst_z = std::max(worst_z, err / (est.std_error + roundoff * z));
    if (sigma2 <= 0.1) {
      ++small;
      worst_rel = std::max(worst_rel, err / z);
      if (err / z > 1e-6) ++bad_rel;
    }
  }
  return pass_if(bad_mc == 0 && bad_rel == 0,
                 fmt::format("50 cases: {} outside 3 stderr (max {:.2f}); {} with sigma2<=0.1, max rel err {:.2e}",
                             bad_mc, worst_z, small, worst_rel));
}

// ---------------------------------------------------------------------------
// 3. Parameter recovery

Result parameter_recovery() {
  const int reps = 100;
  const double truth[3] = {-2, 1, 0.2};
  const char* names[3] = {"mu", "sigma2", "phi"};
  int cover[3] = {0, 0, 0};
  int failures = 0;
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng = make_rng(1003, Stream::validation, rep);
    std::uniform_real_distribution<double> unif(0, 1);
    std::vector<Point> pts(100);
    for (auto& p : pts) p = {unif(rng), unif(rng)};
    ModelParams gen;
    gen.mu = truth[0];
    gen.sigma2 = truth[1];
    gen.corr.phi = truth[2];
    const auto field = simulate_field(gen, pts, derive_seed(1003, Stream::field, rep));
    std::vector<PrevalenceRecord> recs;
    long y_total = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      PrevalenceRecord r;
      r.location = pts[i];
      r.n_tested = 100;
      r.n_positive = std::binomial_distribution<int>(100, field.p_values[i])(rng);
      y_total += r.n_positive;
      recs.push_back(r);
    }
    const auto data = make_site_data(recs);
    // Start away from the truth: pooled logit, half the variance, half the scale.
    ModelParams init;
    init.mu = std::log((y_total + 0.5) / (10000.0 - y_total + 0.5));
    init.sigma2 = 0.5;
    init.corr.phi = 0.1;
    FitConfig cfg;
    cfg.seed = derive_seed(1003, Stream::refit, rep);
    try {
      const auto fit = mcml_fit(data, init, cfg);
      for (int k = 0; k < 3; ++k) {
        const auto& p = fit.parameter(names[k]);
        cover[k] += p.lower < truth[k] && truth[k] < p.upper;
      }
    } catch (const Error&) {
      ++failures;
    }
  }
  const bool ok = cover[0] >= 80 && cover[1] >= 80 && cover[2] >= 80;
  return pass_if(ok, fmt::format("95% CI coverage over {} fits: mu {}, sigma2 {}, phi {} (need >= 80); {} failed fits",
                                 reps, cover[0], cover[1], cover[2], failures));
}

// ---------------------------------------------------------------------------
// 4. Population-weighted target

Result weighted_target() {
  Gen g(1004);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const double c = g.uniform(0, 1);
    const std::size_t cells = static_cast<std::size_t>(g.integer(1, 500));
    kernels::RowMatrix draws = kernels::RowMatrix::Constant(1, static_cast<Eigen::Index>(cells), c);
    std::vector<std::size_t> idx(cells);
    for (std::size_t i = 0; i < cells; ++i) idx[i] = i;
    const auto w = g.positive_weights(cells);
    worst = std::max(worst, std::abs(weighted_T(draws, idx, w)[0] - c) / c);
  }
  kernels::RowMatrix two(1, 2);
  two << 0.01, 0.03;
  const std::vector<std::size_t> cells{0, 1};
  const std::vector<double> w{3, 1};
  const double t = weighted_T(two, cells, w)[0];
  // Machine precision: within one rounding of the constant.
  return pass_if(worst <= std::numeric_limits<double>::epsilon() && t == 0.015,
                 fmt::format("constant surfaces: max rel deviation {:.2e}; 3:1 example T = {}", worst, t));
}

// ---------------------------------------------------------------------------
// 5. Design constraints

bool separated(std::span<const Point> pts, std::span<const std::size_t> idx, double delta) {
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b)
      if (distance(pts[idx[a]], pts[idx[b]]) < delta) return false;
  return true;
}

Result design_constraints() {
  const auto sites = load_gazette(testsupport::desk() / "gazette.csv", Projection::planar());
  const std::vector<std::string> eus{"EU1", "EU2", "EU3"};
  int violations = 0;
  for (int s = 0; s < 1000; ++s) {
    DesignSpec spec;
    spec.seed = derive_seed(1005, Stream::design, s);
    const auto d = stratified_design(sites, eus, spec);
    for (const auto& eu : eus) {
      const auto prim = d.primaries(eu);
      for (std::size_t a = 0; a < prim.size(); ++a)
        for (std::size_t b = a + 1; b < prim.size(); ++b)
          violations += distance(prim[a]->location, prim[b]->location) < spec.delta_min;
    }
  }
  // Five candidates within 1 km of each other, k = 2, delta 2 km.
  const std::vector<Point> micro{{0, 0}, {0.5, 0}, {0, 0.5}, {0.5, 0.5}, {0.25, 0.25}};
  bool any_subset = false;
  for (unsigned mask = 0; mask < 32; ++mask) {
    if (std::popcount(mask) != 2) continue;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < 5; ++i)
      if (mask & (1u << i)) idx.push_back(i);
    any_subset = any_subset || separated(micro, idx, 2.0);
  }
  bool threw = false;
  try {
    Rng rng(1);
    inhibitory_sample(micro, 2, 2.0, rng);
  } catch (const InfeasibleDesignError&) {
    threw = true;
  }
  return pass_if(violations == 0 && !any_subset && threw,
                 fmt::format("1000 designs: {} spacing violations; micro-instance feasible by enumeration: {}, "
                             "sampler raised infeasibility: {}",
                             violations, any_subset, threw));
}

// ---------------------------------------------------------------------------
// 6. Intercept shift

Result intercept_shift() {
  // 30 x 30 lattice in degree units, so phi = 0.46 carries its published meaning.
  const auto grid = build_grid({0, 0, 3, 3}, 0.1);
  ModelParams m;
  m.mu = -7.16;
  m.sigma2 = 4.45;
  m.corr.phi = 0.46;
  const auto shifted = shift_intercept(m, grid, 0.01, 1006);
  const auto fresh = regional_mean_prevalence(shifted.params, grid, 1006, Stream::validation,
                                              ShiftWeighting::areal, 500);
  double mean = 0;
  for (double v : fresh) mean += v;
  mean /= static_cast<double>(fresh.size());
  return pass_if(mean >= 0.009 && mean <= 0.011,
                 fmt::format("shift {:+.4f} -> mu {:.4f}; mean prevalence over 500 fresh draws {:.5f}",
                             shifted.delta, shifted.params.mu, mean));
}

// ---------------------------------------------------------------------------
// 7. NPV pattern at desk scale

Result npv_pattern() {
  const auto c = cli::load_config(testsupport::desk() / "config.json",
                                  {"evaluate.refit_mode=fixed_corr", "evaluate.n_replicates=200"},
                                  std::nullopt, std::nullopt, std::nullopt);
  const auto raster = load_ascii_raster(*c.paths.raster);
  const auto eus = load_evaluation_units(*c.paths.eus, c.projection);
  const auto grid = build_grid(*c.grid_bounds, *c.grid_spacing, raster, c.projection, eus);
  const auto sites = load_gazette(*c.paths.gazette, c.projection);
  const auto shifted = shift_intercept(c.model, grid, c.evaluate.target_mean_prev,
                                       derive_seed(c.seed, Stream::calibration), c.evaluate.shift_weighting);
  const std::vector<int> ks{5, 10, 15}, ms{60};
  const auto table = npv_table(sites, grid.eu_ids, grid, shifted.params, ks, ms, c.design, c.evaluate);
  bool monotone = true;
  std::string cells;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const auto& npv = table.at(ks[i], 60).result.values.npv;
    cells += fmt::format("{}k={}: {}", i ? ", " : "", ks[i],
                         npv.estimate ? fmt::format("{:.3f}({:.3f})", *npv.estimate, npv.std_error) : "NA");
    if (i == 0) continue;
    const auto& prev = table.at(ks[i - 1], 60).result.values.npv;
    if (!npv.estimate || !prev.estimate) {
      monotone = false;
      continue;
    }
    const double slack = 2 * std::hypot(npv.std_error, prev.std_error);
    monotone = monotone && *npv.estimate >= *prev.estimate - slack;
  }
  const auto& mid = table.at(10, 60).result.values.npv;
  // Broad band around the published 0.768: +-0.2 absorbs the change of region and replicate count.
  const bool in_band = mid.estimate && *mid.estimate >= 0.568 && *mid.estimate <= 0.968;
  return pass_if(monotone && in_band,
                 fmt::format("NPV at m=60, 200 replicates, grid {}x{}: {}; monotone within 2 stderr: {}; "
                             "k=10 in [0.568, 0.968]: {}",
                             grid.ncols, grid.nrows, cells, monotone, in_band));
}

// ---------------------------------------------------------------------------
// 8. Headline fit on the published data, when available

Result headline_fit() {
  const fs::path data = testsupport::fixture_dir() / "guyana" / "prevalence.csv";
  if (!fs::exists(data)) return {Verdict::skip, fmt::format("dataset not present at {}", data.string())};
  // Reference point at the centroid of the survey sites.
  const auto raw = load_prevalence(data, Projection::planar());
  double lon0 = 0, lat0 = 0;
  for (const auto& r : raw) {
    lon0 += r.location.x;
    lat0 += r.location.y;
  }
  lon0 /= static_cast<double>(raw.size());
  lat0 /= static_cast<double>(raw.size());
  const auto out = testsupport::scratch("acceptance_headline");
  nlohmann::json cfg{{"seed", 1008},
                     {"paths", {{"prevalence", data.string()}}},
                     {"coordinates", {{"kind", "lonlat"}, {"lon0", lon0}, {"lat0", lat0}}},
                     {"model", {{"correlation", {{"family", "exponential"}}}}}};
  testsupport::spit(out / "config.json", cfg.dump(2));
  std::vector<std::string> args{"geoelim", "fit", "--config", (out / "config.json").string(), "--out-dir",
                                (out / "run").string()};
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream err;
  if (cli::run(static_cast<int>(argv.size()), argv.data(), err) != 0)
    return {Verdict::fail, "fit failed: " + err.str()};

  struct Row {
    double est, lo, hi;
  };
  std::map<std::string, Row> rows;
  std::istringstream in(testsupport::slurp(out / "run" / "fit_parameters.csv"));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    rows[f[0]] = {std::stod(f[1]), std::stod(f[2]), std::stod(f[3])};
  }
  // phi is reported in km; the published value is in degrees.
  for (auto* v : {&rows["phi"].est, &rows["phi"].lo, &rows["phi"].hi}) *v /= cli::kKmPerDegree;
  const double mu = rows["mu"].est, ls2 = std::log(rows["sigma2"].est), lphi = std::log(rows["phi"].est);
  auto close = [](double got, double want) { return std::abs(got - want) <= 0.1 * std::abs(want); };
  const bool values = close(mu, -7.16) && close(ls2, std::log(4.45)) && close(lphi, std::log(0.46));
  auto upper_heavy = [&](const std::string& k) { return rows[k].hi - rows[k].est > rows[k].est - rows[k].lo; };
  const bool asym = upper_heavy("sigma2") && upper_heavy("phi");
  return pass_if(values && asym,
                 fmt::format("mu {:.3f}, sigma2 {:.3f}, phi {:.3f} deg; within 10% on the transformed scale: {}; "
                             "upper-heavy intervals for sigma2 and phi: {}",
                             mu, rows["sigma2"].est, rows["phi"].est, values, asym));
}

// ---------------------------------------------------------------------------
// 9. Determinism across reruns and worker counts

Result determinism() {
  const auto root = testsupport::scratch("acceptance_determinism");
  const std::string config = (testsupport::desk() / "config.json").string();
  const std::vector<std::pair<std::string, std::vector<std::string>>> commands{
      {"fit", {"fit.mc_samples=500", "fit.burn_in=300"}},
      {"predict", {"predict.n_draws=200", "fit.mc_samples=500", "fit.burn_in=300"}},
      {"design", {}},
      {"evaluate", {"evaluate.n_replicates=6", "evaluate.refit_mode=full_mcml", "evaluate.ks=[5,10]",
                    "evaluate.ms=[60]", "evaluate.n_draws=200", "fit.mc_samples=500", "fit.burn_in=300"}},
      {"simulate", {"simulate.cells_per_side=25"}}};
  auto run = [](const std::vector<std::string>& args) {
    std::vector<std::string> full{"geoelim"};
    full.insert(full.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : full) argv.push_back(a.data());
    std::ostringstream err;
    return cli::run(static_cast<int>(argv.size()), argv.data(), err);
  };
  int mismatches = 0, files = 0;
  std::string failed;
  for (const auto& [cmd, sets] : commands) {
    const auto a = root / (cmd + "_a"), b = root / (cmd + "_b"), c = root / (cmd + "_c");
    std::vector<std::string> first{cmd, "--config", config, "--workers", "1", "--out-dir", a.string()};
    for (const auto& s : sets) {
      first.push_back("--set");
      first.push_back(s);
    }
    const std::string manifest = (a / "manifest.json").string();
    if (run(first) != 0 ||
        run({cmd, "--config", manifest, "--workers", "1", "--out-dir", b.string()}) != 0 ||
        run({cmd, "--config", manifest, "--workers", "2", "--out-dir", c.string()}) != 0) {
      failed += " " + cmd;
      continue;
    }
    for (const auto& entry : fs::directory_iterator(a)) {
      const auto name = entry.path().filename();
      const auto ref = testsupport::slurp(entry.path());
      ++files;
      mismatches += ref != testsupport::slurp(b / name);
      mismatches += ref != testsupport::slurp(c / name);
    }
  }
  omp_set_num_threads(1);
  return pass_if(mismatches == 0 && failed.empty(),
                 fmt::format("5 subcommands, {} files compared across reruns and 1 vs 2 workers: {} differ{}",
                             files, mismatches, failed.empty() ? "" : "; failed:" + failed));
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Result()>>> criteria{
      {1, correlation_identities}, {2, single_site_oracle}, {3, parameter_recovery},
      {4, weighted_target},        {5, design_constraints}, {6, intercept_shift},
      {7, npv_pattern},            {8, headline_fit},       {9, determinism}};
  // Optional list of criterion numbers to run.
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& [id, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Result r;
    try {
      r = check();
    } catch (const std::exception& e) {
      r = {Verdict::fail, fmt::format("exception: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* word = r.verdict == Verdict::pass ? "PASS" : r.verdict == Verdict::fail ? "FAIL" : "SKIP";
    failures += r.verdict == Verdict::fail;
    std::cout << fmt::format("criterion {}: {} [{:.1f}s] {}", id, word, secs, r.detail) << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
