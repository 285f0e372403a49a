#include "geoelim/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "geoelim/error.hpp"

namespace geoelim {

std::string to_string(RefitMode m) { return m == RefitMode::full_mcml ? "full_mcml" : "fixed_corr"; }

RefitMode refit_mode_from_string(const std::string& s) {
  if (s == "full_mcml") return RefitMode::full_mcml;
  if (s == "fixed_corr") return RefitMode::fixed_corr;
  throw InputError(fmt::format("unknown refit_mode '{}' (expected full_mcml or fixed_corr)", s));
}

std::string to_string(ShiftWeighting w) { return w == ShiftWeighting::areal ? "areal" : "population"; }

ShiftWeighting shift_weighting_from_string(const std::string& s) {
  if (s == "areal") return ShiftWeighting::areal;
  if (s == "population") return ShiftWeighting::population;
  throw InputError(fmt::format("unknown shift weighting '{}' (expected areal or population)", s));
}

void EvalConfig::validate() const {
  if (n_replicates < 1) throw InputError("n_replicates must be at least 1");
  if (!(target_mean_prev > 0 && target_mean_prev < 1)) throw InputError("target_mean_prev must lie in (0, 1)");
  if (!(threshold >= 0 && threshold <= 1)) throw InputError("threshold must lie in [0, 1]");
  if (!(q_cut >= 0 && q_cut <= 1)) throw InputError("q_cut must lie in [0, 1]");
  if (n_draws < 1) throw InputError("n_draws must be positive");
  fit.validate();
}

namespace {

std::vector<double> region_weights(const PredictionGrid& grid, ShiftWeighting weighting) {
  std::vector<double> w(grid.size(), 1.0);
  if (weighting == ShiftWeighting::population)
    for (std::size_t c = 0; c < grid.size(); ++c) w[c] = grid.cells[c].pop_density;
  double total = 0.0;
  for (double v : w) total += v;
  if (!(total > 0)) throw DomainError("region has zero population mass");
  for (double& v : w) v /= total;
  return w;
}

// Rows are residual draws over the grid cells; zero rows when sigma2 is 0.
Eigen::MatrixXd residual_draws(const ModelParams& params, const PredictionGrid& grid, Rng& rng,
                               std::size_t n_draws) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  if (params.sigma2 == 0.0) return Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_draws), n);
  const FieldSimulator sim(grid.centres(), params.sigma2, params.corr);
  return sim.draw_residuals(rng, n_draws);
}

double mean_prevalence(const Eigen::MatrixXd& resid, double intercept, const std::vector<double>& w) {
  double acc = 0.0;
  for (Eigen::Index d = 0; d < resid.rows(); ++d) {
    double m = 0.0;
    for (Eigen::Index c = 0; c < resid.cols(); ++c)
      m += w[static_cast<std::size_t>(c)] * kernels::inv_logit(intercept + resid(d, c));
    acc += m;
  }
  return acc / static_cast<double>(resid.rows());
}

void require_plain(const ModelParams& params) {
  if (params.has_covariates())
    throw InputError("design evaluation supports intercept-only generators (no covariates)");
}

}  // namespace

ShiftResult shift_intercept(const ModelParams& params, const PredictionGrid& grid, double target,
                            std::uint64_t seed, ShiftWeighting weighting, std::size_t n_draws) {
  if (!(target > 0 && target < 1)) throw InputError("target mean prevalence must lie in (0, 1)");
  require_plain(params);
  if (params.sigma2 != 0.0) params.validate();
  const std::vector<double> w = region_weights(grid, weighting);
  Rng rng = make_rng(seed, Stream::calibration);
  const Eigen::MatrixXd resid = residual_draws(params, grid, rng, n_draws);
  auto f = [&](double delta) { return mean_prevalence(resid, params.mu + delta, w) - target; };

  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 20 && f(lo) > 0; ++i) lo *= 2.0;
  for (int i = 0; i < 20 && f(hi) < 0; ++i) hi *= 2.0;
  if (f(lo) > 0 || f(hi) < 0) throw Error("intercept shift: could not bracket the target prevalence");
  for (int i = 0; i < 200 && hi - lo > 1e-13; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0 ? lo : hi) = mid;
  }
  ShiftResult out;
  out.delta = 0.5 * (lo + hi);
  out.params = params;
  out.params.mu += out.delta;
  out.achieved = f(out.delta) + target;
  if (std::abs(out.achieved - target) > 1e-4)
    throw Error(fmt::format("intercept shift reached {} instead of {}", out.achieved, target));
  return out;
}

std::vector<double> regional_mean_prevalence(const ModelParams& params, const PredictionGrid& grid,
                                             std::uint64_t seed, Stream stream,
                                             ShiftWeighting weighting, std::size_t n_draws) {
  require_plain(params);
  const std::vector<double> w = region_weights(grid, weighting);
  Rng rng = make_rng(seed, stream);
  const Eigen::MatrixXd resid = residual_draws(params, grid, rng, n_draws);
  std::vector<double> out(n_draws);
  for (std::size_t d = 0; d < n_draws; ++d)
    out[d] = mean_prevalence(resid.row(static_cast<Eigen::Index>(d)), params.mu, w);
  return out;
}

std::vector<PrevalenceRecord> simulate_survey(std::span<const Point> locations,
                                              std::span<const int> target_n,
                                              std::span<const double> p, Rng& rng) {
  if (locations.size() != target_n.size() || locations.size() != p.size())
    throw InputError("survey inputs differ in length");
  std::vector<PrevalenceRecord> out;
  out.reserve(locations.size());
  for (std::size_t i = 0; i < locations.size(); ++i) {
    std::binomial_distribution<int> binom(target_n[i], std::clamp(p[i], 0.0, 1.0));
    PrevalenceRecord r;
    r.location = locations[i];
    r.n_tested = target_n[i];
    r.n_positive = binom(rng);
    out.push_back(r);
  }
  return out;
}

Proportion make_proportion(std::size_t numerator, std::size_t denominator) {
  Proportion p;
  p.numerator = numerator;
  p.denominator = denominator;
  if (denominator > 0) {
    const double v = static_cast<double>(numerator) / static_cast<double>(denominator);
    p.estimate = v;
    p.std_error = std::sqrt(v * (1.0 - v) / static_cast<double>(denominator));
  }
  return p;
}

Predictive predictive_values(std::span<const ReplicateRecord> records) {
  std::size_t fail = 0, fail_above = 0, pass = 0, pass_below = 0;
  for (const auto& r : records) {
    if (r.decision == Decision::fail) {
      ++fail;
      if (r.truth_above) ++fail_above;
    } else {
      ++pass;
      if (!r.truth_above) ++pass_below;
    }
  }
  return {make_proportion(fail_above, fail), make_proportion(pass_below, pass)};
}

DesignEvalResult evaluate_design(const Design& design, const PredictionGrid& grid,
                                 const ModelParams& generator, const EvalConfig& config) {
  config.validate();
  generator.validate();
  require_plain(generator);

  std::vector<Point> locations;
  std::vector<int> target_n;
  for (const auto& s : design.sites)
    if (!s.reserve) {
      locations.push_back(s.location);
      target_n.push_back(s.target_n);
    }
  if (locations.empty()) throw InputError("design has no primary sites");
  std::vector<std::size_t> eus;
  for (const auto& id : design.eu_ids) {
    const auto e = grid.eu_index(id);
    if (!e) throw DomainError(fmt::format("design EU '{}' is not on the prediction grid", id));
    eus.push_back(*e);
  }

  const std::vector<Point> centres = grid.centres();
  const FieldSimulator surface(centres, generator.sigma2, generator.corr, config.fit.jitter);
  const ConditionalSimulator to_sites(centres, locations, generator.sigma2, generator.corr, config.fit.jitter);
  const ConditionalSimulator to_grid(locations, centres, generator.sigma2, generator.corr, config.fit.jitter);

  const int reps = config.n_replicates;
  struct Outcome {
    std::vector<ReplicateRecord> records;
    bool failed = false;
    bool fallback = false;
    bool domain = false;
    std::string error;
  };
  std::vector<Outcome> outcomes(static_cast<std::size_t>(reps));

#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < reps; ++r) {
    Outcome& out = outcomes[static_cast<std::size_t>(r)];
    const auto ru = static_cast<std::uint64_t>(r);
    try {
      Rng srng = make_rng(config.seed, Stream::surface, ru);
      const Eigen::VectorXd s_grid = surface.draw_residual(srng);
      kernels::RowMatrix p_grid(1, s_grid.size());
      for (Eigen::Index c = 0; c < s_grid.size(); ++c) p_grid(0, c) = kernels::inv_logit(generator.mu + s_grid[c]);

      Rng frng = make_rng(config.seed, Stream::site_field, ru);
      const Eigen::VectorXd s_sites = to_sites.draw(s_grid, frng);
      std::vector<double> p_sites(static_cast<std::size_t>(s_sites.size()));
      for (Eigen::Index i = 0; i < s_sites.size(); ++i)
        p_sites[static_cast<std::size_t>(i)] = kernels::inv_logit(generator.mu + s_sites[i]);
      Rng yrng = make_rng(config.seed, Stream::survey, ru);
      const auto records = simulate_survey(locations, target_n, p_sites, yrng);
      const SiteData data = make_site_data(records);

      FitConfig fc = config.fit;
      fc.seed = derive_seed(config.seed, Stream::refit, ru);
      fc.fix_sigma2 = fc.fix_phi = config.refit_mode == RefitMode::fixed_corr;
      if (!fc.fix_sigma2 && data.positive_sites() == 0) {
        fc.fix_sigma2 = fc.fix_phi = true;
        out.fallback = true;
      }
      const FitResult fit = mcml_fit(data, generator, fc);

      PredictConfig pc;
      pc.n_draws = config.n_draws;
      pc.threshold = config.threshold;
      pc.q_cut = config.q_cut;
      pc.q_rule = config.q_rule;
      pc.seed = derive_seed(config.seed, Stream::predict, ru);
      pc.sampler = config.fit;
      const SurfaceSamples pred = predict_surface(data, fit.estimates, grid, pc, {}, &to_grid);

      for (std::size_t e = 0; e < eus.size(); ++e) {
        ReplicateRecord rec;
        rec.replicate = r;
        rec.eu_id = design.eu_ids[e];
        rec.true_T = population_weighted_T(p_grid, grid, eus[e])[0];
        rec.truth_above = rec.true_T >= config.threshold;
        const auto t = population_weighted_T(pred.p, grid, eus[e]);
        rec.q = elimination_probability(t, config.threshold).q;
        rec.decision = classify_eu(rec.q, config.q_cut, config.q_rule);
        out.records.push_back(std::move(rec));
      }
    } catch (const DomainError& e) {
      out.domain = true;
      out.error = e.what();
    } catch (const std::exception& e) {
      out.failed = true;
      out.error = e.what();
    }
  }

  DesignEvalResult result;
  result.refit_mode = config.refit_mode;
  for (const auto& o : outcomes) {
    if (o.domain) throw DomainError(o.error);
    if (o.failed) {
      ++result.failed_fits;
      if (result.warnings.size() < 5) result.warnings.push_back("replicate fit failed: " + o.error);
      continue;
    }
    if (o.fallback) ++result.fallbacks;
    result.records.insert(result.records.end(), o.records.begin(), o.records.end());
  }
  if (result.failed_fits > config.max_failure_fraction * reps)
    throw EvaluationAbort(fmt::format("{} of {} replicate fits failed (limit {:.0f}%)", result.failed_fits, reps,
                                      100.0 * config.max_failure_fraction));
  if (result.fallbacks > 0)
    result.warnings.push_back(fmt::format("{} all-zero replicates refitted with fixed correlation parameters",
                                          result.fallbacks));
  result.values = predictive_values(result.records);
  return result;
}

const NpvCell& NpvTable::at(int k, int m) const {
  for (const auto& c : cells)
    if (c.k == k && c.m == m) return c;
  throw InputError(fmt::format("no NPV cell for k = {}, m = {}", k, m));
}

NpvTable npv_table(std::span<const SiteRecord> sites, std::span<const std::string> eu_ids,
                   const PredictionGrid& grid, const ModelParams& generator, std::span<const int> ks,
                   std::span<const int> ms, const DesignSpec& base, const EvalConfig& config) {
  NpvTable table;
  table.ks.assign(ks.begin(), ks.end());
  table.ms.assign(ms.begin(), ms.end());
  for (int k : ks) {
    DesignSpec spec = base;
    spec.k = k;
    const Design design = stratified_design(sites, eu_ids, spec);
    for (int m : ms) table.cells.push_back({k, m, evaluate_design(design.with_target(m), grid, generator, config)});
  }
  return table;
}

}  // namespace geoelim
