#include <omp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "../csv.hpp"
#include "geoelim/cli.hpp"
#include "geoelim/error.hpp"

namespace geoelim::cli {

using nlohmann::json;

namespace {

void warn(std::ostream& log, const std::string& message) {
  log << json{{"level", "warning"}, {"message", message}}.dump() << "\n";
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

std::string num(double v) { return csv::fmt_double(v); }

std::vector<EvaluationUnit> load_eus(const RunConfig& c) {
  return load_evaluation_units(require_path(c.paths.eus, "eus"), c.projection);
}

PredictionGrid make_grid(const RunConfig& c, const std::vector<EvaluationUnit>& eus) {
  const AsciiRaster raster = load_ascii_raster(require_path(c.paths.raster, "raster"));
  Bounds b;
  if (c.grid_bounds) {
    b = *c.grid_bounds;
  } else {
    const Point lo = c.projection.forward(raster.xll, raster.yll);
    const Point hi = c.projection.forward(raster.xll + raster.cellsize * static_cast<double>(raster.ncols),
                                          raster.yll + raster.cellsize * static_cast<double>(raster.nrows));
    b = {lo.x, lo.y, hi.x, hi.y};
  }
  const double spacing = c.grid_spacing ? *c.grid_spacing : raster.cellsize * c.projection.x_scale();
  return build_grid(b, spacing, raster, c.projection, eus);
}

struct LoadedData {
  std::vector<PrevalenceRecord> records;
  SiteData data;
};

LoadedData load_data(const RunConfig& c, std::ostream& log) {
  PrevalenceSummary summary;
  std::vector<std::string> names;
  LoadedData out;
  out.records = load_prevalence(require_path(c.paths.prevalence, "prevalence"), c.projection, &summary, &names);
  for (const auto& w : summary.warnings) warn(log, w);
  std::vector<std::size_t> cols;
  for (const auto& want : c.covariates) {
    const auto it = std::find(names.begin(), names.end(), want);
    if (it == names.end()) throw InputError(fmt::format("covariate '{}' is not a column of the prevalence file", want));
    cols.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  for (auto& r : out.records) {
    std::vector<double> picked;
    for (auto k : cols) picked.push_back(r.covariates[k]);
    r.covariates = std::move(picked);
  }
  out.data = make_site_data(out.records, c.covariates);
  return out;
}

ModelParams generator_params(const RunConfig& c) {
  if (c.paths.fit) return read_fit_parameters(require_path(c.paths.fit, "fit"), c.model.corr);
  if (!c.model_mu_given || !c.model_sigma2_given || !c.model_phi_given)
    throw InputError("model parameters needed: set paths.fit or model.mu, model.sigma2 and model.correlation.phi");
  ModelParams m = c.model;
  m.validate();
  return m;
}

std::string fmt_param(double v) { return fmt::format("{:.4f}", v); }

void write_fit_report(const fs::path& path, const FitResult& fit, const SiteData& data) {
  auto out = open_out(path);
  long tested = 0, positive = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    tested += data.n[i];
    positive += data.y[i];
  }
  out << "Monte Carlo maximum likelihood fit, binomial-logit Gaussian process\n";
  out << fmt::format("sites: {} ({} distinct, {} with positives)\n", data.size(), data.distinct_locations(),
                     data.positive_sites());
  out << fmt::format("tested: {}, positive: {}\n\n", tested, positive);
  out << fmt::format("{:<12} {:>12} {:>12} {:>12} {:>12}\n", "parameter", "estimate", "lower95", "upper95",
                     "mc_stderr");
  for (const auto& p : fit.parameters) {
    const std::string name = p.name == "phi" ? "phi (" + fit.distance_unit + ")" : p.name;
    if (p.fixed)
      out << fmt::format("{:<12} {:>12} {:>12} {:>12} {:>12}\n", name, fmt_param(p.estimate), "fixed", "", "");
    else
      out << fmt::format("{:<12} {:>12} {:>12} {:>12} {:>12}\n", name, fmt_param(p.estimate), fmt_param(p.lower),
                         fmt_param(p.upper), fmt_param(p.mc_stderr));
  }
  out << "\nintervals: Wald on the transformed scale (mu, log sigma2, log phi)\n";
  const auto& d = fit.diagnostics;
  out << fmt::format("log-likelihood Monte Carlo stderr: {:.6f}\n", fit.loglik_mc_stderr);
  out << fmt::format("sampler acceptance: {:.4f}, minimum ESS: {:.1f}\n", d.acceptance_rate, d.min_ess);
  out << fmt::format("importance-sampling ESS at optimum: {:.1f}\n", d.importance_ess);
  out << fmt::format("relaxation cycles: {}, Newton iterations: {}, jitter events: {}\n", d.cycles, d.iterations,
                     d.jitter_events);
  for (const auto& w : d.warnings) out << "warning: " << w << "\n";
}

void write_fit_parameters(const fs::path& path, const FitResult& fit) {
  auto out = open_out(path);
  out << "parameter,estimate,lower,upper,mc_stderr,fixed,unit\n";
  for (const auto& p : fit.parameters)
    out << fmt::format("{},{},{},{},{},{},{}\n", p.name, num(p.estimate), num(p.lower), num(p.upper),
                       num(p.mc_stderr), p.fixed ? "true" : "false", p.name == "phi" ? fit.distance_unit : "");
}

double max_pairwise_distance(const SiteData& d) {
  double m = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = i + 1; j < d.size(); ++j) m = std::max(m, distance(d.locations[i], d.locations[j]));
  return m;
}

std::string proportion_cell(const Proportion& p) {
  if (!p.estimate) return "NA";
  return fmt::format("{:.3f}({:.3f})", *p.estimate, p.std_error);
}

void write_table(const fs::path& path, const NpvTable& table, bool npv) {
  auto out = open_out(path);
  out << "k";
  for (int m : table.ms) out << ",m=" << m;
  out << "\n";
  for (int k : table.ks) {
    out << k;
    for (int m : table.ms) {
      const auto& v = table.at(k, m).result.values;
      out << "," << proportion_cell(npv ? v.npv : v.ppv);
    }
    out << "\n";
  }
}

}  // namespace

int cmd_fit(const RunConfig& c, std::ostream& log) {
  const LoadedData loaded = load_data(c, log);
  const SiteData& data = loaded.data;
  ModelParams init = c.model;
  if (!c.model_mu_given) {
    double y = 0.0, n = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      y += data.y[i];
      n += data.n[i];
    }
    const double p = (y + 0.5) / (n + 1.0);
    init.mu = std::log(p / (1.0 - p));
  }
  if (!c.model_phi_given) init.corr.phi = std::max(max_pairwise_distance(data) / 10.0, 1e-6);

  const FitResult fit = mcml_fit(data, init, c.fit);
  for (const auto& w : fit.diagnostics.warnings) warn(log, w);

  fs::create_directories(c.paths.out_dir);
  std::vector<fs::path> outputs{c.paths.out_dir / "fit_report.txt", c.paths.out_dir / "fit_parameters.csv"};
  write_fit_report(outputs[0], fit, data);
  write_fit_parameters(outputs[1], fit);
  if (c.dump_chain) {
    const LatentSamples chain = sample_latent(data, fit.estimates, c.fit, derive_seed(c.seed, Stream::sampler, 1));
    outputs.push_back(c.paths.out_dir / "chain.csv");
    auto out = open_out(outputs.back());
    out << "draw";
    for (std::size_t i = 0; i < data.size(); ++i) out << ",site" << i + 1;
    out << "\n";
    for (Eigen::Index r = 0; r < chain.eta.rows(); ++r) {
      out << r;
      for (Eigen::Index i = 0; i < chain.eta.cols(); ++i) out << "," << num(chain.eta(r, i));
      out << "\n";
    }
  }
  write_manifest(c, "fit", outputs,
                 {{"converged", true}, {"warnings", fit.diagnostics.warnings}, {"distance_unit", fit.distance_unit}});
  return 0;
}

int cmd_predict(const RunConfig& c, std::ostream& log) {
  const auto eus = load_eus(c);
  const PredictionGrid grid = make_grid(c, eus);
  const ModelParams params = generator_params(c);
  if (params.has_covariates())
    throw InputError("prediction with covariates needs covariate values at grid cells, which the grid does not carry");
  SiteData data;
  if (c.paths.prevalence) data = load_data(c, log).data;

  const SurfaceSamples surface = predict_surface(data, params, grid, c.predict);
  if (data.size() > 0 && (surface.diagnostics.acceptance_warning || surface.diagnostics.ess_warning))
    warn(log, fmt::format("sampler diagnostics: acceptance {:.3f}, min ESS {:.0f}", surface.diagnostics.acceptance_rate,
                          surface.diagnostics.min_ess));
  const auto results = predict_eus(surface, grid, c.predict);

  fs::create_directories(c.paths.out_dir);
  std::vector<fs::path> outputs{c.paths.out_dir / "predictions.csv", c.paths.out_dir / "p_mean.asc",
                                c.paths.out_dir / "p_sd.asc"};
  {
    auto out = open_out(outputs[0]);
    out << "eu_id,q,q_mc_stderr,threshold,decision,n_draws\n";
    for (const auto& r : results)
      out << fmt::format("{},{},{},{},{},{}\n", csv::quote(r.eu_id), num(r.q), num(r.q_mc_stderr), num(r.threshold),
                         to_string(r.decision), r.t_samples.size());
  }
  const SurfaceSummary summary = summarise_surface(surface);
  write_ascii_raster(outputs[1], grid_to_raster(grid, summary.mean));
  write_ascii_raster(outputs[2], grid_to_raster(grid, summary.sd));
  if (c.dump_t) {
    outputs.push_back(c.paths.out_dir / "t_samples.csv");
    auto out = open_out(outputs.back());
    out << "eu_id,draw,T\n";
    for (const auto& r : results)
      for (std::size_t d = 0; d < r.t_samples.size(); ++d)
        out << fmt::format("{},{},{}\n", csv::quote(r.eu_id), d, num(r.t_samples[d]));
  }
  write_manifest(c, "predict", outputs,
                 {{"q_rule", to_string(c.predict.q_rule)}, {"q_cut", c.predict.q_cut},
                  {"conditioned_on_data", data.size() > 0}});
  return 0;
}

int cmd_design(const RunConfig& c, std::ostream& log) {
  const auto sites = load_gazette(require_path(c.paths.gazette, "gazette"), c.projection);
  const auto eus = load_eus(c);
  std::vector<std::string> eu_ids;
  for (const auto& e : eus) eu_ids.push_back(e.eu_id);
  for (const auto& s : sites)
    if (!s.eu_id.empty() && std::find(eu_ids.begin(), eu_ids.end(), s.eu_id) == eu_ids.end())
      throw InputError(fmt::format("site '{}' refers to undeclared evaluation unit '{}'", s.id, s.eu_id));

  const Design design = stratified_design(sites, eu_ids, c.design);
  for (const auto& n : design.notes) warn(log, n);
  const auto scores = design_regularity_score(design, sites, c.n_baseline);

  fs::create_directories(c.paths.out_dir);
  std::vector<fs::path> outputs{c.paths.out_dir / "design.geojson", c.paths.out_dir / "design.csv",
                                c.paths.out_dir / "regularity.csv"};
  std::vector<PointFeature> features;
  for (const auto& s : design.sites)
    features.push_back({s.location, json{{"site_id", s.site_id},
                                         {"eu_id", s.eu_id},
                                         {"target_n", s.target_n},
                                         {"reserve", s.reserve}}});
  write_point_features(outputs[0], features, c.projection);
  {
    auto out = open_out(outputs[1]);
    out << "eu_id,site_id,target_n,reserve\n";
    for (const auto& s : design.sites)
      out << fmt::format("{},{},{},{}\n", csv::quote(s.eu_id), csv::quote(s.site_id), s.target_n,
                         s.reserve ? "true" : "false");
  }
  {
    auto out = open_out(outputs[2]);
    out << "eu_id,k,min_nn,mean_nn,srs_min_nn,srs_mean_nn\n";
    for (const auto& r : scores)
      out << fmt::format("{},{},{},{},{},{}\n", csv::quote(r.eu_id), r.k, num(r.min_nn), num(r.mean_nn),
                         num(r.srs_min_nn), num(r.srs_mean_nn));
  }
  write_manifest(c, "design", outputs,
                 {{"primary_sites", design.primary_count()}, {"reserve_sites", design.reserve_count()},
                  {"notes", design.notes}});
  return 0;
}

int cmd_evaluate(const RunConfig& c, std::ostream& log) {
  const auto sites = load_gazette(require_path(c.paths.gazette, "gazette"), c.projection);
  const auto eus = load_eus(c);
  const PredictionGrid grid = make_grid(c, eus);
  std::vector<std::string> eu_ids;
  for (const auto& e : eus) eu_ids.push_back(e.eu_id);

  ModelParams generator = generator_params(c);
  double delta = 0.0;
  if (c.shift) {
    const ShiftResult s = shift_intercept(generator, grid, c.evaluate.target_mean_prev,
                                          derive_seed(c.seed, Stream::calibration), c.evaluate.shift_weighting);
    generator = s.params;
    delta = s.delta;
  }
  const NpvTable table = npv_table(sites, eu_ids, grid, generator, c.ks, c.ms, c.design, c.evaluate);

  fs::create_directories(c.paths.out_dir);
  std::vector<fs::path> outputs{c.paths.out_dir / "npv_table.csv", c.paths.out_dir / "ppv_table.csv",
                                c.paths.out_dir / "replicates.csv"};
  write_table(outputs[0], table, true);
  write_table(outputs[1], table, false);
  {
    auto out = open_out(outputs[2]);
    out << "k,m,replicate,eu_id,true_T,truth_above,q,decision\n";
    for (const auto& cell : table.cells)
      for (const auto& r : cell.result.records)
        out << fmt::format("{},{},{},{},{},{},{},{}\n", cell.k, cell.m, r.replicate, csv::quote(r.eu_id),
                           num(r.true_T), r.truth_above ? "true" : "false", num(r.q), to_string(r.decision));
  }
  json cells = json::array();
  for (const auto& cell : table.cells) {
    cells.push_back({{"k", cell.k}, {"m", cell.m}, {"failed_fits", cell.result.failed_fits},
                     {"fallbacks", cell.result.fallbacks}});
    for (const auto& w : cell.result.warnings) warn(log, fmt::format("k={}, m={}: {}", cell.k, cell.m, w));
  }
  const bool unreliable = c.evaluate.n_replicates < 30;
  if (unreliable) warn(log, "fewer than 30 replicates: standard errors are unreliable");
  write_manifest(c, "evaluate", outputs,
                 {{"refit_mode", to_string(c.evaluate.refit_mode)},
                  {"intercept_shift", delta},
                  {"generator", {{"mu", generator.mu}, {"sigma2", generator.sigma2}, {"correlation", generator.corr}}},
                  {"stderr_unreliable", unreliable},
                  {"cells", cells}});
  return 0;
}

int cmd_simulate(const RunConfig& c, std::ostream&) {
  const DemoResult demo = figure2_demo(c.seed, c.demo_cells, c.smooth_kappa);
  fs::create_directories(c.paths.out_dir);
  std::vector<fs::path> outputs;
  json panels = json::array();
  for (const auto& p : demo.panels) {
    outputs.push_back(c.paths.out_dir / ("field_" + p.label + ".csv"));
    {
      auto out = open_out(outputs.back());
      out << "cell_id,x,y,s\n";
      for (std::size_t i = 0; i < demo.grid.size(); ++i) {
        const auto& cell = demo.grid.cells[i];
        out << fmt::format("{},{},{},{}\n", cell.cell_id, num(cell.centre.x), num(cell.centre.y),
                           num(p.standardised[i]));
      }
    }
    outputs.push_back(c.paths.out_dir / ("curve_" + p.label + ".csv"));
    {
      auto out = open_out(outputs.back());
      out << "u,rho\n";
      for (const auto& pt : p.curve) out << fmt::format("{},{}\n", num(pt.u), num(pt.rho));
    }
    panels.push_back({{"label", p.label}, {"range", p.range}, {"correlation", p.corr}});
  }
  write_manifest(c, "simulate", outputs, {{"panels", panels}});
  return 0;
}

int run(int argc, char** argv, std::ostream& err) {
  CLI::App app{"Geostatistical design and analysis of elimination surveys"};
  app.require_subcommand(1);
  struct Flags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<std::string> out_dir;
    std::vector<std::string> sets;
  } flags;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"fit", "Fit the model to prevalence data by Monte Carlo maximum likelihood"},
      {"predict", "Predictive probabilities that EU prevalence is below the threshold"},
      {"design", "Spatially regulated stratified sampling design"},
      {"evaluate", "NPV/PPV of designs by simulation"},
      {"simulate", "Standardised field realisations and correlation curves"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "Configuration file (JSON) or a manifest from an earlier run");
    sub->add_option("--seed", flags.seed, "Master seed");
    sub->add_option("--workers", flags.workers, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out-dir", flags.out_dir, "Output directory");
    sub->add_option("--set", flags.sets, "Override a config key: section.key=value");
  }

  auto emit = [&err](const std::string& kind, const std::string& message, ExitCode code, json extra = json::object()) {
    json j{{"level", "error"}, {"kind", kind}, {"message", message}, {"exit_code", static_cast<int>(code)}};
    j.update(extra);
    err << j.dump() << "\n";
    return static_cast<int>(code);
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit("usage", e.what(), ExitCode::input);
  }

  try {
    std::optional<fs::path> file;
    if (flags.config) file = fs::path(*flags.config);
    std::optional<fs::path> out;
    if (flags.out_dir) out = fs::path(*flags.out_dir);
    const RunConfig config = load_config(file, flags.sets, flags.seed, out, flags.workers);
    if (config.workers > 0) omp_set_num_threads(config.workers);
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "fit") return cmd_fit(config, err);
    if (name == "predict") return cmd_predict(config, err);
    if (name == "design") return cmd_design(config, err);
    if (name == "evaluate") return cmd_evaluate(config, err);
    return cmd_simulate(config, err);
  } catch (const InfeasibleDesignError& e) {
    return emit(e.kind(), e.what(), e.code(), {{"eu_ids", e.eu_ids()}, {"best_k", e.best_k()}});
  } catch (const ConvergenceError& e) {
    return emit(e.kind(), e.what(), e.code(), {{"trajectory", e.trajectory()}});
  } catch (const Error& e) {
    return emit(e.kind(), e.what(), e.code());
  } catch (const std::exception& e) {
    return emit("internal", e.what(), ExitCode::failure);
  }
}

}  // namespace geoelim::cli
