#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "../csv.hpp"
#include "geoelim/cli.hpp"
#include "geoelim/error.hpp"

namespace geoelim::cli {

using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("cannot open config file '{}'", path.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(fmt::format("config file '{}' is not valid JSON: {}", path.string(), e.what()));
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw InputError(fmt::format("override '{}' is not of the form key=value", assignment));
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  std::string pointer;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) pointer += "/" + part;
  doc[json::json_pointer(pointer)] = value;
}

// Typed lookup of doc[section][key] with a default; type errors name the key.
template <typename T>
T get(const json& doc, const std::string& section, const std::string& key, T fallback) {
  const json* node = &doc;
  if (!section.empty()) {
    if (!doc.contains(section)) return fallback;
    node = &doc[section];
  }
  if (!node->is_object() || !node->contains(key)) return fallback;
  try {
    return (*node)[key].get<T>();
  } catch (const json::exception&) {
    const std::string name = section.empty() ? key : section + "." + key;
    throw InputError(fmt::format("config key '{}' has the wrong type", name));
  }
}

bool has(const json& doc, const std::string& section, const std::string& key) {
  return doc.contains(section) && doc[section].is_object() && doc[section].contains(key);
}

std::optional<fs::path> path_of(const json& doc, const std::string& key, const fs::path& base) {
  // Manifests record unset paths as null.
  if (!has(doc, "paths", key) || doc["paths"][key].is_null()) return std::nullopt;
  const auto s = get<std::string>(doc, "paths", key, "");
  if (s.empty()) return std::nullopt;
  fs::path p(s);
  if (p.is_relative()) p = base / p;
  return p.lexically_normal();
}

json path_json(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

}  // namespace

RunConfig load_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides,
                      std::optional<std::uint64_t> seed, std::optional<fs::path> out_dir,
                      std::optional<int> workers) {
  json doc = json::object();
  fs::path base = fs::current_path();
  if (file) {
    doc = read_json_file(*file);
    if (doc.value("tool", "") == "geoelim" && doc.contains("config")) doc = doc["config"];
    base = fs::absolute(*file).parent_path();
  }
  if (!doc.is_object()) throw InputError("config must be a JSON object");
  for (const auto& o : overrides) apply_override(doc, o);
  if (seed) doc["seed"] = *seed;

  RunConfig c;
  if (!doc.contains("seed")) throw InputError("missing required config key 'seed'");
  c.seed = get<std::uint64_t>(doc, "", "seed", 0);

  c.paths.gazette = path_of(doc, "gazette", base);
  c.paths.prevalence = path_of(doc, "prevalence", base);
  c.paths.raster = path_of(doc, "raster", base);
  c.paths.eus = path_of(doc, "eus", base);
  c.paths.fit = path_of(doc, "fit", base);
  if (out_dir) {
    c.paths.out_dir = *out_dir;
  } else if (auto p = path_of(doc, "out_dir", base)) {
    c.paths.out_dir = *p;
  }
  if (workers) c.workers = *workers;

  const auto kind = get<std::string>(doc, "coordinates", "kind", "planar");
  if (kind == "planar") {
    c.projection = Projection::planar();
  } else if (kind == "lonlat") {
    if (!has(doc, "coordinates", "lon0") || !has(doc, "coordinates", "lat0"))
      throw InputError("coordinates.kind = lonlat needs coordinates.lon0 and coordinates.lat0");
    c.projection = Projection::equirectangular(get<double>(doc, "coordinates", "lon0", 0.0),
                                               get<double>(doc, "coordinates", "lat0", 0.0));
  } else {
    throw InputError(fmt::format("config key 'coordinates.kind' must be planar or lonlat, got '{}'", kind));
  }

  if (has(doc, "grid", "xmin")) {
    c.grid_bounds = Bounds{get<double>(doc, "grid", "xmin", 0.0), get<double>(doc, "grid", "ymin", 0.0),
                           get<double>(doc, "grid", "xmax", 0.0), get<double>(doc, "grid", "ymax", 0.0)};
  }
  if (has(doc, "grid", "spacing")) c.grid_spacing = get<double>(doc, "grid", "spacing", 1.0);

  // Model. phi may be declared in degrees; it is stored in km.
  c.model_mu_given = has(doc, "model", "mu");
  c.model_sigma2_given = has(doc, "model", "sigma2");
  c.model.mu = get<double>(doc, "model", "mu", 0.0);
  c.model.sigma2 = get<double>(doc, "model", "sigma2", 1.0);
  if (has(doc, "model", "correlation")) {
    try {
      c.model.corr = doc["model"]["correlation"].get<CorrelationSpec>();
    } catch (const json::exception&) {
      throw InputError("config key 'model.correlation' has the wrong type");
    }
    c.model_phi_given = doc["model"]["correlation"].contains("phi");
  }
  const auto phi_unit = get<std::string>(doc, "model", "phi_unit", "km");
  if (phi_unit == "degrees") {
    c.model.corr.phi *= kKmPerDegree;
  } else if (phi_unit != "km") {
    throw InputError(fmt::format("config key 'model.phi_unit' must be km or degrees, got '{}'", phi_unit));
  }
  c.covariates = get<std::vector<std::string>>(doc, "model", "covariates", {});
  c.model.beta = get<std::vector<double>>(doc, "model", "beta", std::vector<double>(c.covariates.size(), 0.0));
  c.model.covariate_names = c.covariates;
  if (c.model.beta.size() != c.covariates.size())
    throw InputError("config keys 'model.beta' and 'model.covariates' differ in length");

  auto& f = c.fit;
  f.mc_samples = get<int>(doc, "fit", "mc_samples", f.mc_samples);
  f.burn_in = get<int>(doc, "fit", "burn_in", f.burn_in);
  f.thin = get<int>(doc, "fit", "thin", f.thin);
  f.relaxation_cycles = get<int>(doc, "fit", "relaxation_cycles", f.relaxation_cycles);
  f.tolerance = get<double>(doc, "fit", "tolerance", f.tolerance);
  f.max_iterations = get<int>(doc, "fit", "max_iterations", f.max_iterations);
  f.include_binomial_coefficient = get<bool>(doc, "fit", "include_binomial_coefficient", true);
  f.fix_sigma2 = get<bool>(doc, "fit", "fix_sigma2", false);
  f.fix_phi = get<bool>(doc, "fit", "fix_phi", false);
  f.seed = derive_seed(c.seed, Stream::refit, 0);
  c.dump_chain = get<bool>(doc, "fit", "dump_chain", false);
  f.validate();

  auto& p = c.predict;
  p.n_draws = get<std::size_t>(doc, "predict", "n_draws", p.n_draws);
  p.threshold = get<double>(doc, "predict", "threshold", p.threshold);
  p.q_cut = get<double>(doc, "predict", "q_cut", p.q_cut);
  p.q_rule = q_rule_from_string(get<std::string>(doc, "predict", "q_rule", "at_least"));
  p.seed = derive_seed(c.seed, Stream::predict, 0);
  p.sampler = f;
  c.dump_t = get<bool>(doc, "predict", "dump_t", false);
  p.validate();

  auto& d = c.design;
  d.k = get<int>(doc, "design", "k", d.k);
  d.m = get<int>(doc, "design", "m", d.m);
  d.delta_min = get<double>(doc, "design", "delta_min", d.delta_min);
  d.n_reserve = get<int>(doc, "design", "n_reserve", d.n_reserve);
  d.max_restarts = get<int>(doc, "design", "max_restarts", d.max_restarts);
  d.seed = derive_seed(c.seed, Stream::design, 0);
  c.n_baseline = get<int>(doc, "design", "n_baseline", c.n_baseline);
  d.validate();

  auto& e = c.evaluate;
  e.n_replicates = get<int>(doc, "evaluate", "n_replicates", e.n_replicates);
  e.target_mean_prev = get<double>(doc, "evaluate", "target_mean_prev", e.target_mean_prev);
  e.threshold = get<double>(doc, "evaluate", "threshold", p.threshold);
  e.q_cut = get<double>(doc, "evaluate", "q_cut", p.q_cut);
  e.q_rule = q_rule_from_string(get<std::string>(doc, "evaluate", "q_rule", to_string(p.q_rule)));
  e.refit_mode = refit_mode_from_string(get<std::string>(doc, "evaluate", "refit_mode", "full_mcml"));
  e.shift_weighting = shift_weighting_from_string(get<std::string>(doc, "evaluate", "shift_weighting", "areal"));
  e.n_draws = get<std::size_t>(doc, "evaluate", "n_draws", e.n_draws);
  e.max_failure_fraction = get<double>(doc, "evaluate", "max_failure_fraction", e.max_failure_fraction);
  e.seed = derive_seed(c.seed, Stream::surface, 0);
  e.fit = f;
  c.ks = get<std::vector<int>>(doc, "evaluate", "ks", c.ks);
  c.ms = get<std::vector<int>>(doc, "evaluate", "ms", c.ms);
  c.shift = get<bool>(doc, "evaluate", "shift", true);
  if (c.ks.empty() || c.ms.empty()) throw InputError("config keys 'evaluate.ks' and 'evaluate.ms' must be nonempty");
  e.validate();

  c.demo_cells = get<std::size_t>(doc, "simulate", "cells_per_side", c.demo_cells);
  c.smooth_kappa = get<double>(doc, "simulate", "smooth_kappa", c.smooth_kappa);

  // Effective configuration: every knob that can change an output. The
  // output directory and worker count are deliberately left out.
  json eff;
  eff["seed"] = c.seed;
  eff["paths"] = {{"gazette", path_json(c.paths.gazette)},
                  {"prevalence", path_json(c.paths.prevalence)},
                  {"raster", path_json(c.paths.raster)},
                  {"eus", path_json(c.paths.eus)},
                  {"fit", path_json(c.paths.fit)}};
  eff["coordinates"] = {{"kind", kind}};
  if (kind == "lonlat") {
    eff["coordinates"]["lon0"] = c.projection.lon0();
    eff["coordinates"]["lat0"] = c.projection.lat0();
  }
  eff["grid"] = json::object();
  if (c.grid_bounds)
    eff["grid"] = {{"xmin", c.grid_bounds->xmin}, {"ymin", c.grid_bounds->ymin},
                   {"xmax", c.grid_bounds->xmax}, {"ymax", c.grid_bounds->ymax}};
  if (c.grid_spacing) eff["grid"]["spacing"] = *c.grid_spacing;
  eff["model"] = {{"correlation", c.model.corr}, {"phi_unit", "km"}, {"covariates", c.covariates},
                  {"beta", c.model.beta}};
  if (c.model_mu_given) eff["model"]["mu"] = c.model.mu;
  if (c.model_sigma2_given) eff["model"]["sigma2"] = c.model.sigma2;
  if (!c.model_phi_given) eff["model"]["correlation"].erase("phi");
  eff["fit"] = {{"mc_samples", f.mc_samples}, {"burn_in", f.burn_in}, {"thin", f.thin},
                {"relaxation_cycles", f.relaxation_cycles}, {"tolerance", f.tolerance},
                {"max_iterations", f.max_iterations},
                {"include_binomial_coefficient", f.include_binomial_coefficient},
                {"fix_sigma2", f.fix_sigma2}, {"fix_phi", f.fix_phi}, {"dump_chain", c.dump_chain}};
  eff["predict"] = {{"n_draws", p.n_draws}, {"threshold", p.threshold}, {"q_cut", p.q_cut},
                    {"q_rule", to_string(p.q_rule)}, {"dump_t", c.dump_t}};
  eff["design"] = {{"k", d.k}, {"m", d.m}, {"delta_min", d.delta_min}, {"n_reserve", d.n_reserve},
                   {"max_restarts", d.max_restarts}, {"n_baseline", c.n_baseline}};
  eff["evaluate"] = {{"n_replicates", e.n_replicates}, {"target_mean_prev", e.target_mean_prev},
                     {"threshold", e.threshold}, {"q_cut", e.q_cut}, {"q_rule", to_string(e.q_rule)},
                     {"refit_mode", to_string(e.refit_mode)},
                     {"shift_weighting", to_string(e.shift_weighting)}, {"n_draws", e.n_draws},
                     {"max_failure_fraction", e.max_failure_fraction}, {"ks", c.ks}, {"ms", c.ms},
                     {"shift", c.shift}};
  eff["simulate"] = {{"cells_per_side", c.demo_cells}, {"smooth_kappa", c.smooth_kappa}};
  c.effective = std::move(eff);
  return c;
}

const fs::path& require_path(const std::optional<fs::path>& p, const std::string& key) {
  if (!p) throw InputError(fmt::format("missing required config key 'paths.{}'", key));
  if (!fs::exists(*p))
    throw InputError(fmt::format("file for config key 'paths.{}' does not exist: {}", key, p->string()));
  return *p;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::string out;
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(fmt::format("cannot read '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

void write_manifest(const RunConfig& config, const std::string& command,
                    const std::vector<fs::path>& outputs, const nlohmann::json& extra) {
  json m;
  m["tool"] = "geoelim";
  m["version"] = "0.1.0";
  m["command"] = command;
  m["seed"] = config.seed;
  m["config_sha256"] = sha256_hex(config.effective.dump());
  json inputs = json::object();
  for (const auto& [key, value] : config.effective["paths"].items())
    if (value.is_string() && fs::exists(value.get<std::string>()))
      inputs[key] = sha256_file(value.get<std::string>());
  m["inputs"] = inputs;
  json outs = json::object();
  for (const auto& p : outputs) outs[p.filename().string()] = sha256_file(p);
  m["outputs"] = outs;
  if (!extra.is_null()) m["run"] = extra;
  m["config"] = config.effective;
  std::ofstream out(config.paths.out_dir / "manifest.json");
  out << m.dump(2) << "\n";
}

ModelParams read_fit_parameters(const fs::path& path, const CorrelationSpec& family) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("cannot open fit parameters '{}'", path.string()));
  std::string line;
  std::getline(in, line);
  if (csv::trim(line).rfind("parameter,estimate", 0) != 0)
    throw InputError(fmt::format("'{}' is not a fit parameter table", path.string()));
  ModelParams m;
  m.corr = family;
  bool have_sigma2 = false, have_phi = false, have_mu = false;
  for (std::size_t row = 1; std::getline(in, line); ++row) {
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    if (f.size() < 2) throw InputError(fmt::format("malformed row {} in '{}'", row, path.string()));
    const double v = csv::parse_double(f[1], row, "estimate");
    if (f[0] == "mu" || f[0] == "alpha") {
      m.mu = v;
      have_mu = true;
    } else if (f[0] == "sigma2") {
      m.sigma2 = v;
      have_sigma2 = true;
    } else if (f[0] == "phi") {
      m.corr.phi = v;
      have_phi = true;
    } else {
      m.covariate_names.push_back(f[0]);
      m.beta.push_back(v);
    }
  }
  if (!have_mu || !have_sigma2 || !have_phi)
    throw InputError(fmt::format("'{}' lacks one of the mu, sigma2, phi rows", path.string()));
  m.validate();
  return m;
}

}  // namespace geoelim::cli
