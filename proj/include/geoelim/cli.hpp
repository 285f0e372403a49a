#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoelim/design.hpp"
#include "geoelim/evaluate.hpp"
#include "geoelim/fit.hpp"
#include "geoelim/geodata.hpp"
#include "geoelim/gpfield.hpp"
#include "geoelim/predict.hpp"

namespace geoelim::cli {

namespace fs = std::filesystem;

// km per degree of arc on the reference sphere.
inline constexpr double kKmPerDegree = 111.19508372419142;

struct Paths {
  std::optional<fs::path> gazette;
  std::optional<fs::path> prevalence;
  std::optional<fs::path> raster;
  std::optional<fs::path> eus;
  std::optional<fs::path> fit;  // fit_parameters.csv from an earlier `fit` run
  fs::path out_dir = "out";
};

struct RunConfig {
  std::uint64_t seed = 0;
  Paths paths;
  Projection projection;
  std::optional<Bounds> grid_bounds;  // planar km
  std::optional<double> grid_spacing;

  ModelParams model;
  bool model_mu_given = false;
  bool model_sigma2_given = false;
  bool model_phi_given = false;
  std::vector<std::string> covariates;

  FitConfig fit;
  bool dump_chain = false;

  PredictConfig predict;
  bool dump_t = false;

  DesignSpec design;
  int n_baseline = 200;

  EvalConfig evaluate;
  std::vector<int> ks{5, 10, 15};
  std::vector<int> ms{60, 80, 100};
  bool shift = true;

  std::size_t demo_cells = 50;
  double smooth_kappa = 1.5;

  int workers = 0;  // 0 leaves the OpenMP default
  // Fully resolved configuration, as recorded in manifests.
  nlohmann::json effective;
};

// Reads the file (or a manifest written by an earlier run), applies
// `key.path=value` overrides, then the explicit flags.
RunConfig load_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides,
                      std::optional<std::uint64_t> seed, std::optional<fs::path> out_dir,
                      std::optional<int> workers);

// Throws InputError naming the key when the path is absent or missing on disk.
const fs::path& require_path(const std::optional<fs::path>& p, const std::string& key);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const fs::path& path);

void write_manifest(const RunConfig& config, const std::string& command,
                    const std::vector<fs::path>& outputs, const nlohmann::json& extra = {});

// Parameters written by `fit`: rows parameter,estimate,lower,upper,mc_stderr,fixed,unit.
ModelParams read_fit_parameters(const fs::path& path, const CorrelationSpec& family);

int cmd_fit(const RunConfig& config, std::ostream& log);
int cmd_predict(const RunConfig& config, std::ostream& log);
int cmd_design(const RunConfig& config, std::ostream& log);
int cmd_evaluate(const RunConfig& config, std::ostream& log);
int cmd_simulate(const RunConfig& config, std::ostream& log);

// Full command-line entry point; errors become one JSON line on `err`.
int run(int argc, char** argv, std::ostream& err);

}  // namespace geoelim::cli
