#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geoelim/design.hpp"
#include "geoelim/fit.hpp"
#include "geoelim/geodata.hpp"
#include "geoelim/gpfield.hpp"
#include "geoelim/predict.hpp"

namespace geoelim {

enum class RefitMode { full_mcml, fixed_corr };
enum class ShiftWeighting { areal, population };

std::string to_string(RefitMode m);
RefitMode refit_mode_from_string(const std::string& s);
std::string to_string(ShiftWeighting w);
ShiftWeighting shift_weighting_from_string(const std::string& s);

struct EvalConfig {
  int n_replicates = 200;
  double target_mean_prev = 0.01;
  double threshold = 0.01;
  double q_cut = 0.95;
  QRule q_rule = QRule::at_least;
  RefitMode refit_mode = RefitMode::full_mcml;
  ShiftWeighting shift_weighting = ShiftWeighting::areal;
  std::size_t n_draws = 1000;  // predictive draws per replicate
  std::uint64_t seed = 1;
  FitConfig fit;
  double max_failure_fraction = 0.05;

  void validate() const;
};

struct ShiftResult {
  ModelParams params;  // intercept moved by delta
  double delta = 0.0;
  double achieved = 0.0;  // expected regional mean prevalence over the calibration draws
};

// Moves the intercept so the expected regional mean of P over `n_draws`
// seeded field draws equals `target` (bisection on the shift).
ShiftResult shift_intercept(const ModelParams& params, const PredictionGrid& grid, double target,
                            std::uint64_t seed, ShiftWeighting weighting = ShiftWeighting::areal,
                            std::size_t n_draws = 500);

// Regional mean prevalence of each of `n_draws` fresh field draws.
std::vector<double> regional_mean_prevalence(const ModelParams& params, const PredictionGrid& grid,
                                             std::uint64_t seed, Stream stream,
                                             ShiftWeighting weighting, std::size_t n_draws);

// y ~ Binomial(target_n, p) per site.
std::vector<PrevalenceRecord> simulate_survey(std::span<const Point> locations,
                                              std::span<const int> target_n,
                                              std::span<const double> p, Rng& rng);

struct ReplicateRecord {
  int replicate = 0;
  std::string eu_id;
  double true_T = 0.0;
  bool truth_above = false;
  double q = 0.0;
  Decision decision = Decision::fail;
};

struct Proportion {
  std::optional<double> estimate;  // absent when the denominator is zero
  double std_error = 0.0;
  std::size_t numerator = 0;
  std::size_t denominator = 0;
};

Proportion make_proportion(std::size_t numerator, std::size_t denominator);

struct Predictive {
  Proportion npv;  // truth above among failing EUs
  Proportion ppv;  // truth below among passing EUs
};

// Order-free counting over replicate records.
Predictive predictive_values(std::span<const ReplicateRecord> records);

struct DesignEvalResult {
  std::vector<ReplicateRecord> records;  // replicate-major, EU order within
  Predictive values;
  RefitMode refit_mode = RefitMode::full_mcml;
  int failed_fits = 0;
  int fallbacks = 0;  // all-zero replicates refitted with fixed correlation
  std::vector<std::string> warnings;
};

// Evaluates the primary sites of `design`. Surfaces depend only on
// (config.seed, replicate), so designs evaluated with the same seed share them.
DesignEvalResult evaluate_design(const Design& design, const PredictionGrid& grid,
                                 const ModelParams& generator, const EvalConfig& config);

struct NpvCell {
  int k = 0;
  int m = 0;
  DesignEvalResult result;
};

struct NpvTable {
  std::vector<int> ks;
  std::vector<int> ms;
  std::vector<NpvCell> cells;  // k-major

  const NpvCell& at(int k, int m) const;
};

// One design per k (shared across m), every cell evaluated on the same surfaces.
NpvTable npv_table(std::span<const SiteRecord> sites, std::span<const std::string> eu_ids,
                   const PredictionGrid& grid, const ModelParams& generator,
                   std::span<const int> ks, std::span<const int> ms, const DesignSpec& base,
                   const EvalConfig& config);

}  // namespace geoelim
