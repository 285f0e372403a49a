#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "geoelim/fit.hpp"
#include "geoelim/geodata.hpp"
#include "geoelim/gpfield.hpp"
#include "geoelim/kernels.hpp"

namespace geoelim {

enum class QRule { strict, at_least };
enum class Decision { pass, fail };

std::string to_string(QRule r);
QRule q_rule_from_string(const std::string& s);
std::string to_string(Decision d);

struct PredictConfig {
  std::size_t n_draws = 1000;
  double threshold = 0.01;
  double q_cut = 0.95;
  QRule q_rule = QRule::at_least;
  std::uint64_t seed = 1;
  // Sampler settings for the data sites; mc_samples is replaced by n_draws * thin.
  FitConfig sampler;

  void validate() const;
};

// Joint Gaussian draws of S at `targets` given S at `given`:
// S_t = K S_g + L z, K = C_tg C_gg^-1, L L' = C_tt - K C_gt.
class ConditionalSimulator {
 public:
  ConditionalSimulator(std::span<const Point> given, std::span<const Point> targets, double sigma2,
                       const CorrelationSpec& corr, JitterPolicy jitter = JitterPolicy::retry_once);

  double sigma2() const { return sigma2_; }
  const CorrelationSpec& corr() const { return corr_; }
  std::size_t n_given() const { return static_cast<std::size_t>(kriging_.cols()); }
  std::size_t n_targets() const { return static_cast<std::size_t>(kriging_.rows()); }
  bool matches(double sigma2, const CorrelationSpec& corr) const;

  Eigen::VectorXd draw(const Eigen::VectorXd& given_residual, Rng& rng) const;
  // One row per row of `given_residuals`.
  kernels::RowMatrix draw_many(const Eigen::MatrixXd& given_residuals, Rng& rng) const;

 private:
  double sigma2_;
  CorrelationSpec corr_;
  Eigen::MatrixXd kriging_;  // targets x given
  Eigen::MatrixXd root_;     // targets x targets, root of the conditional covariance
};

struct SurfaceSamples {
  kernels::RowMatrix p;  // draws x cells, values of P(x)
  SamplerDiagnostics diagnostics;

  std::size_t n_draws() const { return static_cast<std::size_t>(p.rows()); }
  std::size_t n_cells() const { return static_cast<std::size_t>(p.cols()); }
};

// Draws of P on the grid given the data. With no data sites the draws are
// unconditional. `cached` is reused when its sigma2 and correlation match
// `params`, and must have been built from data.locations -> grid centres.
SurfaceSamples predict_surface(const SiteData& data, const ModelParams& params,
                               const PredictionGrid& grid, const PredictConfig& config,
                               const CovariateMatrix& grid_covariates = {},
                               const ConditionalSimulator* cached = nullptr);

// pd-weighted mean of each draw over the EU's cells.
std::vector<double> population_weighted_T(const kernels::RowMatrix& draws, const PredictionGrid& grid,
                                          std::size_t eu);
std::vector<double> weighted_T(const kernels::RowMatrix& draws, std::span<const std::size_t> cells,
                               std::span<const double> weights);

struct EliminationProbability {
  double q = 0.0;
  double mc_stderr = 0.0;
};

EliminationProbability elimination_probability(std::span<const double> t_samples, double c);

Decision classify_eu(double q, double q_cut, QRule rule);

struct PredictionResult {
  std::string eu_id;
  std::vector<double> t_samples;
  double q = 0.0;
  double q_mc_stderr = 0.0;
  double threshold = 0.0;
  Decision decision = Decision::fail;
  QRule q_rule = QRule::at_least;
  double q_cut = 0.95;
};

std::vector<PredictionResult> predict_eus(const SurfaceSamples& surface, const PredictionGrid& grid,
                                          const PredictConfig& config);

// Cellwise mean and standard deviation of P across draws.
struct SurfaceSummary {
  std::vector<double> mean;
  std::vector<double> sd;
};

SurfaceSummary summarise_surface(const SurfaceSamples& surface);

}  // namespace geoelim
