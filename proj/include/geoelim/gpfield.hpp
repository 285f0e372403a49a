#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "geoelim/corrfun.hpp"
#include "geoelim/geodata.hpp"
#include "geoelim/kernels.hpp"
#include "geoelim/rng.hpp"

namespace geoelim {

// Parameters of the binomial-logit Gaussian-process model. Without
// covariates `mu` is the mean of S(x); with covariates it is the intercept
// alpha of alpha + beta' d(x) and S(x) has mean zero.
struct ModelParams {
  double mu = 0.0;
  double sigma2 = 1.0;
  CorrelationSpec corr;
  std::vector<double> beta;
  std::vector<std::string> covariate_names;

  void validate() const;
  bool has_covariates() const { return !beta.empty(); }
  const char* intercept_name() const { return has_covariates() ? "alpha" : "mu"; }
};

// One row per location, one column per covariate.
using CovariateMatrix = Eigen::MatrixXd;

// mu + beta' d at each location; `covariates` may be empty when beta is.
Eigen::VectorXd linear_predictor(const ModelParams& params, const CovariateMatrix& covariates,
                                 std::size_t n_points);

struct FieldRealisation {
  // S(x): includes mu without covariates, zero-mean with covariates.
  std::vector<double> s_values;
  std::vector<double> p_values;
  std::uint64_t seed = 0;

  // Zero-mean part S(x) - E[S(x)].
  std::vector<double> residual(const ModelParams& params) const;
};

// Dense-Cholesky sampler for a fixed point set and covariance. The factor is
// computed once; draws are cheap matrix-vector products.
class FieldSimulator {
 public:
  static constexpr std::size_t kDefaultMaxPoints = 40000;

  FieldSimulator(std::vector<Point> points, double sigma2, const CorrelationSpec& corr,
                 JitterPolicy jitter = JitterPolicy::retry_once,
                 std::size_t max_points = kDefaultMaxPoints);

  std::size_t size() const { return points_.size(); }
  const std::vector<Point>& points() const { return points_; }
  const Eigen::MatrixXd& lower() const { return factor_.lower; }
  bool jittered() const { return factor_.jittered; }

  // L z with z standard normal from `rng`.
  Eigen::VectorXd draw_residual(Rng& rng) const;
  // (n_draws x n_points), one independent residual draw per row.
  kernels::RowMatrix draw_residuals(Rng& rng, std::size_t n_draws) const;

 private:
  std::vector<Point> points_;
  CholeskyFactor factor_;
};

FieldRealisation simulate_field(const ModelParams& params, std::span<const Point> points,
                                std::uint64_t seed, const CovariateMatrix& covariates = {});

// (S - E[S]) / sigma, cellwise.
std::vector<double> standardise(const FieldRealisation& realisation, const ModelParams& params);

// inverse-logit(linear predictor + residual). Throws naming the first cell
// without covariate values when beta is nonempty.
std::vector<double> field_to_prevalence(std::span<const double> residual, const ModelParams& params,
                                        const CovariateMatrix& covariates = {});

struct CurvePoint {
  double u = 0.0;
  double rho = 0.0;
};

// Equally spaced u in [0, u_max] plus the practical range itself.
std::vector<CurvePoint> correlation_curve(const CorrelationSpec& spec, double u_max,
                                          std::size_t n_steps);

// Mean equivalent diameter (in cells) of 4-connected patches where value > 0.
double mean_patch_diameter(std::span<const double> values, std::size_t ncols, std::size_t nrows);
// Mean absolute difference between horizontally and vertically adjacent cells.
double mean_neighbour_increment(std::span<const double> values, std::size_t ncols,
                                std::size_t nrows);

struct DemoPanel {
  std::string label;
  double range = 0.0;
  CorrelationSpec corr;
  std::vector<double> standardised;  // S*(x), one per grid cell
  std::vector<CurvePoint> curve;
};

struct DemoResult {
  PredictionGrid grid;  // unit square
  std::vector<DemoPanel> panels;
  std::uint64_t seed = 0;
};

// Three standardised fields on the unit square: exponential with ranges 0.15
// and 0.3, and Matérn kappa = 1.5 with range 0.3. All panels share the same
// underlying normal deviates.
DemoResult figure2_demo(std::uint64_t seed, std::size_t cells_per_side = 50,
                        double smooth_kappa = 1.5);

}  // namespace geoelim
