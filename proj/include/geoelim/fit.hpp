#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "geoelim/corrfun.hpp"
#include "geoelim/geodata.hpp"
#include "geoelim/gpfield.hpp"

namespace geoelim {

struct FitConfig {
  int mc_samples = 10000;  // post-burn-in MCMC iterations; mc_samples / thin are kept
  int burn_in = 2000;
  int thin = 8;
  int relaxation_cycles = 3;
  double tolerance = 1e-6;  // on the transformed parameters
  int max_iterations = 100;
  std::uint64_t seed = 1;
  bool include_binomial_coefficient = true;
  bool fix_sigma2 = false;
  bool fix_phi = false;
  double intercept_lower = -25.0;
  double intercept_upper = 25.0;
  JitterPolicy jitter = JitterPolicy::retry_once;

  void validate() const;
  int retained() const { return mc_samples / thin; }
};

// Observations in the layout the likelihood code wants.
struct SiteData {
  std::vector<Point> locations;
  std::vector<int> n;
  std::vector<int> y;
  CovariateMatrix covariates;  // sites x covariates, may have zero columns
  std::vector<std::string> covariate_names;

  std::size_t size() const { return locations.size(); }
  std::size_t distinct_locations() const;
  std::size_t positive_sites() const;
};

SiteData make_site_data(std::span<const PrevalenceRecord> records,
                        std::vector<std::string> covariate_names = {});

// Sum over sites of the binomial log-pmf at p = inverse-logit(eta).
double loglik_given_latent(const SiteData& data, std::span<const double> eta,
                           bool include_binomial_coefficient = true);
// Gradient with respect to eta: y - n p.
Eigen::VectorXd loglik_gradient(const SiteData& data, std::span<const double> eta);

struct SamplerDiagnostics {
  double acceptance_rate = 0.0;
  double step_size = 0.0;
  std::vector<double> ess;  // per site
  double min_ess = 0.0;
  bool acceptance_warning = false;  // outside [0.2, 0.8]
  bool ess_warning = false;         // some site below 200
  int jitter_events = 0;
};

struct LatentSamples {
  // retained x sites; each row is a draw of eta = linear predictor + S at the sites.
  Eigen::MatrixXd eta;
  Eigen::VectorXd prior_mean;  // linear predictor at the sites
  SamplerDiagnostics diagnostics;

  Eigen::MatrixXd residuals() const;  // eta - prior_mean, row by row
};

// Langevin-Hastings sampler for [S | y] at fixed parameters. The chain runs
// on z, where S = S_mode + L z and L L' is the Laplace approximation to the
// posterior covariance; the step size is tuned during burn-in.
LatentSamples sample_latent(const SiteData& data, const ModelParams& params,
                            const FitConfig& config, std::uint64_t seed);

struct ParameterEstimate {
  std::string name;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double mc_stderr = 0.0;  // Monte Carlo error of the estimate (transformed scale)
  bool fixed = false;
};

struct FitDiagnostics {
  double acceptance_rate = 0.0;
  double min_ess = 0.0;
  bool sampler_warning = false;
  int jitter_events = 0;
  bool weakly_identified = false;  // fewer than 10 sites with positives
  bool few_sites = false;          // fewer than 30 distinct locations
  bool at_bound = false;
  int cycles = 0;
  int iterations = 0;
  double importance_ess = 0.0;
  std::vector<std::vector<double>> trajectory;  // transformed parameters per Newton step
  std::vector<std::string> warnings;
};

struct FitResult {
  ModelParams estimates;
  std::vector<ParameterEstimate> parameters;  // intercept, betas, sigma2, phi
  // Monte Carlo standard error of the log-likelihood ratio at the optimum.
  double loglik_mc_stderr = 0.0;
  // Transformed coordinates (intercept, betas, log sigma2, log phi) and
  // their inverse-Hessian covariance over the free coordinates.
  std::vector<std::string> transformed_names;
  Eigen::VectorXd transformed;
  Eigen::MatrixXd transformed_covariance;
  std::string distance_unit = "km";
  FitDiagnostics diagnostics;

  const ParameterEstimate& parameter(const std::string& name) const;
};

// Which latent quantity is held fixed while theta moves. With `linear_predictor`
// the draws of eta = D beta + S are fixed and the binomial factor cancels in
// the ratio; with `residual` the draws of S are fixed and the regression
// coefficients act through the binomial factor. The first has low Monte Carlo
// error when the data dominate the prior, the second when the prior dominates.
enum class LatentScale { linear_predictor, residual };

// Prior variance times mean binomial information at the posterior mean of eta;
// below 1 the prior dominates and `residual` is preferred.
double prior_to_data_ratio(const SiteData& data, const ModelParams& params, const LatentSamples& samples);
LatentScale choose_latent_scale(const SiteData& data, const ModelParams& params, const LatentSamples& samples);

// Monte Carlo log-likelihood ratio log[L(theta) / L(anchor)] estimated by
// importance sampling from latent draws taken at the anchor.
class McLikelihood {
 public:
  McLikelihood(const SiteData& data, const ModelParams& anchor, const LatentSamples& samples,
               LatentScale scale = LatentScale::linear_predictor);

  LatentScale scale() const { return scale_; }

  std::size_t dimension() const { return static_cast<std::size_t>(anchor_theta_.size()); }
  const Eigen::VectorXd& anchor() const { return anchor_theta_; }

  double value(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const;
  // Central differences of the analytic gradient over the `free` coordinates.
  Eigen::MatrixXd hessian(const Eigen::VectorXd& theta, std::span<const int> free) const;
  // Monte Carlo standard error of value(theta), by batch means.
  double value_stderr(const Eigen::VectorXd& theta) const;
  // Covariance of the Monte Carlo gradient at theta, restricted to `free`.
  Eigen::MatrixXd gradient_mc_covariance(const Eigen::VectorXd& theta,
                                         std::span<const int> free) const;
  double importance_ess(const Eigen::VectorXd& theta) const;

  ModelParams params_at(const Eigen::VectorXd& theta) const;
  static Eigen::VectorXd theta_of(const ModelParams& params);

 private:
  struct Terms;
  void evaluate(const Eigen::VectorXd& theta, bool with_gradient, Terms& out) const;
  void refresh_correlation(double phi) const;

  const SiteData& data_;
  LatentScale scale_;
  ModelParams anchor_params_;
  Eigen::VectorXd anchor_theta_;
  Eigen::MatrixXd design_;  // sites x (1 + covariates)
  Eigen::MatrixXd eta_;     // sites x draws
  Eigen::VectorXd anchor_terms_;
  Eigen::MatrixXd distances_;

  // Correlation-dependent quantities at the last phi evaluated, with
  // R = correlation matrix and dR its derivative in log phi.
  mutable double cached_phi_ = -1.0;
  mutable double corr_logdet_ = 0.0;
  mutable double trace_term_ = 0.0;    // tr(R^-1 dR)
  mutable Eigen::VectorXd eta_quad_;   // eta_j' R^-1 eta_j
  mutable Eigen::MatrixXd cross_;      // D' R^-1 eta_j, one column per draw
  mutable Eigen::MatrixXd gram_;       // D' R^-1 D
  mutable Eigen::VectorXd deta_quad_;  // eta_j' R^-1 dR R^-1 eta_j
  mutable Eigen::MatrixXd dcross_;     // D' R^-1 dR R^-1 eta_j
  mutable Eigen::MatrixXd dgram_;      // D' R^-1 dR R^-1 D
};

FitResult mcml_fit(const SiteData& data, const ModelParams& init, const FitConfig& config);

struct ProfilePoint {
  double value = 0.0;
  double relative_loglik = 0.0;
};

// Monte Carlo log-likelihood along one parameter (natural scale), others held
// at the estimates, relative to the estimate. `parameter` is "mu"/"alpha",
// "sigma2", "phi" or a covariate name.
std::vector<ProfilePoint> profile_deviance(const SiteData& data, const FitResult& fit,
                                           const std::string& parameter,
                                           std::span<const double> values, const FitConfig& config);

struct MarginalEstimate {
  double likelihood = 0.0;
  double std_error = 0.0;
};

// Marginal likelihood of one site, integral of Binomial(y; n, logit^-1(s)) N(s; mu, sigma2) ds,
// by importance sampling from a normal proposal fitted to the sampler's draws.
// Draws are stratified in probability with `shifts` random offsets; the
// standard error comes from the spread over offsets.
MarginalEstimate single_site_marginal_likelihood(int n, int y, double mu, double sigma2,
                                                 const LatentSamples& samples,
                                                 std::size_t strata, int shifts,
                                                 std::uint64_t seed,
                                                 bool include_binomial_coefficient = true);

// Effective sample size of a chain by batch means.
double batch_means_ess(std::span<const double> chain);

}  // namespace geoelim
