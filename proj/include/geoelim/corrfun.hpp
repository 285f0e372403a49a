#pragma once

#include <span>
#include <string>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "geoelim/geodata.hpp"

namespace geoelim {

enum class CorrFamily { exponential, matern };

// Isotropic correlation. Matérn is restricted to the closed-form smoothness
// values 0.5, 1.5 and 2.5; matern(0.5) is the exponential function.
struct CorrelationSpec {
  CorrFamily family = CorrFamily::exponential;
  double phi = 1.0;
  double kappa = 0.5;
  // Relative nugget tau^2; the covariance diagonal is sigma2 * (1 + tau^2).
  double nugget = 0.0;

  void validate() const;
  // Smoothness actually used (0.5 for the exponential family).
  double effective_kappa() const;
};

std::string to_string(CorrFamily f);
CorrFamily corr_family_from_string(const std::string& s);

void to_json(nlohmann::json& j, const CorrelationSpec& s);
void from_json(const nlohmann::json& j, CorrelationSpec& s);

double corr(const CorrelationSpec& spec, double u);
// d rho / d log(phi), used by the likelihood gradient.
double corr_dlogphi(const CorrelationSpec& spec, double u);

// Distance at which the correlation falls to 0.05.
double practical_range(const CorrelationSpec& spec);
// Scale phi giving the requested practical range for this family and kappa.
double phi_for_range(const CorrelationSpec& spec, double range);

double bivariate_conditional_variance(double sigma2, double rho);

enum class JitterPolicy { retry_once, disabled };

struct CholeskyFactor {
  Eigen::MatrixXd lower;
  bool jittered = false;
  double jitter = 0.0;
};

// Entry (i, j) = sigma2 * (rho(|x_i - x_j|) + nugget * [i == j]).
Eigen::MatrixXd covariance_matrix(std::span<const Point> points, double sigma2,
                                  const CorrelationSpec& spec);
Eigen::MatrixXd cross_covariance(std::span<const Point> a, std::span<const Point> b,
                                 double sigma2, const CorrelationSpec& spec);

// On failure adds 1e-8 * scale to the diagonal and retries once (retry_once).
// `points`, when given, lets the error name a coincident pair.
CholeskyFactor factorise(const Eigen::MatrixXd& cov, double scale, JitterPolicy policy,
                         std::span<const Point> points = {});

}  // namespace geoelim
