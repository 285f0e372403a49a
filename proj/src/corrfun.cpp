#include "geoelim/corrfun.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include "geoelim/error.hpp"
#include "geoelim/kernels.hpp"

namespace geoelim {
namespace {

constexpr double kRangeLevel = 0.05;
const double kSqrt3 = std::sqrt(3.0);
const double kSqrt5 = std::sqrt(5.0);

bool is_half_integer_supported(double k) { return k == 0.5 || k == 1.5 || k == 2.5; }

// Smallest admissible Cholesky pivot, relative to the matrix scale.
constexpr double kPivotFloor = 1e-13;

bool try_llt(const Eigen::MatrixXd& a, double scale, Eigen::MatrixXd& lower) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return false;
  lower = llt.matrixL();
  const double floor = std::sqrt(kPivotFloor * scale);
  for (Eigen::Index i = 0; i < lower.rows(); ++i)
    if (!(lower(i, i) > floor)) return false;
  return true;
}

}  // namespace

void CorrelationSpec::validate() const {
  if (!(phi > 0) || !std::isfinite(phi))
    throw InputError(fmt::format("correlation scale phi must be positive, got {}", phi));
  if (!(nugget >= 0) || !std::isfinite(nugget))
    throw InputError(fmt::format("nugget must be nonnegative, got {}", nugget));
  if (family == CorrFamily::matern && !is_half_integer_supported(kappa))
    throw InputError(fmt::format("matern kappa must be 0.5, 1.5 or 2.5, got {}", kappa));
}

double CorrelationSpec::effective_kappa() const {
  return family == CorrFamily::exponential ? 0.5 : kappa;
}

std::string to_string(CorrFamily f) { return f == CorrFamily::exponential ? "exponential" : "matern"; }

CorrFamily corr_family_from_string(const std::string& s) {
  if (s == "exponential") return CorrFamily::exponential;
  if (s == "matern") return CorrFamily::matern;
  throw InputError(fmt::format("unknown correlation family '{}'", s));
}

void to_json(nlohmann::json& j, const CorrelationSpec& s) {
  j = nlohmann::json{{"family", to_string(s.family)},
                     {"phi", s.phi},
                     {"kappa", s.effective_kappa()},
                     {"nugget", s.nugget}};
}

void from_json(const nlohmann::json& j, CorrelationSpec& s) {
  s.family = corr_family_from_string(j.value("family", std::string("exponential")));
  s.phi = j.value("phi", 1.0);
  s.kappa = j.value("kappa", 0.5);
  s.nugget = j.value("nugget", 0.0);
  s.validate();
}

double corr(const CorrelationSpec& spec, double u) {
  if (!(u >= 0)) throw InputError(fmt::format("distance must be nonnegative, got {}", u));
  switch (spec.family) {
    case CorrFamily::exponential:
      return std::exp(-u / spec.phi);
    case CorrFamily::matern:
      if (spec.kappa == 0.5) {
        return std::exp(-u / spec.phi);
      } else if (spec.kappa == 1.5) {
        const double a = kSqrt3 * u / spec.phi;
        return (1.0 + a) * std::exp(-a);
      } else {
        const double a = kSqrt5 * u / spec.phi;
        return (1.0 + a + a * a / 3.0) * std::exp(-a);
      }
  }
  return 0.0;
}

double corr_dlogphi(const CorrelationSpec& spec, double u) {
  if (!(u >= 0)) throw InputError(fmt::format("distance must be nonnegative, got {}", u));
  const double k = spec.effective_kappa();
  if (k == 0.5) {
    const double a = u / spec.phi;
    return a * std::exp(-a);
  } else if (k == 1.5) {
    const double a = kSqrt3 * u / spec.phi;
    return a * a * std::exp(-a);
  }
  const double a = kSqrt5 * u / spec.phi;
  return a * a * (1.0 + a) / 3.0 * std::exp(-a);
}

double practical_range(const CorrelationSpec& spec) {
  spec.validate();
  double lo = 0.0;
  double hi = spec.phi;
  while (corr(spec, hi) > kRangeLevel) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (corr(spec, mid) > kRangeLevel)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double phi_for_range(const CorrelationSpec& spec, double range) {
  if (!(range > 0)) throw InputError("practical range must be positive");
  CorrelationSpec unit = spec;
  unit.phi = 1.0;
  return range / practical_range(unit);
}

double bivariate_conditional_variance(double sigma2, double rho) {
  if (!(std::abs(rho) <= 1.0)) throw InputError(fmt::format("|rho| must be <= 1, got {}", rho));
  if (!(sigma2 >= 0)) throw InputError(fmt::format("sigma2 must be nonnegative, got {}", sigma2));
  return sigma2 * (1.0 - rho * rho);
}

Eigen::MatrixXd covariance_matrix(std::span<const Point> points, double sigma2,
                                  const CorrelationSpec& spec) {
  if (points.empty()) throw InputError("covariance matrix needs at least one point");
  if (!(sigma2 > 0)) throw InputError(fmt::format("sigma2 must be positive, got {}", sigma2));
  spec.validate();
  Eigen::MatrixXd out;
  kernels::omp::covariance(points, sigma2, spec, out);
  return out;
}

Eigen::MatrixXd cross_covariance(std::span<const Point> a, std::span<const Point> b, double sigma2,
                                 const CorrelationSpec& spec) {
  spec.validate();
  Eigen::MatrixXd out;
  kernels::omp::cross_covariance(a, b, sigma2, spec, out);
  return out;
}

CholeskyFactor factorise(const Eigen::MatrixXd& cov, double scale, JitterPolicy policy,
                         std::span<const Point> points) {
  CholeskyFactor f;
  if (try_llt(cov, scale, f.lower)) return f;

  if (policy == JitterPolicy::retry_once) {
    f.jitter = 1e-8 * scale;
    Eigen::MatrixXd jittered = cov;
    jittered.diagonal().array() += f.jitter;
    if (try_llt(jittered, scale, f.lower)) {
      f.jittered = true;
      return f;
    }
  }

  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j)
      if (distance(points[i], points[j]) == 0.0)
        throw FactorisationError(fmt::format(
            "Cholesky factorisation failed: points {} and {} coincide at ({}, {})", i, j,
            points[i].x, points[i].y));
  throw FactorisationError(fmt::format("Cholesky factorisation of a {}x{} covariance failed{}",
                                       cov.rows(), cov.cols(),
                                       policy == JitterPolicy::retry_once ? " after jitter" : ""));
}

}  // namespace geoelim
