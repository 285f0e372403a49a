#include "geoelim/gpfield.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "geoelim/error.hpp"

namespace geoelim {

void ModelParams::validate() const {
  if (!std::isfinite(mu)) throw InputError("intercept must be finite");
  if (!(sigma2 > 0) || !std::isfinite(sigma2))
    throw InputError(fmt::format("sigma2 must be positive, got {}", sigma2));
  corr.validate();
  if (beta.size() != covariate_names.size())
    throw InputError(fmt::format("{} covariate coefficients for {} covariate names", beta.size(),
                                 covariate_names.size()));
}

Eigen::VectorXd linear_predictor(const ModelParams& params, const CovariateMatrix& covariates,
                                 std::size_t n_points) {
  Eigen::VectorXd lp = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_points), params.mu);
  if (!params.has_covariates()) return lp;
  if (covariates.rows() != static_cast<Eigen::Index>(n_points) ||
      covariates.cols() != static_cast<Eigen::Index>(params.beta.size()))
    throw InputError(fmt::format("covariate table is {}x{}, expected {}x{}", covariates.rows(),
                                 covariates.cols(), n_points, params.beta.size()));
  for (std::size_t k = 0; k < params.beta.size(); ++k)
    lp += params.beta[k] * covariates.col(static_cast<Eigen::Index>(k));
  return lp;
}

std::vector<double> FieldRealisation::residual(const ModelParams& params) const {
  std::vector<double> r = s_values;
  if (!params.has_covariates())
    for (double& v : r) v -= params.mu;
  return r;
}

FieldSimulator::FieldSimulator(std::vector<Point> points, double sigma2, const CorrelationSpec& corr,
                               JitterPolicy jitter, std::size_t max_points)
    : points_(std::move(points)) {
  if (points_.size() > max_points)
    throw InputError(fmt::format("{} simulation points exceed the dense-Cholesky cap of {}",
                                 points_.size(), max_points));
  const Eigen::MatrixXd cov = covariance_matrix(points_, sigma2, corr);
  factor_ = factorise(cov, sigma2, jitter, points_);
}

Eigen::VectorXd FieldSimulator::draw_residual(Rng& rng) const {
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(static_cast<Eigen::Index>(points_.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  return factor_.lower.triangularView<Eigen::Lower>() * z;
}

kernels::RowMatrix FieldSimulator::draw_residuals(Rng& rng, std::size_t n_draws) const {
  std::normal_distribution<double> normal;
  const auto n = static_cast<Eigen::Index>(points_.size());
  Eigen::MatrixXd z(n, static_cast<Eigen::Index>(n_draws));
  for (Eigen::Index d = 0; d < z.cols(); ++d)
    for (Eigen::Index i = 0; i < n; ++i) z(i, d) = normal(rng);
  Eigen::MatrixXd s = factor_.lower.triangularView<Eigen::Lower>() * z;
  return s.transpose();
}

FieldRealisation simulate_field(const ModelParams& params, std::span<const Point> points,
                                std::uint64_t seed, const CovariateMatrix& covariates) {
  params.validate();
  FieldSimulator sim(std::vector<Point>(points.begin(), points.end()), params.sigma2, params.corr);
  Rng rng = make_rng(seed, Stream::field);
  const Eigen::VectorXd resid = sim.draw_residual(rng);

  FieldRealisation out;
  out.seed = seed;
  out.s_values.resize(points.size());
  const double offset = params.has_covariates() ? 0.0 : params.mu;
  for (std::size_t i = 0; i < points.size(); ++i)
    out.s_values[i] = offset + resid[static_cast<Eigen::Index>(i)];
  out.p_values = field_to_prevalence(std::span<const double>(resid.data(), points.size()), params,
                                     covariates);
  return out;
}

std::vector<double> standardise(const FieldRealisation& realisation, const ModelParams& params) {
  const double sd = std::sqrt(params.sigma2);
  std::vector<double> out = realisation.residual(params);
  for (double& v : out) v /= sd;
  return out;
}

std::vector<double> field_to_prevalence(std::span<const double> residual, const ModelParams& params,
                                        const CovariateMatrix& covariates) {
  if (params.has_covariates()) {
    if (covariates.rows() < static_cast<Eigen::Index>(residual.size()))
      throw InputError(fmt::format("missing covariate values for cell {}", covariates.rows()));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(residual.size()); ++i)
      for (Eigen::Index k = 0; k < covariates.cols(); ++k)
        if (!std::isfinite(covariates(i, k)))
          throw InputError(fmt::format("missing covariate '{}' at cell {}",
                                       params.covariate_names[static_cast<std::size_t>(k)], i));
  }
  const Eigen::VectorXd lp = linear_predictor(params, covariates, residual.size());
  std::vector<double> eta(residual.size());
  for (std::size_t i = 0; i < residual.size(); ++i) eta[i] = lp[static_cast<Eigen::Index>(i)] + residual[i];
  std::vector<double> p(residual.size());
  kernels::omp::inverse_logit(eta, p);
  return p;
}

std::vector<CurvePoint> correlation_curve(const CorrelationSpec& spec, double u_max,
                                          std::size_t n_steps) {
  std::vector<CurvePoint> out;
  const double range = practical_range(spec);
  bool inserted = false;
  for (std::size_t i = 0; i <= n_steps; ++i) {
    const double u = u_max * static_cast<double>(i) / static_cast<double>(n_steps);
    if (!inserted && u >= range) {
      if (u != range) out.push_back({range, corr(spec, range)});
      inserted = true;
    }
    out.push_back({u, corr(spec, u)});
  }
  if (!inserted) out.push_back({range, corr(spec, range)});
  return out;
}

double mean_patch_diameter(std::span<const double> values, std::size_t ncols, std::size_t nrows) {
  std::vector<char> seen(values.size(), 0);
  std::vector<std::size_t> stack;
  double diameter_sum = 0.0;
  std::size_t patches = 0;
  for (std::size_t start = 0; start < values.size(); ++start) {
    if (seen[start] || !(values[start] > 0)) continue;
    std::size_t area = 0;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t c = stack.back();
      stack.pop_back();
      ++area;
      const std::size_t row = c / ncols;
      const std::size_t col = c % ncols;
      auto visit = [&](std::size_t n) {
        if (!seen[n] && values[n] > 0) {
          seen[n] = 1;
          stack.push_back(n);
        }
      };
      if (col > 0) visit(c - 1);
      if (col + 1 < ncols) visit(c + 1);
      if (row > 0) visit(c - ncols);
      if (row + 1 < nrows) visit(c + ncols);
    }
    diameter_sum += 2.0 * std::sqrt(static_cast<double>(area) / std::numbers::pi);
    ++patches;
  }
  return patches ? diameter_sum / static_cast<double>(patches) : 0.0;
}

double mean_neighbour_increment(std::span<const double> values, std::size_t ncols,
                                std::size_t nrows) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < nrows; ++r)
    for (std::size_t c = 0; c < ncols; ++c) {
      const double v = values[r * ncols + c];
      if (c + 1 < ncols) {
        sum += std::abs(values[r * ncols + c + 1] - v);
        ++count;
      }
      if (r + 1 < nrows) {
        sum += std::abs(values[(r + 1) * ncols + c] - v);
        ++count;
      }
    }
  return count ? sum / static_cast<double>(count) : 0.0;
}

DemoResult figure2_demo(std::uint64_t seed, std::size_t cells_per_side, double smooth_kappa) {
  if (cells_per_side < 2) throw InputError("demo grid needs at least 2 cells per side");
  DemoResult out;
  out.seed = seed;
  out.grid = build_grid(Bounds{0.0, 0.0, 1.0, 1.0}, 1.0 / static_cast<double>(cells_per_side));
  const std::vector<Point> centres = out.grid.centres();

  struct Setup {
    const char* label;
    double range;
    CorrFamily family;
    double kappa;
  };
  const Setup setups[] = {
      {"range0.15_rough", 0.15, CorrFamily::exponential, 0.5},
      {"range0.3_rough", 0.3, CorrFamily::exponential, 0.5},
      {"range0.3_smooth", 0.3, CorrFamily::matern, smooth_kappa},
  };
  for (const auto& s : setups) {
    DemoPanel panel;
    panel.label = s.label;
    panel.range = s.range;
    panel.corr.family = s.family;
    panel.corr.kappa = s.kappa;
    panel.corr.phi = phi_for_range(panel.corr, s.range);
    FieldSimulator sim(centres, 1.0, panel.corr);
    Rng rng = make_rng(seed, Stream::demo);
    const Eigen::VectorXd z = sim.draw_residual(rng);
    panel.standardised.assign(z.data(), z.data() + z.size());
    panel.curve = correlation_curve(panel.corr, 2.0 * 0.3, 120);
    out.panels.push_back(std::move(panel));
  }
  return out;
}

}  // namespace geoelim
