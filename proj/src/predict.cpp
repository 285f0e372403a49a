#include "geoelim/predict.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include "geoelim/error.hpp"

namespace geoelim {

std::string to_string(QRule r) { return r == QRule::strict ? "strict" : "at_least"; }

QRule q_rule_from_string(const std::string& s) {
  if (s == "strict") return QRule::strict;
  if (s == "at_least") return QRule::at_least;
  throw InputError(fmt::format("unknown q_rule '{}' (expected strict or at_least)", s));
}

std::string to_string(Decision d) { return d == Decision::pass ? "pass" : "fail"; }

void PredictConfig::validate() const {
  if (n_draws < 1) throw InputError("n_draws must be positive");
  if (!(threshold >= 0 && threshold <= 1)) throw InputError("threshold must lie in [0, 1]");
  if (!(q_cut >= 0 && q_cut <= 1)) throw InputError("q_cut must lie in [0, 1]");
}

ConditionalSimulator::ConditionalSimulator(std::span<const Point> given, std::span<const Point> targets,
                                           double sigma2, const CorrelationSpec& corr,
                                           JitterPolicy jitter)
    : sigma2_(sigma2), corr_(corr) {
  const auto nt = static_cast<Eigen::Index>(targets.size());
  const Eigen::MatrixXd ctt = covariance_matrix(targets, sigma2, corr);
  Eigen::MatrixXd cond;
  if (given.empty()) {
    kriging_.resize(nt, 0);
    cond = ctt;
  } else {
    const Eigen::MatrixXd cgg = covariance_matrix(given, sigma2, corr);
    const CholeskyFactor f = factorise(cgg, sigma2, jitter, given);
    const auto lt = f.lower.triangularView<Eigen::Lower>();
    // W = L^-1 C_gt, K = W' L^-1, conditional covariance C_tt - W'W.
    const Eigen::MatrixXd w = lt.solve(cross_covariance(given, targets, sigma2, corr));
    kriging_ = lt.transpose().solve(w).transpose();
    cond = ctt;
    cond.selfadjointView<Eigen::Lower>().rankUpdate(w.transpose(), -1.0);
    cond = cond.selfadjointView<Eigen::Lower>();
  }
  // Pivoted LDL' tolerates the exact zeros at targets that coincide with data.
  Eigen::LDLT<Eigen::MatrixXd> ldlt(cond);
  const Eigen::VectorXd d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd l = ldlt.matrixL();
  l = l * d.asDiagonal();
  root_ = ldlt.transpositionsP().transpose() * l;
}

bool ConditionalSimulator::matches(double sigma2, const CorrelationSpec& corr) const {
  return sigma2 == sigma2_ && corr.family == corr_.family && corr.phi == corr_.phi &&
         corr.kappa == corr_.kappa && corr.nugget == corr_.nugget;
}

Eigen::VectorXd ConditionalSimulator::draw(const Eigen::VectorXd& given_residual, Rng& rng) const {
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(root_.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  Eigen::VectorXd out = root_ * z;
  if (kriging_.cols() > 0) out += kriging_ * given_residual;
  return out;
}

kernels::RowMatrix ConditionalSimulator::draw_many(const Eigen::MatrixXd& given_residuals, Rng& rng) const {
  std::normal_distribution<double> normal;
  const Eigen::Index draws = given_residuals.rows();
  Eigen::MatrixXd z(root_.cols(), draws);
  for (Eigen::Index d = 0; d < draws; ++d)
    for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, d) = normal(rng);
  Eigen::MatrixXd s = root_ * z;
  if (kriging_.cols() > 0) s.noalias() += kriging_ * given_residuals.transpose();
  return s.transpose();
}

SurfaceSamples predict_surface(const SiteData& data, const ModelParams& params,
                               const PredictionGrid& grid, const PredictConfig& config,
                               const CovariateMatrix& grid_covariates,
                               const ConditionalSimulator* cached) {
  config.validate();
  params.validate();
  if (grid.size() == 0) throw InputError("prediction grid is empty");
  const std::vector<Point> centres = grid.centres();
  const auto draws = static_cast<Eigen::Index>(config.n_draws);

  SurfaceSamples out;
  Eigen::MatrixXd given;  // draws x sites
  if (data.size() > 0) {
    FitConfig sc = config.sampler;
    sc.mc_samples = static_cast<int>(config.n_draws) * sc.thin;
    const LatentSamples ls = sample_latent(data, params, sc, derive_seed(config.seed, Stream::sampler));
    given = ls.residuals();
    out.diagnostics = ls.diagnostics;
  } else {
    given.resize(draws, 0);
  }

  std::optional<ConditionalSimulator> local;
  if (!cached || !cached->matches(params.sigma2, params.corr) || cached->n_given() != data.size() ||
      cached->n_targets() != grid.size()) {
    local.emplace(data.locations, centres, params.sigma2, params.corr, config.sampler.jitter);
    cached = &*local;
  }
  Rng rng = make_rng(config.seed, Stream::predict);
  kernels::RowMatrix s = cached->draw_many(given, rng);

  const Eigen::VectorXd lp = linear_predictor(params, grid_covariates, grid.size());
  s.rowwise() += lp.transpose();
  out.p.resize(s.rows(), s.cols());
  kernels::omp::inverse_logit(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())),
                              std::span<double>(out.p.data(), static_cast<std::size_t>(out.p.size())));
  return out;
}

std::vector<double> weighted_T(const kernels::RowMatrix& draws, std::span<const std::size_t> cells,
                               std::span<const double> weights) {
  double mass = 0.0;
  for (double w : weights) mass += w;
  if (!(mass > 0)) throw DomainError("evaluation unit has zero population mass");
  std::vector<double> t(static_cast<std::size_t>(draws.rows()));
  kernels::omp::weighted_means(draws, cells, weights, t);
  return t;
}

std::vector<double> population_weighted_T(const kernels::RowMatrix& draws, const PredictionGrid& grid,
                                          std::size_t eu) {
  const auto& cells = grid.eu_members.at(eu);
  std::vector<double> w;
  w.reserve(cells.size());
  for (auto c : cells) w.push_back(grid.cells[c].pop_density);
  try {
    return weighted_T(draws, cells, w);
  } catch (const DomainError&) {
    throw DomainError(fmt::format("evaluation unit '{}' has zero population mass", grid.eu_ids.at(eu)));
  }
}

EliminationProbability elimination_probability(std::span<const double> t_samples, double c) {
  if (t_samples.empty()) throw InputError("no samples of T");
  const auto below = std::count_if(t_samples.begin(), t_samples.end(), [c](double t) { return t < c; });
  const double n = static_cast<double>(t_samples.size());
  EliminationProbability out;
  out.q = static_cast<double>(below) / n;
  out.mc_stderr = std::sqrt(out.q * (1.0 - out.q) / n);
  return out;
}

Decision classify_eu(double q, double q_cut, QRule rule) {
  const bool pass = rule == QRule::strict ? q > q_cut : q >= q_cut;
  return pass ? Decision::pass : Decision::fail;
}

std::vector<PredictionResult> predict_eus(const SurfaceSamples& surface, const PredictionGrid& grid,
                                          const PredictConfig& config) {
  std::vector<PredictionResult> out;
  for (std::size_t e = 0; e < grid.eu_ids.size(); ++e) {
    PredictionResult r;
    r.eu_id = grid.eu_ids[e];
    r.t_samples = population_weighted_T(surface.p, grid, e);
    const auto ep = elimination_probability(r.t_samples, config.threshold);
    r.q = ep.q;
    r.q_mc_stderr = ep.mc_stderr;
    r.threshold = config.threshold;
    r.q_rule = config.q_rule;
    r.q_cut = config.q_cut;
    r.decision = classify_eu(r.q, config.q_cut, config.q_rule);
    out.push_back(std::move(r));
  }
  return out;
}

SurfaceSummary summarise_surface(const SurfaceSamples& surface) {
  SurfaceSummary s;
  const Eigen::Index n = surface.p.rows();
  const Eigen::RowVectorXd mean = surface.p.colwise().mean();
  s.mean.assign(mean.data(), mean.data() + mean.size());
  s.sd.resize(static_cast<std::size_t>(surface.p.cols()));
  for (Eigen::Index c = 0; c < surface.p.cols(); ++c) {
    const double ss = (surface.p.col(c).array() - mean[c]).square().sum();
    s.sd[static_cast<std::size_t>(c)] = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  }
  return s;
}

}  // namespace geoelim
