#include "geoelim/fit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>
#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "geoelim/error.hpp"
#include "geoelim/kernels.hpp"
#include "geoelim/rng.hpp"

namespace geoelim {
namespace {

constexpr double kTargetAcceptance = 0.57;
constexpr int kExtraCycles = 7;
constexpr double kMinImportanceFraction = 0.5;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double log_choose(int n, int y) {
  return std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0);
}

// Variance of the sample mean of an autocorrelated sequence, by batch means.
double batch_means_variance(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 4) return 0.0;
  const auto b = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const std::size_t nb = n / b;
  std::vector<double> means(nb, 0.0);
  for (std::size_t k = 0; k < nb; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < b; ++i) s += x[k * b + i];
    means[k] = s / static_cast<double>(b);
  }
  double m = 0.0;
  for (double v : means) m += v;
  m /= static_cast<double>(nb);
  double ss = 0.0;
  for (double v : means) ss += (v - m) * (v - m);
  return ss / static_cast<double>(nb - 1) / static_cast<double>(nb);
}

double plain_variance(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

Eigen::MatrixXd pairwise_distances(const std::vector<Point>& pts) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) d(i, j) = distance(pts[i], pts[j]);
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Data and the conditional likelihood

void FitConfig::validate() const {
  if (mc_samples < 1 || burn_in < 1 || thin < 1 || relaxation_cycles < 1 || max_iterations < 1)
    throw InputError("fit counts (mc_samples, burn_in, thin, relaxation_cycles, max_iterations) must be positive");
  if (retained() < 2) throw InputError("mc_samples / thin must leave at least two retained draws");
  if (!(tolerance > 0)) throw InputError("fit tolerance must be positive");
  if (!(intercept_lower < intercept_upper)) throw InputError("intercept bounds are empty");
}

std::size_t SiteData::distinct_locations() const {
  std::vector<std::pair<double, double>> xy;
  xy.reserve(locations.size());
  for (const auto& p : locations) xy.emplace_back(p.x, p.y);
  std::sort(xy.begin(), xy.end());
  return static_cast<std::size_t>(std::unique(xy.begin(), xy.end()) - xy.begin());
}

std::size_t SiteData::positive_sites() const {
  return static_cast<std::size_t>(std::count_if(y.begin(), y.end(), [](int v) { return v > 0; }));
}

SiteData make_site_data(std::span<const PrevalenceRecord> records,
                        std::vector<std::string> covariate_names) {
  SiteData d;
  const auto p = static_cast<Eigen::Index>(covariate_names.size());
  d.covariates.resize(static_cast<Eigen::Index>(records.size()), p);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.n_tested < 1 || r.n_positive < 0 || r.n_positive > r.n_tested)
      throw InputError(fmt::format("invalid counts at record {}", i + 1));
    if (static_cast<Eigen::Index>(r.covariates.size()) < p)
      throw InputError(fmt::format("record {} lacks covariate values", i + 1));
    d.locations.push_back(r.location);
    d.n.push_back(r.n_tested);
    d.y.push_back(r.n_positive);
    for (Eigen::Index k = 0; k < p; ++k)
      d.covariates(static_cast<Eigen::Index>(i), k) = r.covariates[static_cast<std::size_t>(k)];
  }
  d.covariate_names = std::move(covariate_names);
  return d;
}

double loglik_given_latent(const SiteData& data, std::span<const double> eta,
                           bool include_binomial_coefficient) {
  if (eta.size() != data.size())
    throw InputError(fmt::format("{} latent values for {} sites", eta.size(), data.size()));
  double ll = 0.0;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    // y log p + (n - y) log(1 - p) = y eta - n log(1 + e^eta)
    ll += data.y[i] * eta[i] - data.n[i] * softplus(eta[i]);
    if (include_binomial_coefficient) ll += log_choose(data.n[i], data.y[i]);
  }
  return ll;
}

Eigen::VectorXd loglik_gradient(const SiteData& data, std::span<const double> eta) {
  Eigen::VectorXd g(static_cast<Eigen::Index>(eta.size()));
  for (std::size_t i = 0; i < eta.size(); ++i)
    g[static_cast<Eigen::Index>(i)] = data.y[i] - data.n[i] * kernels::inv_logit(eta[i]);
  return g;
}

double batch_means_ess(std::span<const double> chain) {
  const double n = static_cast<double>(chain.size());
  if (chain.size() < 4) return n;
  const double v = plain_variance(chain);
  const double vm = batch_means_variance(chain);
  if (!(vm > 0)) return n;
  return std::min(n, v / vm);
}

// ---------------------------------------------------------------------------
// Latent sampler

Eigen::MatrixXd LatentSamples::residuals() const { return eta.rowwise() - prior_mean.transpose(); }

LatentSamples sample_latent(const SiteData& data, const ModelParams& params, const FitConfig& config,
                            std::uint64_t seed) {
  config.validate();
  params.validate();
  const auto n = static_cast<Eigen::Index>(data.size());
  if (n == 0) throw InputError("latent sampling needs at least one data site");

  LatentSamples out;
  out.prior_mean = linear_predictor(params, data.covariates, data.size());
  const Eigen::VectorXd& lp = out.prior_mean;

  const Eigen::MatrixXd cov = covariance_matrix(data.locations, params.sigma2, params.corr);
  const CholeskyFactor prior = factorise(cov, params.sigma2, config.jitter, data.locations);
  if (prior.jittered) ++out.diagnostics.jitter_events;
  const Eigen::MatrixXd& Ls = prior.lower;
  const auto Ls_tri = Ls.triangularView<Eigen::Lower>();

  Eigen::VectorXd yv(n), nv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    yv[i] = data.y[static_cast<std::size_t>(i)];
    nv[i] = data.n[static_cast<std::size_t>(i)];
  }

  // Objective in prior-whitened coordinates v (S = Ls v).
  auto objective = [&](const Eigen::VectorXd& v, Eigen::VectorXd* eta_out) {
    const Eigen::VectorXd eta = lp + Ls_tri * v;
    if (eta_out) *eta_out = eta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ll += yv[i] * eta[i] - nv[i] * softplus(eta[i]);
    return ll - 0.5 * v.squaredNorm();
  };

  auto precision_factor = [&](const Eigen::VectorXd& eta) {
    // M = I + Ls' W Ls, W = diag(n p (1 - p)).
    Eigen::MatrixXd ws = Ls;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = kernels::inv_logit(eta[i]);
      ws.row(i) *= std::sqrt(nv[i] * p * (1.0 - p));
    }
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
    m.selfadjointView<Eigen::Lower>().rankUpdate(ws.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(m.selfadjointView<Eigen::Lower>());
    return llt;
  };

  // Newton ascent to the posterior mode.
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd eta;
  double f = objective(v, &eta);
  if (!std::isfinite(f)) throw InputError("log-posterior is not finite at initialisation");
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd g(n);
    for (Eigen::Index i = 0; i < n; ++i) g[i] = yv[i] - nv[i] * kernels::inv_logit(eta[i]);
    const Eigen::VectorXd grad = Ls_tri.transpose() * g - v;
    const auto llt = precision_factor(eta);
    Eigen::VectorXd step = llt.solve(grad);
    double scale = 1.0;
    Eigen::VectorXd eta_new;
    double f_new = objective(v + step, &eta_new);
    while (!(f_new >= f) && scale > 1e-10) {
      scale *= 0.5;
      f_new = objective(v + scale * step, &eta_new);
    }
    if (!(f_new >= f)) break;
    v += scale * step;
    eta = eta_new;
    const double change = (scale * step).cwiseAbs().maxCoeff();
    f = f_new;
    if (change < 1e-10) break;
  }
  const Eigen::VectorXd v_mode = v;
  const auto llt_mode = precision_factor(eta);
  if (llt_mode.info() != Eigen::Success) throw FactorisationError("posterior precision factorisation failed");
  const Eigen::MatrixXd Lm = llt_mode.matrixL();
  const auto Lm_tri = Lm.triangularView<Eigen::Lower>();

  // Chain on z with v = v_mode + Lm^-T z, so z is approximately standard normal.
  struct State {
    Eigen::VectorXd z, eta, grad;
    double logpi = 0.0;
  };
  auto evaluate = [&](const Eigen::VectorXd& z, State& s) {
    s.z = z;
    const Eigen::VectorXd vz = v_mode + Lm_tri.transpose().solve(z);
    s.eta = lp + Ls_tri * vz;
    double ll = 0.0;
    Eigen::VectorXd g(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      ll += yv[i] * s.eta[i] - nv[i] * softplus(s.eta[i]);
      g[i] = yv[i] - nv[i] * kernels::inv_logit(s.eta[i]);
    }
    s.logpi = ll - 0.5 * vz.squaredNorm();
    s.grad = Lm_tri.solve(Eigen::VectorXd(Ls_tri.transpose() * g - vz));
  };

  Rng rng = make_rng(seed, Stream::sampler);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  State cur, prop;
  evaluate(Eigen::VectorXd::Zero(n), cur);
  if (!std::isfinite(cur.logpi)) throw InputError("log-posterior is not finite at initialisation");

  double log_h = std::log(1.65) - std::log(static_cast<double>(n)) / 6.0;
  const int total = config.burn_in + config.mc_samples;
  const int keep = config.retained();
  out.eta.resize(keep, n);
  int kept = 0;
  long accepted = 0;
  Eigen::VectorXd xi(n);
  for (int t = 0; t < total; ++t) {
    const double h = std::exp(log_h);
    const double h2 = h * h;
    for (Eigen::Index i = 0; i < n; ++i) xi[i] = normal(rng);
    evaluate(cur.z + 0.5 * h2 * cur.grad + h * xi, prop);
    const double log_fwd = -0.5 * xi.squaredNorm();
    const double log_bwd = -(cur.z - prop.z - 0.5 * h2 * prop.grad).squaredNorm() / (2.0 * h2);
    double log_alpha = prop.logpi - cur.logpi + log_bwd - log_fwd;
    if (!std::isfinite(log_alpha)) log_alpha = -INFINITY;
    const bool accept = std::log(unif(rng)) < log_alpha;
    if (accept) std::swap(cur, prop);
    if (t < config.burn_in) {
      const double a = std::min(1.0, std::exp(log_alpha));
      log_h += (a - kTargetAcceptance) / std::pow(t + 1.0, 0.6);
    } else {
      if (accept) ++accepted;
      const int since = t - config.burn_in + 1;
      if (since % config.thin == 0 && kept < keep) out.eta.row(kept++) = cur.eta.transpose();
    }
  }

  auto& d = out.diagnostics;
  d.step_size = std::exp(log_h);
  d.acceptance_rate = static_cast<double>(accepted) / config.mc_samples;
  d.acceptance_warning = d.acceptance_rate < 0.2 || d.acceptance_rate > 0.8;
  d.ess.resize(static_cast<std::size_t>(n));
  d.min_ess = static_cast<double>(keep);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd col = out.eta.col(i);
    const double ess = batch_means_ess(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())));
    d.ess[static_cast<std::size_t>(i)] = ess;
    d.min_ess = std::min(d.min_ess, ess);
  }
  d.ess_warning = d.min_ess < 200.0;
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo likelihood

struct McLikelihood::Terms {
  Eigen::VectorXd r;      // log importance ratios
  Eigen::MatrixXd grads;  // dimension x draws
};

double prior_to_data_ratio(const SiteData& data, const ModelParams& params, const LatentSamples& samples) {
  const Eigen::VectorXd eta = samples.eta.colwise().mean().transpose();
  double info = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double p = kernels::inv_logit(eta[static_cast<Eigen::Index>(i)]);
    info += data.n[i] * p * (1.0 - p);
  }
  return params.sigma2 * info / static_cast<double>(data.size());
}

LatentScale choose_latent_scale(const SiteData& data, const ModelParams& params, const LatentSamples& samples) {
  return prior_to_data_ratio(data, params, samples) < 1.0 ? LatentScale::residual : LatentScale::linear_predictor;
}

McLikelihood::McLikelihood(const SiteData& data, const ModelParams& anchor,
                           const LatentSamples& samples, LatentScale scale)
    : data_(data), scale_(scale), anchor_params_(anchor) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto p = static_cast<Eigen::Index>(anchor.beta.size());
  if (data.covariates.cols() != p)
    throw InputError("covariate columns do not match the model's coefficients");
  if (samples.eta.cols() != n) throw InputError("latent draws do not match the data sites");
  anchor_theta_ = theta_of(anchor);
  design_.resize(n, 1 + p);
  design_.col(0).setOnes();
  if (p > 0) design_.rightCols(p) = data.covariates;
  eta_ = samples.eta.transpose();
  distances_ = pairwise_distances(data.locations);
  anchor_terms_ = Eigen::VectorXd::Zero(eta_.cols());
  Terms t;
  evaluate(anchor_theta_, false, t);
  anchor_terms_ = t.r;
}

Eigen::VectorXd McLikelihood::theta_of(const ModelParams& params) {
  const auto p = static_cast<Eigen::Index>(params.beta.size());
  Eigen::VectorXd th(3 + p);
  th[0] = params.mu;
  for (Eigen::Index k = 0; k < p; ++k) th[1 + k] = params.beta[static_cast<std::size_t>(k)];
  th[1 + p] = std::log(params.sigma2);
  th[2 + p] = std::log(params.corr.phi);
  return th;
}

ModelParams McLikelihood::params_at(const Eigen::VectorXd& theta) const {
  ModelParams m = anchor_params_;
  const auto p = static_cast<Eigen::Index>(m.beta.size());
  m.mu = theta[0];
  for (Eigen::Index k = 0; k < p; ++k) m.beta[static_cast<std::size_t>(k)] = theta[1 + k];
  m.sigma2 = std::exp(theta[1 + p]);
  m.corr.phi = std::exp(theta[2 + p]);
  return m;
}

void McLikelihood::refresh_correlation(double phi) const {
  if (phi == cached_phi_) return;
  const auto n = distances_.rows();
  CorrelationSpec spec = anchor_params_.corr;
  spec.phi = phi;
  Eigen::MatrixXd r(n, n), dr(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      r(i, j) = corr(spec, distances_(i, j)) + (i == j ? spec.nugget : 0.0);
      dr(i, j) = corr_dlogphi(spec, distances_(i, j));
    }
  const CholeskyFactor f = factorise(r, 1.0, JitterPolicy::retry_once, data_.locations);
  const auto lt = f.lower.triangularView<Eigen::Lower>();
  corr_logdet_ = 2.0 * f.lower.diagonal().array().log().sum();
  const Eigen::MatrixXd u_eta = lt.transpose().solve(lt.solve(eta_));       // R^-1 eta
  const Eigen::MatrixXd u_d = lt.transpose().solve(lt.solve(design_));      // R^-1 D
  const Eigen::MatrixXd dr_eta = dr * u_eta;
  const Eigen::MatrixXd dr_d = dr * u_d;
  eta_quad_ = (eta_.array() * u_eta.array()).colwise().sum().transpose();
  cross_ = design_.transpose() * u_eta;
  gram_ = design_.transpose() * u_d;
  deta_quad_ = (u_eta.array() * dr_eta.array()).colwise().sum().transpose();
  dcross_ = u_d.transpose() * dr_eta;
  dgram_ = u_d.transpose() * dr_d;
  const Eigen::MatrixXd rinv = lt.transpose().solve(lt.solve(Eigen::MatrixXd::Identity(n, n)));
  trace_term_ = (rinv.array() * dr.array()).sum();
  cached_phi_ = phi;
}

void McLikelihood::evaluate(const Eigen::VectorXd& theta, bool with_gradient, Terms& out) const {
  const auto n = eta_.rows();
  const auto draws = eta_.cols();
  const auto p = static_cast<Eigen::Index>(anchor_params_.beta.size());
  const double sigma2 = std::exp(theta[1 + p]);
  const double phi = std::exp(theta[2 + p]);
  refresh_correlation(phi);

  const Eigen::VectorXd beta = theta.head(1 + p);
  // Coefficients seen by the Gaussian factor: held at the anchor on the residual scale.
  const Eigen::VectorXd gb_beta = scale_ == LatentScale::residual ? anchor_theta_.head(1 + p) : beta;
  const double log_norm_const =
      -0.5 * static_cast<double>(n) * (kLog2Pi + std::log(sigma2)) - 0.5 * corr_logdet_;
  // With e_j = eta_j - D b: Q_j = e_j' R^-1 e_j and Qd_j = e_j' R^-1 dR R^-1 e_j.
  const Eigen::VectorXd q = eta_quad_ - 2.0 * (cross_.transpose() * gb_beta) +
                            Eigen::VectorXd::Constant(draws, gb_beta.dot(gram_ * gb_beta));
  out.r = (log_norm_const - 0.5 * q.array() / sigma2).matrix();
  if (with_gradient) out.grads.resize(theta.size(), draws);

  if (scale_ == LatentScale::residual) {
    // Binomial factor at eta_j + D (beta - beta_anchor).
    const Eigen::VectorXd shift = design_ * (beta - gb_beta);
    Eigen::VectorXd g(n);
    for (Eigen::Index j = 0; j < draws; ++j) {
      double ll = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double e = eta_(i, j) + shift[i];
        const auto si = static_cast<std::size_t>(i);
        ll += data_.y[si] * e - data_.n[si] * softplus(e);
        if (with_gradient) g[i] = data_.y[si] - data_.n[si] * kernels::inv_logit(e);
      }
      out.r[j] += ll;
      if (with_gradient) out.grads.col(j).head(1 + p) = design_.transpose() * g;
    }
  } else if (with_gradient) {
    out.grads.topRows(1 + p) = (cross_.colwise() - gram_ * beta) / sigma2;
  }
  out.r -= anchor_terms_;
  if (!with_gradient) return;
  const Eigen::VectorXd qd = deta_quad_ - 2.0 * (dcross_.transpose() * gb_beta) +
                             Eigen::VectorXd::Constant(draws, gb_beta.dot(dgram_ * gb_beta));
  out.grads.row(1 + p) = (-0.5 * static_cast<double>(n) + 0.5 * q.array() / sigma2).matrix().transpose();
  out.grads.row(2 + p) = (-0.5 * trace_term_ + 0.5 * qd.array() / sigma2).matrix().transpose();
}

namespace {

double log_mean_exp(const Eigen::VectorXd& r) {
  const double m = r.maxCoeff();
  return m + std::log((r.array() - m).exp().mean());
}

}  // namespace

double McLikelihood::value(const Eigen::VectorXd& theta) const {
  Terms t;
  evaluate(theta, false, t);
  return log_mean_exp(t.r);
}

Eigen::VectorXd McLikelihood::gradient(const Eigen::VectorXd& theta) const {
  Terms t;
  evaluate(theta, true, t);
  const double m = t.r.maxCoeff();
  Eigen::VectorXd w = (t.r.array() - m).exp();
  w /= w.sum();
  return t.grads * w;
}

Eigen::MatrixXd McLikelihood::hessian(const Eigen::VectorXd& theta, std::span<const int> free) const {
  const auto k = static_cast<Eigen::Index>(free.size());
  Eigen::MatrixXd h(k, k);
  constexpr double step = 1e-4;
  for (Eigen::Index a = 0; a < k; ++a) {
    Eigen::VectorXd up = theta, dn = theta;
    up[free[static_cast<std::size_t>(a)]] += step;
    dn[free[static_cast<std::size_t>(a)]] -= step;
    const Eigen::VectorXd gu = gradient(up);
    const Eigen::VectorXd gd = gradient(dn);
    for (Eigen::Index b = 0; b < k; ++b)
      h(b, a) = (gu[free[static_cast<std::size_t>(b)]] - gd[free[static_cast<std::size_t>(b)]]) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

double McLikelihood::value_stderr(const Eigen::VectorXd& theta) const {
  Terms t;
  evaluate(theta, false, t);
  const double m = t.r.maxCoeff();
  const Eigen::VectorXd w = (t.r.array() - m).exp();
  const double var = batch_means_variance(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
  return std::sqrt(var) / w.mean();
}

Eigen::MatrixXd McLikelihood::gradient_mc_covariance(const Eigen::VectorXd& theta,
                                                     std::span<const int> free) const {
  Terms t;
  evaluate(theta, true, t);
  const double m = t.r.maxCoeff();
  const Eigen::VectorXd w = (t.r.array() - m).exp();
  const double wbar = w.mean();
  const Eigen::VectorXd gbar = t.grads * w / w.sum();
  const auto k = static_cast<Eigen::Index>(free.size());
  const auto draws = w.size();
  // Linearised ratio estimator: a_j = w_j (g_j - gbar) / wbar.
  Eigen::MatrixXd a(k, draws);
  for (Eigen::Index c = 0; c < k; ++c) {
    const int fc = free[static_cast<std::size_t>(c)];
    a.row(c) = (w.array() * (t.grads.row(fc).transpose().array() - gbar[fc])).transpose() / wbar;
  }
  const auto b = static_cast<Eigen::Index>(std::floor(std::sqrt(static_cast<double>(draws))));
  const Eigen::Index nb = draws / b;
  Eigen::MatrixXd bm(k, nb);
  for (Eigen::Index q = 0; q < nb; ++q) bm.col(q) = a.middleCols(q * b, b).rowwise().mean();
  const Eigen::VectorXd mean = bm.rowwise().mean();
  const Eigen::MatrixXd centred = bm.colwise() - mean;
  return centred * centred.transpose() / static_cast<double>(nb - 1) / static_cast<double>(nb);
}

double McLikelihood::importance_ess(const Eigen::VectorXd& theta) const {
  Terms t;
  evaluate(theta, false, t);
  const double m = t.r.maxCoeff();
  const Eigen::VectorXd w = (t.r.array() - m).exp();
  return w.sum() * w.sum() / w.squaredNorm();
}

// ---------------------------------------------------------------------------
// MCML

const ParameterEstimate& FitResult::parameter(const std::string& name) const {
  for (const auto& p : parameters)
    if (p.name == name) return p;
  throw InputError(fmt::format("no fitted parameter named '{}'", name));
}

namespace {

struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

Box parameter_box(const SiteData& data, const ModelParams& init, const FitConfig& config) {
  const auto p = static_cast<Eigen::Index>(init.beta.size());
  Box b;
  b.lower.resize(3 + p);
  b.upper.resize(3 + p);
  b.lower[0] = config.intercept_lower;
  b.upper[0] = config.intercept_upper;
  for (Eigen::Index k = 0; k < p; ++k) {
    b.lower[1 + k] = -100.0;
    b.upper[1 + k] = 100.0;
  }
  b.lower[1 + p] = std::log(1e-8);
  b.upper[1 + p] = std::log(1e4);
  double dmin = INFINITY, dmax = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = i + 1; j < data.size(); ++j) {
      const double d = distance(data.locations[i], data.locations[j]);
      if (d > 0) dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
    }
  if (!(dmax > 0)) {
    dmin = init.corr.phi;
    dmax = init.corr.phi;
  }
  b.lower[2 + p] = std::min(std::log(1e-3 * dmin), std::log(init.corr.phi));
  b.upper[2 + p] = std::max(std::log(1e3 * dmax), std::log(init.corr.phi));
  return b;
}

struct NewtonOutcome {
  Eigen::VectorXd theta;
  bool converged = false;
  int iterations = 0;
};

NewtonOutcome maximise(const McLikelihood& lik, Eigen::VectorXd theta, std::span<const int> free,
                       const Box& box, const FitConfig& config,
                       std::vector<std::vector<double>>& trajectory) {
  NewtonOutcome out;
  double f = lik.value(theta);
  for (int it = 0; it < config.max_iterations; ++it) {
    out.iterations = it + 1;
    const Eigen::VectorXd g_full = lik.gradient(theta);
    // Coordinates pinned at a bound with the gradient pointing outwards drop
    // out of the step; what remains is the projected gradient.
    std::vector<int> active;
    for (int idx : free) {
      const double span = 1e-9 * (box.upper[idx] - box.lower[idx]);
      const bool at_lo = theta[idx] <= box.lower[idx] + span && g_full[idx] < 0;
      const bool at_hi = theta[idx] >= box.upper[idx] - span && g_full[idx] > 0;
      if (!at_lo && !at_hi) active.push_back(idx);
    }
    const auto k = static_cast<Eigen::Index>(active.size());
    if (k == 0) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd g(k);
    for (Eigen::Index a = 0; a < k; ++a) g[a] = g_full[active[static_cast<std::size_t>(a)]];
    const Eigen::MatrixXd neg_h = -lik.hessian(theta, active);

    // Levenberg-style shift until the system is positive definite.
    Eigen::VectorXd step;
    double lambda = 0.0;
    for (int tries = 0; tries < 60; ++tries) {
      Eigen::MatrixXd a = neg_h;
      a.diagonal().array() += lambda;
      Eigen::LLT<Eigen::MatrixXd> llt(a);
      if (llt.info() == Eigen::Success) {
        step = llt.solve(g);
        break;
      }
      lambda = lambda == 0.0 ? 1e-6 * std::max(1.0, neg_h.diagonal().cwiseAbs().maxCoeff()) : lambda * 10.0;
    }
    if (step.size() != k) step = g;
    const double biggest = step.cwiseAbs().maxCoeff();
    if (biggest > 1.0) step /= biggest;

    double scale = 1.0;
    Eigen::VectorXd candidate;
    double f_new = -INFINITY;
    for (int ls = 0; ls < 40; ++ls) {
      candidate = theta;
      for (Eigen::Index a = 0; a < k; ++a) {
        const int idx = active[static_cast<std::size_t>(a)];
        candidate[idx] = std::clamp(theta[idx] + scale * step[a], box.lower[idx], box.upper[idx]);
      }
      f_new = lik.value(candidate);
      if (std::isfinite(f_new) && f_new >= f - 1e-12 * std::max(1.0, std::abs(f))) break;
      scale *= 0.5;
    }
    const double moved = (candidate - theta).cwiseAbs().maxCoeff();
    if (!(std::isfinite(f_new) && f_new >= f - 1e-12 * std::max(1.0, std::abs(f)))) {
      // No ascent direction left: stationary to within the line search.
      out.converged = g.cwiseAbs().maxCoeff() < 1e-4;
      break;
    }
    theta = candidate;
    const double gain = f_new - f;
    f = f_new;
    trajectory.emplace_back(theta.data(), theta.data() + theta.size());
    // A flat ridge (weakly identified covariance) creeps along in tiny
    // increments of the objective; stop once the gain is negligible.
    if (moved < config.tolerance || (gain < 1e-10 * std::max(1.0, std::abs(f)) && it > 0)) {
      out.converged = true;
      break;
    }
  }
  out.theta = theta;
  return out;
}

}  // namespace

FitResult mcml_fit(const SiteData& data, const ModelParams& init, const FitConfig& config) {
  config.validate();
  init.validate();
  if (data.covariates.cols() != static_cast<Eigen::Index>(init.beta.size()))
    throw InputError("data covariates do not match the model's coefficients");
  if (data.distinct_locations() < 2) throw InputError("MCML needs at least two distinct data sites");
  const bool spatial_free = !config.fix_sigma2 || !config.fix_phi;
  if (data.positive_sites() == 0 && spatial_free)
    throw DegenerateDataError(
        "all observed counts are zero: sigma2 and phi are not estimable by maximum likelihood; "
        "fix the covariance parameters or use a prior-based (Bayesian) analysis");

  FitResult result;
  auto& diag = result.diagnostics;
  if (data.positive_sites() < 10) {
    diag.weakly_identified = true;
    diag.warnings.push_back(fmt::format("weakly identified: only {} sites with positives",
                                        data.positive_sites()));
  }
  if (data.distinct_locations() < 30) {
    diag.few_sites = true;
    diag.warnings.push_back(fmt::format("only {} distinct locations; estimates will be imprecise",
                                        data.distinct_locations()));
  }

  const auto p = static_cast<Eigen::Index>(init.beta.size());
  std::vector<int> free;
  for (Eigen::Index k = 0; k <= p; ++k) free.push_back(static_cast<int>(k));
  if (!config.fix_sigma2) free.push_back(static_cast<int>(1 + p));
  if (!config.fix_phi) free.push_back(static_cast<int>(2 + p));
  const Box box = parameter_box(data, init, config);

  ModelParams anchor = init;
  anchor.mu = std::clamp(anchor.mu, config.intercept_lower, config.intercept_upper);
  std::optional<McLikelihood> lik;
  std::optional<LatentSamples> samples;
  NewtonOutcome outcome;
  // Extra cycles run while the importance weights at the optimum are too
  // uneven for the Hessian to be trusted.
  const int max_cycles = config.relaxation_cycles + kExtraCycles;
  for (int cycle = 0; cycle < max_cycles; ++cycle) {
    if (cycle >= config.relaxation_cycles &&
        lik->importance_ess(outcome.theta) >= kMinImportanceFraction * config.retained())
      break;
    samples.emplace(sample_latent(data, anchor, config, derive_seed(config.seed, Stream::sampler, static_cast<std::uint64_t>(cycle))));
    diag.jitter_events += samples->diagnostics.jitter_events;
    lik.emplace(data, anchor, *samples, choose_latent_scale(data, anchor, *samples));
    outcome = maximise(*lik, lik->anchor(), free, box, config, diag.trajectory);
    diag.iterations += outcome.iterations;
    diag.cycles = cycle + 1;
    anchor = lik->params_at(outcome.theta);
  }
  if (!outcome.converged)
    throw ConvergenceError(
        fmt::format("MCML optimiser did not converge within {} iterations", config.max_iterations),
        diag.trajectory);

  const Eigen::VectorXd theta = outcome.theta;
  result.estimates = anchor;
  result.transformed = theta;
  diag.acceptance_rate = samples->diagnostics.acceptance_rate;
  diag.min_ess = samples->diagnostics.min_ess;
  diag.sampler_warning = samples->diagnostics.acceptance_warning || samples->diagnostics.ess_warning;
  if (diag.sampler_warning)
    diag.warnings.push_back(fmt::format("sampler diagnostics: acceptance {:.3f}, min ESS {:.0f}",
                                        diag.acceptance_rate, diag.min_ess));
  diag.importance_ess = lik->importance_ess(theta);
  result.loglik_mc_stderr = lik->value_stderr(theta);
  for (int idx : free) {
    const double tol = 1e-8;
    if (theta[idx] <= box.lower[idx] + tol || theta[idx] >= box.upper[idx] - tol) diag.at_bound = true;
  }
  if (diag.at_bound) diag.warnings.push_back("estimate on a parameter bound; intervals are not reliable");

  const auto k = static_cast<Eigen::Index>(free.size());
  const Eigen::MatrixXd neg_h = -lik->hessian(theta, free);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(k, k, NAN);
  Eigen::VectorXd mc_sd = Eigen::VectorXd::Constant(k, NAN);
  Eigen::LLT<Eigen::MatrixXd> llt(neg_h);
  if (llt.info() == Eigen::Success) {
    cov = llt.solve(Eigen::MatrixXd::Identity(k, k));
    const Eigen::MatrixXd v = lik->gradient_mc_covariance(theta, free);
    mc_sd = (cov * v * cov).diagonal().cwiseMax(0.0).cwiseSqrt();
  } else {
    diag.warnings.push_back("observed information is not positive definite; intervals unavailable");
  }
  result.transformed_covariance = cov;

  result.transformed_names.push_back(init.intercept_name());
  for (const auto& name : init.covariate_names) result.transformed_names.push_back(name);
  result.transformed_names.push_back("log_sigma2");
  result.transformed_names.push_back("log_phi");

  constexpr double z = 1.959963984540054;
  for (Eigen::Index idx = 0; idx < theta.size(); ++idx) {
    ParameterEstimate pe;
    const bool is_log = idx >= 1 + p;
    pe.name = idx == 0 ? init.intercept_name()
              : idx <= p ? init.covariate_names[static_cast<std::size_t>(idx - 1)]
              : idx == 1 + p ? "sigma2" : "phi";
    pe.estimate = is_log ? std::exp(theta[idx]) : theta[idx];
    auto pos = std::find(free.begin(), free.end(), static_cast<int>(idx));
    if (pos == free.end()) {
      pe.fixed = true;
      pe.lower = pe.upper = pe.estimate;
    } else {
      const auto c = pos - free.begin();
      const double se = std::sqrt(cov(c, c));
      const double lo = theta[idx] - z * se;
      const double hi = theta[idx] + z * se;
      pe.lower = is_log ? std::exp(lo) : lo;
      pe.upper = is_log ? std::exp(hi) : hi;
      pe.mc_stderr = mc_sd[c];
    }
    result.parameters.push_back(pe);
  }
  return result;
}

std::vector<ProfilePoint> profile_deviance(const SiteData& data, const FitResult& fit,
                                           const std::string& parameter,
                                           std::span<const double> values, const FitConfig& config) {
  const auto& names = fit.transformed_names;
  Eigen::Index idx = -1;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::string natural = names[k] == "log_sigma2" ? "sigma2" : names[k] == "log_phi" ? "phi" : names[k];
    if (natural == parameter) idx = static_cast<Eigen::Index>(k);
  }
  if (idx < 0) throw InputError(fmt::format("unknown parameter '{}'", parameter));
  const bool is_log = names[static_cast<std::size_t>(idx)].rfind("log_", 0) == 0;
  for (double v : values)
    if (is_log && !(v > 0))
      throw InputError(fmt::format("profile value {} for '{}' violates positivity", v, parameter));

  const LatentSamples samples =
      sample_latent(data, fit.estimates, config, derive_seed(config.seed, Stream::sampler, 0xfeedULL));
  const McLikelihood lik(data, fit.estimates, samples, choose_latent_scale(data, fit.estimates, samples));
  const Eigen::VectorXd base = lik.anchor();
  const double at_estimate = lik.value(base);
  std::vector<ProfilePoint> out;
  for (double v : values) {
    Eigen::VectorXd th = base;
    th[idx] = is_log ? std::log(v) : v;
    out.push_back({v, lik.value(th) - at_estimate});
  }
  return out;
}

MarginalEstimate single_site_marginal_likelihood(int n, int y, double mu, double sigma2,
                                                 const LatentSamples& samples, std::size_t strata,
                                                 int shifts, std::uint64_t seed,
                                                 bool include_binomial_coefficient) {
  if (samples.eta.cols() != 1) throw InputError("single-site estimator needs draws for exactly one site");
  if (strata < 1 || shifts < 2) throw InputError("need at least one stratum and two shifts");
  const Eigen::VectorXd draws = samples.eta.col(0);
  const double m = draws.mean();
  const double sd_post = std::sqrt((draws.array() - m).square().sum() / static_cast<double>(draws.size() - 1));
  // Student-t proposal: its tails dominate the Gaussian prior tails, so the
  // importance weights stay bounded.
  const double nu = 5.0;
  const double sd = std::max(1.1 * sd_post, 1e-300);
  const boost::math::students_t_distribution<double> tdist(nu);
  const double coef = include_binomial_coefficient ? log_choose(n, y) : 0.0;
  const double log_prior_const = -0.5 * (kLog2Pi + std::log(sigma2));
  const double log_prop_const = std::lgamma(0.5 * (nu + 1)) - std::lgamma(0.5 * nu) -
                                0.5 * std::log(nu * M_PI) - std::log(sd);

  Rng rng = make_rng(seed, Stream::importance);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> estimates;
  for (int r = 0; r < shifts; ++r) {
    const double shift = unif(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < strata; ++i) {
      const double u = (static_cast<double>(i) + shift) / static_cast<double>(strata);
      const double tq = boost::math::quantile(tdist, std::clamp(u, 1e-300, 1.0 - 1e-16));
      const double s = m + sd * tq;
      const double log_target = coef + y * s - n * softplus(s) + log_prior_const -
                                0.5 * (s - mu) * (s - mu) / sigma2;
      const double log_prop = log_prop_const - 0.5 * (nu + 1) * std::log1p(tq * tq / nu);
      acc += std::exp(log_target - log_prop);
    }
    estimates.push_back(acc / static_cast<double>(strata));
  }
  MarginalEstimate out;
  double mean = 0.0;
  for (double e : estimates) mean += e;
  mean /= static_cast<double>(estimates.size());
  out.likelihood = mean;
  out.std_error = std::sqrt(plain_variance(estimates) / static_cast<double>(estimates.size()));
  return out;
}

}  // namespace geoelim
