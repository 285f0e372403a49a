#include <cmath>

#include "geoelim/kernels.hpp"

namespace geoelim::kernels::serial {

void covariance(std::span<const Point> pts, double sigma2, const CorrelationSpec& spec,
                Eigen::MatrixXd& out) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  out.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    out(j, j) = sigma2 * (1.0 + spec.nugget);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = sigma2 * corr(spec, distance(pts[i], pts[j]));
      out(i, j) = v;
      out(j, i) = v;
    }
  }
}

void cross_covariance(std::span<const Point> a, std::span<const Point> b, double sigma2,
                      const CorrelationSpec& spec, Eigen::MatrixXd& out) {
  const auto na = static_cast<Eigen::Index>(a.size());
  const auto nb = static_cast<Eigen::Index>(b.size());
  out.resize(na, nb);
  for (Eigen::Index j = 0; j < nb; ++j)
    for (Eigen::Index i = 0; i < na; ++i) out(i, j) = sigma2 * corr(spec, distance(a[i], b[j]));
}

void weighted_means(const RowMatrix& draws, std::span<const std::size_t> cells,
                    std::span<const double> weights, std::span<double> out) {
  // Extended-precision sums keep a constant row's mean within an ulp of the constant.
  long double wsum = 0.0L;
  for (double w : weights) wsum += w;
  for (Eigen::Index r = 0; r < draws.rows(); ++r) {
    const double* row = draws.row(r).data();
    long double acc = 0.0L;
    for (std::size_t k = 0; k < cells.size(); ++k) acc += static_cast<long double>(weights[k]) * row[cells[k]];
    out[static_cast<std::size_t>(r)] = static_cast<double>(acc / wsum);
  }
}

void inverse_logit(std::span<const double> eta, std::span<double> p) {
  for (std::size_t i = 0; i < eta.size(); ++i) p[i] = inv_logit(eta[i]);
}

}  // namespace geoelim::kernels::serial
