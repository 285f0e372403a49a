#include <cmath>

#include "geoelim/kernels.hpp"

namespace geoelim::kernels::omp {

void covariance(std::span<const Point> pts, double sigma2, const CorrelationSpec& spec,
                Eigen::MatrixXd& out) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  out.resize(n, n);
  // Full square per column: avoids write races on the mirrored half.
#pragma omp parallel for schedule(static) if (n > 64)
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == j) {
        out(j, j) = sigma2 * (1.0 + spec.nugget);
      } else {
        // distance() is symmetric bit-for-bit, so out(i, j) == out(j, i).
        const auto lo = std::min(i, j);
        const auto hi = std::max(i, j);
        out(i, j) = sigma2 * corr(spec, distance(pts[hi], pts[lo]));
      }
    }
  }
}

void cross_covariance(std::span<const Point> a, std::span<const Point> b, double sigma2,
                      const CorrelationSpec& spec, Eigen::MatrixXd& out) {
  const auto na = static_cast<Eigen::Index>(a.size());
  const auto nb = static_cast<Eigen::Index>(b.size());
  out.resize(na, nb);
#pragma omp parallel for schedule(static) if (na * nb > 4096)
  for (Eigen::Index j = 0; j < nb; ++j)
    for (Eigen::Index i = 0; i < na; ++i) out(i, j) = sigma2 * corr(spec, distance(a[i], b[j]));
}

void weighted_means(const RowMatrix& draws, std::span<const std::size_t> cells,
                    std::span<const double> weights, std::span<double> out) {
  long double wsum = 0.0L;
  for (double w : weights) wsum += w;
  const Eigen::Index rows = draws.rows();
#pragma omp parallel for schedule(static) if (rows > 32)
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double* row = draws.row(r).data();
    long double acc = 0.0L;
    for (std::size_t k = 0; k < cells.size(); ++k) acc += static_cast<long double>(weights[k]) * row[cells[k]];
    out[static_cast<std::size_t>(r)] = static_cast<double>(acc / wsum);
  }
}

void inverse_logit(std::span<const double> eta, std::span<double> p) {
  const auto n = static_cast<std::ptrdiff_t>(eta.size());
#pragma omp parallel for schedule(static) if (n > 4096)
  for (std::ptrdiff_t i = 0; i < n; ++i) p[i] = inv_logit(eta[i]);
}

}  // namespace geoelim::kernels::omp
