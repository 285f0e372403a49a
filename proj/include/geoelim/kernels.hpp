#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include <Eigen/Core>

#include "geoelim/corrfun.hpp"
#include "geoelim/geodata.hpp"

// Data-parallel inner loops. `serial` is the reference kept for tests and
// benchmarks; `omp` is what the library calls. Both produce bit-identical
// results: every output element is computed by the same expression and
// reductions are never split across threads.
namespace geoelim::kernels {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace serial {

void covariance(std::span<const Point> pts, double sigma2, const CorrelationSpec& spec,
                Eigen::MatrixXd& out);
void cross_covariance(std::span<const Point> a, std::span<const Point> b, double sigma2,
                      const CorrelationSpec& spec, Eigen::MatrixXd& out);
// out[r] = sum_k w_k * draws(r, cells_k) / sum_k w_k
void weighted_means(const RowMatrix& draws, std::span<const std::size_t> cells,
                    std::span<const double> weights, std::span<double> out);
void inverse_logit(std::span<const double> eta, std::span<double> p);

}  // namespace serial

namespace omp {

void covariance(std::span<const Point> pts, double sigma2, const CorrelationSpec& spec,
                Eigen::MatrixXd& out);
void cross_covariance(std::span<const Point> a, std::span<const Point> b, double sigma2,
                      const CorrelationSpec& spec, Eigen::MatrixXd& out);
void weighted_means(const RowMatrix& draws, std::span<const std::size_t> cells,
                    std::span<const double> weights, std::span<double> out);
void inverse_logit(std::span<const double> eta, std::span<double> p);

}  // namespace omp

// Numerically stable 1 / (1 + exp(-x)).
inline double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace geoelim::kernels
