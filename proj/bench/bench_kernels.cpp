#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "geoelim/kernels.hpp"

using namespace geoelim;

namespace {

std::vector<Point> lattice(std::size_t side) {
  std::vector<Point> pts;
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j) pts.push_back({static_cast<double>(i), static_cast<double>(j)});
  return pts;
}

const CorrelationSpec kSpec{CorrFamily::matern, 3.0, 1.5, 0.0};

template <auto Kernel>
void covariance(benchmark::State& state) {
  const auto pts = lattice(static_cast<std::size_t>(state.range(0)));
  Eigen::MatrixXd out;
  for (auto _ : state) {
    Kernel(pts, 1.0, kSpec, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(pts.size() * pts.size()));
}

template <auto Kernel>
void weighted_means(benchmark::State& state) {
  const auto draws = static_cast<Eigen::Index>(state.range(0));
  const Eigen::Index cells = 2500;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  kernels::RowMatrix p(draws, cells);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  std::vector<std::size_t> idx(static_cast<std::size_t>(cells));
  std::vector<double> w(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    idx[i] = i;
    w[i] = u(rng);
  }
  std::vector<double> out(static_cast<std::size_t>(draws));
  for (auto _ : state) {
    Kernel(p, idx, w, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Kernel>
void inverse_logit(benchmark::State& state) {
  std::vector<double> eta(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < eta.size(); ++i) eta[i] = -6.0 + 12.0 * static_cast<double>(i) / static_cast<double>(eta.size());
  std::vector<double> p(eta.size());
  for (auto _ : state) {
    Kernel(eta, p);
    benchmark::DoNotOptimize(p.data());
  }
}

}  // namespace

BENCHMARK(covariance<kernels::serial::covariance>)->Name("covariance/serial")->Arg(20)->Arg(40);
BENCHMARK(covariance<kernels::omp::covariance>)->Name("covariance/omp")->Arg(20)->Arg(40);
BENCHMARK(weighted_means<kernels::serial::weighted_means>)->Name("weighted_means/serial")->Arg(1000);
BENCHMARK(weighted_means<kernels::omp::weighted_means>)->Name("weighted_means/omp")->Arg(1000);
BENCHMARK(inverse_logit<kernels::serial::inverse_logit>)->Name("inverse_logit/serial")->Arg(1 << 20);
BENCHMARK(inverse_logit<kernels::omp::inverse_logit>)->Name("inverse_logit/omp")->Arg(1 << 20);

BENCHMARK_MAIN();
