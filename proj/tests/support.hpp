#pragma once

// Shared helpers for the unit tests and the acceptance suite: fixture
// locations, scratch directories and small hand-rolled generators.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "geoelim/geodata.hpp"
#include "geoelim/rng.hpp"

namespace testsupport {

namespace fs = std::filesystem;

inline fs::path fixture_dir() { return fs::path(GEOELIM_FIXTURE_DIR); }
inline fs::path desk() { return fixture_dir() / "desk"; }

// Fresh directory under the build tree; wiped on creation.
inline fs::path scratch(const std::string& name) {
  fs::path p = fs::path(GEOELIM_SCRATCH_DIR) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Generators. Each takes the engine explicitly so a failing case can be
// replayed from the seed printed by the test.
struct Gen {
  geoelim::Rng rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng); }
  double normal() { return std::normal_distribution<double>()(rng); }

  geoelim::Point point(double side = 1.0) { return {uniform(0, side), uniform(0, side)}; }
  std::vector<geoelim::Point> points(std::size_t n, double side = 1.0) {
    std::vector<geoelim::Point> out(n);
    for (auto& p : out) p = point(side);
    return out;
  }
  std::vector<double> positive_weights(std::size_t n) {
    std::vector<double> w(n);
    for (auto& x : w) x = uniform(0.05, 10.0);
    return w;
  }
};

}  // namespace testsupport
