#pragma once

#include <cstdint>
#include <random>

namespace geoelim {

using Rng = std::mt19937_64;

// Named streams. Every random quantity in the library is drawn from a
// generator seeded by (master seed, stream, index), so replicate r owns the
// same numbers no matter which thread runs it or in which order.
enum class Stream : std::uint64_t {
  field = 1,
  surface = 2,
  site_field = 3,
  survey = 4,
  sampler = 5,
  refit = 6,
  predict = 7,
  design = 8,
  reserve = 9,
  srs_baseline = 10,
  calibration = 11,
  validation = 12,
  demo = 13,
  importance = 14,
};

// SplitMix64 finaliser applied to the combined words.
std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index = 0);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt);

Rng make_rng(std::uint64_t master, Stream stream, std::uint64_t index = 0);

}  // namespace geoelim
