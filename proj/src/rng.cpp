#include "geoelim/rng.hpp"

namespace geoelim {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt) {
  return splitmix64(splitmix64(master) ^ splitmix64(salt + 0x632be59bd9b4e019ULL));
}

std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index) {
  const auto s = derive_seed(master, static_cast<std::uint64_t>(stream));
  return derive_seed(s, index);
}

Rng make_rng(std::uint64_t master, Stream stream, std::uint64_t index) {
  return Rng(derive_seed(master, stream, index));
}

}  // namespace geoelim
