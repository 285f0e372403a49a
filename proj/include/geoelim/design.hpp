#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "geoelim/geodata.hpp"
#include "geoelim/rng.hpp"

namespace geoelim {

struct DesignSpec {
  int k = 10;              // primary sites per EU
  int m = 100;             // target individuals per site
  double delta_min = 2.0;  // km
  int n_reserve = 2;
  std::uint64_t seed = 1;
  int max_restarts = 1000;

  void validate() const;
};

struct Candidate {
  SiteRecord site;
  bool small = false;  // population below m
};

struct DesignSite {
  std::string site_id;
  std::string eu_id;
  Point location;
  long population = 0;
  int target_n = 0;
  bool reserve = false;
  // Reserve closer than delta_min to a primary site (no feasible alternative remained).
  bool too_close = false;
};

struct Design {
  DesignSpec spec;
  std::vector<std::string> eu_ids;
  std::vector<DesignSite> sites;  // grouped by EU, primaries before reserves
  std::vector<std::string> notes;

  std::vector<const DesignSite*> primaries(const std::string& eu_id) const;
  std::size_t primary_count() const;
  std::size_t reserve_count() const;
  // Same sites with target_n recomputed for another m.
  Design with_target(int m) const;
};

// Drops uninhabited and zero-population sites, flags sites smaller than m.
// Throws InfeasibleDesignError when a listed EU is left without candidates.
std::vector<Candidate> candidate_filter(std::span<const SiteRecord> sites,
                                        std::span<const std::string> eu_ids, int m);

// Indices into `points` of k sites, pairwise at least delta_min apart:
// random permutation, greedy acceptance, restart on failure.
std::vector<std::size_t> inhibitory_sample(std::span<const Point> points, int k, double delta_min,
                                           Rng& rng, int max_restarts = 1000,
                                           const std::string& eu_id = "");

Design stratified_design(std::span<const SiteRecord> sites, std::span<const std::string> eu_ids,
                         const DesignSpec& spec);

struct RegularityScore {
  std::string eu_id;
  std::size_t k = 0;
  double min_nn = 0.0;
  double mean_nn = 0.0;
  double srs_min_nn = 0.0;   // averaged over the SRS baseline draws
  double srs_mean_nn = 0.0;
};

struct NearestNeighbour {
  double min = 0.0;
  double mean = 0.0;
};

NearestNeighbour nearest_neighbour_stats(std::span<const Point> points);

// Primary sites per EU against simple random samples of the same size from
// that EU's candidates. EUs with fewer than two primaries are skipped.
std::vector<RegularityScore> design_regularity_score(const Design& design,
                                                     std::span<const SiteRecord> sites,
                                                     int n_baseline = 200);

}  // namespace geoelim
