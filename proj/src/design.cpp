#include "geoelim/design.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "geoelim/error.hpp"

namespace geoelim {

void DesignSpec::validate() const {
  if (k < 1) throw InputError("design k must be at least 1");
  if (m < 1) throw InputError("design m must be at least 1");
  if (!(delta_min >= 0)) throw InputError("delta_min must be nonnegative");
  if (n_reserve < 0) throw InputError("n_reserve must be nonnegative");
  if (max_restarts < 1) throw InputError("max_restarts must be positive");
}

std::vector<const DesignSite*> Design::primaries(const std::string& eu_id) const {
  std::vector<const DesignSite*> out;
  for (const auto& s : sites)
    if (!s.reserve && s.eu_id == eu_id) out.push_back(&s);
  return out;
}

std::size_t Design::primary_count() const {
  return static_cast<std::size_t>(std::count_if(sites.begin(), sites.end(), [](const auto& s) { return !s.reserve; }));
}

std::size_t Design::reserve_count() const { return sites.size() - primary_count(); }

Design Design::with_target(int m) const {
  Design d = *this;
  d.spec.m = m;
  for (auto& s : d.sites) s.target_n = static_cast<int>(std::min<long>(m, s.population));
  return d;
}

std::vector<Candidate> candidate_filter(std::span<const SiteRecord> sites,
                                        std::span<const std::string> eu_ids, int m) {
  std::vector<Candidate> out;
  std::map<std::string, int> per_eu;
  for (const auto& id : eu_ids) per_eu[id] = 0;
  for (const auto& s : sites) {
    if (!s.inhabited || s.population <= 0) continue;
    out.push_back({s, s.population < m});
    if (auto it = per_eu.find(s.eu_id); it != per_eu.end()) ++it->second;
  }
  std::vector<std::string> empty;
  for (const auto& [id, count] : per_eu)
    if (count == 0) empty.push_back(id);
  if (!empty.empty())
    throw InfeasibleDesignError(
        fmt::format("evaluation units without inhabited candidate sites: {}", fmt::join(empty, ", ")),
        empty, 0);
  return out;
}

std::vector<std::size_t> inhibitory_sample(std::span<const Point> points, int k, double delta_min,
                                           Rng& rng, int max_restarts, const std::string& eu_id) {
  const std::string where = eu_id.empty() ? std::string() : fmt::format(" in EU '{}'", eu_id);
  if (k < 1) throw InputError("k must be at least 1");
  if (static_cast<std::size_t>(k) > points.size())
    throw InfeasibleDesignError(fmt::format("k = {} exceeds the {} candidates{}", k, points.size(), where),
                                {eu_id}, static_cast<int>(points.size()));
  const double d2 = delta_min * delta_min;
  std::vector<std::size_t> order(points.size());
  int best = 0;
  for (int attempt = 0; attempt < max_restarts; ++attempt) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> chosen;
    for (std::size_t idx : order) {
      const Point& p = points[idx];
      const bool ok = std::all_of(chosen.begin(), chosen.end(), [&](std::size_t c) {
        const double dx = points[c].x - p.x, dy = points[c].y - p.y;
        return dx * dx + dy * dy >= d2;
      });
      if (!ok) continue;
      chosen.push_back(idx);
      if (chosen.size() == static_cast<std::size_t>(k)) return chosen;
    }
    best = std::max(best, static_cast<int>(chosen.size()));
  }
  throw InfeasibleDesignError(
      fmt::format("no set of {} sites at least {} km apart{} after {} restarts; largest found: {}", k,
                  delta_min, where, max_restarts, best),
      {eu_id}, best);
}

Design stratified_design(std::span<const SiteRecord> sites, std::span<const std::string> eu_ids,
                         const DesignSpec& spec) {
  spec.validate();
  const std::vector<Candidate> candidates = candidate_filter(sites, eu_ids, spec.m);
  Design design;
  design.spec = spec;
  design.eu_ids.assign(eu_ids.begin(), eu_ids.end());

  std::vector<std::string> infeasible;
  int best_k = std::numeric_limits<int>::max();
  std::string first_message;
  for (std::size_t e = 0; e < eu_ids.size(); ++e) {
    const std::string& eu = eu_ids[e];
    std::vector<const Candidate*> pool;
    for (const auto& c : candidates)
      if (c.site.eu_id == eu) pool.push_back(&c);
    std::sort(pool.begin(), pool.end(), [](const Candidate* a, const Candidate* b) { return a->site.id < b->site.id; });
    std::vector<Point> pts;
    for (const auto* c : pool) pts.push_back(c->site.location);

    Rng rng = make_rng(spec.seed, Stream::design, e);
    std::vector<std::size_t> chosen;
    try {
      chosen = inhibitory_sample(pts, spec.k, spec.delta_min, rng, spec.max_restarts, eu);
    } catch (const InfeasibleDesignError& err) {
      infeasible.push_back(eu);
      best_k = std::min(best_k, err.best_k());
      if (first_message.empty()) first_message = err.what();
      continue;
    }
    auto add = [&](std::size_t idx, bool reserve, bool too_close) {
      const SiteRecord& s = pool[idx]->site;
      design.sites.push_back({s.id, eu, s.location, s.population,
                              static_cast<int>(std::min<long>(spec.m, s.population)), reserve, too_close});
    };
    for (std::size_t idx : chosen) add(idx, false, false);

    std::vector<bool> used(pool.size(), false);
    for (std::size_t idx : chosen) used[idx] = true;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (!used[i]) rest.push_back(i);
    Rng rrng = make_rng(spec.seed, Stream::reserve, e);
    std::shuffle(rest.begin(), rest.end(), rrng);
    std::vector<std::size_t> taken = chosen;
    std::vector<std::size_t> close;
    int added = 0;
    for (std::size_t idx : rest) {
      if (added == spec.n_reserve) break;
      const bool ok = std::all_of(taken.begin(), taken.end(),
                                  [&](std::size_t c) { return distance(pts[c], pts[idx]) >= spec.delta_min; });
      if (!ok) {
        close.push_back(idx);
        continue;
      }
      add(idx, true, false);
      taken.push_back(idx);
      ++added;
    }
    bool flagged = false;
    for (std::size_t idx : close) {
      if (added == spec.n_reserve) break;
      add(idx, true, true);
      flagged = true;
      ++added;
    }
    if (added < spec.n_reserve)
      design.notes.push_back(fmt::format("EU '{}': only {} reserve sites available", eu, added));
    if (flagged)
      design.notes.push_back(fmt::format("EU '{}': reserve closer than {} km to a selected site", eu, spec.delta_min));
  }
  if (!infeasible.empty()) {
    const std::string msg = infeasible.size() == 1
                                ? first_message
                                : fmt::format("design infeasible in evaluation units {} (largest k found: {})",
                                              fmt::join(infeasible, ", "), best_k);
    throw InfeasibleDesignError(msg, infeasible, best_k);
  }
  return design;
}

NearestNeighbour nearest_neighbour_stats(std::span<const Point> points) {
  if (points.size() < 2) throw InputError("nearest-neighbour statistics need at least two points");
  NearestNeighbour out{std::numeric_limits<double>::infinity(), 0.0};
  for (std::size_t i = 0; i < points.size(); ++i) {
    double nn = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < points.size(); ++j)
      if (j != i) nn = std::min(nn, distance(points[i], points[j]));
    out.min = std::min(out.min, nn);
    out.mean += nn;
  }
  out.mean /= static_cast<double>(points.size());
  return out;
}

std::vector<RegularityScore> design_regularity_score(const Design& design, std::span<const SiteRecord> sites,
                                                     int n_baseline) {
  const std::vector<Candidate> candidates = candidate_filter(sites, design.eu_ids, design.spec.m);
  std::vector<RegularityScore> out;
  for (std::size_t e = 0; e < design.eu_ids.size(); ++e) {
    const std::string& eu = design.eu_ids[e];
    std::vector<Point> chosen;
    for (const auto* s : design.primaries(eu)) chosen.push_back(s->location);
    if (chosen.size() < 2) continue;
    std::vector<const Candidate*> pool;
    for (const auto& c : candidates)
      if (c.site.eu_id == eu) pool.push_back(&c);
    std::sort(pool.begin(), pool.end(), [](const Candidate* a, const Candidate* b) { return a->site.id < b->site.id; });
    std::vector<Point> pts;
    for (const auto* c : pool) pts.push_back(c->site.location);

    RegularityScore r;
    r.eu_id = eu;
    r.k = chosen.size();
    const auto nn = nearest_neighbour_stats(chosen);
    r.min_nn = nn.min;
    r.mean_nn = nn.mean;
    Rng rng = make_rng(design.spec.seed, Stream::srs_baseline, e);
    for (int b = 0; b < n_baseline; ++b) {
      const auto idx = inhibitory_sample(pts, static_cast<int>(r.k), 0.0, rng, 1, eu);
      std::vector<Point> srs;
      for (auto i : idx) srs.push_back(pts[i]);
      const auto s = nearest_neighbour_stats(srs);
      r.srs_min_nn += s.min;
      r.srs_mean_nn += s.mean;
    }
    r.srs_min_nn /= n_baseline;
    r.srs_mean_nn /= n_baseline;
    out.push_back(r);
  }
  return out;
}

}  // namespace geoelim
