#include "geoelim/geodata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "csv.hpp"
#include "geoelim/error.hpp"

namespace geoelim {
namespace {

constexpr const char* kGazetteHeader = "id,name,lon,lat,population,inhabited,eu_id";
constexpr const char* kPrevalenceHeader = "lon,lat,n_tested,n_positive,year";

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("cannot open '{}'", path.string()));
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

bool blank(const std::string& line) {
  return csv::trim(line).empty();
}

}  // namespace

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// ---------------------------------------------------------------------------
// Projection

Projection Projection::planar() { return Projection{}; }

Projection Projection::equirectangular(double lon0, double lat0) {
  if (!std::isfinite(lon0) || !std::isfinite(lat0) || std::abs(lat0) >= 90.0)
    throw InputError("projection reference must be a finite lon/lat with |lat| < 90");
  Projection p;
  p.kind_ = Kind::lonlat;
  p.lon0_ = lon0;
  p.lat0_ = lat0;
  return p;
}

double Projection::x_scale() const {
  if (kind_ == Kind::planar_km) return 1.0;
  return kEarthRadiusKm * deg2rad(1.0) * std::cos(deg2rad(lat0_));
}

double Projection::y_scale() const {
  if (kind_ == Kind::planar_km) return 1.0;
  return kEarthRadiusKm * deg2rad(1.0);
}

double Projection::area_scale() const { return x_scale() * y_scale(); }

Point Projection::forward(double a, double b) const {
  if (kind_ == Kind::planar_km) return {a, b};
  return {(a - lon0_) * x_scale(), (b - lat0_) * y_scale()};
}

Point Projection::inverse(const Point& p) const {
  if (kind_ == Kind::planar_km) return p;
  return {lon0_ + p.x / x_scale(), lat0_ + p.y / y_scale()};
}

// ---------------------------------------------------------------------------
// Gazette

std::vector<SiteRecord> load_gazette(const std::filesystem::path& path, const Projection& proj) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line) || csv::trim(line) != kGazetteHeader)
    throw InputError(fmt::format("'{}': gazette header must be '{}'", path.string(), kGazetteHeader));

  std::vector<SiteRecord> sites;
  std::set<std::string> ids;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (blank(line)) continue;
    ++row;
    auto f = csv::split(line);
    if (f.size() != 7)
      throw InputError(fmt::format("'{}': row {} has {} columns, expected 7", path.string(), row, f.size()));
    SiteRecord s;
    s.id = std::string(csv::trim(f[0]));
    s.name = std::string(csv::trim(f[1]));
    const double a = csv::parse_double(f[2], row, "lon");
    const double b = csv::parse_double(f[3], row, "lat");
    if (!std::isfinite(a) || !std::isfinite(b))
      throw InputError(fmt::format("non-finite coordinate, row {}", row));
    s.location = proj.forward(a, b);
    s.population = csv::parse_long(f[4], row, "population");
    if (s.population < 0) throw InputError(fmt::format("negative population, row {}", row));
    s.inhabited = csv::parse_bool(f[5], row, "inhabited");
    s.eu_id = std::string(csv::trim(f[6]));
    if (s.id.empty()) throw InputError(fmt::format("empty id, row {}", row));
    if (!ids.insert(s.id).second)
      throw InputError(fmt::format("duplicate site id '{}', row {}", s.id, row));
    sites.push_back(std::move(s));
  }
  return sites;
}

void write_gazette(const std::filesystem::path& path, std::span<const SiteRecord> sites,
                   const Projection& proj) {
  auto out = open_output(path);
  out << kGazetteHeader << '\n';
  for (const auto& s : sites) {
    const Point native = proj.inverse(s.location);
    out << csv::quote(s.id) << ',' << csv::quote(s.name) << ',' << csv::fmt_double(native.x) << ','
        << csv::fmt_double(native.y) << ',' << s.population << ','
        << (s.inhabited ? "true" : "false") << ',' << csv::quote(s.eu_id) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Prevalence

PrevalenceSummary summarise(std::span<const PrevalenceRecord> records) {
  PrevalenceSummary s;
  s.sites = records.size();
  for (const auto& r : records) {
    s.total_tested += r.n_tested;
    s.total_positive += r.n_positive;
    if (r.n_positive == 0) ++s.zero_sites;
  }
  return s;
}

std::vector<PrevalenceRecord> load_prevalence(const std::filesystem::path& path,
                                              const Projection& proj, PrevalenceSummary* summary,
                                              std::vector<std::string>* covariate_names) {
  auto in = open_input(path);
  std::string line;
  std::vector<PrevalenceRecord> records;
  std::vector<std::string> names;

  if (!std::getline(in, line) || blank(line)) {
    if (summary) {
      *summary = {};
      summary->warnings.push_back(fmt::format("'{}' is empty", path.string()));
    }
    if (covariate_names) covariate_names->clear();
    return records;
  }
  const auto header = csv::split(csv::trim(line));
  const auto expected = csv::split(kPrevalenceHeader);
  if (header.size() < expected.size() ||
      !std::equal(expected.begin(), expected.end(), header.begin()))
    throw InputError(fmt::format("'{}': prevalence header must start with '{}'", path.string(),
                                 kPrevalenceHeader));
  for (std::size_t j = expected.size(); j < header.size(); ++j)
    names.push_back(std::string(csv::trim(header[j])));

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (blank(line)) continue;
    ++row;
    auto f = csv::split(line);
    if (f.size() != header.size())
      throw InputError(fmt::format("'{}': row {} has {} columns, expected {}", path.string(), row,
                                   f.size(), header.size()));
    PrevalenceRecord r;
    const double a = csv::parse_double(f[0], row, "lon");
    const double b = csv::parse_double(f[1], row, "lat");
    if (!std::isfinite(a) || !std::isfinite(b))
      throw InputError(fmt::format("non-finite coordinate, row {}", row));
    r.location = proj.forward(a, b);
    const long n = csv::parse_long(f[2], row, "n_tested");
    const long y = csv::parse_long(f[3], row, "n_positive");
    if (n < 1) throw InputError(fmt::format("n_tested must be >= 1, row {}", row));
    if (y < 0) throw InputError(fmt::format("negative n_positive, row {}", row));
    if (y > n) throw InputError(fmt::format("n_positive > n_tested, row {}", row));
    r.n_tested = static_cast<int>(n);
    r.n_positive = static_cast<int>(y);
    r.year = static_cast<int>(csv::parse_long(f[4], row, "year"));
    for (std::size_t j = 0; j < names.size(); ++j)
      r.covariates.push_back(csv::parse_double(f[expected.size() + j], row, names[j]));
    records.push_back(std::move(r));
  }
  if (summary) {
    *summary = summarise(records);
    if (records.empty())
      summary->warnings.push_back(fmt::format("'{}' contains no records", path.string()));
  }
  if (covariate_names) *covariate_names = names;
  return records;
}

void write_prevalence(const std::filesystem::path& path, std::span<const PrevalenceRecord> records,
                      const Projection& proj, std::span<const std::string> covariate_names) {
  auto out = open_output(path);
  out << kPrevalenceHeader;
  for (const auto& n : covariate_names) out << ',' << csv::quote(n);
  out << '\n';
  for (const auto& r : records) {
    if (r.covariates.size() != covariate_names.size())
      throw InputError("record covariate count does not match the declared names");
    const Point native = proj.inverse(r.location);
    out << csv::fmt_double(native.x) << ',' << csv::fmt_double(native.y) << ',' << r.n_tested << ','
        << r.n_positive << ',' << r.year;
    for (double c : r.covariates) out << ',' << csv::fmt_double(c);
    out << '\n';
  }
}

EmpiricalPrevalence empirical_prevalence(std::span<const PrevalenceRecord> records) {
  if (records.empty()) throw InputError("empirical prevalence needs at least one record");
  EmpiricalPrevalence e;
  e.site_prevalence.reserve(records.size());
  double sum = 0.0;
  for (const auto& r : records) {
    const double p = static_cast<double>(r.n_positive) / r.n_tested;
    e.site_prevalence.push_back(p);
    sum += p;
    e.max = std::max(e.max, p);
  }
  e.mean = sum / static_cast<double>(records.size());
  return e;
}

// ---------------------------------------------------------------------------
// Raster

std::optional<double> AsciiRaster::sample(double x, double y) const {
  const double fc = std::floor((x - xll) / cellsize);
  const double fr = std::floor((y - yll) / cellsize);
  if (fc < 0 || fr < 0 || fc >= static_cast<double>(ncols) || fr >= static_cast<double>(nrows))
    return std::nullopt;
  const auto col = static_cast<std::size_t>(fc);
  const auto row = nrows - 1 - static_cast<std::size_t>(fr);
  const double v = at(row, col);
  if (is_nodata(v)) return std::nullopt;
  return v;
}

double AsciiRaster::total() const {
  double t = 0.0;
  for (double v : values)
    if (!is_nodata(v)) t += v;
  return t;
}

AsciiRaster load_ascii_raster(const std::filesystem::path& path) {
  auto in = open_input(path);
  AsciiRaster r;
  const char* keys[] = {"ncols", "nrows", "xll", "yll", "cellsize", "nodata"};
  for (const char* key : keys) {
    std::string name;
    std::string value;
    if (!(in >> name >> value))
      throw InputError(fmt::format("'{}': truncated raster header", path.string()));
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    // Accept the common xllcorner / nodata_value spellings too.
    if (lower == "xllcorner") lower = "xll";
    if (lower == "yllcorner") lower = "yll";
    if (lower == "nodata_value") lower = "nodata";
    if (lower != key)
      throw InputError(fmt::format("'{}': expected raster key '{}', found '{}'", path.string(), key, name));
    const double v = csv::parse_double(value, 0, key);
    if (lower == "ncols") r.ncols = static_cast<std::size_t>(v);
    if (lower == "nrows") r.nrows = static_cast<std::size_t>(v);
    if (lower == "xll") r.xll = v;
    if (lower == "yll") r.yll = v;
    if (lower == "cellsize") r.cellsize = v;
    if (lower == "nodata") r.nodata = v;
  }
  if (r.ncols == 0 || r.nrows == 0 || !(r.cellsize > 0))
    throw InputError(fmt::format("'{}': raster needs positive ncols, nrows and cellsize", path.string()));
  r.values.reserve(r.ncols * r.nrows);
  std::string token;
  while (in >> token) r.values.push_back(csv::parse_double(token, r.values.size() / r.ncols + 1, "value"));
  if (r.values.size() != r.ncols * r.nrows)
    throw InputError(fmt::format("'{}': expected {} raster values, found {}", path.string(),
                                 r.ncols * r.nrows, r.values.size()));
  return r;
}

void write_ascii_raster(const std::filesystem::path& path, const AsciiRaster& r) {
  auto out = open_output(path);
  out << "ncols " << r.ncols << '\n'
      << "nrows " << r.nrows << '\n'
      << "xll " << csv::fmt_double(r.xll) << '\n'
      << "yll " << csv::fmt_double(r.yll) << '\n'
      << "cellsize " << csv::fmt_double(r.cellsize) << '\n'
      << "nodata " << csv::fmt_double(r.nodata) << '\n';
  for (std::size_t i = 0; i < r.nrows; ++i) {
    for (std::size_t j = 0; j < r.ncols; ++j) {
      if (j) out << ' ';
      out << csv::fmt_double(r.at(i, j));
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Evaluation units

bool EvaluationUnit::contains(const Point& p) const {
  // Even-odd ray casting.
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = polygon[i];
    const Point& b = polygon[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double xcross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
      if (p.x < xcross) inside = !inside;
    }
  }
  return inside;
}

std::vector<EvaluationUnit> load_evaluation_units(const std::filesystem::path& path,
                                                  const Projection& proj) {
  auto in = open_input(path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(fmt::format("'{}': {}", path.string(), e.what()));
  }
  if (!doc.contains("evaluation_units") || !doc["evaluation_units"].is_array())
    throw InputError(fmt::format("'{}': missing 'evaluation_units' array", path.string()));
  std::vector<EvaluationUnit> eus;
  std::set<std::string> seen;
  for (const auto& u : doc["evaluation_units"]) {
    EvaluationUnit eu;
    eu.eu_id = u.at("eu_id").get<std::string>();
    eu.name = u.value("name", eu.eu_id);
    if (u.contains("polygon")) {
      for (const auto& v : u["polygon"]) {
        if (!v.is_array() || v.size() != 2)
          throw InputError(fmt::format("EU '{}': polygon vertices must be [x, y]", eu.eu_id));
        eu.polygon.push_back(proj.forward(v[0].get<double>(), v[1].get<double>()));
      }
      if (!eu.polygon.empty() && eu.polygon.size() < 3)
        throw InputError(fmt::format("EU '{}': polygon needs at least 3 vertices", eu.eu_id));
    }
    if (!seen.insert(eu.eu_id).second)
      throw InputError(fmt::format("duplicate EU id '{}'", eu.eu_id));
    eus.push_back(std::move(eu));
  }
  return eus;
}

// ---------------------------------------------------------------------------
// Grid

std::vector<Point> PredictionGrid::centres() const {
  std::vector<Point> out;
  out.reserve(cells.size());
  for (const auto& c : cells) out.push_back(c.centre);
  return out;
}

std::optional<std::size_t> PredictionGrid::eu_index(const std::string& eu_id) const {
  auto it = std::find(eu_ids.begin(), eu_ids.end(), eu_id);
  if (it == eu_ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - eu_ids.begin());
}

std::size_t PredictionGrid::nearest_cell(const Point& p) const {
  const double fc = std::floor((p.x - origin.x) / spacing);
  const double fr = std::floor((p.y - origin.y) / spacing);
  const auto col = static_cast<std::size_t>(std::clamp(fc, 0.0, static_cast<double>(ncols - 1)));
  const auto row = static_cast<std::size_t>(std::clamp(fr, 0.0, static_cast<double>(nrows - 1)));
  return row * ncols + col;
}

double PredictionGrid::eu_population_mass(std::size_t eu) const {
  double m = 0.0;
  for (auto c : eu_members.at(eu)) m += cells[c].pop_density;
  return m;
}

namespace {

PredictionGrid lattice(const Bounds& b, double spacing) {
  if (!(spacing > 0)) throw InputError("grid spacing must be positive");
  if (!(b.width() > 0) || !(b.height() > 0)) throw InputError("grid bounds must have positive extent");
  PredictionGrid g;
  g.spacing = spacing;
  g.origin = {b.xmin, b.ymin};
  // Tolerance keeps exact multiples from gaining a spurious extra column.
  g.ncols = static_cast<std::size_t>(std::ceil(b.width() / spacing - 1e-9));
  g.nrows = static_cast<std::size_t>(std::ceil(b.height() / spacing - 1e-9));
  g.cells.reserve(g.ncols * g.nrows);
  for (std::size_t r = 0; r < g.nrows; ++r)
    for (std::size_t c = 0; c < g.ncols; ++c) {
      GridCell cell;
      cell.cell_id = r * g.ncols + c;
      cell.centre = {b.xmin + (static_cast<double>(c) + 0.5) * spacing,
                     b.ymin + (static_cast<double>(r) + 0.5) * spacing};
      cell.pop_density = 1.0;
      g.cells.push_back(cell);
    }
  return g;
}

}  // namespace

PredictionGrid build_grid(const Bounds& bounds, double spacing) { return lattice(bounds, spacing); }

PredictionGrid build_grid(const Bounds& bounds, double spacing, const AsciiRaster& population,
                          const Projection& proj, std::span<const EvaluationUnit> eus) {
  PredictionGrid g = lattice(bounds, spacing);
  const double cell_area_km2 = population.cellsize * population.cellsize * proj.area_scale();
  for (auto& cell : g.cells) {
    const Point native = proj.inverse(cell.centre);
    const auto v = population.sample(native.x, native.y);
    const double pd = v ? *v / cell_area_km2 : 0.0;
    if (!std::isfinite(pd) || pd < 0)
      throw InputError(fmt::format("invalid population value at cell {}", cell.cell_id));
    cell.pop_density = pd;
  }
  g.eu_ids.reserve(eus.size());
  for (const auto& eu : eus) g.eu_ids.push_back(eu.eu_id);
  g.eu_members.assign(eus.size(), {});
  for (auto& cell : g.cells) {
    for (std::size_t e = 0; e < eus.size(); ++e) {
      if (eus[e].contains(cell.centre)) {
        cell.eu_index = e;
        g.eu_members[e].push_back(cell.cell_id);
        break;
      }
    }
  }
  std::vector<std::string> empty;
  for (std::size_t e = 0; e < eus.size(); ++e)
    if (!(g.eu_population_mass(e) > 0)) empty.push_back(eus[e].eu_id);
  if (!empty.empty()) {
    std::string list;
    for (const auto& id : empty) list += (list.empty() ? "" : ", ") + id;
    throw DomainError(fmt::format("evaluation units with zero population mass on the grid: {}", list));
  }
  return g;
}

AsciiRaster grid_to_raster(const PredictionGrid& grid, std::span<const double> values, double nodata) {
  if (values.size() != grid.size()) throw InputError("one value per grid cell required");
  AsciiRaster r;
  r.ncols = grid.ncols;
  r.nrows = grid.nrows;
  r.xll = grid.origin.x;
  r.yll = grid.origin.y;
  r.cellsize = grid.spacing;
  r.nodata = nodata;
  r.values.resize(values.size());
  for (std::size_t row = 0; row < grid.nrows; ++row)
    for (std::size_t col = 0; col < grid.ncols; ++col)
      r.values[(grid.nrows - 1 - row) * grid.ncols + col] = values[row * grid.ncols + col];
  return r;
}

void write_point_features(const std::filesystem::path& path, std::span<const PointFeature> features,
                          const Projection& proj) {
  nlohmann::json fc;
  fc["type"] = "FeatureCollection";
  fc["features"] = nlohmann::json::array();
  for (const auto& f : features) {
    const Point native = proj.inverse(f.location);
    nlohmann::json feat;
    feat["type"] = "Feature";
    feat["geometry"] = {{"type", "Point"}, {"coordinates", {native.x, native.y}}};
    feat["properties"] = f.properties;
    fc["features"].push_back(std::move(feat));
  }
  auto out = open_output(path);
  out << fc.dump(2) << '\n';
}

}  // namespace geoelim
