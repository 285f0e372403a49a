#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace geoelim {

// Planar location in kilometres.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

double distance(const Point& a, const Point& b);

struct Bounds {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
};

// Maps native file coordinates to the internal planar-km frame. Files are
// either already planar (km) or lon/lat degrees, projected equirectangularly
// about a reference point.
class Projection {
 public:
  enum class Kind { planar_km, lonlat };

  static constexpr double kEarthRadiusKm = 6371.0088;

  static Projection planar();
  static Projection equirectangular(double lon0, double lat0);

  Kind kind() const { return kind_; }
  double lon0() const { return lon0_; }
  double lat0() const { return lat0_; }

  Point forward(double a, double b) const;
  // Native coordinates (lon/lat or km) of a planar point.
  Point inverse(const Point& p) const;
  // km^2 per squared native unit.
  double area_scale() const;
  // km per native unit along the parallel (x) and meridian (y).
  double x_scale() const;
  double y_scale() const;

 private:
  Kind kind_ = Kind::planar_km;
  double lon0_ = 0.0;
  double lat0_ = 0.0;
};

struct SiteRecord {
  std::string id;
  std::string name;
  Point location;
  long population = 0;
  bool inhabited = true;
  std::string eu_id;
};

struct PrevalenceRecord {
  Point location;
  int n_tested = 1;
  int n_positive = 0;
  int year = 0;
  // Values of the named covariates at this site, in declaration order.
  std::vector<double> covariates;
};

struct PrevalenceSummary {
  std::size_t sites = 0;
  long total_tested = 0;
  long total_positive = 0;
  std::size_t zero_sites = 0;
  std::vector<std::string> warnings;
};

struct EvaluationUnit {
  std::string eu_id;
  std::string name;
  // Planar polygon (km). Empty when membership is defined by site tags only.
  std::vector<Point> polygon;

  bool contains(const Point& p) const;
};

struct GridCell {
  std::size_t cell_id = 0;
  Point centre;
  double pop_density = 0.0;
  std::optional<std::size_t> eu_index;
};

// Regular lattice of cell centres, row-major from the lower-left corner.
struct PredictionGrid {
  std::vector<GridCell> cells;
  double spacing = 1.0;
  std::size_t ncols = 0;
  std::size_t nrows = 0;
  Point origin;  // lower-left corner of the lattice
  std::vector<std::string> eu_ids;
  std::vector<std::vector<std::size_t>> eu_members;

  std::size_t size() const { return cells.size(); }
  std::vector<Point> centres() const;
  std::optional<std::size_t> eu_index(const std::string& eu_id) const;
  std::size_t nearest_cell(const Point& p) const;
  double eu_population_mass(std::size_t eu) const;
};

// ASCII grid (ncols/nrows/xll/yll/cellsize/nodata header, rows from the top).
struct AsciiRaster {
  std::size_t ncols = 0;
  std::size_t nrows = 0;
  double xll = 0.0;
  double yll = 0.0;
  double cellsize = 1.0;
  double nodata = -9999.0;
  std::vector<double> values;

  double at(std::size_t row, std::size_t col) const { return values[row * ncols + col]; }
  bool is_nodata(double v) const { return v == nodata; }
  // Nearest-cell lookup in native coordinates; nullopt outside the raster or on nodata.
  std::optional<double> sample(double x, double y) const;
  double total() const;
};

std::vector<SiteRecord> load_gazette(const std::filesystem::path& path,
                                     const Projection& proj);
void write_gazette(const std::filesystem::path& path, std::span<const SiteRecord> sites,
                   const Projection& proj);

// Extra columns after `year` are read as covariates named by their header.
std::vector<PrevalenceRecord> load_prevalence(const std::filesystem::path& path,
                                              const Projection& proj,
                                              PrevalenceSummary* summary = nullptr,
                                              std::vector<std::string>* covariate_names = nullptr);
void write_prevalence(const std::filesystem::path& path,
                      std::span<const PrevalenceRecord> records, const Projection& proj,
                      std::span<const std::string> covariate_names = {});

PrevalenceSummary summarise(std::span<const PrevalenceRecord> records);

struct EmpiricalPrevalence {
  std::vector<double> site_prevalence;
  double mean = 0.0;
  double max = 0.0;
};

EmpiricalPrevalence empirical_prevalence(std::span<const PrevalenceRecord> records);

AsciiRaster load_ascii_raster(const std::filesystem::path& path);
void write_ascii_raster(const std::filesystem::path& path, const AsciiRaster& raster);

// {"evaluation_units": [{"eu_id", "name", "polygon": [[x, y], ...]}]}
std::vector<EvaluationUnit> load_evaluation_units(const std::filesystem::path& path,
                                                  const Projection& proj);

// Raster values are population counts per raster cell; pd is counts per km^2.
// Every declared EU must end up with positive population mass.
PredictionGrid build_grid(const Bounds& bounds, double spacing, const AsciiRaster& population,
                          const Projection& proj, std::span<const EvaluationUnit> eus);
// Uniform pd = 1, no EU tagging.
PredictionGrid build_grid(const Bounds& bounds, double spacing);

// Planar raster of one value per grid cell, for surface summaries.
AsciiRaster grid_to_raster(const PredictionGrid& grid, std::span<const double> values,
                           double nodata = -9999.0);

struct PointFeature {
  Point location;  // planar
  nlohmann::json properties;
};

// GeoJSON FeatureCollection; coordinates are written in native units.
void write_point_features(const std::filesystem::path& path,
                          std::span<const PointFeature> features, const Projection& proj);

}  // namespace geoelim
