#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "snowwatch/geo.hpp"
#include "snowwatch/image.hpp"

namespace snowwatch {

class TerrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Regular lat/lon elevation raster. Row 0 is the northernmost row; `origin`
/// is the center of the south-west (lower-left) cell.
class DemGrid {
 public:
  DemGrid(GeoPoint origin, int n_rows, int n_cols, double cell_size, double nodata,
          std::vector<double> elevations);

  const GeoPoint& origin() const { return origin_; }
  int n_rows() const { return n_rows_; }
  int n_cols() const { return n_cols_; }
  double cell_size() const { return cell_size_; }
  double nodata() const { return nodata_; }
  std::span<const double> elevations() const { return elevations_; }

  double at(int row, int col) const { return elevations_[static_cast<size_t>(row) * n_cols_ + col]; }
  bool is_nodata(double v) const { return v == nodata_ || !std::isfinite(v); }
  GeoPoint cell_center(int row, int col) const;

  // Ground size of one cell in meters along the north and east axes at the grid center.
  double cell_meters_north() const;
  double cell_meters_east() const;

 private:
  GeoPoint origin_;
  int n_rows_;
  int n_cols_;
  double cell_size_;
  double nodata_;
  std::vector<double> elevations_;
};

DemGrid load_dem(const std::filesystem::path& path);
DemGrid parse_dem(const std::string& text);
std::string format_dem(const DemGrid& dem);

// Bilinear interpolation between the surrounding cell centers. Out of bounds, or
// any contributing neighbor holding nodata, yields nullopt.
std::optional<double> sample_elevation(const DemGrid& dem, const GeoPoint& p);

struct Peak {
  std::string name;
  GeoPoint position;  // alt is mandatory

  bool valid() const { return !name.empty() && position.valid() && position.alt.has_value(); }
  friend bool operator==(const Peak&, const Peak&) = default;
};

std::vector<Peak> load_peaks(const std::filesystem::path& path);
std::vector<Peak> parse_peaks(const std::string& csv);

struct Viewpoint {
  GeoPoint position;
  double eye_height = 2.0;

  bool valid() const { return position.valid() && eye_height > 0.0 && eye_height <= 100.0; }
  friend bool operator==(const Viewpoint&, const Viewpoint&) = default;
};

struct RenderConfig {
  double az_res = 0.05;  // degrees per column
  double el_res = 0.05;  // degrees per row
  double el_min = -25.0;
  double el_max = 25.0;
  double d_min = 100.0;
  double d_max = 50000.0;
  double refraction = kRefraction;
  double vis_tol = 0.2;  // peak visibility tolerance below the skyline, degrees

  int n_cols() const { return static_cast<int>(std::lround(360.0 / az_res)); }
  int n_rows() const { return static_cast<int>(std::lround((el_max - el_min) / el_res)); }
};

enum class CellKind : std::uint8_t { Sky, Terrain };

struct PanoramaCell {
  CellKind kind = CellKind::Sky;
  double distance = 0.0;  // meters, terrain only
  double altitude = 0.0;  // meters, terrain only
  GeoPoint ground;        // terrain only
};

struct PeakMark {
  Peak peak;
  double azimuth = 0.0;
  double elevation = 0.0;
  double distance = 0.0;
};

// One step of the per-column running maximum: every row whose elevation angle
// lies in (previous.elevation, elevation] sees terrain at this sample.
struct TerrainHit {
  float elevation;
  float distance;
  float altitude;
};

/// Cylindrical rendering of the DEM around a viewpoint. Column c is centered
/// on azimuth c * az_res (0 = north, clockwise); row r is centered on
/// el_max - (r + 0.5) * el_res.
struct Panorama {
  Viewpoint viewpoint;
  double eye_alt = 0.0;  // terrain + eye height
  RenderConfig cfg;
  int n_cols = 0;
  int n_rows = 0;
  std::vector<double> skyline;          // per column; NaN where no terrain was hit
  std::vector<TerrainHit> hits;         // all columns, concatenated
  std::vector<std::uint32_t> hit_start;  // n_cols + 1 offsets into `hits`
  std::vector<PeakMark> peak_marks;

  static bool no_terrain(double skyline_value) { return std::isnan(skyline_value); }

  double column_azimuth(int col) const { return col * cfg.az_res; }
  double row_elevation(int row) const { return cfg.el_max - (row + 0.5) * cfg.el_res; }

  std::span<const TerrainHit> column_hits(int col) const {
    return std::span(hits).subspan(hit_start[col], hit_start[col + 1] - hit_start[col]);
  }

  PanoramaCell cell(int col, int row) const;

  // Nearest column; the row containing `elevation`. Callers handle elevations
  // outside [el_min, el_max].
  PanoramaCell cell_at(double azimuth, double elevation) const;

  // Linear interpolation between the two neighboring columns; NaN if either is
  // the no-terrain sentinel.
  double skyline_at(double azimuth) const;

  GeoPoint ground_point(double azimuth, double distance) const;
};

Panorama render_panorama(const DemGrid& dem, const Viewpoint& vp, const RenderConfig& cfg = {});

std::vector<PeakMark> project_peaks(const Panorama& pano, std::span<const Peak> catalog);

// Debug export: SKY blue, terrain shaded by distance.
ImageBuffer panorama_image(const Panorama& pano);
// {az_res, el_min, el_max, skyline[]} with null for the no-terrain sentinel.
std::string panorama_sidecar_json(const Panorama& pano);

}  // namespace snowwatch
