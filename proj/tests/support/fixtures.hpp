#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "snowwatch/alignment.hpp"
#include "snowwatch/snowcover.hpp"
#include "snowwatch/image.hpp"
#include "snowwatch/terrain.hpp"

namespace snowwatch::testkit {

inline constexpr Rgb kSkyColor{225, 235, 250};
inline constexpr Rgb kSnowColor{190, 190, 195};
inline constexpr Rgb kGroundColor{95, 80, 60};

// Meters per degree of latitude under the equirectangular model.
inline double meters_per_degree() { return kEarthRadius * deg2rad(1.0); }

DemGrid flat_dem(double lat0, double lon0, int rows, int cols, double cell, double elevation);

// Flat ground at 0 m, 241x241 cells of 100 m latitude spacing, with one cell
// raised so it stands `relief` meters above a 2 m eye placed at the grid
// center. The tower is exactly 10 km due north of the viewpoint.
struct TowerScene {
  DemGrid dem;
  Viewpoint viewpoint;
  GeoPoint tower;
  double relief = 1000.0;
};
TowerScene tower_scene();

// Standard 200x200 fixture (1 cell ~ 30 m): a flat valley around the
// viewpoint inside a rising bowl, one 1200 m cone and one ridge.
struct StandardScene {
  DemGrid dem;
  Viewpoint viewpoint;
  GeoPoint cone_apex;  // alt = apex elevation
  std::vector<Peak> peaks;
  BBox bbox;
};
const StandardScene& standard_scene();

// The standard scene as the service sees it: rendered at the cache viewpoint.
const Panorama& standard_service_panorama();
// Upload sidecar for a standard-scene photo: focal length matching pose.hfov,
// taken 2024-02-10T09:00:00Z, geotagged at the viewpoint unless `geotag` is false.
std::string standard_sidecar(const CameraPose& pose, bool geotag = true);

// Local meters (east, north) from the south-west cell center to lat/lon.
GeoPoint local_to_geo(const DemGrid& dem, double east, double north);

// Sky, snow above `snow_alt`, bare ground below; rendered by mapping every
// pixel through `pose` into `pano`.
ImageBuffer render_scene_photo(const Panorama& pano, const CameraPose& pose, int width,
                               int height, double snow_alt = 2000.0);

ImageBuffer uniform_image(int width, int height, Rgb color);

// Minimal JPEG APP1 Exif segment builder for tests.
struct ExifFixture {
  std::optional<double> lat, lon, alt;
  std::optional<std::string> datetime_original;  // "YYYY:MM:DD HH:MM:SS"
  std::optional<double> focal_length;
  std::optional<int> focal_length_35mm;
  bool big_endian = false;
};
std::vector<std::uint8_t> jpeg_with_exif(const ImageBuffer& img, const ExifFixture& exif);

// Per-pixel reimplementation of the mask straight from the panorama's stored hits.
EnvironmentalMask brute_force_mask(const ImageBuffer& photo, const PixelMapping& m,
                                   const Panorama& pano, const MaskConfig& cfg);
// Snow over eligible pixels counted from a mask; -1 when nothing is eligible.
double oracle_snow_index(const EnvironmentalMask& mask);

std::filesystem::path temp_dir(const std::string& tag);

}  // namespace snowwatch::testkit
