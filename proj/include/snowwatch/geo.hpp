#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>

namespace snowwatch {

inline constexpr double kEarthRadius = 6371000.0;
inline constexpr double kRefraction = 0.13;

inline constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline constexpr double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

// Wraps an angle to [0, 360).
inline double wrap360(double deg) {
  if (deg >= 0.0 && deg < 360.0) return deg;
  double w = std::fmod(deg, 360.0);
  if (w < 0.0) w += 360.0;
  if (w >= 360.0) w -= 360.0;
  return w;
}

// Wraps an angle to [-180, 180).
inline double wrap180(double deg) { return wrap360(deg + 180.0) - 180.0; }

class GeoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
  std::optional<double> alt;

  bool valid() const {
    if (!std::isfinite(lat) || !std::isfinite(lon)) return false;
    if (lat < -90.0 || lat > 90.0 || lon < -180.0 || lon >= 180.0) return false;
    if (alt && (!std::isfinite(*alt) || *alt < -500.0 || *alt > 9000.0)) return false;
    return true;
  }

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

struct BBox {
  double lat_min = -90.0;
  double lat_max = 90.0;
  double lon_min = -180.0;
  double lon_max = 180.0;

  bool valid() const { return lat_min < lat_max && lon_min < lon_max; }
  bool contains(double lat, double lon) const {
    return lat >= lat_min && lat <= lat_max && lon >= lon_min && lon <= lon_max;
  }
  bool contains(const GeoPoint& p) const { return contains(p.lat, p.lon); }

  friend bool operator==(const BBox&, const BBox&) = default;
};

// Parses "lat_min,lat_max,lon_min,lon_max".
BBox parse_bbox(const std::string& text);

// Local equirectangular offset in meters (east, north) from `from` to `to`.
struct LocalOffset {
  double east = 0.0;
  double north = 0.0;
  double distance() const { return std::hypot(east, north); }
  // Clockwise from north, [0, 360).
  double azimuth() const { return wrap360(rad2deg(std::atan2(east, north))); }
};

inline LocalOffset local_offset(double lat0, double lon0, double lat, double lon) {
  return {kEarthRadius * deg2rad(lon - lon0) * std::cos(deg2rad(lat0)),
          kEarthRadius * deg2rad(lat - lat0)};
}

// Curvature drop reduced by refraction for a ground distance in meters.
inline double curvature_drop(double distance, double refraction = kRefraction) {
  return distance * distance * (1.0 - refraction) / (2.0 * kEarthRadius);
}

// Apparent elevation angle in degrees of a target seen from an eye.
inline double apparent_elevation(double target_alt, double eye_alt, double distance,
                                 double refraction = kRefraction) {
  return rad2deg(std::atan2(target_alt - eye_alt - curvature_drop(distance, refraction),
                            distance));
}

}  // namespace snowwatch
