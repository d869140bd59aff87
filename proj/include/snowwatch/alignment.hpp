#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "snowwatch/terrain.hpp"
#include "snowwatch/vision.hpp"

namespace snowwatch {

class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised for malformed manual corrections.
class WarpError : public AlignmentError {
 public:
  using AlignmentError::AlignmentError;
};

struct CameraPose {
  double yaw = 0.0;    // azimuth of the image center, [0, 360)
  double pitch = 0.0;  // elevation of the image center, [-20, 20]
  double hfov = 50.0;  // (5, 120]

  bool valid() const {
    return std::isfinite(yaw) && yaw >= 0.0 && yaw < 360.0 && pitch >= -20.0 && pitch <= 20.0 &&
           hfov > 5.0 && hfov <= 120.0;
  }
  double vfov(int width, int height) const { return hfov * height / width; }

  friend bool operator==(const CameraPose&, const CameraPose&) = default;
};

struct WarpPoint {
  double px = 0.0;  // photo column
  double py = 0.0;  // photo row
  double azimuth = 0.0;
  double elevation = 0.0;
  friend bool operator==(const WarpPoint&, const WarpPoint&) = default;
};

struct WarpMap {
  std::vector<WarpPoint> points;
  friend bool operator==(const WarpMap&, const WarpMap&) = default;
};

// Throws WarpError unless: >= 2 points, strictly increasing columns inside the
// raster, azimuths monotone over the span, angles inside the panorama bounds.
void validate_warp(const WarpMap& warp, int width, int height, const RenderConfig& bounds = {});

enum class AlignmentSource { Auto, Manual };

inline constexpr double kConfidenceScale = 0.5;  // degrees

inline double confidence_from_score(double score) { return std::exp(-score / kConfidenceScale); }

struct AlignmentResult {
  CameraPose pose;
  double score = 0.0;  // mean absolute skyline error, degrees
  double confidence = 1.0;
  AlignmentSource source = AlignmentSource::Auto;
  std::optional<WarpMap> warp;
  bool ambiguous = false;  // best and median grid scores nearly equal
};

struct SkylineAngle {
  int column = 0;
  double azimuth = 0.0;
  double elevation = 0.0;
};

// A profile row is the last sky row; the edge itself lies half a row lower.
inline constexpr double kEdgeOffset = 0.5;

// Pinhole mapping of the defined profile columns to panorama angles.
std::vector<SkylineAngle> photo_skyline_angles(const SkylineProfile& profile,
                                               const CameraPose& pose, int width, int height);

double pixel_azimuth(const CameraPose& pose, double column, int width);
double pixel_elevation(const CameraPose& pose, double row, int width, int height);

struct AlignConfig {
  double yaw_step = 0.0;  // 0: twice the panorama azimuth resolution
  double pitch_min = -10.0;
  double pitch_max = 10.0;
  double pitch_step = 0.5;
  double hfov_spread = 0.1;  // candidates prior * (1 -/+ spread)
  double default_hfov = 50.0;
  double refine_min_step = 0.01;
  int refine_rounds = 3;
  int refine_starts = 5;           // grid cells refined per fov, best first
  double start_separation = 1.0;   // minimum yaw gap between refined starts, degrees
  double min_usable_fraction = 0.2;
  double ambiguity_gap = 0.02;
};

// Mean |photo elevation - panorama skyline| over usable columns; nullopt when
// fewer than min_usable_fraction of the photo columns are usable.
std::optional<double> skyline_score(const SkylineProfile& profile, const Panorama& pano,
                                    const CameraPose& pose, double min_usable_fraction = 0.2);

AlignmentResult estimate_pose(const SkylineProfile& profile, const Panorama& pano,
                              const std::optional<CameraPose>& prior = std::nullopt,
                              const AlignConfig& cfg = {});

// Expected boundary rows for a camera at `pose` looking at `pano`: the inverse
// of photo_skyline_angles. Rows falling outside the frame are nullopt.
std::vector<std::optional<int>> expected_skyline_rows(const Panorama& pano, const CameraPose& pose,
                                                      int width, int height);

struct PixelMapping {
  int width = 0;
  int height = 0;
  std::vector<double> azimuth;    // row-major
  std::vector<double> elevation;  // row-major

  size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
  friend bool operator==(const PixelMapping&, const PixelMapping&) = default;
};

PixelMapping build_mapping(const CameraPose& pose, int width, int height);

// Piecewise-linear per-column offsets between control points, held constant
// outside the control span.
PixelMapping apply_warp(const PixelMapping& mapping, const WarpMap& warp);

}  // namespace snowwatch
