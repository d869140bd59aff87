#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "snowwatch/alignment.hpp"
#include "snowwatch/image.hpp"
#include "snowwatch/terrain.hpp"
#include "snowwatch/time.hpp"
#include "snowwatch/vision.hpp"

namespace snowwatch {

class SnowcoverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MaskClass : std::uint8_t { Sky = 0, Near = 1, Ground = 2, Snow = 3 };

const char* to_string(MaskClass c);
Rgb mask_color(MaskClass c);

struct MaskConfig {
  double alt_threshold = 1500.0;  // meters
  double d_near = 300.0;          // meters
  double v_min = 0.65;
  double s_max = 0.25;

  VisionConfig snow_thresholds() const {
    VisionConfig v;
    v.v_min = v_min;
    v.s_max = s_max;
    return v;
  }
  friend bool operator==(const MaskConfig&, const MaskConfig&) = default;
};

struct MaskCounts {
  std::int64_t sky = 0, near = 0, ground = 0, snow = 0, eligible = 0;
  std::int64_t total() const { return sky + near + ground + snow; }
  friend bool operator==(const MaskCounts&, const MaskCounts&) = default;
};

struct EnvironmentalMask {
  int width = 0;
  int height = 0;
  std::vector<MaskClass> classes;      // row-major
  std::vector<std::uint8_t> eligible;  // 1 where SNOW, or GROUND at or above alt_threshold
  MaskConfig params;

  MaskClass at(int x, int y) const { return classes[static_cast<size_t>(y) * width + x]; }
  MaskCounts counts() const;
  friend bool operator==(const EnvironmentalMask&, const EnvironmentalMask&) = default;
};

EnvironmentalMask build_mask(const ImageBuffer& photo, const PixelMapping& mapping,
                             const Panorama& pano, const MaskConfig& cfg = {});

ImageBuffer mask_image(const EnvironmentalMask& mask);

struct SnowIndexRecord {
  std::string media_id;
  Timestamp timestamp{};
  std::optional<double> snow_index;  // absent when nothing is eligible
  std::int64_t eligible_pixels = 0;
  std::string region;
};

SnowIndexRecord snow_index(const EnvironmentalMask& mask, const MaskConfig& cfg = {});

struct WebcamFrame {
  std::string media_id;
  ImageBuffer image;
  WeatherScore weather;
  Timestamp timestamp;
};

// Picks the usable frame with the highest visibility (earliest on ties) and
// returns its index record; nullopt when no frame is usable.
std::optional<SnowIndexRecord> daily_webcam_index(std::span<const WebcamFrame> frames,
                                                  const PixelMapping& mapping,
                                                  const Panorama& pano,
                                                  const MaskConfig& cfg = {});

// Index of the frame daily_webcam_index would choose.
std::optional<size_t> select_daily_frame(std::span<const WebcamFrame> frames);

}  // namespace snowwatch
