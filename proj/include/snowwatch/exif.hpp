#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

#include "snowwatch/time.hpp"

namespace snowwatch {

class SidecarError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExifMeta {
  std::optional<double> lat;
  std::optional<double> lon;
  std::optional<double> alt;
  std::optional<Timestamp> datetime_original;
  std::optional<double> focal_length;       // mm
  std::optional<double> focal_length_35mm;  // mm

  friend bool operator==(const ExifMeta&, const ExifMeta&) = default;
};

// Metadata dropped next to an image or posted with an upload; every field is optional.
//   {lat, lon, alt, taken_at, focal_length_mm, focal_length_35mm_mm}
// Throws SidecarError on text that is not a JSON object. Fields with the wrong
// type or out of range are ignored.
ExifMeta parse_sidecar(const std::string& json_text);

// GPS, DateTimeOriginal and focal lengths from a JPEG APP1 Exif segment.
// Anything missing or unreadable is left empty; never throws.
ExifMeta parse_exif(std::span<const std::uint8_t> bytes);

// Parsed values, overridden field by field by the sidecar.
ExifMeta read_exif(std::span<const std::uint8_t> bytes,
                   const std::optional<ExifMeta>& sidecar = std::nullopt);

inline constexpr double kDefaultHfov = 50.0;
inline constexpr double kCropFactor = 1.5;

// Horizontal field of view prior in degrees, clamped to [5, 120].
double hfov_prior(const ExifMeta& exif);

}  // namespace snowwatch
