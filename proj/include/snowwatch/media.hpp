#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "snowwatch/alignment.hpp"
#include "snowwatch/exif.hpp"
#include "snowwatch/geo.hpp"
#include "snowwatch/snowcover.hpp"
#include "snowwatch/terrain.hpp"
#include "snowwatch/time.hpp"
#include "snowwatch/vision.hpp"

namespace snowwatch {

enum class MediaKind { Photo, WebcamFrame };
enum class MediaSource { Crawl, Webcam, Upload };
enum class MediaState { New, FilteredOut, Aligned, Masked, Failed };

const char* to_string(MediaKind k);
const char* to_string(MediaSource s);
const char* to_string(MediaState s);
std::optional<MediaKind> parse_media_kind(std::string_view s);
std::optional<MediaSource> parse_media_source(std::string_view s);
std::optional<MediaState> parse_media_state(std::string_view s);

// NEW -> {FILTERED_OUT, ALIGNED, FAILED}, ALIGNED -> {MASKED, FAILED}, MASKED -> MASKED.
bool transition_allowed(MediaState from, MediaState to);
inline bool is_terminal(MediaState s) {
  return s == MediaState::FilteredOut || s == MediaState::Masked || s == MediaState::Failed;
}

struct MediaItem {
  std::string id;
  MediaKind kind = MediaKind::Photo;
  MediaSource source = MediaSource::Upload;
  std::optional<GeoPoint> geotag;
  Timestamp taken_at{};
  ExifMeta exif;
  MediaState state = MediaState::New;
  std::string reason;        // FILTERED_OUT / FAILED
  std::string payload;       // file name under media/
  std::string source_identity;
  std::string content_hash;  // hex SHA-256 of payload bytes (+ sidecar for uploads)
  std::string webcam_id;
  std::string region;
  int attempts = 0;

  std::optional<double> photographer_alt;  // DEM elevation at the geotag
  std::optional<AlignmentResult> alignment;       // current: manual when present
  std::optional<AlignmentResult> auto_alignment;  // kept untouched by corrections
  std::vector<PeakMark> peak_marks;
  std::optional<WeatherScore> weather;
  std::optional<MaskConfig> mask_params;
  std::optional<MaskCounts> mask_counts;
  std::optional<double> snow_index;
  std::int64_t eligible_pixels = 0;
  int width = 0;
  int height = 0;

  Timestamp created_at{};
  Timestamp updated_at{};
};

// 26-character Crockford base32, millisecond time prefix, sortable by creation.
std::string new_media_id();

}  // namespace snowwatch
