#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "snowwatch/alignment.hpp"
#include "snowwatch/exif.hpp"
#include "snowwatch/media.hpp"
#include "snowwatch/snowcover.hpp"
#include "snowwatch/terrain.hpp"

// JSON shapes shared by the store, the HTTP API and the CLI.
namespace snowwatch {

using Json = nlohmann::json;

class JsonShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Json to_json(const GeoPoint& p);
GeoPoint geo_from_json(const Json& j);

Json to_json(const CameraPose& p);
CameraPose pose_from_json(const Json& j);

// {points: [[px, py, az, el], ...]}
Json to_json(const WarpMap& w);
WarpMap warp_from_json(const Json& j);

// {yaw, pitch, hfov, score, confidence, source, warp, ambiguous}
Json to_json(const AlignmentResult& r);
AlignmentResult alignment_from_json(const Json& j);

Json to_json(const ExifMeta& e);
ExifMeta exif_from_json(const Json& j);

Json to_json(const PeakMark& m);
PeakMark peak_mark_from_json(const Json& j);

Json to_json(const Peak& p);

Json to_json(const MaskConfig& c);
MaskConfig mask_config_from_json(const Json& j);

Json to_json(const MaskCounts& c);
MaskCounts mask_counts_from_json(const Json& j);

Json to_json(const WeatherScore& w);
WeatherScore weather_from_json(const Json& j);

Json to_json(const MediaItem& item);
MediaItem media_from_json(const Json& j);

}  // namespace snowwatch
