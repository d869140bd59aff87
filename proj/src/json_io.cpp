#include "snowwatch/json_io.hpp"

namespace snowwatch {
namespace {

template <class T>
Json opt(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

template <class T>
std::optional<T> get_opt(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

double need_number(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number())
    throw JsonShapeError(std::string("missing numeric field '") + key + "'");
  return it->get<double>();
}

Json opt_time(const std::optional<Timestamp>& t) {
  return t ? Json(format_timestamp(*t)) : Json(nullptr);
}

std::optional<Timestamp> get_time(const Json& j, const char* key) {
  auto s = get_opt<std::string>(j, key);
  if (!s) return std::nullopt;
  return parse_timestamp(*s);
}

}  // namespace

Json to_json(const GeoPoint& p) { return {{"lat", p.lat}, {"lon", p.lon}, {"alt", opt(p.alt)}}; }

GeoPoint geo_from_json(const Json& j) {
  GeoPoint p{need_number(j, "lat"), need_number(j, "lon"), get_opt<double>(j, "alt")};
  return p;
}

Json to_json(const CameraPose& p) { return {{"yaw", p.yaw}, {"pitch", p.pitch}, {"hfov", p.hfov}}; }

CameraPose pose_from_json(const Json& j) {
  if (!j.is_object()) throw JsonShapeError("pose must be an object");
  return {need_number(j, "yaw"), need_number(j, "pitch"), need_number(j, "hfov")};
}

Json to_json(const WarpMap& w) {
  Json pts = Json::array();
  for (const auto& p : w.points) pts.push_back({p.px, p.py, p.azimuth, p.elevation});
  return {{"points", pts}};
}

WarpMap warp_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("points") || !j["points"].is_array())
    throw JsonShapeError("warp must be {points: [[px, py, az, el], ...]}");
  WarpMap w;
  for (const auto& p : j["points"]) {
    if (!p.is_array() || p.size() != 4)
      throw JsonShapeError("each warp point is [px, py, az, el]");
    for (const auto& v : p)
      if (!v.is_number()) throw JsonShapeError("warp point values must be numbers");
    w.points.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>(),
                        p[3].get<double>()});
  }
  return w;
}

Json to_json(const AlignmentResult& r) {
  return {{"yaw", r.pose.yaw},
          {"pitch", r.pose.pitch},
          {"hfov", r.pose.hfov},
          {"score", r.score},
          {"confidence", r.confidence},
          {"source", r.source == AlignmentSource::Auto ? "AUTO" : "MANUAL"},
          {"warp", r.warp ? to_json(*r.warp) : Json(nullptr)},
          {"ambiguous", r.ambiguous}};
}

AlignmentResult alignment_from_json(const Json& j) {
  AlignmentResult r;
  r.pose = {need_number(j, "yaw"), need_number(j, "pitch"), need_number(j, "hfov")};
  r.score = need_number(j, "score");
  r.confidence = need_number(j, "confidence");
  r.source = j.value("source", "AUTO") == "MANUAL" ? AlignmentSource::Manual : AlignmentSource::Auto;
  if (j.contains("warp") && !j["warp"].is_null()) r.warp = warp_from_json(j["warp"]);
  r.ambiguous = j.value("ambiguous", false);
  return r;
}

Json to_json(const ExifMeta& e) {
  return {{"lat", opt(e.lat)},
          {"lon", opt(e.lon)},
          {"alt", opt(e.alt)},
          {"datetime_original", opt_time(e.datetime_original)},
          {"focal_length_mm", opt(e.focal_length)},
          {"focal_length_35mm_mm", opt(e.focal_length_35mm)}};
}

ExifMeta exif_from_json(const Json& j) {
  ExifMeta e;
  e.lat = get_opt<double>(j, "lat");
  e.lon = get_opt<double>(j, "lon");
  e.alt = get_opt<double>(j, "alt");
  e.datetime_original = get_time(j, "datetime_original");
  e.focal_length = get_opt<double>(j, "focal_length_mm");
  e.focal_length_35mm = get_opt<double>(j, "focal_length_35mm_mm");
  return e;
}

Json to_json(const Peak& p) {
  return {{"name", p.name},
          {"lat", p.position.lat},
          {"lon", p.position.lon},
          {"alt", opt(p.position.alt)}};
}

Json to_json(const PeakMark& m) {
  Json j = to_json(m.peak);
  j["azimuth"] = m.azimuth;
  j["elevation"] = m.elevation;
  j["distance"] = m.distance;
  return j;
}

PeakMark peak_mark_from_json(const Json& j) {
  PeakMark m;
  m.peak.name = j.at("name").get<std::string>();
  m.peak.position = geo_from_json(j);
  m.azimuth = need_number(j, "azimuth");
  m.elevation = need_number(j, "elevation");
  m.distance = need_number(j, "distance");
  return m;
}

Json to_json(const MaskConfig& c) {
  return {{"alt_threshold", c.alt_threshold},
          {"d_near", c.d_near},
          {"v_min", c.v_min},
          {"s_max", c.s_max}};
}

MaskConfig mask_config_from_json(const Json& j) {
  MaskConfig c;
  c.alt_threshold = j.value("alt_threshold", c.alt_threshold);
  c.d_near = j.value("d_near", c.d_near);
  c.v_min = j.value("v_min", c.v_min);
  c.s_max = j.value("s_max", c.s_max);
  return c;
}

Json to_json(const MaskCounts& c) {
  return {{"sky", c.sky},       {"near", c.near},         {"ground", c.ground},
          {"snow", c.snow},     {"eligible", c.eligible}};
}

MaskCounts mask_counts_from_json(const Json& j) {
  MaskCounts c;
  c.sky = j.value("sky", std::int64_t{0});
  c.near = j.value("near", std::int64_t{0});
  c.ground = j.value("ground", std::int64_t{0});
  c.snow = j.value("snow", std::int64_t{0});
  c.eligible = j.value("eligible", std::int64_t{0});
  return c;
}

Json to_json(const WeatherScore& w) { return {{"visibility", w.visibility}, {"usable", w.usable}}; }

WeatherScore weather_from_json(const Json& j) {
  return {j.value("visibility", 0.0), j.value("usable", false)};
}

Json to_json(const MediaItem& m) {
  Json peaks = Json::array();
  for (const auto& p : m.peak_marks) peaks.push_back(to_json(p));
  return {
      {"id", m.id},
      {"kind", to_string(m.kind)},
      {"source", to_string(m.source)},
      {"geotag", m.geotag ? to_json(*m.geotag) : Json(nullptr)},
      {"taken_at", format_timestamp(m.taken_at)},
      {"exif", to_json(m.exif)},
      {"state", to_string(m.state)},
      {"reason", m.reason.empty() ? Json(nullptr) : Json(m.reason)},
      {"payload", m.payload},
      {"source_identity", m.source_identity},
      {"content_hash", m.content_hash},
      {"webcam_id", m.webcam_id.empty() ? Json(nullptr) : Json(m.webcam_id)},
      {"region", m.region},
      {"attempts", m.attempts},
      {"photographer_alt", opt(m.photographer_alt)},
      {"alignment", m.alignment ? to_json(*m.alignment) : Json(nullptr)},
      {"auto_alignment", m.auto_alignment ? to_json(*m.auto_alignment) : Json(nullptr)},
      {"peak_marks", peaks},
      {"weather", m.weather ? to_json(*m.weather) : Json(nullptr)},
      {"mask_params", m.mask_params ? to_json(*m.mask_params) : Json(nullptr)},
      {"mask_counts", m.mask_counts ? to_json(*m.mask_counts) : Json(nullptr)},
      {"snow_index", opt(m.snow_index)},
      {"eligible_pixels", m.eligible_pixels},
      {"width", m.width},
      {"height", m.height},
      {"created_at", format_timestamp(m.created_at)},
      {"updated_at", format_timestamp(m.updated_at)},
  };
}

MediaItem media_from_json(const Json& j) {
  MediaItem m;
  try {
    m.id = j.at("id").get<std::string>();
    m.kind = parse_media_kind(j.at("kind").get<std::string>()).value();
    m.source = parse_media_source(j.at("source").get<std::string>()).value();
    if (!j.at("geotag").is_null()) m.geotag = geo_from_json(j["geotag"]);
    m.taken_at = parse_timestamp(j.at("taken_at").get<std::string>()).value();
    m.exif = exif_from_json(j.at("exif"));
    m.state = parse_media_state(j.at("state").get<std::string>()).value();
    m.reason = j.value("reason", Json(nullptr)).is_null() ? "" : j["reason"].get<std::string>();
    m.payload = j.value("payload", "");
    m.source_identity = j.value("source_identity", "");
    m.content_hash = j.value("content_hash", "");
    m.webcam_id = j.value("webcam_id", Json(nullptr)).is_null() ? "" : j["webcam_id"].get<std::string>();
    m.region = j.value("region", "");
    m.attempts = j.value("attempts", 0);
    m.photographer_alt = get_opt<double>(j, "photographer_alt");
    if (j.contains("alignment") && !j["alignment"].is_null())
      m.alignment = alignment_from_json(j["alignment"]);
    if (j.contains("auto_alignment") && !j["auto_alignment"].is_null())
      m.auto_alignment = alignment_from_json(j["auto_alignment"]);
    for (const auto& p : j.value("peak_marks", Json::array())) m.peak_marks.push_back(peak_mark_from_json(p));
    if (j.contains("weather") && !j["weather"].is_null()) m.weather = weather_from_json(j["weather"]);
    if (j.contains("mask_params") && !j["mask_params"].is_null())
      m.mask_params = mask_config_from_json(j["mask_params"]);
    if (j.contains("mask_counts") && !j["mask_counts"].is_null())
      m.mask_counts = mask_counts_from_json(j["mask_counts"]);
    m.snow_index = get_opt<double>(j, "snow_index");
    m.eligible_pixels = j.value("eligible_pixels", std::int64_t{0});
    m.width = j.value("width", 0);
    m.height = j.value("height", 0);
    m.created_at = parse_timestamp(j.value("created_at", "1970-01-01T00:00:00Z")).value();
    m.updated_at = parse_timestamp(j.value("updated_at", "1970-01-01T00:00:00Z")).value();
  } catch (const JsonShapeError&) {
    throw;
  } catch (const std::exception& e) {
    throw JsonShapeError(std::string("malformed media document: ") + e.what());
  }
  return m;
}

}  // namespace snowwatch
