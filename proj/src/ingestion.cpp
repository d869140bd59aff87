#include "snowwatch/ingestion.hpp"

#include <algorithm>
#include <regex>
#include <set>
#include <stdexcept>

#include <httplib.h>
#include <openssl/evp.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "snowwatch/exif.hpp"

namespace fs = std::filesystem;

namespace snowwatch {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string extension_of(const std::string& name) {
  auto ext = lower(fs::path(name).extension().string());
  return ext == ".jpeg" ? ".jpg" : ext;
}

std::optional<GeoPoint> geotag_of(const ExifMeta& e) {
  if (!e.lat || !e.lon) return std::nullopt;
  GeoPoint p{*e.lat, *e.lon, e.alt};
  if (!p.valid()) return std::nullopt;
  return p;
}

}  // namespace

FilterOutcome filter_photo(const MediaItem& item, const ImageBuffer& img, const DemGrid& dem,
                           const RegionFilter& region, const ClassifierModel& model) {
  FilterOutcome out;
  if (!item.geotag) {
    out.reason = kNoGeotag;
    return out;
  }
  if (!region.bbox.contains(*item.geotag)) {
    out.reason = kOutsideRegion;
    return out;
  }
  out.photographer_alt = sample_elevation(dem, *item.geotag);
  if (!out.photographer_alt) {
    out.reason = kNoElevation;
    return out;
  }
  if (*out.photographer_alt < region.min_photographer_alt) {
    out.reason = kBelowAltitude;
    return out;
  }
  if (!classify_mountain(model, img).is_mountain) {
    out.reason = kNotMountain;
    return out;
  }
  out.pass = true;
  return out;
}

bool is_image_name(const std::string& name) {
  auto ext = extension_of(name);
  return ext == ".jpg" || ext == ".png";
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr))
    throw std::runtime_error("sha256 failed");
  std::string hex;
  for (unsigned i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

// ---- filesystem

std::vector<SourceEntry> FilesystemSource::list(
    const std::function<bool(const std::string&)>& known) {
  std::error_code ec;
  if (!fs::is_directory(dir_, ec)) throw SourceUnavailable("not a directory: " + dir_.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir_, ec))
    if (e.is_regular_file() && is_image_name(e.path().filename().string())) files.push_back(e.path());
  if (ec) throw SourceUnavailable(dir_.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());

  std::vector<SourceEntry> out;
  for (const auto& path : files) {
    try {
      auto mtime = fs::last_write_time(path);
      auto identity = fmt::format("{}@{}", fs::absolute(path).lexically_normal().string(),
                                  mtime.time_since_epoch().count());
      if (known && known(identity)) continue;
      SourceEntry entry;
      entry.identity = identity;
      entry.name = path.filename().string();
      entry.bytes = read_file(path);
      entry.timestamp = std::chrono::floor<std::chrono::seconds>(
          std::chrono::file_clock::to_sys(mtime));
      fs::path side = path;
      side += ".json";
      if (fs::exists(side)) {
        auto raw = read_file(side);
        entry.sidecar = std::string(raw.begin(), raw.end());
      }
      out.push_back(std::move(entry));
    } catch (const std::exception& e) {
      spdlog::warn("source {}: skipping {}: {}", describe(), path.string(), e.what());
    }
  }
  return out;
}

// ---- http

HttpDirectorySource::HttpDirectorySource(std::string url, int timeout_s)
    : url_(std::move(url)), timeout_s_(timeout_s) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url_, m, re)) throw std::invalid_argument("not an http url: " + url_);
  origin_ = m[1];
  path_ = m[2].matched ? std::string(m[2]) : "/";
  if (path_.back() != '/') path_ += '/';
}

std::vector<SourceEntry> HttpDirectorySource::list(
    const std::function<bool(const std::string&)>& known) {
  httplib::Client cli(origin_);
  cli.set_connection_timeout(timeout_s_);
  cli.set_read_timeout(timeout_s_);
  auto index = cli.Get(path_);
  if (!index) throw SourceUnavailable(fmt::format("{}: {}", url_, httplib::to_string(index.error())));
  if (index->status != 200)
    throw SourceUnavailable(fmt::format("{}: listing returned {}", url_, index->status));

  std::vector<std::string> names;
  const auto& body = index->body;
  auto first = body.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && body[first] == '[') {
    try {
      for (const auto& v : Json::parse(body)) {
        if (v.is_string()) names.push_back(v.get<std::string>());
        else if (v.is_object() && v.contains("name")) names.push_back(v["name"].get<std::string>());
      }
    } catch (const std::exception& e) {
      throw SourceUnavailable(fmt::format("{}: bad JSON listing: {}", url_, e.what()));
    }
  } else {
    static const std::regex href(R"(href\s*=\s*["']([^"'?#]+)["'])", std::regex::icase);
    for (auto it = std::sregex_iterator(body.begin(), body.end(), href); it != std::sregex_iterator(); ++it)
      names.push_back((*it)[1]);
  }
  std::set<std::string> listed;
  for (auto& n : names) {
    if (n.rfind(path_, 0) == 0) n = n.substr(path_.size());
    if (!n.empty() && n.find('/') == std::string::npos) listed.insert(n);
  }

  std::vector<SourceEntry> out;
  for (const auto& name : listed) {
    if (!is_image_name(name)) continue;
    const std::string path = path_ + name;
    auto head = cli.Head(path);
    if (!head || head->status != 200) {
      spdlog::warn("source {}: skipping {}: {}", url_, name,
                   head ? std::to_string(head->status) : httplib::to_string(head.error()));
      continue;
    }
    std::string tag = head->get_header_value("ETag");
    if (tag.empty()) tag = head->get_header_value("Last-Modified");
    if (tag.empty()) tag = head->get_header_value("Content-Length");
    std::string identity = origin_ + path + "#" + tag;
    if (known && known(identity)) continue;
    auto res = cli.Get(path);
    if (!res || res->status != 200) {
      spdlog::warn("source {}: skipping {}: {}", url_, name,
                   res ? std::to_string(res->status) : httplib::to_string(res.error()));
      continue;
    }
    SourceEntry entry;
    entry.identity = identity;
    entry.name = name;
    entry.bytes.assign(res->body.begin(), res->body.end());
    if (listed.count(name + ".json")) {
      auto side = cli.Get(path + ".json");
      if (side && side->status == 200) entry.sidecar = side->body;
    }
    out.push_back(std::move(entry));
  }
  return out;
}

std::unique_ptr<SourceAdapter> make_source(const std::string& type, const std::string& location) {
  if (type == "directory") return std::make_unique<FilesystemSource>(location);
  if (type == "http") return std::make_unique<HttpDirectorySource>(location);
  throw std::invalid_argument("unknown source type '" + type + "'");
}

// ---- photos

MediaItem item_from_bytes(std::span<const std::uint8_t> bytes,
                          const std::optional<std::string>& sidecar,
                          std::optional<Timestamp> fallback_time) {
  std::optional<ExifMeta> side;
  if (sidecar) side = parse_sidecar(*sidecar);
  MediaItem item;
  item.kind = MediaKind::Photo;
  item.exif = read_exif(bytes, side);
  item.geotag = geotag_of(item.exif);
  item.taken_at = item.exif.datetime_original.value_or(fallback_time.value_or(now_seconds()));
  return item;
}

IngestReport ingest_source(Store& store, SourceAdapter& source, MediaSource kind,
                           const std::string& region) {
  IngestReport report;
  auto known = [&](const std::string& id) {
    bool seen = store.find_by_identity(id).has_value();
    report.known += seen;
    return seen;
  };
  for (auto& entry : source.list(known)) {
    if (store.find_by_identity(entry.identity)) {
      ++report.known;
      continue;
    }
    MediaItem item;
    try {
      item = item_from_bytes(entry.bytes, entry.sidecar, entry.timestamp);
    } catch (const SidecarError& e) {
      spdlog::warn("source {}: {} has a bad sidecar ({}), ignoring it", source.describe(), entry.name,
                   e.what());
      item = item_from_bytes(entry.bytes, std::nullopt, entry.timestamp);
    }
    item.source = kind;
    item.region = region;
    item.source_identity = entry.identity;
    item.content_hash = sha256_hex(entry.bytes);
    item = store.put_item(item, entry.bytes, extension_of(entry.name));
    report.created.push_back(item.id);
  }
  return report;
}

UploadResult ingest_upload(Store& store, std::span<const std::uint8_t> bytes,
                           const std::string& filename, const std::optional<std::string>& sidecar,
                           const std::string& region) {
  ImageBuffer img = decode_image(bytes);
  std::vector<std::uint8_t> keyed(bytes.begin(), bytes.end());
  if (sidecar) {
    keyed.push_back(0);
    keyed.insert(keyed.end(), sidecar->begin(), sidecar->end());
  }
  const std::string hash = sha256_hex(keyed);
  if (auto prior = store.find_by_hash(hash)) return {*prior, false};

  MediaItem item = item_from_bytes(bytes, sidecar, std::nullopt);
  item.source = MediaSource::Upload;
  item.region = region;
  item.content_hash = hash;
  item.width = img.width();
  item.height = img.height();
  std::string ext = extension_of(filename);
  if (!is_image_name("x" + ext)) ext = bytes.size() > 1 && bytes[0] == 0x89 ? ".png" : ".jpg";
  return {store.put_item(item, bytes, ext), true};
}

// ---- webcams

void WebcamConfig::validate() const {
  if (id.empty() || id.find_first_of("/\\ ") != std::string::npos)
    throw std::invalid_argument("webcam id must be a non-empty token");
  if (!viewpoint.valid()) throw std::invalid_argument("webcam " + id + ": invalid viewpoint");
  if (!pose.valid()) throw std::invalid_argument("webcam " + id + ": invalid pose");
  if (poll_interval < 60) throw std::invalid_argument("webcam " + id + ": poll_interval must be >= 60");
  if (source_type != "directory" && source_type != "http")
    throw std::invalid_argument("webcam " + id + ": source type must be directory or http");
  if (source.empty()) throw std::invalid_argument("webcam " + id + ": missing source");
}

WebcamConfig webcam_from_json(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("webcam config must be an object");
  WebcamConfig c;
  try {
    c.id = j.at("id").get<std::string>();
    const auto& vp = j.at("viewpoint");
    c.viewpoint.position = geo_from_json(vp);
    c.viewpoint.eye_height = vp.value("eye_height", 2.0);
    c.pose = pose_from_json(j.at("pose"));
    c.poll_interval = j.value("poll_interval", 300);
    const auto& src = j.at("source");
    c.source_type = src.value("type", "directory");
    c.source = src.value(c.source_type == "http" ? "url" : "path", "");
    for (const auto& v : j.value("expected_skyline", Json::array()))
      c.expected_skyline.push_back(v.is_null() ? std::nullopt : std::optional<int>(v.get<int>()));
    c.region = j.value("region", "");
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("webcam config: ") + e.what());
  }
  c.validate();
  return c;
}

Json to_json(const WebcamConfig& c) {
  Json vp = to_json(c.viewpoint.position);
  vp["eye_height"] = c.viewpoint.eye_height;
  Json sky = Json::array();
  for (const auto& r : c.expected_skyline) sky.push_back(r ? Json(*r) : Json(nullptr));
  return {{"id", c.id},
          {"viewpoint", vp},
          {"pose", to_json(c.pose)},
          {"poll_interval", c.poll_interval},
          {"source", {{"type", c.source_type}, {c.source_type == "http" ? "url" : "path", c.source}}},
          {"expected_skyline", sky},
          {"region", c.region}};
}

std::vector<WebcamConfig> parse_webcam_configs(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("webcam configs: ") + e.what());
  }
  if (!j.is_array()) throw std::invalid_argument("webcam configs must be a JSON array");
  std::vector<WebcamConfig> out;
  std::set<std::string> ids;
  for (const auto& c : j) {
    out.push_back(webcam_from_json(c));
    if (!ids.insert(out.back().id).second)
      throw std::invalid_argument("duplicate webcam id " + out.back().id);
  }
  return out;
}

std::vector<MediaItem> poll_webcam(Store& store, const WebcamConfig& cfg, SourceAdapter& source) {
  // Identities are namespaced so two webcams sharing a folder stay apart.
  const std::string prefix = "webcam:" + cfg.id + ":";
  std::vector<SourceEntry> entries;
  try {
    entries = source.list([&](const std::string& id) { return store.find_by_identity(prefix + id).has_value(); });
  } catch (const SourceUnavailable& e) {
    spdlog::warn("webcam {}: source unavailable, retrying next poll: {}", cfg.id, e.what());
    return {};
  }
  std::vector<MediaItem> out;
  const Timestamp fetched = now_seconds();
  for (auto& entry : entries) {
    if (store.find_by_identity(prefix + entry.identity)) continue;
    MediaItem item;
    item.kind = MediaKind::WebcamFrame;
    item.source = MediaSource::Webcam;
    item.webcam_id = cfg.id;
    item.region = cfg.region;
    item.geotag = cfg.viewpoint.position;
    std::optional<ExifMeta> side;
    if (entry.sidecar) {
      try {
        side = parse_sidecar(*entry.sidecar);
      } catch (const SidecarError& e) {
        spdlog::warn("webcam {}: ignoring sidecar of {}: {}", cfg.id, entry.name, e.what());
      }
    }
    item.exif = read_exif(entry.bytes, side);
    item.taken_at = item.exif.datetime_original.value_or(entry.timestamp.value_or(fetched));
    item.source_identity = prefix + entry.identity;
    item.content_hash = sha256_hex(entry.bytes);
    out.push_back(store.put_item(item, entry.bytes, extension_of(entry.name)));
  }
  if (!out.empty()) spdlog::info("webcam {}: {} new frame(s)", cfg.id, out.size());
  return out;
}

}  // namespace snowwatch
