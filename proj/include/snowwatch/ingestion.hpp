#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "snowwatch/alignment.hpp"
#include "snowwatch/json_io.hpp"
#include "snowwatch/store.hpp"
#include "snowwatch/terrain.hpp"
#include "snowwatch/vision.hpp"

namespace snowwatch {

struct RegionFilter {
  std::string name = "default";
  BBox bbox;
  double min_photographer_alt = 500.0;  // meters, DEM elevation at the geotag

  bool valid() const { return bbox.valid() && std::isfinite(min_photographer_alt); }
};

// Reasons, in the order the rules run.
inline constexpr const char* kNoGeotag = "no geotag";
inline constexpr const char* kOutsideRegion = "outside region";
inline constexpr const char* kNoElevation = "no elevation";
inline constexpr const char* kBelowAltitude = "below altitude threshold";
inline constexpr const char* kNotMountain = "not mountain";

struct FilterOutcome {
  bool pass = false;
  std::string reason;                     // empty on pass
  std::optional<double> photographer_alt;  // set once the DEM was sampled
};

FilterOutcome filter_photo(const MediaItem& item, const ImageBuffer& img, const DemGrid& dem,
                           const RegionFilter& region, const ClassifierModel& model);

// ---- sources

class SourceUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SourceEntry {
  std::string identity;  // dedup key, stable while the entry is unchanged
  std::string name;      // file name, used for the extension
  std::vector<std::uint8_t> bytes;
  std::optional<Timestamp> timestamp;
  std::optional<std::string> sidecar;  // raw JSON text
};

class SourceAdapter {
 public:
  virtual ~SourceAdapter() = default;
  // Entries whose identity `known` accepts are not fetched. Throws
  // SourceUnavailable when the listing itself fails; a bad entry is skipped.
  virtual std::vector<SourceEntry> list(const std::function<bool(const std::string&)>& known) = 0;
  virtual std::string describe() const = 0;
};

// Image files in one directory; `<file>.json` next to an image is its sidecar.
// Identity is path@mtime, the timestamp is the mtime.
class FilesystemSource : public SourceAdapter {
 public:
  explicit FilesystemSource(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::vector<SourceEntry> list(const std::function<bool(const std::string&)>& known) override;
  std::string describe() const override { return dir_.string(); }

 private:
  std::filesystem::path dir_;
};

// A directory index served over HTTP: either an HTML page of links or a JSON
// array of file names. Identity is URL#ETag.
class HttpDirectorySource : public SourceAdapter {
 public:
  explicit HttpDirectorySource(std::string url, int timeout_s = 10);
  std::vector<SourceEntry> list(const std::function<bool(const std::string&)>& known) override;
  std::string describe() const override { return url_; }

 private:
  std::string url_;
  std::string origin_;  // scheme://host:port
  std::string path_;    // directory path, ends with '/'
  int timeout_s_;
};

std::unique_ptr<SourceAdapter> make_source(const std::string& type, const std::string& location);

bool is_image_name(const std::string& name);
std::string sha256_hex(std::span<const std::uint8_t> bytes);

// ---- photo ingestion

struct IngestReport {
  std::vector<std::string> created;  // new item ids
  int known = 0;                     // identities already in the store
};

// Stores every unseen entry as a NEW item; geotag and time come from EXIF and
// the sidecar, falling back to the entry time and then the clock.
IngestReport ingest_source(Store& store, SourceAdapter& source, MediaSource kind,
                           const std::string& region);

MediaItem item_from_bytes(std::span<const std::uint8_t> bytes,
                          const std::optional<std::string>& sidecar,
                          std::optional<Timestamp> fallback_time);

struct UploadResult {
  MediaItem item;
  bool created = false;  // false: identical bytes and sidecar were uploaded before
};

// Throws ImageError when the bytes are not a decodable image and SidecarError
// for a malformed sidecar.
UploadResult ingest_upload(Store& store, std::span<const std::uint8_t> bytes,
                           const std::string& filename, const std::optional<std::string>& sidecar,
                           const std::string& region);

// ---- webcams

struct WebcamConfig {
  std::string id;
  Viewpoint viewpoint;
  CameraPose pose;
  int poll_interval = 300;  // seconds
  std::string source_type = "directory";  // directory | http
  std::string source;                     // path or URL
  std::vector<std::optional<int>> expected_skyline;  // empty until calibrated
  std::string region;

  // Throws std::invalid_argument with the first problem.
  void validate() const;
};

WebcamConfig webcam_from_json(const Json& j);
Json to_json(const WebcamConfig& c);
// A JSON array of configs.
std::vector<WebcamConfig> parse_webcam_configs(const std::string& text);

// New frames become NEW WEBCAM_FRAME items at the webcam's viewpoint. An
// unreachable source yields no items and is logged.
std::vector<MediaItem> poll_webcam(Store& store, const WebcamConfig& cfg, SourceAdapter& source);

}  // namespace snowwatch
