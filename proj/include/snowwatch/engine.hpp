#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <future>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <variant>
#include <vector>

#include "snowwatch/alignment.hpp"
#include "snowwatch/ingestion.hpp"
#include "snowwatch/snowcover.hpp"
#include "snowwatch/store.hpp"
#include "snowwatch/terrain.hpp"
#include "snowwatch/vision.hpp"

namespace snowwatch {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CrawlSource {
  std::string type = "directory";  // directory | http
  std::string location;
};

struct ServiceConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path dem_path;
  std::filesystem::path peaks_path;        // optional
  std::filesystem::path classifier_path;   // optional; without it every photo counts as mountain
  RegionFilter region;
  MaskConfig mask;
  VisionConfig vision;
  AlignConfig align;
  RenderConfig render;
  double eye_height = 2.0;
  std::vector<WebcamConfig> webcams;
  std::vector<CrawlSource> sources;
  int crawl_interval = 300;  // seconds
  std::string host = "127.0.0.1";
  int port = 8080;
  int workers = 2;
  int max_attempts = 3;
  std::size_t pano_cache_size = 8;
  bool fsync = true;
};

// Relative paths resolve against `base_dir`. Unknown keys are rejected so
// typos do not silently fall back to defaults.
ServiceConfig config_from_json(const Json& j, const std::filesystem::path& base_dir);
ServiceConfig load_config(const std::filesystem::path& path);
// An explicit path wins over SNOWWATCH_CONFIG; with neither, defaults.
// SNOWWATCH_DATA_DIR overrides data_dir either way.
ServiceConfig config_from_env(const std::optional<std::filesystem::path>& explicit_path);

// Viewpoints sharing a cache key share one panorama: positions rounded to
// 0.001 degrees, eye height to the centimeter. Rendering happens at the
// rounded position so results never depend on which item came first.
Viewpoint cache_viewpoint(const Viewpoint& vp);

// Peaks whose projection falls inside a photo taken at `pose`.
std::vector<PeakMark> peaks_in_frame(std::span<const PeakMark> marks, const CameraPose& pose,
                                     int width, int height);

// The pixel -> panorama angle mapping an alignment result stands for.
PixelMapping alignment_mapping(const AlignmentResult& current,
                               const std::optional<AlignmentResult>& automatic, int width,
                               int height);

struct AttributeGrid {
  int cols = 0;
  int rows = 0;
  double scale = 1.0;  // photo pixels per grid cell
  std::vector<std::uint8_t> sky;                // row-major
  std::vector<std::optional<double>> altitude;  // empty for sky and below the rendered range
  std::vector<std::optional<double>> distance;
};
inline constexpr int kMaxAttributeColumns = 256;
AttributeGrid attribute_grid(const PixelMapping& mapping, const Panorama& pano);

class ApiError : public std::runtime_error {
 public:
  ApiError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status(status), code(std::move(code)) {}
  int status;
  std::string code;
};

struct ManualCorrection {
  std::variant<CameraPose, WarpMap> value;
};

struct CorrectionResult {
  MediaItem item;
  std::optional<double> old_index;
  std::optional<double> new_index;
};

/// The processing pipeline over one store: filter, align, mask, index.
class Engine {
 public:
  Engine(ServiceConfig cfg, DemGrid dem, std::vector<Peak> peaks, ClassifierModel model);
  // Loads the DEM, peaks and classifier named by the config.
  static std::unique_ptr<Engine> open(const ServiceConfig& cfg);
  ~Engine();

  Store& store() { return store_; }
  const ServiceConfig& config() const { return cfg_; }
  const DemGrid& dem() const { return dem_; }
  const std::vector<Peak>& peaks() const { return peaks_; }

  std::shared_ptr<const Panorama> panorama(const Viewpoint& vp);
  Viewpoint item_viewpoint(const MediaItem& item) const;

  // Runs one item through every stage it still needs. Items in a terminal
  // state, or already being processed by another caller, are left alone.
  MediaState process_item(const std::string& id);
  // Processes every NEW or ALIGNED item; returns how many were touched.
  int process_pending();

  // Throws ApiError 404 / 409 / 422.
  CorrectionResult submit_manual_alignment(const std::string& id, const ManualCorrection& c);

  // Full-resolution mapping of an aligned item.
  PixelMapping item_mapping(const MediaItem& item) const;
  // Panorama skyline projected into the photo, one row per column.
  std::vector<std::optional<int>> item_skyline_rows(const MediaItem& item);

  // ---- ingestion
  IngestReport crawl_once();
  std::vector<MediaItem> poll_webcam(const std::string& webcam_id);
  const WebcamConfig* webcam(const std::string& id) const;
  // Calibrated rows for a webcam frame size; computed from the pose on first use.
  std::vector<std::optional<int>> expected_skyline(const WebcamConfig& cam, int width, int height);

  // Writes the daily index for every (webcam, UTC day) strictly before `now`
  // that has no unprocessed frames and was not aggregated yet.
  std::vector<SnowIndexRecord> aggregate_webcam_days(Timestamp now);
  std::optional<SnowIndexRecord> aggregate_webcam_day(const std::string& webcam_id,
                                                      std::chrono::sys_days day);

  // ---- background work
  void start_workers(int n);
  void stop_workers();
  void enqueue(const std::string& id);
  // Blocks until the queue is empty and no worker is busy.
  void wait_idle();

 private:
  MediaState run_stages(const std::string& id);
  MediaItem stage_new(const MediaItem& item, const ImageBuffer& img);
  MediaItem stage_mask(const MediaItem& item, const ImageBuffer& img);
  void record_failure(const std::string& id, const std::string& reason);
  void mark_day_done(const std::string& key, const std::optional<std::string>& media_id);
  std::map<std::string, Json> load_days() const;

  ServiceConfig cfg_;
  DemGrid dem_;
  std::vector<Peak> peaks_;
  ClassifierModel model_;
  Store store_;

  using CacheKey = std::tuple<long long, long long, long long>;
  std::mutex cache_mu_;
  std::map<CacheKey, std::shared_future<std::shared_ptr<const Panorama>>> cache_;
  std::list<CacheKey> cache_lru_;

  std::mutex cam_mu_;
  std::map<std::tuple<std::string, int, int>, std::vector<std::optional<int>>> expected_;

  std::mutex inflight_mu_;
  std::set<std::string> inflight_;

  std::mutex days_mu_;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::condition_variable idle_cv_;
  std::deque<std::string> queue_;
  std::set<std::string> queued_;
  int busy_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace snowwatch
