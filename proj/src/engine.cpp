#include "snowwatch/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "snowwatch/exif.hpp"
#include "snowwatch/json_io.hpp"

namespace fs = std::filesystem;

namespace snowwatch {
namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void reject_unknown(const Json& j, std::initializer_list<const char*> keys, const char* where) {
  for (const auto& [k, v] : j.items())
    if (std::none_of(keys.begin(), keys.end(), [&](const char* x) { return k == x; }))
      throw ConfigError(fmt::format("{}: unknown key '{}'", where, k));
}

std::vector<MediaItem> query_all(const Store& store, MediaQuery q) {
  std::vector<MediaItem> out;
  q.limit = kMaxQueryLimit;
  for (q.offset = 0;; q.offset += kMaxQueryLimit) {
    auto page = store.query(q);
    out.insert(out.end(), page.items.begin(), page.items.end());
    if (page.items.size() < static_cast<size_t>(kMaxQueryLimit)) break;
  }
  return out;
}

// Mean |photo skyline elevation - panorama skyline| through a mapping.
std::optional<double> mapping_score(const SkylineProfile& profile, const PixelMapping& mapping,
                                    const Panorama& pano, double min_fraction) {
  double sum = 0.0;
  int n = 0;
  for (int x = 0; x < profile.width; ++x) {
    if (!profile.rows[x]) continue;
    const int y = *profile.rows[x];
    const size_t i = mapping.index(x, y);
    // the edge sits between the last sky row and the one below it
    const size_t j = y + 1 < mapping.height ? mapping.index(x, y + 1) : i;
    double sky = pano.skyline_at(mapping.azimuth[i]);
    if (std::isnan(sky)) continue;
    sum += std::abs(0.5 * (mapping.elevation[i] + mapping.elevation[j]) - sky);
    ++n;
  }
  if (n == 0 || n < min_fraction * profile.width) return std::nullopt;
  return sum / n;
}

std::string day_key(const std::string& cam, std::chrono::sys_days day) {
  return cam + "|" + format_date(Timestamp(day));
}

}  // namespace

// ---- config

ServiceConfig config_from_json(const Json& j, const fs::path& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j,
                 {"data_dir", "dem", "peaks", "classifier", "region", "thresholds", "webcams",
                  "sources", "crawl_interval", "host", "port", "workers", "max_attempts",
                  "pano_cache_size", "fsync"},
                 "config");
  ServiceConfig c;
  try {
    if (j.contains("data_dir")) c.data_dir = resolve(base, j["data_dir"].get<std::string>());
    if (j.contains("dem")) c.dem_path = resolve(base, j["dem"].get<std::string>());
    if (j.contains("peaks")) c.peaks_path = resolve(base, j["peaks"].get<std::string>());
    if (j.contains("classifier")) c.classifier_path = resolve(base, j["classifier"].get<std::string>());
    if (j.contains("region")) {
      const auto& r = j["region"];
      reject_unknown(r, {"name", "bbox", "min_photographer_alt"}, "region");
      c.region.name = r.value("name", c.region.name);
      if (r.contains("bbox")) {
        const auto& b = r["bbox"];
        c.region.bbox = b.is_string() ? parse_bbox(b.get<std::string>())
                                      : BBox{b.at(0).get<double>(), b.at(1).get<double>(),
                                             b.at(2).get<double>(), b.at(3).get<double>()};
      }
      c.region.min_photographer_alt = r.value("min_photographer_alt", c.region.min_photographer_alt);
      if (!c.region.valid()) throw ConfigError("region: invalid bbox");
    }
    if (j.contains("thresholds")) {
      const auto& t = j["thresholds"];
      reject_unknown(t,
                     {"alt_threshold", "d_near", "v_min", "s_max", "g_min", "b_min", "tol_px",
                      "weather_threshold", "eye_height", "ambiguity_gap"},
                     "thresholds");
      c.mask.alt_threshold = t.value("alt_threshold", c.mask.alt_threshold);
      c.mask.d_near = t.value("d_near", c.mask.d_near);
      c.mask.v_min = t.value("v_min", c.mask.v_min);
      c.mask.s_max = t.value("s_max", c.mask.s_max);
      c.vision.v_min = c.mask.v_min;
      c.vision.s_max = c.mask.s_max;
      c.vision.g_min = t.value("g_min", c.vision.g_min);
      c.vision.b_min = t.value("b_min", c.vision.b_min);
      c.vision.tol_px = t.value("tol_px", c.vision.tol_px);
      c.vision.weather_threshold = t.value("weather_threshold", c.vision.weather_threshold);
      c.eye_height = t.value("eye_height", c.eye_height);
      c.align.ambiguity_gap = t.value("ambiguity_gap", c.align.ambiguity_gap);
    }
    if (j.contains("webcams")) {
      const auto& w = j["webcams"];
      Json arr = w.is_string() ? Json::parse(read_text(resolve(base, w.get<std::string>()))) : w;
      c.webcams = parse_webcam_configs(arr.dump());
      for (auto& cam : c.webcams)
        if (cam.source_type == "directory") cam.source = resolve(base, cam.source).string();
    }
    for (const auto& s : j.value("sources", Json::array())) {
      CrawlSource src;
      src.type = s.value("type", "directory");
      if (src.type == "directory") src.location = resolve(base, s.at("path").get<std::string>()).string();
      else if (src.type == "http") src.location = s.at("url").get<std::string>();
      else throw ConfigError("source type must be directory or http");
      c.sources.push_back(src);
    }
    c.crawl_interval = j.value("crawl_interval", c.crawl_interval);
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.workers = j.value("workers", c.workers);
    c.max_attempts = j.value("max_attempts", c.max_attempts);
    c.pano_cache_size = j.value("pano_cache_size", c.pano_cache_size);
    c.fsync = j.value("fsync", c.fsync);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.port < 0 || c.port > 65535) throw ConfigError("port out of range");
  if (c.workers < 1 || c.workers > 64) throw ConfigError("workers must be in [1, 64]");
  if (c.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  if (c.crawl_interval < 60) throw ConfigError("crawl_interval must be >= 60");
  if (c.pano_cache_size < 1) throw ConfigError("pano_cache_size must be >= 1");
  return c;
}

ServiceConfig load_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, fs::absolute(path).parent_path());
}

ServiceConfig config_from_env(const std::optional<fs::path>& explicit_path) {
  ServiceConfig c;
  if (explicit_path) c = load_config(*explicit_path);
  else if (const char* env = std::getenv("SNOWWATCH_CONFIG"); env && *env) c = load_config(env);
  if (const char* env = std::getenv("SNOWWATCH_DATA_DIR"); env && *env) c.data_dir = env;
  return c;
}

// ---- helpers

Viewpoint cache_viewpoint(const Viewpoint& vp) {
  Viewpoint out = vp;
  out.position.lat = std::round(vp.position.lat * 1000.0) / 1000.0;
  out.position.lon = std::round(vp.position.lon * 1000.0) / 1000.0;
  out.position.alt = std::nullopt;
  out.eye_height = std::round(vp.eye_height * 100.0) / 100.0;
  return out;
}

std::vector<PeakMark> peaks_in_frame(std::span<const PeakMark> marks, const CameraPose& pose,
                                     int width, int height) {
  std::vector<PeakMark> out;
  const double th = std::tan(deg2rad(pose.hfov / 2));
  const double tv = std::tan(deg2rad(pose.vfov(width, height) / 2));
  for (const auto& m : marks) {
    double dx = wrap180(m.azimuth - pose.yaw);
    if (std::abs(dx) >= 90.0) continue;
    double col = width / 2.0 * (1.0 + std::tan(deg2rad(dx)) / th);
    double row = height / 2.0 * (1.0 - std::tan(deg2rad(m.elevation - pose.pitch)) / tv);
    if (col >= 0 && col < width && row >= 0 && row < height) out.push_back(m);
  }
  return out;
}

PixelMapping alignment_mapping(const AlignmentResult& current,
                               const std::optional<AlignmentResult>& automatic, int width,
                               int height) {
  if (!current.warp) return build_mapping(current.pose, width, height);
  const CameraPose& base = automatic ? automatic->pose : current.pose;
  return apply_warp(build_mapping(base, width, height), *current.warp);
}

AttributeGrid attribute_grid(const PixelMapping& mapping, const Panorama& pano) {
  AttributeGrid g;
  g.cols = std::min(mapping.width, kMaxAttributeColumns);
  g.scale = static_cast<double>(mapping.width) / g.cols;
  g.rows = std::max(1, static_cast<int>(std::lround(mapping.height / g.scale)));
  const size_t n = static_cast<size_t>(g.cols) * g.rows;
  g.sky.assign(n, 0);
  g.altitude.assign(n, std::nullopt);
  g.distance.assign(n, std::nullopt);
  for (int gy = 0; gy < g.rows; ++gy) {
    int y = std::min(mapping.height - 1, static_cast<int>((gy + 0.5) * g.scale));
    for (int gx = 0; gx < g.cols; ++gx) {
      int x = std::min(mapping.width - 1, static_cast<int>((gx + 0.5) * g.scale));
      const size_t i = mapping.index(x, y), k = static_cast<size_t>(gy) * g.cols + gx;
      const double el = mapping.elevation[i];
      if (el > pano.cfg.el_max) {
        g.sky[k] = 1;
        continue;
      }
      if (el < pano.cfg.el_min) continue;
      PanoramaCell cell = pano.cell_at(mapping.azimuth[i], el);
      if (cell.kind == CellKind::Sky) {
        g.sky[k] = 1;
        continue;
      }
      g.altitude[k] = cell.altitude;
      g.distance[k] = cell.distance;
    }
  }
  return g;
}

// ---- engine

Engine::Engine(ServiceConfig cfg, DemGrid dem, std::vector<Peak> peaks, ClassifierModel model)
    : cfg_(std::move(cfg)),
      dem_(std::move(dem)),
      peaks_(std::move(peaks)),
      model_(std::move(model)),
      store_(cfg_.data_dir, StoreOptions{cfg_.fsync}) {}

std::unique_ptr<Engine> Engine::open(const ServiceConfig& cfg) {
  if (cfg.dem_path.empty()) throw ConfigError("config names no DEM");
  DemGrid dem = load_dem(cfg.dem_path);
  std::vector<Peak> peaks;
  if (!cfg.peaks_path.empty()) peaks = load_peaks(cfg.peaks_path);
  ClassifierModel model = ClassifierModel::bias_only(1.0);
  if (!cfg.classifier_path.empty()) model = ClassifierModel::from_json(read_text(cfg.classifier_path));
  else spdlog::info("no classifier configured: every photo passes the mountain check");
  return std::make_unique<Engine>(cfg, std::move(dem), std::move(peaks), std::move(model));
}

Engine::~Engine() { stop_workers(); }

std::shared_ptr<const Panorama> Engine::panorama(const Viewpoint& vp) {
  const Viewpoint key_vp = cache_viewpoint(vp);
  const CacheKey key{std::llround(key_vp.position.lat * 1000.0), std::llround(key_vp.position.lon * 1000.0),
                     std::llround(key_vp.eye_height * 100.0)};
  std::shared_future<std::shared_ptr<const Panorama>> fut;
  std::promise<std::shared_ptr<const Panorama>> promise;
  bool render = false;
  {
    std::lock_guard lock(cache_mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) {
      fut = it->second;
      cache_lru_.remove(key);
      cache_lru_.push_front(key);
    } else {
      fut = promise.get_future().share();
      cache_[key] = fut;
      cache_lru_.push_front(key);
      render = true;
      while (cache_lru_.size() > cfg_.pano_cache_size) {
        cache_.erase(cache_lru_.back());
        cache_lru_.pop_back();
      }
    }
  }
  if (render) {
    try {
      promise.set_value(std::make_shared<const Panorama>(render_panorama(dem_, key_vp, cfg_.render)));
    } catch (...) {
      {
        std::lock_guard lock(cache_mu_);
        cache_.erase(key);
        cache_lru_.remove(key);
      }
      promise.set_exception(std::current_exception());
    }
  }
  return fut.get();
}

Viewpoint Engine::item_viewpoint(const MediaItem& item) const {
  if (item.kind == MediaKind::WebcamFrame)
    if (const auto* cam = webcam(item.webcam_id)) return cam->viewpoint;
  if (!item.geotag) throw std::runtime_error("item has no geotag");
  return Viewpoint{*item.geotag, cfg_.eye_height};
}

const WebcamConfig* Engine::webcam(const std::string& id) const {
  for (const auto& c : cfg_.webcams)
    if (c.id == id) return &c;
  return nullptr;
}

std::vector<std::optional<int>> Engine::expected_skyline(const WebcamConfig& cam, int width,
                                                         int height) {
  if (!cam.expected_skyline.empty()) return cam.expected_skyline;
  std::tuple<std::string, int, int> key{cam.id, width, height};
  {
    std::lock_guard lock(cam_mu_);
    if (auto it = expected_.find(key); it != expected_.end()) return it->second;
  }
  auto rows = expected_skyline_rows(*panorama(cam.viewpoint), cam.pose, width, height);
  std::lock_guard lock(cam_mu_);
  return expected_.emplace(key, std::move(rows)).first->second;
}

PixelMapping Engine::item_mapping(const MediaItem& item) const {
  if (!item.alignment) throw std::runtime_error("item is not aligned");
  return alignment_mapping(*item.alignment, item.auto_alignment, item.width, item.height);
}

std::vector<std::optional<int>> Engine::item_skyline_rows(const MediaItem& item) {
  if (!item.alignment) throw std::runtime_error("item is not aligned");
  auto pano = panorama(item_viewpoint(item));
  if (!item.alignment->warp) return expected_skyline_rows(*pano, item.alignment->pose, item.width, item.height);
  // With a warp, walk each column down its mapped elevations to the skyline.
  PixelMapping m = item_mapping(item);
  std::vector<std::optional<int>> rows(item.width);
  for (int x = 0; x < item.width; ++x) {
    for (int y = 0; y < item.height; ++y) {
      const size_t i = m.index(x, y);
      double sky = pano->skyline_at(m.azimuth[i]);
      if (std::isnan(sky)) break;
      if (m.elevation[i] <= sky) {
        if (y > 0) rows[x] = y - 1;
        break;
      }
    }
  }
  return rows;
}

MediaState Engine::process_item(const std::string& id) {
  {
    std::lock_guard lock(inflight_mu_);
    if (!inflight_.insert(id).second) {
      auto item = store_.get_item(id);
      return item ? item->state : MediaState::Failed;
    }
  }
  struct Release {
    Engine* e;
    std::string id;
    ~Release() {
      std::lock_guard lock(e->inflight_mu_);
      e->inflight_.erase(id);
    }
  } release{this, id};
  return run_stages(id);
}

MediaState Engine::run_stages(const std::string& id) {
  for (;;) {
    auto item = store_.get_item(id);
    if (!item) throw NotFoundError("unknown media id " + id);
    if (item->state != MediaState::New && item->state != MediaState::Aligned) return item->state;
    try {
      ImageBuffer img = decode_image(read_file(store_.media_path(*item)));
      if (item->state == MediaState::New) stage_new(*item, img);
      else stage_mask(*item, img);
    } catch (const StateConflictError&) {
      continue;  // someone else moved it; look again
    } catch (const std::exception& e) {
      record_failure(id, e.what());
    }
  }
}

void Engine::record_failure(const std::string& id, const std::string& reason) {
  auto item = store_.update_item(id, [](MediaItem& m) { ++m.attempts; });
  spdlog::warn("item {}: attempt {} failed: {}", id, item.attempts, reason);
  if (item.attempts < cfg_.max_attempts) return;
  try {
    store_.transition_state(id, item.state, MediaState::Failed,
                            [&](MediaItem& m) { m.reason = reason; });
  } catch (const StateConflictError&) {
  }
}

MediaItem Engine::stage_new(const MediaItem& item, const ImageBuffer& img) {
  if (item.kind == MediaKind::Photo) {
    FilterOutcome f = filter_photo(item, img, dem_, cfg_.region, model_);
    if (!f.pass) {
      return store_.transition_state(item.id, MediaState::New, MediaState::FilteredOut, [&](MediaItem& m) {
        m.reason = f.reason;
        m.photographer_alt = f.photographer_alt;
        m.width = img.width();
        m.height = img.height();
      });
    }
    auto pano = panorama(item_viewpoint(item));
    SkylineProfile profile = extract_skyline(img, cfg_.vision);
    CameraPose prior{0.0, 0.0, hfov_prior(item.exif)};
    AlignmentResult result = estimate_pose(profile, *pano, prior, cfg_.align);
    auto marks = peaks_in_frame(project_peaks(*pano, peaks_), result.pose, img.width(), img.height());
    return store_.transition_state(item.id, MediaState::New, MediaState::Aligned, [&](MediaItem& m) {
      m.photographer_alt = f.photographer_alt;
      m.alignment = result;
      m.auto_alignment = result;
      m.peak_marks = marks;
      m.width = img.width();
      m.height = img.height();
      m.attempts = 0;
    });
  }

  const WebcamConfig* cam = webcam(item.webcam_id);
  if (!cam) throw std::runtime_error("webcam '" + item.webcam_id + "' is not configured");
  WeatherScore weather = weather_score(img, expected_skyline(*cam, img.width(), img.height()), cfg_.vision);
  auto pano = panorama(cam->viewpoint);
  AlignmentResult fixed;
  fixed.pose = cam->pose;
  fixed.source = AlignmentSource::Manual;  // calibrated once by an operator
  auto marks = peaks_in_frame(project_peaks(*pano, peaks_), cam->pose, img.width(), img.height());
  return store_.transition_state(item.id, MediaState::New, MediaState::Aligned, [&](MediaItem& m) {
    m.weather = weather;
    m.alignment = fixed;
    m.peak_marks = marks;
    m.photographer_alt = sample_elevation(dem_, cam->viewpoint.position);
    m.width = img.width();
    m.height = img.height();
    m.attempts = 0;
  });
}

MediaItem Engine::stage_mask(const MediaItem& item, const ImageBuffer& img) {
  if (img.width() != item.width || img.height() != item.height)
    throw std::runtime_error("stored image size changed");
  auto pano = panorama(item_viewpoint(item));
  EnvironmentalMask mask = build_mask(img, item_mapping(item), *pano, cfg_.mask);
  SnowIndexRecord rec = snow_index(mask, cfg_.mask);
  const MaskCounts counts = mask.counts();
  store_.write_mask(item.id, encode_png(mask_image(mask)));
  write_file_atomic(fs::path(store_.mask_path(item.id)).replace_extension(".json"),
                    Json{{"params", to_json(cfg_.mask)}, {"counts", to_json(counts)}}.dump(2));
  MediaItem done = store_.transition_state(item.id, item.state, MediaState::Masked, [&](MediaItem& m) {
    m.mask_params = cfg_.mask;
    m.mask_counts = counts;
    m.snow_index = rec.snow_index;
    m.eligible_pixels = rec.eligible_pixels;
    m.attempts = 0;
  });
  // Webcam frames only reach the index through the daily aggregation.
  if (done.kind == MediaKind::Photo) {
    rec.media_id = done.id;
    rec.timestamp = done.taken_at;
    rec.region = done.region;
    store_.append_snow_index(rec);
  }
  return done;
}

int Engine::process_pending() {
  int n = 0;
  for (MediaState s : {MediaState::New, MediaState::Aligned}) {
    MediaQuery q;
    q.state = s;
    for (const auto& item : query_all(store_, q)) {
      process_item(item.id);
      ++n;
    }
  }
  return n;
}

CorrectionResult Engine::submit_manual_alignment(const std::string& id, const ManualCorrection& c) {
  auto found = store_.get_item(id);
  if (!found) throw ApiError(404, "not_found", "unknown media id " + id);
  MediaItem item = *found;
  if (item.state != MediaState::Aligned && item.state != MediaState::Masked)
    throw ApiError(409, "not_aligned", fmt::format("item is {}", to_string(item.state)));

  ImageBuffer img = decode_image(read_file(store_.media_path(item)));
  auto pano = panorama(item_viewpoint(item));
  AlignmentResult manual;
  manual.source = AlignmentSource::Manual;
  if (const auto* pose = std::get_if<CameraPose>(&c.value)) {
    if (!pose->valid())
      throw ApiError(422, "pose_invalid", "pose needs yaw in [0, 360), pitch in [-20, 20], hfov in (5, 120]");
    manual.pose = *pose;
  } else {
    const auto& warp = std::get<WarpMap>(c.value);
    try {
      validate_warp(warp, img.width(), img.height(), pano->cfg);
    } catch (const WarpError& e) {
      throw ApiError(422, "warp_invalid", e.what());
    }
    manual.pose = (item.auto_alignment ? item.auto_alignment : item.alignment)->pose;
    manual.warp = warp;
  }
  PixelMapping mapping = alignment_mapping(manual, item.auto_alignment, img.width(), img.height());
  auto score = mapping_score(extract_skyline(img, cfg_.vision), mapping, *pano, cfg_.align.min_usable_fraction);
  manual.score = score.value_or(0.0);
  manual.confidence = score ? confidence_from_score(*score) : 0.0;

  EnvironmentalMask mask = build_mask(img, mapping, *pano, cfg_.mask);
  SnowIndexRecord rec = snow_index(mask, cfg_.mask);
  const MaskCounts counts = mask.counts();
  auto marks = peaks_in_frame(project_peaks(*pano, peaks_), manual.pose, img.width(), img.height());

  CorrectionResult out;
  out.old_index = item.state == MediaState::Masked ? item.snow_index : std::nullopt;
  store_.write_mask(id, encode_png(mask_image(mask)));
  write_file_atomic(fs::path(store_.mask_path(id)).replace_extension(".json"),
                    Json{{"params", to_json(cfg_.mask)}, {"counts", to_json(counts)}}.dump(2));
  try {
    out.item = store_.transition_state(id, item.state, MediaState::Masked, [&](MediaItem& m) {
      m.alignment = manual;
      m.peak_marks = marks;
      m.mask_params = cfg_.mask;
      m.mask_counts = counts;
      m.snow_index = rec.snow_index;
      m.eligible_pixels = rec.eligible_pixels;
    });
  } catch (const StateConflictError& e) {
    throw ApiError(409, "conflict", e.what());
  }
  out.new_index = rec.snow_index;
  if (out.item.kind == MediaKind::Photo) {
    rec.media_id = id;
    rec.timestamp = out.item.taken_at;
    rec.region = out.item.region;
    store_.append_snow_index(rec);
  }
  return out;
}

// ---- ingestion

IngestReport Engine::crawl_once() {
  IngestReport total;
  for (const auto& src : cfg_.sources) {
    try {
      auto adapter = make_source(src.type, src.location);
      auto r = ingest_source(store_, *adapter, MediaSource::Crawl, cfg_.region.name);
      total.created.insert(total.created.end(), r.created.begin(), r.created.end());
      total.known += r.known;
    } catch (const std::exception& e) {
      spdlog::warn("crawl {}: {}", src.location, e.what());
    }
  }
  return total;
}

std::vector<MediaItem> Engine::poll_webcam(const std::string& webcam_id) {
  const WebcamConfig* cam = webcam(webcam_id);
  if (!cam) throw std::invalid_argument("unknown webcam " + webcam_id);
  WebcamConfig effective = *cam;
  if (effective.region.empty()) effective.region = cfg_.region.name;
  auto adapter = make_source(cam->source_type, cam->source);
  return snowwatch::poll_webcam(store_, effective, *adapter);
}

std::map<std::string, Json> Engine::load_days() const {
  std::map<std::string, Json> out;
  const fs::path p = store_.root() / "index" / "webcam_days.json";
  if (!fs::exists(p)) return out;
  Json j = Json::parse(read_text(p));
  for (const auto& [k, v] : j.items()) out[k] = v;
  return out;
}

void Engine::mark_day_done(const std::string& key, const std::optional<std::string>& media_id) {
  auto days = load_days();
  days[key] = media_id ? Json(*media_id) : Json(nullptr);
  write_file_atomic(store_.root() / "index" / "webcam_days.json", Json(days).dump(2));
}

std::optional<SnowIndexRecord> Engine::aggregate_webcam_day(const std::string& webcam_id,
                                                           std::chrono::sys_days day) {
  const WebcamConfig* cam = webcam(webcam_id);
  if (!cam) throw std::invalid_argument("unknown webcam " + webcam_id);
  std::lock_guard lock(days_mu_);
  const std::string key = day_key(webcam_id, day);
  auto days = load_days();
  if (days.count(key)) return std::nullopt;

  MediaQuery q;
  q.webcam_id = webcam_id;
  q.from = Timestamp(day);
  q.to = Timestamp(day + std::chrono::days(1)) - std::chrono::seconds(1);
  std::vector<WebcamFrame> frames;
  for (const auto& item : query_all(store_, q)) {
    if (item.state == MediaState::New || (item.state == MediaState::Aligned && !item.weather))
      throw std::runtime_error("frames of " + key + " are still being processed");
    if (!item.weather || item.state == MediaState::Failed || item.state == MediaState::FilteredOut)
      continue;
    frames.push_back({item.id, decode_image(read_file(store_.media_path(item))), *item.weather,
                      item.taken_at});
  }
  std::optional<SnowIndexRecord> rec;
  if (auto pick = select_daily_frame(frames)) {
    const auto& f = frames[*pick];
    auto pano = panorama(cam->viewpoint);
    rec = daily_webcam_index(frames, build_mapping(cam->pose, f.image.width(), f.image.height()), *pano,
                             cfg_.mask);
    rec->region = cam->region.empty() ? cfg_.region.name : cam->region;
    store_.append_snow_index(*rec);
  }
  mark_day_done(key, rec ? std::optional(rec->media_id) : std::nullopt);
  return rec;
}

std::vector<SnowIndexRecord> Engine::aggregate_webcam_days(Timestamp now) {
  std::vector<SnowIndexRecord> out;
  const auto today = utc_day(now);
  for (const auto& cam : cfg_.webcams) {
    MediaQuery q;
    q.webcam_id = cam.id;
    q.to = Timestamp(today) - std::chrono::seconds(1);
    std::set<std::chrono::sys_days> days;
    for (const auto& item : query_all(store_, q)) days.insert(utc_day(item.taken_at));
    for (auto day : days) {
      try {
        if (auto rec = aggregate_webcam_day(cam.id, day)) out.push_back(*rec);
      } catch (const std::exception& e) {
        spdlog::info("webcam {} {}: {}", cam.id, format_date(Timestamp(day)), e.what());
      }
    }
  }
  return out;
}

// ---- workers

void Engine::start_workers(int n) {
  std::lock_guard lock(queue_mu_);
  stopping_ = false;
  for (int i = 0; i < n; ++i)
    workers_.emplace_back([this] {
      for (;;) {
        std::string id;
        {
          std::unique_lock lock(queue_mu_);
          queue_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
          if (stopping_) return;
          id = queue_.front();
          queue_.pop_front();
          queued_.erase(id);
          ++busy_;
        }
        try {
          process_item(id);
        } catch (const std::exception& e) {
          spdlog::error("worker: item {}: {}", id, e.what());
        }
        {
          std::lock_guard lock(queue_mu_);
          --busy_;
        }
        idle_cv_.notify_all();
      }
    });
}

void Engine::stop_workers() {
  {
    std::lock_guard lock(queue_mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  for (auto& t : workers_) t.join();
  workers_.clear();
}

void Engine::enqueue(const std::string& id) {
  {
    std::lock_guard lock(queue_mu_);
    if (!queued_.insert(id).second) return;
    queue_.push_back(id);
  }
  queue_cv_.notify_one();
}

void Engine::wait_idle() {
  std::unique_lock lock(queue_mu_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && busy_ == 0; });
}

}  // namespace snowwatch
