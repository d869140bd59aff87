// snowwatch: command line harness over the pipeline stages and the service.
#include <csignal>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <spdlog/sinks/stdout_sinks.h>

#include "snowwatch/api.hpp"
#include "snowwatch/engine.hpp"
#include "snowwatch/exif.hpp"
#include "snowwatch/json_io.hpp"

namespace fs = std::filesystem;
using namespace snowwatch;

namespace {

// Operational failures exit 1; CLI11 parse errors exit 2.
struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PhotoArgs {
  std::string photo;
  std::string dem;
  std::string sidecar;
  std::optional<double> lat, lon;
  double eye = 2.0;
};

void add_photo_options(CLI::App* cmd, PhotoArgs& a) {
  cmd->add_option("--photo", a.photo, "JPEG or PNG photo")->required()->check(CLI::ExistingFile);
  cmd->add_option("--dem", a.dem, "ESRI ASCII grid")->required()->check(CLI::ExistingFile);
  cmd->add_option("--sidecar", a.sidecar, "JSON overriding EXIF fields")->check(CLI::ExistingFile);
  cmd->add_option("--lat", a.lat, "viewpoint latitude (default: geotag)");
  cmd->add_option("--lon", a.lon, "viewpoint longitude (default: geotag)");
  cmd->add_option("--eye", a.eye, "eye height above ground, meters");
}

std::string slurp(const std::string& path) {
  auto b = read_file(path);
  return {b.begin(), b.end()};
}

struct LoadedPhoto {
  ImageBuffer image;
  ExifMeta exif;
  Viewpoint viewpoint;
  DemGrid dem;
};

LoadedPhoto load_photo(const PhotoArgs& a) {
  auto bytes = read_file(a.photo);
  ImageBuffer image = decode_image(bytes);
  std::optional<ExifMeta> side;
  if (!a.sidecar.empty()) side = parse_sidecar(slurp(a.sidecar));
  ExifMeta exif = read_exif(bytes, side);
  std::optional<double> lat = a.lat ? a.lat : exif.lat, lon = a.lon ? a.lon : exif.lon;
  if (!lat || !lon) throw Failure("photo has no geotag; pass --lat and --lon");
  Viewpoint vp{GeoPoint{*lat, *lon, std::nullopt}, a.eye};
  if (!vp.valid()) throw Failure("viewpoint out of range");
  return LoadedPhoto{std::move(image), exif, vp, load_dem(a.dem)};
}

void print(const Json& j) { std::cout << j.dump(2) << "\n"; }

ServiceConfig service_config(const std::string& path) {
  return config_from_env(path.empty() ? std::nullopt : std::optional<fs::path>(path));
}

Json states_summary(Store& store) {
  std::map<std::string, int> n;
  for (const auto& m : store.all_items()) ++n[to_string(m.state)];
  return n;
}

Json series_json(Store& store, const std::optional<std::string>& region) {
  Json rows = Json::array();
  for (const auto& r : store.snow_series(region, std::nullopt, std::nullopt))
    rows.push_back({{"date", r.date}, {"mean", r.mean}, {"count", r.count}});
  return rows;
}

std::atomic<bool> g_stop{false};

// Crawls, webcam polls and daily aggregation on their own schedules.
void run_pollers(Engine& engine) {
  using clock = std::chrono::steady_clock;
  const auto& cfg = engine.config();
  auto next_crawl = clock::now();
  std::map<std::string, clock::time_point> next_poll;
  for (const auto& cam : cfg.webcams) next_poll[cam.id] = clock::now();
  while (!g_stop) {
    const auto now = clock::now();
    bool polled = false;
    if (!cfg.sources.empty() && now >= next_crawl) {
      engine.crawl_once();
      next_crawl = now + std::chrono::seconds(cfg.crawl_interval);
      polled = true;
    }
    for (const auto& cam : cfg.webcams) {
      if (now < next_poll[cam.id]) continue;
      engine.poll_webcam(cam.id);
      next_poll[cam.id] = now + std::chrono::seconds(cam.poll_interval);
      polled = true;
    }
    if (polled) {
      for (const auto& m : engine.store().all_items())
        if (m.state == MediaState::New || m.state == MediaState::Aligned) engine.enqueue(m.id);
      engine.aggregate_webcam_days(now_seconds());
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(250));
  }
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_logger_mt("snowwatch"));
  spdlog::set_level(spdlog::level::warn);

  CLI::App app{"SnowWatch: mountain photo alignment and snow cover indexing"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "log progress to stderr");

  // render
  auto* render = app.add_subcommand("render", "render a 360 degree panorama from a DEM");
  std::string r_dem, r_out = "panorama.png", r_peaks;
  double r_lat = 0, r_lon = 0, r_eye = 2.0;
  RenderConfig r_cfg;
  render->add_option("--dem", r_dem)->required()->check(CLI::ExistingFile);
  render->add_option("--lat", r_lat)->required();
  render->add_option("--lon", r_lon)->required();
  render->add_option("--eye", r_eye);
  render->add_option("--az-res", r_cfg.az_res, "degrees per column")->check(CLI::Range(0.01, 5.0));
  render->add_option("--peaks", r_peaks, "peak catalog CSV")->check(CLI::ExistingFile);
  render->add_option("-o,--out", r_out, "PNG path; the JSON sidecar goes next to it");

  // align
  auto* align = app.add_subcommand("align", "estimate the camera pose of a photo");
  PhotoArgs a_args;
  std::optional<double> a_hfov;
  std::string a_peaks;
  add_photo_options(align, a_args);
  align->add_option("--hfov", a_hfov, "field of view prior, degrees (default: from EXIF)");
  align->add_option("--peaks", a_peaks, "peak catalog CSV")->check(CLI::ExistingFile);

  // mask
  auto* mask = app.add_subcommand("mask", "build the environmental mask at a given pose");
  PhotoArgs m_args;
  CameraPose m_pose;
  std::string m_out = "mask.png";
  MaskConfig m_cfg;
  add_photo_options(mask, m_args);
  mask->add_option("--yaw", m_pose.yaw)->required();
  mask->add_option("--pitch", m_pose.pitch)->required();
  mask->add_option("--hfov", m_pose.hfov)->required();
  mask->add_option("--alt-threshold", m_cfg.alt_threshold, "meters");
  mask->add_option("--d-near", m_cfg.d_near, "meters");
  mask->add_option("-o,--out", m_out, "mask PNG path");

  std::string config_path;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "service config JSON (default: $SNOWWATCH_CONFIG)")
        ->check(CLI::ExistingFile);
  };

  // ingest
  auto* ingest = app.add_subcommand("ingest", "crawl configured sources once and process new items");
  add_config(ingest);
  std::vector<std::string> i_dirs;
  ingest->add_option("--dir", i_dirs, "extra directory source")->check(CLI::ExistingDirectory);

  // webcam-poll
  auto* poll = app.add_subcommand("webcam-poll", "poll webcams once, process frames, aggregate finished days");
  add_config(poll);
  std::string p_id;
  poll->add_option("--id", p_id, "only this webcam");

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP API with workers and pollers");
  add_config(serve);
  std::optional<int> s_port;
  std::optional<std::string> s_host;
  serve->add_option("--port", s_port)->check(CLI::Range(0, 65535));
  serve->add_option("--host", s_host);

  // index
  auto* index = app.add_subcommand("index", "aggregate finished webcam days and print the daily snow index");
  add_config(index);
  std::optional<std::string> x_region;
  index->add_option("--region", x_region);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (verbose) spdlog::set_level(spdlog::level::info);

  try {
    if (*render) {
      DemGrid dem = load_dem(r_dem);
      Viewpoint vp{GeoPoint{r_lat, r_lon, std::nullopt}, r_eye};
      if (!vp.valid()) throw Failure("viewpoint out of range");
      Panorama pano = render_panorama(dem, vp, r_cfg);
      if (!r_peaks.empty()) pano.peak_marks = project_peaks(pano, load_peaks(r_peaks));
      write_file_atomic(r_out, encode_png(panorama_image(pano)));
      const fs::path side = fs::path(r_out).replace_extension(".json");
      write_file_atomic(side, panorama_sidecar_json(pano));
      print(Json{{"image", r_out}, {"sidecar", side.string()}, {"columns", pano.n_cols}, {"rows", pano.n_rows}});
    } else if (*align) {
      LoadedPhoto p = load_photo(a_args);
      Panorama pano = render_panorama(p.dem, p.viewpoint);
      SkylineProfile profile = extract_skyline(p.image);
      CameraPose prior{0.0, 0.0, a_hfov ? *a_hfov : hfov_prior(p.exif)};
      AlignmentResult r = estimate_pose(profile, pano, prior);
      Json out = to_json(r);
      Json marks = Json::array();
      if (!a_peaks.empty())
        for (const auto& m : peaks_in_frame(project_peaks(pano, load_peaks(a_peaks)), r.pose, p.image.width(),
                                            p.image.height()))
          marks.push_back(to_json(m));
      out["peak_marks"] = marks;
      print(out);
    } else if (*mask) {
      if (!m_pose.valid()) throw Failure("pose out of range");
      LoadedPhoto p = load_photo(m_args);
      Panorama pano = render_panorama(p.dem, p.viewpoint);
      EnvironmentalMask em = build_mask(p.image, build_mapping(m_pose, p.image.width(), p.image.height()), pano, m_cfg);
      SnowIndexRecord rec = snow_index(em, m_cfg);
      write_file_atomic(m_out, encode_png(mask_image(em)));
      Json out = {{"mask", m_out},
                  {"counts", to_json(em.counts())},
                  {"snow_index", rec.snow_index ? Json(*rec.snow_index) : Json(nullptr)},
                  {"eligible_pixels", rec.eligible_pixels},
                  {"params", to_json(m_cfg)}};
      write_file_atomic(fs::path(m_out).replace_extension(".json"), out.dump(2));
      print(out);
    } else if (*ingest) {
      ServiceConfig cfg = service_config(config_path);
      for (const auto& d : i_dirs) cfg.sources.push_back({"directory", fs::absolute(d).string()});
      auto engine = Engine::open(cfg);
      IngestReport rep = engine->crawl_once();
      int processed = engine->process_pending();
      print(Json{{"created", rep.created.size()}, {"known", rep.known}, {"processed", processed},
                 {"states", states_summary(engine->store())}});
    } else if (*poll) {
      ServiceConfig cfg = service_config(config_path);
      auto engine = Engine::open(cfg);
      if (!p_id.empty() && !engine->webcam(p_id)) throw Failure("unknown webcam " + p_id);
      Json frames = Json::object();
      for (const auto& cam : cfg.webcams) {
        if (!p_id.empty() && cam.id != p_id) continue;
        frames[cam.id] = engine->poll_webcam(cam.id).size();
      }
      int processed = engine->process_pending();
      Json days = Json::array();
      for (const auto& r : engine->aggregate_webcam_days(now_seconds()))
        days.push_back({{"media_id", r.media_id},
                        {"date", format_date(r.timestamp)},
                        {"snow_index", r.snow_index ? Json(*r.snow_index) : Json(nullptr)}});
      print(Json{{"new_frames", frames}, {"processed", processed}, {"aggregated", days}});
    } else if (*serve) {
      ServiceConfig cfg = service_config(config_path);
      if (s_port) cfg.port = *s_port;
      if (s_host) cfg.host = *s_host;
      spdlog::set_level(spdlog::level::info);
      auto engine = Engine::open(cfg);

      sigset_t sigs;
      sigemptyset(&sigs);
      sigaddset(&sigs, SIGINT);
      sigaddset(&sigs, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

      engine->start_workers(cfg.workers);
      for (const auto& m : engine->store().all_items())
        if (m.state == MediaState::New || m.state == MediaState::Aligned) engine->enqueue(m.id);
      ApiServer server(*engine);
      const int port = server.start(cfg.host, cfg.port);
      std::cout << fmt::format("listening on http://{}:{}", cfg.host, port) << std::endl;
      std::thread pollers([&] { run_pollers(*engine); });
      int sig = 0;
      sigwait(&sigs, &sig);
      spdlog::info("signal {}: shutting down", sig);
      g_stop = true;
      pollers.join();
      server.stop();
      engine->stop_workers();
    } else if (*index) {
      ServiceConfig cfg = service_config(config_path);
      auto engine = Engine::open(cfg);
      engine->process_pending();
      auto recs = engine->aggregate_webcam_days(now_seconds());
      print(Json{{"aggregated", recs.size()},
                 {"region", x_region ? Json(*x_region) : Json(nullptr)},
                 {"series", series_json(engine->store(), x_region)}});
    }
  } catch (const std::exception& e) {
    std::cerr << "snowwatch: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
