// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <httplib.h>
#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <thread>

#include "snowwatch/api.hpp"
#include "snowwatch/json_io.hpp"
#include <spdlog/spdlog.h>
#include "support/fixtures.hpp"
#include "support/shape.hpp"

using namespace snowwatch;
using namespace snowwatch::testkit;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances.
constexpr double kDipTol = 0.01;        // degrees
constexpr double kApexTol = 0.1;        // degrees
constexpr double kRenderBudget = 5.0;   // seconds
constexpr double kPoseTol = 0.05;       // degrees, yaw and pitch
constexpr double kScoreMax = 0.05;      // degrees
constexpr int kRoundTrips = 20, kRoundTripsNeeded = 19;
constexpr double kAlignBudget = 60.0;   // seconds
constexpr double kIndexTol = 1e-9;
constexpr double kUploadBudget = 30.0;  // seconds
constexpr double kK = 0.13;  // refraction coefficient

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (ok) return;
    pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double ang_err(double a, double b) {
  double d = std::fmod(std::abs(a - b), 360.0);
  return std::min(d, 360.0 - d);
}

double dip_oracle_deg(double eye) {
  return -rad2deg(std::sqrt(2.0 * eye * (1.0 - kK) / kEarthRadius));
}

double apparent_angle_deg(double rise, double dist) {
  return rad2deg(std::atan((rise - dist * dist * (1.0 - kK) / (2.0 * kEarthRadius)) / dist));
}

const Panorama& scene_pano() {
  static const Panorama pano = render_panorama(standard_scene().dem, standard_scene().viewpoint);
  return pano;
}

// ---- rendering

Outcome rendering() {
  Outcome o;
  const auto t0 = Clock::now();

  DemGrid flat = flat_dem(45.9, 7.4, 201, 201, 0.001, 0.0);
  auto pano = render_panorama(flat, Viewpoint{flat.cell_center(100, 100), 2.0});
  const double dip = dip_oracle_deg(2.0);
  double worst = 0;
  for (double s : pano.skyline) worst = std::max(worst, std::isnan(s) ? 1e9 : std::abs(s - dip));
  o.require(worst <= kDipTol, fmt::format("flat dip off by {:.4f}", worst));

  TowerScene tower = tower_scene();
  auto tp = render_panorama(tower.dem, tower.viewpoint);
  const double tower_err = std::abs(tp.skyline[0] - apparent_angle_deg(tower.relief, 10000.0));
  o.require(tower_err <= kApexTol, fmt::format("tower apex off by {:.4f}", tower_err));

  // the fixture cone, seen from the standard viewpoint
  const auto& s = standard_scene();
  const auto& cp = scene_pano();
  auto local = local_offset(s.viewpoint.position.lat, s.viewpoint.position.lon, s.cone_apex.lat, s.cone_apex.lon);
  const double dist = std::hypot(local.east, local.north);
  const double az = std::fmod(rad2deg(std::atan2(local.east, local.north)) + 360.0, 360.0);
  const double eye_alt = *sample_elevation(s.dem, s.viewpoint.position) + s.viewpoint.eye_height;
  const double cone_err = std::abs(cp.skyline_at(az) - apparent_angle_deg(*s.cone_apex.alt - eye_alt, dist));
  o.require(cone_err <= kApexTol, fmt::format("cone apex off by {:.4f}", cone_err));

  const double took = seconds_since(t0);
  o.require(took < kRenderBudget, fmt::format("took {:.2f} s", took));
  if (o.pass)
    o.detail = fmt::format("dip {:.5f}, tower {:.4f}, cone {:.4f} deg; {:.2f} s", worst, tower_err, cone_err, took);
  return o;
}

// ---- alignment

// Where a camera at `pose` sees the panorama skyline: the last sky row per column.
SkylineProfile synth_profile(const Panorama& pano, const CameraPose& pose, int w, int h) {
  SkylineProfile p;
  p.width = w;
  p.height = h;
  p.rows.resize(w);
  p.strength.resize(w);
  const double tan_h = std::tan(deg2rad(pose.hfov / 2));
  const double tan_v = std::tan(deg2rad(pose.hfov * h / w / 2));
  for (int c = 0; c < w; ++c) {
    double az = pose.yaw + rad2deg(std::atan((c - w / 2.0) / (w / 2.0) * tan_h));
    double sky = pano.skyline_at(az);
    if (std::isnan(sky)) continue;
    double r = h / 2.0 + (h / 2.0) * std::tan(deg2rad(pose.pitch - sky)) / tan_v;
    long ri = std::lround(r - 0.5);
    if (ri < 0 || ri >= h) continue;
    p.rows[c] = static_cast<int>(ri);
    p.strength[c] = 1.0;
  }
  return p;
}

Outcome alignment() {
  Outcome o;
  const auto& pano = scene_pano();
  const auto t0 = Clock::now();
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> yaw(0.0, 360.0), pitch(-5.0, 5.0);
  const double fovs[] = {35.0, 50.0, 65.0};
  int ok = 0;
  double worst_yaw = 0, worst_pitch = 0, worst_score = 0;
  for (int t = 0; t < kRoundTrips; ++t) {
    CameraPose truth{yaw(rng), pitch(rng), fovs[t % 3]};
    auto r = estimate_pose(synth_profile(pano, truth, 640, 480), pano, truth);
    const double ey = ang_err(r.pose.yaw, truth.yaw), ep = std::abs(r.pose.pitch - truth.pitch);
    worst_yaw = std::max(worst_yaw, ey);
    worst_pitch = std::max(worst_pitch, ep);
    worst_score = std::max(worst_score, r.score);
    ok += ey <= kPoseTol && ep <= kPoseTol && r.score < kScoreMax;
  }
  const double took = seconds_since(t0);
  o.require(ok >= kRoundTripsNeeded, fmt::format("{}/{} recovered", ok, kRoundTrips));
  o.require(took < kAlignBudget, fmt::format("took {:.1f} s", took));
  if (o.pass)
    o.detail = fmt::format("{}/{} recovered, worst yaw {:.4f} pitch {:.4f} score {:.4f}; {:.1f} s", ok,
                           kRoundTrips, worst_yaw, worst_pitch, worst_score, took);
  return o;
}

// ---- snow mask

std::vector<size_t> eligible_of(const EnvironmentalMask& m) {
  std::vector<size_t> idx;
  for (size_t i = 0; i < m.eligible.size(); ++i)
    if (m.eligible[i]) idx.push_back(i);
  return idx;
}

ImageBuffer paint_white(ImageBuffer img, std::span<const size_t> idx) {
  for (size_t i : idx) img.set(static_cast<int>(i % img.width()), static_cast<int>(i / img.width()), Rgb{255, 255, 255});
  return img;
}

Outcome snow_mask() {
  Outcome o;
  const auto& pano = scene_pano();
  const MaskConfig cfg;

  // eligibility taken from the oracle, on a shot whose eligible count splits into fifths
  CameraPose pose{28.0, 10.0, 50.0};
  const int w = 120, h = 90;
  std::vector<size_t> idx;
  for (int step = 0; step < 40; ++step, pose.yaw += 0.5) {
    idx = eligible_of(brute_force_mask(render_scene_photo(pano, pose, w, h, 1e9), build_mapping(pose, w, h), pano, cfg));
    if (idx.size() >= 100 && idx.size() % 5 == 0) break;
  }
  const PixelMapping mapping = build_mapping(pose, w, h);
  const ImageBuffer bare = render_scene_photo(pano, pose, w, h, 1e9);
  if (idx.size() < 100 || idx.size() % 5 != 0) {
    o.require(false, "no fixture shot with a 5-divisible eligible count");
    return o;
  }
  auto index = [&](const ImageBuffer& img) { return snow_index(build_mask(img, mapping, pano, cfg), cfg).snow_index; };

  auto all = index(paint_white(bare, idx));
  o.require(all && std::abs(*all - 1.0) <= kIndexTol, "all painted is not 1.0");
  auto none = index(bare);
  o.require(none && std::abs(*none) <= kIndexTol, "none painted is not 0.0");
  std::vector<size_t> subset;
  for (size_t k = 0; k < idx.size(); ++k)
    if (k % 5 < 2) subset.push_back(idx[k]);
  auto part = index(paint_white(bare, subset));
  o.require(part && std::abs(*part - 0.4) <= kIndexTol,
            fmt::format("40% subset gave {}", part ? fmt::format("{:.12f}", *part) : "null"));

  // bit-identical masks on small photos
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> yaw(0, 360), pitch(-5, 15);
  int compared = 0, identical = 0;
  for (int t = 0; t < 60; ++t) {
    CameraPose p{yaw(rng), pitch(rng), 30.0 + 5.0 * (t % 8)};
    const int pw = 16 + 8 * (t % 7), ph = 16 + 6 * (t % 9);
    MaskConfig mc;
    mc.alt_threshold = 1000.0 + 150.0 * (t % 6);
    mc.d_near = 200.0 + 100.0 * (t % 5);
    auto m = build_mapping(p, pw, ph);
    ImageBuffer photo = render_scene_photo(pano, p, pw, ph, 1300.0 + 50.0 * (t % 10));
    ++compared;
    identical += build_mask(photo, m, pano, mc) == brute_force_mask(photo, m, pano, mc);
  }
  o.require(identical == compared, fmt::format("{}/{} small masks identical", identical, compared));
  if (o.pass)
    o.detail = fmt::format("{} eligible, indices 1/0/{:.3f}; {}/{} small masks identical", idx.size(), *part,
                           identical, compared);
  return o;
}

// ---- service helpers

ServiceConfig fixture_config(const std::string& tag) {
  ServiceConfig c;
  c.data_dir = temp_dir(tag) / "data";
  c.region = {"fixture", standard_scene().bbox, 500.0};
  c.fsync = false;
  return c;
}

struct Service {
  std::unique_ptr<Engine> engine;
  std::unique_ptr<ApiServer> server;
  std::unique_ptr<httplib::Client> client;

  explicit Service(const ServiceConfig& c, int workers) {
    const auto& s = standard_scene();
    engine = std::make_unique<Engine>(c, s.dem, s.peaks, ClassifierModel::bias_only(1.0));
    if (workers > 0) engine->start_workers(workers);
    server = std::make_unique<ApiServer>(*engine);
    int port = server->start("127.0.0.1", 0);
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(30, 0);
  }
  ~Service() {
    server.reset();
    engine->stop_workers();
  }

  // status and parsed body; null body when the response is not JSON
  std::pair<int, Json> get(const std::string& path) {
    auto r = client->Get(path);
    if (!r) return {0, nullptr};
    return {r->status, Json::parse(r->body, nullptr, false)};
  }
};

std::string png_of(const ImageBuffer& img) {
  auto b = encode_png(img);
  return {b.begin(), b.end()};
}

const CameraPose kTrue{110.0, 2.0, 50.0};

// ---- manual correction

Outcome manual_correction() {
  Outcome o;
  const CameraPose kTrue{29.0, 8.0, 50.0};  // facing the cone, so part of the view is snow
  Service svc(fixture_config("acc_manual"), 0);
  Engine& e = *svc.engine;
  const int w = 320, h = 240;
  auto bytes = encode_png(render_scene_photo(standard_service_panorama(), kTrue, w, h));
  MediaItem item = ingest_upload(e.store(), bytes, "shot.png", standard_sidecar(kTrue), "fixture").item;

  // aligned by hand to the wrong place, as a bad automatic result would be
  AlignmentResult bad;
  bad.pose = {kTrue.yaw + 7.0, kTrue.pitch - 2.0, kTrue.hfov};
  bad.score = 0.3;
  bad.source = AlignmentSource::Auto;
  e.store().transition_state(item.id, MediaState::New, MediaState::Aligned, [&](MediaItem& m) {
    m.alignment = bad;
    m.auto_alignment = bad;
    m.width = w;
    m.height = h;
  });
  if (e.process_item(item.id) != MediaState::Masked) {
    o.require(false, "mis-aligned item did not reach MASKED");
    return o;
  }
  const auto before = e.store().get_item(item.id)->snow_index;

  auto put = svc.client->Put("/api/media/" + item.id + "/alignment", Json{{"pose", to_json(kTrue)}}.dump(),
                             "application/json");
  if (!put || put->status != 200) {
    o.require(false, fmt::format("PUT failed: {}", put ? put->body : "no response"));
    return o;
  }
  Json body = Json::parse(put->body);
  o.require(conforms(body, correction_shape()), "correction body shape");

  ImageBuffer photo = decode_image(bytes);
  const double oracle = oracle_snow_index(brute_force_mask(photo, build_mapping(kTrue, w, h),
                                                           standard_service_panorama(), MaskConfig{}));
  o.require(oracle > 0 && oracle < 1, fmt::format("oracle index {} is not strictly inside (0, 1)", oracle));
  o.require(body["new_index"].is_number() && std::abs(body["new_index"].get<double>() - oracle) <= kIndexTol,
            fmt::format("new index {} vs oracle {:.12f}", body["new_index"].dump(), oracle));
  o.require(before.has_value() == body["old_index"].is_number(), "old index mismatch");

  auto [status, al] = svc.get("/api/media/" + item.id + "/alignment");
  o.require(status == 200 && conforms(al, alignment_view_shape()), "alignment view");
  if (status == 200) {
    o.require(al["alignment"]["source"] == "MANUAL", "current alignment not MANUAL");
    o.require(al["auto_alignment"]["source"] == "AUTO", "automatic alignment lost");
    o.require(al["auto_alignment"]["yaw"].get<double>() == bad.pose.yaw, "automatic pose changed");
    o.require(al["alignment"]["yaw"].get<double>() == kTrue.yaw, "manual pose not stored");
  }
  if (o.pass) o.detail = fmt::format("new index {:.9f} equals oracle", oracle);
  return o;
}

// ---- ingestion filters

Outcome ingestion() {
  Outcome o;
  const auto& s = standard_scene();
  const fs::path root = temp_dir("acc_ingest");
  const fs::path feed = root / "feed";
  fs::create_directories(feed);

  // a spot on the bowl well above the valley floor
  Viewpoint high{local_to_geo(s.dem, 1200.0, 3600.0), 2.0};
  const double high_alt = *sample_elevation(s.dem, high.position);
  const double valley_alt = *sample_elevation(s.dem, s.viewpoint.position);
  const double threshold = 0.5 * (high_alt + valley_alt);
  const Panorama high_pano = render_panorama(s.dem, cache_viewpoint(high));

  // fixture model: rendered mountain shots against flat, featureless frames
  std::vector<std::pair<ImageBuffer, bool>> train;
  for (int k = 0; k < 6; ++k) {
    train.push_back({render_scene_photo(scene_pano(), {30.0 + 50.0 * k, 3.0, 50.0}, 160, 120), true});
    const std::uint8_t g = static_cast<std::uint8_t>(40 + 35 * k);
    train.push_back({uniform_image(160, 120, Rgb{g, g, static_cast<std::uint8_t>(g + 10)}), false});
  }
  ClassifierModel model = train_classifier(train);

  auto drop = [&](const std::string& name, const ImageBuffer& img, double lat, double lon) {
    write_file_atomic(feed / name, encode_png(img));
    write_file_atomic(feed / (name + ".json"),
                      Json{{"lat", lat}, {"lon", lon}, {"taken_at", "2024-02-10T09:00:00Z"}}.dump());
  };
  std::map<std::string, std::pair<MediaState, std::string>> want;
  const CameraPose poses[] = {{20.0, 4.0, 50.0}, {110.0, 3.0, 50.0}, {200.0, 5.0, 50.0}};
  const auto& vp = s.viewpoint.position;
  for (int k = 0; k < 3; ++k) {
    ImageBuffer scene = render_scene_photo(high_pano, poses[k], 640, 480);
    drop(fmt::format("out{}.png", k), scene, s.bbox.lat_max + 0.05 * (k + 1), vp.lon);
    want[fmt::format("out{}.png", k)] = {MediaState::FilteredOut, kOutsideRegion};
    drop(fmt::format("low{}.png", k), render_scene_photo(scene_pano(), poses[k], 640, 480), vp.lat, vp.lon);
    want[fmt::format("low{}.png", k)] = {MediaState::FilteredOut, kBelowAltitude};
    const std::uint8_t g = static_cast<std::uint8_t>(90 + 50 * k);
    drop(fmt::format("flat{}.png", k), uniform_image(640, 480, Rgb{g, g, g}), high.position.lat, high.position.lon);
    want[fmt::format("flat{}.png", k)] = {MediaState::FilteredOut, kNotMountain};
    drop(fmt::format("pass{}.png", k), scene, high.position.lat, high.position.lon);
    want[fmt::format("pass{}.png", k)] = {MediaState::Masked, ""};
  }

  ServiceConfig c;
  c.data_dir = root / "data";
  c.region = {"fixture", s.bbox, threshold};
  c.fsync = false;
  c.sources = {CrawlSource{"directory", feed.string()}};
  Engine e(c, s.dem, s.peaks, model);

  auto first = e.crawl_once();
  o.require(first.created.size() == 12, fmt::format("created {}", first.created.size()));
  e.process_pending();

  int matched = 0;
  std::vector<Json> docs;
  for (const auto& m : e.store().all_items()) {
    docs.push_back(to_json(m));
    std::string name = fs::path(m.source_identity).filename().string();
    name = name.substr(0, name.find('@'));
    auto it = want.find(name);
    if (it == want.end()) {
      o.require(false, "unexpected item " + name);
      continue;
    }
    bool ok = m.state == it->second.first && m.reason == it->second.second;
    if (ok) ++matched;
    else o.require(false, fmt::format("{}: {} '{}'", name, to_string(m.state), m.reason));
  }
  o.require(matched == 12, fmt::format("{}/12 states and reasons", matched));

  const auto seq = e.store().journal_seq();
  auto second = e.crawl_once();
  const int touched = e.process_pending();
  std::vector<Json> again;
  for (const auto& m : e.store().all_items()) again.push_back(to_json(m));
  o.require(second.created.empty() && second.known == 12, "re-run created items");
  o.require(touched == 0 && again == docs && e.store().journal_seq() == seq, "re-run changed the store");
  if (o.pass)
    o.detail = fmt::format("12/12 states and reasons (threshold {:.0f} m); re-run left journal at {}", threshold, seq);
  return o;
}

// ---- webcam

ImageBuffer clouded_frame(const CameraPose& pose, int w, int h, double visibility) {
  ImageBuffer img = render_scene_photo(standard_service_panorama(), pose, w, h);
  auto rows = expected_skyline_rows(standard_service_panorama(), pose, w, h);
  const int hidden = static_cast<int>(std::lround((1.0 - visibility) * w));
  for (int x = 0; x < hidden; ++x)
    for (int y = 0; y <= std::min(h - 1, rows[x].value_or(h - 1) + 20); ++y) img.set(x, y, kSkyColor);
  return img;
}

Outcome webcam() {
  Outcome o;
  const fs::path root = temp_dir("acc_webcam");
  const fs::path feed = root / "feed";
  fs::create_directories(feed);
  const int w = 320, h = 240;
  auto drop = [&](const std::string& name, const ImageBuffer& img, const std::string& at) {
    write_file_atomic(feed / name, encode_png(img));
    write_file_atomic(feed / (name + ".json"), Json{{"taken_at", at}}.dump());
  };
  const ImageBuffer fog(w, h, Rgb{170, 170, 172});
  drop("a1.png", fog, "2024-02-10T07:00:00Z");
  drop("a2.png", clouded_frame(kTrue, w, h, 0.8), "2024-02-10T08:00:00Z");
  drop("a3.png", clouded_frame(kTrue, w, h, 1.0), "2024-02-10T10:00:00Z");
  drop("a4.png", clouded_frame(kTrue, w, h, 0.9), "2024-02-10T12:00:00Z");
  drop("a5.png", fog, "2024-02-10T15:00:00Z");
  drop("b1.png", fog, "2024-02-11T09:00:00Z");
  drop("b2.png", fog, "2024-02-11T13:00:00Z");

  ServiceConfig c;
  c.data_dir = root / "data";
  c.region = {"fixture", standard_scene().bbox, 500.0};
  c.fsync = false;
  WebcamConfig cam;
  cam.id = "cam1";
  cam.viewpoint = standard_scene().viewpoint;
  cam.pose = kTrue;
  cam.source_type = "directory";
  cam.source = feed.string();
  c.webcams = {cam};
  const auto& s = standard_scene();
  Engine e(c, s.dem, s.peaks, ClassifierModel::bias_only(1.0));

  o.require(e.poll_webcam("cam1").size() == 7, "poll did not see 7 frames");
  e.process_pending();
  auto recs = e.aggregate_webcam_days(*parse_timestamp("2024-02-12T00:00:00Z"));
  o.require(recs.size() == 1, fmt::format("{} daily records", recs.size()));
  if (recs.size() != 1) return o;
  auto best = e.store().get_item(recs[0].media_id);
  o.require(best && format_timestamp(best->taken_at) == "2024-02-10T10:00:00Z", "index not on the 1.0 frame");
  if (best) {
    ImageBuffer img = decode_image(read_file(e.store().media_path(*best)));
    double oracle = oracle_snow_index(brute_force_mask(img, build_mapping(kTrue, w, h),
                                                       standard_service_panorama(), MaskConfig{}));
    o.require(recs[0].snow_index && std::abs(*recs[0].snow_index - oracle) <= kIndexTol, "daily index vs oracle");
  }
  o.require(e.aggregate_webcam_days(*parse_timestamp("2024-02-13T00:00:00Z")).empty() &&
                e.store().snow_records().size() == 1,
            "foggy day produced a record");
  if (o.pass) o.detail = "clearest frame chosen, foggy day has no record";
  return o;
}

// ---- store

std::vector<std::string> scan(const std::vector<MediaItem>& all, const MediaQuery& q) {
  std::vector<MediaItem> hit;
  for (const auto& m : all) {
    if (q.kind && m.kind != *q.kind) continue;
    if (q.state && m.state != *q.state) continue;
    if (q.webcam_id && m.webcam_id != *q.webcam_id) continue;
    if (q.bbox) {
      if (!m.geotag) continue;
      if (m.geotag->lat < q.bbox->lat_min || m.geotag->lat > q.bbox->lat_max) continue;
      if (m.geotag->lon < q.bbox->lon_min || m.geotag->lon > q.bbox->lon_max) continue;
    }
    if (q.min_alt) {
      double alt = m.photographer_alt ? *m.photographer_alt
                   : (m.geotag && m.geotag->alt) ? *m.geotag->alt
                                                 : -1e18;
      if (alt < *q.min_alt) continue;
    }
    if (q.from && m.taken_at < *q.from) continue;
    if (q.to && m.taken_at > *q.to) continue;
    if (q.peak) {
      bool any = false;
      for (const auto& p : m.peak_marks) any = any || p.peak.name == *q.peak;
      if (!any) continue;
    }
    hit.push_back(m);
  }
  std::stable_sort(hit.begin(), hit.end(), [](const MediaItem& a, const MediaItem& b) {
    return a.taken_at != b.taken_at ? a.taken_at > b.taken_at : a.id < b.id;
  });
  std::vector<std::string> ids;
  for (int i = q.offset; i < static_cast<int>(hit.size()) && static_cast<int>(ids.size()) < q.limit; ++i)
    ids.push_back(hit[i].id);
  return ids;
}

std::string slurp(const fs::path& p) {
  auto b = read_file(p);
  return {b.begin(), b.end()};
}

Outcome store() {
  Outcome o;
  const fs::path dir = temp_dir("acc_store");
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> lat(45.0, 47.0), lon(6.0, 9.0), alt(0, 4000);
  const char* peaks[] = {"Alpha", "Beta", "Gamma"};
  const std::vector<std::uint8_t> bytes = {1, 2, 3};
  const Timestamp t0 = *parse_timestamp("2024-01-01T00:00:00Z");
  std::vector<MediaItem> all;
  {
    Store st(dir, StoreOptions{false});
    for (int i = 0; i < 1000; ++i) {
      MediaItem m;
      m.kind = MediaKind::Photo;
      m.source = MediaSource::Crawl;
      m.taken_at = t0 + std::chrono::hours(rng() % 400);
      if (rng() % 5) m.geotag = GeoPoint{lat(rng), lon(rng), std::nullopt};
      if (m.geotag && rng() % 2) m.geotag->alt = alt(rng);
      if (rng() % 3 == 0) m.photographer_alt = alt(rng);
      if (rng() % 5 == 0) {
        m.kind = MediaKind::WebcamFrame;
        m.webcam_id = rng() % 2 ? "cam-a" : "cam-b";
      }
      if (rng() % 2) m.peak_marks.push_back({Peak{peaks[rng() % 3], {}}, 0, 0, 0});
      m = st.put_item(m, bytes, ".jpg");
      if (rng() % 2) m = st.transition_state(m.id, MediaState::New, MediaState::Aligned);
      all.push_back(m);
    }

    int mismatches = 0, heat_bad = 0;
    for (int trial = 0; trial < 300; ++trial) {
      MediaQuery q;
      if (rng() % 3 == 0) q.kind = rng() % 2 ? MediaKind::Photo : MediaKind::WebcamFrame;
      if (rng() % 2) {
        double a = lat(rng), b = lat(rng), c = lon(rng), d = lon(rng);
        q.bbox = BBox{std::min(a, b), std::max(a, b) + 1e-6, std::min(c, d), std::max(c, d) + 1e-6};
      }
      if (rng() % 3 == 0) q.min_alt = alt(rng);
      if (rng() % 3 == 0) q.from = t0 + std::chrono::hours(rng() % 200);
      if (rng() % 3 == 0) q.to = t0 + std::chrono::hours(200 + rng() % 200);
      if (rng() % 4 == 0) q.peak = peaks[rng() % 3];
      if (rng() % 4 == 0) q.state = rng() % 2 ? MediaState::New : MediaState::Aligned;
      if (rng() % 6 == 0) q.webcam_id = "cam-a";
      q.limit = 1 + static_cast<int>(rng() % 500);
      q.offset = static_cast<int>(rng() % 50);
      auto page = st.query(q);
      std::vector<std::string> got;
      for (const auto& m : page.items) got.push_back(m.id);
      mismatches += got != scan(all, q);

      // heatmap over the query's bbox (or a fixed one) with the same filters
      MediaQuery everything = q;
      everything.offset = 0;
      everything.limit = 1000;
      BBox area = q.bbox.value_or(BBox{45.0, 47.0, 6.0, 9.0});
      everything.bbox = area;
      const double cell = 0.05 + 0.05 * (rng() % 6);
      auto heat = st.heatmap(area, cell, q);
      std::int64_t sum = 0;
      for (const auto& hc : heat.cells) sum += hc.count;
      heat_bad += sum != heat.total || static_cast<size_t>(sum) != scan(all, everything).size();
    }
    o.require(mismatches == 0, fmt::format("{} query mismatches", mismatches));
    o.require(heat_bad == 0, fmt::format("{} heatmap sums off", heat_bad));
  }

  // truncate the journal at every record boundary and mid-record; replay keeps what was committed
  const std::string full = slurp(dir / "journal.log");
  std::vector<size_t> ends;
  for (size_t i = 0; i < full.size(); ++i)
    if (full[i] == '\n') ends.push_back(i + 1);
  std::map<std::string, MediaItem> committed;  // final state per id
  {
    Store st(dir, StoreOptions{false});
    for (const auto& m : st.all_items()) committed[m.id] = m;
  }
  int replay_bad = 0;
  const size_t cuts[] = {ends[ends.size() / 2], ends[ends.size() / 2] + 17, ends.back() - 5, full.size()};
  for (size_t cut : cuts) {
    const fs::path copy = temp_dir("acc_store_cut");
    write_file_atomic(copy / "journal.log", std::vector<std::uint8_t>(full.begin(), full.begin() + cut));
    const size_t complete = std::upper_bound(ends.begin(), ends.end(), cut) - ends.begin();
    auto replayed = Store::replay_journal(copy / "journal.log");
    Store st(copy, StoreOptions{false});
    replay_bad += st.journal_seq() != complete;
    for (const auto& [id, m] : replayed) {
      auto got = st.get_item(id);
      replay_bad += !got || to_json(*got) != to_json(m);
    }
    if (cut == full.size()) {
      replay_bad += replayed.size() != committed.size();
      for (const auto& [id, m] : committed) replay_bad += !replayed.count(id) || to_json(replayed.at(id)) != to_json(m);
    }
    fs::remove_all(copy);
  }
  o.require(replay_bad == 0, fmt::format("{} replay differences", replay_bad));
  if (o.pass) o.detail = "1000 items, 300 queries and heatmaps, 4 journal cuts replayed";
  return o;
}

// ---- API contract

Outcome api() {
  Outcome o;
  ServiceConfig c = fixture_config("acc_api");
  const fs::path feed = c.data_dir.parent_path() / "feed";
  fs::create_directories(feed);
  write_file_atomic(feed / "f.png", encode_png(render_scene_photo(standard_service_panorama(), kTrue, 320, 240)));
  write_file_atomic(feed / "f.png.json", Json{{"taken_at", "2024-02-10T10:00:00Z"}}.dump());
  WebcamConfig cam;
  cam.id = "cam1";
  cam.viewpoint = standard_scene().viewpoint;
  cam.pose = kTrue;
  cam.source_type = "directory";
  cam.source = feed.string();
  c.webcams = {cam};
  Service svc(c, 2);

  const auto t0 = Clock::now();
  const std::string png = png_of(render_scene_photo(standard_service_panorama(), kTrue, 320, 240));
  httplib::MultipartFormDataItems form = {{"image", png, "shot.png", "image/png"},
                                          {"sidecar", standard_sidecar(kTrue), "", "application/json"}};
  auto up = svc.client->Post("/api/photos", form);
  if (!up || up->status != 201) {
    o.require(false, "upload rejected");
    return o;
  }
  Json created = Json::parse(up->body);
  o.require(conforms(created, upload_shape()), "upload shape");
  const std::string id = created["id"];
  Json item;
  while (seconds_since(t0) < kUploadBudget) {
    item = svc.get("/api/media/" + id).second;
    std::string st = item.value("state", "");
    if (st == "MASKED" || st == "FAILED" || st == "FILTERED_OUT") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  const double took = seconds_since(t0);
  o.require(item.value("state", "") == "MASKED", "upload did not reach MASKED: " + item.value("state", "?"));
  o.require(took < kUploadBudget, fmt::format("took {:.1f} s", took));
  o.require(item["snow_index"].is_number(), "snow index undefined");

  svc.engine->poll_webcam("cam1");
  svc.engine->wait_idle();
  svc.engine->process_pending();
  svc.engine->aggregate_webcam_days(*parse_timestamp("2024-02-12T00:00:00Z"));

  struct Endpoint {
    std::string path;
    Json shape;
  };
  const auto& b = standard_scene().bbox;
  const std::string bbox = fmt::format("{},{},{},{}", b.lat_min, b.lat_max, b.lon_min, b.lon_max);
  const std::vector<Endpoint> endpoints = {
      {"/api/media/" + id, media_item_shape()},
      {"/api/media?bbox=" + bbox + "&kind=PHOTO", media_list_shape()},
      {"/api/media/" + id + "/alignment", alignment_view_shape()},
      {"/api/heatmap?bbox=" + bbox + "&cell=0.002", heatmap_shape()},
      {"/api/webcams", webcams_shape()},
      {"/api/webcams/cam1/frames?date=2024-02-10", frames_shape()},
      {"/api/snowindex?region=fixture", series_shape()},
      {"/api/peaks?bbox=" + bbox, peaks_shape()},
      {"/api/media/NOPE", error_shape()},
  };
  int shaped = 0;
  for (const auto& ep : endpoints) {
    auto [status, body] = svc.get(ep.path);
    bool ok = status != 0 && conforms(body, ep.shape);
    shaped += ok;
    if (!ok) o.require(false, "shape of " + ep.path);
  }
  auto grid_ok = conforms(item["attributes"], attribute_grid_shape()) && item["attributes"]["cols"].get<int>() <= kMaxAttributeColumns;
  o.require(grid_ok, "attribute grid");
  auto put = svc.client->Put("/api/media/" + id + "/alignment", Json{{"pose", to_json(kTrue)}}.dump(), "application/json");
  o.require(put && put->status == 200 && conforms(Json::parse(put->body), correction_shape()), "PUT alignment shape");
  auto img = svc.client->Get("/api/media/" + id + "/image");
  o.require(img && img->status == 200 && img->body == png, "image bytes");
  auto mask = svc.client->Get("/api/media/" + id + "/mask.png");
  o.require(mask && mask->status == 200 && mask->get_header_value("Content-Type") == "image/png", "mask png");
  if (o.pass)
    o.detail = fmt::format("MASKED in {:.2f} s, index {:.4f}; {} JSON endpoints plus image, mask and PUT conform",
                           took, item["snow_index"].get<double>(), shaped);
  return o;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"rendering oracle", rendering},
      {"alignment round-trip", alignment},
      {"snow mask exactness", snow_mask},
      {"manual-correction loop", manual_correction},
      {"ingestion filters", ingestion},
      {"webcam daily aggregation", webcam},
      {"store", store},
      {"API contract", api},
  };
  int failed = 0;
  for (const auto& [name, run] : checks) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (checks.size() - failed) << "/" << checks.size() << " criteria pass" << std::endl;
  return failed ? 1 : 0;
}
