#include "snowwatch/api.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <httplib.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "snowwatch/json_io.hpp"

namespace snowwatch {
namespace {

using httplib::Request;
using httplib::Response;

void send_json(Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, Json{{"code", code}, {"message", message}});
}

std::optional<std::string> param(const Request& req, const std::string& key) {
  if (!req.has_param(key)) return std::nullopt;
  std::string v = req.get_param_value(key);
  if (v.empty()) return std::nullopt;
  return v;
}

double number_param(const std::string& key, const std::string& text) {
  try {
    size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ApiError(400, "invalid_query", fmt::format("{} is not a number: '{}'", key, text));
  }
}

int int_param(const std::string& key, const std::string& text) {
  double v = number_param(key, text);
  if (v != std::floor(v) || std::abs(v) > 1e9)
    throw ApiError(400, "invalid_query", fmt::format("{} must be an integer", key));
  return static_cast<int>(v);
}

Timestamp time_param(const std::string& key, const std::string& text) {
  auto t = parse_timestamp(text);
  if (!t) throw ApiError(400, "invalid_query", fmt::format("{} is not a date or timestamp: '{}'", key, text));
  return *t;
}

BBox bbox_param(const std::string& text) {
  try {
    return parse_bbox(text);
  } catch (const std::exception& e) {
    throw ApiError(400, "invalid_query", e.what());
  }
}

const std::string& id_of(const Request& req) { return req.path_params.at("id"); }

MediaItem item_or_404(Engine& engine, const std::string& id) {
  auto item = engine.store().get_item(id);
  if (!item) throw ApiError(404, "not_found", "unknown media id " + id);
  return *item;
}

std::string content_type_for(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  return "application/octet-stream";
}

Json rows_json(const std::vector<std::optional<int>>& rows) {
  Json out = Json::array();
  for (const auto& r : rows) out.push_back(r ? Json(*r) : Json(nullptr));
  return out;
}

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

Json to_json(const AttributeGrid& g) {
  Json alt = Json::array(), dist = Json::array();
  for (const auto& a : g.altitude) alt.push_back(opt_json(a));
  for (const auto& d : g.distance) dist.push_back(opt_json(d));
  return {{"cols", g.cols}, {"rows", g.rows},      {"scale", g.scale},
          {"sky", g.sky},   {"altitude", alt},     {"distance", dist}};
}

MediaQuery media_query_from_params(const std::multimap<std::string, std::string>& params) {
  static const std::set<std::string> known = {"kind",  "bbox", "min_alt", "from",   "to",    "peak",
                                              "state", "webcam", "offset", "limit", "cell"};
  MediaQuery q;
  for (const auto& [key, value] : params) {
    if (!known.count(key)) throw ApiError(400, "invalid_query", "unknown parameter " + key);
    if (value.empty()) continue;
    if (key == "kind") {
      q.kind = value == "WEBCAM" ? MediaKind::WebcamFrame : parse_media_kind(value);
      if (!q.kind) throw ApiError(400, "invalid_query", "kind must be PHOTO or WEBCAM");
    } else if (key == "bbox") {
      q.bbox = bbox_param(value);
    } else if (key == "min_alt") {
      q.min_alt = number_param(key, value);
    } else if (key == "from") {
      q.from = time_param(key, value);
    } else if (key == "to") {
      // a bare date covers the whole day
      q.to = time_param(key, value);
      if (value.size() == 10) *q.to += std::chrono::days(1) - std::chrono::seconds(1);
    } else if (key == "peak") {
      q.peak = value;
    } else if (key == "state") {
      q.state = parse_media_state(value);
      if (!q.state) throw ApiError(400, "invalid_query", "unknown state " + value);
    } else if (key == "webcam") {
      q.webcam_id = value;
    } else if (key == "offset") {
      q.offset = int_param(key, value);
    } else if (key == "limit") {
      q.limit = int_param(key, value);
    }
  }
  try {
    q.validate();
  } catch (const StoreError& e) {
    throw ApiError(400, "invalid_query", e.what());
  }
  return q;
}

ApiServer::ApiServer(Engine& engine) : engine_(engine), http_(std::make_unique<httplib::Server>()) {
  routes();
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::start(const std::string& host, int port) {
  int bound = port == 0 ? http_->bind_to_any_port(host) : (http_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error(fmt::format("cannot bind {}:{}", host, port));
  thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  return bound;
}

bool ApiServer::listen(const std::string& host, int port) { return http_->listen(host, port); }

void ApiServer::stop() {
  if (http_) http_->stop();
  if (thread_.joinable()) thread_.join();
}

void ApiServer::routes() {
  auto& s = *http_;
  Engine& engine = engine_;

  s.set_exception_handler([](const Request& req, Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const ApiError& e) {
      send_error(res, e.status, e.code, e.what());
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      send_error(res, 500, "internal", e.what());
    } catch (...) {
      send_error(res, 500, "internal", "unknown error");
    }
  });
  // unmatched routes still answer with the envelope
  s.set_error_handler([](const Request&, Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404) send_error(res, 404, "not_found", "no such endpoint");
    else if (res.status == 400) send_error(res, 400, "bad_request", "malformed request");
  });

  s.Post("/api/photos", [&engine](const Request& req, Response& res) {
    if (!req.is_multipart_form_data() || !req.has_file("image"))
      throw ApiError(400, "missing_image", "multipart field 'image' is required");
    auto image = req.get_file_value("image");
    std::optional<std::string> sidecar;
    if (req.has_file("sidecar") && !req.get_file_value("sidecar").content.empty())
      sidecar = req.get_file_value("sidecar").content;
    UploadResult up;
    try {
      std::span bytes(reinterpret_cast<const std::uint8_t*>(image.content.data()), image.content.size());
      up = ingest_upload(engine.store(), bytes, image.filename.empty() ? "upload" : image.filename,
                         sidecar, engine.config().region.name);
    } catch (const SidecarError& e) {
      throw ApiError(422, "sidecar_invalid", e.what());
    } catch (const ImageError& e) {
      throw ApiError(422, "image_invalid", e.what());
    }
    if (up.created) engine.enqueue(up.item.id);
    send_json(res, up.created ? 201 : 200,
              Json{{"id", up.item.id}, {"state", to_string(up.item.state)}, {"exif", to_json(up.item.exif)}});
  });

  s.Get("/api/media", [&engine](const Request& req, Response& res) {
    auto page = engine.store().query(media_query_from_params(req.params));
    Json items = Json::array();
    for (const auto& m : page.items) items.push_back(to_json(m));
    send_json(res, 200, Json{{"items", items}, {"total", page.total}});
  });

  s.Get("/api/media/:id", [&engine](const Request& req, Response& res) {
    MediaItem item = item_or_404(engine, id_of(req));
    Json body = to_json(item);
    body["attributes"] = nullptr;
    if (item.alignment && item.width > 0) {
      auto pano = engine.panorama(engine.item_viewpoint(item));
      body["attributes"] = to_json(attribute_grid(engine.item_mapping(item), *pano));
    }
    send_json(res, 200, body);
  });

  s.Get("/api/media/:id/image", [&engine](const Request& req, Response& res) {
    MediaItem item = item_or_404(engine, id_of(req));
    auto bytes = read_file(engine.store().media_path(item));
    res.set_content(std::string(bytes.begin(), bytes.end()), content_type_for(item.payload));
  });

  s.Get("/api/media/:id/mask.png", [&engine](const Request& req, Response& res) {
    MediaItem item = item_or_404(engine, id_of(req));
    const auto path = engine.store().mask_path(item.id);
    if (item.state != MediaState::Masked || !std::filesystem::exists(path))
      throw ApiError(404, "mask_not_ready", fmt::format("item is {}", to_string(item.state)));
    auto bytes = read_file(path);
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  });

  s.Get("/api/media/:id/alignment", [&engine](const Request& req, Response& res) {
    MediaItem item = item_or_404(engine, id_of(req));
    if (!item.alignment) throw ApiError(409, "not_aligned", fmt::format("item is {}", to_string(item.state)));
    send_json(res, 200,
              Json{{"id", item.id},
                   {"alignment", to_json(*item.alignment)},
                   {"auto_alignment", item.auto_alignment ? to_json(*item.auto_alignment) : Json(nullptr)},
                   {"skyline_rows", rows_json(engine.item_skyline_rows(item))},
                   {"width", item.width},
                   {"height", item.height}});
  });

  s.Put("/api/media/:id/alignment", [&engine](const Request& req, Response& res) {
    Json body = Json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object())
      throw ApiError(400, "invalid_body", "body must be a JSON object");
    const bool has_pose = body.contains("pose"), has_warp = body.contains("warp");
    if (has_pose == has_warp) throw ApiError(400, "invalid_body", "body needs exactly one of pose or warp");
    ManualCorrection c;
    try {
      if (has_pose) c.value = pose_from_json(body["pose"]);
      else c.value = warp_from_json(body["warp"]);
    } catch (const std::exception& e) {
      throw ApiError(422, has_pose ? "pose_invalid" : "warp_invalid", e.what());
    }
    CorrectionResult r = engine.submit_manual_alignment(id_of(req), c);
    send_json(res, 200,
              Json{{"id", r.item.id},
                   {"state", to_string(r.item.state)},
                   {"alignment", to_json(*r.item.alignment)},
                   {"auto_alignment", r.item.auto_alignment ? to_json(*r.item.auto_alignment) : Json(nullptr)},
                   {"old_index", opt_json(r.old_index)},
                   {"new_index", opt_json(r.new_index)}});
  });

  s.Get("/api/heatmap", [&engine](const Request& req, Response& res) {
    auto params = req.params;
    auto cell_text = param(req, "cell");
    auto bbox_text = param(req, "bbox");
    if (!bbox_text) throw ApiError(400, "invalid_query", "bbox is required");
    const double cell = cell_text ? number_param("cell", *cell_text) : 0.01;
    if (!(cell > 0.0)) throw ApiError(400, "invalid_query", "cell must be positive");
    params.erase("cell");
    MediaQuery q = media_query_from_params(params);
    const BBox box = *q.bbox;
    const double cells = std::ceil((box.lat_max - box.lat_min) / cell) * std::ceil((box.lon_max - box.lon_min) / cell);
    if (cells > 1e6) throw ApiError(400, "invalid_query", "bbox/cell gives more than a million cells");
    Heatmap h;
    try {
      h = engine.store().heatmap(box, cell, q);
    } catch (const StoreError& e) {
      throw ApiError(400, "invalid_query", e.what());
    }
    Json cells_json = Json::array();
    for (const auto& c : h.cells) cells_json.push_back({c.lat_idx, c.lon_idx, c.count});
    send_json(res, 200,
              Json{{"cells", cells_json},
                   {"total", h.total},
                   {"n_lat", h.n_lat},
                   {"n_lon", h.n_lon},
                   {"cell", h.cell_deg},
                   {"bbox", {box.lat_min, box.lat_max, box.lon_min, box.lon_max}}});
  });

  s.Get("/api/webcams", [&engine](const Request&, Response& res) {
    Json cams = Json::array();
    for (const auto& c : engine.config().webcams) cams.push_back(to_json(c));
    send_json(res, 200, Json{{"webcams", cams}});
  });

  s.Get("/api/webcams/:id/frames", [&engine](const Request& req, Response& res) {
    const std::string& id = id_of(req);
    if (!engine.webcam(id)) throw ApiError(404, "not_found", "unknown webcam " + id);
    MediaQuery q;
    q.webcam_id = id;
    auto date = param(req, "date");
    if (date) {
      auto day = parse_timestamp(*date);
      if (!day || date->size() != 10) throw ApiError(400, "invalid_query", "date must be YYYY-MM-DD");
      q.from = *day;
      q.to = *day + std::chrono::days(1) - std::chrono::seconds(1);
    }
    std::vector<MediaItem> items;
    for (q.offset = 0;; q.offset += kMaxQueryLimit) {
      q.limit = kMaxQueryLimit;
      auto page = engine.store().query(q);
      items.insert(items.end(), page.items.begin(), page.items.end());
      if (page.items.size() < static_cast<size_t>(kMaxQueryLimit)) break;
    }
    std::stable_sort(items.begin(), items.end(), [](const MediaItem& a, const MediaItem& b) {
      return std::tie(a.taken_at, a.id) < std::tie(b.taken_at, b.id);
    });
    Json frames = Json::array();
    for (const auto& m : items)
      frames.push_back({{"id", m.id},
                        {"taken_at", format_timestamp(m.taken_at)},
                        {"state", to_string(m.state)},
                        {"weather", m.weather ? to_json(*m.weather) : Json(nullptr)},
                        {"snow_index", opt_json(m.snow_index)},
                        {"image", fmt::format("/api/media/{}/image", m.id)}});
    send_json(res, 200, Json{{"webcam", id}, {"date", date ? Json(*date) : Json(nullptr)}, {"frames", frames}});
  });

  s.Get("/api/snowindex", [&engine](const Request& req, Response& res) {
    std::optional<Timestamp> from, to;
    if (auto f = param(req, "from")) from = time_param("from", *f);
    if (auto t = param(req, "to")) {
      to = time_param("to", *t);
      if (t->size() == 10) *to += std::chrono::days(1) - std::chrono::seconds(1);
    }
    if (from && to && *from > *to) throw ApiError(400, "invalid_query", "from is after to");
    Json series = Json::array();
    for (const auto& row : engine.store().snow_series(param(req, "region"), from, to))
      series.push_back({{"date", row.date}, {"mean", row.mean}, {"count", row.count}});
    send_json(res, 200, Json{{"region", param(req, "region") ? Json(*param(req, "region")) : Json(nullptr)},
                             {"series", series}});
  });

  s.Get("/api/peaks", [&engine](const Request& req, Response& res) {
    std::optional<BBox> box;
    if (auto b = param(req, "bbox")) box = bbox_param(*b);
    Json peaks = Json::array();
    for (const auto& p : engine.peaks())
      if (!box || box->contains(p.position)) peaks.push_back(to_json(p));
    send_json(res, 200, Json{{"peaks", peaks}});
  });
}

}  // namespace snowwatch
