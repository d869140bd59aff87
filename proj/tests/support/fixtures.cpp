#include "fixtures.hpp"

#include "snowwatch/engine.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <random>

#include <unistd.h>

namespace snowwatch::testkit {

DemGrid flat_dem(double lat0, double lon0, int rows, int cols, double cell, double elevation) {
  return DemGrid({lat0, lon0, {}}, rows, cols, cell, -9999.0,
                 std::vector<double>(static_cast<size_t>(rows) * cols, elevation));
}

TowerScene tower_scene() {
  const int n = 241, center = 120, tower_rows = 100;
  const double cell = 10000.0 / tower_rows / meters_per_degree();
  const double lat0 = 45.9, lon0 = 7.5;
  std::vector<double> z(static_cast<size_t>(n) * n, 0.0);
  const double relief = 1000.0, eye = 2.0;
  z[static_cast<size_t>(center - tower_rows) * n + center] = relief + eye;
  DemGrid dem({lat0, lon0, {}}, n, n, cell, -9999.0, std::move(z));
  GeoPoint vp = dem.cell_center(center, center);
  GeoPoint tower = dem.cell_center(center - tower_rows, center);
  tower.alt = relief + eye;
  return {dem, Viewpoint{vp, eye}, tower, relief};
}

GeoPoint local_to_geo(const DemGrid& dem, double east, double north) {
  const double lat = dem.origin().lat + north / meters_per_degree();
  const double lon =
      dem.origin().lon + east / (meters_per_degree() * std::cos(deg2rad(dem.origin().lat)));
  return {lat, lon, {}};
}

namespace {

double segment_distance(double px, double py, double ax, double ay, double bx, double by,
                        double* along = nullptr) {
  double vx = bx - ax, vy = by - ay;
  double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  if (along) *along = t;
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

StandardScene make_standard_scene() {
  const int n = 200;
  const double cell = 0.00027;
  const double lat0 = 46.0, lon0 = 7.8;
  const double north_m = cell * meters_per_degree();
  const double east_m = north_m * std::cos(deg2rad(lat0));
  const double vx = 1200.0, vy = 1500.0;               // viewpoint, meters from SW center
  const double cx = 3300.0, cy = 5300.0, cone_r = 900.0;  // cone
  std::vector<double> z(static_cast<size_t>(n) * n);
  auto base = [&](double x, double y) {
    double r = std::hypot(x - vx, y - vy);
    double rise = 0.1 * std::max(0.0, r - 500.0);
    // several wavelengths so every azimuth has some silhouette texture
    double wobble = 60.0 * std::sin(0.004 * x) * std::cos(0.003 * y) +
                    45.0 * std::sin(0.011 * x + 0.7) * std::sin(0.009 * y + 0.3) +
                    25.0 * std::cos(0.023 * x - 0.017 * y);
    wobble *= std::min(1.0, r / 1500.0);
    return 1000.0 + rise + wobble;
  };
  for (int row = 0; row < n; ++row) {
    for (int col = 0; col < n; ++col) {
      double x = col * east_m, y = (n - 1 - row) * north_m;
      double h = base(x, y);
      h += 1200.0 * std::max(0.0, 1.0 - std::hypot(x - cx, y - cy) / cone_r);
      double t = 0.0;
      double d = segment_distance(x, y, 2300.0, 300.0, 3900.0, 1900.0, &t);
      if (d < 260.0) h += (230.0 + 90.0 * std::sin(6.0 * t)) * (1.0 - (d / 260.0) * (d / 260.0));
      z[static_cast<size_t>(row) * n + col] = h;
    }
  }
  DemGrid dem({lat0, lon0, {}}, n, n, cell, -9999.0, std::move(z));
  StandardScene s{dem, {}, {}, {}, {}};
  s.viewpoint = Viewpoint{local_to_geo(dem, vx, vy), 2.0};
  // Snap the cone apex to the closest lattice node so it is a sampled value.
  int apex_col = static_cast<int>(std::lround(cx / east_m));
  int apex_row = n - 1 - static_cast<int>(std::lround(cy / north_m));
  double best = -1;
  for (int r = apex_row - 2; r <= apex_row + 2; ++r)
    for (int c = apex_col - 2; c <= apex_col + 2; ++c)
      if (dem.at(r, c) > best) {
        best = dem.at(r, c);
        s.cone_apex = dem.cell_center(r, c);
      }
  s.cone_apex.alt = best;
  GeoPoint ridge_top = local_to_geo(dem, 3100.0, 1100.0);
  ridge_top.alt = *sample_elevation(dem, ridge_top);
  s.peaks = {
      {"Punta Cono", s.cone_apex},
      {"Cresta Alta", ridge_top},
      {"Monte Rosa", {45.9369, 7.8666, 4634.0}},
  };
  s.bbox = {lat0 - 0.01, lat0 + n * cell + 0.01, lon0 - 0.01, lon0 + n * cell + 0.01};
  return s;
}

}  // namespace

const StandardScene& standard_scene() {
  static const StandardScene scene = make_standard_scene();
  return scene;
}

ImageBuffer render_scene_photo(const Panorama& pano, const CameraPose& pose, int width,
                               int height, double snow_alt) {
  ImageBuffer img(width, height, kSkyColor);
  PixelMapping m = build_mapping(pose, width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      size_t i = m.index(x, y);
      double el = m.elevation[i];
      if (el > pano.cfg.el_max) continue;
      if (el < pano.cfg.el_min) {
        img.set(x, y, kGroundColor);
        continue;
      }
      PanoramaCell cell = pano.cell_at(m.azimuth[i], el);
      if (cell.kind == CellKind::Sky) continue;
      img.set(x, y, cell.altitude >= snow_alt ? kSnowColor : kGroundColor);
    }
  }
  return img;
}

ImageBuffer uniform_image(int width, int height, Rgb color) {
  return ImageBuffer(width, height, color);
}

namespace {

class TiffWriter {
 public:
  explicit TiffWriter(bool big_endian) : be_(big_endian) {}

  struct Entry {
    std::uint16_t tag;
    std::uint16_t type;
    std::uint32_t count;
    std::vector<std::uint8_t> value;  // already in file byte order
    int child_ifd = -1;               // for pointer tags
  };
  using Ifd = std::vector<Entry>;

  std::vector<std::uint8_t> u16(std::uint16_t v) const {
    return be_ ? std::vector<std::uint8_t>{std::uint8_t(v >> 8), std::uint8_t(v)}
               : std::vector<std::uint8_t>{std::uint8_t(v), std::uint8_t(v >> 8)};
  }
  std::vector<std::uint8_t> u32(std::uint32_t v) const {
    std::vector<std::uint8_t> b(4);
    for (int i = 0; i < 4; ++i) b[be_ ? 3 - i : i] = std::uint8_t(v >> (8 * i));
    return b;
  }
  std::vector<std::uint8_t> rationals(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& r) const {
    std::vector<std::uint8_t> out;
    for (auto [n, d] : r) {
      auto a = u32(n), b = u32(d);
      out.insert(out.end(), a.begin(), a.end());
      out.insert(out.end(), b.begin(), b.end());
    }
    return out;
  }

  // ifds[0] is IFD0; child_ifd entries point at other ifds by index.
  std::vector<std::uint8_t> build(const std::vector<Ifd>& ifds) const {
    std::vector<std::uint32_t> ifd_offset(ifds.size());
    std::uint32_t pos = 8;
    for (size_t i = 0; i < ifds.size(); ++i) {
      ifd_offset[i] = pos;
      pos += 2 + 12 * static_cast<std::uint32_t>(ifds[i].size()) + 4;
    }
    std::vector<std::uint8_t> data;
    std::uint32_t data_start = pos;
    std::vector<std::uint8_t> out = be_ ? std::vector<std::uint8_t>{'M', 'M'}
                                        : std::vector<std::uint8_t>{'I', 'I'};
    append(out, u16(42));
    append(out, u32(8));
    for (const auto& ifd : ifds) {
      append(out, u16(static_cast<std::uint16_t>(ifd.size())));
      for (const auto& e : ifd) {
        append(out, u16(e.tag));
        append(out, u16(e.type));
        append(out, u32(e.count));
        std::vector<std::uint8_t> value =
            e.child_ifd >= 0 ? u32(ifd_offset[e.child_ifd]) : e.value;
        if (value.size() <= 4) {
          value.resize(4, 0);
          append(out, value);
        } else {
          append(out, u32(data_start + static_cast<std::uint32_t>(data.size())));
          append(data, value);
          if (data.size() % 2) data.push_back(0);
        }
      }
      append(out, u32(0));
    }
    append(out, data);
    return out;
  }

 private:
  static void append(std::vector<std::uint8_t>& out, const std::vector<std::uint8_t>& v) {
    out.insert(out.end(), v.begin(), v.end());
  }
  bool be_;
};

std::vector<std::pair<std::uint32_t, std::uint32_t>> dms(double deg) {
  deg = std::abs(deg);
  auto d = static_cast<std::uint32_t>(deg);
  double minutes = (deg - d) * 60.0;
  auto m = static_cast<std::uint32_t>(minutes);
  double seconds = (minutes - m) * 60.0;
  return {{d, 1}, {m, 1}, {static_cast<std::uint32_t>(std::lround(seconds * 1000)), 1000}};
}

}  // namespace

std::vector<std::uint8_t> jpeg_with_exif(const ImageBuffer& img, const ExifFixture& exif) {
  TiffWriter w(exif.big_endian);
  using Entry = TiffWriter::Entry;
  std::vector<TiffWriter::Ifd> ifds(3);
  ifds[0].push_back(Entry{0x8769, 4, 1, {}, 1});
  ifds[0].push_back(Entry{0x8825, 4, 1, {}, 2});
  if (exif.datetime_original) {
    std::vector<std::uint8_t> s(exif.datetime_original->begin(), exif.datetime_original->end());
    s.push_back(0);
    ifds[1].push_back(Entry{0x9003, 2, static_cast<std::uint32_t>(s.size()), s});
  }
  if (exif.focal_length)
    ifds[1].push_back(Entry{0x920A, 5, 1,
                            w.rationals({{static_cast<std::uint32_t>(
                                              std::lround(*exif.focal_length * 100)),
                                          100}})});
  if (exif.focal_length_35mm)
    ifds[1].push_back(
        Entry{0xA405, 3, 1, w.u16(static_cast<std::uint16_t>(*exif.focal_length_35mm))});
  if (exif.lat) {
    ifds[2].push_back(Entry{0x0001, 2, 2, {std::uint8_t(*exif.lat >= 0 ? 'N' : 'S'), 0}});
    ifds[2].push_back(Entry{0x0002, 5, 3, w.rationals(dms(*exif.lat))});
  }
  if (exif.lon) {
    ifds[2].push_back(Entry{0x0003, 2, 2, {std::uint8_t(*exif.lon >= 0 ? 'E' : 'W'), 0}});
    ifds[2].push_back(Entry{0x0004, 5, 3, w.rationals(dms(*exif.lon))});
  }
  if (exif.alt) {
    ifds[2].push_back(Entry{0x0005, 1, 1, {std::uint8_t(*exif.alt < 0 ? 1 : 0)}});
    ifds[2].push_back(Entry{0x0006, 5, 1,
                            w.rationals({{static_cast<std::uint32_t>(
                                              std::lround(std::abs(*exif.alt) * 10)),
                                          10}})});
  }
  std::vector<std::uint8_t> tiff = w.build(ifds);
  std::vector<std::uint8_t> app1 = {'E', 'x', 'i', 'f', 0, 0};
  app1.insert(app1.end(), tiff.begin(), tiff.end());
  const auto len = static_cast<std::uint16_t>(app1.size() + 2);

  std::vector<std::uint8_t> jpeg = encode_jpeg(img);
  std::vector<std::uint8_t> out = {0xFF, 0xD8, 0xFF, 0xE1, std::uint8_t(len >> 8),
                                   std::uint8_t(len)};
  out.insert(out.end(), app1.begin(), app1.end());
  out.insert(out.end(), jpeg.begin() + 2, jpeg.end());
  return out;
}

// Per-pixel reimplementation straight from the panorama's stored hits.
EnvironmentalMask brute_force_mask(const ImageBuffer& photo, const PixelMapping& m,
                                   const Panorama& pano, const MaskConfig& cfg) {
  EnvironmentalMask out;
  out.width = photo.width();
  out.height = photo.height();
  out.params = cfg;
  for (int y = 0; y < photo.height(); ++y) {
    for (int x = 0; x < photo.width(); ++x) {
      const double az = m.azimuth[size_t(y) * m.width + x];
      const double el = m.elevation[size_t(y) * m.width + x];
      MaskClass cls = MaskClass::Sky;
      bool eligible = false;
      if (el < pano.cfg.el_min) {
        cls = MaskClass::Near;
      } else if (el <= pano.cfg.el_max) {
        int col = int(std::lround(az / pano.cfg.az_res)) % pano.n_cols;
        if (col < 0) col += pano.n_cols;
        int row = int(std::floor((pano.cfg.el_max - el) / pano.cfg.el_res));
        row = std::min(std::max(row, 0), pano.n_rows - 1);
        double row_el = pano.cfg.el_max - (row + 0.5) * pano.cfg.el_res;
        const TerrainHit* hit = nullptr;
        for (uint32_t i = pano.hit_start[col]; i < pano.hit_start[col + 1]; ++i) {
          if (pano.hits[i].elevation >= row_el) {
            hit = &pano.hits[i];
            break;
          }
        }
        if (hit) {
          if (hit->distance < cfg.d_near) {
            cls = MaskClass::Near;
          } else if (hit->altitude >= cfg.alt_threshold) {
            eligible = true;
            Rgb p = photo.at(x, y);
            int mx = std::max({p.r, p.g, p.b}), mn = std::min({p.r, p.g, p.b});
            double v = mx / 255.0, s = mx ? 1.0 - double(mn) / mx : 0.0;
            cls = (v >= cfg.v_min && s <= cfg.s_max) ? MaskClass::Snow : MaskClass::Ground;
          } else {
            cls = MaskClass::Ground;
          }
        }
      }
      out.classes.push_back(cls);
      out.eligible.push_back(eligible ? 1 : 0);
    }
  }
  return out;
}

double oracle_snow_index(const EnvironmentalMask& mask) {
  std::int64_t snow = 0, eligible = 0;
  for (size_t i = 0; i < mask.classes.size(); ++i) {
    eligible += mask.eligible[i];
    snow += mask.classes[i] == MaskClass::Snow;
  }
  return eligible ? double(snow) / double(eligible) : -1.0;
}

std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("snowwatch_" + tag + "_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

const Panorama& standard_service_panorama() {
  static const Panorama pano =
      render_panorama(standard_scene().dem, cache_viewpoint(standard_scene().viewpoint));
  return pano;
}

std::string standard_sidecar(const CameraPose& pose, bool geotag) {
  const auto& vp = standard_scene().viewpoint.position;
  Json j = {{"focal_length_35mm_mm", 18.0 / std::tan(deg2rad(pose.hfov / 2))},
            {"taken_at", "2024-02-10T09:00:00Z"}};
  if (geotag) {
    j["lat"] = vp.lat;
    j["lon"] = vp.lon;
  }
  return j.dump();
}

}  // namespace snowwatch::testkit
