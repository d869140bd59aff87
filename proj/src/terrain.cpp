#include "snowwatch/terrain.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace snowwatch {

DemGrid::DemGrid(GeoPoint origin, int n_rows, int n_cols, double cell_size, double nodata,
                 std::vector<double> elevations)
    : origin_(origin),
      n_rows_(n_rows),
      n_cols_(n_cols),
      cell_size_(cell_size),
      nodata_(nodata),
      elevations_(std::move(elevations)) {
  if (n_rows <= 0 || n_cols <= 0) throw TerrainError("DEM dimensions must be positive");
  if (!(cell_size > 0.0)) throw TerrainError("DEM cell size must be positive");
  if (elevations_.size() != static_cast<size_t>(n_rows) * n_cols)
    throw TerrainError(fmt::format("expected {} cells, found {}",
                                   static_cast<size_t>(n_rows) * n_cols, elevations_.size()));
  for (double v : elevations_) {
    if (is_nodata(v)) continue;
    if (v < -500.0 || v > 9000.0)
      throw TerrainError(fmt::format("elevation {} outside [-500, 9000]", v));
  }
}

GeoPoint DemGrid::cell_center(int row, int col) const {
  return {origin_.lat + (n_rows_ - 1 - row) * cell_size_, origin_.lon + col * cell_size_, {}};
}

double DemGrid::cell_meters_north() const { return kEarthRadius * deg2rad(cell_size_); }

double DemGrid::cell_meters_east() const {
  double mid_lat = origin_.lat + 0.5 * (n_rows_ - 1) * cell_size_;
  return kEarthRadius * deg2rad(cell_size_) * std::cos(deg2rad(mid_lat));
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc{} && ptr == tok.data() + tok.size();
}

// Bilinear sample in fractional lattice coordinates (x east from the west
// column, y north from the south row). NaN when out of bounds or on nodata.
double sample_lattice(const DemGrid& dem, double fx, double fy) {
  constexpr double eps = 1e-9;
  const int nc = dem.n_cols(), nr = dem.n_rows();
  if (fx < -eps || fy < -eps || fx > nc - 1 + eps || fy > nr - 1 + eps)
    return std::numeric_limits<double>::quiet_NaN();
  fx = std::clamp(fx, 0.0, double(nc - 1));
  fy = std::clamp(fy, 0.0, double(nr - 1));
  // Snap round-off so cell centers reproduce their stored value exactly.
  if (std::abs(fx - std::round(fx)) < eps) fx = std::round(fx);
  if (std::abs(fy - std::round(fy)) < eps) fy = std::round(fy);
  int c0 = std::min(static_cast<int>(fx), std::max(nc - 2, 0));
  int y0 = std::min(static_cast<int>(fy), std::max(nr - 2, 0));
  double tx = fx - c0, ty = fy - y0;
  int c1 = std::min(c0 + 1, nc - 1);
  int y1 = std::min(y0 + 1, nr - 1);
  // lattice y counts from the south; storage row 0 is north
  int r0 = nr - 1 - y0, r1 = nr - 1 - y1;
  double w[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
  double v[4] = {dem.at(r0, c0), dem.at(r0, c1), dem.at(r1, c0), dem.at(r1, c1)};
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (w[i] == 0.0) continue;
    if (dem.is_nodata(v[i])) return std::numeric_limits<double>::quiet_NaN();
    acc += w[i] * v[i];
  }
  return acc;
}

}  // namespace

DemGrid parse_dem(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::optional<int> ncols, nrows;
  std::optional<double> xll, yll, cellsize;
  bool corner = true;
  double nodata = -9999.0;
  std::vector<double> cells;
  bool in_header = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (in_header && std::isalpha(static_cast<unsigned char>(first[0]))) {
      std::string key = lower(first);
      std::string value;
      double num = 0.0;
      if (!(ls >> value) || !parse_double(value, num))
        throw TerrainError(fmt::format("line {}: malformed header '{}'", line_no, line));
      if (key == "ncols") ncols = static_cast<int>(num);
      else if (key == "nrows") nrows = static_cast<int>(num);
      else if (key == "xllcorner") xll = num;
      else if (key == "yllcorner") yll = num;
      else if (key == "xllcenter") { xll = num; corner = false; }
      else if (key == "yllcenter") { yll = num; corner = false; }
      else if (key == "cellsize") cellsize = num;
      else if (key == "nodata_value") nodata = num;
      else throw TerrainError(fmt::format("line {}: unknown header key '{}'", line_no, first));
      continue;
    }
    if (in_header) {
      if (!ncols || !nrows || !xll || !yll || !cellsize)
        throw TerrainError(fmt::format("line {}: incomplete header", line_no));
      if (*ncols <= 0 || *nrows <= 0 || !(*cellsize > 0.0))
        throw TerrainError(fmt::format("line {}: invalid header values", line_no));
      in_header = false;
      cells.reserve(static_cast<size_t>(*ncols) * *nrows);
    }
    std::string tok = first;
    do {
      double v = 0.0;
      if (!parse_double(tok, v))
        throw TerrainError(fmt::format("line {}: non-numeric cell '{}'", line_no, tok));
      cells.push_back(v);
    } while (ls >> tok);
  }
  if (in_header) {
    if (ncols && nrows && xll && yll && cellsize)
      throw TerrainError(fmt::format("expected {} cells, found 0", size_t(*ncols) * *nrows));
    throw TerrainError(fmt::format("line {}: incomplete header", line_no));
  }
  size_t expected = static_cast<size_t>(*ncols) * *nrows;
  if (cells.size() != expected)
    throw TerrainError(fmt::format("expected {} cells, found {}", expected, cells.size()));
  double half = corner ? 0.5 * *cellsize : 0.0;
  GeoPoint origin{*yll + half, *xll + half, {}};
  return DemGrid(origin, *nrows, *ncols, *cellsize, nodata, std::move(cells));
}

DemGrid load_dem(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TerrainError("cannot open DEM " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_dem(ss.str());
}

std::string format_dem(const DemGrid& dem) {
  std::string out;
  out += fmt::format("ncols {}\nnrows {}\n", dem.n_cols(), dem.n_rows());
  out += fmt::format("xllcorner {:.10g}\nyllcorner {:.10g}\n",
                     dem.origin().lon - 0.5 * dem.cell_size(),
                     dem.origin().lat - 0.5 * dem.cell_size());
  out += fmt::format("cellsize {:.10g}\nnodata_value {:.10g}\n", dem.cell_size(), dem.nodata());
  for (int r = 0; r < dem.n_rows(); ++r) {
    for (int c = 0; c < dem.n_cols(); ++c) {
      if (c) out += ' ';
      out += fmt::format("{:.10g}", dem.at(r, c));
    }
    out += '\n';
  }
  return out;
}

std::optional<double> sample_elevation(const DemGrid& dem, const GeoPoint& p) {
  double fx = (p.lon - dem.origin().lon) / dem.cell_size();
  double fy = (p.lat - dem.origin().lat) / dem.cell_size();
  double v = sample_lattice(dem, fx, fy);
  if (std::isnan(v)) return std::nullopt;
  return v;
}

std::vector<Peak> parse_peaks(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  int line_no = 0;
  std::vector<Peak> peaks;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (char ch : line) {
      if (ch == '"') quoted = !quoted;
      else if (ch == ',' && !quoted) {
        fields.push_back(field);
        field.clear();
      } else field += ch;
    }
    fields.push_back(field);
    if (!header_seen) {
      header_seen = true;
      if (lower(fields[0]) == "name") {
        if (fields.size() != 4 || lower(fields[1]) != "lat" || lower(fields[2]) != "lon" ||
            lower(fields[3]) != "alt")
          throw TerrainError(fmt::format("line {}: header must be name,lat,lon,alt", line_no));
        continue;
      }
    }
    if (fields.size() != 4)
      throw TerrainError(fmt::format("line {}: expected 4 columns, found {}", line_no,
                                     fields.size()));
    double v[3];
    for (int i = 0; i < 3; ++i) {
      std::string_view tok = fields[i + 1];
      while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
      while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
      if (!parse_double(tok, v[i]))
        throw TerrainError(fmt::format("line {}: non-numeric coordinate '{}'", line_no,
                                       fields[i + 1]));
    }
    Peak p{fields[0], {v[0], v[1], v[2]}};
    if (!p.valid()) throw TerrainError(fmt::format("line {}: invalid peak '{}'", line_no, line));
    peaks.push_back(std::move(p));
  }
  return peaks;
}

std::vector<Peak> load_peaks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TerrainError("cannot open peak catalog " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_peaks(ss.str());
}

// ---------------------------------------------------------------------------
// Panorama

PanoramaCell Panorama::cell(int col, int row) const {
  PanoramaCell out;
  auto column = column_hits(col);
  double el = row_elevation(row);
  if (column.empty() || el > column.back().elevation) return out;
  auto it = std::lower_bound(column.begin(), column.end(), el,
                             [](const TerrainHit& h, double e) { return h.elevation < e; });
  out.kind = CellKind::Terrain;
  out.distance = it->distance;
  out.altitude = it->altitude;
  out.ground = ground_point(column_azimuth(col), it->distance);
  return out;
}

PanoramaCell Panorama::cell_at(double azimuth, double elevation) const {
  int col = static_cast<int>(std::lround(wrap360(azimuth) / cfg.az_res)) % n_cols;
  int row = static_cast<int>(std::floor((cfg.el_max - elevation) / cfg.el_res));
  row = std::clamp(row, 0, n_rows - 1);
  return cell(col, row);
}

double Panorama::skyline_at(double azimuth) const {
  double x = wrap360(azimuth) / cfg.az_res;
  int c0 = static_cast<int>(x);
  double t = x - c0;
  c0 %= n_cols;
  int c1 = (c0 + 1) % n_cols;
  double a = skyline[c0], b = skyline[c1];
  if (std::isnan(a) || std::isnan(b)) return std::numeric_limits<double>::quiet_NaN();
  return a + t * (b - a);
}

GeoPoint Panorama::ground_point(double azimuth, double distance) const {
  const GeoPoint& p = viewpoint.position;
  double a = deg2rad(azimuth);
  double lat = p.lat + rad2deg(distance * std::cos(a) / kEarthRadius);
  double lon = p.lon + rad2deg(distance * std::sin(a) / (kEarthRadius * std::cos(deg2rad(p.lat))));
  return {lat, lon, std::nullopt};
}

Panorama render_panorama(const DemGrid& dem, const Viewpoint& vp, const RenderConfig& cfg) {
  if (!(cfg.az_res > 0.0) || !(cfg.el_res > 0.0) || !(cfg.el_max > cfg.el_min) ||
      !(cfg.d_min > 0.0) || !(cfg.d_max > cfg.d_min))
    throw TerrainError("invalid render configuration");
  auto ground = sample_elevation(dem, vp.position);
  if (!ground) throw TerrainError("viewpoint outside DEM");

  Panorama pano;
  pano.viewpoint = vp;
  pano.eye_alt = *ground + vp.eye_height;
  pano.cfg = cfg;
  pano.n_cols = cfg.n_cols();
  pano.n_rows = cfg.n_rows();
  pano.skyline.assign(pano.n_cols, std::numeric_limits<double>::quiet_NaN());
  pano.hit_start.assign(pano.n_cols + 1, 0);

  const double lat0 = vp.position.lat;
  const double cos_lat0 = std::cos(deg2rad(lat0));
  const double fx0 = (vp.position.lon - dem.origin().lon) / dem.cell_size();
  const double fy0 = (lat0 - dem.origin().lat) / dem.cell_size();
  const double half_cell = 0.5 * std::min(dem.cell_meters_north(), dem.cell_meters_east());
  const double tan_res = std::tan(deg2rad(cfg.az_res));
  const double xmax = dem.n_cols() - 1, ymax = dem.n_rows() - 1;

  std::vector<double> ds;
  for (int c = 0; c < pano.n_cols; ++c) {
    const double az = deg2rad(pano.column_azimuth(c));
    // lattice units per meter of ground distance
    const double dfx = rad2deg(std::sin(az) / (kEarthRadius * cos_lat0)) / dem.cell_size();
    const double dfy = rad2deg(std::cos(az) / kEarthRadius) / dem.cell_size();

    // The ray leaves the (convex) lattice rectangle once and never re-enters.
    double d_end = cfg.d_max;
    auto clip = [&](double f0, double df, double fmax) {
      if (df > 1e-15) d_end = std::min(d_end, (fmax - f0) / df);
      else if (df < -1e-15) d_end = std::min(d_end, -f0 / df);
    };
    clip(fx0, dfx, xmax);
    clip(fy0, dfy, ymax);

    ds.clear();
    for (double d = cfg.d_min; d <= d_end; d += std::max(half_cell, d * tan_res)) ds.push_back(d);
    // Lattice-line crossings: the interpolated surface has its kinks there.
    auto crossings = [&](double f0, double df) {
      if (std::abs(df) < 1e-15) return;
      double fa = f0 + df * cfg.d_min, fb = f0 + df * d_end;
      if (fa > fb) std::swap(fa, fb);
      for (double k = std::ceil(fa); k <= fb; k += 1.0) {
        double d = (k - f0) / df;
        if (d >= cfg.d_min && d <= d_end) ds.push_back(d);
      }
    };
    if (d_end >= cfg.d_min) {
      crossings(fx0, dfx);
      crossings(fy0, dfy);
    }
    std::sort(ds.begin(), ds.end());

    double best = -std::numeric_limits<double>::infinity();
    for (double d : ds) {
      double h = sample_lattice(dem, fx0 + dfx * d, fy0 + dfy * d);
      if (std::isnan(h)) continue;  // nodata is transparent
      double el = apparent_elevation(h, pano.eye_alt, d, cfg.refraction);
      if (el > best) {
        best = el;
        pano.hits.push_back({static_cast<float>(el), static_cast<float>(d), static_cast<float>(h)});
      }
    }
    pano.hit_start[c + 1] = static_cast<std::uint32_t>(pano.hits.size());
    if (std::isfinite(best)) pano.skyline[c] = std::clamp(best, cfg.el_min, cfg.el_max);
  }
  return pano;
}

std::vector<PeakMark> project_peaks(const Panorama& pano, std::span<const Peak> catalog) {
  std::vector<PeakMark> marks;
  const GeoPoint& vp = pano.viewpoint.position;
  for (const Peak& peak : catalog) {
    LocalOffset off = local_offset(vp.lat, vp.lon, peak.position.lat, peak.position.lon);
    double d = off.distance();
    if (d < pano.cfg.d_min || d > pano.cfg.d_max) continue;
    double az = off.azimuth();
    double el = apparent_elevation(peak.position.alt.value_or(0.0), pano.eye_alt, d,
                                   pano.cfg.refraction);
    double sky = pano.skyline_at(az);
    if (!Panorama::no_terrain(sky) && el < sky - pano.cfg.vis_tol) continue;
    marks.push_back({peak, az, el, d});
  }
  return marks;
}

ImageBuffer panorama_image(const Panorama& pano) {
  ImageBuffer img(pano.n_cols, pano.n_rows, Rgb{70, 130, 230});
  for (int c = 0; c < pano.n_cols; ++c) {
    for (int r = pano.n_rows - 1; r >= 0; --r) {
      PanoramaCell cell = pano.cell(c, r);
      if (cell.kind == CellKind::Sky) break;
      double t = std::clamp(cell.distance / pano.cfg.d_max, 0.0, 1.0);
      auto v = static_cast<std::uint8_t>(40 + 200 * std::sqrt(t));
      img.set(c, r, {v, v, v});
    }
  }
  return img;
}

std::string panorama_sidecar_json(const Panorama& pano) {
  nlohmann::json j;
  j["az_res"] = pano.cfg.az_res;
  j["el_min"] = pano.cfg.el_min;
  j["el_max"] = pano.cfg.el_max;
  auto sky = nlohmann::json::array();
  for (double s : pano.skyline) {
    if (Panorama::no_terrain(s)) sky.push_back(nullptr);
    else sky.push_back(s);
  }
  j["skyline"] = std::move(sky);
  return j.dump();
}

}  // namespace snowwatch
