#include "snowwatch/alignment.hpp"

#include <algorithm>
#include <limits>
#include <tuple>

#include <fmt/format.h>

namespace snowwatch {

double pixel_azimuth(const CameraPose& pose, double column, int width) {
  double half = width / 2.0;
  return wrap360(pose.yaw +
                 rad2deg(std::atan((column - half) / half * std::tan(deg2rad(pose.hfov / 2)))));
}

double pixel_elevation(const CameraPose& pose, double row, int width, int height) {
  double half = height / 2.0;
  double vfov = pose.vfov(width, height);
  return pose.pitch - rad2deg(std::atan((row - half) / half * std::tan(deg2rad(vfov / 2))));
}

std::vector<SkylineAngle> photo_skyline_angles(const SkylineProfile& profile,
                                               const CameraPose& pose, int width, int height) {
  if (profile.width != width || static_cast<int>(profile.rows.size()) != width)
    throw AlignmentError("profile width does not match photo width");
  std::vector<SkylineAngle> out;
  for (int c = 0; c < width; ++c) {
    if (!profile.rows[c]) continue;
    out.push_back({c, pixel_azimuth(pose, c, width),
                   pixel_elevation(pose, *profile.rows[c] + kEdgeOffset, width, height)});
  }
  return out;
}

void validate_warp(const WarpMap& warp, int width, int height, const RenderConfig& bounds) {
  const auto& pts = warp.points;
  if (pts.size() < 2) throw WarpError("warp needs at least two control points");
  int direction = 0;
  for (size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    if (!(p.px >= 0 && p.px <= width - 1 && p.py >= 0 && p.py <= height - 1))
      throw WarpError(fmt::format("control point {} outside photo raster", i));
    if (!(p.azimuth >= 0.0 && p.azimuth < 360.0))
      throw WarpError(fmt::format("control point {} azimuth outside [0, 360)", i));
    if (!(p.elevation >= bounds.el_min && p.elevation <= bounds.el_max))
      throw WarpError(fmt::format("control point {} elevation outside panorama", i));
    if (i == 0) continue;
    if (!(p.px > pts[i - 1].px))
      throw WarpError("control point columns must be strictly increasing");
    double step = wrap180(p.azimuth - pts[i - 1].azimuth);
    int dir = step > 0 ? 1 : (step < 0 ? -1 : 0);
    if (dir != 0) {
      if (direction != 0 && dir != direction)
        throw WarpError("control point azimuths must be monotone");
      direction = dir;
    }
  }
}

std::optional<double> skyline_score(const SkylineProfile& profile, const Panorama& pano,
                                    const CameraPose& pose, double min_usable_fraction) {
  double sum = 0.0;
  int usable = 0;
  for (const auto& a : photo_skyline_angles(profile, pose, profile.width, profile.height)) {
    double sky = pano.skyline_at(a.azimuth);
    if (Panorama::no_terrain(sky)) continue;
    sum += std::abs(a.elevation - sky);
    ++usable;
  }
  if (usable == 0 || usable < min_usable_fraction * profile.width) return std::nullopt;
  return sum / usable;
}

namespace {

struct Candidate {
  double score = std::numeric_limits<double>::infinity();
  double yaw = 0.0;
  double pitch = 0.0;
  double hfov = 0.0;

  bool better_than(const Candidate& o) const {
    return std::tie(score, yaw, pitch, hfov) < std::tie(o.score, o.yaw, o.pitch, o.hfov);
  }
};

}  // namespace

AlignmentResult estimate_pose(const SkylineProfile& profile, const Panorama& pano,
                              const std::optional<CameraPose>& prior, const AlignConfig& cfg) {
  const int width = profile.width, height = profile.height;
  if (width <= 0 || static_cast<int>(profile.rows.size()) != width)
    throw AlignmentError("profile width mismatch");
  if (profile.defined_fraction() < cfg.min_usable_fraction)
    throw AlignmentError("skyline too sparse");
  if (std::all_of(pano.skyline.begin(), pano.skyline.end(), Panorama::no_terrain))
    throw AlignmentError("panorama has no terrain");

  const double prior_hfov = prior ? prior->hfov : cfg.default_hfov;
  const double yaw_step = cfg.yaw_step > 0.0 ? cfg.yaw_step : 2.0 * pano.cfg.az_res;
  const int n_yaw = static_cast<int>(std::lround(360.0 / yaw_step));
  const int n_pitch =
      static_cast<int>(std::floor((cfg.pitch_max - cfg.pitch_min) / cfg.pitch_step + 1e-9)) + 1;
  std::vector<double> hfovs = {prior_hfov * (1.0 - cfg.hfov_spread), prior_hfov,
                               prior_hfov * (1.0 + cfg.hfov_spread)};
  for (double& f : hfovs) f = std::clamp(f, 5.0 + 1e-9, 120.0);
  const double min_usable = cfg.min_usable_fraction * width;

  std::vector<int> cols;
  std::vector<double> rows;
  for (int c = 0; c < width; ++c) {
    if (!profile.rows[c]) continue;
    cols.push_back(c);
    rows.push_back(*profile.rows[c]);
  }

  Candidate best;
  std::vector<Candidate> per_yaw;  // best pitch for every (hfov, yaw)
  std::vector<double> az_off(cols.size()), el_off(cols.size()), diff(cols.size());
  const double inv_res = 1.0 / pano.cfg.az_res;
  const int n_cols = pano.n_cols;

  for (double hfov : hfovs) {
    CameraPose base{0.0, 0.0, hfov};
    for (size_t i = 0; i < cols.size(); ++i) {
      // pixel_* wrap to [0, 360); keep the signed offset here
      az_off[i] = wrap180(pixel_azimuth(base, cols[i], width));
      el_off[i] = pixel_elevation(base, rows[i] + kEdgeOffset, width, height);
    }
    for (int iy = 0; iy < n_yaw; ++iy) {
      const double yaw = iy * yaw_step;
      size_t n = 0;
      for (size_t i = 0; i < cols.size(); ++i) {
        double x = (yaw + az_off[i]) * inv_res;
        double fl = std::floor(x);
        double t = x - fl;
        int c0 = static_cast<int>(fl) % n_cols;
        if (c0 < 0) c0 += n_cols;
        int c1 = c0 + 1 == n_cols ? 0 : c0 + 1;
        double a = pano.skyline[c0], b = pano.skyline[c1];
        if (std::isnan(a) || std::isnan(b)) continue;
        // photo elevation = pitch + el_off; |pitch - (sky - el_off)|
        diff[n++] = a + t * (b - a) - el_off[i];
      }
      if (n == 0 || n < min_usable) continue;
      Candidate local;
      for (int ip = 0; ip < n_pitch; ++ip) {
        const double pitch = cfg.pitch_min + ip * cfg.pitch_step;
        double sum = 0.0;
        for (size_t i = 0; i < n; ++i) sum += std::abs(pitch - diff[i]);
        Candidate cand{sum / n, yaw, pitch, hfov};
        if (cand.better_than(local)) local = cand;
      }
      per_yaw.push_back(local);
      if (local.better_than(best)) best = local;
    }
  }
  if (!std::isfinite(best.score)) throw AlignmentError("no candidate pose has enough usable columns");

  // Coordinate descent at the winning field of view. Yaw moves by halving
  // steps; along pitch the mean absolute error is minimized exactly by the
  // median of the per-column differences.
  auto diffs_at = [&](double yaw, double hfov, std::vector<double>& out) {
    out.clear();
    CameraPose p{wrap360(yaw), 0.0, hfov};
    for (size_t i = 0; i < cols.size(); ++i) {
      double sky = pano.skyline_at(pixel_azimuth(p, cols[i], width));
      if (Panorama::no_terrain(sky)) continue;
      out.push_back(sky - pixel_elevation(p, rows[i] + kEdgeOffset, width, height));
    }
    return !out.empty() && out.size() >= min_usable;
  };
  auto mean_abs = [](const std::vector<double>& d, double pitch) {
    double sum = 0.0;
    for (double v : d) sum += std::abs(pitch - v);
    return sum / d.size();
  };
  std::vector<double> work;
  auto best_pitch = [&](const std::vector<double>& d) {
    work = d;
    auto mid = work.begin() + (work.size() - 1) / 2;
    std::nth_element(work.begin(), mid, work.end());
    return std::clamp(*mid, -20.0, 20.0);
  };

  auto refine = [&](const Candidate& start) {
    CameraPose pose{start.yaw, start.pitch, start.hfov};
    double score = start.score;
    std::vector<double> d;
    auto try_yaw = [&](double yaw) {
      if (!diffs_at(yaw, pose.hfov, d)) return false;
      double pitch = best_pitch(d);
      double s = mean_abs(d, pitch);
      if (s >= score) return false;
      score = s;
      pose = {wrap360(yaw), pitch, pose.hfov};
      return true;
    };
    if (diffs_at(pose.yaw, pose.hfov, d)) {
      double pitch = best_pitch(d);
      double s = mean_abs(d, pitch);
      if (s < score) {
        score = s;
        pose.pitch = pitch;
      }
    }
    for (int round = 0; round < cfg.refine_rounds; ++round) {
      for (double ys = yaw_step; ys >= 0.5 * cfg.refine_min_step; ys *= 0.5) {
        for (int guard = 0; guard < 64; ++guard)
          if (!try_yaw(pose.yaw + ys) && !try_yaw(pose.yaw - ys)) break;
      }
    }
    return Candidate{score, pose.yaw, pose.pitch, pose.hfov};
  };

  // The coarse pitch grid can rank a neighboring basin first, so the few best
  // grid cells with well separated yaws are all refined.
  std::sort(per_yaw.begin(), per_yaw.end(),
            [](const Candidate& a, const Candidate& b) { return a.better_than(b); });
  // Refinement keeps the field of view fixed, so each candidate fov gets its own starts.
  std::vector<Candidate> starts;
  for (double hfov : hfovs) {
    int taken = 0;
    for (const auto& c : per_yaw) {
      if (taken >= std::max(1, cfg.refine_starts)) break;
      if (c.hfov != hfov) continue;
      bool separate = std::all_of(starts.begin(), starts.end(), [&](const Candidate& o) {
        return o.hfov != hfov || std::abs(wrap180(c.yaw - o.yaw)) >= cfg.start_separation;
      });
      if (!separate) continue;
      starts.push_back(c);
      ++taken;
    }
  }
  Candidate winner;
  for (const auto& st : starts) {
    Candidate r = refine(st);
    if (r.better_than(winner)) winner = r;
  }
  CameraPose pose{winner.yaw, winner.pitch, winner.hfov};
  double score = winner.score;

  AlignmentResult result;
  result.pose = pose;
  result.score = score;
  result.confidence = confidence_from_score(score);
  result.source = AlignmentSource::Auto;
  // Ambiguity compares the best cell with the median over yaw (each at its
  // best pitch); a featureless skyline scores the same at every yaw.
  const double median = per_yaw[(per_yaw.size() - 1) / 2].score;
  result.ambiguous = (median - best.score) < cfg.ambiguity_gap;
  return result;
}

std::vector<std::optional<int>> expected_skyline_rows(const Panorama& pano, const CameraPose& pose,
                                                      int width, int height) {
  std::vector<std::optional<int>> rows(width);
  const double half = height / 2.0;
  const double tan_half_v = std::tan(deg2rad(pose.vfov(width, height) / 2));
  for (int c = 0; c < width; ++c) {
    double sky = pano.skyline_at(pixel_azimuth(pose, c, width));
    if (Panorama::no_terrain(sky)) continue;
    double r = half + half * std::tan(deg2rad(pose.pitch - sky)) / tan_half_v;
    long ri = std::lround(r - kEdgeOffset);
    if (ri >= 0 && ri < height) rows[c] = static_cast<int>(ri);
  }
  return rows;
}

PixelMapping build_mapping(const CameraPose& pose, int width, int height) {
  PixelMapping m;
  m.width = width;
  m.height = height;
  m.azimuth.resize(static_cast<size_t>(width) * height);
  m.elevation.resize(m.azimuth.size());
  std::vector<double> az(width), el(height);
  for (int x = 0; x < width; ++x) az[x] = pixel_azimuth(pose, x, width);
  for (int y = 0; y < height; ++y) el[y] = pixel_elevation(pose, y, width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      m.azimuth[m.index(x, y)] = az[x];
      m.elevation[m.index(x, y)] = el[y];
    }
  }
  return m;
}

PixelMapping apply_warp(const PixelMapping& mapping, const WarpMap& warp) {
  const auto& pts = warp.points;
  if (pts.empty()) throw WarpError("warp has no control points");
  std::vector<double> cols, az_off, el_off;
  for (const auto& p : pts) {
    int x = static_cast<int>(std::lround(p.px));
    int y = static_cast<int>(std::lround(p.py));
    if (x < 0 || x >= mapping.width || y < 0 || y >= mapping.height)
      throw WarpError("control point outside photo raster");
    cols.push_back(p.px);
    az_off.push_back(wrap180(p.azimuth - mapping.azimuth[mapping.index(x, y)]));
    el_off.push_back(p.elevation - mapping.elevation[mapping.index(x, y)]);
  }

  PixelMapping out = mapping;
  size_t seg = 0;
  for (int x = 0; x < mapping.width; ++x) {
    double da, de;
    if (x <= cols.front()) {
      da = az_off.front();
      de = el_off.front();
    } else if (x >= cols.back()) {
      da = az_off.back();
      de = el_off.back();
    } else {
      while (seg + 1 < cols.size() && cols[seg + 1] < x) ++seg;
      double t = (x - cols[seg]) / (cols[seg + 1] - cols[seg]);
      da = az_off[seg] + t * (az_off[seg + 1] - az_off[seg]);
      de = el_off[seg] + t * (el_off[seg + 1] - el_off[seg]);
    }
    if (da == 0.0 && de == 0.0) continue;
    for (int y = 0; y < mapping.height; ++y) {
      size_t i = mapping.index(x, y);
      out.azimuth[i] = wrap360(mapping.azimuth[i] + da);
      out.elevation[i] = mapping.elevation[i] + de;
    }
  }
  return out;
}

}  // namespace snowwatch
