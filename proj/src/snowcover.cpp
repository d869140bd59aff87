#include "snowwatch/snowcover.hpp"

namespace snowwatch {

const char* to_string(MaskClass c) {
  switch (c) {
    case MaskClass::Sky: return "SKY";
    case MaskClass::Near: return "NEAR";
    case MaskClass::Ground: return "GROUND";
    case MaskClass::Snow: return "SNOW";
  }
  return "?";
}

Rgb mask_color(MaskClass c) {
  switch (c) {
    case MaskClass::Sky: return {135, 206, 235};
    case MaskClass::Near: return {128, 128, 128};
    case MaskClass::Ground: return {139, 90, 43};
    case MaskClass::Snow: return {255, 255, 255};
  }
  return {};
}

MaskCounts EnvironmentalMask::counts() const {
  MaskCounts c;
  for (size_t i = 0; i < classes.size(); ++i) {
    switch (classes[i]) {
      case MaskClass::Sky: ++c.sky; break;
      case MaskClass::Near: ++c.near; break;
      case MaskClass::Ground: ++c.ground; break;
      case MaskClass::Snow: ++c.snow; break;
    }
    c.eligible += eligible[i];
  }
  return c;
}

EnvironmentalMask build_mask(const ImageBuffer& photo, const PixelMapping& mapping,
                             const Panorama& pano, const MaskConfig& cfg) {
  if (photo.width() != mapping.width || photo.height() != mapping.height)
    throw SnowcoverError("photo and mapping dimensions differ");
  EnvironmentalMask mask;
  mask.width = photo.width();
  mask.height = photo.height();
  mask.params = cfg;
  const size_t n = static_cast<size_t>(mask.width) * mask.height;
  mask.classes.assign(n, MaskClass::Sky);
  mask.eligible.assign(n, 0);
  const VisionConfig snow = cfg.snow_thresholds();

  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const size_t i = mapping.index(x, y);
      const double el = mapping.elevation[i];
      if (el > pano.cfg.el_max) continue;  // SKY
      if (el < pano.cfg.el_min) {
        mask.classes[i] = MaskClass::Near;
        continue;
      }
      PanoramaCell cell = pano.cell_at(mapping.azimuth[i], el);
      if (cell.kind == CellKind::Sky) continue;
      if (cell.distance < cfg.d_near) {
        mask.classes[i] = MaskClass::Near;
        continue;
      }
      if (cell.altitude >= cfg.alt_threshold) {
        mask.eligible[i] = 1;
        mask.classes[i] = snow_pixel(photo.at(x, y), snow) ? MaskClass::Snow : MaskClass::Ground;
      } else {
        mask.classes[i] = MaskClass::Ground;
      }
    }
  }
  return mask;
}

ImageBuffer mask_image(const EnvironmentalMask& mask) {
  ImageBuffer img(mask.width, mask.height);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) img.set(x, y, mask_color(mask.at(x, y)));
  return img;
}

SnowIndexRecord snow_index(const EnvironmentalMask& mask, const MaskConfig& cfg) {
  if (!(mask.params == cfg)) throw SnowcoverError("configuration differs from mask parameters");
  MaskCounts c = mask.counts();
  SnowIndexRecord rec;
  rec.eligible_pixels = c.eligible;
  if (c.eligible > 0) rec.snow_index = static_cast<double>(c.snow) / c.eligible;
  return rec;
}

std::optional<size_t> select_daily_frame(std::span<const WebcamFrame> frames) {
  if (frames.empty()) return std::nullopt;
  auto day = utc_day(frames.front().timestamp);
  for (const auto& f : frames)
    if (utc_day(f.timestamp) != day) throw SnowcoverError("frames span more than one UTC day");
  std::optional<size_t> best;
  for (size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (!f.weather.usable) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = frames[*best];
    if (f.weather.visibility > b.weather.visibility ||
        (f.weather.visibility == b.weather.visibility && f.timestamp < b.timestamp))
      best = i;
  }
  return best;
}

std::optional<SnowIndexRecord> daily_webcam_index(std::span<const WebcamFrame> frames,
                                                  const PixelMapping& mapping,
                                                  const Panorama& pano, const MaskConfig& cfg) {
  auto pick = select_daily_frame(frames);
  if (!pick) return std::nullopt;
  const auto& frame = frames[*pick];
  SnowIndexRecord rec = snow_index(build_mask(frame.image, mapping, pano, cfg), cfg);
  rec.media_id = frame.media_id;
  rec.timestamp = frame.timestamp;
  return rec;
}

}  // namespace snowwatch
