#include "snowwatch/exif.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <json.hpp>

#include "snowwatch/geo.hpp"

namespace snowwatch {
namespace {

bool focal_in_range(double f) { return std::isfinite(f) && f >= 1.0 && f <= 2000.0; }

// Bounds-checked view over the TIFF block that follows "Exif\0\0".
class Tiff {
 public:
  explicit Tiff(std::span<const std::uint8_t> d) : d_(d) {
    if (d_.size() < 8) return;
    if (d_[0] == 'I' && d_[1] == 'I') {
      le_ = true;
    } else if (d_[0] == 'M' && d_[1] == 'M') {
      le_ = false;
    } else {
      return;
    }
    ok_ = u16(2) == 42;
  }

  bool ok() const { return ok_; }
  std::uint32_t first_ifd() const { return u32(4); }

  std::uint16_t u16(size_t off) const {
    if (off + 2 > d_.size()) return 0;
    return le_ ? std::uint16_t(d_[off] | d_[off + 1] << 8)
               : std::uint16_t(d_[off] << 8 | d_[off + 1]);
  }
  std::uint32_t u32(size_t off) const {
    if (off + 4 > d_.size()) return 0;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint32_t b = d_[off + (le_ ? 3 - i : i)];
      v = (v << 8) | b;
    }
    return v;
  }

  struct Entry {
    std::uint16_t tag = 0, type = 0;
    std::uint32_t count = 0;
    size_t value_off = 0;  // where the value bytes live
  };

  static size_t type_size(std::uint16_t type) {
    switch (type) {
      case 1: case 2: case 6: case 7: return 1;
      case 3: case 8: return 2;
      case 4: case 9: case 11: return 4;
      case 5: case 10: case 12: return 8;
      default: return 0;
    }
  }

  std::vector<Entry> entries(std::uint32_t ifd) const {
    std::vector<Entry> out;
    if (ifd == 0 || ifd + 2 > d_.size()) return out;
    const std::uint16_t n = u16(ifd);
    for (std::uint16_t i = 0; i < n; ++i) {
      size_t e = ifd + 2 + 12u * i;
      if (e + 12 > d_.size()) break;
      Entry en{u16(e), u16(e + 2), u32(e + 4), 0};
      size_t bytes = type_size(en.type) * en.count;
      if (bytes == 0) continue;
      en.value_off = bytes <= 4 ? e + 8 : u32(e + 8);
      if (en.value_off + bytes > d_.size()) continue;
      out.push_back(en);
    }
    return out;
  }

  std::optional<double> rational(const Entry& e, size_t index) const {
    if (e.type != 5 || index >= e.count) return std::nullopt;
    std::uint32_t num = u32(e.value_off + 8 * index), den = u32(e.value_off + 8 * index + 4);
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / den;
  }
  std::optional<double> number(const Entry& e) const {
    switch (e.type) {
      case 1: return d_[e.value_off];
      case 3: return u16(e.value_off);
      case 4: return u32(e.value_off);
      case 5: return rational(e, 0);
      default: return std::nullopt;
    }
  }
  std::string ascii(const Entry& e) const {
    if (e.type != 2) return {};
    std::string s(reinterpret_cast<const char*>(&d_[e.value_off]), e.count);
    if (auto nul = s.find('\0'); nul != std::string::npos) s.resize(nul);
    return s;
  }

 private:
  std::span<const std::uint8_t> d_;
  bool le_ = true;
  bool ok_ = false;
};

std::optional<std::span<const std::uint8_t>> find_exif_block(std::span<const std::uint8_t> b) {
  if (b.size() < 4 || b[0] != 0xFF || b[1] != 0xD8) return std::nullopt;
  size_t pos = 2;
  while (pos + 4 <= b.size()) {
    if (b[pos] != 0xFF) return std::nullopt;
    std::uint8_t marker = b[pos + 1];
    if (marker == 0xD8 || (marker >= 0xD0 && marker <= 0xD7) || marker == 0x01) {
      pos += 2;
      continue;
    }
    if (marker == 0xDA || marker == 0xD9) return std::nullopt;  // image data starts
    size_t len = (size_t(b[pos + 2]) << 8) | b[pos + 3];
    if (len < 2 || pos + 2 + len > b.size()) return std::nullopt;
    auto seg = b.subspan(pos + 4, len - 2);
    static constexpr std::uint8_t kTag[] = {'E', 'x', 'i', 'f', 0, 0};
    if (marker == 0xE1 && seg.size() > 6 && std::equal(kTag, kTag + 6, seg.begin()))
      return seg.subspan(6);
    pos += 2 + len;
  }
  return std::nullopt;
}

std::optional<double> dms(const Tiff& t, const Tiff::Entry& e) {
  auto d = t.rational(e, 0), m = t.rational(e, 1), s = t.rational(e, 2);
  if (!d || !m || !s) return std::nullopt;
  return *d + *m / 60.0 + *s / 3600.0;
}

}  // namespace

ExifMeta parse_exif(std::span<const std::uint8_t> bytes) {
  ExifMeta meta;
  auto block = find_exif_block(bytes);
  if (!block) return meta;
  Tiff t(*block);
  if (!t.ok()) return meta;

  std::uint32_t exif_ifd = 0, gps_ifd = 0;
  for (const auto& e : t.entries(t.first_ifd())) {
    if (e.tag == 0x8769) exif_ifd = t.u32(e.value_off);
    if (e.tag == 0x8825) gps_ifd = t.u32(e.value_off);
  }

  for (const auto& e : t.entries(exif_ifd)) {
    if (e.tag == 0x9003) {
      meta.datetime_original = parse_timestamp(t.ascii(e));
    } else if (e.tag == 0x920A) {
      if (auto f = t.rational(e, 0); f && focal_in_range(*f)) meta.focal_length = f;
    } else if (e.tag == 0xA405) {
      if (auto f = t.number(e); f && focal_in_range(*f)) meta.focal_length_35mm = f;
    }
  }

  std::string lat_ref, lon_ref;
  std::optional<double> lat, lon, alt;
  int alt_ref = 0;
  for (const auto& e : t.entries(gps_ifd)) {
    switch (e.tag) {
      case 1: lat_ref = t.ascii(e); break;
      case 2: lat = dms(t, e); break;
      case 3: lon_ref = t.ascii(e); break;
      case 4: lon = dms(t, e); break;
      case 5: alt_ref = static_cast<int>(t.number(e).value_or(0)); break;
      case 6: alt = t.rational(e, 0); break;
      default: break;
    }
  }
  if (lat && lon && !lat_ref.empty() && !lon_ref.empty()) {
    double la = lat_ref[0] == 'S' ? -*lat : *lat;
    double lo = lon_ref[0] == 'W' ? -*lon : *lon;
    if (la >= -90.0 && la <= 90.0 && lo >= -180.0 && lo < 180.0) {
      meta.lat = la;
      meta.lon = lo;
    }
  }
  if (alt) {
    double a = alt_ref == 1 ? -*alt : *alt;
    if (a >= -500.0 && a <= 9000.0) meta.alt = a;
  }
  return meta;
}

ExifMeta parse_sidecar(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw SidecarError(std::string("sidecar is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw SidecarError("sidecar must be a JSON object");

  auto num = [&](const char* key, double lo, double hi) -> std::optional<double> {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number()) return std::nullopt;
    double v = it->get<double>();
    if (!std::isfinite(v) || v < lo || v > hi) return std::nullopt;
    return v;
  };
  ExifMeta m;
  m.lat = num("lat", -90.0, 90.0);
  m.lon = num("lon", -180.0, 180.0);
  if (m.lon && *m.lon == 180.0) m.lon = -180.0;
  m.alt = num("alt", -500.0, 9000.0);
  m.focal_length = num("focal_length_mm", 1.0, 2000.0);
  m.focal_length_35mm = num("focal_length_35mm_mm", 1.0, 2000.0);
  if (auto it = j.find("taken_at"); it != j.end() && it->is_string())
    m.datetime_original = parse_timestamp(it->get<std::string>());
  return m;
}

ExifMeta read_exif(std::span<const std::uint8_t> bytes, const std::optional<ExifMeta>& sidecar) {
  ExifMeta m = parse_exif(bytes);
  if (!sidecar) return m;
  const ExifMeta& s = *sidecar;
  if (s.lat) m.lat = s.lat;
  if (s.lon) m.lon = s.lon;
  if (s.alt) m.alt = s.alt;
  if (s.datetime_original) m.datetime_original = s.datetime_original;
  if (s.focal_length) m.focal_length = s.focal_length;
  if (s.focal_length_35mm) m.focal_length_35mm = s.focal_length_35mm;
  return m;
}

double hfov_prior(const ExifMeta& exif) {
  std::optional<double> f35 = exif.focal_length_35mm;
  if (!f35 && exif.focal_length) f35 = *exif.focal_length * kCropFactor;
  if (!f35 || !(*f35 > 0.0)) return kDefaultHfov;
  return std::clamp(rad2deg(2.0 * std::atan(18.0 / *f35)), 5.0, 120.0);
}

}  // namespace snowwatch
