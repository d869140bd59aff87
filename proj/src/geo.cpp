#include "snowwatch/geo.hpp"

#include <charconv>
#include <vector>

namespace snowwatch {

BBox parse_bbox(const std::string& text) {
  std::vector<double> v;
  size_t start = 0;
  while (start <= text.size()) {
    size_t end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    std::string part = text.substr(start, end - start);
    try {
      size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw GeoError("bbox: non-numeric value '" + part + "'");
    }
    start = end + 1;
  }
  if (v.size() != 4) throw GeoError("bbox: expected lat_min,lat_max,lon_min,lon_max");
  BBox b{v[0], v[1], v[2], v[3]};
  if (!b.valid()) throw GeoError("bbox: min must be below max");
  return b;
}

}  // namespace snowwatch
