#include "snowwatch/vision.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "snowwatch/geo.hpp"

namespace snowwatch {
namespace {

std::vector<double> luma_plane(const ImageBuffer& img) {
  const int w = img.width(), h = img.height();
  std::vector<double> out(static_cast<size_t>(w) * h);
  auto px = img.data();
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = (0.299 * px[3 * i] + 0.587 * px[3 * i + 1] + 0.114 * px[3 * i + 2]) / 255.0;
  return out;
}

// 3-column horizontal box filter, border columns average what is available.
std::vector<double> box3(const std::vector<double>& luma, int w, int h) {
  std::vector<double> out(luma.size());
  for (int y = 0; y < h; ++y) {
    const double* row = &luma[static_cast<size_t>(y) * w];
    double* dst = &out[static_cast<size_t>(y) * w];
    for (int x = 0; x < w; ++x) {
      int x0 = std::max(0, x - 1), x1 = std::min(w - 1, x + 1);
      double acc = 0.0;
      for (int k = x0; k <= x1; ++k) acc += row[k];
      dst[x] = acc / (x1 - x0 + 1);
    }
  }
  return out;
}

}  // namespace

size_t SkylineProfile::defined_count() const {
  return static_cast<size_t>(
      std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.has_value(); }));
}

SkylineProfile extract_skyline(const ImageBuffer& img, const VisionConfig& cfg) {
  const int w = img.width(), h = img.height();
  const auto smooth = box3(luma_plane(img), w, h);
  auto at = [&](int y, int x) { return smooth[static_cast<size_t>(y) * w + x]; };
  const int win = std::max(1, cfg.brightness_window);

  std::vector<std::optional<int>> raw(w);
  for (int x = 0; x < w; ++x) {
    for (int r = 0; r + 1 < h; ++r) {
      double g = std::abs(at(r + 1, x) - at(r, x));
      if (g <= cfg.g_min) continue;
      double above = 0.0, below = 0.0;
      int na = 0, nb = 0;
      for (int k = std::max(0, r - win + 1); k <= r; ++k, ++na) above += at(k, x);
      for (int k = r + 1; k <= std::min(h - 1, r + win); ++k, ++nb) below += at(k, x);
      if (above / na - below / nb > cfg.b_min) {
        raw[x] = r;
        break;
      }
    }
  }

  SkylineProfile out;
  out.width = w;
  out.height = h;
  out.rows.resize(w);
  out.strength.resize(w);
  const int half = std::max(0, cfg.median_window / 2);
  std::vector<int> window;
  for (int x = 0; x < w; ++x) {
    if (!raw[x]) continue;
    window.clear();
    for (int k = std::max(0, x - half); k <= std::min(w - 1, x + half); ++k)
      if (raw[k]) window.push_back(*raw[k]);
    auto mid = window.begin() + (window.size() - 1) / 2;
    std::nth_element(window.begin(), mid, window.end());
    int r = *mid;
    out.rows[x] = r;
    double g = r + 1 < h ? std::abs(at(r + 1, x) - at(r, x)) : 0.0;
    out.strength[x] = std::clamp(g, 0.0, 1.0);
  }
  return out;
}

bool snow_pixel(Rgb px, const VisionConfig& cfg) {
  int mx = std::max({px.r, px.g, px.b});
  int mn = std::min({px.r, px.g, px.b});
  double v = mx / 255.0;
  double s = mx > 0 ? 1.0 - static_cast<double>(mn) / mx : 0.0;
  return v >= cfg.v_min && s <= cfg.s_max;
}

WeatherScore weather_score(const ImageBuffer& frame, std::span<const std::optional<int>> expected,
                           const VisionConfig& cfg) {
  if (static_cast<int>(expected.size()) != frame.width())
    throw VisionError("expected skyline width does not match frame width");
  SkylineProfile detected = extract_skyline(frame, cfg);
  WeatherScore score;
  if (detected.defined_fraction() >= cfg.min_detected_fraction) {
    int both = 0, matched = 0;
    for (int x = 0; x < frame.width(); ++x) {
      if (!detected.rows[x] || !expected[x]) continue;
      ++both;
      if (std::abs(*detected.rows[x] - *expected[x]) <= cfg.tol_px) ++matched;
    }
    score.visibility = both > 0 ? static_cast<double>(matched) / both : 0.0;
  }
  score.usable = score.visibility >= cfg.weather_threshold;
  return score;
}

FeatureVector mountain_features(const ImageBuffer& img, const VisionConfig& cfg) {
  const int w = img.width(), h = img.height();
  const auto luma = luma_plane(img);
  auto at = [&](int y, int x) { return luma[static_cast<size_t>(y) * w + x]; };

  FeatureVector f{};
  for (int y = 1; y + 1 < h; ++y) {
    const int base = y < h / 2 ? 0 : 8;
    for (int x = 1; x + 1 < w; ++x) {
      double gx = at(y, x + 1) - at(y, x - 1);
      double gy = at(y + 1, x) - at(y - 1, x);
      double mag = std::hypot(gx, gy);
      if (mag < 1e-9) continue;
      double dir = wrap360(rad2deg(std::atan2(gy, gx)));
      // nudge so exact axis directions do not straddle a bin edge through round-off
      int bin = static_cast<int>(std::floor(dir / 45.0 + 1e-6)) % 8;
      f[base + bin] += mag;
    }
  }
  for (int base : {0, 8}) {
    double sum = std::accumulate(f.begin() + base, f.begin() + base + 8, 0.0);
    if (sum > 0.0)
      for (int i = 0; i < 8; ++i) f[base + i] /= sum;
  }

  SkylineProfile sky = extract_skyline(img, cfg);
  f[16] = sky.defined_fraction();
  std::vector<double> diffs;
  std::optional<int> prev;
  for (const auto& r : sky.rows) {
    if (!r) continue;
    if (prev) diffs.push_back(*r - *prev);
    prev = r;
  }
  if (diffs.size() >= 2) {
    double mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / diffs.size();
    double var = 0.0;
    for (double d : diffs) var += (d - mean) * (d - mean);
    f[17] = std::sqrt(var / diffs.size()) / h;
  }
  return f;
}

ClassifierModel ClassifierModel::bias_only(double bias) {
  ClassifierModel m;
  m.weights[kFeatureCount] = bias;
  return m;
}

std::string ClassifierModel::to_json() const {
  nlohmann::json j;
  j["version"] = version;
  j["weights"] = weights;
  return j.dump();
}

ClassifierModel ClassifierModel::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw VisionError(std::string("classifier model: ") + e.what());
  }
  ClassifierModel m;
  if (!j.contains("version") || !j["version"].is_string())
    throw VisionError("classifier model: missing version");
  m.version = j["version"].get<std::string>();
  if (!j.contains("weights") || !j["weights"].is_array() ||
      j["weights"].size() != m.weights.size())
    throw VisionError("classifier model: expected 19 weights");
  for (size_t i = 0; i < m.weights.size(); ++i) {
    if (!j["weights"][i].is_number()) throw VisionError("classifier model: non-numeric weight");
    m.weights[i] = j["weights"][i].get<double>();
    if (!std::isfinite(m.weights[i])) throw VisionError("classifier model: non-finite weight");
  }
  return m;
}

Classification classify_features(const ClassifierModel& model, const FeatureVector& features) {
  if (model.version != ClassifierModel::kFeatureVersion)
    throw VisionError("classifier feature version mismatch: " + model.version);
  double score = model.bias();
  for (int i = 0; i < kFeatureCount; ++i) score += model.weights[i] * features[i];
  return {score >= 0.0, score};
}

Classification classify_mountain(const ClassifierModel& model, const ImageBuffer& img) {
  return classify_features(model, mountain_features(img));
}

ClassifierModel train_on_features(std::span<const std::pair<FeatureVector, bool>> labeled,
                                  const TrainingConfig& cfg) {
  if (labeled.size() < 2) throw VisionError("training needs at least two examples");
  bool has_pos = false, has_neg = false;
  for (const auto& [x, y] : labeled) (y ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) throw VisionError("training needs both labels");

  ClassifierModel model;
  auto& w = model.weights;
  std::vector<size_t> order(labeled.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937 rng(cfg.seed);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate / std::sqrt(static_cast<double>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t idx : order) {
      const auto& [x, label] = labeled[idx];
      const double y = label ? 1.0 : -1.0;
      double score = w[kFeatureCount];
      for (int i = 0; i < kFeatureCount; ++i) score += w[i] * x[i];
      const bool violated = y * score < 1.0;
      for (int i = 0; i < kFeatureCount; ++i)
        w[i] -= lr * (cfg.lambda * w[i] - (violated ? y * x[i] : 0.0));
      if (violated) w[kFeatureCount] += lr * y;
    }
  }
  return model;
}

ClassifierModel train_classifier(std::span<const std::pair<ImageBuffer, bool>> labeled,
                                 const TrainingConfig& cfg) {
  std::vector<std::pair<FeatureVector, bool>> features;
  features.reserve(labeled.size());
  for (const auto& [img, label] : labeled) features.emplace_back(mountain_features(img), label);
  return train_on_features(features, cfg);
}

}  // namespace snowwatch
