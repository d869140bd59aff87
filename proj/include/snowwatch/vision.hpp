#pragma once

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "snowwatch/image.hpp"

namespace snowwatch {

class VisionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every threshold used by the image analysis lives here.
struct VisionConfig {
  double g_min = 24.0 / 255.0;   // minimum vertical luma gradient at the boundary
  double b_min = 10.0 / 255.0;   // sky must be this much brighter than the terrain below
  int brightness_window = 9;     // rows averaged on each side of a boundary candidate
  int median_window = 7;         // columns
  double v_min = 0.65;           // snow: minimum HSV value
  double s_max = 0.25;           // snow: maximum HSV saturation
  int tol_px = 8;                // weather: skyline match tolerance
  double weather_threshold = 0.6;
  double min_detected_fraction = 0.25;
};

struct SkylineProfile {
  int width = 0;
  int height = 0;
  std::vector<std::optional<int>> rows;         // boundary row per column (last sky row)
  std::vector<std::optional<double>> strength;  // gradient magnitude in [0, 1]

  size_t defined_count() const;
  double defined_fraction() const {
    return width > 0 ? static_cast<double>(defined_count()) / width : 0.0;
  }
};

SkylineProfile extract_skyline(const ImageBuffer& img, const VisionConfig& cfg = {});

bool snow_pixel(Rgb px, const VisionConfig& cfg = {});

struct WeatherScore {
  double visibility = 0.0;
  bool usable = false;
};

WeatherScore weather_score(const ImageBuffer& frame,
                           std::span<const std::optional<int>> expected_rows,
                           const VisionConfig& cfg = {});

inline constexpr int kFeatureCount = 18;
using FeatureVector = std::array<double, kFeatureCount>;

// [0, 8): gradient-direction histogram of the top half (45 degree bins over the
// full circle, magnitude weighted, L1-normalized); [8, 16): the bottom half;
// 16: skyline coverage; 17: skyline roughness.
FeatureVector mountain_features(const ImageBuffer& img, const VisionConfig& cfg = {});

struct ClassifierModel {
  static constexpr const char* kFeatureVersion = "mf-v1";

  std::string version = kFeatureVersion;
  std::array<double, kFeatureCount + 1> weights{};  // last entry is the bias

  double bias() const { return weights[kFeatureCount]; }
  static ClassifierModel bias_only(double bias);

  std::string to_json() const;
  static ClassifierModel from_json(const std::string& text);
};

struct Classification {
  bool is_mountain = false;
  double score = 0.0;
};

Classification classify_features(const ClassifierModel& model, const FeatureVector& features);
Classification classify_mountain(const ClassifierModel& model, const ImageBuffer& img);

struct TrainingConfig {
  double lambda = 0.01;
  int epochs = 200;
  double learning_rate = 0.1;  // divided by sqrt(epoch)
  unsigned seed = 20150629u;
};

// Linear soft-margin classifier: hinge loss with L2 regularization, trained by
// per-sample sub-gradient descent with a seeded shuffle.
ClassifierModel train_on_features(std::span<const std::pair<FeatureVector, bool>> labeled,
                                  const TrainingConfig& cfg = {});
ClassifierModel train_classifier(std::span<const std::pair<ImageBuffer, bool>> labeled,
                                 const TrainingConfig& cfg = {});

}  // namespace snowwatch
