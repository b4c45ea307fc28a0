#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "twinseg/error.hpp"
#include "twinseg/mask.hpp"

namespace twinseg {

// Dense per-pixel depth, row-major. Smaller values are nearer the camera.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  DepthMap() = default;
  DepthMap(int w, int h, double fill = 0.0) : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}
  DepthMap(int w, int h, std::vector<double> v) : width(w), height(h), values(std::move(v)) {
    if (values.size() != static_cast<std::size_t>(w) * h) {
      throw ValidationError("", "depth map has " + std::to_string(values.size()) + " values for " + std::to_string(w) +
                                    "x" + std::to_string(h));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw ValidationError("", "depth map contains a non-finite value");
    }
  }

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct DepthStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double variance = 0.0;  // population variance
  std::uint64_t pixel_count = 0;

  friend bool operator==(const DepthStats&, const DepthStats&) = default;
};

// Mean, extrema and population variance of depth over the mask's foreground.
inline DepthStats compute_depth_stats(const Mask& mask, const DepthMap& depth) {
  if (mask.width() != depth.width || mask.height() != depth.height) {
    throw ValidationError("", "mask is " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()) +
                                  " but depth map is " + std::to_string(depth.width) + "x" + std::to_string(depth.height));
  }
  DepthStats s;
  s.min = std::numeric_limits<double>::infinity();
  s.max = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  mask.for_each_foreground_run([&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const double z = depth.values[i];
      sum += z;
      s.min = std::min(s.min, z);
      s.max = std::max(s.max, z);
    }
    s.pixel_count += e - b;
  });
  if (s.pixel_count == 0) throw ValidationError("", "depth statistics need at least one foreground pixel");
  s.mean = sum / static_cast<double>(s.pixel_count);
  // Rounding can push the mean a hair outside [min, max] on near-constant fields.
  s.mean = std::clamp(s.mean, s.min, s.max);
  double sq = 0.0;
  mask.for_each_foreground_run([&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const double d = depth.values[i] - s.mean;
      sq += d * d;
    }
  });
  s.variance = sq / static_cast<double>(s.pixel_count);
  return s;
}

}  // namespace twinseg
