#pragma once

// Conversions between oracle rasters and library masks, and small twin builders.

#include <filesystem>
#include <random>
#include <string>

#include "oracles.hpp"
#include "twinseg/mask.hpp"
#include "twinseg/twin.hpp"

namespace testing_support {

inline twinseg::Mask to_mask(const oracle::Raster& r) {
  twinseg::Bitmap b(r.w, r.h);
  for (std::size_t i = 0; i < r.px.size(); ++i) b.pixels[i] = static_cast<std::uint8_t>(r.px[i]);
  return twinseg::encode_mask(b);
}

inline oracle::Raster to_raster(const twinseg::Mask& m) {
  const auto b = twinseg::decode_mask(m);
  oracle::Raster r(b.width, b.height);
  for (std::size_t i = 0; i < r.px.size(); ++i) r.px[i] = b.pixels[i] ? 1 : 0;
  return r;
}

inline oracle::Raster rect(int w, int h, int x0, int y0, int x1, int y1) {
  oracle::Raster r(w, h);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) r.at(x, y) = 1;
  return r;
}

inline twinseg::Mask rect_mask(int w, int h, int x0, int y0, int x1, int y1) { return to_mask(rect(w, h, x0, y0, x1, y1)); }

// Instance with constant depth `depth` over its mask.
inline twinseg::InstanceRecord instance(twinseg::InstanceId id, const twinseg::Mask& m, double depth, std::string label) {
  twinseg::DepthMap z(m.width(), m.height(), std::vector<double>(static_cast<std::size_t>(m.width()) * m.height(), depth));
  return twinseg::make_instance(id, m, z, std::move(label));
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("twinseg_test_" + name + "_" + std::to_string(std::random_device{}()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_support
