#pragma once

// Debug overlays: one PNG per frame. Without ground truth the prediction is
// drawn green; with it, hits are green, false positives red, misses blue and
// the ground-truth boundary white.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "twinseg/metrics.hpp"
#include "twinseg/png_io.hpp"
#include "twinseg/rewards.hpp"
#include "twinseg/twin.hpp"

namespace twinseg {

inline RgbImage overlay_frame(const Mask& pred, const Mask* gt) {
  RgbImage img(pred.width(), pred.height());
  const Bitmap p = decode_mask(pred);
  Bitmap g(pred.width(), pred.height());
  Bitmap edge(pred.width(), pred.height());
  if (gt) {
    g = decode_mask(*gt);
    edge = mask_boundary(g);
  }
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const bool in_p = p.at(x, y), in_g = g.at(x, y);
      std::array<std::uint8_t, 3> c{0, 0, 0};
      if (in_p && (in_g || !gt)) c = {40, 200, 60};
      else if (in_p) c = {220, 40, 40};
      else if (in_g) c = {40, 80, 220};
      if (edge.at(x, y)) c = {255, 255, 255};
      img.set(x, y, c);
    }
  }
  return img;
}

// Writes <dir>/<stem>_t<t>.png for every twin frame and returns the paths.
inline std::vector<std::filesystem::path> render_overlays(const std::filesystem::path& dir, const std::string& stem,
                                                          const TwinSequence& twin, const AnswerBlock& answer,
                                                          const FrameMasks* gt = nullptr) {
  const auto dims = twin.raster_size();
  if (!dims) throw ValidationError("twin", "twin has no instances to size the raster");
  const auto resolved = resolve_answer(answer, twin, dims->first, dims->second);
  if (!resolved.unresolved.empty()) {
    throw ValidationError("answer", "instance " + std::to_string(resolved.unresolved.front()) + " is not in the twin");
  }
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out;
  for (std::size_t f = 0; f < twin.frames.size(); ++f) {
    const int t = twin.frames[f].t;
    const Mask* g = nullptr;
    if (gt) {
      for (std::size_t k = 0; k < gt->t.size(); ++k) {
        if (gt->t[k] == t) g = &gt->masks[k];
      }
    }
    const Mask none = Mask::empty(dims->first, dims->second);
    const auto path = dir / (stem + "_t" + std::to_string(t) + ".png");
    write_rgb_png(path, overlay_frame(resolved.frames[f], gt ? (g ? g : &none) : nullptr));
    out.push_back(path);
  }
  return out;
}

}  // namespace twinseg
