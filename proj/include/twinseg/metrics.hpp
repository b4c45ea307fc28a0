#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "twinseg/error.hpp"
#include "twinseg/mask.hpp"

namespace twinseg {

struct SequenceEval {
  std::vector<double> frame_iou;
  double j = 0.0;
  double f = 0.0;
  double jf = 0.0;
};

struct DatasetEval {
  double giou = 0.0;
  double ciou = 0.0;
  std::size_t n_samples = 0;
};

// Tolerance matching the DAVIS benchmark convention: 0.8% of the image diagonal.
inline int diagonal_tolerance(int width, int height) {
  return static_cast<int>(std::ceil(0.008 * std::hypot(width, height)));
}

// Foreground pixels with a 4-neighbour that is background or off-image.
inline Bitmap mask_boundary(const Bitmap& m) {
  Bitmap out(m.width, m.height);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      const bool edge = x == 0 || y == 0 || x == m.width - 1 || y == m.height - 1 || !m.at(x - 1, y) ||
                        !m.at(x + 1, y) || !m.at(x, y - 1) || !m.at(x, y + 1);
      if (edge) out.set(x, y);
    }
  }
  return out;
}

inline Bitmap mask_boundary(const Mask& m) { return mask_boundary(decode_mask(m)); }

namespace detail {

// Fraction of `from` boundary pixels within Chebyshev distance `tol` of a
// `to` boundary pixel. Uses a summed-area table over `to`.
inline double boundary_hit_ratio(const Bitmap& from, const Bitmap& to, int tol) {
  const int w = to.width, h = to.height;
  std::vector<std::uint32_t> sat(static_cast<std::size_t>(w + 1) * (h + 1), 0);
  auto s = [&](int x, int y) -> std::uint32_t& { return sat[static_cast<std::size_t>(y) * (w + 1) + x]; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) s(x + 1, y + 1) = (to.at(x, y) ? 1u : 0u) + s(x, y + 1) + s(x + 1, y) - s(x, y);
  }
  std::uint64_t total = 0, hit = 0;
  for (int y = 0; y < from.height; ++y) {
    for (int x = 0; x < from.width; ++x) {
      if (!from.at(x, y)) continue;
      ++total;
      const int x0 = std::max(0, x - tol), y0 = std::max(0, y - tol);
      const int x1 = std::min(w - 1, x + tol) + 1, y1 = std::min(h - 1, y + tol) + 1;
      if (s(x1, y1) + s(x0, y0) - s(x0, y1) - s(x1, y0) > 0) ++hit;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

inline bool any(const Bitmap& b) {
  return std::any_of(b.pixels.begin(), b.pixels.end(), [](std::uint8_t p) { return p != 0; });
}

}  // namespace detail

// Boundary F-measure with Chebyshev matching tolerance in pixels.
inline double f_measure(const Mask& pred, const Mask& gt, int tolerance = 1) {
  detail::require_same_shape(pred, gt);
  if (tolerance < 0) throw ValidationError("tolerance", "must be non-negative");
  const Bitmap bp = mask_boundary(pred);
  const Bitmap bg = mask_boundary(gt);
  const bool has_p = detail::any(bp), has_g = detail::any(bg);
  if (!has_p && !has_g) return 1.0;
  if (!has_p || !has_g) return 0.0;
  const double precision = detail::boundary_hit_ratio(bp, bg, tolerance);
  const double recall = detail::boundary_hit_ratio(bg, bp, tolerance);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

// Mean per-frame IoU.
inline double j_measure(std::span<const Mask> pred, std::span<const Mask> gt) {
  if (pred.size() != gt.size()) {
    throw ValidationError("", "frame count mismatch: " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()));
  }
  if (pred.empty()) throw ValidationError("", "j_measure needs at least one frame");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += mask_iou(pred[i], gt[i]);
  return sum / static_cast<double>(pred.size());
}

inline SequenceEval evaluate_sequence(std::span<const Mask> pred, std::span<const Mask> gt, int tolerance = 1) {
  if (pred.size() != gt.size()) {
    throw ValidationError("", "frame count mismatch: " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()));
  }
  if (pred.empty()) throw ValidationError("", "sequence has no frames");
  SequenceEval out;
  double fsum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out.frame_iou.push_back(mask_iou(pred[i], gt[i]));
    fsum += f_measure(pred[i], gt[i], tolerance);
  }
  out.j = std::accumulate(out.frame_iou.begin(), out.frame_iou.end(), 0.0) / static_cast<double>(pred.size());
  out.f = fsum / static_cast<double>(pred.size());
  out.jf = (out.j + out.f) / 2.0;
  return out;
}

// One dataset sample reduced to its pixel counts.
struct SampleCounts {
  std::uint64_t intersection = 0;
  std::uint64_t union_ = 0;
  double iou = 0.0;
};

inline SampleCounts sample_counts(const Mask& pred, const Mask& gt) {
  const auto inter = intersection_area(pred, gt);
  const auto uni = pred.area() + gt.area() - inter;
  return {inter, uni, uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni)};
}

// gIoU = mean per-sample IoU; cIoU = sum of intersections / sum of unions.
// Reductions run in sample order.
inline DatasetEval dataset_eval(std::span<const SampleCounts> samples) {
  if (samples.empty()) throw ValidationError("", "dataset is empty");
  DatasetEval out;
  out.n_samples = samples.size();
  double iou_sum = 0.0;
  std::uint64_t inter = 0, uni = 0;
  for (const auto& s : samples) {
    iou_sum += s.iou;
    inter += s.intersection;
    uni += s.union_;
  }
  out.giou = iou_sum / static_cast<double>(samples.size());
  out.ciou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  return out;
}

inline DatasetEval dataset_eval(std::span<const std::pair<Mask, Mask>> samples) {
  std::vector<SampleCounts> counts;
  counts.reserve(samples.size());
  for (const auto& [pred, gt] : samples) counts.push_back(sample_counts(pred, gt));
  return dataset_eval(std::span<const SampleCounts>(counts));
}

}  // namespace twinseg
