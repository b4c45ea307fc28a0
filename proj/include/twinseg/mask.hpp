#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twinseg/error.hpp"

namespace twinseg {

// Dense row-major binary raster. Nonzero bytes are foreground.
struct Bitmap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Bitmap() = default;
  Bitmap(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, 0) {}
  Bitmap(int w, int h, std::vector<std::uint8_t> px) : width(w), height(h), pixels(std::move(px)) {}

  bool at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v = true) { pixels[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t size() const { return pixels.size(); }

  friend bool operator==(const Bitmap& a, const Bitmap& b) {
    if (a.width != b.width || a.height != b.height) return false;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
      if ((a.pixels[i] != 0) != (b.pixels[i] != 0)) return false;
    }
    return true;
  }
};

// Inclusive pixel bounds of a nonempty mask.
struct BoundingBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

// Run-length encoded binary mask. Runs alternate background/foreground in
// row-major order, starting with background. A leading zero run marks a mask
// whose first pixel is foreground; no other run may be zero.
class Mask {
 public:
  Mask() = default;

  // Validates the run list; throws ValidationError on a non-canonical encoding.
  Mask(int width, int height, std::vector<std::uint32_t> runs)
      : width_(width), height_(height), runs_(std::move(runs)) {
    if (auto problem = check(width_, height_, runs_)) throw ValidationError("", *problem);
  }

  // Returns a description of the first violated invariant, if any.
  static std::optional<std::string> check(int width, int height, std::span<const std::uint32_t> runs) {
    if (width <= 0 || height <= 0) return "mask dimensions must be positive";
    if (runs.empty()) return "run list is empty";
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      if (runs[i] == 0 && i != 0) return "zero-length run at index " + std::to_string(i);
      total += runs[i];
    }
    if (runs.size() == 1 && runs[0] == 0) return "zero-length run at index 0 with no foreground";
    const std::uint64_t expected = static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height);
    if (total != expected) {
      return "runs sum to " + std::to_string(total) + " but width*height is " + std::to_string(expected);
    }
    return std::nullopt;
  }

  // Builds an all-background mask.
  static Mask empty(int width, int height) {
    return Mask(width, height, {static_cast<std::uint32_t>(width) * static_cast<std::uint32_t>(height)});
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }
  const std::vector<std::uint32_t>& runs() const noexcept { return runs_; }

  std::uint64_t area() const noexcept {
    std::uint64_t a = 0;
    for (std::size_t i = 1; i < runs_.size(); i += 2) a += runs_[i];
    return a;
  }

  bool is_empty() const noexcept { return area() == 0; }

  bool same_shape(const Mask& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  // Calls fn(begin, end) for each foreground run as half-open linear indices.
  template <typename Fn>
  void for_each_foreground_run(Fn&& fn) const {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < runs_.size(); ++i) {
      const std::size_t next = pos + runs_[i];
      if (i % 2 == 1) fn(pos, next);
      pos = next;
    }
  }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint32_t> runs_;
};

inline Mask encode_mask(const Bitmap& bitmap) {
  if (bitmap.width <= 0 || bitmap.height <= 0) {
    throw ValidationError("", "raster dimensions must be positive");
  }
  if (bitmap.pixels.size() != static_cast<std::size_t>(bitmap.width) * bitmap.height) {
    throw ValidationError("", "raster has " + std::to_string(bitmap.pixels.size()) + " pixels but declares " +
                                  std::to_string(bitmap.width) + "x" + std::to_string(bitmap.height));
  }
  std::vector<std::uint32_t> runs;
  bool current = false;
  std::uint32_t count = 0;
  for (auto px : bitmap.pixels) {
    const bool fg = px != 0;
    if (fg != current) {
      runs.push_back(count);
      current = fg;
      count = 0;
    }
    ++count;
  }
  runs.push_back(count);
  return Mask(bitmap.width, bitmap.height, std::move(runs));
}

inline Bitmap decode_mask(const Mask& mask) {
  if (auto problem = Mask::check(mask.width(), mask.height(), mask.runs())) throw ValidationError("", *problem);
  Bitmap out(mask.width(), mask.height());
  mask.for_each_foreground_run([&](std::size_t b, std::size_t e) {
    std::fill(out.pixels.begin() + static_cast<std::ptrdiff_t>(b), out.pixels.begin() + static_cast<std::ptrdiff_t>(e), 1);
  });
  return out;
}

namespace detail {

inline void require_same_shape(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) {
    throw ValidationError("", "mask dimensions differ: " + std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                                  " vs " + std::to_string(b.width()) + "x" + std::to_string(b.height()));
  }
}

// Foreground runs as [begin, end) intervals.
inline std::vector<std::pair<std::size_t, std::size_t>> intervals(const Mask& m) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(m.runs().size() / 2 + 1);
  m.for_each_foreground_run([&](std::size_t b, std::size_t e) { out.emplace_back(b, e); });
  return out;
}

}  // namespace detail

// |a ∩ b| computed by merging run lists.
inline std::uint64_t intersection_area(const Mask& a, const Mask& b) {
  detail::require_same_shape(a, b);
  const auto ia = detail::intervals(a);
  const auto ib = detail::intervals(b);
  std::uint64_t total = 0;
  std::size_t i = 0, j = 0;
  while (i < ia.size() && j < ib.size()) {
    const std::size_t lo = std::max(ia[i].first, ib[j].first);
    const std::size_t hi = std::min(ia[i].second, ib[j].second);
    if (lo < hi) total += hi - lo;
    if (ia[i].second < ib[j].second) {
      ++i;
    } else {
      ++j;
    }
  }
  return total;
}

inline std::uint64_t union_area(const Mask& a, const Mask& b) {
  return a.area() + b.area() - intersection_area(a, b);
}

// |a∩b| / |a∪b|; 1.0 when both masks are empty.
inline double mask_iou(const Mask& a, const Mask& b) {
  const std::uint64_t inter = intersection_area(a, b);
  const std::uint64_t uni = a.area() + b.area() - inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Pixelwise OR of equally sized masks.
inline Mask mask_union(std::span<const Mask> masks, int width, int height) {
  Bitmap acc(width, height);
  for (const auto& m : masks) {
    if (m.width() != width || m.height() != height) {
      throw ValidationError("", "mask dimensions differ in union");
    }
    m.for_each_foreground_run([&](std::size_t b, std::size_t e) {
      std::fill(acc.pixels.begin() + static_cast<std::ptrdiff_t>(b), acc.pixels.begin() + static_cast<std::ptrdiff_t>(e), 1);
    });
  }
  return encode_mask(acc);
}

inline std::optional<BoundingBox> bounding_box(const Mask& m) {
  std::optional<BoundingBox> box;
  const auto w = static_cast<std::size_t>(m.width());
  m.for_each_foreground_run([&](std::size_t b, std::size_t e) {
    // A run may wrap across rows; visit each row segment.
    std::size_t pos = b;
    while (pos < e) {
      const int y = static_cast<int>(pos / w);
      const std::size_t row_end = std::min(e, (pos / w + 1) * w);
      const int x0 = static_cast<int>(pos % w);
      const int x1 = static_cast<int>((row_end - 1) % w);
      if (!box) {
        box = BoundingBox{x0, y, x1, y};
      } else {
        box->x_min = std::min(box->x_min, x0);
        box->x_max = std::max(box->x_max, x1);
        box->y_min = std::min(box->y_min, y);
        box->y_max = std::max(box->y_max, y);
      }
      pos = row_end;
    }
  });
  return box;
}

// Mean pixel coordinate of the foreground (x rightward, y downward).
inline std::optional<Point2> centroid(const Mask& m) {
  const auto w = static_cast<std::size_t>(m.width());
  double sx = 0.0, sy = 0.0;
  std::uint64_t n = 0;
  m.for_each_foreground_run([&](std::size_t b, std::size_t e) {
    std::size_t pos = b;
    while (pos < e) {
      const std::size_t y = pos / w;
      const std::size_t row_end = std::min(e, (y + 1) * w);
      const std::size_t x0 = pos % w;
      const std::size_t len = row_end - pos;
      // Sum of x0..x0+len-1.
      sx += static_cast<double>(len) * static_cast<double>(x0) + static_cast<double>(len) * static_cast<double>(len - 1) / 2.0;
      sy += static_cast<double>(len) * static_cast<double>(y);
      n += len;
      pos = row_end;
    }
  });
  if (n == 0) return std::nullopt;
  return Point2{sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

// Morphological dilation with a (2k+1)x(2k+1) square element.
inline Mask dilate(const Mask& m, int k) {
  const Bitmap src = decode_mask(m);
  Bitmap out(src.width, src.height);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      if (!src.at(x, y)) continue;
      for (int dy = -k; dy <= k; ++dy) {
        for (int dx = -k; dx <= k; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx >= 0 && ny >= 0 && nx < src.width && ny < src.height) out.set(nx, ny);
        }
      }
    }
  }
  return encode_mask(out);
}

// Morphological erosion with a (2k+1)x(2k+1) square element; pixels outside
// the raster count as background.
inline Mask erode(const Mask& m, int k) {
  const Bitmap src = decode_mask(m);
  Bitmap out(src.width, src.height);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      bool keep = src.at(x, y);
      for (int dy = -k; keep && dy <= k; ++dy) {
        for (int dx = -k; keep && dx <= k; ++dx) {
          const int nx = x + dx, ny = y + dy;
          keep = nx >= 0 && ny >= 0 && nx < src.width && ny < src.height && src.at(nx, ny);
        }
      }
      if (keep) out.set(x, y);
    }
  }
  return encode_mask(out);
}

}  // namespace twinseg
