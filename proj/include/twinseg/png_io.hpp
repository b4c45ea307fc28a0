#pragma once

// PNG reading and writing through libpng. Consumers must link PNG::PNG.

#include <png.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "twinseg/error.hpp"
#include "twinseg/mask.hpp"

namespace twinseg {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major

  RgbImage() = default;
  RgbImage(int w, int h, std::array<std::uint8_t, 3> fill = {0, 0, 0})
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
      rgb[i] = fill[0];
      rgb[i + 1] = fill[1];
      rgb[i + 2] = fill[2];
    }
  }

  void set(int x, int y, std::array<std::uint8_t, 3> c) {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[i] = c[0];
    rgb[i + 1] = c[1];
    rgb[i + 2] = c[2];
  }
  std::array<std::uint8_t, 3> get(int x, int y) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_handler(png_structp, png_const_charp msg) { throw OperationalError(msg); }
inline void png_warning_handler(png_structp, png_const_charp) {}

// Writes 8-bit rows with the given libpng color type.
inline void write_png_rows(const std::filesystem::path& path, int width, int height, int color_type, int channels,
                           const std::uint8_t* data) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw OperationalError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
  if (!png) throw OperationalError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // No timestamp chunk, so identical images give identical bytes.
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(data + stride * y));
  }
  png_write_end(png, nullptr);
}

}  // namespace detail

// Writes a bilevel mask as 8-bit grayscale (0 or 255).
inline void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  Bitmap bm = decode_mask(mask);
  for (auto& p : bm.pixels) p = p ? 255 : 0;
  detail::write_png_rows(path, bm.width, bm.height, PNG_COLOR_TYPE_GRAY, 1, bm.pixels.data());
}

inline void write_rgb_png(const std::filesystem::path& path, const RgbImage& image) {
  detail::write_png_rows(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 3, image.rgb.data());
}

// Reads any PNG; a pixel is foreground when any color channel is nonzero.
inline Mask read_mask_png(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw OperationalError("cannot open mask image " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_handler,
                                           detail::png_warning_handler);
  if (!png) throw OperationalError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  const int channels = png_get_channels(png, info);
  std::vector<std::uint8_t> row(rowbytes);
  Bitmap bm(width, height);
  for (int y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < width; ++x) {
      bool fg = false;
      for (int c = 0; c < channels; ++c) fg = fg || row[static_cast<std::size_t>(x) * channels + c] != 0;
      bm.set(x, y, fg);
    }
  }
  png_read_end(png, nullptr);
  return encode_mask(bm);
}

}  // namespace twinseg
