#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "slfh/error.hpp"

namespace slfh::io {

/// Raw PNG samples after palette expansion and alpha stripping.
struct PngImage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB)
  int bit_depth = 8;         // 8 or 16
  std::vector<std::uint16_t> samples;  // row-major, interleaved channels

  double max_code() const { return bit_depth == 16 ? 65535.0 : 255.0; }
};

inline PngImage read_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw Error("cannot open PNG: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw Error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw Error("malformed PNG: " + path);
  }
  png_init_io(png, fp);
  png_read_png(png, info, PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_STRIP_ALPHA, nullptr);

  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const auto depth = png_get_bit_depth(png, info);
  const auto channels = png_get_channels(png, info);
  png_bytepp row_pointers = png_get_rows(png, info);

  PngImage img;
  img.rows = height;
  img.cols = width;
  img.channels = channels;
  img.bit_depth = depth;
  img.samples.resize(img.rows * img.cols * img.channels);
  for (std::size_t r = 0; r < img.rows; ++r) {
    const png_bytep row = row_pointers[r];
    for (std::size_t i = 0; i < img.cols * img.channels; ++i) {
      img.samples[r * img.cols * img.channels + i] =
          depth == 16 ? static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1]) : row[i];
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  if (img.channels != 1 && img.channels != 3)
    throw Error("unsupported PNG channel count in " + path);
  return img;
}

/// Writes 8-bit gray (channels = 1) or RGB (channels = 3) samples.
inline void write_png8(const std::string& path, std::size_t rows, std::size_t cols,
                       std::size_t channels, const std::vector<std::uint8_t>& samples) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(cols);
  image.height = static_cast<png_uint_32>(rows);
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, samples.data(), 0, nullptr))
    throw Error("cannot write PNG " + path + ": " + image.message);
}

/// Writes 16-bit gray or RGB samples unchanged.
inline void write_png16(const std::string& path, std::size_t rows, std::size_t cols,
                        std::size_t channels, const std::vector<std::uint16_t>& samples) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(cols);
  image.height = static_cast<png_uint_32>(rows);
  image.format = channels == 3 ? PNG_FORMAT_LINEAR_RGB : PNG_FORMAT_LINEAR_Y;
  if (!png_image_write_to_file(&image, path.c_str(), 0, samples.data(), 0, nullptr))
    throw Error("cannot write PNG " + path + ": " + image.message);
}

}  // namespace slfh::io
