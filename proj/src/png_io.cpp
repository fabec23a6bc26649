// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#include "svdseg/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "svdseg/common.hpp"

namespace svdseg {

namespace {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace

Gray8 read_gray8_png(const std::filesystem::path& file) {
  FilePtr fp(std::fopen(file.string().c_str(), "rb"));
  if (!fp) throw DataError("cannot open PNG file: " + file.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed for " + file.string());
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng init failed for " + file.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("failed to decode PNG file: " + file.string());
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  // Normalize anything we are handed down to 8-bit grayscale.
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);

  Gray8 out;
  out.h = static_cast<int>(png_get_image_height(png, info));
  out.w = static_cast<int>(png_get_image_width(png, info));
  out.v.resize(static_cast<std::size_t>(out.h) * out.w);
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.h));
  for (int y = 0; y < out.h; ++y) rows[static_cast<std::size_t>(y)] = out.v.data() + static_cast<std::size_t>(y) * out.w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_gray8_png(const std::filesystem::path& file, const Gray8& img) {
  if (img.h < 1 || img.w < 1 || img.v.size() != static_cast<std::size_t>(img.h) * img.w) {
    throw DataError("write_gray8_png: inconsistent image buffer for " + file.string());
  }
  FilePtr fp(std::fopen(file.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot create PNG file: " + file.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed for " + file.string());
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng init failed for " + file.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed to encode PNG file: " + file.string());
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
  for (int y = 0; y < img.h; ++y) {
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(img.v.data() + static_cast<std::size_t>(y) * img.w);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace svdseg
