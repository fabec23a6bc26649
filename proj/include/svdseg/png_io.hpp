// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace svdseg {

struct Gray8 {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> v;
};

// 8-bit grayscale PNG round trip (lossless). Throws DataError on I/O or
// format problems, naming the file.
Gray8 read_gray8_png(const std::filesystem::path& file);
void write_gray8_png(const std::filesystem::path& file, const Gray8& img);

}  // namespace svdseg
