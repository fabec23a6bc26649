// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "svdseg/common.hpp"

namespace svdseg {

// Dense H x W x C image, values in [0, 1], channel-interleaved.
struct Image {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<double> v;

  Image() = default;
  Image(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(static_cast<std::size_t>(h_) * w_ * c_, 0.0) {}

  double& at(int y, int x, int ch) { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch) const { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
};

// Binary H x W mask, 0 = background, 1 = foreground.
struct Mask {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> v;

  Mask() = default;
  Mask(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0) {}

  std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }

  bool blank() const {
    for (std::uint8_t p : v)
      if (p) return false;
    return true;
  }

  std::size_t foreground() const {
    std::size_t n = 0;
    for (std::uint8_t p : v) n += (p != 0);
    return n;
  }
};

}  // namespace svdseg
