#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "deepwriter/errors.hpp"

namespace deepwriter {

/// 8-bit grayscale image, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 255)
      : width(w), height(h), pixels(w * h, fill) {
    if (w < 1 || h < 1) throw DomainError("image sides must be positive");
  }
  GrayImage(std::size_t w, std::size_t h, std::vector<std::uint8_t> data)
      : width(w), height(h), pixels(std::move(data)) {
    if (w < 1 || h < 1) throw DomainError("image sides must be positive");
    if (pixels.size() != w * h) {
      throw DomainError("pixel buffer of " + std::to_string(pixels.size()) +
                        " bytes does not match " + std::to_string(w) + "x" +
                        std::to_string(h));
    }
  }

  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

  /// Copy of the w×h region whose top-left corner is (x, y).
  GrayImage crop(std::size_t x, std::size_t y, std::size_t w, std::size_t h) const {
    if (x + w > width || y + h > height) {
      throw DomainError("crop outside image bounds");
    }
    GrayImage out(w, h);
    for (std::size_t r = 0; r < h; ++r) {
      const auto* src = pixels.data() + (y + r) * width + x;
      std::copy(src, src + w, out.pixels.data() + r * w);
    }
    return out;
  }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

}  // namespace deepwriter
