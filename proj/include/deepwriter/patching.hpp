#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "deepwriter/image.hpp"
#include "deepwriter/random.hpp"
#include "deepwriter/tensor.hpp"

namespace deepwriter {

/// Parameters of the patch scanning strategy.
struct PatchPlan {
  std::size_t patch_side = 113;
  std::size_t scan_stride = 113;
  double sample_ratio = 0.1;

  static constexpr double kEnglishSentenceRatio = 0.1;
  static constexpr double kChineseCharacterRatio = 0.2;

  /// Non-overlapping scan with stride equal to the patch side.
  static PatchPlan for_side(std::size_t side, double ratio = kEnglishSentenceRatio) {
    return {side, side, ratio};
  }

  void validate() const {
    if (patch_side < 1) throw DomainError("patch_side must be >= 1");
    if (scan_stride < 1) throw DomainError("scan_stride must be >= 1");
    if (!(sample_ratio > 0.0 && sample_ratio <= 1.0)) {
      throw DomainError("sample_ratio must lie in (0,1]");
    }
  }
};

struct Patch {
  std::size_t x = 0;
  std::size_t y = 0;
  GrayImage image;
};

/**
 * Bilinear resize so that min(width, height) == target; the other side is
 * scaled by the same factor and rounded (at least 1 pixel).
 */
inline GrayImage resize_min_side(const GrayImage& img, std::size_t target) {
  if (target < 1) throw DomainError("resize target must be >= 1");
  const std::size_t short_side = std::min(img.width, img.height);
  auto scale_side = [&](std::size_t side) -> std::size_t {
    if (side == short_side) return target;
    const auto v = std::llround(static_cast<double>(side) * static_cast<double>(target) /
                                static_cast<double>(short_side));
    return v < 1 ? 1 : static_cast<std::size_t>(v);
  };
  const std::size_t out_w = scale_side(img.width);
  const std::size_t out_h = scale_side(img.height);
  if (out_w == img.width && out_h == img.height) return img;

  GrayImage out(out_w, out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  // Pixel centres aligned; samples outside the source clamp to the border.
  auto source_coord = [](std::size_t dst, double s, std::size_t limit,
                         std::size_t& i0, std::size_t& i1, double& frac) {
    double c = (static_cast<double>(dst) + 0.5) * s - 0.5;
    c = std::clamp(c, 0.0, static_cast<double>(limit - 1));
    i0 = static_cast<std::size_t>(c);
    i1 = std::min(i0 + 1, limit - 1);
    frac = c - static_cast<double>(i0);
  };
  std::vector<std::size_t> x0(out_w), x1(out_w);
  std::vector<double> fx(out_w);
  for (std::size_t x = 0; x < out_w; ++x) source_coord(x, sx, img.width, x0[x], x1[x], fx[x]);
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    source_coord(y, sy, img.height, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double top = img.at(x0[x], y0) * (1.0 - fx[x]) + img.at(x1[x], y0) * fx[x];
      const double bottom = img.at(x0[x], y1) * (1.0 - fx[x]) + img.at(x1[x], y1) * fx[x];
      const double v = top * (1.0 - fy) + bottom * fy;
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

/// Window offsets 0, stride, 2·stride, ... plus a final window flush with
/// the far edge when the regular steps leave pixels uncovered.
inline std::vector<std::size_t> scan_offsets(std::size_t length, std::size_t side,
                                             std::size_t stride) {
  if (length < side) {
    throw DomainError("image side " + std::to_string(length) + " smaller than patch " +
                      std::to_string(side));
  }
  std::vector<std::size_t> offsets;
  std::size_t pos = 0;
  for (; pos + side <= length; pos += stride) offsets.push_back(pos);
  if (offsets.back() + side < length) offsets.push_back(length - side);
  return offsets;
}

/**
 * Crops patch_side × patch_side windows in scan order (row by row, left to
 * right). For an image already resized so its short side equals the patch
 * side this is a single pass along the long axis.
 */
inline std::vector<Patch> scan_patches(const GrayImage& img, const PatchPlan& plan) {
  plan.validate();
  const auto xs = scan_offsets(img.width, plan.patch_side, plan.scan_stride);
  const auto ys = scan_offsets(img.height, plan.patch_side, plan.scan_stride);
  std::vector<Patch> out;
  out.reserve(xs.size() * ys.size());
  for (auto y : ys) {
    for (auto x : xs) out.push_back({x, y, img.crop(x, y, plan.patch_side, plan.patch_side)});
  }
  return out;
}

/// Indices picked by uniform sampling: k = ceil(n·ratio) evenly spaced
/// positions round(j·n/k), duplicates removed.
inline std::vector<std::size_t> sample_indices(std::size_t n, double ratio) {
  if (n == 0) throw DomainError("cannot sample from an empty patch list");
  if (!(ratio > 0.0 && ratio <= 1.0)) throw DomainError("sample ratio must lie in (0,1]");
  // The epsilon keeps products such as 30 × 0.1 from rounding up to 4.
  auto k = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * ratio - 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);
  std::vector<std::size_t> idx;
  idx.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t i = (2 * j * n + k) / (2 * k);  // round half up
    if (idx.empty() || idx.back() != i) idx.push_back(i);
  }
  return idx;
}

template <typename Item>
std::vector<Item> sample_uniform(const std::vector<Item>& items, double ratio) {
  std::vector<Item> out;
  for (auto i : sample_indices(items.size(), ratio)) out.push_back(items[i]);
  return out;
}

/// Uniformly placed side × side crop.
inline Patch random_crop(const GrayImage& img, std::size_t side, Rng& rng) {
  if (img.width < side || img.height < side) {
    throw DomainError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                      " smaller than crop " + std::to_string(side));
  }
  const auto x = static_cast<std::size_t>(uniform_index(rng, img.width - side + 1));
  const auto y = static_cast<std::size_t>(uniform_index(rng, img.height - side + 1));
  return {x, y, img.crop(x, y, side, side)};
}

/**
 * Two horizontally adjacent side × side crops at a random position. When the
 * image is narrower than two patches the second crop sits flush with the
 * right edge, mirroring the scan's final window.
 */
inline std::pair<Patch, Patch> random_adjacent_crops(const GrayImage& img, std::size_t side,
                                                     Rng& rng) {
  if (img.width < side || img.height < side) {
    throw DomainError("image smaller than crop " + std::to_string(side));
  }
  const std::size_t span = img.width >= 2 * side ? img.width - 2 * side : 0;
  const auto x = static_cast<std::size_t>(uniform_index(rng, span + 1));
  const auto y = static_cast<std::size_t>(uniform_index(rng, img.height - side + 1));
  const std::size_t x2 = std::min(x + side, img.width - side);
  return {Patch{x, y, img.crop(x, y, side, side)}, Patch{x2, y, img.crop(x2, y, side, side)}};
}

/// Consecutive pairs (p_i, p_{i+1}); a single item pairs with itself.
template <typename Item>
std::vector<std::pair<Item, Item>> make_pairs(const std::vector<Item>& items) {
  if (items.empty()) throw DomainError("cannot pair an empty patch list");
  std::vector<std::pair<Item, Item>> pairs;
  if (items.size() == 1) {
    pairs.emplace_back(items[0], items[0]);
    return pairs;
  }
  for (std::size_t i = 0; i + 1 < items.size(); ++i) pairs.emplace_back(items[i], items[i + 1]);
  return pairs;
}

/// [1, h, w] tensor of gray/255 − mean.
template <typename T>
Tensor<T> to_tensor(const GrayImage& img, T mean) {
  Tensor<T> t({1, img.height, img.width});
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = static_cast<T>(img.pixels[i]) / T{255} - mean;
  }
  return t;
}

}  // namespace deepwriter
