#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "deepwriter/patching.hpp"

using namespace deepwriter;

namespace {

GrayImage gradient_image(std::size_t w, std::size_t h) {
  GrayImage img(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) img.at(x, y) = static_cast<std::uint8_t>((x * 7 + y * 3) % 256);
  }
  return img;
}

// Upper 1% point of the chi-square distribution (Wilson–Hilferty).
double chi_square_critical_99(double dof) {
  const double z = 2.326347874;
  const double a = 2.0 / (9.0 * dof);
  return dof * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

std::vector<std::size_t> xs_of(const std::vector<Patch>& patches) {
  std::vector<std::size_t> xs;
  for (const auto& p : patches) xs.push_back(p.x);
  return xs;
}

}  // namespace

TEST(Resize, MinSideExamples) {
  const auto a = resize_min_side(GrayImage(900, 300), 113);
  EXPECT_EQ(a.width, 339u);
  EXPECT_EQ(a.height, 113u);
  const auto b = resize_min_side(GrayImage(200, 50), 113);
  EXPECT_EQ(b.width, 452u);
  EXPECT_EQ(b.height, 113u);
  const auto tall = resize_min_side(GrayImage(300, 900), 113);
  EXPECT_EQ(tall.width, 113u);
  EXPECT_EQ(tall.height, 339u);
}

TEST(Resize, AlreadyAtTargetIsUnchanged) {
  const auto img = gradient_image(113, 113);
  EXPECT_EQ(resize_min_side(img, 113), img);
}

TEST(Resize, DegenerateImage) {
  const auto r = resize_min_side(GrayImage(1, 1, 42), 113);
  EXPECT_EQ(r.width, 113u);
  EXPECT_EQ(r.height, 113u);
  for (auto p : r.pixels) EXPECT_EQ(p, 42);
}

TEST(Resize, ConstantImageStaysConstant) {
  const auto r = resize_min_side(GrayImage(37, 91, 200), 33);
  for (auto p : r.pixels) EXPECT_EQ(p, 200);
}

TEST(Resize, AspectRatioWithinRounding) {
  for (std::size_t w = 1; w <= 400; w += 13) {
    for (std::size_t h = 1; h <= 300; h += 17) {
      const auto r = resize_min_side(GrayImage(w, h), 113);
      EXPECT_EQ(std::min(r.width, r.height), 113u);
      const double s = 113.0 / static_cast<double>(std::min(w, h));
      EXPECT_LE(std::abs(static_cast<double>(r.width) - w * s), 0.5 + 1e-9);
      EXPECT_LE(std::abs(static_cast<double>(r.height) - h * s), 0.5 + 1e-9);
    }
  }
}

TEST(Scan, ExactTiling) {
  const auto patches = scan_patches(gradient_image(339, 113), PatchPlan{});
  EXPECT_EQ(xs_of(patches), (std::vector<std::size_t>{0, 113, 226}));
  EXPECT_EQ(patches[1].image, gradient_image(339, 113).crop(113, 0, 113, 113));
}

TEST(Scan, SinglePatch) { EXPECT_EQ(scan_patches(gradient_image(113, 113), PatchPlan{}).size(), 1u); }

TEST(Scan, FlushFinalPatch) {
  EXPECT_EQ(xs_of(scan_patches(gradient_image(300, 113), PatchPlan{})), (std::vector<std::size_t>{0, 113, 187}));
}

TEST(Scan, TooSmall) {
  EXPECT_THROW(scan_patches(gradient_image(112, 113), PatchPlan{}), DomainError);
  EXPECT_THROW(scan_patches(gradient_image(300, 100), PatchPlan{}), DomainError);
}

TEST(Scan, CoversLongAxisInsideImage) {
  for (std::size_t w = 113; w < 800; w += 29) {
    for (std::size_t stride : {1u, 37u, 112u, 113u}) {
      PatchPlan plan{113, stride, 0.1};
      const auto patches = scan_patches(GrayImage(w, 113), plan);
      std::vector<bool> covered(w, false);
      for (const auto& p : patches) {
        ASSERT_LE(p.x + 113, w);
        EXPECT_EQ(p.y, 0u);
        for (std::size_t x = p.x; x < p.x + 113; ++x) covered[x] = true;
      }
      EXPECT_EQ(std::count(covered.begin(), covered.end(), false), 0) << w << " " << stride;
    }
  }
}

TEST(Scan, StrideWiderThanPatchSkipsGaps) {
  EXPECT_EQ(xs_of(scan_patches(GrayImage(400, 113), PatchPlan{113, 150, 0.1})),
            (std::vector<std::size_t>{0, 150, 287}));
}

TEST(Sample, EvenSpacing) {
  std::vector<std::size_t> expected;
  for (std::size_t i = 0; i <= 90; i += 10) expected.push_back(i);
  EXPECT_EQ(sample_indices(100, 0.1), expected);
  EXPECT_EQ(sample_indices(3, 0.2), std::vector<std::size_t>{0});
  EXPECT_EQ(sample_indices(30, 0.1), (std::vector<std::size_t>{0, 10, 20}));
}

TEST(Sample, FullRatioKeepsEverything) {
  const std::vector<int> items{4, 8, 15, 16, 23, 42};
  EXPECT_EQ(sample_uniform(items, 1.0), items);
}

TEST(Sample, Errors) {
  EXPECT_THROW(sample_indices(0, 0.1), DomainError);
  EXPECT_THROW(sample_indices(5, 0.0), DomainError);
  EXPECT_THROW(sample_indices(5, 1.5), DomainError);
}

TEST(Sample, SizeAndSubsequenceProperty) {
  for (std::size_t n = 1; n <= 200; ++n) {
    for (double r : {0.05, 0.1, 0.2, 0.33, 0.5, 0.9, 1.0}) {
      const auto idx = sample_indices(n, r);
      const auto k = static_cast<std::size_t>(std::ceil(n * r - 1e-9));
      EXPECT_EQ(idx.size(), std::max<std::size_t>(k, 1)) << n << " " << r;
      EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
      EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
      EXPECT_LT(idx.back(), n);
    }
  }
}

TEST(Crop, WholeImageWhenExactSize) {
  Rng rng(1);
  const auto img = gradient_image(113, 113);
  const auto p = random_crop(img, 113, rng);
  EXPECT_EQ(p.x, 0u);
  EXPECT_EQ(p.y, 0u);
  EXPECT_EQ(p.image, img);
}

TEST(Crop, SameSeedSameCrop) {
  const auto img = gradient_image(339, 150);
  Rng a(77), b(77);
  for (int i = 0; i < 20; ++i) {
    const auto pa = random_crop(img, 113, a);
    const auto pb = random_crop(img, 113, b);
    EXPECT_EQ(pa.x, pb.x);
    EXPECT_EQ(pa.y, pb.y);
    EXPECT_EQ(pa.image, pb.image);
  }
}

TEST(Crop, OffsetsAreUniform) {
  const GrayImage img(339, 113);
  Rng rng(2024);
  const int draws = 10000;
  std::vector<int> counts(227, 0);
  for (int i = 0; i < draws; ++i) {
    const auto p = random_crop(img, 113, rng);
    ASSERT_EQ(p.y, 0u);
    ASSERT_LE(p.x, 226u);
    ++counts[p.x];
  }
  const double expected = static_cast<double>(draws) / counts.size();
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, chi_square_critical_99(static_cast<double>(counts.size() - 1)));
}

TEST(Crop, TooSmall) {
  Rng rng(1);
  EXPECT_THROW(random_crop(GrayImage(50, 200), 113, rng), DomainError);
}

TEST(AdjacentCrops, SideBySide) {
  Rng rng(5);
  const auto img = gradient_image(400, 120);
  for (int i = 0; i < 200; ++i) {
    const auto [a, b] = random_adjacent_crops(img, 113, rng);
    EXPECT_EQ(b.x, a.x + 113);
    EXPECT_EQ(a.y, b.y);
    EXPECT_LE(b.x + 113, 400u);
    EXPECT_EQ(b.image, img.crop(b.x, b.y, 113, 113));
  }
}

TEST(AdjacentCrops, NarrowImageUsesFlushSecondCrop) {
  Rng rng(6);
  const auto [a, b] = random_adjacent_crops(gradient_image(150, 113), 113, rng);
  EXPECT_EQ(a.x, 0u);
  EXPECT_EQ(b.x, 37u);
}

TEST(Pairs, SlidingWindow) {
  using P = std::pair<int, int>;
  EXPECT_EQ(make_pairs(std::vector<int>{1, 2, 3}), (std::vector<P>{{1, 2}, {2, 3}}));
  EXPECT_EQ(make_pairs(std::vector<int>{1}), (std::vector<P>{{1, 1}}));
  EXPECT_THROW(make_pairs(std::vector<int>{}), DomainError);
  for (int n = 1; n < 20; ++n) {
    EXPECT_EQ(make_pairs(std::vector<int>(static_cast<std::size_t>(n))).size(),
              static_cast<std::size_t>(std::max(1, n - 1)));
  }
}

TEST(ToTensor, ScalesAndCenters) {
  const GrayImage img(2, 1, std::vector<std::uint8_t>{0, 255});
  const auto t = to_tensor<double>(img, 0.5);
  EXPECT_EQ(t.dims(), (Shape{1, 1, 2}));
  EXPECT_DOUBLE_EQ(t[0], -0.5);
  EXPECT_DOUBLE_EQ(t[1], 0.5);
}
