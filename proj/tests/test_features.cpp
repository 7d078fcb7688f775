#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <tuple>
#include <numbers>
#include <random>

#include "simsea/error.hpp"
#include "simsea/features.hpp"

using namespace simsea;
namespace fs = std::filesystem;

namespace {

DescriptorParams single_scale(int bin) {
  DescriptorParams p;
  p.bin_sizes = {bin};
  return p;
}

GrayRaster ramp(int w, int h, double ax, double ay) {
  GrayRaster r(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) r.at(x, y) = static_cast<float>(0.5 + ax * (x - w / 2) + ay * (y - h / 2));
  return r;
}

double norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

TEST(Grid, PositionCount) {
  EXPECT_EQ(grid_positions(64, 16, 5), 10);
  EXPECT_EQ(grid_positions(16, 16, 5), 1);
  EXPECT_EQ(grid_positions(15, 16, 5), 0);
  EXPECT_EQ(grid_positions(128, 40, 5), 18);
}

TEST(Dense, SixtyFourSquareAtSupportSixteen) {
  const auto set = extract_dense_descriptors(ramp(64, 64, 0.01, 0.0), single_scale(4), "img");
  EXPECT_EQ(set.size(), 100u);
  EXPECT_EQ(set.dimension, 128);
  EXPECT_EQ(set.data.size(), 100u * 128u);
  EXPECT_EQ(set.image_id, "img");
  EXPECT_EQ(set.frames[0], (DescriptorFrame{0, 0, 0}));
  EXPECT_EQ(set.frames[1], (DescriptorFrame{5, 0, 0}));
  EXPECT_EQ(set.frames[10], (DescriptorFrame{0, 5, 0}));
  EXPECT_EQ(set.frames[99], (DescriptorFrame{45, 45, 0}));
}

TEST(Dense, DefaultScalesOnOneTwentyEight) {
  const auto set = extract_dense_descriptors(ramp(128, 128, 0.003, 0.002), DescriptorParams{});
  EXPECT_EQ(set.size(), 529u + 441u + 400u + 324u);
  EXPECT_EQ(set.frames.back().scale_index, 3);
  EXPECT_EQ(set.frames[529].scale_index, 1);
}

TEST(Dense, RectangularImageUsesBothAxes) {
  const auto set = extract_dense_descriptors(ramp(40, 21, 0.01, 0.0), single_scale(4));
  EXPECT_EQ(set.size(), static_cast<std::size_t>(grid_positions(40, 16, 5) * grid_positions(21, 16, 5)));
}

TEST(Dense, TooSmallImageYieldsNothing) {
  EXPECT_TRUE(extract_dense_descriptors(ramp(15, 64, 0.01, 0.0), single_scale(4)).empty());
  EXPECT_TRUE(extract_dense_descriptors(GrayRaster{}, single_scale(4)).empty());
}

TEST(Dense, FlatImageGivesZeroVectors) {
  const auto set = extract_dense_descriptors(GrayRaster(32, 32, 0.4f), single_scale(4));
  ASSERT_EQ(set.size(), 16u);
  for (float v : set.data) EXPECT_EQ(v, 0.0f);
}

TEST(Dense, OrientationOfLinearRamps) {
  // Horizontal increase points at angle 0, decrease at pi, vertical increase at pi/2.
  struct Case {
    double ax, ay;
    int bin;
  };
  for (const Case c : {Case{0.01, 0.0, 0}, Case{-0.01, 0.0, 4}, Case{0.0, 0.01, 2}, Case{0.0, -0.01, 6}}) {
    const auto set = extract_dense_descriptors(ramp(32, 32, c.ax, c.ay), single_scale(4));
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto v = set.vector(i);
      EXPECT_NEAR(norm(v), 1.0, 1e-5);
      for (int d = 0; d < 128; ++d) {
        if (d % 8 == c.bin)
          EXPECT_GT(v[d], 0.0f);
        else
          EXPECT_EQ(v[d], 0.0f) << "component " << d;
      }
    }
  }
}

TEST(Dense, DiagonalSplitsBetweenNeighbouringBins) {
  // A 22.5 degree gradient falls halfway between bins 0 and 1.
  const double a = 0.01;
  const double t = std::numbers::pi / 8.0;
  const auto set = extract_dense_descriptors(ramp(48, 48, a * std::cos(t), a * std::sin(t)), single_scale(4));
  // Interior descriptor, free of border-replication effects.
  const auto v = set.vector(set.size() / 2);
  for (int cell = 0; cell < 16; ++cell) EXPECT_NEAR(v[cell * 8], v[cell * 8 + 1], 1e-3);
}

TEST(Dense, RandomImageComponentsBounded) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  GrayRaster r(60, 50);
  for (auto& v : r.values) v = u(rng);
  const auto set = extract_dense_descriptors(r, DescriptorParams{});
  ASSERT_FALSE(set.empty());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto v = set.vector(i);
    EXPECT_NEAR(norm(v), 1.0, 1e-5);
    for (float x : v) {
      EXPECT_GE(x, 0.0f);
      EXPECT_LE(x, 1.0f);
    }
  }
}

TEST(Dense, TranslationByGridStepShiftsDescriptors) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  GrayRaster base(50, 45);
  for (auto& v : base.values) v = u(rng);
  const int step = DescriptorParams{}.grid_step;
  GrayRaster shifted(base.width + step, base.height + step);
  for (int y = 0; y < shifted.height; ++y)
    for (int x = 0; x < shifted.width; ++x) shifted.at(x, y) = base.at(std::max(x - step, 0), std::max(y - step, 0));

  const DescriptorParams params;
  const auto a = extract_dense_descriptors(base, params);
  const auto b = extract_dense_descriptors(shifted, params);
  std::map<std::tuple<std::uint32_t, std::uint32_t, int>, std::size_t> where;
  for (std::size_t i = 0; i < b.size(); ++i) where[{b.frames[i].x, b.frames[i].y, b.frames[i].scale_index}] = i;

  std::size_t compared = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& f = a.frames[i];
    const auto support = static_cast<std::uint32_t>(params.spatial_cells * params.bin_sizes[f.scale_index]);
    // Interior only: one pixel clear of every border so no replicated gradients enter.
    if (f.x == 0 || f.y == 0 || f.x + support >= static_cast<std::uint32_t>(base.width) ||
        f.y + support >= static_cast<std::uint32_t>(base.height))
      continue;
    const auto it = where.find({f.x + step, f.y + step, f.scale_index});
    ASSERT_NE(it, where.end());
    const auto va = a.vector(i);
    const auto vb = b.vector(it->second);
    for (int d = 0; d < a.dimension; ++d) ASSERT_NEAR(va[d], vb[d], 1e-6);
    ++compared;
  }
  EXPECT_GT(compared, 10u);
}

TEST(Dense, CountNonIncreasingInBinSize) {
  const auto r = ramp(73, 58, 0.004, 0.003);
  std::size_t previous = SIZE_MAX;
  for (int bin = 2; bin <= 16; ++bin) {
    const auto n = extract_dense_descriptors(r, single_scale(bin)).size();
    EXPECT_LE(n, previous) << "bin " << bin;
    previous = n;
  }
}

TEST(Normalize, ClampThenRenormalize) {
  std::vector<float> v(128, 0.0f);
  v[0] = 3.0f;
  v[1] = 4.0f;
  ASSERT_TRUE(normalize_descriptor(v, 0.2, 1e-10));
  // (0.6, 0.8) clamps to (0.2, 0.2) and renormalizes to (1/sqrt2, 1/sqrt2).
  EXPECT_NEAR(v[0], 1.0 / std::sqrt(2.0), 1e-7);
  EXPECT_NEAR(v[1], 1.0 / std::sqrt(2.0), 1e-7);
  for (int d = 2; d < 128; ++d) EXPECT_EQ(v[d], 0.0f);

  std::vector<float> flat(128, 2.0f);
  ASSERT_TRUE(normalize_descriptor(flat, 0.2, 1e-10));
  for (float x : flat) EXPECT_NEAR(x, 1.0 / std::sqrt(128.0), 1e-7);

  std::vector<float> mixed = {0.1f, 0.2f, 0.9f, 0.3f};
  ASSERT_TRUE(normalize_descriptor(mixed, 0.5, 0.0));
  // unit: (0.1,0.2,0.9,0.3)/sqrt(0.95); 0.9/sqrt(0.95) = 0.923 clamps to 0.5.
  const double n = std::sqrt(0.95);
  const double a = 0.1 / n, b = 0.2 / n, c = 0.5, d = 0.3 / n;
  const double r = std::sqrt(a * a + b * b + c * c + d * d);
  EXPECT_NEAR(mixed[0], a / r, 1e-6);
  EXPECT_NEAR(mixed[2], c / r, 1e-6);
  EXPECT_NEAR(mixed[3], d / r, 1e-6);
}

TEST(Normalize, BelowContrastFloorIsZeroed) {
  std::vector<float> v = {1e-12f, 0.0f, -1e-12f};
  EXPECT_FALSE(normalize_descriptor(v, 0.2, 1e-10));
  for (float x : v) EXPECT_EQ(x, 0.0f);
}

TEST(Params, Validation) {
  DescriptorParams p;
  EXPECT_NO_THROW(p.validate());
  EXPECT_EQ(p.dimension(), 128);
  p.bin_sizes = {6, 4};
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.grid_step = 0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.bin_sizes.clear();
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.clamp = 0.0;
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(Dump, RoundTrip) {
  const fs::path path = fs::temp_directory_path() / "simsea_dump_test.desc";
  const auto set = extract_dense_descriptors(ramp(40, 40, 0.01, 0.005), DescriptorParams{}, "abc");
  write_descriptor_dump(path, set);
  EXPECT_EQ(fs::file_size(path), 8 + set.size() * (9 + 4 * 128));
  EXPECT_EQ(read_descriptor_dump(path, "abc"), set);
  fs::resize_file(path, fs::file_size(path) - 1);
  EXPECT_THROW(read_descriptor_dump(path), Error);
  fs::remove(path);
}

TEST(Dump, EmptySet) {
  const fs::path path = fs::temp_directory_path() / "simsea_dump_empty.desc";
  DescriptorSet set;
  set.dimension = 128;
  write_descriptor_dump(path, set);
  EXPECT_EQ(read_descriptor_dump(path), set);
  fs::remove(path);
}
