#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "simsea/corpus.hpp"

namespace simsea {

/// Geometry of the dense gradient-orientation descriptor. One descriptor is
/// computed per grid point and per entry of bin_sizes; the support window of
/// a descriptor is spatial_cells * bin_size pixels on each side.
struct DescriptorParams {
  int grid_step = 5;
  std::vector<int> bin_sizes{4, 6, 8, 10};
  int orientation_bins = 8;
  int spatial_cells = 4;
  double clamp = 0.2;
  double contrast_floor = 1e-10;

  int dimension() const { return spatial_cells * spatial_cells * orientation_bins; }
  /// Throws ValidationError when a field is out of range.
  void validate() const;
};

struct DescriptorFrame {
  std::uint32_t x = 0;  // top-left corner of the support window
  std::uint32_t y = 0;
  std::uint8_t scale_index = 0;

  bool operator==(const DescriptorFrame&) const = default;
};

/// Descriptors of one image, stored as a dense count x dimension matrix.
struct DescriptorSet {
  std::string image_id;
  int dimension = 0;
  std::vector<DescriptorFrame> frames;
  std::vector<float> data;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  std::span<const float> vector(std::size_t i) const {
    return {data.data() + i * static_cast<std::size_t>(dimension), static_cast<std::size_t>(dimension)};
  }
  bool operator==(const DescriptorSet&) const = default;
};

/// Number of valid grid positions along an axis of `extent` pixels.
int grid_positions(int extent, int support, int grid_step);

/// Dense multi-scale descriptors on a fixed grid. Gradients by central
/// differences with replicated borders; magnitudes are voted into an
/// orientation histogram per spatial cell with bilinear spatial and
/// orientation weights and a flat window. Each descriptor is L2-normalized,
/// clamped, and renormalized; descriptors whose raw L2 norm is below
/// contrast_floor are emitted as zero vectors.
DescriptorSet extract_dense_descriptors(const GrayRaster& raster, const DescriptorParams& params,
                                        std::string image_id = {});

/// In-place normalize -> clamp -> renormalize. Returns false (and zeroes the
/// vector) when the raw L2 norm is below contrast_floor.
bool normalize_descriptor(std::span<float> v, double clamp, double contrast_floor);

// Binary dump: u32 dimension, u32 count, then per descriptor
// u32 x, u32 y, u8 scale, dimension x f32, all little-endian.
void write_descriptor_dump(const std::filesystem::path& path, const DescriptorSet& set);
DescriptorSet read_descriptor_dump(const std::filesystem::path& path, std::string image_id = {});

}  // namespace simsea
