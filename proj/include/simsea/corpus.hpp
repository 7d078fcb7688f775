#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "simsea/util.hpp"

namespace simsea {

/// One image search: a label (cue + basic term, or the bare term) and its
/// result sources in original search-rank order.
struct SubsearchSpec {
  std::string label;
  std::vector<std::string> sources;
};

struct CorpusManifest {
  std::string category;
  int version = 1;
  std::vector<SubsearchSpec> subsearches;
  /// Label of the cue-less subsearch used as the plain search-engine
  /// baseline. Empty when the manifest has none.
  std::string baseline_label;
  /// Directory that relative sources resolve against.
  std::filesystem::path base_dir;
};

/// Parses and validates a manifest. Within-subsearch duplicate sources are
/// collapsed (first occurrence kept) with a warning per collapse.
/// Throws ManifestError with line or field context.
CorpusManifest load_manifest(const std::filesystem::path& path);
CorpusManifest parse_manifest(std::string_view json_text, const std::filesystem::path& base_dir = {});

enum class ImageStatus { ok, fetch_error, decode_error };

std::string_view to_string(ImageStatus status);
ImageStatus image_status_from_string(std::string_view text);

struct ImageRecord {
  std::string id;
  std::string category;
  std::string subsearch_label;
  int subsearch_index = 0;
  int original_rank = 0;
  std::string source;
  std::string content_hash;  // lowercase hex SHA-256, empty unless ok
  int width = 0;
  int height = 0;
  ImageStatus status = ImageStatus::fetch_error;
  std::string error;  // diagnostic for non-ok records

  bool ok() const { return status == ImageStatus::ok; }
  bool operator==(const ImageRecord&) const = default;
};

/// Corpus-wide image id. Derived from subsearch, source, and content so that
/// identical bytes in two subsearches stay distinct records.
std::string make_image_id(std::string_view subsearch_label, std::string_view source,
                          std::string_view content_hash);

struct FetchOptions {
  std::filesystem::path cache_dir;
  unsigned parallelism = 8;
  long timeout_seconds = 30;
};

struct FetchStats {
  std::size_t downloads = 0;
  std::size_t cache_hits = 0;
  std::size_t local_reads = 0;
  std::size_t failures = 0;
};

/// Fetches every source of the manifest into the content-addressed cache and
/// returns one record per source in manifest order. Failures never abort:
/// they are recorded as fetch_error or decode_error.
std::vector<ImageRecord> fetch_images(const CorpusManifest& manifest, const FetchOptions& options,
                                      FetchStats* stats = nullptr);

/// Cache blob path for a content hash.
std::filesystem::path cache_blob_path(const std::filesystem::path& cache_dir, std::string_view content_hash);

struct GrayRaster {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // row-major, in [0, 1]

  GrayRaster() = default;
  GrayRaster(int w, int h, float fill = 0.0f)
      : width(w), height(h), values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB8
};

inline constexpr int kDefaultMaxDim = 640;

/// Decodes PNG or JPEG bytes to 8-bit RGB. Throws DecodeError.
RgbImage decode_rgb(std::span<const std::uint8_t> bytes);

/// BT.601 luminance on [0,1] channels, bilinear downscale so the longer side
/// is at most max_dim. Throws DecodeError on unsupported or corrupt input.
GrayRaster decode_to_gray(std::span<const std::uint8_t> bytes, int max_dim = kDefaultMaxDim);

GrayRaster to_gray(const RgbImage& image);
GrayRaster resize_bilinear(const GrayRaster& raster, int width, int height);
GrayRaster limit_size(const GrayRaster& raster, int max_dim);

}  // namespace simsea
