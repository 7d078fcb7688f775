#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "simsea/util.hpp"

namespace simsea::fixture {

/// Procedural polyseme corpus: every subsearch holds `targets` images of one
/// shared class and the rest from a class that occurs in that subsearch only.
struct SyntheticOptions {
  std::string category = "glass";
  std::vector<std::string> subsearch_labels = {"glass", "wine glass", "drinking glass", "glass goblet"};
  int images_per_subsearch = 40;
  int targets_per_subsearch = 20;
  int size = 128;
  std::uint64_t seed = 7;
  int subjects = 3;
};

struct SyntheticCorpus {
  std::filesystem::path manifest;
  std::filesystem::path labels;
  std::filesystem::path config;
  std::vector<std::string> image_ids;   // manifest order
  std::set<std::string> target_ids;    // members of the shared class
};

/// Grayscale PNG encoding of an 8-bit raster.
Bytes encode_png_gray(int width, int height, const std::vector<std::uint8_t>& pixels);

/// Texture kinds: 0 is the shared class, 1..4 are distractor classes.
std::vector<std::uint8_t> render_texture(int kind, int size, std::uint64_t seed);

/// Writes images/, manifest.json, labels.csv and config.json under `dir`.
/// Config paths are relative to `dir`; the work and cache dirs are dir/work and dir/cache.
SyntheticCorpus write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticOptions& options = {});

}  // namespace simsea::fixture
