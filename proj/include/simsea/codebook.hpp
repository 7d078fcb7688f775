#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "simsea/corpus.hpp"
#include "simsea/features.hpp"

namespace simsea {

/// k visual words in descriptor space.
struct Codebook {
  int k = 0;
  int dim = 0;
  std::vector<float> centroids;  // k x dim, row-major
  std::uint64_t seed = 0;
  std::vector<std::string> training_image_ids;
  std::string params_digest;

  std::span<const float> centroid(int j) const {
    return {centroids.data() + static_cast<std::size_t>(j) * dim, static_cast<std::size_t>(dim)};
  }
  bool operator==(const Codebook&) const = default;
};

/// Uniform sample without replacement of up to per_category ok records from
/// every category, in category order of first appearance. Within a category
/// the sample keeps corpus order. Throws ValidationError for a category
/// without ok records.
std::vector<ImageRecord> sample_training_images(const std::vector<ImageRecord>& corpus, int per_category,
                                                std::uint64_t seed);

struct KMeansOptions {
  int k = 200;
  std::uint64_t seed = 0;
  int max_iters = 100;
  double tol = 1e-4;
  unsigned threads = 0;
};

struct KMeansResult {
  Codebook codebook;
  /// Mean squared distance to the assigned centroid, one entry per assignment pass.
  std::vector<double> distortion;
  int iterations = 0;
  bool converged = false;
  std::size_t distinct_points = 0;
  /// Centroids at training precision; the codebook holds them rounded to f32.
  std::vector<double> centroids_f64;
};

/// k-means++ seeding followed by Lloyd iterations. `descriptors` holds
/// count x dim values. Stops when the largest centroid displacement drops
/// below tol or after max_iters updates. Empty clusters are reseeded to the
/// points farthest from their assigned centroid.
KMeansResult train_codebook(std::span<const float> descriptors, int dim, const KMeansOptions& options);

/// Nearest centroid by squared Euclidean distance, lowest index on ties.
int quantize(std::span<const float> descriptor, const Codebook& codebook);

/// L1-normalized visual-word histogram.
struct BowVector {
  std::string image_id;
  std::vector<double> bins;
  std::size_t descriptor_count = 0;

  bool degenerate() const { return descriptor_count == 0; }
  bool operator==(const BowVector&) const = default;
};

BowVector bow_vector(const DescriptorSet& descriptors, const Codebook& codebook);

/// Codebook file: JSON header next to a raw blob of k x dim little-endian
/// f32 values. `json_path` names the header; the blob is `<json_path>.f32`.
void write_codebook(const std::filesystem::path& json_path, const Codebook& codebook);
Codebook read_codebook(const std::filesystem::path& json_path);

}  // namespace simsea
