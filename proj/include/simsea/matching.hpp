#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "simsea/codebook.hpp"

namespace simsea {

/// Sum over bins of sqrt(P(x) Q(x)), clamped to [0, 1].
/// Throws ValidationError if either vector is degenerate or the sizes differ.
double bhattacharyya(const BowVector& p, const BowVector& q);

/// sqrt(1 - BC(P, Q)); 0 for identical distributions, 1 for disjoint support.
double hellinger(const BowVector& p, const BowVector& q);

/// Symmetric chi-square distance 0.5 * sum (p - q)^2 / (p + q), in [0, 1].
double chi_square(const BowVector& p, const BowVector& q);

enum class Metric { hellinger, chi_square };

std::string_view to_string(Metric metric);
Metric metric_from_string(std::string_view text);

double distance(Metric metric, const BowVector& p, const BowVector& q);

/// Number of cross-subsearch pairs: C(N, 2) - sum C(|s_i|, 2).
std::uint64_t comparison_count(std::span<const std::size_t> sizes);

/// A bag-of-words vector tagged with its place in the search results.
struct LabeledVector {
  BowVector vector;
  std::string subsearch;
  int subsearch_order = 0;
  int original_rank = 0;
};

struct ImageRef {
  std::string image_id;
  std::string subsearch;
  int subsearch_order = 0;
  int original_rank = 0;
};

/// Upper-triangular inter-subsearch distances. Images are held in the global
/// order (subsearch order, then original rank); every entry has i < j and the
/// two images come from different subsearches.
struct SimilarityMatrix {
  struct Entry {
    std::uint32_t i = 0;
    std::uint32_t j = 0;
    double distance = 0.0;
    bool operator==(const Entry&) const = default;
  };

  std::vector<ImageRef> images;
  std::vector<Entry> entries;  // sorted by (i, j)
  std::vector<std::string> excluded;  // degenerate vectors, not compared
  Metric metric = Metric::hellinger;

  std::optional<double> find(std::size_t i, std::size_t j) const;
  std::optional<double> find(std::string_view id_a, std::string_view id_b) const;
  std::optional<std::size_t> index_of(std::string_view image_id) const;
};

/// Throws ValidationError unless at least two subsearches hold a non-degenerate vector.
SimilarityMatrix build_similarity_matrix(std::span<const LabeledVector> vectors, Metric metric = Metric::hellinger,
                                         unsigned threads = 0);

struct RankingRow {
  ImageRef image;
  int r = 0;
  std::vector<std::string> matches;  // in global image order
};

struct RankingTable {
  std::vector<RankingRow> rows;  // same order as SimilarityMatrix::images
  double match_threshold = 0.0;
};

/// Two images match iff their stored distance is <= match_threshold; r counts
/// each image's matches across all other subsearches.
RankingTable compute_ranking_factors(const SimilarityMatrix& matrix, double match_threshold);

struct ResultEntry {
  ImageRef image;
  int r = 0;
  bool operator==(const ResultEntry& o) const { return image.image_id == o.image.image_id && r == o.r; }
};

struct ResultSet {
  std::vector<ResultEntry> entries;  // descending r, ties by (subsearch order, rank)
  int min_r = 1;

  std::vector<std::string> ids() const;
};

/// Keeps images with r > min_r, ordered by descending r.
ResultSet select_result_set(const RankingTable& ranking, int min_r = 1);

}  // namespace simsea
