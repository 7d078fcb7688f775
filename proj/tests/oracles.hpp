#pragma once

// Independent reference computations used by the unit tests and the acceptance
// binary. Each one is a direct, unoptimized evaluation of the definition.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "simsea/codebook.hpp"
#include "simsea/matching.hpp"

namespace oracle {

/// Random distribution over k bins; roughly `zero_fraction` of the bins are empty.
inline simsea::BowVector random_distribution(std::mt19937_64& rng, int k, double zero_fraction = 0.3,
                                             std::string id = {}) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::exponential_distribution<double> e(1.0);
  simsea::BowVector v;
  v.image_id = std::move(id);
  v.bins.resize(static_cast<std::size_t>(k));
  double total = 0.0;
  for (auto& b : v.bins) {
    b = u(rng) < zero_fraction ? 0.0 : e(rng);
    total += b;
  }
  if (total == 0.0) {
    v.bins[0] = 1.0;
    total = 1.0;
  }
  for (auto& b : v.bins) b /= total;
  v.descriptor_count = 1;
  return v;
}

inline double bc(const std::vector<double>& p, const std::vector<double>& q) {
  long double s = 0.0L;
  for (std::size_t x = 0; x < p.size(); ++x) s += std::sqrt(static_cast<long double>(p[x]) * q[x]);
  return static_cast<double>(s);
}

inline double hellinger(const std::vector<double>& p, const std::vector<double>& q) {
  return std::sqrt(std::max(0.0, 1.0 - bc(p, q)));
}

struct Pair {
  std::string a, b;
  double distance;
};

/// All cross-subsearch pairs in (subsearch order, rank, id) order, i < j.
inline std::vector<Pair> naive_matrix(std::vector<simsea::LabeledVector> v) {
  std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) {
    return std::tie(x.subsearch_order, x.original_rank, x.vector.image_id) <
           std::tie(y.subsearch_order, y.original_rank, y.vector.image_id);
  });
  std::vector<Pair> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j)
      if (v[i].subsearch != v[j].subsearch)
        out.push_back({v[i].vector.image_id, v[j].vector.image_id, hellinger(v[i].vector.bins, v[j].vector.bins)});
  return out;
}

inline std::uint64_t enumerate_pairs(const std::vector<std::size_t>& sizes) {
  std::vector<std::size_t> owner;
  for (std::size_t s = 0; s < sizes.size(); ++s) owner.insert(owner.end(), sizes[s], s);
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < owner.size(); ++i)
    for (std::size_t j = i + 1; j < owner.size(); ++j) n += owner[i] != owner[j];
  return n;
}

inline long double sq_dist(const float* a, const float* b, int dim) {
  long double s = 0.0L;
  for (int d = 0; d < dim; ++d) {
    const long double t = static_cast<long double>(a[d]) - b[d];
    s += t * t;
  }
  return s;
}

/// Linear scan, first minimum wins.
inline int nearest(const float* x, const simsea::Codebook& cb) {
  int best = 0;
  long double best_d = std::numeric_limits<long double>::infinity();
  for (int j = 0; j < cb.k; ++j) {
    const long double d = sq_dist(x, cb.centroids.data() + static_cast<std::size_t>(j) * cb.dim, cb.dim);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

/// Sum of squared distances of a 2-way partition, each side at its own mean.
inline long double partition_cost(const std::vector<float>& pts, int dim, std::uint64_t mask) {
  const std::size_t n = pts.size() / dim;
  long double cost = 0.0L;
  for (int side = 0; side < 2; ++side) {
    std::vector<long double> mean(dim, 0.0L);
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (((mask >> i) & 1u) == static_cast<unsigned>(side)) {
        ++count;
        for (int d = 0; d < dim; ++d) mean[d] += pts[i * dim + d];
      }
    if (count == 0) return std::numeric_limits<long double>::infinity();
    for (auto& m : mean) m /= count;
    for (std::size_t i = 0; i < n; ++i)
      if (((mask >> i) & 1u) == static_cast<unsigned>(side))
        for (int d = 0; d < dim; ++d) cost += (pts[i * dim + d] - mean[d]) * (pts[i * dim + d] - mean[d]);
  }
  return cost;
}

/// Optimal 2-partition by exhaustive search; point 0 is always on side 0.
inline std::uint64_t best_two_partition(const std::vector<float>& pts, int dim) {
  const std::size_t n = pts.size() / dim;
  std::uint64_t best = 0;
  long double best_cost = std::numeric_limits<long double>::infinity();
  for (std::uint64_t mask = 2; mask < (1ull << n); mask += 2) {
    const long double c = partition_cost(pts, dim, mask);
    if (c < best_cost) {
      best_cost = c;
      best = mask;
    }
  }
  return best;
}

}  // namespace oracle
