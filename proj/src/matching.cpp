#include "simsea/matching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "simsea/error.hpp"
#include "simsea/log.hpp"

namespace simsea {

namespace {

void check_pair(const BowVector& p, const BowVector& q, const char* what) {
  if (p.degenerate() || q.degenerate())
    throw ValidationError(std::string(what) + ": degenerate (zero-descriptor) vector '" +
                          (p.degenerate() ? p.image_id : q.image_id) + "'");
  if (p.bins.size() != q.bins.size())
    throw ValidationError(std::string(what) + ": vectors have different bin counts");
}

}  // namespace

double bhattacharyya(const BowVector& p, const BowVector& q) {
  check_pair(p, q, "bhattacharyya");
  double bc = 0.0;
  for (std::size_t x = 0; x < p.bins.size(); ++x) bc += std::sqrt(p.bins[x] * q.bins[x]);
  return std::clamp(bc, 0.0, 1.0);
}

// Equal to sqrt(1 - BC) for normalized inputs, without the cancellation of
// 1 - BC near identity; an L2 distance of root vectors, so the triangle
// inequality holds exactly.
double hellinger(const BowVector& p, const BowVector& q) {
  check_pair(p, q, "hellinger");
  double s = 0.0;
  for (std::size_t x = 0; x < p.bins.size(); ++x) {
    const double d = std::sqrt(p.bins[x]) - std::sqrt(q.bins[x]);
    s += d * d;
  }
  return std::clamp(std::sqrt(0.5 * s), 0.0, 1.0);
}

double chi_square(const BowVector& p, const BowVector& q) {
  check_pair(p, q, "chi_square");
  double s = 0.0;
  for (std::size_t x = 0; x < p.bins.size(); ++x) {
    const double sum = p.bins[x] + q.bins[x];
    if (sum > 0.0) {
      const double diff = p.bins[x] - q.bins[x];
      s += diff * diff / sum;
    }
  }
  return std::clamp(0.5 * s, 0.0, 1.0);
}

std::string_view to_string(Metric metric) {
  return metric == Metric::hellinger ? "hellinger" : "chi_square";
}

Metric metric_from_string(std::string_view text) {
  if (text == "hellinger") return Metric::hellinger;
  if (text == "chi_square" || text == "chi2") return Metric::chi_square;
  throw ValidationError("unknown metric '" + std::string(text) + "' (expected hellinger or chi_square)");
}

double distance(Metric metric, const BowVector& p, const BowVector& q) {
  return metric == Metric::hellinger ? hellinger(p, q) : chi_square(p, q);
}

std::uint64_t comparison_count(std::span<const std::size_t> sizes) {
  auto choose2 = [](std::uint64_t n) { return n < 2 ? 0 : n * (n - 1) / 2; };
  std::uint64_t total = 0, within = 0;
  for (std::size_t s : sizes) {
    total += s;
    within += choose2(s);
  }
  return choose2(total) - within;
}

std::optional<std::size_t> SimilarityMatrix::index_of(std::string_view image_id) const {
  for (std::size_t i = 0; i < images.size(); ++i)
    if (images[i].image_id == image_id) return i;
  return std::nullopt;
}

std::optional<double> SimilarityMatrix::find(std::size_t i, std::size_t j) const {
  if (i == j) return std::nullopt;
  if (i > j) std::swap(i, j);
  auto it = std::lower_bound(entries.begin(), entries.end(), std::pair{i, j}, [](const Entry& e, const auto& key) {
    return std::pair<std::size_t, std::size_t>{e.i, e.j} < key;
  });
  if (it == entries.end() || it->i != i || it->j != j) return std::nullopt;
  return it->distance;
}

std::optional<double> SimilarityMatrix::find(std::string_view id_a, std::string_view id_b) const {
  auto a = index_of(id_a), b = index_of(id_b);
  if (!a || !b) return std::nullopt;
  return find(*a, *b);
}

SimilarityMatrix build_similarity_matrix(std::span<const LabeledVector> vectors, Metric metric, unsigned threads) {
  SimilarityMatrix m;
  m.metric = metric;

  std::vector<const LabeledVector*> usable;
  for (const auto& v : vectors) {
    if (v.vector.degenerate()) {
      m.excluded.push_back(v.vector.image_id);
      log::info("image " + v.vector.image_id + " has no descriptors; excluded from matching");
    } else {
      usable.push_back(&v);
    }
  }
  std::stable_sort(usable.begin(), usable.end(), [](const LabeledVector* a, const LabeledVector* b) {
    if (a->subsearch_order != b->subsearch_order) return a->subsearch_order < b->subsearch_order;
    if (a->original_rank != b->original_rank) return a->original_rank < b->original_rank;
    return a->vector.image_id < b->vector.image_id;
  });

  std::set<std::string> partitions;
  for (const auto* v : usable) partitions.insert(v->subsearch);
  if (partitions.size() < 2)
    throw ValidationError("similarity matrix needs non-degenerate images from at least 2 subsearches, got " +
                          std::to_string(partitions.size()));

  for (const auto* v : usable) m.images.push_back({v->vector.image_id, v->subsearch, v->subsearch_order, v->original_rank});

  // Pure per-row work, concatenated in row order.
  const std::size_t n = usable.size();
  std::vector<std::vector<SimilarityMatrix::Entry>> rows(n);
  parallel_for(n, threads, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (usable[i]->subsearch == usable[j]->subsearch) continue;
      rows[i].push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                         distance(metric, usable[i]->vector, usable[j]->vector)});
    }
  });
  for (auto& row : rows) m.entries.insert(m.entries.end(), row.begin(), row.end());
  return m;
}

RankingTable compute_ranking_factors(const SimilarityMatrix& matrix, double match_threshold) {
  if (!(match_threshold >= 0.0 && match_threshold <= 1.0))
    throw ValidationError("match threshold must lie in [0, 1]");
  RankingTable table;
  table.match_threshold = match_threshold;
  const std::size_t n = matrix.images.size();
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (const auto& e : matrix.entries) {
    if (e.distance <= match_threshold) {
      adj[e.i].push_back(e.j);
      adj[e.j].push_back(e.i);
    }
  }
  table.rows.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& row = table.rows[i];
    row.image = matrix.images[i];
    std::sort(adj[i].begin(), adj[i].end());
    for (auto j : adj[i]) row.matches.push_back(matrix.images[j].image_id);
    row.r = static_cast<int>(row.matches.size());
  }
  return table;
}

std::vector<std::string> ResultSet::ids() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.image.image_id);
  return out;
}

ResultSet select_result_set(const RankingTable& ranking, int min_r) {
  if (min_r < 0) throw ValidationError("min_r must be >= 0");
  ResultSet rs;
  rs.min_r = min_r;
  for (const auto& row : ranking.rows)
    if (row.r > min_r) rs.entries.push_back({row.image, row.r});
  std::stable_sort(rs.entries.begin(), rs.entries.end(), [](const ResultEntry& a, const ResultEntry& b) {
    if (a.r != b.r) return a.r > b.r;
    if (a.image.subsearch_order != b.image.subsearch_order) return a.image.subsearch_order < b.image.subsearch_order;
    if (a.image.original_rank != b.image.original_rank) return a.image.original_rank < b.image.original_rank;
    return a.image.image_id < b.image.image_id;
  });
  return rs;
}

}  // namespace simsea
