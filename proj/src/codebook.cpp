#include "simsea/codebook.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string_view>
#include <unordered_set>

#include "simsea/error.hpp"
#include "simsea/log.hpp"

namespace simsea {

using json = nlohmann::json;

std::vector<ImageRecord> sample_training_images(const std::vector<ImageRecord>& corpus, int per_category,
                                                std::uint64_t seed) {
  if (per_category < 1) throw ValidationError("per_category must be >= 1");
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> ok_by_category;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& rec = corpus[i];
    auto [it, inserted] = ok_by_category.try_emplace(rec.category);
    if (inserted) order.push_back(rec.category);
    if (rec.ok()) it->second.push_back(i);
  }

  std::mt19937_64 rng(seed);
  std::vector<ImageRecord> sample;
  for (const auto& category : order) {
    auto& pool = ok_by_category[category];
    if (pool.empty()) throw ValidationError("category '" + category + "' has no decodable images to sample");
    const std::size_t want = static_cast<std::size_t>(per_category);
    if (pool.size() < want) {
      log::warn("category '" + category + "' has only " + std::to_string(pool.size()) +
                " usable images; sampling all of them instead of " + std::to_string(want));
    }
    const std::size_t take = std::min(want, pool.size());
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t remaining = pool.size() - i;
      const std::size_t j = i + static_cast<std::size_t>(unit_double(rng()) * remaining);
      std::swap(pool[i], pool[std::min(j, pool.size() - 1)]);
    }
    std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t idx : chosen) sample.push_back(corpus[idx]);
  }
  return sample;
}

namespace {

constexpr std::size_t kChunk = 4096;

double squared_distance(const float* x, const double* c, int dim) {
  double s = 0.0;
#pragma omp simd reduction(+ : s)
  for (int d = 0; d < dim; ++d) {
    const double diff = static_cast<double>(x[d]) - c[d];
    s += diff * diff;
  }
  return s;
}

double squared_distance(const double* a, const double* b, int dim) {
  double s = 0.0;
#pragma omp simd reduction(+ : s)
  for (int d = 0; d < dim; ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

std::size_t count_distinct(std::span<const float> data, int dim, std::size_t n) {
  std::unordered_set<std::string_view> seen;
  seen.reserve(n);
  const char* base = reinterpret_cast<const char*>(data.data());
  const std::size_t row = static_cast<std::size_t>(dim) * sizeof(float);
  for (std::size_t i = 0; i < n; ++i) seen.emplace(base + i * row, row);
  return seen.size();
}

// Lloyd iteration with Hamerly bounds. Pruning only happens when the bounds
// separate the assigned centroid from every other one by a relative margin,
// so assignments equal those of an exhaustive scan.
class Lloyd {
 public:
  Lloyd(std::span<const float> data, int dim, int k, unsigned threads)
      : data_(data),
        dim_(dim),
        k_(k),
        n_(data.size() / dim),
        threads_(threads),
        centroids_(static_cast<std::size_t>(k) * dim),
        assign_(n_, 0),
        upper_(n_, 0.0),
        lower_(n_, 0.0),
        sqdist_(n_, 0.0),
        half_sep_(k, 0.0) {}

  const float* point(std::size_t i) const { return data_.data() + i * dim_; }
  double* centroid(int j) { return centroids_.data() + static_cast<std::size_t>(j) * dim_; }
  const double* centroid(int j) const { return centroids_.data() + static_cast<std::size_t>(j) * dim_; }
  std::vector<double>& centroids() { return centroids_; }
  const std::vector<int>& assignment() const { return assign_; }
  std::size_t size() const { return n_; }

  void seed_plus_plus(std::mt19937_64& rng) {
    std::vector<double> d2(n_, std::numeric_limits<double>::infinity());
    std::size_t first = std::min(static_cast<std::size_t>(unit_double(rng()) * n_), n_ - 1);
    set_centroid_to_point(0, first);
    bool pinned_warned = false;
    for (int j = 1; j <= k_; ++j) {
      const double* c = centroid(j - 1);
      parallel_chunks([&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) d2[i] = std::min(d2[i], squared_distance(point(i), c, dim_));
      });
      if (j == k_) break;
      double total = 0.0;
      for (double v : d2) total += v;
      std::size_t pick = 0;
      if (total > 0.0) {
        const double target = unit_double(rng()) * total;
        double acc = 0.0;
        pick = n_;
        for (std::size_t i = 0; i < n_; ++i) {
          if (d2[i] <= 0.0) continue;
          acc += d2[i];
          if (acc > target) {
            pick = i;
            break;
          }
        }
        if (pick == n_) {
          // Rounding left target at the top of the range: take the last positive entry.
          for (std::size_t i = n_; i-- > 0;) {
            if (d2[i] > 0.0) {
              pick = i;
              break;
            }
          }
        }
      } else {
        if (!pinned_warned) {
          log::warn("k-means: fewer distinct descriptors than k=" + std::to_string(k_) +
                    "; surplus centroids pinned to duplicate points");
          pinned_warned = true;
        }
        pick = std::min(static_cast<std::size_t>(unit_double(rng()) * n_), n_ - 1);
      }
      set_centroid_to_point(j, pick);
    }
  }

  // Exhaustive assignment of every point; initializes the bounds.
  void assign_full() {
    update_separation();
    parallel_chunks([&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) full_scan(i);
    });
  }

  // Bounded assignment after centroids moved by `shift`.
  void assign_bounded(const std::vector<double>& shift) {
    int far = 0;
    for (int j = 1; j < k_; ++j)
      if (shift[j] > shift[far]) far = j;
    double second = 0.0;
    for (int j = 0; j < k_; ++j)
      if (j != far) second = std::max(second, shift[j]);
    update_separation();
    parallel_chunks([&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        const int a = assign_[i];
        upper_[i] += shift[a];
        lower_[i] -= (a == far ? second : shift[far]);
        const double bound = std::max(half_sep_[a], lower_[i]);
        if (safely_below(upper_[i], bound)) continue;
        upper_[i] = std::sqrt(squared_distance(point(i), centroid(a), dim_));
        if (safely_below(upper_[i], bound)) continue;
        full_scan(i);
      }
    });
  }

  // Mean squared distance to assigned centroids; also refreshes per-point distances.
  double distortion() {
    parallel_chunks([&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) sqdist_[i] = squared_distance(point(i), centroid(assign_[i]), dim_);
    });
    double total = 0.0;
    for (double v : sqdist_) total += v;
    return total / static_cast<double>(n_);
  }

  // Recomputes centroids as cluster means; returns the indices of empty clusters.
  std::vector<int> update_means() {
    const std::size_t chunks = (n_ + kChunk - 1) / kChunk;
    const std::size_t kd = static_cast<std::size_t>(k_) * dim_;
    std::vector<std::vector<double>> partial(chunks);
    std::vector<std::vector<std::size_t>> partial_counts(chunks);
    parallel_for(chunks, threads_, [&](std::size_t c) {
      auto& sums = partial[c];
      auto& counts = partial_counts[c];
      sums.assign(kd, 0.0);
      counts.assign(k_, 0);
      const std::size_t end = std::min(n_, (c + 1) * kChunk);
      for (std::size_t i = c * kChunk; i < end; ++i) {
        const int a = assign_[i];
        ++counts[a];
        double* s = sums.data() + static_cast<std::size_t>(a) * dim_;
        const float* x = point(i);
        for (int d = 0; d < dim_; ++d) s[d] += x[d];
      }
    });
    std::vector<double> sums(kd, 0.0);
    std::vector<std::size_t> counts(k_, 0);
    for (std::size_t c = 0; c < chunks; ++c) {
      for (std::size_t t = 0; t < kd; ++t) sums[t] += partial[c][t];
      for (int j = 0; j < k_; ++j) counts[j] += partial_counts[c][j];
    }
    std::vector<int> empty;
    for (int j = 0; j < k_; ++j) {
      if (counts[j] == 0) {
        empty.push_back(j);
        continue;
      }
      double* c = centroid(j);
      const double inv = 1.0 / static_cast<double>(counts[j]);
      for (int d = 0; d < dim_; ++d) c[d] = sums[static_cast<std::size_t>(j) * dim_ + d] * inv;
    }
    return empty;
  }

  // Moves each empty centroid onto the point farthest from its own centroid.
  void reseed(const std::vector<int>& empty) {
    if (empty.empty()) return;
    std::vector<double> d2(n_);
    parallel_chunks([&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) d2[i] = squared_distance(point(i), centroid(assign_[i]), dim_);
    });
    std::vector<std::size_t> idx(n_);
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t take = std::min(empty.size(), n_);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                      [&](std::size_t a, std::size_t b) { return d2[a] > d2[b] || (d2[a] == d2[b] && a < b); });
    for (std::size_t e = 0; e < empty.size(); ++e) set_centroid_to_point(empty[e], idx[std::min(e, take - 1)]);
    log::debug("k-means: reseeded " + std::to_string(empty.size()) + " empty cluster(s)");
  }

 private:
  static bool safely_below(double u, double bound) { return u * (1.0 + 1e-9) + 1e-12 < bound; }

  template <class Fn>
  void parallel_chunks(Fn&& fn) {
    const std::size_t chunks = (n_ + kChunk - 1) / kChunk;
    parallel_for(chunks, threads_, [&](std::size_t c) { fn(c * kChunk, std::min(n_, (c + 1) * kChunk)); });
  }

  void set_centroid_to_point(int j, std::size_t i) {
    const float* x = point(i);
    double* c = centroid(j);
    for (int d = 0; d < dim_; ++d) c[d] = x[d];
  }

  void update_separation() {
    std::fill(half_sep_.begin(), half_sep_.end(), std::numeric_limits<double>::infinity());
    for (int a = 0; a < k_; ++a) {
      for (int b = a + 1; b < k_; ++b) {
        const double d = 0.5 * std::sqrt(squared_distance(centroid(a), centroid(b), dim_));
        half_sep_[a] = std::min(half_sep_[a], d);
        half_sep_[b] = std::min(half_sep_[b], d);
      }
    }
  }

  void full_scan(std::size_t i) {
    double best = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    int arg = 0;
    const float* x = point(i);
    for (int j = 0; j < k_; ++j) {
      const double d = squared_distance(x, centroid(j), dim_);
      if (d < best) {
        second = best;
        best = d;
        arg = j;
      } else if (d < second) {
        second = d;
      }
    }
    assign_[i] = arg;
    upper_[i] = std::sqrt(best);
    lower_[i] = std::sqrt(second);
  }

  std::span<const float> data_;
  int dim_;
  int k_;
  std::size_t n_;
  unsigned threads_;
  std::vector<double> centroids_;
  std::vector<int> assign_;
  std::vector<double> upper_;
  std::vector<double> lower_;
  std::vector<double> sqdist_;
  std::vector<double> half_sep_;
};

}  // namespace

KMeansResult train_codebook(std::span<const float> descriptors, int dim, const KMeansOptions& options) {
  if (dim < 1) throw ValidationError("k-means: dimension must be >= 1");
  if (options.k < 1) throw ValidationError("k-means: k must be >= 1");
  if (descriptors.size() % static_cast<std::size_t>(dim) != 0)
    throw ValidationError("k-means: descriptor buffer is not a multiple of the dimension");
  const std::size_t n = descriptors.size() / dim;
  if (n == 0) throw ValidationError("k-means: no training descriptors");
  if (options.max_iters < 0) throw ValidationError("k-means: max_iters must be >= 0");

  KMeansResult result;
  result.distinct_points = count_distinct(descriptors, dim, n);
  if (result.distinct_points < static_cast<std::size_t>(options.k)) {
    log::warn("k-means: k=" + std::to_string(options.k) + " exceeds the " + std::to_string(result.distinct_points) +
              " distinct descriptors");
  }

  std::mt19937_64 rng(options.seed);
  Lloyd lloyd(descriptors, dim, options.k, options.threads);
  lloyd.seed_plus_plus(rng);
  lloyd.assign_full();
  result.distortion.push_back(lloyd.distortion());

  std::vector<double> previous;
  std::vector<double> shift(options.k);
  for (int iter = 0; iter < options.max_iters; ++iter) {
    previous = lloyd.centroids();
    const auto empty = lloyd.update_means();
    lloyd.reseed(empty);
    double max_shift = 0.0;
    for (int j = 0; j < options.k; ++j) {
      shift[j] = std::sqrt(squared_distance(previous.data() + static_cast<std::size_t>(j) * dim,
                                            lloyd.centroid(j), dim));
      max_shift = std::max(max_shift, shift[j]);
    }
    ++result.iterations;
    lloyd.assign_bounded(shift);
    result.distortion.push_back(lloyd.distortion());
    if (max_shift < options.tol) {
      result.converged = true;
      break;
    }
  }

  Codebook& cb = result.codebook;
  cb.k = options.k;
  cb.dim = dim;
  cb.seed = options.seed;
  cb.centroids.resize(static_cast<std::size_t>(options.k) * dim);
  for (std::size_t t = 0; t < cb.centroids.size(); ++t) cb.centroids[t] = static_cast<float>(lloyd.centroids()[t]);
  result.centroids_f64 = lloyd.centroids();
  return result;
}

int quantize(std::span<const float> descriptor, const Codebook& codebook) {
  if (static_cast<int>(descriptor.size()) != codebook.dim)
    throw ValidationError("quantize: descriptor dimension " + std::to_string(descriptor.size()) +
                          " does not match codebook dimension " + std::to_string(codebook.dim));
  const int k = codebook.k;
  const int dim = codebook.dim;
  const float* x = descriptor.data();

  // Single-precision scan, then an exact double re-check of every centroid
  // that lands within rounding distance of the best one.
  thread_local std::vector<float> dist;
  dist.resize(k);
  float best = std::numeric_limits<float>::infinity();
  for (int j = 0; j < k; ++j) {
    const float* c = codebook.centroids.data() + static_cast<std::size_t>(j) * dim;
    float s = 0.0f;
#pragma omp simd reduction(+ : s)
    for (int d = 0; d < dim; ++d) {
      const float diff = x[d] - c[d];
      s += diff * diff;
    }
    dist[j] = s;
    best = std::min(best, s);
  }
  const float cutoff = best * (1.0f + 1e-4f) + 1e-6f;
  int arg = -1;
  double exact_best = std::numeric_limits<double>::infinity();
  for (int j = 0; j < k; ++j) {
    if (dist[j] > cutoff) continue;
    const float* c = codebook.centroids.data() + static_cast<std::size_t>(j) * dim;
    double s = 0.0;
    for (int d = 0; d < dim; ++d) {
      const double diff = static_cast<double>(x[d]) - c[d];
      s += diff * diff;
    }
    if (s < exact_best) {
      exact_best = s;
      arg = j;
    }
  }
  return arg;
}

BowVector bow_vector(const DescriptorSet& descriptors, const Codebook& codebook) {
  BowVector bow;
  bow.image_id = descriptors.image_id;
  bow.bins.assign(codebook.k, 0.0);
  bow.descriptor_count = descriptors.size();
  if (descriptors.empty()) return bow;
  if (descriptors.dimension != codebook.dim)
    throw ValidationError("bow_vector: descriptor dimension does not match codebook");
  std::vector<std::size_t> counts(codebook.k, 0);
  for (std::size_t i = 0; i < descriptors.size(); ++i) ++counts[quantize(descriptors.vector(i), codebook)];
  const double total = static_cast<double>(descriptors.size());
  for (int j = 0; j < codebook.k; ++j) bow.bins[j] = static_cast<double>(counts[j]) / total;
  return bow;
}

void write_codebook(const std::filesystem::path& json_path, const Codebook& codebook) {
  std::vector<std::uint8_t> blob;
  blob.reserve(codebook.centroids.size() * 4);
  for (float f : codebook.centroids) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) blob.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  auto blob_path = json_path;
  blob_path += ".f32";
  write_file_atomic(blob_path, blob);
  json header = {{"k", codebook.k},
                 {"dim", codebook.dim},
                 {"seed", codebook.seed},
                 {"training_image_ids", codebook.training_image_ids},
                 {"params_digest", codebook.params_digest},
                 {"centroids", blob_path.filename().string()},
                 {"centroids_sha256", sha256_hex(blob)}};
  write_file_atomic(json_path, header.dump(2) + "\n");
}

Codebook read_codebook(const std::filesystem::path& json_path) {
  json header;
  try {
    header = json::parse(read_text_file(json_path));
  } catch (const json::exception& e) {
    throw ValidationError("codebook header " + json_path.string() + ": " + e.what());
  }
  Codebook cb;
  cb.k = header.at("k").get<int>();
  cb.dim = header.at("dim").get<int>();
  cb.seed = header.at("seed").get<std::uint64_t>();
  cb.training_image_ids = header.at("training_image_ids").get<std::vector<std::string>>();
  cb.params_digest = header.value("params_digest", "");
  const auto blob = read_file(json_path.parent_path() / header.at("centroids").get<std::string>());
  if (blob.size() != static_cast<std::size_t>(cb.k) * cb.dim * 4)
    throw ValidationError("codebook blob size mismatch for " + json_path.string());
  if (header.contains("centroids_sha256") && header["centroids_sha256"].get<std::string>() != sha256_hex(blob))
    throw ValidationError("codebook blob checksum mismatch for " + json_path.string());
  cb.centroids.resize(blob.size() / 4);
  for (std::size_t t = 0; t < cb.centroids.size(); ++t) {
    const std::uint8_t* p = blob.data() + 4 * t;
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
                               static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
    cb.centroids[t] = std::bit_cast<float>(bits);
  }
  return cb;
}

}  // namespace simsea
