// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "fixture/synthetic.hpp"
#include "oracles.hpp"
#include "simsea/codebook.hpp"
#include "simsea/evaluation.hpp"
#include "simsea/log.hpp"
#include "simsea/matching.hpp"
#include "simsea/pipeline.hpp"

using namespace simsea;
namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances.
constexpr double kSymmetryTol = 1e-12;
constexpr double kIdentityTol = 1e-9;
constexpr double kTriangleSlack = 1e-9;
constexpr double kSelfOverlapTol = 1e-9;
constexpr double kMetricSuiteSeconds = 5.0;
constexpr double kClosedFormTol = 1e-6;
constexpr double kOracleDistanceTol = 1e-12;
constexpr double kMeanTol = 1e-9;
constexpr double kMinSimseaPrecision = 0.9;
constexpr double kMaxSumGooglePrecision = 0.6;
constexpr double kMinSimseaRecall = 0.8;
constexpr double kExperimentSeconds = 60.0;
constexpr double kMinAgreement = 0.5;

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s  %-30s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

Outcome metric_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double sym = 0, ident = 0, tri = -1.0, self = 0;
  bool range = true;
  for (int t = 0; t < 1000; ++t) {
    const auto p = oracle::random_distribution(rng, 200);
    const auto q = oracle::random_distribution(rng, 200);
    const auto r = oracle::random_distribution(rng, 200);
    const double pq = hellinger(p, q);
    sym = std::max(sym, std::abs(pq - hellinger(q, p)));
    ident = std::max(ident, hellinger(p, p));
    self = std::max(self, std::abs(bhattacharyya(p, p) - 1.0));
    tri = std::max(tri, pq - hellinger(p, r) - hellinger(r, q));
    range = range && pq >= 0.0 && pq <= 1.0;
  }
  const double secs = seconds_since(t0);
  const bool ok = sym <= kSymmetryTol && ident <= kIdentityTol && tri <= kTriangleSlack && self <= kSelfOverlapTol &&
                  range && secs < kMetricSuiteSeconds;
  return {ok, "max asym " + fmt(sym) + ", max H(P,P) " + fmt(ident) + ", max triangle excess " + fmt(tri) +
                  ", max |BC(P,P)-1| " + fmt(self) + ", " + fmt(secs, 3) + " s"};
}

Outcome closed_form() {
  BowVector p, q;
  p.bins = {1.0, 0.0};
  q.bins = {0.5, 0.5};
  p.descriptor_count = q.descriptor_count = 1;
  const double h = hellinger(p, q), bc = bhattacharyya(p, q);
  const double h_ref = oracle::hellinger(p.bins, q.bins), bc_ref = oracle::bc(p.bins, q.bins);
  const bool ok = std::abs(h - 0.541196) <= kClosedFormTol && std::abs(bc - 0.707107) <= kClosedFormTol &&
                  std::abs(h - h_ref) <= kClosedFormTol && std::abs(bc - bc_ref) <= kClosedFormTol;
  return {ok, "H = " + fmt(h, 9) + ", BC = " + fmt(bc, 9)};
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(77);
  std::size_t entries = 0;
  for (int t = 0; t < 20; ++t) {
    const int parts = 2 + static_cast<int>(rng() % 4);
    const int n = parts + static_cast<int>(rng() % (31 - parts));
    std::vector<LabeledVector> v;
    for (int i = 0; i < n; ++i) {
      const int part = i < parts ? i : static_cast<int>(rng() % parts);
      v.push_back({oracle::random_distribution(rng, 200, 0.4, "i" + std::to_string(i)), "s" + std::to_string(part),
                   part, static_cast<int>(rng() % 40)});
    }
    std::shuffle(v.begin(), v.end(), rng);
    const auto m = build_similarity_matrix(v, Metric::hellinger, 1 + t % 4);
    const auto ref = oracle::naive_matrix(v);
    if (m.entries.size() != ref.size()) return {false, "corpus " + std::to_string(t) + ": entry count differs"};
    for (std::size_t e = 0; e < ref.size(); ++e) {
      const auto& got = m.entries[e];
      if (m.images[got.i].image_id != ref[e].a || m.images[got.j].image_id != ref[e].b ||
          std::abs(got.distance - ref[e].distance) > kOracleDistanceTol)
        return {false, "corpus " + std::to_string(t) + ": entry " + std::to_string(e) + " differs"};
    }
    entries += ref.size();
  }
  for (int t = 0; t < 100; ++t) {
    std::vector<std::size_t> sizes(1 + rng() % 8);
    for (auto& s : sizes) s = rng() % 51;
    if (comparison_count(sizes) != oracle::enumerate_pairs(sizes))
      return {false, "partition " + std::to_string(t) + ": comparison count differs"};
  }
  return {true, "20 corpora (" + std::to_string(entries) + " entries), 100 partitions"};
}

std::vector<float> mixture(std::mt19937_64& rng, int n, int dim, int clusters, double spread) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> centers(clusters, std::vector<double>(dim));
  for (auto& c : centers)
    for (auto& x : c) x = 4.0 * g(rng);
  std::vector<float> pts;
  for (int i = 0; i < n; ++i) {
    const auto& c = centers[rng() % clusters];
    for (int d = 0; d < dim; ++d) pts.push_back(static_cast<float>(c[d] + spread * g(rng)));
  }
  return pts;
}

Outcome kmeans_properties() {
  for (int t = 0; t < 10; ++t) {
    std::mt19937_64 rng(500 + t);
    const int dim = 2 + t;
    const auto pts = mixture(rng, 400 + 60 * t, dim, 3 + t % 5, 1.0 + 0.25 * t);
    KMeansOptions o;
    o.k = 5 + t;
    o.seed = t;
    o.tol = 0.0;
    o.max_iters = 60;
    const auto res = train_codebook(pts, dim, o);
    for (std::size_t i = 1; i < res.distortion.size(); ++i)
      if (res.distortion[i] > res.distortion[i - 1])
        return {false, "dataset " + std::to_string(t) + ": distortion rose at pass " + std::to_string(i)};
  }

  std::mt19937_64 rng(9);
  const int dim = 6;
  const auto pts = mixture(rng, 333, dim, 4, 2.0);
  KMeansOptions one;
  one.k = 1;
  const auto res1 = train_codebook(pts, dim, one);
  double worst = 0.0;
  for (int d = 0; d < dim; ++d) {
    long double mean = 0.0L;
    for (std::size_t i = 0; i < pts.size() / dim; ++i) mean += pts[i * dim + d];
    mean /= static_cast<long double>(pts.size() / dim);
    worst = std::max(worst, std::abs(res1.centroids_f64[d] - static_cast<double>(mean)));
  }
  if (worst > kMeanTol) return {false, "k=1 centroid off the mean by " + fmt(worst)};

  std::mt19937_64 rng2(31);
  const auto small = mixture(rng2, 12, 2, 2, 0.8);
  const auto best = oracle::best_two_partition(small, 2);
  KMeansOptions two;
  two.k = 2;
  const auto res2 = train_codebook(small, 2, two);
  std::uint64_t mask = 0;
  const int side0 = oracle::nearest(small.data(), res2.codebook);
  for (std::size_t i = 0; i < 12; ++i)
    if (oracle::nearest(small.data() + 2 * i, res2.codebook) != side0) mask |= 1ull << i;
  if (mask != best) return {false, "two-cluster partition differs from exhaustive optimum"};
  return {true, "10 monotone runs, k=1 mean error " + fmt(worst) + ", 12-point 2-partition optimal"};
}

Outcome worked_ranking() {
  SimilarityMatrix m;
  m.images = {{"first", "s0", 0, 0}, {"second", "s1", 1, 0}, {"third", "s2", 2, 0}, {"fourth", "s2", 2, 1}};
  m.entries = {{0, 1, 0.08}, {0, 2, 0.55}, {0, 3, 0.61}, {1, 2, 0.12}, {1, 3, 0.47}};
  const auto table = compute_ranking_factors(m, 0.15);
  std::vector<int> r;
  for (const auto& row : table.rows) r.push_back(row.r);
  const auto rs = select_result_set(table);
  const bool ok = r == std::vector<int>{1, 2, 1, 0} && rs.ids() == std::vector<std::string>{"second"};
  return {ok, "r = (" + std::to_string(r[0]) + ", " + std::to_string(r[1]) + ", " + std::to_string(r[2]) + ", " +
                  std::to_string(r[3]) + "), result set size " + std::to_string(rs.entries.size())};
}

struct Experiment {
  PipelineConfig config;
  fixture::SyntheticCorpus corpus;
  double seconds = 0.0;
};

Experiment run_experiment(const fs::path& root, const std::string& work, unsigned threads) {
  Experiment e;
  e.corpus = fixture::write_synthetic_corpus(root);
  json c = json::parse(read_text_file(e.corpus.config));
  c["work_dir"] = work;
  c["threads"] = threads;
  e.config = parse_config(c.dump(), root);
  fs::remove_all(e.config.work_dir);
  const auto t0 = Clock::now();
  run_all(e.config);
  e.seconds = seconds_since(t0);
  return e;
}

Outcome sumgoogle_recall(const Experiment& e) {
  const json rep = json::parse(read_text_file(report_path(e.config)));
  int subjects = 0;
  for (const auto& m : rep["categories"][0]["methods"]) {
    if (m["method"] != "SumGoogle") continue;
    for (const auto& row : m["subjects"]) {
      ++subjects;
      if (row["recall"].is_null() || row["recall"].get<double>() != 1.0) return {false, "pipeline subject recall != 1"};
    }
  }
  // Random subjects whose positives are arbitrary subsets of the pooled images.
  std::mt19937_64 rng(3);
  const std::set<std::string> pooled(e.corpus.image_ids.begin(), e.corpus.image_ids.end());
  std::string csv = "image_id,subject_id,label\n";
  for (int s = 0; s < 25; ++s) {
    const double p = (s + 1) / 26.0;
    for (const auto& id : e.corpus.image_ids)
      csv += id + ",r" + std::to_string(s) + "," + (std::uniform_real_distribution<double>(0, 1)(rng) < p ? "1" : "0") + "\n";
  }
  const auto labels = parse_labels(csv, e.corpus.image_ids);
  const auto er = evaluate_methods(ResultSet{}, {}, pooled, labels);
  for (const auto& row : er.methods[2].rows) {
    ++subjects;
    if (!row.scores.recall || *row.scores.recall != 1.0) return {false, "subject " + row.subject + " recall != 1"};
  }
  return {true, std::to_string(subjects) + " subjects, recall exactly 1"};
}

Outcome synthetic_experiment(const Experiment& e) {
  const json rep = json::parse(read_text_file(report_path(e.config)));
  const auto& cat = rep["categories"][0];
  double simsea_p = -1, simsea_r = -1, sum_p = -1;
  for (const auto& m : cat["methods"]) {
    if (m["method"] == "SIMSEA") {
      simsea_p = m["precision"]["mean"].is_null() ? 0.0 : m["precision"]["mean"].get<double>();
      simsea_r = m["recall"]["mean"].get<double>();
    }
    if (m["method"] == "SumGoogle") sum_p = m["precision"]["mean"].get<double>();
  }
  // Direct count against the generator's class membership.
  const json rs = json::parse(read_text_file(result_set_path(e.config)));
  std::size_t hits = 0;
  for (const auto& x : rs) hits += e.corpus.target_ids.count(x["image_id"].get<std::string>());
  const double direct_p = rs.empty() ? 0.0 : static_cast<double>(hits) / rs.size();
  const double direct_r = static_cast<double>(hits) / e.corpus.target_ids.size();
  const bool ok = simsea_p >= kMinSimseaPrecision && direct_p >= kMinSimseaPrecision && sum_p <= kMaxSumGooglePrecision &&
                  simsea_r >= kMinSimseaRecall && direct_r >= kMinSimseaRecall && e.seconds < kExperimentSeconds;
  return {ok, "SIMSEA P " + fmt(simsea_p) + " R " + fmt(simsea_r) + " (direct " + fmt(direct_p) + "/" + fmt(direct_r) +
                  "), SumGoogle P " + fmt(sum_p) + ", result set " + std::to_string(rs.size()) + ", " +
                  fmt(e.seconds, 3) + " s"};
}

Outcome determinism(const Experiment& a, const Experiment& b) {
  const auto ja = read_text_file(result_set_path(a.config));
  const auto jb = read_text_file(result_set_path(b.config));
  return {ja == jb && !ja.empty(), "threads " + std::to_string(a.config.threads) + " vs " +
                                       std::to_string(b.config.threads) + ", " + std::to_string(ja.size()) +
                                       " bytes, sha256 " + sha256_hex(ja).substr(0, 12) + " / " +
                                       sha256_hex(jb).substr(0, 12)};
}

Outcome agreement(const Experiment& e) {
  const json rep = json::parse(read_text_file(report_path(e.config)));
  const auto& a = rep["categories"][0]["rank_relevance_agreement"];
  const bool defined = !a["all_ranked"].is_null();
  const double v = defined ? a["all_ranked"].get<double>() : 0.0;
  const std::string rs = a["result_set"].is_null() ? "undefined" : fmt(a["result_set"].get<double>());
  return {defined && v > kMinAgreement, "Spearman over all ranked images " + (defined ? fmt(v) : "undefined") +
                                             ", over result set " + rs};
}

}  // namespace

int main() {
  log::set_min_level(log::Level::warn);
  report("metric suite", metric_suite);
  report("closed-form distances", closed_form);
  report("oracle equivalence", oracle_equivalence);
  report("k-means properties", kmeans_properties);
  report("worked ranking example", worked_ranking);

  const fs::path root = fs::temp_directory_path() / "simsea_acceptance";
  fs::remove_all(root);
  Experiment first, second;
  bool ran = false;
  try {
    first = run_experiment(root, "work-threads1", 1);
    second = run_experiment(root, "work-threads2", 2);
    ran = true;
  } catch (const std::exception& e) {
    std::printf("experiment failed to run: %s\n", e.what());
  }
  const auto need = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!ran) return {false, "pipeline did not run"};
      return fn();
    };
  };
  report("SumGoogle recall", need([&] { return sumgoogle_recall(first); }));
  report("synthetic polyseme experiment", need([&] { return synthetic_experiment(first); }));
  report("determinism", need([&] { return determinism(first, second); }));
  report("rank-relevance agreement", need([&] { return agreement(first); }));

  fs::remove_all(root);
  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
