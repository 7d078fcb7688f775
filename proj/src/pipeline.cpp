#include "simsea/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "simsea/codebook.hpp"
#include "simsea/corpus.hpp"
#include "simsea/error.hpp"
#include "simsea/evaluation.hpp"
#include "simsea/log.hpp"

namespace simsea {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
  if (manifests.empty()) throw ValidationError("config: no manifest given");
  if (work_dir.empty()) throw ValidationError("config: work_dir not set");
  if (cache_dir.empty()) throw ValidationError("config: cache_dir not set");
  descriptor.validate();
  if (k < 1) throw ValidationError("config: k must be >= 1");
  if (!(match_threshold >= 0.0 && match_threshold <= 1.0))
    throw ValidationError("config: match_threshold must lie in [0, 1]");
  if (min_r < 0) throw ValidationError("config: min_r must be >= 0");
  if (per_category < 1) throw ValidationError("config: per_category must be >= 1");
  if (max_dim < 1) throw ValidationError("config: max_dim must be >= 1");
  if (max_iters < 0) throw ValidationError("config: max_iters must be >= 0");
  if (!(tol >= 0.0)) throw ValidationError("config: tol must be >= 0");
  if (fetch_parallelism < 1) throw ValidationError("config: fetch_parallelism must be >= 1");
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() ? (base / path).lexically_normal() : path;
}

template <class T>
T get_field(const json& doc, const char* key, const T& fallback) {
  auto it = doc.find(key);
  if (it == doc.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config.") + key + ": wrong type");
  }
}

}  // namespace

PipelineConfig parse_config(std::string_view json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config parse error: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("config: top level must be an object");

  static const std::set<std::string> known = {
      "manifest", "manifests", "cache_dir", "work_dir", "descriptor", "k",        "seed",
      "match_threshold", "min_r", "per_category", "metric", "labels", "max_dim", "max_iters",
      "tol", "threads", "fetch_parallelism"};
  for (const auto& [key, value] : doc.items())
    if (!known.count(key)) throw ValidationError("config: unknown field '" + key + "'");

  PipelineConfig c;
  if (doc.contains("manifest")) c.manifests.push_back(resolve(base_dir, get_field<std::string>(doc, "manifest", "")));
  for (const auto& m : get_field<std::vector<std::string>>(doc, "manifests", {}))
    c.manifests.push_back(resolve(base_dir, m));
  c.cache_dir = resolve(base_dir, get_field<std::string>(doc, "cache_dir", "cache"));
  c.work_dir = resolve(base_dir, get_field<std::string>(doc, "work_dir", "work"));
  if (auto it = doc.find("descriptor"); it != doc.end()) {
    const json& d = *it;
    if (!d.is_object()) throw ValidationError("config.descriptor: expected object");
    static const std::set<std::string> dknown = {"grid_step",     "bin_sizes", "orientation_bins",
                                                 "spatial_cells", "clamp",     "contrast_floor"};
    for (const auto& [key, value] : d.items())
      if (!dknown.count(key)) throw ValidationError("config.descriptor: unknown field '" + key + "'");
    c.descriptor.grid_step = get_field(d, "grid_step", c.descriptor.grid_step);
    c.descriptor.bin_sizes = get_field(d, "bin_sizes", c.descriptor.bin_sizes);
    c.descriptor.orientation_bins = get_field(d, "orientation_bins", c.descriptor.orientation_bins);
    c.descriptor.spatial_cells = get_field(d, "spatial_cells", c.descriptor.spatial_cells);
    c.descriptor.clamp = get_field(d, "clamp", c.descriptor.clamp);
    c.descriptor.contrast_floor = get_field(d, "contrast_floor", c.descriptor.contrast_floor);
  }
  c.k = get_field(doc, "k", c.k);
  c.seed = get_field(doc, "seed", c.seed);
  c.match_threshold = get_field(doc, "match_threshold", c.match_threshold);
  c.min_r = get_field(doc, "min_r", c.min_r);
  c.per_category = get_field(doc, "per_category", c.per_category);
  c.metric = metric_from_string(get_field<std::string>(doc, "metric", "hellinger"));
  if (doc.contains("labels") && !doc["labels"].is_null())
    c.labels = resolve(base_dir, get_field<std::string>(doc, "labels", ""));
  c.max_dim = get_field(doc, "max_dim", c.max_dim);
  c.max_iters = get_field(doc, "max_iters", c.max_iters);
  c.tol = get_field(doc, "tol", c.tol);
  c.threads = get_field(doc, "threads", c.threads);
  c.fetch_parallelism = get_field(doc, "fetch_parallelism", c.fetch_parallelism);
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return parse_config(text, fs::absolute(path).parent_path());
}

std::string config_to_json(const PipelineConfig& c) {
  std::vector<std::string> manifests;
  for (const auto& m : c.manifests) manifests.push_back(m.string());
  json doc = {{"manifests", manifests},
              {"cache_dir", c.cache_dir.string()},
              {"work_dir", c.work_dir.string()},
              {"descriptor",
               {{"grid_step", c.descriptor.grid_step},
                {"bin_sizes", c.descriptor.bin_sizes},
                {"orientation_bins", c.descriptor.orientation_bins},
                {"spatial_cells", c.descriptor.spatial_cells},
                {"clamp", c.descriptor.clamp},
                {"contrast_floor", c.descriptor.contrast_floor}}},
              {"k", c.k},
              {"seed", c.seed},
              {"match_threshold", c.match_threshold},
              {"min_r", c.min_r},
              {"per_category", c.per_category},
              {"metric", std::string(to_string(c.metric))},
              {"labels", c.labels ? json(c.labels->string()) : json(nullptr)},
              {"max_dim", c.max_dim},
              {"max_iters", c.max_iters},
              {"tol", c.tol},
              {"threads", c.threads},
              {"fetch_parallelism", c.fetch_parallelism}};
  return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Stage bookkeeping

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::fetch: return "fetch";
    case Stage::features: return "features";
    case Stage::codebook: return "codebook";
    case Stage::vectorize: return "vectorize";
    case Stage::match: return "match";
    case Stage::rank: return "rank";
    case Stage::clean: return "clean";
    case Stage::evaluate: return "evaluate";
  }
  return "?";
}

std::optional<Stage> stage_from_string(std::string_view name) {
  for (Stage s : kAllStages)
    if (to_string(s) == name) return s;
  return std::nullopt;
}

fs::path stage_dir(const PipelineConfig& config, Stage stage) { return config.work_dir / std::string(to_string(stage)); }
fs::path result_set_path(const PipelineConfig& config) { return stage_dir(config, Stage::clean) / "result_set.json"; }
fs::path report_path(const PipelineConfig& config) { return stage_dir(config, Stage::evaluate) / "report.json"; }

ReportFormat report_format_from_string(std::string_view text) {
  if (text == "table") return ReportFormat::table;
  if (text == "json") return ReportFormat::json;
  if (text == "csv") return ReportFormat::csv;
  throw ValidationError("unknown report format '" + std::string(text) + "'");
}

namespace {

fs::path stamp_path(const PipelineConfig& config, Stage stage) { return stage_dir(config, stage) / "stamp.json"; }

std::optional<Stage> upstream(Stage stage) {
  if (stage == Stage::fetch) return std::nullopt;
  return static_cast<Stage>(static_cast<int>(stage) - 1);
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error("corrupt artifact " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& doc) { write_file_atomic(path, doc.dump(2) + "\n"); }

std::string file_digest(const fs::path& path) {
  try {
    return sha256_hex(read_file(path));
  } catch (const Error& e) {
    throw ValidationError(e.what());
  }
}

json stage_params(Stage stage, const PipelineConfig& c) {
  switch (stage) {
    case Stage::fetch: {
      json hashes = json::array();
      for (const auto& m : c.manifests) hashes.push_back(file_digest(m));
      return {{"manifests", hashes}};
    }
    case Stage::features:
      return {{"grid_step", c.descriptor.grid_step},
              {"bin_sizes", c.descriptor.bin_sizes},
              {"orientation_bins", c.descriptor.orientation_bins},
              {"spatial_cells", c.descriptor.spatial_cells},
              {"clamp", c.descriptor.clamp},
              {"contrast_floor", c.descriptor.contrast_floor},
              {"max_dim", c.max_dim}};
    case Stage::codebook:
      return {{"k", c.k}, {"seed", c.seed}, {"per_category", c.per_category}, {"max_iters", c.max_iters}, {"tol", c.tol}};
    case Stage::vectorize: return json::object();
    case Stage::match: return {{"metric", std::string(to_string(c.metric))}};
    case Stage::rank: return {{"match_threshold", c.match_threshold}};
    case Stage::clean: return {{"min_r", c.min_r}};
    case Stage::evaluate: return {{"labels", c.labels ? file_digest(*c.labels) : std::string("none")}};
  }
  return json::object();
}

std::string compute_digest(Stage stage, const PipelineConfig& config) {
  json doc = {{"stage", std::string(to_string(stage))}, {"params", stage_params(stage, config)}};
  if (auto up = upstream(stage)) {
    auto d = stage_digest(*up, config);
    if (!d) {
      throw PrerequisiteError("stage '" + std::string(to_string(stage)) + "' needs the output of stage '" +
                              std::string(to_string(*up)) + "', which has not been run in " +
                              config.work_dir.string());
    }
    doc["upstream"] = *d;
  }
  return sha256_hex(doc.dump());
}

// ---------------------------------------------------------------------------
// Artifacts shared between stages

struct CategoryInfo {
  std::string category;
  std::string baseline;
  std::vector<std::string> subsearches;
};

struct Corpus {
  std::vector<CategoryInfo> categories;
  std::vector<ImageRecord> records;
};

json record_to_json(const ImageRecord& r) {
  return {{"id", r.id},
          {"category", r.category},
          {"subsearch", r.subsearch_label},
          {"subsearch_index", r.subsearch_index},
          {"original_rank", r.original_rank},
          {"source", r.source},
          {"content_hash", r.content_hash},
          {"width", r.width},
          {"height", r.height},
          {"status", std::string(to_string(r.status))},
          {"error", r.error}};
}

ImageRecord record_from_json(const json& j) {
  ImageRecord r;
  r.id = j.at("id").get<std::string>();
  r.category = j.at("category").get<std::string>();
  r.subsearch_label = j.at("subsearch").get<std::string>();
  r.subsearch_index = j.at("subsearch_index").get<int>();
  r.original_rank = j.at("original_rank").get<int>();
  r.source = j.at("source").get<std::string>();
  r.content_hash = j.at("content_hash").get<std::string>();
  r.width = j.at("width").get<int>();
  r.height = j.at("height").get<int>();
  r.status = image_status_from_string(j.at("status").get<std::string>());
  r.error = j.value("error", "");
  return r;
}

Corpus load_corpus(const PipelineConfig& config) {
  const json doc = read_json(stage_dir(config, Stage::fetch) / "records.json");
  Corpus corpus;
  for (const auto& c : doc.at("categories")) {
    corpus.categories.push_back({c.at("category").get<std::string>(), c.at("baseline").get<std::string>(),
                                 c.at("subsearches").get<std::vector<std::string>>()});
  }
  for (const auto& r : doc.at("records")) corpus.records.push_back(record_from_json(r));
  return corpus;
}

fs::path descriptor_file(const PipelineConfig& config, const std::string& id) {
  return stage_dir(config, Stage::features) / (id + ".desc");
}

std::map<std::string, BowVector> load_vectors(const PipelineConfig& config) {
  const json doc = read_json(stage_dir(config, Stage::vectorize) / "vectors.json");
  std::map<std::string, BowVector> out;
  for (const auto& v : doc.at("vectors")) {
    BowVector b;
    b.image_id = v.at("id").get<std::string>();
    b.descriptor_count = v.at("descriptor_count").get<std::size_t>();
    b.bins = v.at("bins").get<std::vector<double>>();
    out.emplace(b.image_id, std::move(b));
  }
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json image_ref_json(const ImageRef& ref) {
  return {{"image_id", ref.image_id},
          {"subsearch", ref.subsearch},
          {"subsearch_order", ref.subsearch_order},
          {"original_rank", ref.original_rank}};
}

ImageRef image_ref_from_json(const json& j) {
  return {j.at("image_id").get<std::string>(), j.at("subsearch").get<std::string>(),
          j.at("subsearch_order").get<int>(), j.at("original_rank").get<int>()};
}

struct CategoryMatrix {
  std::string category;
  SimilarityMatrix matrix;
};

std::vector<CategoryMatrix> load_matrices(const PipelineConfig& config) {
  const auto dir = stage_dir(config, Stage::match);
  const json index = read_json(dir / "index.json");
  const Metric metric = metric_from_string(index.at("metric").get<std::string>());
  std::vector<CategoryMatrix> out;
  for (const auto& c : index.at("categories")) {
    CategoryMatrix cm;
    cm.category = c.at("category").get<std::string>();
    cm.matrix.metric = metric;
    std::map<std::string, std::uint32_t> pos;
    for (const auto& img : c.at("images")) {
      pos[img.at("image_id").get<std::string>()] = static_cast<std::uint32_t>(cm.matrix.images.size());
      cm.matrix.images.push_back(image_ref_from_json(img));
    }
    cm.matrix.excluded = c.at("excluded").get<std::vector<std::string>>();
    std::ifstream in(dir / c.at("file").get<std::string>());
    if (!in) throw Error("missing matrix file for category '" + cm.category + "'");
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto f = csv_split(line);
      if (f.size() != 3) throw Error("malformed matrix row: " + line);
      cm.matrix.entries.push_back({pos.at(f[0]), pos.at(f[1]), std::stod(f[2])});
    }
    if (cm.matrix.entries.size() != c.at("entries").get<std::size_t>())
      throw Error("matrix for category '" + cm.category + "' is truncated");
    out.push_back(std::move(cm));
  }
  return out;
}

struct CategoryRanking {
  std::string category;
  RankingTable table;
};

std::vector<CategoryRanking> load_rankings(const PipelineConfig& config) {
  const json doc = read_json(stage_dir(config, Stage::rank) / "ranking.json");
  std::vector<CategoryRanking> out;
  for (const auto& c : doc.at("categories")) {
    CategoryRanking cr;
    cr.category = c.at("category").get<std::string>();
    cr.table.match_threshold = doc.at("match_threshold").get<double>();
    for (const auto& row : c.at("rows")) {
      RankingRow rr;
      rr.image = image_ref_from_json(row);
      rr.r = row.at("r").get<int>();
      rr.matches = row.at("matches").get<std::vector<std::string>>();
      cr.table.rows.push_back(std::move(rr));
    }
    out.push_back(std::move(cr));
  }
  return out;
}

struct CategoryResult {
  std::string category;
  ResultSet result;
};

std::vector<CategoryResult> load_results(const PipelineConfig& config, const Corpus& corpus) {
  const json doc = read_json(result_set_path(config));
  std::vector<CategoryResult> out;
  for (const auto& c : corpus.categories) out.push_back({c.category, ResultSet{{}, config.min_r}});
  for (const auto& e : doc) {
    const auto category = e.at("category").get<std::string>();
    auto it = std::find_if(out.begin(), out.end(), [&](const CategoryResult& r) { return r.category == category; });
    if (it == out.end()) throw Error("result set names unknown category '" + category + "'");
    it->result.entries.push_back({image_ref_from_json(e), e.at("r").get<int>()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stages

void stage_fetch(const PipelineConfig& config, const std::string& digest) {
  json categories = json::array();
  json records = json::array();
  std::set<std::string> seen_categories;
  std::set<std::string> seen_ids;
  for (const auto& path : config.manifests) {
    const CorpusManifest manifest = load_manifest(path);
    if (!seen_categories.insert(manifest.category).second)
      throw ValidationError("category '" + manifest.category + "' appears in more than one manifest");
    json labels = json::array();
    for (const auto& s : manifest.subsearches) labels.push_back(s.label);
    categories.push_back({{"category", manifest.category}, {"baseline", manifest.baseline_label}, {"subsearches", labels}});
    FetchStats stats;
    const auto recs = fetch_images(manifest, {config.cache_dir, config.fetch_parallelism, 30}, &stats);
    log::info("fetch '" + manifest.category + "': " + std::to_string(recs.size()) + " sources, " +
              std::to_string(stats.downloads) + " downloaded, " + std::to_string(stats.cache_hits) + " cached, " +
              std::to_string(stats.local_reads) + " local, " + std::to_string(stats.failures) + " failed");
    for (const auto& r : recs) {
      if (!seen_ids.insert(r.id).second) throw Error("duplicate image id " + r.id);
      records.push_back(record_to_json(r));
    }
  }
  write_json(stage_dir(config, Stage::fetch) / "records.json",
             {{"digest", digest}, {"categories", categories}, {"records", records}});
}

void stage_features(const PipelineConfig& config, const std::string& digest) {
  const Corpus corpus = load_corpus(config);
  std::vector<const ImageRecord*> todo;
  for (const auto& r : corpus.records)
    if (r.ok()) todo.push_back(&r);

  struct Info {
    std::size_t count = 0;
    int width = 0, height = 0;
  };
  std::vector<Info> info(todo.size());
  parallel_for(todo.size(), config.threads, [&](std::size_t i) {
    const ImageRecord& rec = *todo[i];
    const Bytes bytes = read_file(cache_blob_path(config.cache_dir, rec.content_hash));
    const GrayRaster raster = decode_to_gray(bytes, config.max_dim);
    const DescriptorSet set = extract_dense_descriptors(raster, config.descriptor, rec.id);
    write_descriptor_dump(descriptor_file(config, rec.id), set);
    info[i] = {set.size(), raster.width, raster.height};
  });

  json images = json::array();
  for (std::size_t i = 0; i < todo.size(); ++i) {
    images.push_back({{"id", todo[i]->id},
                      {"file", todo[i]->id + ".desc"},
                      {"count", info[i].count},
                      {"width", info[i].width},
                      {"height", info[i].height}});
  }
  write_json(stage_dir(config, Stage::features) / "index.json",
             {{"digest", digest}, {"dimension", config.descriptor.dimension()}, {"images", images}});
}

void stage_codebook(const PipelineConfig& config, const std::string& digest) {
  const Corpus corpus = load_corpus(config);
  const auto sample = sample_training_images(corpus.records, config.per_category, config.seed);
  const int dim = config.descriptor.dimension();
  std::vector<float> pooled;
  std::vector<std::string> ids;
  for (const auto& rec : sample) {
    const DescriptorSet set = read_descriptor_dump(descriptor_file(config, rec.id), rec.id);
    if (set.dimension != dim && !set.empty()) throw Error("descriptor dimension mismatch for " + rec.id);
    pooled.insert(pooled.end(), set.data.begin(), set.data.end());
    ids.push_back(rec.id);
  }
  if (pooled.empty()) throw ValidationError("codebook: sampled images produced no descriptors");
  log::info("codebook: " + std::to_string(pooled.size() / dim) + " descriptors from " + std::to_string(ids.size()) +
            " images, k=" + std::to_string(config.k));

  KMeansOptions opts;
  opts.k = config.k;
  opts.seed = config.seed;
  opts.max_iters = config.max_iters;
  opts.tol = config.tol;
  opts.threads = config.threads;
  KMeansResult km = train_codebook(pooled, dim, opts);
  km.codebook.training_image_ids = ids;
  km.codebook.params_digest = digest;
  log::info("codebook: " + std::to_string(km.iterations) + " iterations, " +
            (km.converged ? "converged" : "stopped at max_iters") + ", distortion " +
            format_double(km.distortion.back()));

  const auto dir = stage_dir(config, Stage::codebook);
  write_codebook(dir / "codebook.json", km.codebook);
  write_json(dir / "training.json", {{"digest", digest},
                                     {"descriptors", pooled.size() / dim},
                                     {"distinct_descriptors", km.distinct_points},
                                     {"iterations", km.iterations},
                                     {"converged", km.converged},
                                     {"distortion", km.distortion}});
}

void stage_vectorize(const PipelineConfig& config, const std::string& digest) {
  const Corpus corpus = load_corpus(config);
  const Codebook codebook = read_codebook(stage_dir(config, Stage::codebook) / "codebook.json");
  std::vector<const ImageRecord*> todo;
  for (const auto& r : corpus.records)
    if (r.ok()) todo.push_back(&r);
  std::vector<BowVector> vectors(todo.size());
  parallel_for(todo.size(), config.threads, [&](std::size_t i) {
    const auto set = read_descriptor_dump(descriptor_file(config, todo[i]->id), todo[i]->id);
    vectors[i] = bow_vector(set, codebook);
  });
  json out = json::array();
  for (const auto& v : vectors)
    out.push_back({{"id", v.image_id}, {"descriptor_count", v.descriptor_count}, {"degenerate", v.degenerate()}, {"bins", v.bins}});
  write_json(stage_dir(config, Stage::vectorize) / "vectors.json", {{"digest", digest}, {"k", codebook.k}, {"vectors", out}});
}

void stage_match(const PipelineConfig& config, const std::string& digest) {
  const Corpus corpus = load_corpus(config);
  const auto vectors = load_vectors(config);
  const auto dir = stage_dir(config, Stage::match);
  json categories = json::array();
  for (const auto& cat : corpus.categories) {
    std::vector<LabeledVector> labeled;
    for (const auto& r : corpus.records) {
      if (r.category != cat.category || !r.ok()) continue;
      labeled.push_back({vectors.at(r.id), r.subsearch_label, r.subsearch_index, r.original_rank});
    }
    const SimilarityMatrix m = build_similarity_matrix(labeled, config.metric, config.threads);

    std::map<std::string, std::size_t> sizes;
    for (const auto& img : m.images) ++sizes[img.subsearch];
    std::vector<std::size_t> size_list;
    for (const auto& [label, n] : sizes) size_list.push_back(n);
    const auto expected = comparison_count(size_list);
    if (expected != m.entries.size()) throw Error("similarity matrix entry count disagrees with comparison count");

    std::string csv = "image_id_i,image_id_j,distance\n";
    for (const auto& e : m.entries) {
      csv += m.images[e.i].image_id + "," + m.images[e.j].image_id + "," + format_double(e.distance) + "\n";
    }
    const std::string file = slugify(cat.category) + ".matrix.csv";
    write_file_atomic(dir / file, csv);
    json images = json::array();
    for (const auto& img : m.images) images.push_back(image_ref_json(img));
    categories.push_back({{"category", cat.category},
                          {"file", file},
                          {"images", images},
                          {"excluded", m.excluded},
                          {"entries", m.entries.size()},
                          {"comparison_count", expected}});
    log::info("match '" + cat.category + "': " + std::to_string(m.entries.size()) + " comparisons, " +
              std::to_string(m.excluded.size()) + " degenerate image(s) excluded");
  }
  write_json(dir / "index.json",
             {{"digest", digest}, {"metric", std::string(to_string(config.metric))}, {"categories", categories}});
}

void stage_rank(const PipelineConfig& config, const std::string& digest) {
  const auto matrices = load_matrices(config);
  json categories = json::array();
  std::string csv = "image_id,subsearch,r\n";
  for (const auto& cm : matrices) {
    const RankingTable table = compute_ranking_factors(cm.matrix, config.match_threshold);
    json rows = json::array();
    for (const auto& row : table.rows) {
      json j = image_ref_json(row.image);
      j["r"] = row.r;
      j["matches"] = row.matches;
      rows.push_back(std::move(j));
      csv += row.image.image_id + "," + csv_escape(row.image.subsearch) + "," + std::to_string(row.r) + "\n";
    }
    categories.push_back({{"category", cm.category}, {"rows", rows}});
  }
  const auto dir = stage_dir(config, Stage::rank);
  write_file_atomic(dir / "ranking.csv", csv);
  write_json(dir / "ranking.json",
             {{"digest", digest}, {"match_threshold", config.match_threshold}, {"categories", categories}});
}

void stage_clean(const PipelineConfig& config, const std::string&) {
  const Corpus corpus = load_corpus(config);
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : corpus.records) by_id[r.id] = &r;
  json out = json::array();
  for (const auto& cr : load_rankings(config)) {
    const ResultSet rs = select_result_set(cr.table, config.min_r);
    for (const auto& e : rs.entries) {
      json j = image_ref_json(e.image);
      j["category"] = cr.category;
      j["r"] = e.r;
      j["source"] = by_id.at(e.image.image_id)->source;
      out.push_back(std::move(j));
    }
  }
  write_json(result_set_path(config), out);
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json aggregate_json(const Aggregate& a) {
  return {{"mean", optional_json(a.mean)},
          {"variance", optional_json(a.variance)},
          {"defined", a.defined},
          {"undefined", a.undefined}};
}

std::string csv_number(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

void stage_evaluate(const PipelineConfig& config, const std::string& digest) {
  const Corpus corpus = load_corpus(config);
  const auto results = load_results(config, corpus);
  const auto rankings = load_rankings(config);
  const auto vectors = load_vectors(config);

  std::vector<std::string> decoded, failed;
  for (const auto& r : corpus.records) (r.ok() ? decoded : failed).push_back(r.id);

  std::optional<GroundTruthLabels> labels;
  if (config.labels) labels = load_labels(*config.labels, decoded, failed);

  json categories = json::array();
  std::string csv = "category,method,subject,precision,recall\n";
  std::string hist_csv = "category,count,frequency\n";
  for (std::size_t c = 0; c < corpus.categories.size(); ++c) {
    const auto& cat = corpus.categories[c];
    std::set<std::string> pooled, google;
    std::size_t total = 0, failures = 0, degenerate = 0;
    for (const auto& r : corpus.records) {
      if (r.category != cat.category) continue;
      ++total;
      if (!r.ok()) {
        ++failures;
        continue;
      }
      pooled.insert(r.id);
      if (vectors.at(r.id).degenerate()) ++degenerate;
      if (!cat.baseline.empty() && r.subsearch_label == cat.baseline) google.insert(r.id);
    }
    const ResultSet& rs = results[c].result;
    json cj = {{"category", cat.category},
               {"images", total},
               {"decoded", pooled.size()},
               {"failed", failures},
               {"degenerate", degenerate},
               {"result_set_size", rs.entries.size()},
               {"google_baseline", cat.baseline.empty() ? json(nullptr) : json(cat.baseline)}};
    if (!labels) {
      cj["methods"] = json::array();
      cj["notes"] = {"no labels configured; precision and recall not computed"};
      categories.push_back(std::move(cj));
      continue;
    }
    EvalReport report = evaluate_methods(rs, google, pooled, *labels);
    const RelevanceScore relevance = relevance_scores(*labels, pooled);
    if (!rs.entries.empty()) {
      report.agreement = rank_relevance_agreement(rs, relevance);
    }
    const auto& table = std::find_if(rankings.begin(), rankings.end(), [&](const CategoryRanking& r) {
                          return r.category == cat.category;
                        })->table;
    if (!table.rows.empty()) report.agreement_all = rank_relevance_agreement(table, relevance);
    if (!report.agreement) report.notes.push_back("rank-relevance agreement over the result set is undefined");

    json methods = json::array();
    for (const auto& m : report.methods) {
      json rows = json::array();
      for (const auto& row : m.rows) {
        rows.push_back({{"subject", row.subject},
                        {"precision", optional_json(row.scores.precision)},
                        {"recall", optional_json(row.scores.recall)}});
        csv += csv_escape(cat.category) + "," + m.method + "," + csv_escape(row.subject) + "," +
               csv_number(row.scores.precision) + "," + csv_number(row.scores.recall) + "\n";
      }
      methods.push_back({{"method", m.method},
                         {"available", m.available},
                         {"retrieved", m.retrieved},
                         {"subjects", rows},
                         {"precision", aggregate_json(m.precision)},
                         {"recall", aggregate_json(m.recall)}});
    }
    for (std::size_t s = 0; s < report.relevance_histogram.size(); ++s)
      hist_csv += csv_escape(cat.category) + "," + std::to_string(s) + "," +
                  std::to_string(report.relevance_histogram[s]) + "\n";
    cj["subjects"] = labels->subjects;
    cj["methods"] = methods;
    cj["relevance_histogram"] = report.relevance_histogram;
    cj["rank_relevance_agreement"] = {{"result_set", optional_json(report.agreement)},
                                      {"all_ranked", optional_json(report.agreement_all)}};
    cj["notes"] = report.notes;
    categories.push_back(std::move(cj));
  }

  const auto dir = stage_dir(config, Stage::evaluate);
  write_json(report_path(config), {{"digest", digest},
                                   {"match_threshold", config.match_threshold},
                                   {"min_r", config.min_r},
                                   {"metric", std::string(to_string(config.metric))},
                                   {"k", config.k},
                                   {"seed", config.seed},
                                   {"categories", categories}});
  write_file_atomic(dir / "report.csv", csv);
  write_file_atomic(dir / "relevance_histogram.csv", hist_csv);
}

}  // namespace

std::optional<std::string> stage_digest(Stage stage, const PipelineConfig& config) {
  const auto path = stamp_path(config, stage);
  if (!fs::exists(path)) return std::nullopt;
  return read_json(path).at("digest").get<std::string>();
}

StageOutcome run_stage(Stage stage, const PipelineConfig& config, bool force) {
  config.validate();
  const std::string name(to_string(stage));
  const std::string digest = compute_digest(stage, config);
  StageOutcome outcome{stage, false, digest};
  if (auto existing = stage_digest(stage, config)) {
    if (*existing == digest && !force) {
      log::info("stage " + name + ": up to date, nothing to do");
      outcome.skipped = true;
      return outcome;
    }
    if (*existing != digest && !force) {
      throw ValidationError("stage " + name + ": existing artifacts were built with a different configuration (digest " +
                            existing->substr(0, 12) + " vs " + digest.substr(0, 12) + "); rerun with --force");
    }
  }
  // Invalidate before rewriting so a crash never leaves a stale stamp next to new files.
  fs::remove(stamp_path(config, stage));
  fs::create_directories(stage_dir(config, stage));
  log::info("stage " + name + ": running");
  switch (stage) {
    case Stage::fetch: stage_fetch(config, digest); break;
    case Stage::features: stage_features(config, digest); break;
    case Stage::codebook: stage_codebook(config, digest); break;
    case Stage::vectorize: stage_vectorize(config, digest); break;
    case Stage::match: stage_match(config, digest); break;
    case Stage::rank: stage_rank(config, digest); break;
    case Stage::clean: stage_clean(config, digest); break;
    case Stage::evaluate: stage_evaluate(config, digest); break;
  }
  write_json(stamp_path(config, stage), {{"stage", name}, {"digest", digest}});
  return outcome;
}

std::vector<StageOutcome> run_all(const PipelineConfig& config, bool force) {
  std::vector<StageOutcome> out;
  for (Stage s : kAllStages) out.push_back(run_stage(s, config, force));
  return out;
}

// ---------------------------------------------------------------------------
// Report

namespace {

json build_summary(const PipelineConfig& config, int top) {
  if (!stage_digest(Stage::evaluate, config))
    throw PrerequisiteError("report needs the output of stage 'evaluate', which has not been run in " +
                            config.work_dir.string());
  const json report = read_json(report_path(config));
  const Corpus corpus = load_corpus(config);
  const auto results = load_results(config, corpus);
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : corpus.records) by_id[r.id] = &r;

  json summary = {{"match_threshold", report.at("match_threshold")},
                  {"min_r", report.at("min_r")},
                  {"metric", report.at("metric")},
                  {"categories", json::array()}};
  for (std::size_t c = 0; c < corpus.categories.size(); ++c) {
    json cat = report.at("categories").at(c);
    json top_list = json::array();
    const auto& entries = results[c].result.entries;
    for (std::size_t i = 0; i < entries.size() && static_cast<int>(i) < top; ++i) {
      top_list.push_back({{"position", i + 1},
                          {"image_id", entries[i].image.image_id},
                          {"subsearch", entries[i].image.subsearch},
                          {"r", entries[i].r},
                          {"source", by_id.at(entries[i].image.image_id)->source}});
    }
    cat["top"] = top_list;
    summary["categories"].push_back(std::move(cat));
  }
  return summary;
}

std::string fmt_opt(const json& v, int precision = 3) {
  if (v.is_null()) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v.get<double>();
  return os.str();
}

std::string render_table(const json& summary) {
  std::ostringstream os;
  os << "match threshold " << summary["match_threshold"].get<double>() << ", min r "
     << summary["min_r"].get<int>() << ", metric " << summary["metric"].get<std::string>() << "\n";
  for (const auto& cat : summary["categories"]) {
    os << "\n== " << cat["category"].get<std::string>() << " ==\n";
    os << "images " << cat["images"] << ", decoded " << cat["decoded"] << ", failed " << cat["failed"]
       << ", degenerate " << cat["degenerate"] << ", result set " << cat["result_set_size"] << "\n";
    const auto& methods = cat["methods"];
    if (!methods.empty()) {
      os << "\n" << std::left << std::setw(11) << "method" << std::setw(14) << "subject" << std::setw(11)
         << "precision" << "recall\n";
      for (const auto& m : methods) {
        const std::string name = m["method"].get<std::string>() + (m["available"].get<bool>() ? "" : "*");
        for (const auto& row : m["subjects"]) {
          os << std::setw(11) << name << std::setw(14) << row["subject"].get<std::string>() << std::setw(11)
             << fmt_opt(row["precision"]) << fmt_opt(row["recall"]) << "\n";
        }
        os << std::setw(11) << name << std::setw(14) << "mean" << std::setw(11)
           << fmt_opt(m["precision"]["mean"]) << fmt_opt(m["recall"]["mean"]) << "\n";
        os << std::setw(11) << name << std::setw(14) << "variance" << std::setw(11)
           << fmt_opt(m["precision"]["variance"], 4) << fmt_opt(m["recall"]["variance"], 4) << "\n";
      }
      os << "\nrelevance histogram (subjects voting member: images)\n";
      const auto& hist = cat["relevance_histogram"];
      for (std::size_t s = 0; s < hist.size(); ++s) os << "  " << s << ": " << hist[s] << "\n";
      const auto& agree = cat["rank_relevance_agreement"];
      os << "rank-relevance agreement: result set " << fmt_opt(agree["result_set"]) << ", all ranked "
         << fmt_opt(agree["all_ranked"]) << "\n";
    }
    for (const auto& note : cat["notes"]) os << "note: " << note.get<std::string>() << "\n";
    os << "\ntop " << cat["top"].size() << " images\n";
    for (const auto& t : cat["top"]) {
      os << "  " << std::right << std::setw(3) << t["position"].get<int>() << std::left << "  r=" << std::setw(5)
         << t["r"].get<int>() << t["image_id"].get<std::string>() << "  [" << t["subsearch"].get<std::string>()
         << "] " << t["source"].get<std::string>() << "\n";
    }
  }
  return os.str();
}

std::string render_csv(const json& summary) {
  std::ostringstream os;
  os << "category,section,method,subject,precision,recall,position,image_id,r,source\n";
  auto num = [](const json& v) { return v.is_null() ? std::string("NA") : format_double(v.get<double>()); };
  for (const auto& cat : summary["categories"]) {
    const auto c = csv_escape(cat["category"].get<std::string>());
    for (const auto& m : cat["methods"]) {
      for (const auto& row : m["subjects"]) {
        os << c << ",scores," << m["method"].get<std::string>() << "," << csv_escape(row["subject"].get<std::string>())
           << "," << num(row["precision"]) << "," << num(row["recall"]) << ",,,,\n";
      }
      os << c << ",mean," << m["method"].get<std::string>() << ",," << num(m["precision"]["mean"]) << ","
         << num(m["recall"]["mean"]) << ",,,,\n";
      os << c << ",variance," << m["method"].get<std::string>() << ",," << num(m["precision"]["variance"]) << ","
         << num(m["recall"]["variance"]) << ",,,,\n";
    }
    for (const auto& t : cat["top"]) {
      os << c << ",top,,,,," << t["position"].get<int>() << "," << t["image_id"].get<std::string>() << ","
         << t["r"].get<int>() << "," << csv_escape(t["source"].get<std::string>()) << "\n";
    }
  }
  return os.str();
}

}  // namespace

std::string render_report(const PipelineConfig& config, const ReportOptions& options) {
  if (options.top < 0) throw ValidationError("--top must be >= 0");
  const json summary = build_summary(config, options.top);
  switch (options.format) {
    case ReportFormat::json: return summary.dump(2) + "\n";
    case ReportFormat::csv: return render_csv(summary);
    case ReportFormat::table: break;
  }
  return render_table(summary);
}

WorkDirLock::WorkDirLock(const fs::path& work_dir) {
  fs::create_directories(work_dir);
  const auto path = work_dir / ".lock";
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error("cannot open lock file " + path.string() + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error("work directory " + work_dir.string() + " is in use by another simsea process");
  }
}

WorkDirLock::~WorkDirLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

}  // namespace simsea
