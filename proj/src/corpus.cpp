#include "simsea/corpus.hpp"

#include <curl/curl.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <json.hpp>
#include <map>
#include <mutex>
#include <set>

#include "simsea/error.hpp"
#include "simsea/log.hpp"

namespace simsea {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1, column = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

std::string trim_lower(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(b, e - b + 1));
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ManifestError(where + "." + key + ": missing required field");
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) throw ManifestError(where + "." + key + ": expected string");
  return v.get<std::string>();
}

bool is_url(std::string_view source) {
  return source.starts_with("http://") || source.starts_with("https://");
}

}  // namespace

CorpusManifest parse_manifest(std::string_view json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    auto [line, column] = line_column(json_text, e.byte == 0 ? 0 : e.byte - 1);
    throw ManifestError("manifest parse error at line " + std::to_string(line) + ", column " +
                        std::to_string(column) + ": " + e.what());
  }
  if (!doc.is_object()) throw ManifestError("manifest: top level must be an object");

  CorpusManifest manifest;
  manifest.base_dir = base_dir;
  manifest.category = require_string(doc, "category", "manifest");
  if (manifest.category.empty()) throw ManifestError("manifest.category: must not be empty");
  const auto& version = require(doc, "version", "manifest");
  if (!version.is_number_integer()) throw ManifestError("manifest.version: expected integer");
  manifest.version = version.get<int>();

  const auto& subs = require(doc, "subsearches", "manifest");
  if (!subs.is_array()) throw ManifestError("manifest.subsearches: expected array");

  std::set<std::string> labels;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    const std::string where = "manifest.subsearches[" + std::to_string(i) + "]";
    const auto& entry = subs[i];
    if (!entry.is_object()) throw ManifestError(where + ": expected object");
    SubsearchSpec spec;
    spec.label = require_string(entry, "label", where);
    if (spec.label.empty()) throw ManifestError(where + ".label: must not be empty");
    if (!labels.insert(spec.label).second)
      throw ManifestError(where + ".label: duplicate subsearch label '" + spec.label + "'");
    const auto& sources = require(entry, "sources", where);
    if (!sources.is_array()) throw ManifestError(where + ".sources: expected array");
    std::set<std::string> seen;
    for (std::size_t j = 0; j < sources.size(); ++j) {
      const std::string swhere = where + ".sources[" + std::to_string(j) + "]";
      if (!sources[j].is_string()) throw ManifestError(swhere + ": expected string");
      auto source = sources[j].get<std::string>();
      if (source.empty()) throw ManifestError(swhere + ": empty source");
      if (!seen.insert(source).second) {
        log::warn("subsearch '" + spec.label + "': duplicate source '" + source + "' collapsed");
        continue;
      }
      spec.sources.push_back(std::move(source));
    }
    manifest.subsearches.push_back(std::move(spec));
  }
  if (manifest.subsearches.size() < 2) {
    throw ValidationError("manifest for category '" + manifest.category + "' has " +
                          std::to_string(manifest.subsearches.size()) +
                          " subsearch(es); at least 2 are required");
  }

  if (auto it = doc.find("baseline"); it != doc.end()) {
    if (!it->is_string()) throw ManifestError("manifest.baseline: expected string");
    manifest.baseline_label = it->get<std::string>();
    if (!labels.count(manifest.baseline_label))
      throw ManifestError("manifest.baseline: no subsearch labelled '" + manifest.baseline_label + "'");
  } else {
    const auto bare = trim_lower(manifest.category);
    for (const auto& s : manifest.subsearches) {
      if (trim_lower(s.label) == bare) {
        manifest.baseline_label = s.label;
        break;
      }
    }
  }
  return manifest;
}

CorpusManifest load_manifest(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw ManifestError(std::string("manifest: ") + e.what());
  }
  return parse_manifest(text, path.parent_path());
}

std::string_view to_string(ImageStatus status) {
  switch (status) {
    case ImageStatus::ok: return "ok";
    case ImageStatus::fetch_error: return "fetch_error";
    case ImageStatus::decode_error: return "decode_error";
  }
  return "fetch_error";
}

ImageStatus image_status_from_string(std::string_view text) {
  if (text == "ok") return ImageStatus::ok;
  if (text == "fetch_error") return ImageStatus::fetch_error;
  if (text == "decode_error") return ImageStatus::decode_error;
  throw ValidationError("unknown image status '" + std::string(text) + "'");
}

std::string make_image_id(std::string_view subsearch_label, std::string_view source,
                          std::string_view content_hash) {
  std::string key;
  key.append(subsearch_label).push_back('\x1f');
  key.append(source).push_back('\x1f');
  key.append(content_hash);
  return sha256_hex(key).substr(0, 16);
}

fs::path cache_blob_path(const fs::path& cache_dir, std::string_view content_hash) {
  return cache_dir / "blobs" / std::string(content_hash);
}

namespace {

struct IndexEntry {
  std::string hash;
  std::string status;
  std::string timestamp;
};

using CacheIndex = std::map<std::string, IndexEntry>;

fs::path index_path(const fs::path& cache_dir) { return cache_dir / "index.json"; }

CacheIndex load_index(const fs::path& cache_dir) {
  CacheIndex index;
  const auto path = index_path(cache_dir);
  if (!fs::exists(path)) return index;
  try {
    auto doc = json::parse(read_text_file(path));
    for (const auto& [source, e] : doc.at("entries").items()) {
      index[source] = {e.value("hash", ""), e.value("status", ""), e.value("timestamp", "")};
    }
  } catch (const std::exception& e) {
    log::warn("cache index " + path.string() + " unreadable, starting fresh: " + e.what());
    index.clear();
  }
  return index;
}

void save_index(const fs::path& cache_dir, const CacheIndex& index) {
  json entries = json::object();
  for (const auto& [source, e] : index) {
    entries[source] = {{"hash", e.hash}, {"status", e.status}, {"timestamp", e.timestamp}};
  }
  json doc = {{"version", 1}, {"entries", std::move(entries)}};
  write_file_atomic(index_path(cache_dir), doc.dump(2) + "\n");
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::size_t curl_write(char* ptr, std::size_t size, std::size_t nmemb, void* userdata) {
  auto* out = static_cast<Bytes*>(userdata);
  out->insert(out->end(), ptr, ptr + size * nmemb);
  return size * nmemb;
}

void ensure_curl_initialized() {
  static std::once_flag once;
  std::call_once(once, [] { curl_global_init(CURL_GLOBAL_DEFAULT); });
}

struct CurlDeleter {
  void operator()(CURL* c) const { curl_easy_cleanup(c); }
};

// Returns the body, or throws Error describing the failure.
Bytes http_get(const std::string& url, long timeout_seconds) {
  ensure_curl_initialized();
  std::unique_ptr<CURL, CurlDeleter> curl(curl_easy_init());
  if (!curl) throw Error("curl_easy_init failed");
  Bytes body;
  char errbuf[CURL_ERROR_SIZE] = {0};
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_MAXREDIRS, 5L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_NOSIGNAL, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_TIMEOUT, timeout_seconds);
  curl_easy_setopt(curl.get(), CURLOPT_CONNECTTIMEOUT, std::min(timeout_seconds, 10L));
  curl_easy_setopt(curl.get(), CURLOPT_USERAGENT, "simsea/1.0");
  curl_easy_setopt(curl.get(), CURLOPT_ERRORBUFFER, errbuf);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, curl_write);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, &body);
  const CURLcode rc = curl_easy_perform(curl.get());
  if (rc != CURLE_OK) {
    throw Error(url + ": " + (errbuf[0] ? std::string(errbuf) : curl_easy_strerror(rc)));
  }
  return body;
}

struct Job {
  std::string source;
  std::string label;
  int subsearch_index = 0;
  int rank = 0;
};

enum class Origin { none, cache, network, local };

struct JobResult {
  ImageRecord record;
  Origin origin = Origin::none;
  std::optional<IndexEntry> index_update;
};

}  // namespace

std::vector<ImageRecord> fetch_images(const CorpusManifest& manifest, const FetchOptions& options,
                                      FetchStats* stats) {
  if (options.cache_dir.empty()) throw ValidationError("fetch: cache directory not set");
  fs::create_directories(options.cache_dir / "blobs");

  std::vector<Job> jobs;
  for (std::size_t s = 0; s < manifest.subsearches.size(); ++s) {
    const auto& sub = manifest.subsearches[s];
    for (std::size_t r = 0; r < sub.sources.size(); ++r) {
      jobs.push_back({sub.sources[r], sub.label, static_cast<int>(s), static_cast<int>(r)});
    }
  }

  const CacheIndex index = load_index(options.cache_dir);
  std::vector<JobResult> results(jobs.size());

  parallel_for(jobs.size(), std::max(1u, options.parallelism), [&](std::size_t i) {
    const Job& job = jobs[i];
    JobResult& out = results[i];
    ImageRecord& rec = out.record;
    rec.category = manifest.category;
    rec.subsearch_label = job.label;
    rec.subsearch_index = job.subsearch_index;
    rec.original_rank = job.rank;
    rec.source = job.source;

    std::optional<Bytes> bytes;
    std::string hash;
    if (is_url(job.source)) {
      if (auto it = index.find(job.source);
          it != index.end() && !it->second.hash.empty() && it->second.status != "fetch_error") {
        const auto blob = cache_blob_path(options.cache_dir, it->second.hash);
        if (fs::exists(blob)) {
          auto cached = read_file(blob);
          if (sha256_hex(cached) == it->second.hash) {
            bytes = std::move(cached);
            hash = it->second.hash;
            out.origin = Origin::cache;
          }
        }
      }
      if (!bytes) {
        try {
          bytes = http_get(job.source, options.timeout_seconds);
          out.origin = Origin::network;
        } catch (const Error& e) {
          rec.status = ImageStatus::fetch_error;
          rec.error = e.what();
        }
      }
    } else {
      std::string local = job.source;
      if (local.starts_with("file://")) local = local.substr(7);
      fs::path path(local);
      if (path.is_relative()) path = manifest.base_dir / path;
      try {
        bytes = read_file(path);
        out.origin = Origin::local;
      } catch (const Error& e) {
        rec.status = ImageStatus::fetch_error;
        rec.error = e.what();
      }
    }

    if (!bytes) {
      rec.id = make_image_id(job.label, job.source, "");
      out.index_update = IndexEntry{"", "fetch_error", utc_timestamp()};
      return;
    }
    if (hash.empty()) {
      hash = sha256_hex(*bytes);
      const auto blob = cache_blob_path(options.cache_dir, hash);
      if (!fs::exists(blob) || sha256_hex(read_file(blob)) != hash) write_file_atomic(blob, *bytes);
    }
    try {
      const RgbImage img = decode_rgb(*bytes);
      rec.status = ImageStatus::ok;
      rec.content_hash = hash;
      rec.width = img.width;
      rec.height = img.height;
    } catch (const DecodeError& e) {
      rec.status = ImageStatus::decode_error;
      rec.error = e.what();
    }
    rec.id = make_image_id(job.label, job.source, rec.content_hash);
    if (out.origin != Origin::cache) {
      const std::string status(to_string(rec.status));
      auto it = index.find(job.source);
      if (it == index.end() || it->second.hash != hash || it->second.status != status) {
        out.index_update = IndexEntry{hash, status, utc_timestamp()};
      }
    }
  });

  CacheIndex updated = index;
  bool dirty = false;
  FetchStats local_stats;
  std::vector<ImageRecord> records;
  records.reserve(results.size());
  for (auto& r : results) {
    switch (r.origin) {
      case Origin::cache: ++local_stats.cache_hits; break;
      case Origin::network: ++local_stats.downloads; break;
      case Origin::local: ++local_stats.local_reads; break;
      case Origin::none: break;
    }
    if (!r.record.ok()) {
      ++local_stats.failures;
      log::warn("image '" + r.record.source + "' (" + r.record.subsearch_label + "): " +
                std::string(to_string(r.record.status)) + ": " + r.record.error);
    }
    if (r.index_update) {
      updated[r.record.source] = *r.index_update;
      dirty = true;
    }
    records.push_back(std::move(r.record));
  }
  if (dirty) save_index(options.cache_dir, updated);
  if (stats) *stats = local_stats;
  return records;
}

}  // namespace simsea
