#include "synthetic.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <random>
#include <stdexcept>

#include "simsea/corpus.hpp"

namespace simsea::fixture {

namespace fs = std::filesystem;
using json = nlohmann::json;

Bytes encode_png_gray(int width, int height, const std::vector<std::uint8_t>& pixels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw std::runtime_error(std::string("png size query failed: ") + image.message);
  Bytes out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw std::runtime_error(std::string("png encode failed: ") + image.message);
  out.resize(size);
  return out;
}

namespace {

constexpr double kPi = std::numbers::pi;

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::vector<std::uint8_t> render_texture(int kind, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.02);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(size) * size);

  // Per-image jitter.
  const double phase = 2.0 * kPi * u(rng);
  const double ox = u(rng) * size, oy = u(rng) * size;
  const double jitter = u(rng) - 0.5;
  const double contrast = 0.38 + 0.06 * u(rng);

  struct Blob {
    double x, y, r, s;
  };
  std::vector<Blob> blobs;
  if (kind == 3) {
    for (int b = 0; b < 14; ++b) blobs.push_back({u(rng) * size, u(rng) * size, 6.0 + 8.0 * u(rng), u(rng) < 0.5 ? -1.0 : 1.0});
  }

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double v = 0.5;
      switch (kind) {
        case 0: {  // diagonal grating
          const double theta = kPi / 4.0 + 0.06 * jitter;
          const double period = 10.0 + 1.0 * jitter;
          const double t = x * std::cos(theta) + y * std::sin(theta);
          v += contrast * std::sin(2.0 * kPi * t / period + phase);
          break;
        }
        case 1: {  // horizontal bars
          const double period = 14.0 + 2.0 * jitter;
          v += contrast * (std::sin(2.0 * kPi * y / period + phase) > 0 ? 1.0 : -1.0);
          break;
        }
        case 2: {  // checkerboard
          const double cell = 11.0 + 2.0 * jitter;
          const int cx = static_cast<int>(std::floor((x + ox) / cell));
          const int cy = static_cast<int>(std::floor((y + oy) / cell));
          v += contrast * (((cx + cy) & 1) ? 1.0 : -1.0);
          break;
        }
        case 3: {  // soft blobs
          for (const auto& b : blobs) {
            const double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y);
            v += 0.35 * b.s * std::exp(-d2 / (2.0 * b.r * b.r));
          }
          break;
        }
        case 4: {  // concentric rings
          const double period = 12.0 + 2.0 * jitter;
          const double d = std::hypot(x - ox * 0.5 - size * 0.25, y - oy * 0.5 - size * 0.25);
          v += contrast * std::sin(2.0 * kPi * d / period + phase);
          break;
        }
        default: throw std::invalid_argument("unknown texture kind");
      }
      px[static_cast<std::size_t>(y) * size + x] = to_byte(v + noise(rng));
    }
  }
  return px;
}

SyntheticCorpus write_synthetic_corpus(const fs::path& dir, const SyntheticOptions& options) {
  if (options.targets_per_subsearch > options.images_per_subsearch)
    throw std::invalid_argument("more targets than images per subsearch");
  if (options.subsearch_labels.size() > 4) throw std::invalid_argument("at most 4 distractor classes available");
  SyntheticCorpus out;
  out.manifest = dir / "manifest.json";
  out.labels = dir / "labels.csv";
  out.config = dir / "config.json";
  fs::create_directories(dir / "images");

  std::mt19937_64 rng(options.seed);
  json subsearches = json::array();
  for (std::size_t s = 0; s < options.subsearch_labels.size(); ++s) {
    const auto& label = options.subsearch_labels[s];
    std::vector<int> kinds(static_cast<std::size_t>(options.images_per_subsearch), static_cast<int>(s) + 1);
    std::fill_n(kinds.begin(), options.targets_per_subsearch, 0);
    std::shuffle(kinds.begin(), kinds.end(), rng);
    json sources = json::array();
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      const std::string rel = "images/" + slugify(label) + "-" + std::to_string(i) + ".png";
      const Bytes png = encode_png_gray(options.size, options.size, render_texture(kinds[i], options.size, rng()));
      write_file_atomic(dir / rel, png);
      sources.push_back(rel);
      const std::string id = make_image_id(label, rel, sha256_hex(png));
      out.image_ids.push_back(id);
      if (kinds[i] == 0) out.target_ids.insert(id);
    }
    subsearches.push_back({{"label", label}, {"sources", sources}});
  }
  write_file_atomic(out.manifest,
                    json{{"category", options.category}, {"version", 1}, {"subsearches", subsearches}}.dump(2) + "\n");

  std::string csv = "image_id,subject_id,label\n";
  for (int subject = 1; subject <= options.subjects; ++subject)
    for (const auto& id : out.image_ids)
      csv += id + ",s" + std::to_string(subject) + "," + (out.target_ids.count(id) ? "1" : "0") + "\n";
  write_file_atomic(out.labels, csv);

  write_file_atomic(out.config, json{{"manifest", "manifest.json"},
                                     {"labels", "labels.csv"},
                                     {"cache_dir", "cache"},
                                     {"work_dir", "work"}}
                                        .dump(2) + "\n");
  return out;
}

}  // namespace simsea::fixture
