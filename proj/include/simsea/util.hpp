#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace simsea {

using Bytes = std::vector<std::uint8_t>;

/// Lowercase hex SHA-256 of a byte range.
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view text);

Bytes read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

/// Writes via a temporary sibling and rename, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware concurrency).
/// Each index is visited exactly once; callers write results by index so the
/// outcome is independent of scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

unsigned resolve_threads(unsigned requested);

/// Filesystem-safe slug: lowercase alphanumerics, other runs collapsed to '-'.
std::string slugify(std::string_view text);

/// Minimal RFC 4180 field quoting.
std::string csv_escape(std::string_view field);

/// Splits one CSV line, honoring double-quoted fields.
std::vector<std::string> csv_split(std::string_view line);

/// Uniform double in [0, 1) from 53 random bits of a 64-bit engine draw.
inline double unit_double(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

}  // namespace simsea
