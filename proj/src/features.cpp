#include "simsea/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>

#include "simsea/error.hpp"

namespace simsea {

void DescriptorParams::validate() const {
  if (grid_step < 1) throw ValidationError("descriptor grid_step must be >= 1");
  if (bin_sizes.empty()) throw ValidationError("descriptor bin_sizes must not be empty");
  for (std::size_t i = 0; i < bin_sizes.size(); ++i) {
    if (bin_sizes[i] < 1) throw ValidationError("descriptor bin sizes must be >= 1");
    if (i > 0 && bin_sizes[i] <= bin_sizes[i - 1])
      throw ValidationError("descriptor bin_sizes must be strictly increasing");
  }
  if (bin_sizes.size() > 256) throw ValidationError("at most 256 descriptor scales");
  if (orientation_bins < 1) throw ValidationError("orientation_bins must be >= 1");
  if (spatial_cells < 1) throw ValidationError("spatial_cells must be >= 1");
  if (!(clamp > 0.0)) throw ValidationError("descriptor clamp must be > 0");
  if (!(contrast_floor >= 0.0)) throw ValidationError("contrast_floor must be >= 0");
}

int grid_positions(int extent, int support, int grid_step) {
  if (extent < support || support <= 0 || grid_step <= 0) return 0;
  return (extent - support) / grid_step + 1;
}

bool normalize_descriptor(std::span<float> v, double clamp, double contrast_floor) {
  double norm2 = 0.0;
  for (float x : v) norm2 += static_cast<double>(x) * x;
  const double norm = std::sqrt(norm2);
  if (norm < contrast_floor || norm == 0.0) {
    std::fill(v.begin(), v.end(), 0.0f);
    return false;
  }
  double renorm2 = 0.0;
  std::vector<double> tmp(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    tmp[i] = std::min(v[i] / norm, clamp);
    renorm2 += tmp[i] * tmp[i];
  }
  const double renorm = std::sqrt(renorm2);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(tmp[i] / renorm);
  return true;
}

namespace {

struct Gradient {
  std::vector<float> magnitude;
  std::vector<std::uint16_t> bin;  // lower orientation bin
  std::vector<float> frac;         // weight of the next bin
};

Gradient compute_gradients(const GrayRaster& r, int orientation_bins) {
  const int w = r.width, h = r.height;
  Gradient g;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  g.magnitude.resize(n);
  g.bin.resize(n);
  g.frac.resize(n);
  const double per_radian = orientation_bins / (2.0 * std::numbers::pi);
  for (int y = 0; y < h; ++y) {
    const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
    for (int x = 0; x < w; ++x) {
      const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
      const double gx = 0.5 * (static_cast<double>(r.at(xp, y)) - r.at(xm, y));
      const double gy = 0.5 * (static_cast<double>(r.at(x, yp)) - r.at(x, ym));
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      const double mag = std::hypot(gx, gy);
      g.magnitude[p] = static_cast<float>(mag);
      if (mag == 0.0) continue;
      double angle = std::atan2(gy, gx);
      if (angle < 0) angle += 2.0 * std::numbers::pi;
      double o = angle * per_radian;
      int b = static_cast<int>(std::floor(o));
      double f = o - b;
      b %= orientation_bins;
      if (b < 0) b += orientation_bins;
      g.bin[p] = static_cast<std::uint16_t>(b);
      g.frac[p] = static_cast<float>(f);
    }
  }
  return g;
}

struct CellWeight {
  int cell;     // lower cell, may be -1
  float upper;  // weight of cell + 1
};

}  // namespace

DescriptorSet extract_dense_descriptors(const GrayRaster& raster, const DescriptorParams& params,
                                        std::string image_id) {
  params.validate();
  DescriptorSet out;
  out.image_id = std::move(image_id);
  out.dimension = params.dimension();
  if (raster.width < 1 || raster.height < 1) return out;

  const int cells = params.spatial_cells;
  const int obins = params.orientation_bins;
  const int dim = out.dimension;

  std::size_t total = 0;
  for (int b : params.bin_sizes) {
    const int support = cells * b;
    total += static_cast<std::size_t>(grid_positions(raster.width, support, params.grid_step)) *
             grid_positions(raster.height, support, params.grid_step);
  }
  if (total == 0) return out;
  out.frames.reserve(total);
  out.data.reserve(total * dim);

  const Gradient grad = compute_gradients(raster, obins);
  std::vector<float> hist(dim);

  for (std::size_t s = 0; s < params.bin_sizes.size(); ++s) {
    const int bin = params.bin_sizes[s];
    const int support = cells * bin;
    const int nx = grid_positions(raster.width, support, params.grid_step);
    const int ny = grid_positions(raster.height, support, params.grid_step);
    if (nx == 0 || ny == 0) continue;

    std::vector<CellWeight> table(support);
    for (int l = 0; l < support; ++l) {
      const double u = (l + 0.5) / bin - 0.5;
      const int c = static_cast<int>(std::floor(u));
      table[l] = {c, static_cast<float>(u - c)};
    }

    for (int gy = 0; gy < ny; ++gy) {
      const int y0 = gy * params.grid_step;
      for (int gx = 0; gx < nx; ++gx) {
        const int x0 = gx * params.grid_step;
        std::fill(hist.begin(), hist.end(), 0.0f);
        for (int ly = 0; ly < support; ++ly) {
          const CellWeight cy = table[ly];
          const std::size_t row = static_cast<std::size_t>(y0 + ly) * raster.width + x0;
          for (int lx = 0; lx < support; ++lx) {
            const std::size_t p = row + lx;
            const float m = grad.magnitude[p];
            if (m == 0.0f) continue;
            const CellWeight cx = table[lx];
            const int o0 = grad.bin[p];
            const int o1 = (o0 + 1) % obins;
            const float fo = grad.frac[p];
            for (int dy = 0; dy < 2; ++dy) {
              const int cyi = cy.cell + dy;
              if (cyi < 0 || cyi >= cells) continue;
              const float wy = dy ? cy.upper : 1.0f - cy.upper;
              for (int dx = 0; dx < 2; ++dx) {
                const int cxi = cx.cell + dx;
                if (cxi < 0 || cxi >= cells) continue;
                const float wxy = wy * (dx ? cx.upper : 1.0f - cx.upper) * m;
                float* h = hist.data() + (cyi * cells + cxi) * obins;
                h[o0] += wxy * (1.0f - fo);
                h[o1] += wxy * fo;
              }
            }
          }
        }
        normalize_descriptor(hist, params.clamp, params.contrast_floor);
        out.frames.push_back({static_cast<std::uint32_t>(x0), static_cast<std::uint32_t>(y0),
                              static_cast<std::uint8_t>(s)});
        out.data.insert(out.data.end(), hist.begin(), hist.end());
      }
    }
  }
  return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

void write_descriptor_dump(const std::filesystem::path& path, const DescriptorSet& set) {
  std::vector<std::uint8_t> buf;
  const std::size_t dim = static_cast<std::size_t>(set.dimension);
  buf.reserve(8 + set.size() * (9 + 4 * dim));
  put_u32(buf, static_cast<std::uint32_t>(set.dimension));
  put_u32(buf, static_cast<std::uint32_t>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    put_u32(buf, set.frames[i].x);
    put_u32(buf, set.frames[i].y);
    buf.push_back(set.frames[i].scale_index);
    for (float f : set.vector(i)) put_u32(buf, std::bit_cast<std::uint32_t>(f));
  }
  write_file_atomic(path, buf);
}

DescriptorSet read_descriptor_dump(const std::filesystem::path& path, std::string image_id) {
  const Bytes buf = read_file(path);
  if (buf.size() < 8) throw Error("descriptor dump truncated: " + path.string());
  DescriptorSet set;
  set.image_id = std::move(image_id);
  set.dimension = static_cast<int>(get_u32(buf.data()));
  const std::size_t count = get_u32(buf.data() + 4);
  const std::size_t dim = static_cast<std::size_t>(set.dimension);
  const std::size_t record = 9 + 4 * dim;
  if (buf.size() != 8 + count * record) throw Error("descriptor dump size mismatch: " + path.string());
  set.frames.resize(count);
  set.data.resize(count * dim);
  const std::uint8_t* p = buf.data() + 8;
  for (std::size_t i = 0; i < count; ++i, p += record) {
    set.frames[i] = {get_u32(p), get_u32(p + 4), p[8]};
    for (std::size_t d = 0; d < dim; ++d) set.data[i * dim + d] = std::bit_cast<float>(get_u32(p + 9 + 4 * d));
  }
  return set;
}

}  // namespace simsea
