#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
// jpeglib.h needs size_t and FILE declared first
#include <jpeglib.h>

#include "simsea/corpus.hpp"
#include "simsea/error.hpp"

namespace simsea {

namespace {

bool is_png(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return b.size() >= 8 && std::equal(sig, sig + 8, b.begin());
}

bool is_jpeg(std::span<const std::uint8_t> b) {
  return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError("png: " + msg);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  // Transparent pixels composite onto white.
  png_color background{255, 255, 255};
  if (!png_image_finish_read(&image, &background, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError("png: " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_silent(j_common_ptr, int) {}

RgbImage decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.emit_message = jpeg_silent;
  RgbImage out;
  // Nothing with a non-trivial destructor may be created between setjmp and
  // the decode calls; `out` is declared above.
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError(std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  if (jpeg_read_header(&cinfo, TRUE) != JPEG_HEADER_OK) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError("jpeg: bad header");
  }
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

RgbImage decode_rgb(std::span<const std::uint8_t> bytes) {
  RgbImage img;
  if (is_png(bytes)) {
    img = decode_png(bytes);
  } else if (is_jpeg(bytes)) {
    img = decode_jpeg(bytes);
  } else {
    throw DecodeError("unsupported image format");
  }
  if (img.width < 1 || img.height < 1) throw DecodeError("image has zero size");
  return img;
}

GrayRaster to_gray(const RgbImage& image) {
  GrayRaster out(image.width, image.height);
  const std::size_t n = out.values.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double r = image.pixels[3 * i] / 255.0;
    const double g = image.pixels[3 * i + 1] / 255.0;
    const double b = image.pixels[3 * i + 2] / 255.0;
    const double y = 0.299 * r + 0.587 * g + 0.114 * b;
    out.values[i] = static_cast<float>(std::clamp(y, 0.0, 1.0));
  }
  return out;
}

GrayRaster resize_bilinear(const GrayRaster& src, int width, int height) {
  GrayRaster out(width, height);
  const double sx = static_cast<double>(src.width) / width;
  const double sy = static_cast<double>(src.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const double top = (1 - wx) * src.at(x0, y0) + wx * src.at(x1, y0);
      const double bottom = (1 - wx) * src.at(x0, y1) + wx * src.at(x1, y1);
      out.at(x, y) = static_cast<float>(std::clamp((1 - wy) * top + wy * bottom, 0.0, 1.0));
    }
  }
  return out;
}

GrayRaster limit_size(const GrayRaster& raster, int max_dim) {
  const int longest = std::max(raster.width, raster.height);
  if (max_dim <= 0 || longest <= max_dim) return raster;
  const double scale = static_cast<double>(max_dim) / longest;
  int w = raster.width >= raster.height ? max_dim : static_cast<int>(std::lround(raster.width * scale));
  int h = raster.height >= raster.width ? max_dim : static_cast<int>(std::lround(raster.height * scale));
  return resize_bilinear(raster, std::max(w, 1), std::max(h, 1));
}

GrayRaster decode_to_gray(std::span<const std::uint8_t> bytes, int max_dim) {
  return limit_size(to_gray(decode_rgb(bytes)), max_dim);
}

}  // namespace simsea
