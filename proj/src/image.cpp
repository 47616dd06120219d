#include "ssk/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <stdexcept>

namespace ssk {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

thread_local char g_png_message[256];

void png_error_fn(png_structp png, png_const_charp msg) {
  std::snprintf(g_png_message, sizeof g_png_message, "%s", msg);
  png_longjmp(png, 1);
}
void png_warning_fn(png_structp, png_const_charp) {}

// The libpng sections keep only trivially destructible locals so that the
// longjmp error path is well defined.
bool write_png_impl(std::FILE* f, std::size_t w, std::size_t h, int color_type, int channels,
                    const std::uint8_t* data) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) png_write_row(png, const_cast<png_bytep>(data + y * w * std::size_t(channels)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

struct RawPng {
  std::uint8_t* data = nullptr;
  std::size_t width = 0;
  std::size_t height = 0;
  bool gray_mismatch = false;
};

bool read_png_impl(std::FILE* f, int channels, RawPng* out) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::free(out->data);
    out->data = nullptr;
    return false;
  }
  png_init_io(png, f);
  png_read_info(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  const bool gray_src = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
  if (channels == 3 && gray_src) png_set_gray_to_rgb(png);
  if (channels == 1 && !gray_src) {
    out->gray_mismatch = true;
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_read_update_info(png, info);
  out->width = png_get_image_width(png, info);
  out->height = png_get_image_height(png, info);
  const std::size_t row = out->width * std::size_t(channels);
  if (png_get_rowbytes(png, info) != row) {
    std::snprintf(g_png_message, sizeof g_png_message, "unexpected PNG layout");
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  out->data = static_cast<std::uint8_t*>(std::malloc(row * out->height));
  for (std::size_t y = 0; y < out->height; ++y) png_read_row(png, out->data + y * row, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

void write_png_raw(const std::filesystem::path& path, std::size_t w, std::size_t h, int color_type, int channels,
                   const std::uint8_t* data) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot write " + path.string());
  if (!write_png_impl(f.get(), w, h, color_type, channels, data)) {
    throw std::runtime_error(path.string() + ": png: " + g_png_message);
  }
}

std::vector<std::uint8_t> read_png_raw(const std::filesystem::path& path, int channels, std::size_t& w,
                                       std::size_t& h) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot read " + path.string());
  RawPng raw;
  if (!read_png_impl(f.get(), channels, &raw)) {
    if (raw.gray_mismatch) throw std::runtime_error(path.string() + ": expected a grayscale label PNG");
    throw std::runtime_error(path.string() + ": png: " + g_png_message);
  }
  w = raw.width;
  h = raw.height;
  std::vector<std::uint8_t> out(raw.data, raw.data + w * h * std::size_t(channels));
  std::free(raw.data);
  return out;
}

// Continuous source coordinate for output index i of n over [x0, x0 + w).
double source_coord(std::size_t i, std::size_t n, double x0, double w) { return x0 + (double(i) + 0.5) * w / double(n); }

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.rgb.size() != img.width * img.height * 3) throw std::invalid_argument("write_png: inconsistent image");
  write_png_raw(path, img.width, img.height, PNG_COLOR_TYPE_RGB, 3, img.rgb.data());
}

void write_png(const std::filesystem::path& path, const MaskFrame& mask) {
  write_png_raw(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, 1, mask.labels.data());
}

Image read_png_rgb(const std::filesystem::path& path) {
  Image img;
  img.rgb = read_png_raw(path, 3, img.width, img.height);
  return img;
}

MaskFrame read_png_mask(const std::filesystem::path& path) {
  MaskFrame m;
  m.labels = read_png_raw(path, 1, m.width, m.height);
  for (auto l : m.labels)
    if (l >= kNumFaceClasses) throw std::runtime_error(path.string() + ": class index out of range");
  return m;
}

MaskFrame resize_nearest(const MaskFrame& mask, std::size_t width, std::size_t height) {
  return crop_resize_nearest(mask, 0, 0, double(mask.width), double(mask.height), width, height);
}

MaskFrame crop_resize_nearest(const MaskFrame& mask, double x0, double y0, double w, double h, std::size_t width,
                              std::size_t height) {
  if (width == 0 || height == 0 || mask.width == 0 || mask.height == 0) {
    throw std::invalid_argument("resize: empty size");
  }
  MaskFrame out(width, height, kBackground);
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = std::floor(source_coord(y, height, y0, h));
    const std::size_t iy = std::size_t(std::clamp(sy, 0.0, double(mask.height - 1)));
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = std::floor(source_coord(x, width, x0, w));
      const std::size_t ix = std::size_t(std::clamp(sx, 0.0, double(mask.width - 1)));
      out.at(x, y) = mask.at(ix, iy);
    }
  }
  return out;
}

Image crop_resize_bilinear(const Image& img, double x0, double y0, double w, double h, std::size_t width,
                           std::size_t height) {
  if (width == 0 || height == 0 || img.width == 0 || img.height == 0) {
    throw std::invalid_argument("resize: empty size");
  }
  Image out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = std::clamp(source_coord(y, height, y0, h) - 0.5, 0.0, double(img.height - 1));
    const std::size_t ya = std::size_t(sy), yb = std::min(ya + 1, img.height - 1);
    const double fy = sy - double(ya);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = std::clamp(source_coord(x, width, x0, w) - 0.5, 0.0, double(img.width - 1));
      const std::size_t xa = std::size_t(sx), xb = std::min(xa + 1, img.width - 1);
      const double fx = sx - double(xa);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (1 - fy) * ((1 - fx) * img.at(xa, ya, c) + fx * img.at(xb, ya, c)) +
                         fy * ((1 - fx) * img.at(xa, yb, c) + fx * img.at(xb, yb, c));
        out.at(x, y, c) = std::uint8_t(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

void image_to_tensor(const Image& img, Tensor& batch, std::size_t n) {
  if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != img.height || batch.dim(3) != img.width ||
      n >= batch.dim(0)) {
    throw std::invalid_argument("image_to_tensor: batch shape does not match image");
  }
  const std::size_t plane = img.width * img.height;
  double* base = batch.data().data() + n * 3 * plane;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) base[c * plane + i] = double(img.rgb[i * 3 + c]) / 127.5 - 1.0;
}

}  // namespace ssk
