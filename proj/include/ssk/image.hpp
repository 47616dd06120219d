#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ssk/mask.hpp"
#include "ssk/tensor.hpp"

namespace ssk {

/// 8-bit interleaved RGB image.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

void write_png(const std::filesystem::path& path, const Image& img);
void write_png(const std::filesystem::path& path, const MaskFrame& mask);
Image read_png_rgb(const std::filesystem::path& path);
/// Reads an 8-bit grayscale PNG of raw class indices.
MaskFrame read_png_mask(const std::filesystem::path& path);

/// Nearest-neighbour resize of class indices; source pixel of output pixel x
/// is floor((x + 0.5) * src / dst).
MaskFrame resize_nearest(const MaskFrame& mask, std::size_t width, std::size_t height);

/// Bilinear sample of the region [x0, x0 + w) x [y0, y0 + h) of `img`
/// (pixel-centre convention, edges clamped) into a width x height image.
Image crop_resize_bilinear(const Image& img, double x0, double y0, double w, double h, std::size_t width,
                           std::size_t height);
/// Nearest-neighbour counterpart of crop_resize_bilinear for label maps.
MaskFrame crop_resize_nearest(const MaskFrame& mask, double x0, double y0, double w, double h, std::size_t width,
                              std::size_t height);

inline Image resize_bilinear(const Image& img, std::size_t width, std::size_t height) {
  return crop_resize_bilinear(img, 0, 0, double(img.width), double(img.height), width, height);
}

/// Writes `img` into channel-first slot `n` of a [N,3,H,W] tensor, mapping
/// bytes to [-1, 1].
void image_to_tensor(const Image& img, Tensor& batch, std::size_t n);

}  // namespace ssk
