#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace ssk {

enum FaceClass : std::uint8_t {
  kBackground = 0,
  kSkin = 1,
  kEyes = 2,
  kOuterMouth = 3,
  kInnerMouth = 4,
};
inline constexpr std::size_t kNumFaceClasses = 5;
inline constexpr std::array<std::string_view, kNumFaceClasses> kFaceClassNames = {
    "background", "skin", "eyes", "outer_mouth", "inner_mouth"};

/// Per-pixel class indices, row-major.
struct MaskFrame {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> labels;

  MaskFrame() = default;
  MaskFrame(std::size_t w, std::size_t h, std::uint8_t fill = kBackground)
      : width(w), height(h), labels(w * h, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y) { return labels[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return labels[y * width + x]; }
  std::size_t count(std::uint8_t cls) const;

  friend bool operator==(const MaskFrame&, const MaskFrame&) = default;
};

inline std::size_t MaskFrame::count(std::uint8_t cls) const {
  std::size_t n = 0;
  for (auto l : labels) n += l == cls;
  return n;
}

}  // namespace ssk
