#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssk/mask.hpp"

namespace ssk {

struct Point {
  double x = 0;
  double y = 0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline constexpr std::size_t kNumLandmarks = 68;
using LandmarkFrame = std::array<Point, kNumLandmarks>;

/// A closed contour through landmark indices. Corners are landmark indices
/// where tangent continuity is dropped.
struct RegionContour {
  std::string name;
  std::uint8_t cls;
  std::vector<std::size_t> indices;
  std::vector<std::size_t> corners;
};

/// Region contours in paint order: skin, outer mouth, inner mouth, then the
/// two eyes. Skin is the jaw line (0..16) closed by the brows (26..17); the
/// nose points (27..35) are unused.
const std::vector<RegionContour>& landmark_regions();

/// Dense closed polyline through `points` (first point repeated at the end).
/// Without corners the curve is a periodic natural cubic spline in chord
/// length. Corners split it into open pieces, each a clamped cubic spline
/// with end tangents along its first and last chords. Consecutive duplicate
/// points are dropped with a warning.
std::vector<Point> closed_cubic_spline(const std::vector<Point>& points, const std::vector<std::size_t>& corners,
                                       std::size_t samples_per_segment = 8);

/// Signed shoelace area of a closed polyline.
double polygon_area(const std::vector<Point>& polygon);

/// Even-odd scanline fill sampled at pixel centres (x + 0.5, y + 0.5).
void fill_polygon(MaskFrame& mask, const std::vector<Point>& polygon, std::uint8_t cls);

/// Rasterises every region; polygons with zero area are skipped with a
/// warning.
MaskFrame landmarks_to_mask(const LandmarkFrame& lm, std::size_t width, std::size_t height,
                            std::size_t samples_per_segment = 8);

/// Reads 68 "x y" lines, optionally wrapped in the pts header
/// ("version: 1", "n_points: 68", "{" ... "}").
LandmarkFrame read_pts(const std::filesystem::path& path);
void write_pts(const std::filesystem::path& path, const LandmarkFrame& lm);

}  // namespace ssk
