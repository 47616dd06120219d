#pragma once

#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "ssk/dataset.hpp"
#include "ssk/models.hpp"

namespace ssk {

/// Softmax probabilities [T,C,h,w] at the model's input resolution for a
/// window of frames (resized bilinearly to the model input).
Tensor predict_probs(ModelGraph& model, std::span<const Image> frames);

/// Per-pixel argmax of [T,C,h,w] probabilities, nearest-resized to
/// width x height.
std::vector<MaskFrame> probs_to_masks(const Tensor& probs, std::size_t width, std::size_t height);

/// predict_probs followed by probs_to_masks at the frames' own resolution.
std::vector<MaskFrame> segment_window(ModelGraph& model, std::span<const Image> frames);

struct CascadeConfig {
  CropConfig eyes{64, 32, 0.5, 0.1, 6.0};
  CropConfig mouth{48, 48, 0.5, 0.1, 6.0};
  std::size_t window = 5;

  void validate() const;
};

nlohmann::json to_json(const CascadeConfig& c);
CascadeConfig cascade_config_from_json(const nlohmann::json& j);

/// Segments a window of frames into 5-class masks at frame resolution.
/// `first_frame` is the window's offset within the clip.
using PrimarySegmenter = std::function<std::vector<MaskFrame>(std::span<const Image> window, std::size_t first_frame)>;
/// Segments the `box` crop of a window into region-class masks at the
/// sub-model resolution.
using RegionSegmenter = std::function<std::vector<MaskFrame>(std::span<const Image> window, std::size_t first_frame,
                                                             const CropBox& box)>;

/// Wraps a 5-class model.
PrimarySegmenter model_segmenter(ModelGraph& model);
/// Wraps a region model (2 classes for eyes, 3 for mouth) with its crop size.
RegionSegmenter region_model_segmenter(ModelGraph& model, RegionKind kind, const CropConfig& crop);

/// Primary segmenter plus optional zoomed-in region segmenters.
struct CascadeBundle {
  PrimarySegmenter primary;
  RegionSegmenter eyes;
  RegionSegmenter mouth;
  CascadeConfig config;
};

/// Writes a region prediction (sub-model resolution, region classes) back
/// into the primary mask. Inside the box, region foreground replaces the
/// primary label; region background keeps the primary label unless that label
/// belongs to the region, which then becomes skin. The box is clamped to the
/// frame; pixels outside it are untouched.
MaskFrame integrate_masks(const MaskFrame& primary, const MaskFrame& region_pred, const CropBox& box,
                          RegionKind kind);

/// Crops each frame to `box`, segments with the region model and returns the
/// region-class masks at the sub-model resolution.
std::vector<MaskFrame> segment_region(ModelGraph& model, std::span<const Image> frames, const CropBox& box,
                                      const CropConfig& crop);

struct CascadeResult {
  std::vector<MaskFrame> primary;     // primary-only masks
  std::vector<MaskFrame> integrated;  // after eyes, then mouth
  std::vector<CropBox> boxes;         // per window: eyes (if run), mouth (if run)
};

/// Runs the full pipeline over a clip whose length is a multiple of the
/// window. Boxes come from the primary masks without jitter, one per window
/// and region. Missing region models are skipped with a notice.
CascadeResult run_cascade(CascadeBundle& bundle, std::span<const Image> frames);

}  // namespace ssk
