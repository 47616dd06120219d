#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssk/image.hpp"
#include "ssk/landmarks.hpp"
#include "ssk/mask.hpp"
#include "ssk/tensor.hpp"

namespace ssk {

/// One video clip held in memory.
struct Clip {
  std::string id;
  std::string subject;
  std::string split;  // train | val | test
  double fps = 30.0;
  std::vector<Image> frames;
  std::vector<MaskFrame> masks;
  std::vector<LandmarkFrame> landmarks;  // may be empty
  std::vector<std::uint8_t> occluded;    // per-frame flag, may be empty

  std::size_t length() const { return frames.size(); }
  std::size_t width() const { return frames.empty() ? 0 : frames.front().width; }
  std::size_t height() const { return frames.empty() ? 0 : frames.front().height; }
};

struct Dataset {
  std::vector<Clip> clips;

  std::vector<const Clip*> split(const std::string& name) const;
  /// Throws if a subject appears in more than one split or a clip's frames
  /// and masks disagree in count or size.
  void validate() const;
};

inline constexpr int kManifestSchemaVersion = 1;

struct ClipRecord {
  std::string id;
  std::string subject;
  std::string split;
  double fps = 30.0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::string> frames;  // paths relative to the manifest
  std::vector<std::string> masks;
  std::vector<std::string> landmarks;  // optional pts files
  std::vector<std::uint8_t> occluded;
};

struct SequenceManifest {
  int schema_version = kManifestSchemaVersion;
  nlohmann::json generator = nlohmann::json::object();
  std::vector<ClipRecord> clips;
};

nlohmann::json to_json(const SequenceManifest& m);
SequenceManifest manifest_from_json(const nlohmann::json& j);

/// Writes frames/masks as PNG under `dir` plus dir/manifest.json.
SequenceManifest write_dataset(const Dataset& ds, const std::filesystem::path& dir,
                               const nlohmann::json& generator = nlohmann::json::object());
/// Loads every clip listed in the manifest (paths resolved against its
/// directory).
Dataset load_dataset(const std::filesystem::path& manifest_path);

// ---------------------------------------------------------------------------
// Sequence batching

/// A T-frame window: frames [start, start + T) of clip `clip`.
struct Window {
  std::size_t clip = 0;
  std::size_t start = 0;

  friend bool operator==(const Window&, const Window&) = default;
};

/// Consecutive non-overlapping T-windows of each clip, in order. Trailing
/// frames of a clip whose length is not a multiple of T are dropped with a
/// warning.
std::vector<Window> sequence_windows(std::span<const Clip* const> clips, std::size_t T);

/// Groups windows into batches of N. Windows are shuffled with `seed` (never
/// the frames inside them); the last batch may be short.
std::vector<std::vector<Window>> batch_sequences(std::span<const Clip* const> clips, std::size_t T, std::size_t N,
                                                 std::uint64_t seed, bool shuffle = true);

struct Batch {
  Tensor images;                     // [N*T, 3, H, W]
  std::vector<std::uint8_t> labels;  // N*T*H*W
};

/// Stacks the windows' frames window-major. Frames are bilinearly resized and
/// masks nearest-resized when the clip size differs from (width, height).
Batch make_batch(std::span<const Clip* const> clips, std::span<const Window> windows, std::size_t T,
                 std::size_t width, std::size_t height);

// ---------------------------------------------------------------------------
// Region crops

enum class RegionKind { Eyes, Mouth };

std::string to_string(RegionKind k);
/// Face classes owned by a region, in sub-model class order 1, 2, ...
std::vector<std::uint8_t> region_classes(RegionKind k);
/// Maps a face mask to the region's sub-model classes (unowned -> 0).
MaskFrame to_region_labels(const MaskFrame& mask, RegionKind k);

struct CropConfig {
  std::size_t width = 64;   // sub-model input
  std::size_t height = 32;
  double margin = 0.5;      // added to the tight box, as a fraction of its size
  double noise = 0.1;       // training jitter, fraction of box size
  double min_size = 6.0;    // pixels, before aspect matching

  void validate() const;
};

nlohmann::json to_json(const CropConfig& c);
CropConfig crop_config_from_json(const nlohmann::json& j, CropConfig defaults);

struct CropBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;
  RegionKind kind = RegionKind::Eyes;
  bool fallback = false;
};

/// One box for a window of masks: the union bounding box of the region's
/// pixels, grown by the margin, matched to the sub-model aspect ratio,
/// jittered by up to `noise` of its size, and clamped into the frame. When
/// the region is absent from every frame the box is anchored on the face
/// (or frame) and flagged as a fallback.
CropBox localize_crop_box(std::span<const MaskFrame> masks, RegionKind kind, const CropConfig& cfg, double noise,
                          std::uint64_t seed);

/// Crops every window of every clip into a region dataset at the sub-model
/// size, with labels in region classes.
Dataset make_region_dataset(std::span<const Clip* const> clips, RegionKind kind, const CropConfig& cfg,
                            std::size_t T, double noise, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Temporal smoothing

/// Normalised Gaussian weights of frames t - window/2 .. t + window/2 (out of
/// range frames get weight 0) for frame t of a length-n sequence.
std::vector<double> smoothing_weights(std::size_t t, std::size_t n, std::size_t window = 5, double sigma = 0.6);

/// Per-pixel, per-class Gaussian average of [T,C,H,W] probabilities over a
/// centred window, renormalised at clip edges.
Tensor temporal_smooth(const Tensor& probs, std::size_t window = 5, double sigma = 0.6);

}  // namespace ssk
