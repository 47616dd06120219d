#pragma once

#include <cstdint>

#include <json.hpp>

#include "ssk/dataset.hpp"

namespace ssk {

/// Synthetic face-video generator. Each subject is a bundle of appearance and
/// geometry parameters; each clip animates one subject with smooth motion,
/// blinks and mouth opening, lighting drift, sensor noise, and (for some
/// clips) occluder bars on a fixed period.
struct SynthConfig {
  std::uint64_t seed = 1234;
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t frames_per_clip = 30;
  std::size_t train_clips = 60;
  std::size_t val_clips = 8;
  std::size_t test_clips = 12;
  std::size_t train_subjects = 12;
  std::size_t val_subjects = 2;
  std::size_t test_subjects = 3;
  double fps = 30.0;
  double noise_sigma = 8.0;        // per-pixel sensor noise, 8-bit units
  double occluder_prob = 0.5;      // fraction of clips with occluders
  std::size_t occluder_period = 5;
  // Occluded positions within each period, e.g. {2, 3} = mid-window frames.
  std::vector<std::size_t> occluder_phases{2, 3};

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

/// Landmarks for one frame of the canonical face at the given pose.
struct FacePose {
  double cx = 32, cy = 32;  // face centre, pixels
  double scale = 18;        // face half-width, pixels
  double angle = 0;         // radians
  double eye_open = 1;      // 0 (closed) .. 1
  double mouth_open = 0;    // 0 (closed) .. 1
};

struct FaceShape {
  double aspect = 1.25;      // half-height / half-width
  double eye_dx = 0.42;      // eye centre offset, face units
  double eye_y = -0.28;
  double eye_w = 0.22;       // eye half-width
  double eye_h = 0.10;       // eye half-height when open
  double mouth_y = 0.55;
  double mouth_w = 0.38;
  double lip_h = 0.11;
};

LandmarkFrame face_landmarks(const FaceShape& shape, const FacePose& pose);

/// Deterministic in `cfg.seed`; splits are subject-disjoint.
Dataset synth_video_generate(const SynthConfig& cfg);

}  // namespace ssk
