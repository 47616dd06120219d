#include "ssk/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ssk/rng.hpp"

namespace ssk {
namespace {

constexpr double kPi = std::numbers::pi;

using Rgb = std::array<double, 3>;

struct Subject {
  std::string id;
  FaceShape shape;
  double scale = 0.32;  // face half-width as a fraction of frame width
  Rgb skin, lips, eyes, inner;
  double talkativeness = 0.7;
  double blink_rate = 0.04;
};

Subject make_subject(std::size_t index, Rng rng) {
  Subject s;
  s.id = (index < 10 ? "s0" : "s") + std::to_string(index);
  s.shape.aspect = rng.uniform(1.15, 1.35);
  s.shape.eye_dx = rng.uniform(0.38, 0.46);
  s.shape.eye_y = rng.uniform(-0.32, -0.24);
  s.shape.eye_w = rng.uniform(0.19, 0.25);
  s.shape.eye_h = rng.uniform(0.085, 0.12);
  s.shape.mouth_y = rng.uniform(0.5, 0.6);
  s.shape.mouth_w = rng.uniform(0.32, 0.42);
  s.shape.lip_h = rng.uniform(0.09, 0.13);
  s.scale = rng.uniform(0.29, 0.35);
  const double r = rng.uniform(130, 225);
  const double g = r * rng.uniform(0.62, 0.84);
  const double b = g * rng.uniform(0.72, 0.95);
  s.skin = {r, g, b};
  s.lips = {r * rng.uniform(0.8, 0.95), g * rng.uniform(0.55, 0.72), b * rng.uniform(0.6, 0.78)};
  const double e = rng.uniform(25, 75);
  s.eyes = {e + rng.uniform(-10, 10), e + rng.uniform(-10, 10), e + rng.uniform(-10, 10)};
  s.inner = {rng.uniform(45, 85), rng.uniform(10, 30), rng.uniform(15, 35)};
  s.talkativeness = rng.uniform(0.5, 0.9);
  s.blink_rate = rng.uniform(0.02, 0.06);
  return s;
}

Point transform(const FacePose& p, double u, double v) {
  const double c = std::cos(p.angle), s = std::sin(p.angle);
  return {p.cx + p.scale * (u * c - v * s), p.cy + p.scale * (u * s + v * c)};
}

void blur3(std::vector<double>& buf, std::size_t w, std::size_t h) {
  // Separable [1 2 1] / 4 with clamped borders.
  std::vector<double> tmp(buf.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t xl = x ? x - 1 : 0, xr = std::min(x + 1, w - 1);
        tmp[(y * w + x) * 3 + c] =
            0.25 * buf[(y * w + xl) * 3 + c] + 0.5 * buf[(y * w + x) * 3 + c] + 0.25 * buf[(y * w + xr) * 3 + c];
      }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t yu = y ? y - 1 : 0, yd = std::min(y + 1, h - 1);
        buf[(y * w + x) * 3 + c] =
            0.25 * tmp[(yu * w + x) * 3 + c] + 0.5 * tmp[(y * w + x) * 3 + c] + 0.25 * tmp[(yd * w + x) * 3 + c];
      }
}

struct Occluder {
  bool active = false;
  int target = 0;  // 0 eyes band, 1 mouth band, 2 vertical bar
  Rgb color{};
  double thickness = 0.4;  // face units
};

Clip render_clip(const SynthConfig& cfg, const Subject& subj, const std::string& id, const std::string& split,
                 Rng rng) {
  const double W = double(cfg.width), H = double(cfg.height);
  // Separate streams keep masks independent of occluders and noise.
  Rng occ_rng = rng.fork(1);
  Rng noise_rng = rng.fork(2);
  Clip clip;
  clip.id = id;
  clip.subject = subj.id;
  clip.split = split;
  clip.fps = cfg.fps;

  // Motion.
  const double s0 = subj.scale * W * rng.uniform(0.92, 1.08);
  const double cx0 = W * 0.5 + rng.uniform(-0.07, 0.07) * W, cy0 = H * 0.5 + rng.uniform(-0.05, 0.05) * H;
  const double ax = rng.uniform(1, 4), ay = rng.uniform(1, 3);
  const double wx = rng.uniform(0.08, 0.25), wy = rng.uniform(0.08, 0.25);
  const double px = rng.uniform(0, 2 * kPi), py = rng.uniform(0, 2 * kPi);
  const double th0 = rng.uniform(-0.2, 0.2), tha = rng.uniform(0, 0.12), thw = rng.uniform(0.05, 0.2);
  const double thp = rng.uniform(0, 2 * kPi);
  const double sa = rng.uniform(0, 0.05), sw = rng.uniform(0.05, 0.15), sp = rng.uniform(0, 2 * kPi);
  const bool talking = rng.uniform() < subj.talkativeness;
  const double mouth_amp = rng.uniform(0.5, 1.0), mouth_w = rng.uniform(0.3, 0.7), mouth_p = rng.uniform(0, 2 * kPi);

  // Appearance.
  Rgb bg_a, bg_b;
  for (auto& c : bg_a) c = rng.uniform(20, 235);
  for (auto& c : bg_b) c = rng.uniform(20, 235);
  const double bg_dir = rng.uniform(0, 2 * kPi);
  std::array<std::array<double, 4>, 3> waves;  // fx, fy, phase, amplitude
  for (auto& wv : waves) wv = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0, 2 * kPi), rng.uniform(4, 14)};
  const double light_gain = rng.uniform(0.0, 0.25), light_dir0 = rng.uniform(0, 2 * kPi);
  const double light_rate = rng.uniform(-0.05, 0.05);

  Occluder occ;
  occ.active = rng.uniform() < cfg.occluder_prob;
  occ.target = int(rng.below(3));
  if (rng.uniform() < 0.5) {
    occ.color = {subj.skin[0] * rng.uniform(0.85, 1.1), subj.skin[1] * rng.uniform(0.85, 1.1),
                 subj.skin[2] * rng.uniform(0.85, 1.1)};
  } else {
    for (auto& c : occ.color) c = rng.uniform(30, 220);
  }
  occ.thickness = rng.uniform(0.35, 0.5);

  std::size_t blink_left = 0;
  for (std::size_t t = 0; t < cfg.frames_per_clip; ++t) {
    const double tt = double(t);
    FacePose pose;
    pose.cx = cx0 + ax * std::sin(wx * tt + px);
    pose.cy = cy0 + ay * std::sin(wy * tt + py);
    pose.angle = th0 + tha * std::sin(thw * tt + thp);
    pose.scale = s0 * (1.0 + sa * std::sin(sw * tt + sp));
    if (blink_left == 0 && rng.uniform() < subj.blink_rate) blink_left = 3;
    pose.eye_open = blink_left == 3 ? 0.55 : blink_left == 2 ? 0.2 : blink_left == 1 ? 0.6 : 1.0;
    if (blink_left) --blink_left;
    pose.mouth_open = talking ? mouth_amp * std::max(0.0, std::sin(mouth_w * tt + mouth_p)) : 0.0;

    const LandmarkFrame lm = face_landmarks(subj.shape, pose);
    MaskFrame mask = landmarks_to_mask(lm, cfg.width, cfg.height);

    std::vector<double> buf(cfg.width * cfg.height * 3);
    const double light_dir = light_dir0 + light_rate * tt;
    const double lc = std::cos(light_dir), ls = std::sin(light_dir);
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const double fx = double(x) + 0.5, fy = double(y) + 0.5;
        Rgb col;
        const auto cls = mask.at(x, y);
        if (cls == kBackground) {
          const double g = 0.5 + 0.5 * std::sin(std::cos(bg_dir) * fx / W * kPi + std::sin(bg_dir) * fy / H * kPi);
          double tex = 0;
          for (const auto& wv : waves) tex += wv[3] * std::sin(wv[0] * fx + wv[1] * fy + wv[2]);
          for (std::size_t c = 0; c < 3; ++c) col[c] = bg_a[c] * (1 - g) + bg_b[c] * g + tex;
        } else {
          const Rgb& base = cls == kSkin ? subj.skin : cls == kEyes ? subj.eyes : cls == kOuterMouth ? subj.lips : subj.inner;
          const double shade =
              1.0 + light_gain * ((fx - pose.cx) * lc + (fy - pose.cy) * ls) / (1.5 * pose.scale);
          for (std::size_t c = 0; c < 3; ++c) col[c] = base[c] * shade;
        }
        for (std::size_t c = 0; c < 3; ++c) buf[(y * cfg.width + x) * 3 + c] = col[c];
      }
    }

    bool occluded = false;
    if (occ.active && !cfg.occluder_phases.empty()) {
      const std::size_t phase = t % cfg.occluder_period;
      occluded = std::find(cfg.occluder_phases.begin(), cfg.occluder_phases.end(), phase) != cfg.occluder_phases.end();
    }
    if (occluded) {
      // Bar in face coordinates: a band across the eyes or the mouth, or a
      // vertical bar over one side of the face.
      const double jitter = occ_rng.uniform(-0.08, 0.08);
      const double c = std::cos(pose.angle), s = std::sin(pose.angle);
      for (std::size_t y = 0; y < cfg.height; ++y)
        for (std::size_t x = 0; x < cfg.width; ++x) {
          const double dx = double(x) + 0.5 - pose.cx, dy = double(y) + 0.5 - pose.cy;
          const double u = (dx * c + dy * s) / pose.scale, v = (-dx * s + dy * c) / pose.scale;
          bool hit = false;
          if (occ.target == 0) hit = std::abs(v - subj.shape.eye_y - jitter) < occ.thickness * 0.5 && std::abs(u) < 1.3;
          if (occ.target == 1) hit = std::abs(v - subj.shape.mouth_y - jitter) < occ.thickness * 0.5 && std::abs(u) < 1.3;
          if (occ.target == 2) hit = std::abs(u + 0.35 + jitter) < occ.thickness * 0.6 && v > -0.8 && v < 1.2;
          if (hit)
            for (std::size_t k = 0; k < 3; ++k) buf[(y * cfg.width + x) * 3 + k] = occ.color[k];
        }
    }

    blur3(buf, cfg.width, cfg.height);
    Image img(cfg.width, cfg.height);
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const double v = buf[i] + cfg.noise_sigma * noise_rng.normal();
      img.rgb[i] = std::uint8_t(std::clamp(std::lround(v), 0L, 255L));
    }
    clip.frames.push_back(std::move(img));
    clip.masks.push_back(std::move(mask));
    clip.landmarks.push_back(lm);
    clip.occluded.push_back(occluded ? 1 : 0);
  }
  return clip;
}

}  // namespace

void SynthConfig::validate() const {
  if (width < 32 || height < 32) throw std::invalid_argument("synth: frame size must be at least 32x32");
  if (frames_per_clip == 0) throw std::invalid_argument("synth: frames_per_clip must be positive");
  if ((train_clips && !train_subjects) || (val_clips && !val_subjects) || (test_clips && !test_subjects)) {
    throw std::invalid_argument("synth: every non-empty split needs at least one subject");
  }
  if (!(noise_sigma >= 0)) throw std::invalid_argument("synth: noise_sigma must be >= 0");
  if (!(occluder_prob >= 0 && occluder_prob <= 1)) throw std::invalid_argument("synth: occluder_prob must lie in [0, 1]");
  if (occluder_period == 0) throw std::invalid_argument("synth: occluder_period must be positive");
}

nlohmann::json to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"width", c.width},
          {"height", c.height},
          {"frames_per_clip", c.frames_per_clip},
          {"train_clips", c.train_clips},
          {"val_clips", c.val_clips},
          {"test_clips", c.test_clips},
          {"train_subjects", c.train_subjects},
          {"val_subjects", c.val_subjects},
          {"test_subjects", c.test_subjects},
          {"fps", c.fps},
          {"noise_sigma", c.noise_sigma},
          {"occluder_prob", c.occluder_prob},
          {"occluder_period", c.occluder_period},
          {"occluder_phases", c.occluder_phases}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  const auto known = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw std::invalid_argument("unknown key '" + it.key() + "' in data config");
  }
  c.seed = j.value("seed", c.seed);
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  c.frames_per_clip = j.value("frames_per_clip", c.frames_per_clip);
  c.train_clips = j.value("train_clips", c.train_clips);
  c.val_clips = j.value("val_clips", c.val_clips);
  c.test_clips = j.value("test_clips", c.test_clips);
  c.train_subjects = j.value("train_subjects", c.train_subjects);
  c.val_subjects = j.value("val_subjects", c.val_subjects);
  c.test_subjects = j.value("test_subjects", c.test_subjects);
  c.fps = j.value("fps", c.fps);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.occluder_prob = j.value("occluder_prob", c.occluder_prob);
  c.occluder_period = j.value("occluder_period", c.occluder_period);
  c.occluder_phases = j.value("occluder_phases", c.occluder_phases);
  c.validate();
  return c;
}

LandmarkFrame face_landmarks(const FaceShape& f, const FacePose& p) {
  LandmarkFrame lm;
  // Jaw: lower half-ellipse from the left temple round the chin.
  for (std::size_t k = 0; k <= 16; ++k) {
    const double phi = kPi * double(k) / 16.0;
    lm[k] = transform(p, -std::cos(phi), -0.15 + 0.95 * f.aspect * std::sin(phi));
  }
  // Brows, arched.
  for (std::size_t j = 0; j < 5; ++j) {
    const double a = double(j) / 4.0;
    const double v = -0.5 - 0.12 * std::sin(kPi * a);
    lm[17 + j] = transform(p, -0.92 + 0.77 * a, v);
    lm[22 + j] = transform(p, 0.15 + 0.77 * a, v);
  }
  // Nose bridge and base (not painted).
  for (std::size_t j = 0; j < 4; ++j) lm[27 + j] = transform(p, 0, -0.35 + 0.17 * double(j));
  for (std::size_t j = 0; j < 5; ++j) lm[31 + j] = transform(p, -0.14 + 0.07 * double(j), 0.25);
  // Eyes: corner, two upper-lid points, corner, two lower-lid points.
  const double eh = f.eye_h * std::clamp(p.eye_open, 0.1, 1.0);
  const std::array<double, 6> eye_angles{kPi, 2 * kPi / 3, kPi / 3, 0, -kPi / 3, -2 * kPi / 3};
  for (std::size_t j = 0; j < 6; ++j) {
    const double u = f.eye_w * std::cos(eye_angles[j]), v = f.eye_y - eh * std::sin(eye_angles[j]);
    lm[36 + j] = transform(p, -f.eye_dx + u, v);
    lm[42 + j] = transform(p, f.eye_dx + u, v);
  }
  // Outer lips: left corner, upper lip (49-53), right corner, lower lip (55-59).
  const double open = std::clamp(p.mouth_open, 0.0, 1.0);
  for (std::size_t j = 0; j < 12; ++j) {
    const double a = kPi - 2 * kPi * double(j) / 12.0;  // pi .. -5pi/6
    const double sa = std::sin(a);
    const double v = sa >= 0 ? f.mouth_y - f.lip_h * sa : f.mouth_y - (f.lip_h + 0.14 * open) * sa;
    lm[48 + j] = transform(p, f.mouth_w * std::cos(a), v);
  }
  // Inner lips: collapse onto one line when the mouth is closed.
  for (std::size_t j = 0; j < 8; ++j) {
    const double a = kPi - 2 * kPi * double(j) / 8.0;
    const double sa = std::sin(a);
    const double v = sa >= 0 ? f.mouth_y - 0.05 * open * sa : f.mouth_y - 0.16 * open * sa;
    lm[60 + j] = transform(p, 0.62 * f.mouth_w * std::cos(a), v);
  }
  return lm;
}

Dataset synth_video_generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng master(cfg.seed);
  const std::size_t n_subjects = cfg.train_subjects + cfg.val_subjects + cfg.test_subjects;
  std::vector<Subject> subjects;
  for (std::size_t i = 0; i < n_subjects; ++i) subjects.push_back(make_subject(i, master.fork(1000 + i)));

  Dataset ds;
  std::size_t global = 0;
  auto add_split = [&](const std::string& split, std::size_t clips, std::size_t first_subject, std::size_t n_subj) {
    for (std::size_t i = 0; i < clips; ++i, ++global) {
      char id[48];
      std::snprintf(id, sizeof id, "%s_%03zu", split.c_str(), i);
      const Subject& s = subjects[first_subject + i % n_subj];
      ds.clips.push_back(render_clip(cfg, s, id, split, master.fork(100000 + global)));
    }
  };
  add_split("train", cfg.train_clips, 0, cfg.train_subjects);
  add_split("val", cfg.val_clips, cfg.train_subjects, cfg.val_subjects);
  add_split("test", cfg.test_clips, cfg.train_subjects + cfg.val_subjects, cfg.test_subjects);
  return ds;
}

}  // namespace ssk
