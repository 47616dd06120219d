#include "ssk/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "ssk/log.hpp"
#include "ssk/rng.hpp"

namespace ssk {
namespace fs = std::filesystem;

std::vector<const Clip*> Dataset::split(const std::string& name) const {
  std::vector<const Clip*> out;
  for (const auto& c : clips)
    if (c.split == name) out.push_back(&c);
  return out;
}

void Dataset::validate() const {
  std::map<std::string, std::string> subject_split;
  for (const auto& c : clips) {
    if (c.split != "train" && c.split != "val" && c.split != "test") {
      throw std::invalid_argument("clip " + c.id + ": unknown split '" + c.split + "'");
    }
    auto [it, inserted] = subject_split.emplace(c.subject, c.split);
    if (!inserted && it->second != c.split) {
      throw std::invalid_argument("subject " + c.subject + " appears in splits " + it->second + " and " + c.split);
    }
    if (c.frames.size() != c.masks.size()) throw std::invalid_argument("clip " + c.id + ": frame/mask count mismatch");
    for (std::size_t t = 0; t < c.frames.size(); ++t) {
      if (c.frames[t].width != c.masks[t].width || c.frames[t].height != c.masks[t].height ||
          c.frames[t].width != c.width() || c.frames[t].height != c.height()) {
        throw std::invalid_argument("clip " + c.id + ": inconsistent frame sizes");
      }
    }
  }
}

nlohmann::json to_json(const SequenceManifest& m) {
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : m.clips) {
    nlohmann::json j = {{"id", c.id},         {"subject", c.subject}, {"split", c.split},
                        {"fps", c.fps},       {"width", c.width},     {"height", c.height},
                        {"frames", c.frames}, {"masks", c.masks},     {"occluded", c.occluded}};
    if (!c.landmarks.empty()) j["landmarks"] = c.landmarks;
    clips.push_back(std::move(j));
  }
  return {{"schema_version", m.schema_version}, {"generator", m.generator}, {"clips", clips}};
}

SequenceManifest manifest_from_json(const nlohmann::json& j) {
  SequenceManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != kManifestSchemaVersion) {
    throw std::runtime_error("unsupported manifest schema version " + std::to_string(m.schema_version));
  }
  m.generator = j.value("generator", nlohmann::json::object());
  for (const auto& c : j.at("clips")) {
    ClipRecord r;
    r.id = c.at("id").get<std::string>();
    r.subject = c.at("subject").get<std::string>();
    r.split = c.at("split").get<std::string>();
    r.fps = c.value("fps", 30.0);
    r.width = c.at("width").get<std::size_t>();
    r.height = c.at("height").get<std::size_t>();
    r.frames = c.at("frames").get<std::vector<std::string>>();
    r.masks = c.at("masks").get<std::vector<std::string>>();
    r.landmarks = c.value("landmarks", std::vector<std::string>{});
    r.occluded = c.value("occluded", std::vector<std::uint8_t>{});
    if (r.frames.size() != r.masks.size()) throw std::runtime_error("manifest clip " + r.id + ": frame/mask mismatch");
    m.clips.push_back(std::move(r));
  }
  return m;
}

SequenceManifest write_dataset(const Dataset& ds, const fs::path& dir, const nlohmann::json& generator) {
  ds.validate();
  SequenceManifest m;
  m.generator = generator;
  fs::create_directories(dir);
  for (const auto& c : ds.clips) {
    ClipRecord r{c.id, c.subject, c.split, c.fps, c.width(), c.height(), {}, {}, {}, c.occluded};
    const fs::path rel = fs::path("clips") / c.id;
    fs::create_directories(dir / rel);
    for (std::size_t t = 0; t < c.length(); ++t) {
      char name[32];
      std::snprintf(name, sizeof name, "%03zu", t);
      const std::string f = (rel / ("frame_" + std::string(name) + ".png")).generic_string();
      const std::string k = (rel / ("mask_" + std::string(name) + ".png")).generic_string();
      write_png(dir / f, c.frames[t]);
      write_png(dir / k, c.masks[t]);
      r.frames.push_back(f);
      r.masks.push_back(k);
      if (t < c.landmarks.size()) {
        const std::string l = (rel / ("landmarks_" + std::string(name) + ".pts")).generic_string();
        write_pts(dir / l, c.landmarks[t]);
        r.landmarks.push_back(l);
      }
    }
    m.clips.push_back(std::move(r));
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << to_json(m).dump(2) << '\n';
  return m;
}

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot read manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  }
  const SequenceManifest m = manifest_from_json(j);
  const fs::path base = manifest_path.parent_path();
  Dataset ds;
  for (const auto& r : m.clips) {
    Clip c;
    c.id = r.id;
    c.subject = r.subject;
    c.split = r.split;
    c.fps = r.fps;
    c.occluded = r.occluded;
    for (std::size_t t = 0; t < r.frames.size(); ++t) {
      c.frames.push_back(read_png_rgb(base / r.frames[t]));
      c.masks.push_back(read_png_mask(base / r.masks[t]));
    }
    for (const auto& l : r.landmarks) c.landmarks.push_back(read_pts(base / l));
    if (c.width() != r.width || c.height() != r.height) {
      throw std::runtime_error("manifest clip " + r.id + ": resolution does not match its frames");
    }
    ds.clips.push_back(std::move(c));
  }
  ds.validate();
  return ds;
}

std::vector<Window> sequence_windows(std::span<const Clip* const> clips, std::size_t T) {
  if (T == 0) throw std::invalid_argument("sequence_windows: T must be positive");
  std::vector<Window> out;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const std::size_t n = clips[i]->length();
    if (n % T != 0) {
      log_warn("clip " + clips[i]->id + ": " + std::to_string(n % T) + " trailing frames dropped (length " +
               std::to_string(n) + " not divisible by " + std::to_string(T) + ")");
    }
    for (std::size_t s = 0; s + T <= n; s += T) out.push_back({i, s});
  }
  return out;
}

std::vector<std::vector<Window>> batch_sequences(std::span<const Clip* const> clips, std::size_t T, std::size_t N,
                                                 std::uint64_t seed, bool shuffle) {
  if (N == 0) throw std::invalid_argument("batch_sequences: N must be positive");
  auto windows = sequence_windows(clips, T);
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(windows);
  }
  std::vector<std::vector<Window>> out;
  for (std::size_t i = 0; i < windows.size(); i += N) {
    out.emplace_back(windows.begin() + std::ptrdiff_t(i), windows.begin() + std::ptrdiff_t(std::min(i + N, windows.size())));
  }
  return out;
}

Batch make_batch(std::span<const Clip* const> clips, std::span<const Window> windows, std::size_t T,
                 std::size_t width, std::size_t height) {
  Batch b;
  b.images = Tensor({windows.size() * T, 3, height, width});
  b.labels.reserve(windows.size() * T * width * height);
  std::size_t n = 0;
  for (const auto& w : windows) {
    if (w.clip >= clips.size()) throw std::out_of_range("make_batch: clip index out of range");
    const Clip& c = *clips[w.clip];
    if (w.start + T > c.length()) throw std::out_of_range("make_batch: window past the end of clip " + c.id);
    for (std::size_t t = w.start; t < w.start + T; ++t, ++n) {
      const bool same = c.frames[t].width == width && c.frames[t].height == height;
      image_to_tensor(same ? c.frames[t] : resize_bilinear(c.frames[t], width, height), b.images, n);
      const MaskFrame& m = same ? c.masks[t] : resize_nearest(c.masks[t], width, height);
      b.labels.insert(b.labels.end(), m.labels.begin(), m.labels.end());
    }
  }
  return b;
}

std::string to_string(RegionKind k) { return k == RegionKind::Eyes ? "eyes" : "mouth"; }

std::vector<std::uint8_t> region_classes(RegionKind k) {
  if (k == RegionKind::Eyes) return {kEyes};
  return {kOuterMouth, kInnerMouth};
}

MaskFrame to_region_labels(const MaskFrame& mask, RegionKind k) {
  const auto owned = region_classes(k);
  MaskFrame out(mask.width, mask.height, 0);
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    for (std::size_t c = 0; c < owned.size(); ++c)
      if (mask.labels[i] == owned[c]) out.labels[i] = std::uint8_t(c + 1);
  }
  return out;
}

void CropConfig::validate() const {
  if (width == 0 || height == 0) throw std::invalid_argument("crop size must be positive");
  if (!(margin >= 0)) throw std::invalid_argument("crop margin must be >= 0");
  if (!(noise >= 0 && noise < 1)) throw std::invalid_argument("crop noise must lie in [0, 1)");
  if (!(min_size > 0)) throw std::invalid_argument("crop min_size must be positive");
}

nlohmann::json to_json(const CropConfig& c) {
  return {{"width", c.width}, {"height", c.height}, {"margin", c.margin}, {"noise", c.noise}, {"min_size", c.min_size}};
}

CropConfig crop_config_from_json(const nlohmann::json& j, CropConfig d) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k != "width" && k != "height" && k != "margin" && k != "noise" && k != "min_size") {
      throw std::invalid_argument("unknown key '" + k + "' in crop config");
    }
  }
  d.width = j.value("width", d.width);
  d.height = j.value("height", d.height);
  d.margin = j.value("margin", d.margin);
  d.noise = j.value("noise", d.noise);
  d.min_size = j.value("min_size", d.min_size);
  d.validate();
  return d;
}

namespace {

struct Bounds {
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  bool empty() const { return x1 < x0; }
  void add(std::size_t x, std::size_t y) {
    x0 = std::min(x0, double(x));
    y0 = std::min(y0, double(y));
    x1 = std::max(x1, double(x) + 1);
    y1 = std::max(y1, double(y) + 1);
  }
};

}  // namespace

CropBox localize_crop_box(std::span<const MaskFrame> masks, RegionKind kind, const CropConfig& cfg, double noise,
                          std::uint64_t seed) {
  cfg.validate();
  if (masks.empty()) throw std::invalid_argument("localize_crop_box: empty window");
  const std::size_t W = masks[0].width, H = masks[0].height;
  const auto owned = region_classes(kind);
  Bounds region, face;
  for (const auto& m : masks) {
    if (m.width != W || m.height != H) throw std::invalid_argument("localize_crop_box: masks differ in size");
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const auto l = m.at(x, y);
        if (l != kBackground) face.add(x, y);
        if (std::find(owned.begin(), owned.end(), l) != owned.end()) region.add(x, y);
      }
  }

  CropBox box;
  box.kind = kind;
  double cx, cy, w, h;
  if (!region.empty()) {
    cx = 0.5 * (region.x0 + region.x1);
    cy = 0.5 * (region.y0 + region.y1);
    w = (region.x1 - region.x0) * (1.0 + cfg.margin);
    h = (region.y1 - region.y0) * (1.0 + cfg.margin);
  } else {
    box.fallback = true;
    if (!face.empty()) {
      const double fw = face.x1 - face.x0, fh = face.y1 - face.y0;
      cx = 0.5 * (face.x0 + face.x1);
      if (kind == RegionKind::Eyes) {
        cy = face.y0 + 0.35 * fh;
        w = 0.8 * fw;
        h = 0.25 * fh;
      } else {
        cy = face.y0 + 0.75 * fh;
        w = 0.5 * fw;
        h = 0.3 * fh;
      }
    } else {
      cx = 0.5 * double(W);
      cy = 0.5 * double(H);
      w = 0.5 * double(W);
      h = 0.5 * double(H);
    }
  }
  w = std::max(w, cfg.min_size);
  h = std::max(h, cfg.min_size);
  const double aspect = double(cfg.width) / double(cfg.height);
  if (w / h < aspect)
    w = h * aspect;
  else
    h = w / aspect;
  if (noise > 0) {
    Rng rng(seed);
    cx += rng.uniform(-noise, noise) * w;
    cy += rng.uniform(-noise, noise) * h;
    const double s = 1.0 + rng.uniform(-noise, noise);
    w *= s;
    h *= s;
  }
  const double fit = std::min({1.0, double(W) / w, double(H) / h});
  box.w = w * fit;
  box.h = h * fit;
  box.x = std::clamp(cx - 0.5 * box.w, 0.0, double(W) - box.w);
  box.y = std::clamp(cy - 0.5 * box.h, 0.0, double(H) - box.h);
  return box;
}

Dataset make_region_dataset(std::span<const Clip* const> clips, RegionKind kind, const CropConfig& cfg,
                            std::size_t T, double noise, std::uint64_t seed) {
  Dataset out;
  Rng rng(seed);
  for (const auto& w : sequence_windows(clips, T)) {
    const Clip& src = *clips[w.clip];
    const auto masks = std::span<const MaskFrame>(src.masks).subspan(w.start, T);
    const CropBox box = localize_crop_box(masks, kind, cfg, noise, rng.next_u64());
    Clip c;
    c.id = src.id + "/" + to_string(kind) + "/" + std::to_string(w.start);
    c.subject = src.subject;
    c.split = src.split;
    c.fps = src.fps;
    for (std::size_t t = w.start; t < w.start + T; ++t) {
      c.frames.push_back(crop_resize_bilinear(src.frames[t], box.x, box.y, box.w, box.h, cfg.width, cfg.height));
      c.masks.push_back(to_region_labels(
          crop_resize_nearest(src.masks[t], box.x, box.y, box.w, box.h, cfg.width, cfg.height), kind));
      if (t < src.occluded.size()) c.occluded.push_back(src.occluded[t]);
    }
    out.clips.push_back(std::move(c));
  }
  return out;
}

std::vector<double> smoothing_weights(std::size_t t, std::size_t n, std::size_t window, double sigma) {
  if (window % 2 == 0) throw std::invalid_argument("temporal_smooth: window must be odd");
  if (!(sigma > 0)) throw std::invalid_argument("temporal_smooth: sigma must be positive");
  if (t >= n) throw std::out_of_range("smoothing_weights: frame out of range");
  const long half = long(window / 2);
  std::vector<double> w(window, 0.0);
  double total = 0;
  for (long d = -half; d <= half; ++d) {
    const long s = long(t) + d;
    if (s < 0 || s >= long(n)) continue;
    w[std::size_t(d + half)] = std::exp(-double(d * d) / (2.0 * sigma * sigma));
    total += w[std::size_t(d + half)];
  }
  for (auto& v : w) v /= total;
  return w;
}

Tensor temporal_smooth(const Tensor& probs, std::size_t window, double sigma) {
  if (probs.rank() != 4 || probs.dim(0) == 0) throw std::invalid_argument("temporal_smooth: expected [T,C,H,W]");
  const std::size_t T = probs.dim(0), frame = probs.numel() / T;
  const long half = long(window / 2);
  Tensor out(probs.shape(), 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const auto w = smoothing_weights(t, T, window, sigma);
    double* dst = out.data().data() + t * frame;
    for (long d = -half; d <= half; ++d) {
      const double wd = w[std::size_t(d + half)];
      if (wd == 0.0) continue;
      const double* src = probs.data().data() + std::size_t(long(t) + d) * frame;
      for (std::size_t i = 0; i < frame; ++i) dst[i] += wd * src[i];
    }
  }
  return out;
}

}  // namespace ssk
