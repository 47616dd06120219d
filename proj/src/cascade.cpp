#include "ssk/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ssk/log.hpp"
#include "ssk/ops.hpp"

namespace ssk {

Tensor predict_probs(ModelGraph& model, std::span<const Image> frames) {
  if (frames.empty()) throw std::invalid_argument("predict_probs: no frames");
  const auto& cfg = model.config();
  if (frames.size() % model.time_steps() != 0) {
    throw std::invalid_argument("predict_probs: frame count must be a multiple of the model's time steps");
  }
  Tensor x({frames.size(), cfg.in_channels, cfg.input_height, cfg.input_width});
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const Image& f = frames[t];
    const bool same = f.width == cfg.input_width && f.height == cfg.input_height;
    image_to_tensor(same ? f : resize_bilinear(f, cfg.input_width, cfg.input_height), x, t);
  }
  return softmax_channels(model.predict(x));
}

std::vector<MaskFrame> probs_to_masks(const Tensor& probs, std::size_t width, std::size_t height) {
  if (probs.rank() != 4) throw std::invalid_argument("probs_to_masks: expected [T,C,H,W]");
  const std::size_t T = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
  if (C > kNumFaceClasses) throw std::invalid_argument("probs_to_masks: too many classes");
  std::vector<MaskFrame> out;
  for (std::size_t t = 0; t < T; ++t) {
    MaskFrame m(W, H);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
          if (probs.at(t, c, y, x) > probs.at(t, best, y, x)) best = c;
        m.at(x, y) = std::uint8_t(best);
      }
    out.push_back(W == width && H == height ? std::move(m) : resize_nearest(m, width, height));
  }
  return out;
}

std::vector<MaskFrame> segment_window(ModelGraph& model, std::span<const Image> frames) {
  return probs_to_masks(predict_probs(model, frames), frames[0].width, frames[0].height);
}

void CascadeConfig::validate() const {
  eyes.validate();
  mouth.validate();
  if (window == 0) throw std::invalid_argument("cascade window must be positive");
}

nlohmann::json to_json(const CascadeConfig& c) {
  return {{"eyes", to_json(c.eyes)}, {"mouth", to_json(c.mouth)}, {"window", c.window}};
}

CascadeConfig cascade_config_from_json(const nlohmann::json& j) {
  CascadeConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "eyes" && it.key() != "mouth" && it.key() != "window") {
      throw std::invalid_argument("unknown key '" + it.key() + "' in cascade config");
    }
  }
  if (j.contains("eyes")) c.eyes = crop_config_from_json(j["eyes"], c.eyes);
  if (j.contains("mouth")) c.mouth = crop_config_from_json(j["mouth"], c.mouth);
  c.window = j.value("window", c.window);
  c.validate();
  return c;
}

MaskFrame integrate_masks(const MaskFrame& primary, const MaskFrame& region_pred, const CropBox& box,
                          RegionKind kind) {
  if (region_pred.width == 0 || region_pred.height == 0) throw std::invalid_argument("integrate_masks: empty region");
  if (!(box.w > 0 && box.h > 0)) throw std::invalid_argument("integrate_masks: empty box");
  const auto owned = region_classes(kind);
  MaskFrame out = primary;
  const long x0 = std::max(0L, long(std::ceil(box.x - 0.5)));
  const long y0 = std::max(0L, long(std::ceil(box.y - 0.5)));
  const long x1 = std::min(long(primary.width), long(std::ceil(box.x + box.w - 0.5)));
  const long y1 = std::min(long(primary.height), long(std::ceil(box.y + box.h - 0.5)));
  for (long y = y0; y < y1; ++y) {
    // Nearest region pixel for this frame pixel's centre.
    const double ry = (double(y) + 0.5 - box.y) / box.h * double(region_pred.height);
    const std::size_t iy = std::size_t(std::clamp(std::floor(ry), 0.0, double(region_pred.height - 1)));
    for (long x = x0; x < x1; ++x) {
      const double rx = (double(x) + 0.5 - box.x) / box.w * double(region_pred.width);
      const std::size_t ix = std::size_t(std::clamp(std::floor(rx), 0.0, double(region_pred.width - 1)));
      const std::uint8_t r = region_pred.at(ix, iy);
      std::uint8_t& dst = out.at(std::size_t(x), std::size_t(y));
      if (r > 0) {
        if (r > owned.size()) throw std::invalid_argument("integrate_masks: region class out of range");
        dst = owned[r - 1];
      } else if (std::find(owned.begin(), owned.end(), dst) != owned.end()) {
        dst = kSkin;
      }
    }
  }
  return out;
}

std::vector<MaskFrame> segment_region(ModelGraph& model, std::span<const Image> frames, const CropBox& box,
                                      const CropConfig& crop) {
  std::vector<Image> crops;
  for (const auto& f : frames) crops.push_back(crop_resize_bilinear(f, box.x, box.y, box.w, box.h, crop.width, crop.height));
  return probs_to_masks(predict_probs(model, crops), crop.width, crop.height);
}

PrimarySegmenter model_segmenter(ModelGraph& model) {
  if (model.num_classes() != kNumFaceClasses) throw std::invalid_argument("primary model must predict 5 classes");
  return [&model](std::span<const Image> window, std::size_t) { return segment_window(model, window); };
}

RegionSegmenter region_model_segmenter(ModelGraph& model, RegionKind kind, const CropConfig& crop) {
  const std::size_t expected = region_classes(kind).size() + 1;
  if (model.num_classes() != expected) {
    throw std::invalid_argument(to_string(kind) + " model must predict " + std::to_string(expected) + " classes");
  }
  return [&model, crop](std::span<const Image> window, std::size_t, const CropBox& box) {
    return segment_region(model, window, box, crop);
  };
}

CascadeResult run_cascade(CascadeBundle& bundle, std::span<const Image> frames) {
  if (!bundle.primary) throw std::invalid_argument("run_cascade: primary segmenter required");
  bundle.config.validate();
  const std::size_t T = bundle.config.window;
  if (frames.empty() || frames.size() % T != 0) {
    throw std::invalid_argument("run_cascade: clip length must be a positive multiple of the window");
  }
  if (!bundle.eyes) log_info("run_cascade: no eye model; eyes keep the primary prediction");
  if (!bundle.mouth) log_info("run_cascade: no mouth model; mouth keeps the primary prediction");

  CascadeResult res;
  for (std::size_t s = 0; s < frames.size(); s += T) {
    const auto window = frames.subspan(s, T);
    auto primary = bundle.primary(window, s);
    if (primary.size() != T) throw std::runtime_error("run_cascade: primary segmenter returned the wrong frame count");
    auto integrated = primary;
    // Eyes first, then mouth, so the mouth wins where boxes overlap.
    const std::pair<const RegionSegmenter*, RegionKind> stages[] = {{&bundle.eyes, RegionKind::Eyes},
                                                                    {&bundle.mouth, RegionKind::Mouth}};
    for (const auto& [segment, kind] : stages) {
      if (!*segment) continue;
      const CropConfig& crop = kind == RegionKind::Eyes ? bundle.config.eyes : bundle.config.mouth;
      const CropBox box = localize_crop_box(primary, kind, crop, 0.0, 0);
      res.boxes.push_back(box);
      const auto region = (*segment)(window, s, box);
      if (region.size() != T) throw std::runtime_error("run_cascade: region segmenter returned the wrong frame count");
      for (std::size_t t = 0; t < T; ++t) integrated[t] = integrate_masks(integrated[t], region[t], box, kind);
    }
    res.primary.insert(res.primary.end(), primary.begin(), primary.end());
    res.integrated.insert(res.integrated.end(), integrated.begin(), integrated.end());
  }
  return res;
}

}  // namespace ssk
