#include <gtest/gtest.h>

#include "ssk/cascade.hpp"
#include "ssk/metrics.hpp"
#include "ssk/rng.hpp"
#include "ssk/synth.hpp"

using namespace ssk;

namespace {

MaskFrame random_mask(std::size_t w, std::size_t h, Rng& rng) {
  MaskFrame m(w, h);
  for (auto& l : m.labels) l = std::uint8_t(rng.below(5));
  return m;
}

const Dataset& test_clips() {
  static const Dataset ds = [] {
    SynthConfig cfg;
    cfg.train_clips = 0;
    cfg.val_clips = 0;
    cfg.test_clips = 2;
    cfg.train_subjects = cfg.val_subjects = 0;
    cfg.frames_per_clip = 10;
    return synth_video_generate(cfg);
  }();
  return ds;
}

// Primary that returns ground truth for the clip.
PrimarySegmenter truth_primary(const Clip& clip) {
  return [&clip](std::span<const Image> w, std::size_t first) {
    return std::vector<MaskFrame>(clip.masks.begin() + std::ptrdiff_t(first),
                                  clip.masks.begin() + std::ptrdiff_t(first + w.size()));
  };
}

// Region segmenter that crops a reference mask sequence at the sub-model size.
RegionSegmenter echo_region(const std::vector<MaskFrame>& reference, RegionKind kind, const CropConfig& crop) {
  return [&reference, kind, crop](std::span<const Image> w, std::size_t first, const CropBox& box) {
    std::vector<MaskFrame> out;
    for (std::size_t t = 0; t < w.size(); ++t) {
      out.push_back(to_region_labels(
          crop_resize_nearest(reference[first + t], box.x, box.y, box.w, box.h, crop.width, crop.height), kind));
    }
    return out;
  };
}

double class_iou(const std::vector<MaskFrame>& gt, const std::vector<MaskFrame>& pred, std::uint8_t cls) {
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < gt.size(); ++i) cm.accumulate(gt[i], pred[i]);
  return mean_iou(cm, true).per_class[cls];
}

}  // namespace

TEST(IntegrateTest, EmptyRegionRelabelsOwnedPixelsAsSkin) {
  MaskFrame primary(16, 16, kSkin);
  primary.at(5, 5) = kEyes;
  primary.at(6, 5) = kOuterMouth;
  primary.at(14, 14) = kEyes;  // outside the box
  const CropBox box{2, 2, 8, 8, RegionKind::Eyes, false};
  const MaskFrame out = integrate_masks(primary, MaskFrame(16, 8), box, RegionKind::Eyes);
  EXPECT_EQ(out.at(5, 5), kSkin);
  EXPECT_EQ(out.at(6, 5), kOuterMouth);
  EXPECT_EQ(out.at(14, 14), kEyes);
}

TEST(IntegrateTest, ForegroundReplacesAndMapsClasses) {
  MaskFrame primary(8, 8, kBackground);
  MaskFrame region(4, 4, 0);
  region.at(0, 0) = 1;
  region.at(3, 3) = 2;
  const CropBox box{0, 0, 4, 4, RegionKind::Mouth, false};
  const MaskFrame out = integrate_masks(primary, region, box, RegionKind::Mouth);
  EXPECT_EQ(out.at(0, 0), kOuterMouth);
  EXPECT_EQ(out.at(3, 3), kInnerMouth);
  EXPECT_EQ(out.count(kBackground), 62u);
  region.at(1, 1) = 3;
  EXPECT_THROW(integrate_masks(primary, region, box, RegionKind::Mouth), std::invalid_argument);
}

TEST(IntegrateTest, RestrictionOfPrimaryIsIdempotent) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const MaskFrame primary = random_mask(40, 30, rng);
    const CropBox box{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(8, 20), rng.uniform(8, 15),
                      trial % 2 ? RegionKind::Eyes : RegionKind::Mouth, false};
    // Zoomed-in crop (more region pixels than box pixels).
    const MaskFrame region =
        to_region_labels(crop_resize_nearest(primary, box.x, box.y, box.w, box.h, 48, 32), box.kind);
    EXPECT_EQ(integrate_masks(primary, region, box, box.kind), primary) << trial;
  }
}

TEST(IntegrateTest, BoxIsClampedToTheFrame) {
  MaskFrame primary(10, 10, kEyes);
  const CropBox box{6, 6, 8, 8, RegionKind::Eyes, false};
  const MaskFrame out = integrate_masks(primary, MaskFrame(8, 8), box, RegionKind::Eyes);
  EXPECT_EQ(out.count(kSkin), 16u);
  EXPECT_EQ(out.count(kEyes), 84u);
}

TEST(IntegrateTest, MouthAfterEyesWinsOverlap) {
  const Clip& clip = test_clips().clips[0];
  std::span<const Image> frames(clip.frames.data(), 5);
  CascadeBundle bundle;
  bundle.primary = [](std::span<const Image> w, std::size_t) {
    std::vector<MaskFrame> out(w.size(), MaskFrame(64, 64, kSkin));
    for (auto& m : out)
      for (std::size_t y = 20; y < 30; ++y)
        for (std::size_t x = 20; x < 30; ++x) m.at(x, y) = y < 25 ? kEyes : kOuterMouth;
    return out;
  };
  // Both region models claim every pixel of their box.
  bundle.eyes = [&](std::span<const Image> w, std::size_t, const CropBox&) {
    return std::vector<MaskFrame>(w.size(), MaskFrame(64, 32, 1));
  };
  bundle.mouth = [&](std::span<const Image> w, std::size_t, const CropBox&) {
    return std::vector<MaskFrame>(w.size(), MaskFrame(48, 48, 1));
  };
  const auto res = run_cascade(bundle, frames);
  ASSERT_EQ(res.boxes.size(), 2u);
  const CropBox& eb = res.boxes[0];
  const CropBox& mb = res.boxes[1];
  EXPECT_EQ(eb.kind, RegionKind::Eyes);
  EXPECT_EQ(mb.kind, RegionKind::Mouth);
  // A pixel inside both boxes ends up as mouth.
  const std::size_t x = std::size_t(std::max(eb.x, mb.x) + 0.5), y = std::size_t(std::max(eb.y, mb.y) + 0.5);
  ASSERT_LT(double(x), std::min(eb.x + eb.w, mb.x + mb.w));
  ASSERT_LT(double(y), std::min(eb.y + eb.h, mb.y + mb.h));
  EXPECT_EQ(res.integrated[0].at(x, y), kOuterMouth);
  // Reversing the order would leave eyes there.
  MaskFrame rev = integrate_masks(res.primary[0], MaskFrame(48, 48, 1), mb, RegionKind::Mouth);
  rev = integrate_masks(rev, MaskFrame(64, 32, 1), eb, RegionKind::Eyes);
  EXPECT_EQ(rev.at(x, y), kEyes);
}

TEST(CascadeTest, BackgroundSubModelsEraseRegions) {
  const Clip& clip = test_clips().clips[0];
  CascadeBundle bundle;
  bundle.primary = truth_primary(clip);
  bundle.eyes = [](std::span<const Image> w, std::size_t, const CropBox&) {
    return std::vector<MaskFrame>(w.size(), MaskFrame(64, 32, 0));
  };
  bundle.mouth = [](std::span<const Image> w, std::size_t, const CropBox&) {
    return std::vector<MaskFrame>(w.size(), MaskFrame(48, 48, 0));
  };
  const auto res = run_cascade(bundle, clip.frames);
  ASSERT_EQ(res.integrated.size(), clip.length());
  for (std::size_t t = 0; t < clip.length(); ++t) {
    EXPECT_EQ(res.primary[t], clip.masks[t]);
    EXPECT_EQ(res.integrated[t].count(kEyes), 0u);
    EXPECT_EQ(res.integrated[t].count(kOuterMouth), 0u);
    EXPECT_EQ(res.integrated[t].count(kInnerMouth), 0u);
    EXPECT_EQ(res.integrated[t].count(kBackground), clip.masks[t].count(kBackground));
  }
}

TEST(CascadeTest, IdentityExtractorsReproducePrimary) {
  for (const Clip& clip : test_clips().clips) {
    CascadeBundle bundle;
    bundle.primary = truth_primary(clip);
    bundle.eyes = echo_region(clip.masks, RegionKind::Eyes, bundle.config.eyes);
    bundle.mouth = echo_region(clip.masks, RegionKind::Mouth, bundle.config.mouth);
    const auto res = run_cascade(bundle, clip.frames);
    for (std::size_t t = 0; t < clip.length(); ++t) EXPECT_EQ(res.integrated[t], res.primary[t]) << t;
  }
}

TEST(CascadeTest, OracleSubModelsDoNotHurtRegions) {
  const Clip& clip = test_clips().clips[1];
  // Degraded primary: eyes and inner mouth smeared to a coarse grid.
  std::vector<MaskFrame> coarse;
  for (const auto& m : clip.masks) coarse.push_back(resize_nearest(resize_nearest(m, 8, 8), 64, 64));
  CascadeBundle bundle;
  bundle.primary = [&](std::span<const Image> w, std::size_t first) {
    return std::vector<MaskFrame>(coarse.begin() + std::ptrdiff_t(first), coarse.begin() + std::ptrdiff_t(first + w.size()));
  };
  bundle.eyes = echo_region(clip.masks, RegionKind::Eyes, bundle.config.eyes);
  bundle.mouth = echo_region(clip.masks, RegionKind::Mouth, bundle.config.mouth);
  const auto res = run_cascade(bundle, clip.frames);
  for (std::uint8_t c : {kEyes, kOuterMouth}) {
    EXPECT_GE(class_iou(clip.masks, res.integrated, c), class_iou(clip.masks, res.primary, c)) << int(c);
  }
  EXPECT_GT(class_iou(clip.masks, res.integrated, kEyes), class_iou(clip.masks, res.primary, kEyes) + 0.05);
}

TEST(CascadeTest, MissingSubModelsDegradeToPrimary) {
  const Clip& clip = test_clips().clips[0];
  CascadeBundle bundle;
  bundle.primary = truth_primary(clip);
  const auto res = run_cascade(bundle, clip.frames);
  EXPECT_EQ(res.integrated, res.primary);
  EXPECT_TRUE(res.boxes.empty());
  EXPECT_THROW(run_cascade(bundle, std::span<const Image>(clip.frames.data(), 3)), std::invalid_argument);
  CascadeBundle none;
  EXPECT_THROW(run_cascade(none, clip.frames), std::invalid_argument);
}

TEST(CascadeTest, RealModelsAreDeterministicAndWellFormed) {
  ModelConfig pc;
  pc.widths = {4, 4, 4, 4};
  pc.convlstm = true;
  ModelGraph primary = ModelGraph::build(pc, 1);
  ModelConfig ec = pc;
  ec.num_classes = 2;
  ec.input_width = 64;
  ec.input_height = 32;
  ModelGraph eyes = ModelGraph::build(ec, 2);
  ModelConfig mc = pc;
  mc.num_classes = 3;
  mc.input_width = mc.input_height = 48;
  ModelGraph mouth = ModelGraph::build(mc, 3);

  CascadeBundle bundle;
  bundle.primary = model_segmenter(primary);
  bundle.eyes = region_model_segmenter(eyes, RegionKind::Eyes, bundle.config.eyes);
  bundle.mouth = region_model_segmenter(mouth, RegionKind::Mouth, bundle.config.mouth);
  const Clip& clip = test_clips().clips[0];
  const auto a = run_cascade(bundle, clip.frames);
  const auto b = run_cascade(bundle, clip.frames);
  EXPECT_EQ(a.integrated, b.integrated);
  for (const auto& m : a.integrated) {
    EXPECT_EQ(m.width, 64u);
    EXPECT_EQ(m.height, 64u);
    for (auto l : m.labels) EXPECT_LT(l, kNumFaceClasses);
  }
  EXPECT_THROW(region_model_segmenter(mouth, RegionKind::Eyes, bundle.config.eyes), std::invalid_argument);
  EXPECT_THROW(model_segmenter(eyes), std::invalid_argument);
}

TEST(CascadeTest, PredictProbsResizesAndNormalises) {
  ModelConfig pc;
  pc.widths = {4, 4, 4, 4};
  pc.input_width = pc.input_height = 32;
  ModelGraph m = ModelGraph::build(pc, 5);
  const Clip& clip = test_clips().clips[0];
  const Tensor p = predict_probs(m, std::span<const Image>(clip.frames.data(), 2));
  EXPECT_EQ(p.shape(), (Shape{2, 5, 32, 32}));
  for (std::size_t px = 0; px < 32 * 32; ++px) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += p[c * 1024 + px];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  const auto masks = probs_to_masks(p, 64, 64);
  EXPECT_EQ(masks.size(), 2u);
  EXPECT_EQ(masks[0].width, 64u);
}

TEST(CascadeConfigTest, JsonRoundTrip) {
  CascadeConfig c;
  c.eyes.width = 32;
  const auto back = cascade_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(cascade_config_from_json({{"nose", 1}}), std::invalid_argument);
  EXPECT_THROW(cascade_config_from_json({{"eyes", {{"margin", -1.0}}}}), std::invalid_argument);
}
