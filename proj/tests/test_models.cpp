#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ssk/gradcheck.hpp"
#include "ssk/losses.hpp"
#include "ssk/models.hpp"
#include "test_util.hpp"

using namespace ssk;
using ssk::test::random_tensor;

namespace {

ModelConfig desk(std::size_t C = 5) {
  ModelConfig c;
  c.num_classes = C;
  return c;
}

Shape frame_shape(const ModelGraph& m, const std::string& layer) { return m.shapes()[*m.layer_index(layer)]; }

}  // namespace

TEST(ModelShapeTest, DeskModelDownsamplesBy8) {
  ModelGraph m = ModelGraph::build(desk(), 1);
  EXPECT_EQ(frame_shape(m, "conv6"), (Shape{5, 8, 8}));
  EXPECT_EQ(frame_shape(m, "pool1"), (Shape{8, 16, 16}));
  EXPECT_EQ(frame_shape(m, "conv5_2"), (Shape{64, 8, 8}));
  EXPECT_EQ(m.shapes().back(), (Shape{5, 64, 64}));
  Rng rng(1);
  EXPECT_EQ(m.predict(random_tensor({2, 3, 64, 64}, rng)).shape(), (Shape{2, 5, 64, 64}));
}

TEST(ModelShapeTest, OutputStrideTradesStridesForDilation) {
  for (std::size_t os : {4u, 8u, 16u}) {
    ModelConfig c = desk();
    c.output_stride = os;
    ModelGraph m = ModelGraph::build(c, 1);
    EXPECT_EQ(frame_shape(m, "conv6"), (Shape{5, 64 / os, 64 / os})) << os;
    EXPECT_EQ(m.shapes().back(), (Shape{5, 64, 64}));
    const auto& l = m.layers()[*m.layer_index("conv5_2")];
    EXPECT_EQ(l.dilation, 32 / os);
  }
  ModelConfig bad = desk();
  bad.output_stride = 2;
  EXPECT_THROW(ModelGraph::build(bad, 1), std::invalid_argument);
  EXPECT_EQ(model_config_from_json({{"output_stride", 16}}).output_stride, 16u);
}

TEST(ModelShapeTest, BinaryConfigAndBadSizes) {
  ModelGraph m = ModelGraph::build(desk(2), 1);
  EXPECT_EQ(m.shapes().back()[0], 2u);
  ModelConfig bad = desk();
  bad.input_height = 72;
  EXPECT_THROW(ModelGraph::build(bad, 1), std::invalid_argument);
  EXPECT_THROW(model_config_from_json({{"input_height", 64}, {"bogus", 1}}), std::invalid_argument);
}

TEST(ModelShapeTest, FullScaleConfigMatchesReferenceGeometry) {
  std::ifstream in(std::string(SSK_SOURCE_DIR) + "/configs/table1-fullscale.json");
  ASSERT_TRUE(in.good());
  const ModelConfig cfg = model_config_from_json(nlohmann::json::parse(in));
  const auto layers = build_layer_specs(cfg);
  const auto shapes = infer_shapes(layers, cfg.in_channels, cfg.input_height, cfg.input_width, cfg.num_classes);
  auto at = [&](const std::string& name) {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].name == name) return shapes[i];
    ADD_FAILURE() << "no layer " << name;
    return Shape{};
  };
  EXPECT_EQ(at("conv1"), (Shape{64, 160, 160}));
  EXPECT_EQ(at("pool1"), (Shape{64, 79, 79}));
  EXPECT_EQ(at("conv2_3c"), (Shape{256, 79, 79}));
  EXPECT_EQ(at("conv3_4c"), (Shape{512, 40, 40}));
  EXPECT_EQ(at("conv4_6c"), (Shape{1024, 20, 20}));
  EXPECT_EQ(at("conv5_3c"), (Shape{2048, 20, 20}));
  EXPECT_EQ(at("conv6"), (Shape{5, 20, 20}));
  EXPECT_EQ(shapes.back(), (Shape{5, 320, 320}));
}

TEST(ModelForwardTest, ZeroWeightsGiveUniformSoftmax) {
  ModelGraph m = ModelGraph::build(desk(), 1);
  for (auto& p : m.params().items()) p.value.fill(0.0);
  Rng rng(2);
  const Tensor y = softmax_channels(m.predict(random_tensor({1, 3, 64, 64}, rng)));
  for (double v : y.data()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(ModelForwardTest, Deterministic) {
  ModelGraph a = ModelGraph::build(desk(), 3), b = ModelGraph::build(desk(), 3);
  Rng rng(4);
  const Tensor x = random_tensor({2, 3, 64, 64}, rng);
  EXPECT_EQ(a.predict(x), a.predict(x));
  EXPECT_EQ(a.predict(x), b.predict(x));
}

TEST(ConversionTest, CopiesNonClassifierWeightsBitExactly) {
  ModelGraph m = ModelGraph::build(desk(), 5);
  ModelGraph c = convert_to_convlstm_fcn(m, 5, true);
  std::size_t copied = 0;
  for (const auto& p : m.params().items()) {
    if (p.name.rfind("conv6/", 0) == 0) {
      EXPECT_FALSE(c.params().contains(p.name));
      continue;
    }
    EXPECT_EQ(c.params().get(p.name).value, p.value) << p.name;
    ++copied;
  }
  EXPECT_EQ(copied + 15, c.params().size());
  // hidden = C = 5, input 64 channels, peepholes 5x8x8, 1x1 kernels
  const std::size_t lstm = 4 * 5 * 64 + 4 * 5 * 5 + 3 * 5 * 64 + 4 * 5;
  const std::size_t conv6 = 5 * 64 + 5;
  EXPECT_EQ(c.params().total_elements(), m.params().total_elements() - conv6 + lstm);
  EXPECT_EQ(c.shapes().back(), m.shapes().back());
  EXPECT_EQ(c.num_classes(), m.num_classes());
  EXPECT_TRUE(c.has_convlstm());
  EXPECT_THROW(convert_to_convlstm_fcn(c, 5, true), std::invalid_argument);
}

TEST(ConversionTest, SeededCellPreservesFirstFrameRanking) {
  ModelGraph m = ModelGraph::build(desk(), 6);
  ModelGraph c = convert_to_convlstm_fcn(m, 5, true);
  Rng rng(7);
  const Tensor x = random_tensor({5, 3, 64, 64}, rng);
  const Tensor base = m.predict(x, 0, *m.layer_index("conv6") + 1);
  const Tensor conv = c.predict(x, 0, *c.layer_index("reshape2") + 1);
  ASSERT_EQ(base.shape(), conv.shape());
  // Frame 0 of the clip: h = 0.5 tanh(0.5 tanh(z)), monotone in z.
  const std::size_t HW = 16;
  for (std::size_t p = 0; p < HW; ++p) {
    for (std::size_t k = 0; k < 5; ++k) {
      const double z = base[k * HW + p];
      EXPECT_NEAR(conv[k * HW + p], 0.5 * std::tanh(0.5 * std::tanh(z)), 1e-14);
    }
  }
}

TEST(ConversionTest, OpenGatesReproduceClassifier) {
  ModelGraph m = ModelGraph::build(desk(), 8);
  ModelGraph c = convert_to_convlstm_fcn(m, 1, true);
  c.params().get("convlstm/b_i").value.fill(60.0);
  c.params().get("convlstm/b_o").value.fill(60.0);
  Rng rng(9);
  const Tensor x = random_tensor({3, 3, 64, 64}, rng);
  const Tensor base = m.predict(x, 0, *m.layer_index("conv6") + 1);
  const Tensor conv = c.predict(x, 0, *c.layer_index("reshape2") + 1);
  for (std::size_t i = 0; i < base.numel(); ++i) EXPECT_NEAR(conv[i], std::tanh(std::tanh(base[i])), 1e-12);
}

TEST(ConversionTest, RandomInitAndRejectsIndivisibleBatch) {
  ModelConfig cfg = desk();
  cfg.convlstm = true;
  cfg.convlstm_init = ConvLSTMInit::Random;
  ModelGraph c = ModelGraph::build(cfg, 2);
  EXPECT_NE(c.params().get("convlstm/W_hi").value, Tensor({5, 5, 1, 1}, 0.0));
  Rng rng(1);
  EXPECT_THROW(c.predict(random_tensor({4, 3, 64, 64}, rng)), std::invalid_argument);
  EXPECT_EQ(c.predict(random_tensor({10, 3, 64, 64}, rng)).shape(), (Shape{10, 5, 64, 64}));
}

TEST(ConversionTest, ClipsDoNotLeakAcrossBatch) {
  ModelConfig cfg = desk();
  cfg.input_height = cfg.input_width = 32;
  cfg.convlstm = true;
  cfg.time_steps = 3;
  cfg.convlstm_init = ConvLSTMInit::Random;
  ModelGraph c = ModelGraph::build(cfg, 4);
  Rng rng(3);
  const Tensor a = random_tensor({3, 3, 32, 32}, rng), b = random_tensor({3, 3, 32, 32}, rng);
  auto cat = [](const Tensor& x, const Tensor& y) {
    std::vector<double> d = x.vec();
    d.insert(d.end(), y.vec().begin(), y.vec().end());
    return Tensor({6, 3, 32, 32}, d);
  };
  const Tensor ab = c.predict(cat(a, b)), ba = c.predict(cat(b, a));
  const std::size_t half = ab.numel() / 2;
  for (std::size_t i = 0; i < half; ++i) {
    ASSERT_EQ(ab[i], ba[half + i]);
    ASSERT_EQ(ab[half + i], ba[i]);
  }
}

TEST(ModelGradientTest, EndToEndSpotChecks) {
  ModelConfig cfg;
  cfg.input_height = cfg.input_width = 16;
  cfg.widths = {3, 4, 4, 5};
  cfg.output_stride = 16;
  cfg.num_classes = 3;
  cfg.convlstm = true;
  cfg.time_steps = 2;
  cfg.convlstm_init = ConvLSTMInit::Random;
  ModelGraph m = ModelGraph::build(cfg, 11);
  Rng rng(12);
  for (auto& p : m.params().items())
    if (p.name.rfind("convlstm/", 0) == 0)
      for (auto& v : p.value.data()) v = rng.uniform(-0.8, 0.8);
  const Tensor x = random_tensor({4, 3, 16, 16}, rng);
  std::vector<std::uint8_t> labels(4 * 16 * 16);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(3));
  std::vector<Parameter*> params;
  for (auto& p : m.params().items()) params.push_back(&p);
  for (auto kind : {LossKind::CrossEntropy, LossKind::Iou, LossKind::Segmentation}) {
    LossConfig lc{kind, SegVariant::Linear, 0.0, true};
    // Segmentation stats are frozen at the starting point so that finite
    // differences see the same weights as the analytic gradient.
    Tape t0;
    const Tensor s0 = m.forward(t0, t0.constant(x)).value();
    Tape t1;
    Var r0 = channels_last(t1.constant(s0));
    const auto stats = compute_soft_region_stats(softmax_rows(r0.value()), one_hot(labels, 3));
    auto f = [&](Tape& tape, const std::vector<Var>&) {
      Var s = m.forward(tape, tape.constant(x));
      if (kind == LossKind::Segmentation) return seg_loss(channels_last(s), labels, stats, lc);
      return compute_loss(s, labels, lc);
    };
    GradCheckOptions opt;
    opt.probes_per_param = 5;
    opt.seed = 3;
    auto report = finite_diff_check(f, params, opt);
    EXPECT_TRUE(report.passed) << to_string(kind) << "\n" << to_string(report);
  }
}

TEST(ModelCheckpointTest, SaveLoadRoundTrip) {
  ModelConfig cfg = desk();
  cfg.convlstm = true;
  ModelGraph m = ModelGraph::build(cfg, 21);
  const auto path = std::filesystem::temp_directory_path() / "ssk_model_roundtrip.ssk";
  save_model(path, m, {{"note", "x"}});
  ModelGraph back = load_model(path);
  std::filesystem::remove(path);
  EXPECT_TRUE(back.has_convlstm());
  ASSERT_EQ(back.params().size(), m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i)
    EXPECT_EQ(back.params().items()[i].value, m.params().items()[i].value);
  Rng rng(5);
  const Tensor x = random_tensor({5, 3, 64, 64}, rng);
  EXPECT_EQ(back.predict(x), m.predict(x));
}
