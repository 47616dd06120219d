#include <gtest/gtest.h>

#include <cmath>

#include "ssk/checkpoint.hpp"
#include "ssk/losses.hpp"
#include "ssk/models.hpp"
#include "ssk/optim.hpp"
#include "test_util.hpp"

using namespace ssk;

namespace {

ParameterStore single(double value, double grad, const std::string& group = "convlstm") {
  ParameterStore s;
  auto& p = s.add("w", group, Tensor({1}, value));
  p.grad = Tensor({1}, grad);
  return s;
}

OptimizerConfig no_decay(OptimizerKind kind) {
  OptimizerConfig c;
  c.kind = kind;
  c.decay = false;
  return c;
}

}  // namespace

TEST(AdamTest, FirstStepMovesByLearningRate) {
  auto s = single(0.0, 1.0);
  Optimizer opt(no_decay(OptimizerKind::Adam));
  opt.step(s);
  // m_hat = 1, v_hat = 1: delta = -lr / (1 + eps)
  EXPECT_NEAR(s.get("w").value[0], -0.001 / (1.0 + 1e-8), 1e-18);
}

TEST(AdamTest, ZeroGradientAndFrozenGroups) {
  auto s = single(0.5, 0.0);
  Optimizer opt(no_decay(OptimizerKind::Adam));
  opt.step(s);
  EXPECT_EQ(s.get("w").value[0], 0.5);

  auto f = single(0.5, 3.0, "conv1");
  auto cfg = no_decay(OptimizerKind::Adam);
  cfg.freeze_others = true;
  Optimizer frozen(cfg);
  frozen.step(f);
  EXPECT_EQ(f.get("w").value[0], 0.5);
}

TEST(AdamTest, MissingGradientRejected) {
  ParameterStore s;
  s.add("w", "conv1", Tensor({1}, 0.0));
  Optimizer opt(no_decay(OptimizerKind::Adam));
  EXPECT_THROW(opt.step(s), std::invalid_argument);
  auto cfg = no_decay(OptimizerKind::Adam);
  cfg.frozen_groups = {"conv1"};
  Optimizer frozen(cfg);
  EXPECT_NO_THROW(frozen.step(s));
}

TEST(RmspropTest, FirstStepAndFixedPoint) {
  auto s = single(0.0, 1.0);
  Optimizer opt(no_decay(OptimizerKind::RMSprop));
  opt.step(s);
  EXPECT_NEAR(s.get("w").value[0], -0.001 / (std::sqrt(0.1) + 1e-8), 1e-15);
  EXPECT_NEAR(s.get("w").value[0], -3.162e-3, 1e-6);

  auto z = single(0.25, 0.0);
  Optimizer opt2(no_decay(OptimizerKind::RMSprop));
  opt2.step(z);
  EXPECT_EQ(z.get("w").value[0], 0.25);

  // Constant gradient: v -> g^2, so each step approaches -lr.
  auto c = single(0.0, 2.0);
  Optimizer opt3(no_decay(OptimizerKind::RMSprop));
  double prev = 0;
  for (int i = 0; i < 300; ++i) {
    prev = c.get("w").value[0];
    opt3.step(c);
  }
  EXPECT_NEAR(c.get("w").value[0] - prev, -0.001, 1e-9);
}

TEST(LearningRateTest, LinearDecayAndGroups) {
  OptimizerConfig cfg;
  cfg.total_steps = 100;
  cfg.gamma = 0.05;
  EXPECT_DOUBLE_EQ(group_lr("convlstm", 0, cfg), 0.001);
  EXPECT_DOUBLE_EQ(group_lr("convlstm", 100, cfg), 0.0);
  auto lr = lr_at(50, cfg, {"convlstm", "conv1"});
  EXPECT_NEAR(lr["convlstm"], 0.0005, 1e-18);
  EXPECT_NEAR(lr["conv1"], 0.000025, 1e-18);
  EXPECT_EQ(group_lr("convlstm", 150, cfg), 0.0);
  cfg.freeze_others = true;
  EXPECT_EQ(group_lr("conv1", 0, cfg), 0.0);
  EXPECT_DOUBLE_EQ(group_lr("convlstm", 0, cfg), 0.001);
}

TEST(OptimConfigTest, JsonRoundTripAndValidation) {
  auto c = optimizer_config_from_json(
      {{"kind", "rmsprop"}, {"gamma", 0.02}, {"total_steps", 10}, {"freeze", {"others", "conv1"}}});
  EXPECT_EQ(c.kind, OptimizerKind::RMSprop);
  EXPECT_TRUE(c.freeze_others);
  EXPECT_TRUE(c.frozen("conv1"));
  auto back = optimizer_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(optimizer_config_from_json({{"lr", 1}}), std::invalid_argument);
  OptimizerConfig bad;
  bad.gamma = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(OptimizerStateTest, SaveLoadResumesBitExactly) {
  Rng rng(1);
  auto make = [&] {
    ParameterStore s;
    s.add("a", "convlstm", Tensor({3}, {0.1, -0.2, 0.3}));
    s.add("b", "conv1", Tensor({2}, {1.0, 2.0}));
    return s;
  };
  auto grads = [](ParameterStore& s, int k) {
    for (auto& p : s.items()) {
      p.grad = Tensor(p.value.shape());
      for (std::size_t i = 0; i < p.value.numel(); ++i) (*p.grad)[i] = std::sin(double(k + i) + p.value[i]);
    }
  };
  OptimizerConfig cfg;
  cfg.total_steps = 10;
  cfg.gamma = 0.1;
  ParameterStore ref = make();
  Optimizer full(cfg);
  for (int k = 0; k < 6; ++k) {
    grads(ref, k);
    full.step(ref);
  }
  ParameterStore s = make();
  Optimizer first(cfg);
  for (int k = 0; k < 3; ++k) {
    grads(s, k);
    first.step(s);
  }
  Checkpoint ck;
  first.save_state(ck);
  put_parameters(ck, s);
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  ParameterStore resumed = make();
  load_parameters(back, resumed);
  Optimizer second(cfg);
  second.load_state(back);
  EXPECT_EQ(second.step_count(), 3u);
  for (int k = 3; k < 6; ++k) {
    grads(resumed, k);
    second.step(resumed);
  }
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(resumed.items()[i].value, ref.items()[i].value);
}

TEST(FreezeRegimeTest, OnlyConvLSTMParametersChange) {
  ModelConfig mc;
  mc.input_height = mc.input_width = 32;
  mc.convlstm = true;
  mc.time_steps = 2;
  ModelGraph m = ModelGraph::build(mc, 3);
  ParameterStore before = m.params();
  OptimizerConfig oc;
  oc.freeze_others = true;
  oc.total_steps = 3;
  Optimizer opt(oc);
  Rng rng(2);
  const Tensor x = ssk::test::random_tensor({2, 3, 32, 32}, rng);
  std::vector<std::uint8_t> labels(2 * 32 * 32);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(5));
  auto trainable = [&](const Parameter& p) { return !oc.frozen(p.group); };
  for (int step = 0; step < 3; ++step) {
    m.params().zero_grad();
    Tape tape;
    Var loss = compute_loss(m.forward(tape, tape.constant(x), trainable), labels, LossConfig{});
    tape.backward(loss);
    opt.step(m.params());
  }
  std::size_t changed = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& a = before.items()[i];
    const auto& b = m.params().items()[i];
    if (a.group == "convlstm") {
      changed += a.value != b.value;
    } else {
      EXPECT_EQ(a.value, b.value) << a.name;
      EXPECT_FALSE(b.grad.has_value()) << a.name;
    }
  }
  EXPECT_GT(changed, 0u);
}
