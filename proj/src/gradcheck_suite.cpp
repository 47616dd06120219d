#include "ssk/gradcheck_suite.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "ssk/convlstm.hpp"
#include "ssk/losses.hpp"
#include "ssk/models.hpp"
#include "ssk/ops.hpp"
#include "ssk/rng.hpp"

namespace ssk {

namespace {

Tensor uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Parameter uniform_param(std::string name, Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Parameter{std::move(name), "check", uniform_tensor(std::move(shape), rng, lo, hi), std::nullopt};
}

// Values spaced well apart in random order, so max-pool windows and ReLU
// inputs sit far from their kinks relative to the probe step.
Parameter spaced_param(std::string name, Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::vector<double> vals(t.numel());
  const double step = 2.0 / double(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = -1.0 + step * (double(i) + 0.5);
  rng.shuffle(vals);
  t.vec() = vals;
  return Parameter{std::move(name), "check", std::move(t), std::nullopt};
}

std::vector<std::uint8_t> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<std::uint8_t> out(n);
  for (auto& l : out) l = std::uint8_t(rng.below(classes));
  return out;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, std::size_t size, const GradCheckOptions& opt) {
  Rng rng(seed);
  const std::size_t S = size, C = 3;
  std::vector<GradCheckCase> out;
  auto check = [&](const std::string& name, const TapeFunction& f, const std::vector<Parameter*>& params,
                   GradCheckOptions o) { out.push_back({name, finite_diff_check(f, params, o)}); };

  // Weighted sums make every output element matter with a distinct weight.
  const Tensor mix = uniform_tensor({2, C, S, S}, rng);
  auto weighted = [](Var y, const Tensor& r) { return sum(mul(y, y.tape->constant(r))); };

  Parameter a = uniform_param("a", {2, C, S, S}, rng);
  Parameter b = uniform_param("b", {2, C, S, S}, rng);
  Parameter spaced = spaced_param("x", {2, C, S, S}, rng);
  Parameter w3 = uniform_param("w", {4, C, 3, 3}, rng, -0.5, 0.5);
  Parameter bias = uniform_param("bias", {4}, rng);
  Parameter peep = uniform_param("peep", {C, S, S}, rng);

  const Tensor mix4 = uniform_tensor({2, 4, S, S}, rng);
  check("conv2d", [&](Tape&, const std::vector<Var>& p) { return weighted(conv2d(p[0], p[1], p[2]), mix4); },
        {&a, &w3, &bias}, opt);
  const Tensor mix4s = uniform_tensor({2, 4, (S + 1) / 2, (S + 1) / 2}, rng);
  check("conv2d_stride2",
        [&](Tape&, const std::vector<Var>& p) { return weighted(conv2d(p[0], p[1], p[2], {2, 1, Padding::Same}), mix4s); },
        {&a, &w3, &bias}, opt);
  check("conv2d_dilated",
        [&](Tape&, const std::vector<Var>& p) { return weighted(conv2d(p[0], p[1], p[2], {1, 2, Padding::Same}), mix4); },
        {&a, &w3, &bias}, opt);
  const Tensor mixp = uniform_tensor({2, C, (S + 1) / 2, (S + 1) / 2}, rng);
  check("max_pool2d",
        [&](Tape&, const std::vector<Var>& p) { return weighted(max_pool2d(p[0], 3, 2, Padding::Same), mixp); },
        {&spaced}, opt);
  const Tensor mixu = uniform_tensor({2, C, 2 * S, 2 * S}, rng);
  check("bilinear_upsample",
        [&](Tape&, const std::vector<Var>& p) { return weighted(bilinear_upsample(p[0], 2 * S, 2 * S), mixu); },
        {&a}, opt);
  check("add", [&](Tape&, const std::vector<Var>& p) { return weighted(add(p[0], p[1]), mix); }, {&a, &b}, opt);
  check("sub", [&](Tape&, const std::vector<Var>& p) { return weighted(sub(p[0], p[1]), mix); }, {&a, &b}, opt);
  check("mul", [&](Tape&, const std::vector<Var>& p) { return weighted(mul(p[0], p[1]), mix); }, {&a, &b}, opt);
  check("mul_broadcast", [&](Tape&, const std::vector<Var>& p) { return weighted(mul_broadcast(p[0], p[1]), mix); },
        {&a, &peep}, opt);
  check("scale", [&](Tape&, const std::vector<Var>& p) { return weighted(scale(p[0], -1.7), mix); }, {&a}, opt);
  check("add_scalar", [&](Tape&, const std::vector<Var>& p) { return weighted(mul(add_scalar(p[0], 0.3), p[0]), mix); },
        {&a}, opt);
  check("sigmoid", [&](Tape&, const std::vector<Var>& p) { return weighted(sigmoid(p[0]), mix); }, {&a}, opt);
  check("tanh", [&](Tape&, const std::vector<Var>& p) { return weighted(ssk::tanh(p[0]), mix); }, {&a}, opt);
  check("relu", [&](Tape&, const std::vector<Var>& p) { return weighted(relu(p[0]), mix); }, {&spaced}, opt);
  check("softmax_channels", [&](Tape&, const std::vector<Var>& p) { return weighted(softmax_channels(p[0]), mix); },
        {&a}, opt);
  check("sum", [&](Tape&, const std::vector<Var>& p) { return sum(mul(p[0], p[0])); }, {&a}, opt);
  check("reshape_select_stack",
        [&](Tape&, const std::vector<Var>& p) {
          std::vector<Var> parts;
          for (std::size_t i = 0; i < 2; ++i) parts.push_back(ssk::tanh(select(p[0], 0, i)));
          return weighted(reshape(stack(parts, 0), {2, C, S, S}), mix);
        },
        {&a}, opt);
  const Tensor mixr = uniform_tensor({2 * S * S, C}, rng);
  check("channels_last", [&](Tape&, const std::vector<Var>& p) { return weighted(channels_last(p[0]), mixr); }, {&a},
        opt);

  // ConvLSTM over a 3-frame clip.
  {
    const ConvLSTMConfig cc{C, 2, 3, S, S, true};
    ParameterStore store;
    Rng cell_rng = rng.fork(1);
    add_convlstm_parameters(store, "cell", cc, cell_rng, "convlstm");
    for (auto& p : store.items()) p.value = uniform_tensor(p.value.shape(), cell_rng, -0.5, 0.5);
    Parameter xs = uniform_param("xs", {1, 3, C, S, S}, rng);
    const Tensor mixc = uniform_tensor({1, 3, 2, S, S}, rng);
    std::vector<Parameter*> params{&xs};
    for (auto& p : store.items()) params.push_back(&p);
    check("convlstm_sequence",
          [&](Tape& tape, const std::vector<Var>& p) {
            // bind_convlstm registers the store's parameters itself; p[0] is the input.
            auto cell = bind_convlstm(tape, store, "cell", cc, true);
            return weighted(convlstm_sequence(cell, p[0]), mixc);
          },
          params, opt);
  }

  // Losses on per-pixel score maps.
  {
    Parameter scores = uniform_param("scores", {1, C, S, S}, rng, -2, 2);
    const auto labels = random_labels(S * S, C, rng);
    const Tensor oh = one_hot(labels, C);
    Tape t0;
    const auto stats = compute_soft_region_stats(softmax_rows(channels_last(t0.constant(scores.value)).value()), oh);
    check("cross_entropy", [&](Tape&, const std::vector<Var>& p) { return cross_entropy(channels_last(p[0]), labels); },
          {&scores}, opt);
    check("iou_loss",
          [&](Tape&, const std::vector<Var>& p) {
            return iou_loss_multiclass(channels_last(softmax_channels(p[0])), oh);
          },
          {&scores}, opt);
    for (auto variant : {SegVariant::Linear, SegVariant::Hinge}) {
      const LossConfig lc{LossKind::Segmentation, variant, variant == SegVariant::Hinge ? 1.0 : 0.0, true};
      check("seg_loss_" + to_string(variant),
            [&, lc](Tape&, const std::vector<Var>& p) { return seg_loss(channels_last(p[0]), labels, stats, lc); },
            {&scores}, opt);
    }
  }

  // Mini ConvLSTM-FCN composed with each loss.
  {
    ModelConfig mc;
    mc.input_height = mc.input_width = S;
    mc.widths = {3, 4, 4, 5};
    mc.num_classes = C;
    mc.convlstm = true;
    mc.time_steps = 2;
    mc.convlstm_init = ConvLSTMInit::Random;
    // Redraw (deterministically) until every ReLU input is clear of the kink
    // by more than a probe can move it; a crossing makes the central
    // difference meaningless rather than the gradient wrong.
    const double clearance = 5 * opt.eps;
    ModelGraph m;
    Tensor x;
    std::vector<std::uint8_t> labels;
    std::uint64_t attempt = 0;
    for (;; ++attempt) {
      if (attempt == 1000) throw std::runtime_error("gradcheck suite: no kink-free model draw");
      Rng model_rng = rng.fork(100 + attempt);
      m = ModelGraph::build(mc, model_rng.next_u64());
      for (auto& p : m.params().items())
        if (p.group == "convlstm")
          for (auto& v : p.value.data()) v = model_rng.uniform(-0.8, 0.8);
      x = uniform_tensor({4, 3, S, S}, model_rng);
      labels = random_labels(4 * S * S, C, model_rng);
      double closest = 1e300;
      for (std::size_t i = 0; i < m.layers().size(); ++i) {
        if (m.layers()[i].kind != LayerKind::Relu) continue;
        const Tensor pre = m.predict(x, 0, i);
        for (double v : pre.data()) closest = std::min(closest, std::abs(v));
      }
      if (closest > clearance) break;
    }
    std::vector<Parameter*> params;
    for (auto& p : m.params().items()) params.push_back(&p);
    GradCheckOptions o = opt;
    if (o.probes_per_param == 0) o.probes_per_param = 5;
    for (auto kind : {LossKind::CrossEntropy, LossKind::Iou, LossKind::Segmentation}) {
      const LossConfig lc{kind, SegVariant::Linear, 0.0, true};
      // Segmentation weights are held at the starting point so the finite
      // differences and the analytic gradient see the same constants.
      const Tensor s0 = m.predict(x);
      Tape t1;
      const auto stats = compute_soft_region_stats(softmax_rows(channels_last(t1.constant(s0)).value()), one_hot(labels, C));
      check("convlstm_fcn+" + to_string(kind),
            [&, lc](Tape& tape, const std::vector<Var>&) {
              Var s = m.forward(tape, tape.constant(x));
              if (lc.kind == LossKind::Segmentation) return seg_loss(channels_last(s), labels, stats, lc);
              return compute_loss(s, labels, lc);
            },
            params, o);
    }
  }
  return out;
}

nlohmann::json to_json(const std::vector<GradCheckCase>& cases) {
  nlohmann::json rows = nlohmann::json::array();
  bool ok = true;
  double worst = 0;
  for (const auto& c : cases) {
    ok = ok && c.report.passed;
    worst = std::max(worst, c.report.max_rel_error());
    rows.push_back({{"name", c.name},
                    {"passed", c.report.passed},
                    {"max_rel_error", c.report.max_rel_error()},
                    {"non_finite", c.report.non_finite}});
  }
  return {{"passed", ok}, {"max_rel_error", worst}, {"cases", rows}};
}

}  // namespace ssk
