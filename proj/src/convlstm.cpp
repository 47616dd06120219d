#include "ssk/convlstm.hpp"

#include <cmath>
#include <stdexcept>

#include "ssk/ops.hpp"

namespace ssk {

bool is_peephole_param(std::string_view name) {
  return name == "W_ci" || name == "W_cf" || name == "W_co";
}

void add_convlstm_parameters(ParameterStore& store, const std::string& prefix,
                             const ConvLSTMConfig& cfg, Rng& rng, const std::string& group) {
  if (cfg.in_channels == 0 || cfg.hidden_channels == 0 || cfg.kernel == 0 || cfg.height == 0 ||
      cfg.width == 0) {
    throw std::invalid_argument("ConvLSTM config has a zero extent");
  }
  const std::size_t k = cfg.kernel, hid = cfg.hidden_channels;
  auto uniform_kernel = [&](std::size_t cin) {
    Tensor t({hid, cin, k, k});
    const double bound = 1.0 / std::sqrt(double(cin * k * k));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
  };
  for (auto name : {"W_xi", "W_xf", "W_xc", "W_xo"})
    store.add(prefix + "/" + name, group, uniform_kernel(cfg.in_channels));
  for (auto name : {"W_hi", "W_hf", "W_hc", "W_ho"})
    store.add(prefix + "/" + name, group, uniform_kernel(hid));
  if (cfg.peephole) {
    for (auto name : {"W_ci", "W_cf", "W_co"})
      store.add(prefix + "/" + name, group, Tensor({hid, cfg.height, cfg.width}, 0.0));
  }
  for (auto name : {"b_i", "b_f", "b_c", "b_o"}) store.add(prefix + "/" + name, group, Tensor({hid}, 0.0));
}

ConvLSTMVars bind_convlstm(Tape& tape, ParameterStore& store, const std::string& prefix,
                           const ConvLSTMConfig& cfg, bool trainable) {
  auto b = [&](const char* name) { return tape.parameter(store.get(prefix + "/" + name), trainable); };
  ConvLSTMVars v{cfg,        b("W_xi"), b("W_xf"), b("W_xc"), b("W_xo"), b("W_hi"),
                 b("W_hf"),  b("W_hc"), b("W_ho"), {},        {},        {},
                 b("b_i"),   b("b_f"),  b("b_c"),  b("b_o")};
  if (cfg.peephole) {
    v.W_ci = b("W_ci");
    v.W_cf = b("W_cf");
    v.W_co = b("W_co");
  }
  return v;
}

namespace {

void check_state(const ConvLSTMConfig& cfg, Var v, std::size_t n, const char* what) {
  const Shape want{n, cfg.hidden_channels, cfg.height, cfg.width};
  if (v.shape() != want) {
    throw std::invalid_argument(std::string("convlstm_step: ") + what + " has shape " +
                                shape_str(v.shape()) + ", expected " + shape_str(want));
  }
}

}  // namespace

LSTMState convlstm_step(const ConvLSTMVars& cell, Var x, Var h_prev, Var c_prev) {
  const auto& cfg = cell.cfg;
  if (x.shape().size() != 4 || x.shape()[1] != cfg.in_channels || x.shape()[2] != cfg.height ||
      x.shape()[3] != cfg.width) {
    throw std::invalid_argument("convlstm_step: input shape " + shape_str(x.shape()) +
                                " does not match cell geometry [N," + std::to_string(cfg.in_channels) +
                                "," + std::to_string(cfg.height) + "," + std::to_string(cfg.width) + "]");
  }
  const std::size_t n = x.shape()[0];
  check_state(cfg, h_prev, n, "h_prev");
  check_state(cfg, c_prev, n, "c_prev");

  auto pre = [&](Var wx, Var wh, Var bias) {
    return add(conv2d(x, wx, bias), conv2d(h_prev, wh, std::nullopt));
  };
  Var zi = pre(cell.W_xi, cell.W_hi, cell.b_i);
  Var zf = pre(cell.W_xf, cell.W_hf, cell.b_f);
  if (cfg.peephole) {
    zi = add(zi, mul_broadcast(c_prev, *cell.W_ci));
    zf = add(zf, mul_broadcast(c_prev, *cell.W_cf));
  }
  const Var i = sigmoid(zi);
  const Var f = sigmoid(zf);
  const Var g = ssk::tanh(pre(cell.W_xc, cell.W_hc, cell.b_c));
  const Var c = add(mul(f, c_prev), mul(i, g));
  Var zo = pre(cell.W_xo, cell.W_ho, cell.b_o);
  if (cfg.peephole) zo = add(zo, mul_broadcast(c, *cell.W_co));
  const Var o = sigmoid(zo);
  return {mul(o, ssk::tanh(c)), c};
}

Var convlstm_sequence(const ConvLSTMVars& cell, Var xs, std::optional<LSTMState> initial,
                      std::optional<std::size_t> expected_T) {
  if (xs.shape().size() != 5) {
    throw std::invalid_argument("convlstm_sequence: expected [B,T,C,H,W], got " + shape_str(xs.shape()));
  }
  const std::size_t B = xs.shape()[0], T = xs.shape()[1];
  if (T == 0) throw std::invalid_argument("convlstm_sequence: empty time axis");
  if (expected_T && *expected_T != T) {
    throw std::invalid_argument("convlstm_sequence: clip length " + std::to_string(T) +
                                " does not match configured T=" + std::to_string(*expected_T));
  }
  Tape& tape = *xs.tape;
  const Shape state_shape{B, cell.cfg.hidden_channels, cell.cfg.height, cell.cfg.width};
  LSTMState s = initial ? *initial
                        : LSTMState{tape.constant(Tensor(state_shape, 0.0)), tape.constant(Tensor(state_shape, 0.0))};
  std::vector<Var> hs;
  hs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    s = convlstm_step(cell, select(xs, 1, t), s.h, s.c);
    hs.push_back(s.h);
  }
  return stack(hs, 1);
}

Var reshape_frames_to_clips(Var frames, std::size_t T) {
  const Shape& s = frames.shape();
  if (s.size() != 4) throw std::invalid_argument("reshape_frames_to_clips: expected [B*T,C,H,W]");
  if (T == 0 || s[0] % T != 0) {
    throw std::invalid_argument("reshape_frames_to_clips: batch of " + std::to_string(s[0]) +
                                " frames is not divisible by T=" + std::to_string(T));
  }
  return reshape(frames, {s[0] / T, T, s[1], s[2], s[3]});
}

Var reshape_clips_to_frames(Var clips) {
  const Shape& s = clips.shape();
  if (s.size() != 5) throw std::invalid_argument("reshape_clips_to_frames: expected [B,T,C,H,W]");
  return reshape(clips, {s[0] * s[1], s[2], s[3], s[4]});
}

ConvLSTMCell::ConvLSTMCell(ConvLSTMConfig cfg, std::uint64_t seed, std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)) {
  Rng rng(seed);
  add_convlstm_parameters(params_, prefix_, cfg_, rng, "convlstm");
}

Parameter& ConvLSTMCell::param(std::string_view name) { return params_.get(prefix_ + "/" + std::string(name)); }

ConvLSTMVars ConvLSTMCell::bind(Tape& tape, bool trainable) {
  return bind_convlstm(tape, params_, prefix_, cfg_, trainable);
}

}  // namespace ssk
