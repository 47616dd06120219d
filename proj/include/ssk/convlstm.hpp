#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "ssk/rng.hpp"
#include "ssk/tape.hpp"

namespace ssk {

struct ConvLSTMConfig {
  std::size_t in_channels = 0;
  std::size_t hidden_channels = 0;
  std::size_t kernel = 1;
  // Spatial extent of the state; fixes the peephole map size.
  std::size_t height = 0;
  std::size_t width = 0;
  bool peephole = true;
};

inline constexpr std::array<std::string_view, 15> kConvLSTMParamNames = {
    "W_xi", "W_xf", "W_xc", "W_xo", "W_hi", "W_hf", "W_hc", "W_ho",
    "W_ci", "W_cf", "W_co", "b_i",  "b_f",  "b_c",  "b_o"};

bool is_peephole_param(std::string_view name);

/// Adds the cell's parameters as "{prefix}/{W_xi,...,b_o}". Input and hidden
/// kernels are uniform in +-1/sqrt(fan_in); peepholes and biases start at 0.
/// Peephole maps are omitted when `cfg.peephole` is off.
void add_convlstm_parameters(ParameterStore& store, const std::string& prefix,
                             const ConvLSTMConfig& cfg, Rng& rng, const std::string& group);

/// Cell parameters bound on a tape.
struct ConvLSTMVars {
  ConvLSTMConfig cfg;
  Var W_xi, W_xf, W_xc, W_xo;
  Var W_hi, W_hf, W_hc, W_ho;
  std::optional<Var> W_ci, W_cf, W_co;
  Var b_i, b_f, b_c, b_o;
};

ConvLSTMVars bind_convlstm(Tape& tape, ParameterStore& store, const std::string& prefix,
                           const ConvLSTMConfig& cfg, bool trainable);

struct LSTMState {
  Var h;
  Var c;
};

/// One recurrence step on x [N,C_in,H,W] with states [N,C_hid,H,W]:
///   i  = sig(W_xi*x + W_hi*h + W_ci.c + b_i)
///   f  = sig(W_xf*x + W_hf*h + W_cf.c + b_f)
///   c' = f.c + i.tanh(W_xc*x + W_hc*h + b_c)
///   o  = sig(W_xo*x + W_ho*h + W_co.c' + b_o)
///   h' = o.tanh(c')
/// where * is "same" convolution and . the Hadamard product.
LSTMState convlstm_step(const ConvLSTMVars& cell, Var x, Var h_prev, Var c_prev);

/// Runs the recurrence over xs [B,T,C_in,H,W] and returns every H_t stacked
/// as [B,T,C_hid,H,W]. States start at zero unless given; clips in the batch
/// never share state. `expected_T`, when set, must equal xs' time extent.
Var convlstm_sequence(const ConvLSTMVars& cell, Var xs, std::optional<LSTMState> initial = std::nullopt,
                      std::optional<std::size_t> expected_T = std::nullopt);

/// [B*T,C,H,W] -> [B,T,C,H,W]; consecutive frames stay within one clip.
Var reshape_frames_to_clips(Var frames, std::size_t T);
/// [B,T,C,H,W] -> [B*T,C,H,W].
Var reshape_clips_to_frames(Var clips);

/// Standalone cell owning its parameters.
class ConvLSTMCell {
 public:
  ConvLSTMCell(ConvLSTMConfig cfg, std::uint64_t seed, std::string prefix = "convlstm");

  const ConvLSTMConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }
  Parameter& param(std::string_view name);
  ConvLSTMVars bind(Tape& tape, bool trainable = true);

 private:
  ConvLSTMConfig cfg_;
  std::string prefix_;
  ParameterStore params_;
};

}  // namespace ssk
