#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssk/ops.hpp"
#include "ssk/tape.hpp"

namespace ssk {

enum class LayerKind { Conv, Relu, MaxPool, Upsample, ConvLSTM, ReshapeToClips, ReshapeToFrames, Softmax };

std::string to_string(LayerKind k);
LayerKind parse_layer_kind(const std::string& s);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t out_channels = 0;
  Padding padding = Padding::Same;
  // Learning-rate group of the layer's parameters.
  std::string lr_group;
  // ConvLSTM only.
  bool peephole = true;
  // ReshapeToClips only.
  std::size_t time_steps = 0;
};

/// How the ConvLSTM replacing the classifier is initialised.
enum class ConvLSTMInit {
  // W_xc and b_c copied from the classifier (times `seed_scale`), every other
  // kernel, peephole and bias zero. The first frame then ranks classes exactly
  // as the classifier did.
  SeedFromClassifier,
  // Uniform kernels, zero peepholes and biases.
  Random,
};

struct ModelConfig {
  std::string name = "mini-fcn";
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::size_t in_channels = 3;
  std::size_t num_classes = 5;
  // Mini-FCN stage widths (stages 2..5; the stem uses the first width).
  std::vector<std::size_t> widths{8, 16, 32, 64};
  // Mini-FCN classifier resolution: 16 (ResNet-style), 8 or 4. Strides
  // removed from stages 3-4 become dilations.
  std::size_t output_stride = 8;
  // Explicit layer list; when non-empty it replaces the mini-FCN topology.
  // Entries may use kind "bottleneck" with "channels": [a, b, c] and
  // "repeat": n, which expands to n stacks of 1x1/3x3/1x1 conv-ReLU layers
  // (shape-level only; no residual adds).
  nlohmann::json layers = nlohmann::json::array();

  bool convlstm = false;
  std::size_t time_steps = 5;
  bool peephole = true;
  ConvLSTMInit convlstm_init = ConvLSTMInit::SeedFromClassifier;
  double seed_scale = 0.01;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
/// Unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Layer list for `cfg` without the ConvLSTM conversion.
std::vector<LayerSpec> build_layer_specs(const ModelConfig& cfg);

/// Output shape [C,H,W] of every layer for one frame, checking channel
/// compatibility along the way.
std::vector<Shape> infer_shapes(const std::vector<LayerSpec>& layers, std::size_t in_channels, std::size_t height,
                                std::size_t width, std::size_t num_classes);

/// Decides whether a parameter is trainable on a tape.
using TrainablePredicate = std::function<bool(const Parameter&)>;
inline bool all_trainable(const Parameter&) { return true; }

class ModelGraph {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  ModelGraph() = default;
  ModelGraph(ModelConfig cfg, std::vector<LayerSpec> layers, ParameterStore params);

  /// Fresh model with He-normal conv weights and zero biases. A config with
  /// `convlstm` set yields an already-converted model.
  static ModelGraph build(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  std::size_t num_classes() const { return cfg_.num_classes; }
  std::size_t time_steps() const { return cfg_.convlstm ? cfg_.time_steps : 1; }
  std::optional<std::size_t> layer_index(const std::string& name) const;
  bool has_convlstm() const { return layer_index("convlstm").has_value(); }
  /// Index of the first classifier-side layer ("conv6" or "reshape1"); the
  /// layers before it form the encoder.
  std::size_t head_start() const;
  /// Per-layer output shapes [C,H,W].
  const std::vector<Shape>& shapes() const { return shapes_; }

  /// Runs layers [from, to) on x. x is [B*T,C,H,W] frames (or the matching
  /// intermediate activation when from > 0).
  Var forward(Tape& tape, Var x, const TrainablePredicate& trainable = all_trainable, std::size_t from = 0,
              std::size_t to = npos);

  /// Gradient-free forward returning scores [B*T,C,H,W].
  Tensor predict(const Tensor& x, std::size_t from = 0, std::size_t to = npos);

 private:
  std::size_t layer_in_channels(std::size_t i) const;

  ModelConfig cfg_;
  std::vector<LayerSpec> layers_;
  ParameterStore params_;
  std::vector<Shape> shapes_;
};

/// Replaces "conv6" with reshape1 -> convlstm (1x1, hidden = C) -> reshape2.
/// Every other parameter is copied verbatim; `seed` drives the Random init.
ModelGraph convert_to_convlstm_fcn(const ModelGraph& m, std::size_t T, bool peephole,
                                   ConvLSTMInit init = ConvLSTMInit::SeedFromClassifier, double seed_scale = 1.0,
                                   std::uint64_t seed = 0);

/// Checkpoint I/O: the model config travels in the checkpoint metadata.
void save_model(const std::filesystem::path& path, const ModelGraph& m,
                const nlohmann::json& extra_meta = nlohmann::json::object());
ModelGraph load_model(const std::filesystem::path& path);

}  // namespace ssk
