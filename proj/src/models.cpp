#include "ssk/models.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "ssk/checkpoint.hpp"
#include "ssk/convlstm.hpp"
#include "ssk/rng.hpp"

namespace ssk {
namespace {

using nlohmann::json;

Padding parse_padding(const std::string& s) {
  if (s == "same") return Padding::Same;
  if (s == "valid") return Padding::Valid;
  throw std::invalid_argument("unknown padding '" + s + "' (same|valid)");
}

std::string init_str(ConvLSTMInit i) { return i == ConvLSTMInit::SeedFromClassifier ? "seed_from_classifier" : "random"; }

ConvLSTMInit parse_init(const std::string& s) {
  if (s == "seed_from_classifier") return ConvLSTMInit::SeedFromClassifier;
  if (s == "random") return ConvLSTMInit::Random;
  throw std::invalid_argument("unknown convlstm_init '" + s + "' (seed_from_classifier|random)");
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
  }
}

LayerSpec conv(std::string name, std::size_t k, std::size_t stride, std::size_t dilation, std::size_t out) {
  LayerSpec s;
  s.lr_group = name;
  s.name = std::move(name);
  s.kind = LayerKind::Conv;
  s.kernel = k;
  s.stride = stride;
  s.dilation = dilation;
  s.out_channels = out;
  return s;
}

LayerSpec simple(std::string name, LayerKind kind) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = kind;
  return s;
}

void add_conv_relu(std::vector<LayerSpec>& out, LayerSpec c) {
  const std::string relu = c.name + "_relu";
  out.push_back(std::move(c));
  out.push_back(simple(relu, LayerKind::Relu));
}

std::vector<LayerSpec> explicit_layers(const json& list) {
  std::vector<LayerSpec> out;
  for (const auto& e : list) {
    reject_unknown_keys(e,
                        {"name", "kind", "kernel", "stride", "dilation", "out_channels", "channels", "padding",
                         "repeat", "relu"},
                        "layer entry");
    const std::string name = e.at("name").get<std::string>();
    const std::string kind = e.at("kind").get<std::string>();
    const std::size_t stride = e.value("stride", std::size_t{1});
    const std::size_t dilation = e.value("dilation", std::size_t{1});
    if (kind == "bottleneck") {
      const auto ch = e.at("channels").get<std::vector<std::size_t>>();
      if (ch.size() != 3) throw std::invalid_argument("bottleneck '" + name + "' needs 3 channel counts");
      const std::size_t repeat = e.value("repeat", std::size_t{1});
      for (std::size_t r = 0; r < repeat; ++r) {
        const std::string p = name + "_" + std::to_string(r + 1);
        add_conv_relu(out, conv(p + "a", 1, 1, 1, ch[0]));
        add_conv_relu(out, conv(p + "b", 3, r == 0 ? stride : 1, dilation, ch[1]));
        add_conv_relu(out, conv(p + "c", 1, 1, 1, ch[2]));
      }
      continue;
    }
    LayerSpec s = simple(name, parse_layer_kind(kind));
    s.kernel = e.value("kernel", std::size_t{1});
    s.stride = stride;
    s.dilation = dilation;
    s.out_channels = e.value("out_channels", std::size_t{0});
    s.padding = parse_padding(e.value("padding", std::string("same")));
    if (s.kind == LayerKind::Conv) {
      s.lr_group = name;
      if (e.value("relu", false)) {
        add_conv_relu(out, s);
        continue;
      }
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Upsample: return "upsample";
    case LayerKind::ConvLSTM: return "convlstm";
    case LayerKind::ReshapeToClips: return "reshape_to_clips";
    case LayerKind::ReshapeToFrames: return "reshape_to_frames";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& s) {
  for (auto k : {LayerKind::Conv, LayerKind::Relu, LayerKind::MaxPool, LayerKind::Upsample, LayerKind::ConvLSTM,
                 LayerKind::ReshapeToClips, LayerKind::ReshapeToFrames, LayerKind::Softmax}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

void ModelConfig::validate() const {
  if (input_height == 0 || input_width == 0 || input_height % 16 != 0 || input_width % 16 != 0) {
    throw std::invalid_argument("model input " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                                " must be a positive multiple of 16");
  }
  if (in_channels == 0) throw std::invalid_argument("model in_channels must be positive");
  if (num_classes < 2) throw std::invalid_argument("model needs at least 2 classes");
  if (layers.empty() && widths.size() != 4) throw std::invalid_argument("mini-FCN needs exactly 4 stage widths");
  if (output_stride != 4 && output_stride != 8 && output_stride != 16) {
    throw std::invalid_argument("output_stride must be 4, 8 or 16");
  }
  for (auto w : widths)
    if (w == 0) throw std::invalid_argument("stage widths must be positive");
  if (convlstm && time_steps == 0) throw std::invalid_argument("time_steps must be >= 1");
  if (!std::isfinite(seed_scale)) throw std::invalid_argument("seed_scale must be finite");
}

json to_json(const ModelConfig& c) {
  return {{"name", c.name},
          {"input_height", c.input_height},
          {"input_width", c.input_width},
          {"in_channels", c.in_channels},
          {"num_classes", c.num_classes},
          {"widths", c.widths},
          {"output_stride", c.output_stride},
          {"layers", c.layers},
          {"convlstm", c.convlstm},
          {"time_steps", c.time_steps},
          {"peephole", c.peephole},
          {"convlstm_init", init_str(c.convlstm_init)},
          {"seed_scale", c.seed_scale}};
}

ModelConfig model_config_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"name", "input_height", "input_width", "in_channels", "num_classes", "widths", "output_stride", "layers",
                       "convlstm", "time_steps", "peephole", "convlstm_init", "seed_scale", "comment"},
                      "model config");
  ModelConfig c;
  c.name = j.value("name", c.name);
  c.input_height = j.value("input_height", c.input_height);
  c.input_width = j.value("input_width", c.input_width);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.widths = j.value("widths", c.widths);
  c.output_stride = j.value("output_stride", c.output_stride);
  c.layers = j.value("layers", json::array());
  c.convlstm = j.value("convlstm", c.convlstm);
  c.time_steps = j.value("time_steps", c.time_steps);
  c.peephole = j.value("peephole", c.peephole);
  c.convlstm_init = parse_init(j.value("convlstm_init", init_str(c.convlstm_init)));
  c.seed_scale = j.value("seed_scale", c.seed_scale);
  c.validate();
  return c;
}

std::vector<LayerSpec> build_layer_specs(const ModelConfig& cfg) {
  cfg.validate();
  if (!cfg.layers.empty()) return explicit_layers(cfg.layers);
  const auto& w = cfg.widths;
  std::vector<LayerSpec> out;
  add_conv_relu(out, conv("conv1", 3, 2, 1, w[0]));
  LayerSpec pool = simple("pool1", LayerKind::MaxPool);
  pool.kernel = 3;
  pool.stride = 2;
  out.push_back(pool);
  add_conv_relu(out, conv("conv2_1", 3, 1, 1, w[0]));
  add_conv_relu(out, conv("conv2_2", 3, 1, 1, w[0]));
  const std::size_t os = cfg.output_stride;
  const std::size_t d3 = os == 4 ? 2 : 1, d4 = 16 / os, d5 = 32 / os;
  add_conv_relu(out, conv("conv3_1", 3, os == 4 ? 1 : 2, d3, w[1]));
  add_conv_relu(out, conv("conv3_2", 3, 1, d3, w[1]));
  add_conv_relu(out, conv("conv4_1", 3, os == 16 ? 2 : 1, d4, w[2]));
  add_conv_relu(out, conv("conv4_2", 3, 1, d4, w[2]));
  add_conv_relu(out, conv("conv5_1", 3, 1, d5, w[3]));
  add_conv_relu(out, conv("conv5_2", 3, 1, d5, w[3]));
  out.push_back(conv("conv6", 1, 1, 1, cfg.num_classes));
  out.push_back(simple("upsample", LayerKind::Upsample));
  return out;
}

std::vector<Shape> infer_shapes(const std::vector<LayerSpec>& layers, std::size_t in_channels, std::size_t height,
                                std::size_t width, std::size_t num_classes) {
  std::vector<Shape> out;
  std::set<std::string> names;
  Shape cur{in_channels, height, width};
  for (const auto& l : layers) {
    if (!names.insert(l.name).second) throw std::invalid_argument("duplicate layer name '" + l.name + "'");
    switch (l.kind) {
      case LayerKind::Conv: {
        if (l.kernel == 0 || l.stride == 0 || l.dilation == 0) {
          throw std::invalid_argument("layer '" + l.name + "' has a zero kernel/stride/dilation");
        }
        const auto gh = conv_axis(cur[1], l.kernel, l.stride, l.dilation, l.padding);
        const auto gw = conv_axis(cur[2], l.kernel, l.stride, l.dilation, l.padding);
        cur = {l.out_channels ? l.out_channels : num_classes, gh.out, gw.out};
        break;
      }
      case LayerKind::MaxPool: {
        const auto gh = conv_axis(cur[1], l.kernel, l.stride, 1, l.padding);
        const auto gw = conv_axis(cur[2], l.kernel, l.stride, 1, l.padding);
        cur = {cur[0], gh.out, gw.out};
        break;
      }
      case LayerKind::Upsample:
        cur = {cur[0], height, width};
        break;
      case LayerKind::ConvLSTM:
        cur = {l.out_channels, cur[1], cur[2]};
        break;
      case LayerKind::Relu:
      case LayerKind::ReshapeToClips:
      case LayerKind::ReshapeToFrames:
      case LayerKind::Softmax:
        break;
    }
    if (cur[1] == 0 || cur[2] == 0) throw std::invalid_argument("layer '" + l.name + "' produces an empty map");
    out.push_back(cur);
  }
  return out;
}

ModelGraph::ModelGraph(ModelConfig cfg, std::vector<LayerSpec> layers, ParameterStore params)
    : cfg_(std::move(cfg)), layers_(std::move(layers)), params_(std::move(params)) {
  shapes_ = infer_shapes(layers_, cfg_.in_channels, cfg_.input_height, cfg_.input_width, cfg_.num_classes);
  if (shapes_.empty() || shapes_.back()[0] != cfg_.num_classes) {
    throw std::invalid_argument("model output has " + std::to_string(shapes_.empty() ? 0 : shapes_.back()[0]) +
                                " channels, expected " + std::to_string(cfg_.num_classes));
  }
  const Shape& last = shapes_.back();
  if (last[1] != cfg_.input_height || last[2] != cfg_.input_width) {
    throw std::invalid_argument("model output is not at input resolution");
  }
}

std::size_t ModelGraph::layer_in_channels(std::size_t i) const {
  return i == 0 ? cfg_.in_channels : shapes_[i - 1][0];
}

ModelGraph ModelGraph::build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto layers = build_layer_specs(cfg);
  const auto shapes = infer_shapes(layers, cfg.in_channels, cfg.input_height, cfg.input_width, cfg.num_classes);
  Rng rng(seed);
  ParameterStore params;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.kind != LayerKind::Conv) continue;
    const std::size_t cin = i == 0 ? cfg.in_channels : shapes[i - 1][0];
    const std::size_t cout = shapes[i][0];
    Tensor w({cout, cin, l.kernel, l.kernel});
    const double sd = std::sqrt(2.0 / double(cin * l.kernel * l.kernel));
    for (auto& v : w.data()) v = sd * rng.normal();
    params.add(l.name + "/w", l.lr_group, std::move(w));
    params.add(l.name + "/b", l.lr_group, Tensor({cout}, 0.0));
  }
  ModelConfig base = cfg;
  base.convlstm = false;
  ModelGraph m(base, std::move(layers), std::move(params));
  if (!cfg.convlstm) return m;
  return convert_to_convlstm_fcn(m, cfg.time_steps, cfg.peephole, cfg.convlstm_init, cfg.seed_scale,
                                 rng.next_u64());
}

std::optional<std::size_t> ModelGraph::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].name == name) return i;
  return std::nullopt;
}

std::size_t ModelGraph::head_start() const {
  if (auto i = layer_index("conv6")) return *i;
  if (auto i = layer_index("reshape1")) return *i;
  throw std::logic_error("model has no classifier layer");
}

Var ModelGraph::forward(Tape& tape, Var x, const TrainablePredicate& trainable, std::size_t from, std::size_t to) {
  if (to == npos) to = layers_.size();
  if (from > to || to > layers_.size()) throw std::out_of_range("ModelGraph::forward: bad layer range");
  const Shape want_in = from == 0 ? Shape{cfg_.in_channels, cfg_.input_height, cfg_.input_width} : shapes_[from - 1];
  const Shape& xs = x.shape();
  if (xs.size() != 4 || Shape(xs.begin() + 1, xs.end()) != want_in) {
    throw std::invalid_argument("ModelGraph::forward: input " + shape_str(xs) + " does not match [N," +
                                shape_str(want_in).substr(1));
  }
  auto bind = [&](const std::string& name) {
    Parameter& p = params_.get(name);
    return tape.parameter(p, trainable(p));
  };
  Var h = x;
  for (std::size_t i = from; i < to; ++i) {
    const LayerSpec& l = layers_[i];
    switch (l.kind) {
      case LayerKind::Conv:
        h = conv2d(h, bind(l.name + "/w"), bind(l.name + "/b"), {l.stride, l.dilation, l.padding});
        break;
      case LayerKind::Relu:
        h = relu(h);
        break;
      case LayerKind::MaxPool:
        h = max_pool2d(h, l.kernel, l.stride, l.padding);
        break;
      case LayerKind::Upsample:
        h = bilinear_upsample(h, cfg_.input_height, cfg_.input_width);
        break;
      case LayerKind::ReshapeToClips:
        h = reshape_frames_to_clips(h, l.time_steps);
        break;
      case LayerKind::ReshapeToFrames:
        h = reshape_clips_to_frames(h);
        break;
      case LayerKind::Softmax:
        h = softmax_channels(h);
        break;
      case LayerKind::ConvLSTM: {
        const ConvLSTMConfig cc{layer_in_channels(i), l.out_channels, l.kernel, shapes_[i][1], shapes_[i][2],
                                l.peephole};
        const bool train = trainable(params_.get(l.name + "/W_xi"));
        auto vars = bind_convlstm(tape, params_, l.name, cc, train);
        h = convlstm_sequence(vars, h, std::nullopt, cfg_.time_steps);
        break;
      }
    }
  }
  return h;
}

Tensor ModelGraph::predict(const Tensor& x, std::size_t from, std::size_t to) {
  Tape tape;
  return forward(tape, tape.constant(x), [](const Parameter&) { return false; }, from, to).value();
}

ModelGraph convert_to_convlstm_fcn(const ModelGraph& m, std::size_t T, bool peephole, ConvLSTMInit init,
                                   double seed_scale, std::uint64_t seed) {
  if (T == 0) throw std::invalid_argument("convert_to_convlstm_fcn: T must be >= 1");
  const auto idx = m.layer_index("conv6");
  if (!idx) throw std::invalid_argument("convert_to_convlstm_fcn: model has no classifier layer 'conv6'");
  const LayerSpec& c6 = m.layers()[*idx];
  if (c6.kernel != 1 || c6.stride != 1) throw std::invalid_argument("convert_to_convlstm_fcn: conv6 must be 1x1");
  const std::size_t cin = *idx == 0 ? m.config().in_channels : m.shapes()[*idx - 1][0];
  const Shape& fmap = m.shapes()[*idx];
  const std::size_t C = m.num_classes();

  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < m.layers().size(); ++i) {
    if (i != *idx) {
      layers.push_back(m.layers()[i]);
      continue;
    }
    LayerSpec r1 = simple("reshape1", LayerKind::ReshapeToClips);
    r1.time_steps = T;
    LayerSpec cell = simple("convlstm", LayerKind::ConvLSTM);
    cell.kernel = 1;
    cell.out_channels = C;
    cell.peephole = peephole;
    cell.lr_group = "convlstm";
    layers.push_back(r1);
    layers.push_back(cell);
    layers.push_back(simple("reshape2", LayerKind::ReshapeToFrames));
  }

  ParameterStore params;
  for (const auto& p : m.params().items()) {
    if (p.name.rfind("conv6/", 0) == 0) continue;
    params.add(p.name, p.group, p.value);
  }
  Rng rng(seed);
  const ConvLSTMConfig cc{cin, C, 1, fmap[1], fmap[2], peephole};
  add_convlstm_parameters(params, "convlstm", cc, rng, "convlstm");
  if (init == ConvLSTMInit::SeedFromClassifier) {
    for (auto& p : params.items())
      if (p.name.rfind("convlstm/", 0) == 0) p.value.fill(0.0);
    Tensor w = m.params().get("conv6/w").value;
    for (auto& v : w.data()) v *= seed_scale;
    Tensor b = m.params().get("conv6/b").value;
    for (auto& v : b.data()) v *= seed_scale;
    params.get("convlstm/W_xc").value = std::move(w);
    params.get("convlstm/b_c").value = std::move(b);
  }

  ModelConfig cfg = m.config();
  cfg.convlstm = true;
  cfg.time_steps = T;
  cfg.peephole = peephole;
  cfg.convlstm_init = init;
  cfg.seed_scale = seed_scale;
  return ModelGraph(cfg, std::move(layers), std::move(params));
}

void save_model(const std::filesystem::path& path, const ModelGraph& m, const json& extra_meta) {
  Checkpoint ck;
  ck.meta = extra_meta;
  ck.meta["model"] = to_json(m.config());
  put_parameters(ck, m.params());
  save_checkpoint(path, ck);
}

ModelGraph load_model(const std::filesystem::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (!ck.meta.contains("model")) throw std::runtime_error("checkpoint " + path.string() + " has no model config");
  ModelGraph m = ModelGraph::build(model_config_from_json(ck.meta.at("model")), 0);
  load_parameters(ck, m.params());
  return m;
}

}  // namespace ssk
