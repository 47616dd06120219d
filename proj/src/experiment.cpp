#include "ssk/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "ssk/checkpoint.hpp"
#include "ssk/hash.hpp"
#include "ssk/log.hpp"
#include "ssk/ops.hpp"
#include "ssk/rng.hpp"

namespace ssk {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

std::string to_string(TrainSteps s) {
  switch (s) {
    case TrainSteps::Both:
      return "both";
    case TrainSteps::BaselineOnly:
      return "baseline";
    case TrainSteps::ConvLSTMOnly:
      return "convlstm";
  }
  throw std::logic_error("bad TrainSteps");
}

OptimizerConfig desk_baseline_optim() {
  OptimizerConfig o;
  o.base_lr = 0.003;
  return o;
}

OptimizerConfig desk_convlstm_optim() {
  OptimizerConfig o;
  o.base_lr = 3e-7;
  o.freeze_others = true;
  return o;
}

TrainSteps parse_train_steps(const std::string& s) {
  if (s == "both") return TrainSteps::Both;
  if (s == "baseline") return TrainSteps::BaselineOnly;
  if (s == "convlstm") return TrainSteps::ConvLSTMOnly;
  throw std::invalid_argument("unknown train steps '" + s + "' (expected both, baseline or convlstm)");
}

json to_json(const TrainConfig& c) {
  return {{"steps", to_string(c.steps)},
          {"batch_windows", c.batch_windows},
          {"baseline_epochs", c.baseline_epochs},
          {"convlstm_epochs", c.convlstm_epochs},
          {"baseline_optim", to_json(c.baseline_optim)},
          {"init_checkpoint", c.init_checkpoint},
          {"cache_frozen_features", c.cache_frozen_features}};
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j,
                 {"steps", "batch_windows", "baseline_epochs", "convlstm_epochs", "baseline_optim", "init_checkpoint",
                  "cache_frozen_features"},
                 "train config");
  TrainConfig c;
  c.steps = parse_train_steps(j.value("steps", to_string(c.steps)));
  c.batch_windows = j.value("batch_windows", c.batch_windows);
  c.baseline_epochs = j.value("baseline_epochs", c.baseline_epochs);
  c.convlstm_epochs = j.value("convlstm_epochs", c.convlstm_epochs);
  if (j.contains("baseline_optim")) c.baseline_optim = optimizer_config_from_json(j["baseline_optim"]);
  c.init_checkpoint = j.value("init_checkpoint", c.init_checkpoint);
  c.cache_frozen_features = j.value("cache_frozen_features", c.cache_frozen_features);
  return c;
}

void ExperimentConfig::validate() const {
  model.validate();
  if (model.convlstm) {
    throw std::invalid_argument("experiment model must describe the step-1 FCN (convlstm: false); conversion is step 2");
  }
  loss.validate();
  // total_steps 0 is filled in per stage from the epoch count.
  auto check_optim = [](OptimizerConfig o) {
    if (o.total_steps == 0) o.total_steps = 1;
    o.validate();
  };
  check_optim(optim);
  check_optim(train.baseline_optim);
  if (manifest.empty()) data.validate();
  cascade.validate();
  if (train.batch_windows == 0) throw std::invalid_argument("train.batch_windows must be positive");
  if (model.time_steps == 0) throw std::invalid_argument("model.time_steps must be positive");
  if (cascade.window != model.time_steps) {
    throw std::invalid_argument("cascade.window (" + std::to_string(cascade.window) + ") must equal model.time_steps (" +
                                std::to_string(model.time_steps) + ")");
  }
  if (train.steps == TrainSteps::ConvLSTMOnly && train.init_checkpoint.empty()) {
    throw std::invalid_argument("train.steps = convlstm needs train.init_checkpoint");
  }
}

json to_json(const ExperimentConfig& c) {
  return {{"seed", c.seed},        {"model", to_json(c.model)},     {"loss", to_json(c.loss)},
          {"optim", to_json(c.optim)}, {"data", to_json(c.data)},   {"manifest", c.manifest},
          {"cascade", to_json(c.cascade)}, {"train", to_json(c.train)}, {"output_dir", c.output_dir}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  reject_unknown(j,
                 {"seed", "model", "loss", "optim", "data", "manifest", "cascade", "train", "output_dir", "comment"},
                 "experiment config");
  ExperimentConfig c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("model")) c.model = model_config_from_json(j["model"]);
  if (j.contains("loss")) c.loss = loss_config_from_json(j["loss"]);
  if (j.contains("optim")) c.optim = optimizer_config_from_json(j["optim"]);
  if (j.contains("data")) c.data = synth_config_from_json(j["data"]);
  c.manifest = j.value("manifest", c.manifest);
  if (j.contains("cascade")) c.cascade = cascade_config_from_json(j["cascade"]);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

ExperimentConfig full_scale_config() {
  ExperimentConfig c;
  c.seed = 1;
  c.model.name = "fcn-resnet50";
  c.model.input_height = 320;
  c.model.input_width = 320;
  c.model.layers = json::parse(R"([
    {"name": "conv1", "kind": "conv", "kernel": 7, "stride": 2, "out_channels": 64, "relu": true},
    {"name": "pool1", "kind": "maxpool", "kernel": 3, "stride": 2, "padding": "valid"},
    {"name": "conv2", "kind": "bottleneck", "channels": [64, 64, 256], "repeat": 3},
    {"name": "conv3", "kind": "bottleneck", "channels": [128, 128, 512], "repeat": 4, "stride": 2},
    {"name": "conv4", "kind": "bottleneck", "channels": [256, 256, 1024], "repeat": 6, "stride": 2},
    {"name": "conv5", "kind": "bottleneck", "channels": [512, 512, 2048], "repeat": 3, "dilation": 2},
    {"name": "conv6", "kind": "conv", "kernel": 1},
    {"name": "upsample", "kind": "upsample"}
  ])");
  c.model.time_steps = 5;
  c.model.convlstm_init = ConvLSTMInit::Random;
  c.loss = {LossKind::Segmentation, SegVariant::Linear, 0.0, true};
  c.optim = OptimizerConfig{};
  c.optim.base_lr = 0.001;
  c.optim.gamma = 0.05;
  c.data.width = 320;
  c.data.height = 320;
  c.data.train_clips = 619;
  c.data.val_clips = 58;
  c.data.test_clips = 80;
  c.train.batch_windows = 2;
  c.train.baseline_epochs = 80;
  c.train.convlstm_epochs = 60;
  c.train.baseline_optim = OptimizerConfig{};
  c.train.baseline_optim.base_lr = 0.001;
  c.train.cache_frozen_features = false;
  return c;
}

Dataset load_experiment_data(const ExperimentConfig& cfg) {
  Dataset ds = cfg.manifest.empty() ? synth_video_generate(cfg.data) : load_dataset(cfg.manifest);
  ds.validate();
  return ds;
}

ExperimentConfig region_experiment_config(const ExperimentConfig& cfg, RegionKind kind) {
  ExperimentConfig out = cfg;
  const CropConfig& crop = kind == RegionKind::Eyes ? cfg.cascade.eyes : cfg.cascade.mouth;
  out.model.name = cfg.model.name + "-" + to_string(kind);
  out.model.input_width = crop.width;
  out.model.input_height = crop.height;
  out.model.num_classes = region_classes(kind).size() + 1;
  out.validate();
  return out;
}

Dataset region_dataset(const Dataset& ds, RegionKind kind, const CascadeConfig& cascade, std::uint64_t seed) {
  const CropConfig& crop = kind == RegionKind::Eyes ? cascade.eyes : cascade.mouth;
  Dataset out;
  Rng rng(seed);
  for (const char* split : {"train", "val", "test"}) {
    const auto clips = ds.split(split);
    const double noise = std::string(split) == "train" ? crop.noise : 0.0;
    Dataset part = make_region_dataset(clips, kind, crop, cascade.window, noise, rng.next_u64());
    for (auto& c : part.clips) out.clips.push_back(std::move(c));
  }
  return out;
}

std::string dataset_digest(const Dataset& ds) {
  std::string buf;
  for (const auto& c : ds.clips) {
    buf += c.id + '\n' + c.subject + '\n' + c.split + '\n' + std::to_string(c.length()) + ' ' +
           std::to_string(c.width()) + ' ' + std::to_string(c.height()) + '\n';
    for (const auto& f : c.frames) buf.append(reinterpret_cast<const char*>(f.rgb.data()), f.rgb.size());
    for (const auto& m : c.masks) buf.append(reinterpret_cast<const char*>(m.labels.data()), m.labels.size());
  }
  return git_blob_sha1(buf);
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<double> EvalResult::position_miou() const {
  std::vector<double> out;
  for (const auto& cm : per_position) out.push_back(cm.total() ? mean_iou(cm, true).miou : std::nan(""));
  return out;
}

namespace {

// Probabilities [window, C, h, w] for frames [start, start + window) of a clip.
using WindowProbs = std::function<Tensor(std::size_t clip, std::size_t start)>;

Tensor concat_frames(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_frames: nothing to join");
  Shape s = parts.front().shape();
  std::vector<double> data;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != Shape(s.begin() + 1, s.end())) {
      throw std::invalid_argument("concat_frames: mismatched shapes");
    }
    n += p.dim(0);
    data.insert(data.end(), p.vec().begin(), p.vec().end());
  }
  s[0] = n;
  return Tensor(std::move(s), std::move(data));
}

void init_result(EvalResult& r, std::span<const Clip* const> clips, std::size_t window, std::size_t classes) {
  r.confusion = ConfusionMatrix(classes);
  r.per_position.assign(window, ConfusionMatrix(classes));
  for (const Clip* c : clips) {
    r.clip_ids.push_back(c->id);
    r.clip_subjects.push_back(c->subject);
    r.per_clip.emplace_back(classes);
  }
}

void finish_result(EvalResult& r) {
  r.iou = r.confusion.total() ? mean_iou(r.confusion, true) : IouResult{};
}

std::size_t usable_frames(const Clip& c, std::size_t window) {
  const std::size_t n = c.length() / window * window;
  if (n != c.length()) {
    log_warn("clip " + c.id + ": last " + std::to_string(c.length() - n) + " frame(s) do not fill a " +
             std::to_string(window) + "-frame window and are not evaluated");
  }
  return n;
}

EvalResult evaluate_with(std::span<const Clip* const> clips, std::size_t classes, const WindowProbs& probs_of,
                         const EvalOptions& opts) {
  if (opts.window == 0) throw std::invalid_argument("evaluate: window must be positive");
  EvalResult r;
  init_result(r, clips, opts.window, classes);
  for (std::size_t ci = 0; ci < clips.size(); ++ci) {
    const Clip& c = *clips[ci];
    const std::size_t n = usable_frames(c, opts.window);
    if (n == 0) continue;
    std::vector<Tensor> parts;
    for (std::size_t s = 0; s < n; s += opts.window) parts.push_back(probs_of(ci, s));
    Tensor probs = concat_frames(parts);
    if (probs.dim(1) != classes) throw std::invalid_argument("evaluate: model class count does not match");
    if (opts.smooth) probs = temporal_smooth(probs, opts.smooth_window, opts.smooth_sigma);
    auto masks = probs_to_masks(probs, c.width(), c.height());
    for (std::size_t t = 0; t < n; ++t) {
      r.confusion.accumulate(c.masks[t], masks[t]);
      r.per_position[t % opts.window].accumulate(c.masks[t], masks[t]);
      r.per_clip[ci].accumulate(c.masks[t], masks[t]);
    }
    if (opts.keep_predictions) r.predictions.push_back(std::move(masks));
  }
  finish_result(r);
  return r;
}

}  // namespace

EvalResult evaluate(ModelGraph& model, std::span<const Clip* const> clips, const EvalOptions& opts) {
  if (opts.window % model.time_steps() != 0) {
    throw std::invalid_argument("evaluate: window must be a multiple of the model's time steps");
  }
  return evaluate_with(
      clips, model.num_classes(),
      [&](std::size_t ci, std::size_t s) {
        return predict_probs(model, std::span<const Image>(clips[ci]->frames).subspan(s, opts.window));
      },
      opts);
}

EvalResult evaluate_predictions(std::span<const Clip* const> clips, const std::vector<std::vector<MaskFrame>>& preds,
                                std::size_t window) {
  if (window == 0) throw std::invalid_argument("evaluate_predictions: window must be positive");
  if (preds.size() != clips.size()) throw std::invalid_argument("evaluate_predictions: one prediction list per clip");
  EvalResult r;
  init_result(r, clips, window, kNumFaceClasses);
  for (std::size_t ci = 0; ci < clips.size(); ++ci) {
    const Clip& c = *clips[ci];
    const std::size_t n = usable_frames(c, window);
    if (preds[ci].size() < n) throw std::invalid_argument("evaluate_predictions: too few frames for clip " + c.id);
    for (std::size_t t = 0; t < n; ++t) {
      const MaskFrame& p = preds[ci][t];
      if (p.width != c.masks[t].width || p.height != c.masks[t].height) {
        throw std::invalid_argument("evaluate_predictions: prediction size differs from clip " + c.id);
      }
      r.confusion.accumulate(c.masks[t], p);
      r.per_position[t % window].accumulate(c.masks[t], p);
      r.per_clip[ci].accumulate(c.masks[t], p);
    }
  }
  finish_result(r);
  return r;
}

SignificanceResult compare_grouped(const EvalResult& model, const EvalResult& baseline, std::size_t groups,
                                   std::uint64_t seed, Tail tail) {
  if (model.clip_ids != baseline.clip_ids) throw std::invalid_argument("compare_grouped: evaluations cover different clips");
  if (groups < 2 || groups > model.clip_ids.size()) {
    throw std::invalid_argument("compare_grouped: need 2 <= groups <= clips");
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < model.clip_ids.size(); ++i) index[model.clip_ids[i]] = i;
  std::vector<double> a, b;
  for (const auto& g : group_split(model.clip_ids, groups, seed)) {
    ConfusionMatrix cm_a(model.confusion.num_classes()), cm_b(baseline.confusion.num_classes());
    for (const auto& id : g) {
      cm_a.merge(model.per_clip[index.at(id)]);
      cm_b.merge(baseline.per_clip[index.at(id)]);
    }
    a.push_back(mean_iou(cm_a, true).miou);
    b.push_back(mean_iou(cm_b, true).miou);
  }
  return grouped_significance(a, b, 0.05, tail);
}

CascadeEval evaluate_cascade(CascadeBundle& bundle, std::span<const Clip* const> clips) {
  const std::size_t T = bundle.config.window;
  std::vector<std::vector<MaskFrame>> primary, integrated;
  for (const Clip* c : clips) {
    const std::size_t n = usable_frames(*c, T);
    if (n == 0) {
      primary.emplace_back();
      integrated.emplace_back();
      continue;
    }
    auto res = run_cascade(bundle, std::span<const Image>(c->frames).first(n));
    primary.push_back(std::move(res.primary));
    integrated.push_back(std::move(res.integrated));
  }
  return {evaluate_predictions(clips, primary, T), evaluate_predictions(clips, integrated, T)};
}

namespace {

double miou_or_nan(const ConfusionMatrix& cm) {
  if (cm.total() == 0) return std::nan("");
  try {
    return mean_iou(cm, true).miou;
  } catch (const std::invalid_argument&) {
    return std::nan("");
  }
}

}  // namespace

std::vector<std::vector<double>> clip_position_miou(std::span<const Clip* const> clips,
                                                    const std::vector<std::vector<MaskFrame>>& preds,
                                                    std::size_t window) {
  if (preds.size() != clips.size()) throw std::invalid_argument("clip_position_miou: one prediction list per clip");
  std::vector<std::vector<double>> out;
  for (std::size_t ci = 0; ci < clips.size(); ++ci) {
    std::vector<ConfusionMatrix> pos(window, ConfusionMatrix(kNumFaceClasses));
    for (std::size_t t = 0; t < preds[ci].size(); ++t) pos[t % window].accumulate(clips[ci]->masks[t], preds[ci][t]);
    std::vector<double> row;
    for (const auto& cm : pos) row.push_back(miou_or_nan(cm));
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<std::pair<std::string, double>> frame_miou_by_subject(std::span<const Clip* const> clips,
                                                                  const std::vector<std::vector<MaskFrame>>& preds) {
  if (preds.size() != clips.size()) throw std::invalid_argument("frame_miou_by_subject: one prediction list per clip");
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t ci = 0; ci < clips.size(); ++ci) {
    for (std::size_t t = 0; t < preds[ci].size(); ++t) {
      ConfusionMatrix cm(kNumFaceClasses);
      cm.accumulate(clips[ci]->masks[t], preds[ci][t]);
      out.emplace_back(clips[ci]->subject, miou_or_nan(cm));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

// True when no parameter before the classifier head can change.
bool encoder_frozen(const ModelGraph& m, const OptimizerConfig& oc) {
  const std::size_t head = m.head_start();
  for (std::size_t i = 0; i < head; ++i) {
    const auto& l = m.layers()[i];
    for (const auto& p : m.params().items()) {
      if (p.name.rfind(l.name + "/", 0) == 0 && !oc.frozen(p.group)) return false;
    }
  }
  return true;
}

struct CachedWindow {
  Tensor input;
  std::vector<std::uint8_t> labels;
};

json window_list(std::span<const Clip* const> clips, std::span<const Window> ws) {
  json out = json::array();
  for (const auto& w : ws) out.push_back({{"clip", clips[w.clip]->id}, {"start", w.start}});
  return out;
}

[[noreturn]] void nan_abort(const StageOptions& opts, std::size_t epoch, std::size_t step, double loss,
                            std::span<const Clip* const> clips, std::span<const Window> ws, const Tensor& input,
                            std::span<const std::uint8_t> labels, const ModelGraph& model, const Optimizer& opt) {
  std::string msg = "non-finite loss " + std::to_string(loss) + " in stage '" + opts.name + "' at epoch " +
                    std::to_string(epoch) + ", step " + std::to_string(step);
  if (!opts.dump_dir.empty()) {
    json bad = json::array();
    for (const auto& p : model.params().items())
      if (!p.value.all_finite()) bad.push_back(p.name);
    std::vector<std::size_t> hist(256, 0);
    for (auto l : labels) ++hist[l];
    while (!hist.empty() && hist.back() == 0) hist.pop_back();
    double lo = 0, hi = 0;
    if (!input.empty()) {
      lo = hi = input[0];
      for (double v : input.data()) lo = std::min(lo, v), hi = std::max(hi, v);
    }
    json dump = {{"stage", opts.name},
                 {"epoch", epoch},
                 {"step", step},
                 {"loss", std::isfinite(loss) ? json(loss) : json(std::to_string(loss))},
                 {"windows", window_list(clips, ws)},
                 {"input_shape", input.shape()},
                 {"input_finite", input.all_finite()},
                 {"input_min", lo},
                 {"input_max", hi},
                 {"label_histogram", hist},
                 {"non_finite_params", bad},
                 {"base_lr", decayed_lr(opt.step_count(), opt.config())},
                 {"loss_config", to_json(opts.loss)}};
    fs::create_directories(opts.dump_dir);
    write_text(opts.dump_dir / "nan_dump.json", dump.dump(2) + "\n");
    Checkpoint batch;
    batch.meta = {{"what", "offending batch"}};
    batch.put("input", input);
    Tensor lab({labels.size()});
    for (std::size_t i = 0; i < labels.size(); ++i) lab[i] = labels[i];
    batch.put("labels", std::move(lab));
    save_checkpoint(opts.dump_dir / "nan_batch.ssk", batch);
    msg += "; diagnostics in " + (opts.dump_dir / "nan_dump.json").string();
  }
  throw std::runtime_error(msg);
}

}  // namespace

ModelGraph train_stage(ModelGraph model, std::span<const Clip* const> train, std::span<const Clip* const> val,
                       const StageOptions& opts, std::vector<EpochRecord>& history) {
  if (train.empty()) throw std::invalid_argument("train_stage: no training clips");
  if (opts.window == 0 || opts.batch_windows == 0) throw std::invalid_argument("train_stage: empty batches");
  if (opts.window % model.time_steps() != 0) {
    throw std::invalid_argument("train_stage: window must be a multiple of the model's time steps");
  }
  opts.loss.validate();
  const auto& mc = model.config();
  const std::size_t T = opts.window, N = opts.batch_windows;

  const auto all_windows = sequence_windows(train, T);
  if (all_windows.empty()) throw std::invalid_argument("train_stage: no clip holds a full window");
  const std::size_t per_epoch = (all_windows.size() + N - 1) / N;

  OptimizerConfig oc = opts.optim;
  if (oc.decay && oc.total_steps == 0) oc.total_steps = std::max<std::size_t>(1, per_epoch * opts.epochs);
  Optimizer opt(oc);
  const TrainablePredicate trainable = [&oc](const Parameter& p) { return !oc.frozen(p.group); };

  // With a frozen encoder its output never changes: compute it once.
  const bool cache = opts.cache_features && encoder_frozen(model, oc);
  const std::size_t from = cache ? model.head_start() : 0;
  std::map<std::pair<std::size_t, std::size_t>, CachedWindow> train_cache;
  std::vector<std::vector<Tensor>> val_cache;
  if (cache) {
    for (const auto& w : all_windows) {
      Batch b = make_batch(train, std::span<const Window>(&w, 1), T, mc.input_width, mc.input_height);
      train_cache[{w.clip, w.start}] = {model.predict(b.images, 0, from), std::move(b.labels)};
    }
    for (const Clip* c : val) {
      std::vector<Tensor> feats;
      for (std::size_t s = 0; s + T <= c->length(); s += T) {
        Tensor x({T, mc.in_channels, mc.input_height, mc.input_width});
        for (std::size_t t = 0; t < T; ++t) {
          const Image& f = c->frames[s + t];
          const bool same = f.width == mc.input_width && f.height == mc.input_height;
          image_to_tensor(same ? f : resize_bilinear(f, mc.input_width, mc.input_height), x, t);
        }
        feats.push_back(model.predict(x, 0, from));
      }
      val_cache.push_back(std::move(feats));
    }
    log_info("stage " + opts.name + ": encoder frozen, features cached for " + std::to_string(train_cache.size()) +
             " windows");
  }

  auto validate_model = [&]() -> double {
    if (val.empty()) return std::nan("");
    EvalOptions eo;
    eo.window = T;
    EvalResult r =
        cache ? evaluate_with(
                    val, model.num_classes(),
                    [&](std::size_t ci, std::size_t s) { return softmax_channels(model.predict(val_cache[ci][s / T], from)); },
                    eo)
              : evaluate(model, val, eo);
    return r.confusion.total() ? r.iou.miou : std::nan("");
  };

  ParameterStore best = model.params();
  double best_miou = -1;
  bool have_best = false;
  Rng shuffle_rng(opts.seed);
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    const auto batches = batch_sequences(train, T, N, shuffle_rng.next_u64());
    double loss_sum = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& ws = batches[bi];
      Tensor input;
      std::vector<std::uint8_t> labels;
      if (cache) {
        std::vector<Tensor> parts;
        for (const auto& w : ws) {
          const auto& cw = train_cache.at({w.clip, w.start});
          parts.push_back(cw.input);
          labels.insert(labels.end(), cw.labels.begin(), cw.labels.end());
        }
        input = concat_frames(parts);
      } else {
        Batch b = make_batch(train, ws, T, mc.input_width, mc.input_height);
        input = std::move(b.images);
        labels = std::move(b.labels);
      }
      Tape tape;
      Var scores = model.forward(tape, tape.constant(input), trainable, from);
      Var loss = compute_loss(scores, labels, opts.loss);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) nan_abort(opts, epoch, opt.step_count(), lv, train, ws, input, labels, model, opt);
      tape.backward(loss);
      opt.step(model.params());
      model.params().zero_grad();
      loss_sum += lv;
    }
    EpochRecord rec{opts.name, epoch, opt.step_count(), batches.empty() ? 0.0 : loss_sum / double(batches.size()),
                    validate_model()};
    history.push_back(rec);
    char line[160];
    std::snprintf(line, sizeof line, "%s epoch %zu/%zu: loss %.5f, val mIoU %.4f", opts.name.c_str(), epoch,
                  opts.epochs, rec.train_loss, rec.val_miou);
    log_info(line);
    if (std::isnan(rec.val_miou) || rec.val_miou > best_miou) {
      best = model.params();
      best_miou = std::isnan(rec.val_miou) ? best_miou : rec.val_miou;
      have_best = true;
    }
  }
  if (have_best) model.params() = std::move(best);
  return model;
}

std::string metrics_csv(const std::vector<EpochRecord>& history) {
  std::string out = "stage,epoch,steps,train_loss,val_miou\n";
  for (const auto& r : history) {
    char line[256];
    std::snprintf(line, sizeof line, "%s,%zu,%zu,%.17g,%.17g\n", r.stage.c_str(), r.epoch, r.steps, r.train_loss,
                  r.val_miou);
    out += line;
  }
  return out;
}

TrainResult run_experiment(const ExperimentConfig& cfg, const Dataset& ds) {
  cfg.validate();
  ds.validate();
  const auto train = ds.split("train");
  const auto val = ds.split("val");
  if (val.empty()) log_warn("no validation clips; the last epoch of each stage is kept");

  TrainResult res;
  json hashed = to_json(cfg);
  hashed.erase("output_dir");
  const std::string data_digest = dataset_digest(ds);
  res.input_hash = git_blob_sha1(json{{"config", hashed}, {"data", data_digest}}.dump());

  const fs::path dir = cfg.output_dir;
  if (!dir.empty()) {
    fs::create_directories(dir);
    write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
  }

  Rng master(cfg.seed);
  Rng init_rng = master.fork(1), shuffle1 = master.fork(2), convert_rng = master.fork(3), shuffle2 = master.fork(4);
  const std::size_t T = cfg.model.time_steps;
  json stages = json::object();

  if (cfg.train.steps == TrainSteps::ConvLSTMOnly) {
    res.baseline = load_model(cfg.train.init_checkpoint);
    if (res.baseline.has_convlstm()) throw std::invalid_argument("init_checkpoint already holds a ConvLSTM-FCN");
    if (res.baseline.num_classes() != cfg.model.num_classes) {
      throw std::invalid_argument("init_checkpoint class count does not match the config");
    }
  } else {
    StageOptions so;
    so.name = "baseline";
    so.loss = LossConfig{LossKind::CrossEntropy};
    so.optim = cfg.train.baseline_optim;
    so.epochs = cfg.train.baseline_epochs;
    so.window = T;
    so.batch_windows = cfg.train.batch_windows;
    so.seed = shuffle1.next_u64();
    so.cache_features = false;
    so.dump_dir = dir;
    res.baseline = train_stage(ModelGraph::build(cfg.model, init_rng.next_u64()), train, val, so, res.history);
    stages["baseline"] = {{"epochs", so.epochs}, {"steps", res.history.empty() ? 0 : res.history.back().steps}};
  }

  if (cfg.train.steps != TrainSteps::BaselineOnly) {
    ModelGraph converted = convert_to_convlstm_fcn(res.baseline, T, cfg.model.peephole, cfg.model.convlstm_init,
                                                   cfg.model.seed_scale, convert_rng.next_u64());
    StageOptions so;
    so.name = "convlstm";
    so.loss = cfg.loss;
    so.optim = cfg.optim;
    so.epochs = cfg.train.convlstm_epochs;
    so.window = T;
    so.batch_windows = cfg.train.batch_windows;
    so.seed = shuffle2.next_u64();
    so.cache_features = cfg.train.cache_frozen_features;
    so.dump_dir = dir;
    const std::size_t before = res.history.size();
    res.model = train_stage(std::move(converted), train, val, so, res.history);
    res.has_model = true;
    stages["convlstm"] = {{"epochs", so.epochs},
                          {"steps", res.history.size() > before ? res.history.back().steps : 0}};
  }

  if (!dir.empty()) {
    const json meta = {{"input_hash", res.input_hash}, {"seed", cfg.seed}};
    save_model(dir / "baseline.ssk", res.baseline, meta);
    if (res.has_model) save_model(dir / "model.ssk", res.model, meta);
    write_text(dir / "metrics.csv", metrics_csv(res.history));
    json best = json::object();
    for (const auto& r : res.history) {
      if (!best.contains(r.stage) || r.val_miou > best[r.stage]["val_miou"].get<double>()) {
        best[r.stage] = {{"epoch", r.epoch}, {"val_miou", std::isfinite(r.val_miou) ? r.val_miou : -1.0}};
      }
    }
    const json run = {{"seed", cfg.seed},
                      {"input_hash", res.input_hash},
                      {"dataset_digest", data_digest},
                      {"train_clips", train.size()},
                      {"val_clips", val.size()},
                      {"stages", stages},
                      {"best_epochs", best},
                      {"lr_schedule", "linear decay to zero, applied per optimizer step over the stage's total steps"},
                      {"selection", "parameters with the highest validation mIoU (background excluded) per stage"}};
    write_text(dir / "run.json", run.dump(2) + "\n");
  }
  return res;
}

}  // namespace ssk
