// Command-line front end: dataset generation, landmark conversion, training,
// evaluation and diagnostics. Every command prints JSON (or CSV on request)
// to stdout; failures print {"error": {...}} and exit nonzero.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssk/cascade.hpp"
#include "ssk/dataset.hpp"
#include "ssk/experiment.hpp"
#include "ssk/gradcheck_suite.hpp"
#include "ssk/hash.hpp"
#include "ssk/image.hpp"
#include "ssk/landmarks.hpp"
#include "ssk/log.hpp"
#include "ssk/metrics.hpp"
#include "ssk/models.hpp"
#include "ssk/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ssk;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// "7" -> 7, "true" -> true, "[1,2]" -> array; anything else stays a string.
json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void set_path(json& j, const std::string& dotted, json value) {
  json* cur = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot - start);
    if (key.empty()) throw std::invalid_argument("bad config key '" + dotted + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = std::move(value);
      return;
    }
    if (!cur->contains(key) || !(*cur)[key].is_object()) (*cur)[key] = json::object();
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("SSK_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw std::invalid_argument(std::string("SSK_SEED is not an unsigned integer: ") + s);
  return v;
}

// Flags named after config keys ("--optim.base_lr 0.01") plus generic
// "--set key.path=value" overrides, applied over a base config.
class ConfigFlags {
 public:
  void attach(CLI::App* app, const std::vector<std::string>& keys, const std::string& prefix = "") {
    prefix_ = prefix;
    values_.resize(keys.size());
    keys_ = keys;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      app->add_option("--" + keys[i], values_[i], "Override config key " + prefix + keys[i]);
    }
    app->add_option("--set", sets_, "Override any config key: key.path=value (repeatable)");
  }

  void apply(json& j) const {
    static const std::set<std::string> list_keys{"optim.freeze", "model.widths", "data.occluder_phases",
                                                 "freeze", "widths", "occluder_phases"};
    auto put = [&](const std::string& key, const std::string& raw) {
      json v = parse_scalar(raw);
      const std::string last = key.substr(key.rfind('.') == std::string::npos ? 0 : key.rfind('.') + 1);
      if (v.is_string() && (list_keys.count(key) || list_keys.count(last))) {
        json arr = json::array();
        for (const auto& part : split_csv(v.get<std::string>())) arr.push_back(parse_scalar(part));
        v = arr;
      } else if (v.is_number() && (list_keys.count(key) || list_keys.count(last))) {
        v = json::array({v});
      }
      set_path(j, prefix_ + key, std::move(v));
    };
    for (std::size_t i = 0; i < keys_.size(); ++i)
      if (values_[i]) put(keys_[i], *values_[i]);
    for (const auto& s : sets_) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
      put(s.substr(0, eq), s.substr(eq + 1));
    }
  }

 private:
  std::string prefix_;
  std::vector<std::string> keys_;
  std::vector<std::optional<std::string>> values_;
  std::vector<std::string> sets_;
};

const std::vector<std::string> kExperimentKeys = {
    "seed",
    "output_dir",
    "manifest",
    "model.name",
    "model.input_height",
    "model.input_width",
    "model.widths",
    "model.output_stride",
    "model.time_steps",
    "model.peephole",
    "model.convlstm_init",
    "model.seed_scale",
    "loss.kind",
    "loss.variant",
    "loss.margin",
    "loss.include_background",
    "optim.kind",
    "optim.base_lr",
    "optim.gamma",
    "optim.decay",
    "optim.total_steps",
    "optim.freeze",
    "data.seed",
    "data.width",
    "data.height",
    "data.frames_per_clip",
    "data.train_clips",
    "data.val_clips",
    "data.test_clips",
    "data.noise_sigma",
    "data.occluder_prob",
    "cascade.window",
    "train.steps",
    "train.batch_windows",
    "train.baseline_epochs",
    "train.convlstm_epochs",
    "train.init_checkpoint",
    "train.cache_frozen_features",
    "train.baseline_optim.base_lr",
};

const std::vector<std::string> kSynthKeys = {
    "seed",        "width",          "height",       "frames_per_clip", "train_clips",
    "val_clips",   "test_clips",     "train_subjects", "val_subjects",  "test_subjects",
    "fps",         "noise_sigma",    "occluder_prob", "occluder_period", "occluder_phases",
};

struct ExperimentSource {
  std::string config_path;
  bool full_scale = false;
  ConfigFlags flags;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "Experiment config JSON");
    app->add_flag("--full-scale", full_scale,
                  "Start from the full-scale protocol values (not runnable on a laptop CPU)");
    flags.attach(app, kExperimentKeys);
  }

  ExperimentConfig resolve() const {
    if (full_scale && !config_path.empty()) throw std::invalid_argument("--full-scale and --config are exclusive");
    json j = full_scale ? to_json(full_scale_config())
                         : config_path.empty() ? to_json(ExperimentConfig{}) : read_json_file(config_path);
    flags.apply(j);
    if (auto s = env_seed()) j["seed"] = *s;
    return experiment_config_from_json(j);
  }
};

std::optional<RegionKind> parse_region(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "eyes") return RegionKind::Eyes;
  if (s == "mouth") return RegionKind::Mouth;
  throw std::invalid_argument("unknown region '" + s + "' (expected eyes or mouth)");
}

std::vector<const Clip*> split_or_throw(const Dataset& ds, const std::string& split) {
  auto clips = ds.split(split);
  if (clips.empty()) throw std::invalid_argument("dataset has no '" + split + "' clips");
  return clips;
}

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// ---------------------------------------------------------------------------

struct SynthCmd {
  std::string config_path;
  std::string out;
  ConfigFlags flags;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "Synth config JSON, or an experiment config (its data section)");
    app->add_option("--out", out, "Output directory")->required();
    flags.attach(app, kSynthKeys);
  }

  json run() const {
    json j = json::object();
    if (!config_path.empty()) {
      j = read_json_file(config_path);
      if (j.contains("data")) j = j["data"];
    }
    flags.apply(j);
    if (auto s = env_seed()) j["seed"] = *s;
    const SynthConfig cfg = synth_config_from_json(j);
    const Dataset ds = synth_video_generate(cfg);
    ds.validate();
    write_dataset(ds, out, to_json(cfg));
    std::size_t frames = 0;
    for (const auto& c : ds.clips) frames += c.length();
    return {{"manifest", (fs::path(out) / "manifest.json").string()},
            {"clips", ds.clips.size()},
            {"frames", frames},
            {"seed", cfg.seed},
            {"digest", dataset_digest(ds)}};
  }
};

struct ConvertCmd {
  std::vector<std::string> pts;
  std::size_t width = 0, height = 0, samples = 8;
  std::string out;

  void attach(CLI::App* app) {
    app->add_option("--pts", pts, "68-point landmark files")->required()->check(CLI::ExistingFile);
    app->add_option("--width", width, "Mask width")->required();
    app->add_option("--height", height, "Mask height")->required();
    app->add_option("--samples", samples, "Spline samples per landmark segment");
    app->add_option("--out", out, "Output directory for mask PNGs")->required();
  }

  json run() const {
    fs::create_directories(out);
    json rows = json::array();
    for (const auto& p : pts) {
      const MaskFrame m = landmarks_to_mask(read_pts(p), width, height, samples);
      const fs::path dst = fs::path(out) / (fs::path(p).stem().string() + ".png");
      write_png(dst, m);
      json counts = json::object();
      for (std::size_t c = 0; c < kNumFaceClasses; ++c) counts[std::string(kFaceClassNames[c])] = m.count(std::uint8_t(c));
      rows.push_back({{"pts", p},
                      {"mask", dst.string()},
                      {"sha1", git_blob_sha1(std::string_view(reinterpret_cast<const char*>(m.labels.data()), m.labels.size()))},
                      {"pixels", counts}});
    }
    return {{"masks", rows}};
  }
};

struct TrainCmd {
  ExperimentSource src;
  std::string region;
  bool dry_run = false;

  void attach(CLI::App* app) {
    src.attach(app);
    app->add_option("--region", region, "Train a zoomed-in region model instead: eyes or mouth");
    app->add_flag("--dry-run", dry_run, "Print the resolved config and exit");
  }

  json run() const {
    ExperimentConfig cfg = src.resolve();
    const auto kind = parse_region(region);
    if (kind) cfg = region_experiment_config(cfg, *kind);
    if (dry_run) return {{"config", to_json(cfg)}};
    if (cfg.output_dir.empty()) throw std::invalid_argument("train needs an output directory (--output_dir)");
    if (src.full_scale) log_warn("full-scale configuration: expect days of CPU time and tens of GB of memory");
    Dataset ds = load_experiment_data(cfg);
    if (kind) ds = region_dataset(ds, *kind, cfg.cascade, cfg.seed);
    TrainResult res = run_experiment(cfg, ds);
    const auto test = ds.split("test");
    json report = {{"output_dir", cfg.output_dir},
                   {"input_hash", res.input_hash},
                   {"checkpoint", (fs::path(cfg.output_dir) / (res.has_model ? "model.ssk" : "baseline.ssk")).string()}};
    json hist = json::array();
    for (const auto& r : res.history)
      hist.push_back({{"stage", r.stage}, {"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_miou", nan_to_null(r.val_miou)}});
    report["history"] = hist;
    if (!test.empty()) {
      EvalOptions eo;
      eo.window = cfg.cascade.window;
      const auto names = kind ? std::vector<std::string_view>{} : std::vector<std::string_view>(kFaceClassNames.begin(), kFaceClassNames.end());
      auto iou_json = [&](const IouResult& r) {
        if (!kind) return to_json(r);
        json j = {{"miou", r.miou}, {"per_class", json::array()}};
        for (double v : r.per_class) j["per_class"].push_back(nan_to_null(v));
        return j;
      };
      report["test"] = {{"baseline", iou_json(evaluate(res.baseline, test, eo).iou)}};
      if (res.has_model) report["test"]["model"] = iou_json(evaluate(res.model, test, eo).iou);
      write_file(fs::path(cfg.output_dir) / "test_eval.json", report["test"].dump(2) + "\n");
    }
    return report;
  }
};

void write_predictions(const fs::path& dir, std::span<const Clip* const> clips,
                       const std::vector<std::vector<MaskFrame>>& preds, const std::string& split) {
  json rows = json::array();
  for (std::size_t ci = 0; ci < clips.size(); ++ci) {
    json frames = json::array();
    for (std::size_t t = 0; t < preds[ci].size(); ++t) {
      char name[32];
      std::snprintf(name, sizeof name, "pred_%03zu.png", t);
      const fs::path rel = fs::path(clips[ci]->id) / name;
      fs::create_directories(dir / clips[ci]->id);
      write_png(dir / rel, preds[ci][t]);
      frames.push_back(rel.generic_string());
    }
    rows.push_back({{"id", clips[ci]->id}, {"frames", frames}});
  }
  write_file(dir / "predictions.json", json{{"split", split}, {"clips", rows}}.dump(2) + "\n");
}

std::vector<std::vector<MaskFrame>> read_predictions(const fs::path& dir, std::span<const Clip* const> clips) {
  const json j = read_json_file(dir / "predictions.json");
  std::map<std::string, std::vector<std::string>> by_id;
  for (const auto& c : j.at("clips")) by_id[c.at("id").get<std::string>()] = c.at("frames").get<std::vector<std::string>>();
  std::vector<std::vector<MaskFrame>> out;
  for (const Clip* c : clips) {
    auto it = by_id.find(c->id);
    if (it == by_id.end()) throw std::invalid_argument("predictions have no clip " + c->id);
    std::vector<MaskFrame> masks;
    for (const auto& f : it->second) masks.push_back(read_png_mask(dir / f));
    out.push_back(std::move(masks));
  }
  return out;
}

struct EvalCmd {
  ExperimentSource src;
  std::string checkpoint, baseline, predictions, dump, split = "test", format = "json", region;
  bool smooth = false, per_subject = false, profile = false;
  std::size_t smooth_window = 5, groups = 0;
  double smooth_sigma = 0.6;
  std::optional<std::uint64_t> group_seed;

  void attach(CLI::App* app) {
    src.attach(app);
    app->add_option("--checkpoint", checkpoint, "Model checkpoint to evaluate");
    app->add_option("--predictions", predictions, "Evaluate a predictions dump directory instead of a checkpoint");
    app->add_option("--baseline", baseline, "Baseline checkpoint for comparisons");
    app->add_option("--split", split, "Dataset split");
    app->add_option("--region", region, "Evaluate a region model on region crops: eyes or mouth");
    app->add_flag("--smooth", smooth, "Temporal smoothing of probabilities before argmax");
    app->add_option("--smooth-window", smooth_window, "Smoothing window (odd)");
    app->add_option("--smooth-sigma", smooth_sigma, "Smoothing Gaussian sigma");
    app->add_option("--groups", groups, "Grouped paired t-test against --baseline with this many groups");
    app->add_option("--group-seed", group_seed, "Seed of the clip-to-group split (default: run seed)");
    app->add_flag("--per-subject", per_subject, "Per-subject frame mIoU report");
    app->add_flag("--profile", profile, "Per-position improvement over --baseline");
    app->add_option("--dump-predictions", dump, "Write the predicted masks here");
    app->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  }

  json run(std::string& csv_out) const {
    const ExperimentConfig cfg = src.resolve();
    const auto kind = parse_region(region);
    if (checkpoint.empty() == predictions.empty()) {
      throw std::invalid_argument("give exactly one of --checkpoint and --predictions");
    }
    if ((groups > 0 || profile) && baseline.empty()) throw std::invalid_argument("--groups and --profile need --baseline");
    Dataset ds = load_experiment_data(cfg);
    if (kind) ds = region_dataset(ds, *kind, cfg.cascade, cfg.seed);
    const auto clips = split_or_throw(ds, split);
    const std::size_t expected_classes = kind ? region_classes(*kind).size() + 1 : kNumFaceClasses;

    EvalOptions eo;
    eo.window = cfg.cascade.window;
    eo.smooth = smooth;
    eo.smooth_window = smooth_window;
    eo.smooth_sigma = smooth_sigma;
    eo.keep_predictions = true;

    auto eval_checkpoint = [&](const std::string& path, const EvalOptions& o) {
      ModelGraph m = load_model(path);
      if (m.num_classes() != expected_classes) {
        throw std::invalid_argument(path + " predicts " + std::to_string(m.num_classes()) + " classes; expected " +
                                    std::to_string(expected_classes));
      }
      return evaluate(m, clips, o);
    };
    EvalResult main;
    if (!predictions.empty()) {
      main = evaluate_predictions(clips, read_predictions(predictions, clips), eo.window);
      main.predictions = read_predictions(predictions, clips);
    } else {
      main = eval_checkpoint(checkpoint, eo);
    }
    if (!dump.empty()) write_predictions(dump, clips, main.predictions, split);

    auto iou_json = [&](const IouResult& r) {
      if (!kind) return to_json(r);
      json j = {{"miou", r.miou}, {"per_class", json::array()}};
      for (double v : r.per_class) j["per_class"].push_back(nan_to_null(v));
      return j;
    };
    json report = {{"split", split}, {"clips", clips.size()}, {"smooth", smooth}, {"model", iou_json(main.iou)}};
    std::vector<std::pair<std::string, IouResult>> rows{{predictions.empty() ? "model" : "predictions", main.iou}};
    json pos = json::array();
    for (double v : main.position_miou()) pos.push_back(nan_to_null(v));
    report["position_miou"] = pos;

    if (!baseline.empty()) {
      // The baseline is always scored without smoothing.
      EvalOptions bo = eo;
      bo.smooth = false;
      const EvalResult base = eval_checkpoint(baseline, bo);
      report["baseline"] = iou_json(base.iou);
      rows.push_back({"baseline", base.iou});
      if (groups > 0) {
        const std::uint64_t seed = group_seed ? *group_seed : cfg.seed;
        report["significance"] = to_json(compare_grouped(main, base, groups, seed, Tail::TwoSided));
        report["significance"]["groups"] = groups;
      }
      if (profile) {
        json prof = json::array();
        for (double v : temporal_improvement_profile(clip_position_miou(clips, main.predictions, eo.window),
                                                     clip_position_miou(clips, base.predictions, eo.window)))
          prof.push_back(nan_to_null(v));
        report["temporal_improvement"] = prof;
      }
    }
    if (per_subject) {
      json subj = json::array();
      for (const auto& r : per_subject_report(frame_miou_by_subject(clips, main.predictions))) {
        subj.push_back({{"subject", r.subject}, {"frames", r.frames}, {"mean", r.mean}, {"stddev", r.stddev}});
      }
      report["per_subject"] = subj;
    }
    if (format == "csv") {
      if (kind) {
        std::vector<std::string_view> names{"background"};
        for (auto c : region_classes(*kind)) names.push_back(kFaceClassNames[c]);
        csv_out = iou_table_csv(rows, names);
      } else {
        csv_out = iou_table_csv(rows);
      }
    }
    return report;
  }
};

struct CascadeCmd {
  ExperimentSource src;
  std::string primary, eyes, mouth, split = "test", format = "json";

  void attach(CLI::App* app) {
    src.attach(app);
    app->add_option("--primary", primary, "Primary 5-class checkpoint")->required();
    app->add_option("--eyes", eyes, "Eye region checkpoint");
    app->add_option("--mouth", mouth, "Mouth region checkpoint");
    app->add_option("--split", split, "Dataset split");
    app->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  }

  json run(std::string& csv_out) const {
    const ExperimentConfig cfg = src.resolve();
    const Dataset ds = load_experiment_data(cfg);
    const auto clips = split_or_throw(ds, split);
    ModelGraph pm = load_model(primary);
    std::optional<ModelGraph> em, mm;
    CascadeBundle bundle;
    bundle.config = cfg.cascade;
    bundle.primary = model_segmenter(pm);
    auto attach_region = [&](const std::string& path, RegionKind kind, std::optional<ModelGraph>& slot,
                             RegionSegmenter& seg) {
      if (path.empty()) return;
      slot = load_model(path);
      CropConfig& crop = kind == RegionKind::Eyes ? bundle.config.eyes : bundle.config.mouth;
      if (slot->config().input_width != crop.width || slot->config().input_height != crop.height) {
        throw std::invalid_argument(path + " input size differs from the " + to_string(kind) + " crop size");
      }
      seg = region_model_segmenter(*slot, kind, crop);
    };
    attach_region(eyes, RegionKind::Eyes, em, bundle.eyes);
    attach_region(mouth, RegionKind::Mouth, mm, bundle.mouth);
    const CascadeEval ev = evaluate_cascade(bundle, clips);
    json delta = json::object();
    for (std::size_t c = 0; c < kNumFaceClasses; ++c) {
      delta[std::string(kFaceClassNames[c])] = nan_to_null(ev.integrated.iou.per_class[c] - ev.primary.iou.per_class[c]);
    }
    delta["miou"] = ev.integrated.iou.miou - ev.primary.iou.miou;
    if (format == "csv") csv_out = iou_table_csv({{"primary", ev.primary.iou}, {"integrated", ev.integrated.iou}});
    return {{"split", split},
            {"clips", clips.size()},
            {"primary", to_json(ev.primary.iou)},
            {"integrated", to_json(ev.integrated.iou)},
            {"delta", delta}};
  }
};

struct GradcheckCmd {
  std::uint64_t seed = 0;
  std::size_t size = 16;
  GradCheckOptions opt;

  void attach(CLI::App* app) {
    app->add_option("--seed", seed, "Seed of the random inputs");
    app->add_option("--size", size, "Spatial size of the inputs");
    app->add_option("--eps", opt.eps, "Central-difference step");
    app->add_option("--tol", opt.tol, "Maximum relative error");
  }

  json run() const {
    std::uint64_t s = seed;
    if (auto e = env_seed()) s = *e;
    return to_json(run_gradcheck_suite(s, size, opt));
  }
};

struct StatsCmd {
  std::string a, b, fixture, tail = "two-sided";
  double alpha = 0.05;

  void attach(CLI::App* app) {
    app->add_option("--a", a, "Comma-separated scores of the model");
    app->add_option("--b", b, "Comma-separated scores of the baseline");
    app->add_option("--fixture", fixture, "JSON file with arrays \"a\" and \"b\"")->check(CLI::ExistingFile);
    app->add_option("--tail", tail, "two-sided, greater or less")
        ->check(CLI::IsMember({"two-sided", "greater", "less"}));
    app->add_option("--alpha", alpha, "Significance level");
  }

  json run() const {
    std::vector<double> va, vb;
    if (!fixture.empty()) {
      const json j = read_json_file(fixture);
      va = j.at("a").get<std::vector<double>>();
      vb = j.at("b").get<std::vector<double>>();
    } else {
      auto nums = [](const std::string& s) {
        std::vector<double> out;
        for (const auto& p : split_csv(s)) {
          std::size_t used = 0;
          out.push_back(std::stod(p, &used));
          if (used != p.size()) throw std::invalid_argument("not a number: '" + p + "'");
        }
        return out;
      };
      va = nums(a);
      vb = nums(b);
    }
    const Tail t = tail == "greater" ? Tail::Greater : tail == "less" ? Tail::Less : Tail::TwoSided;
    json out = to_json(grouped_significance(va, vb, alpha, t));
    out["tail"] = tail;
    out["n"] = va.size();
    return out;
  }
};

json error_json(const std::string& command, const std::string& type, const std::string& message) {
  return {{"error", {{"command", command}, {"type", type}, {"message", message}}}};
}

}  // namespace

// Exit codes: 0 success, 1 runtime failure (or failed gradient check), 2 bad
// input or configuration.
int main(int argc, char** argv) {
  CLI::App app{"Face-mask video segmentation toolkit"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn, error or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  SynthCmd synth;
  ConvertCmd convert;
  TrainCmd train;
  EvalCmd eval;
  CascadeCmd cascade;
  GradcheckCmd gradcheck;
  StatsCmd stats;
  synth.attach(app.add_subcommand("synth", "Generate the synthetic face-video dataset"));
  convert.attach(app.add_subcommand("convert-landmarks", "Rasterize 68-point landmark files into face masks"));
  train.attach(app.add_subcommand("train", "Two-step training: FCN baseline, then ConvLSTM-FCN"));
  eval.attach(app.add_subcommand("eval", "Evaluate a checkpoint (or predictions) on a split"));
  cascade.attach(app.add_subcommand("cascade-eval", "Evaluate primary + zoomed-in region models"));
  gradcheck.attach(app.add_subcommand("gradcheck", "Finite-difference checks of every differentiable op"));
  stats.attach(app.add_subcommand("stats", "Paired t-test on two score lists"));

  std::string command = "ssk";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cout << error_json(command, "usage", e.what()).dump() << "\n";
    return 2;
  }

  const std::map<std::string, LogLevel> levels{{"debug", LogLevel::Debug}, {"info", LogLevel::Info},
                                               {"warn", LogLevel::Warn},   {"error", LogLevel::Error},
                                               {"off", LogLevel::Off}};
  set_log_level(levels.at(log_level));

  const CLI::App* sub = app.get_subcommands().front();
  command = sub->get_name();
  try {
    json out;
    std::string csv;
    bool failed = false;
    if (command == "synth") {
      out = synth.run();
    } else if (command == "convert-landmarks") {
      out = convert.run();
    } else if (command == "train") {
      out = train.run();
    } else if (command == "eval") {
      out = eval.run(csv);
    } else if (command == "cascade-eval") {
      out = cascade.run(csv);
    } else if (command == "gradcheck") {
      out = gradcheck.run();
      failed = !out.at("passed").get<bool>();
    } else if (command == "stats") {
      out = stats.run();
    }
    if (!csv.empty())
      std::cout << csv;
    else
      std::cout << out.dump(2) << "\n";
    return failed ? 1 : 0;
  } catch (const std::invalid_argument& e) {
    std::cout << error_json(command, "invalid_argument", e.what()).dump() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cout << error_json(command, "out_of_range", e.what()).dump() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cout << error_json(command, "json", e.what()).dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cout << error_json(command, "runtime_error", e.what()).dump() << "\n";
    return 1;
  }
}
