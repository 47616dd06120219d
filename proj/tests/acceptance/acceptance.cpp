// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. SSK_ACCEPT_SEEDS overrides the number of experiment seeds
// (default 5); SSK_ACCEPT_DIR sets where run directories go.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ssk/cascade.hpp"
#include "ssk/experiment.hpp"
#include "ssk/gradcheck_suite.hpp"
#include "ssk/log.hpp"
#include "ssk/losses.hpp"
#include "ssk/metrics.hpp"
#include "ssk/models.hpp"
#include "ssk/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ssk;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  Outcome(int i, std::string t) : id(i), title(std::move(t)) {}
  Outcome(int i, std::string t, bool p, std::string d) : id(i), title(std::move(t)), passed(p), detail(std::move(d)) {}

  int id = 0;
  std::string title;
  bool passed = false;
  std::string detail;
  json data = json::object();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

// --------------------------------------------------------------------------

Outcome gradients() {
  Outcome o(1, "gradient correctness");
  const auto t0 = Clock::now();
  const auto cases = run_gradcheck_suite(0, 16);
  const double secs = seconds_since(t0);
  double worst = 0;
  bool all = true;
  std::string failed;
  for (const auto& c : cases) {
    worst = std::max(worst, c.report.max_rel_error());
    if (!c.report.passed) {
      all = false;
      failed += " " + c.name;
    }
  }
  o.passed = all && worst < 1e-3 && secs < 120;
  o.detail = std::to_string(cases.size()) + " cases, max rel error " + fmt("%.3g", worst) + ", " + fmt("%.1f", secs) +
             " s" + (failed.empty() ? "" : ", failed:" + failed);
  o.data = to_json(cases);
  o.data["seconds"] = secs;
  return o;
}

std::vector<std::uint8_t> random_mask(std::size_t n, Rng& rng) {
  std::vector<std::uint8_t> m(n);
  for (auto& v : m) v = static_cast<std::uint8_t>(rng.below(kNumFaceClasses));
  return m;
}

double brute_force_miou(const std::vector<std::uint8_t>& gt, const std::vector<std::uint8_t>& pred, bool skip_bg) {
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t c = skip_bg ? 1 : 0; c < kNumFaceClasses; ++c) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      inter += gt[i] == c && pred[i] == c;
      uni += gt[i] == c || pred[i] == c;
    }
    if (uni == 0) continue;
    sum += double(inter) / double(uni);
    ++n;
  }
  return sum / double(n);
}

Outcome metric_equivalence() {
  Outcome o(2, "mIoU equivalence");
  Rng rng(2);
  double worst_brute = 0, worst_loss = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 5 + rng.below(400);
    auto gt = random_mask(n, rng);
    for (std::uint8_t c = 0; c < kNumFaceClasses; ++c) gt[c] = c;
    const auto pred = random_mask(n, rng);
    ConfusionMatrix cm;
    cm.accumulate(gt, pred);
    worst_brute = std::max(worst_brute, std::abs(mean_iou(cm).miou - brute_force_miou(gt, pred, true)));
    worst_brute = std::max(worst_brute, std::abs(mean_iou(cm, false).miou - brute_force_miou(gt, pred, false)));
    Tape tape;
    const double loss =
        iou_loss_multiclass(tape.constant(one_hot(pred, kNumFaceClasses)), one_hot(gt, kNumFaceClasses)).value().item();
    worst_loss = std::max(worst_loss, std::abs((1.0 - loss) - mean_iou(cm, false).miou));
  }
  o.passed = worst_brute < 1e-12 && worst_loss < 1e-10;
  o.detail = "1000 pairs, max |confusion - brute force| " + fmt("%.2g", worst_brute) + ", max |1 - iou_loss - mIoU| " +
             fmt("%.2g", worst_loss);
  o.data = {{"max_brute_force_gap", worst_brute}, {"max_loss_gap", worst_loss}};
  return o;
}

Outcome loss_fixtures(const std::string& python, const std::string& oracle) {
  Outcome o(3, "loss fixtures");
  struct Row {
    std::string name;
    double got, want;
  };
  std::vector<Row> rows;
  const Tensor probs({2, 2}, {0.8, 0.2, 0.4, 0.6});
  const Tensor onehot({2, 2}, {1, 0, 0, 1});
  Tape tape;
  rows.push_back({"iou_loss example", iou_loss_multiclass(tape.constant(probs), onehot).value().item(), 0.4643});
  const std::vector<double> pr{-1.2, 2.9, 7.1};
  const auto hinge = lp_ln_hinge(pr, 1, 2, 1.0);
  const auto linear = lp_ln_linear(pr, 1, 2, 0.0);
  rows.push_back({"hinge L_p (g=1)", hinge.lp, 5.2});
  rows.push_back({"hinge L_n (g=1)", hinge.ln, 5.2});
  rows.push_back({"linear L_p", linear.lp, -2.9});
  rows.push_back({"linear L_n", linear.ln, 7.1});
  const auto stats = compute_soft_region_stats(probs, onehot);
  rows.push_back({"W_p class 1", stats.w_pos[0], 0.7143});
  rows.push_back({"W_n class 1", stats.w_neg[0], 0.4082});
  const auto w = smoothing_weights(2, 5, 5, 0.6);
  const double want_w[5] = {0.00256, 0.1655, 0.6637, 0.1655, 0.00256};
  for (std::size_t i = 0; i < 5; ++i) rows.push_back({"smoothing weight " + std::to_string(i), w[i], want_w[i]});

  bool all = true;
  double worst = 0;
  json items = json::array();
  for (const auto& r : rows) {
    const double gap = std::abs(r.got - r.want);
    worst = std::max(worst, gap);
    all = all && gap < 1e-3;
    items.push_back({{"name", r.name}, {"value", r.got}, {"fixture", r.want}});
  }
  // Independent recomputation of the same fixtures outside the library.
  int oracle_status = -1;
  if (!python.empty() && fs::exists(oracle)) {
    const std::string cmd = "\"" + python + "\" \"" + oracle + "\" > /dev/null 2>&1";
    oracle_status = std::system(cmd.c_str());
  }
  const bool oracle_ok = oracle_status == 0;
  o.passed = all && oracle_ok;
  o.detail = std::to_string(rows.size()) + " values, max gap " + fmt("%.2g", worst) + ", oracle " +
             (oracle_status == -1 ? "unavailable" : oracle_ok ? "confirms" : "disagrees");
  o.data = {{"values", items}, {"oracle_exit", oracle_status}};
  return o;
}

Outcome significance_fixture() {
  Outcome o(8, "significance test");
  const std::vector<double> a{0.7, -1.6, -0.2, -1.2, -0.1, 3.4, 3.7, 0.8, 0.0, 2.0};
  const std::vector<double> b{1.9, 0.8, 1.1, 0.1, -0.1, 4.4, 5.5, 1.6, 4.6, 3.4};
  const double p = grouped_significance(a, b).p_value;
  const double p_same = grouped_significance(a, a).p_value;
  const double want = 0.00283289019738427;
  o.passed = std::abs(p - want) < 1e-6 && p_same == 1.0;
  o.detail = "paired t p = " + fmt("%.9f", p) + " (fixture " + fmt("%.9f", want) + "), identical groups p = " +
             fmt("%g", p_same);
  o.data = {{"p", p}, {"p_identical", p_same}};
  return o;
}

// --------------------------------------------------------------------------

ExperimentConfig small_config(std::uint64_t seed, const fs::path& dir) {
  ExperimentConfig c;
  c.seed = seed;
  c.model.input_height = c.model.input_width = 32;
  c.model.widths = {4, 4, 8, 8};
  c.data.width = c.data.height = 32;
  c.data.frames_per_clip = 10;
  c.data.train_clips = 4;
  c.data.val_clips = 1;
  c.data.test_clips = 1;
  c.data.train_subjects = 2;
  c.data.val_subjects = 1;
  c.data.test_subjects = 1;
  c.train.baseline_epochs = 1;
  c.train.convlstm_epochs = 1;
  c.optim.base_lr = 1e-3;
  c.output_dir = dir.string();
  return c;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome protocol_invariants(const fs::path& root) {
  Outcome o(7, "protocol invariants");
  std::vector<std::string> problems;

  // Conversion keeps every non-classifier parameter bit-exactly.
  ModelGraph fcn = ModelGraph::build(ExperimentConfig{}.model, 5);
  ModelGraph conv = convert_to_convlstm_fcn(fcn, 5, true);
  std::size_t kept = 0;
  for (const auto& p : fcn.params().items()) {
    if (p.name.rfind("conv6/", 0) == 0) continue;
    if (!conv.params().contains(p.name) || !(conv.params().get(p.name).value == p.value)) {
      problems.push_back("conversion changed " + p.name);
    }
    ++kept;
  }

  // Freeze-others training touches ConvLSTM parameters only.
  ExperimentConfig cfg = small_config(3, root / "freeze");
  const Dataset ds = load_experiment_data(cfg);
  ModelGraph base = ModelGraph::build(cfg.model, 9);
  ModelGraph before = convert_to_convlstm_fcn(base, 5, true);
  StageOptions so;
  so.name = "convlstm";
  so.optim = cfg.optim;
  so.epochs = 1;
  so.seed = 4;
  std::vector<EpochRecord> hist;
  ModelGraph after = train_stage(before, ds.split("train"), ds.split("val"), so, hist);
  std::size_t lstm_changed = 0, other_changed = 0;
  for (const auto& p : before.params().items()) {
    const bool same = after.params().get(p.name).value == p.value;
    if (p.group == "convlstm")
      lstm_changed += !same;
    else
      other_changed += !same;
  }
  if (other_changed) problems.push_back(std::to_string(other_changed) + " frozen parameters changed");
  if (!lstm_changed) problems.push_back("no ConvLSTM parameter changed");

  // Same seed, same bytes.
  std::string csv[2];
  for (int r = 0; r < 2; ++r) {
    ExperimentConfig rc = small_config(11, root / ("repeat_" + std::to_string(r)));
    run_experiment(rc, load_experiment_data(rc));
    csv[r] = read_file(fs::path(rc.output_dir) / "metrics.csv");
  }
  if (csv[0].empty() || csv[0] != csv[1]) problems.push_back("same-seed metrics.csv differ");

  o.passed = problems.empty();
  o.detail = std::to_string(kept) + " copied tensors bit-exact, " + std::to_string(lstm_changed) +
             " ConvLSTM tensors moved, " + std::to_string(other_changed) + " frozen tensors moved, metrics.csv " +
             (csv[0] == csv[1] ? "identical" : "differs");
  for (const auto& p : problems) o.detail += "; " + p;
  return o;
}

// --------------------------------------------------------------------------

struct SeedResult {
  std::uint64_t seed = 0;
  double baseline = 0, ce = 0, iou = 0, seg = 0;
  std::vector<double> profile;  // CE model minus baseline, per window position
  double primary_eyes = 0, primary_inner = 0, integrated_eyes = 0, integrated_inner = 0;
  double experiment_seconds = 0, cascade_seconds = 0;
};

EvalResult evaluate_kept(ModelGraph& m, std::span<const Clip* const> clips, std::size_t window) {
  EvalOptions eo;
  eo.window = window;
  eo.keep_predictions = true;
  return evaluate(m, clips, eo);
}

SeedResult run_seed(std::uint64_t seed, const Dataset& ds, const fs::path& root) {
  SeedResult r;
  r.seed = seed;
  const fs::path dir = root / ("seed_" + std::to_string(seed));
  const auto test = ds.split("test");
  ExperimentConfig cfg;
  cfg.seed = seed;
  const std::size_t T = cfg.model.time_steps;

  const auto t0 = Clock::now();
  ExperimentConfig bc = cfg;
  bc.train.steps = TrainSteps::BaselineOnly;
  bc.output_dir = (dir / "baseline").string();
  TrainResult base = run_experiment(bc, ds);
  EvalResult eb = evaluate_kept(base.baseline, test, T);
  r.baseline = eb.iou.miou;

  ModelGraph primary;
  for (auto kind : {LossKind::CrossEntropy, LossKind::Iou, LossKind::Segmentation}) {
    ExperimentConfig lc = cfg;
    lc.loss = LossConfig{kind, SegVariant::Linear, 0.0, true};
    lc.train.steps = TrainSteps::ConvLSTMOnly;
    lc.train.init_checkpoint = (dir / "baseline" / "baseline.ssk").string();
    lc.output_dir = (dir / to_string(kind)).string();
    TrainResult tr = run_experiment(lc, ds);
    EvalResult em = evaluate_kept(tr.model, test, T);
    if (kind == LossKind::CrossEntropy) {
      r.ce = em.iou.miou;
      r.profile = temporal_improvement_profile(clip_position_miou(test, em.predictions, T),
                                               clip_position_miou(test, eb.predictions, T));
    } else if (kind == LossKind::Iou) {
      r.iou = em.iou.miou;
    } else {
      r.seg = em.iou.miou;
      primary = tr.model;
    }
  }
  r.experiment_seconds = seconds_since(t0);

  const auto t1 = Clock::now();
  ModelGraph region_models[2];
  const RegionKind kinds[2] = {RegionKind::Eyes, RegionKind::Mouth};
  for (int k = 0; k < 2; ++k) {
    ExperimentConfig rc = region_experiment_config(cfg, kinds[k]);
    rc.output_dir = (dir / ("region_" + to_string(kinds[k]))).string();
    const Dataset rds = region_dataset(ds, kinds[k], cfg.cascade, seed);
    region_models[k] = run_experiment(rc, rds).model;
  }
  CascadeBundle bundle;
  bundle.config = cfg.cascade;
  bundle.primary = model_segmenter(primary);
  bundle.eyes = region_model_segmenter(region_models[0], RegionKind::Eyes, cfg.cascade.eyes);
  bundle.mouth = region_model_segmenter(region_models[1], RegionKind::Mouth, cfg.cascade.mouth);
  const CascadeEval ce = evaluate_cascade(bundle, test);
  r.primary_eyes = ce.primary.iou.per_class[kEyes];
  r.primary_inner = ce.primary.iou.per_class[kInnerMouth];
  r.integrated_eyes = ce.integrated.iou.per_class[kEyes];
  r.integrated_inner = ce.integrated.iou.per_class[kInnerMouth];
  r.cascade_seconds = seconds_since(t1);
  return r;
}

json to_json(const SeedResult& r) {
  return {{"seed", r.seed},
          {"baseline_miou", r.baseline},
          {"cross_entropy_miou", r.ce},
          {"iou_miou", r.iou},
          {"segmentation_miou", r.seg},
          {"ce_profile", r.profile},
          {"primary_eyes", r.primary_eyes},
          {"primary_inner_mouth", r.primary_inner},
          {"integrated_eyes", r.integrated_eyes},
          {"integrated_inner_mouth", r.integrated_inner},
          {"experiment_seconds", r.experiment_seconds},
          {"cascade_seconds", r.cascade_seconds}};
}

std::vector<Outcome> experiments(std::size_t seeds, const fs::path& root) {
  const Dataset ds = load_experiment_data(ExperimentConfig{});
  std::vector<SeedResult> rs;
  for (std::size_t s = 1; s <= seeds; ++s) {
    rs.push_back(run_seed(s, ds, root));
    const auto& r = rs.back();
    std::printf("  seed %zu: baseline %.4f  ce %.4f  iou %.4f  seg %.4f  |  eyes %.4f -> %.4f  inner mouth %.4f -> %.4f"
                "  (%.0f s + %.0f s)\n",
                s, r.baseline, r.ce, r.iou, r.seg, r.primary_eyes, r.integrated_eyes, r.primary_inner,
                r.integrated_inner, r.experiment_seconds, r.cascade_seconds);
    std::fflush(stdout);
  }
  auto column = [&](auto f) {
    std::vector<double> v;
    for (const auto& r : rs) v.push_back(f(r));
    return v;
  };
  json runs = json::array();
  for (const auto& r : rs) runs.push_back(to_json(r));

  std::vector<Outcome> out;
  {
    Outcome o(4, "loss ordering (freeze-others)");
    const auto ce = column([](const SeedResult& r) { return r.ce; });
    const auto iou = column([](const SeedResult& r) { return r.iou; });
    const auto seg = column([](const SeedResult& r) { return r.seg; });
    const double runtime = mean(column([](const SeedResult& r) { return r.experiment_seconds; })) * double(rs.size());
    const double g1 = mean(seg) - mean(iou), g2 = mean(iou) - mean(ce);
    SignificanceResult p1, p2;  // p = 1 until there are at least two seeds
    if (rs.size() >= 2) {
      p1 = grouped_significance(seg, iou, 0.1, Tail::Greater);
      p2 = grouped_significance(iou, ce, 0.1, Tail::Greater);
    }
    o.passed = rs.size() >= 2 && g1 >= 0 && g2 >= 0 && p1.p_value < 0.1 && p2.p_value < 0.1 && runtime < 3600;
    o.detail = "mean seg " + fmt("%.4f", mean(seg)) + " / iou " + fmt("%.4f", mean(iou)) + " / ce " +
               fmt("%.4f", mean(ce)) + ", p(seg>iou) " + fmt("%.3g", p1.p_value) + ", p(iou>ce) " +
               fmt("%.3g", p2.p_value) + ", " + fmt("%.0f", runtime) + " s";
    o.data = {{"runs", runs}, {"p_seg_iou", p1.p_value}, {"p_iou_ce", p2.p_value}, {"runtime_seconds", runtime}};
    out.push_back(o);
  }
  {
    Outcome o(5, "temporal effect");
    std::vector<double> profile(rs.front().profile.size(), 0.0);
    for (const auto& r : rs)
      for (std::size_t k = 0; k < profile.size(); ++k) profile[k] += r.profile[k] / double(rs.size());
    const double first = profile[0];
    const double later = std::accumulate(profile.begin() + 1, profile.end(), 0.0) / double(profile.size() - 1);
    o.passed = later > first;
    std::string prof;
    for (double v : profile) prof += fmt(" %+.4f", v);
    o.detail = "CE model minus baseline by frame:" + prof + "; frames 2-5 " + fmt("%+.4f", later) + " vs frame 1 " +
               fmt("%+.4f", first);
    o.data = {{"profile", profile}};
    out.push_back(o);
  }
  {
    Outcome o(6, "cascade effect");
    const double de = mean(column([](const SeedResult& r) { return r.integrated_eyes - r.primary_eyes; }));
    const double di = mean(column([](const SeedResult& r) { return r.integrated_inner - r.primary_inner; }));
    o.passed = de >= 0.01 && di >= 0.01;
    o.detail = "integrated minus primary: eyes " + fmt("%+.2f", 100 * de) + " pp, inner mouth " +
               fmt("%+.2f", 100 * di) + " pp";
    o.data = {{"eyes_gain", de}, {"inner_mouth_gain", di}};
    out.push_back(o);
  }
  return out;
}

}  // namespace

int main() {
  set_log_level(LogLevel::Warn);
  std::size_t seeds = 5;
  if (const char* s = std::getenv("SSK_ACCEPT_SEEDS")) seeds = std::max(1, std::atoi(s));
  const fs::path root = std::getenv("SSK_ACCEPT_DIR") ? fs::path(std::getenv("SSK_ACCEPT_DIR"))
                                                      : fs::current_path() / "acceptance_runs";
  fs::create_directories(root);

  std::vector<Outcome> results;
  auto run = [&](const std::function<Outcome()>& f, int id) {
    try {
      results.push_back(f());
    } catch (const std::exception& e) {
      results.push_back(Outcome{id, "criterion " + std::to_string(id), false, std::string("error: ") + e.what()});
    }
    const auto& o = results.back();
    std::printf("criterion %d %s: %s (%s)\n", o.id, o.passed ? "PASS" : "FAIL", o.title.c_str(), o.detail.c_str());
    std::fflush(stdout);
  };
  run(gradients, 1);
  run(metric_equivalence, 2);
  run([] { return loss_fixtures(SSK_PYTHON, SSK_ORACLE); }, 3);
  try {
    std::printf("running %zu experiment seeds...\n", seeds);
    std::fflush(stdout);
    for (auto& o : experiments(seeds, root)) {
      results.push_back(o);
      std::printf("criterion %d %s: %s (%s)\n", o.id, o.passed ? "PASS" : "FAIL", o.title.c_str(), o.detail.c_str());
    }
  } catch (const std::exception& e) {
    for (int id : {4, 5, 6}) {
      results.push_back(Outcome{id, "criterion " + std::to_string(id), false, std::string("error: ") + e.what()});
      std::printf("criterion %d FAIL: %s\n", id, e.what());
    }
  }
  run([&] { return protocol_invariants(root); }, 7);
  run(significance_fixture, 8);

  json report = json::array();
  bool all = true;
  for (const auto& o : results) {
    all = all && o.passed;
    report.push_back({{"criterion", o.id}, {"title", o.title}, {"passed", o.passed}, {"detail", o.detail}, {"data", o.data}});
  }
  std::ofstream(root / "acceptance_report.json") << report.dump(2) << "\n";
  std::printf("%s\n", all ? "all criteria passed" : "some criteria failed");
  return all ? 0 : 1;
}
