#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssk/cascade.hpp"
#include "ssk/dataset.hpp"
#include "ssk/losses.hpp"
#include "ssk/metrics.hpp"
#include "ssk/models.hpp"
#include "ssk/optim.hpp"
#include "ssk/synth.hpp"

namespace ssk {

/// Which of the two training steps to run.
enum class TrainSteps { Both, BaselineOnly, ConvLSTMOnly };

std::string to_string(TrainSteps s);
/// "both", "baseline" or "convlstm".
TrainSteps parse_train_steps(const std::string& s);

/// Desk-scale step-1 optimizer: Adam at 0.003 with linear decay.
OptimizerConfig desk_baseline_optim();
/// Desk-scale step-2 optimizer: freeze-others Adam at 3e-7. Encoder features
/// are non-negative and unnormalized, so Adam's near-sign updates move every
/// class score by roughly lr times the summed feature mass per step; larger
/// rates saturate the cell and wash out the seeded classifier.
OptimizerConfig desk_convlstm_optim();

struct TrainConfig {
  TrainSteps steps = TrainSteps::Both;
  std::size_t batch_windows = 2;  // N windows of T frames per batch
  std::size_t baseline_epochs = 12;
  std::size_t convlstm_epochs = 2;
  // Step 1 (plain FCN, cross-entropy) optimizer. The step-2 optimizer is the
  // experiment's "optim" section.
  OptimizerConfig baseline_optim = desk_baseline_optim();
  // Baseline checkpoint to convert when steps == ConvLSTMOnly.
  std::string init_checkpoint;
  // With every non-ConvLSTM group frozen, encoder features are computed once
  // and reused across epochs.
  bool cache_frozen_features = true;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// The "model" section describes the step-1 FCN; its time_steps, peephole and
/// convlstm_init fields drive the step-2 conversion (its convlstm flag must be
/// false).
struct ExperimentConfig {
  std::uint64_t seed = 1;
  ModelConfig model;
  LossConfig loss;  // step 2
  OptimizerConfig optim = desk_convlstm_optim();
  SynthConfig data;
  std::string manifest;  // load this dataset instead of generating one
  CascadeConfig cascade;
  TrainConfig train;
  std::string output_dir;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Sections: seed, model, loss, optim, data, manifest, cascade, train,
/// output_dir. Unknown keys are rejected at every level.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Full-scale protocol values (320x320 ResNet-style encoder, 80 epochs,
/// 619/58/80 clips). Far too slow for a laptop CPU; provided for reference.
ExperimentConfig full_scale_config();

/// Dataset named by the config: the manifest when set, else the generator.
Dataset load_experiment_data(const ExperimentConfig& cfg);

/// The same experiment for a zoomed-in region model: input size from the
/// region's crop config and one class per owned face class plus background.
ExperimentConfig region_experiment_config(const ExperimentConfig& cfg, RegionKind kind);

/// Region crops of every split, one crop box per window. Training windows
/// are jittered by the crop noise (drawn once per window); validation and
/// test crops are not.
Dataset region_dataset(const Dataset& ds, RegionKind kind, const CascadeConfig& cascade, std::uint64_t seed);

/// Digest of every frame and mask (in clip order) plus clip metadata.
std::string dataset_digest(const Dataset& ds);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  std::size_t window = 5;  // frames per model call; also the position period
  bool smooth = false;
  std::size_t smooth_window = 5;
  double smooth_sigma = 0.6;
  bool keep_predictions = false;
};

struct EvalResult {
  ConfusionMatrix confusion;
  IouResult iou;                                         // background excluded
  std::vector<ConfusionMatrix> per_position;             // frames by position within the window
  std::vector<std::string> clip_ids;
  std::vector<std::string> clip_subjects;
  std::vector<ConfusionMatrix> per_clip;
  std::vector<std::vector<MaskFrame>> predictions;       // when requested

  /// Background-excluded mean IoU of frames at each window position.
  std::vector<double> position_miou() const;
};

/// Segments every clip window by window at the clip's own resolution
/// (nearest-resize of class indices) and pools confusion counts.
EvalResult evaluate(ModelGraph& model, std::span<const Clip* const> clips, const EvalOptions& opts = {});

/// Pools precomputed predictions (one mask per frame) against the clips.
EvalResult evaluate_predictions(std::span<const Clip* const> clips, const std::vector<std::vector<MaskFrame>>& preds,
                                std::size_t window);

/// Splits clips into groups (seeded) and compares the pooled mIoU of each
/// group between two evaluations of the same clips.
SignificanceResult compare_grouped(const EvalResult& model, const EvalResult& baseline, std::size_t groups,
                                   std::uint64_t seed, Tail tail = Tail::Greater);

struct CascadeEval {
  EvalResult primary;
  EvalResult integrated;
};

/// Runs the cascade over every clip (whole windows only) and scores both the
/// primary-only and the integrated masks against the 5-class annotations.
CascadeEval evaluate_cascade(CascadeBundle& bundle, std::span<const Clip* const> clips);

/// Background-excluded mIoU of each frame position within the window, per
/// clip (rows) from kept predictions; NaN where undefined.
std::vector<std::vector<double>> clip_position_miou(std::span<const Clip* const> clips,
                                                    const std::vector<std::vector<MaskFrame>>& preds,
                                                    std::size_t window);

/// Background-excluded mIoU of every frame, labelled with the clip's subject.
std::vector<std::pair<std::string, double>> frame_miou_by_subject(std::span<const Clip* const> clips,
                                                                  const std::vector<std::vector<MaskFrame>>& preds);

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::string stage;  // "baseline" or "convlstm"
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double train_loss = 0;
  double val_miou = 0;
};

struct TrainResult {
  ModelGraph baseline;  // best-on-validation step-1 model (or the loaded one)
  ModelGraph model;     // best-on-validation step-2 model (empty when skipped)
  bool has_model = false;
  std::vector<EpochRecord> history;
  std::string input_hash;

  ModelGraph& final_model() { return has_model ? model : baseline; }
};

struct StageOptions {
  std::string name = "baseline";  // "baseline" or "convlstm"
  LossConfig loss{LossKind::CrossEntropy};
  OptimizerConfig optim;  // total_steps 0 = epochs x batches per epoch
  std::size_t epochs = 1;
  std::size_t window = 5;         // frames per sequence (T)
  std::size_t batch_windows = 2;  // sequences per batch (N)
  std::uint64_t seed = 0;
  bool cache_features = true;
  std::filesystem::path dump_dir;  // nan_dump.json goes here when set
};

/// One training stage: `epochs` passes over shuffled T-windows with the given
/// loss and optimizer, returning the parameters with the best validation
/// mIoU. Throws (after writing nan_dump.json) if the loss becomes non-finite.
ModelGraph train_stage(ModelGraph model, std::span<const Clip* const> train, std::span<const Clip* const> val,
                       const StageOptions& opts, std::vector<EpochRecord>& history);

/// Two-step protocol: cross-entropy FCN, then conversion to ConvLSTM-FCN and
/// training with the configured loss and optimizer. When `cfg.output_dir` is
/// set the run directory receives config.json, run.json (seed, input hash,
/// schedule notes), metrics.csv and the checkpoints.
TrainResult run_experiment(const ExperimentConfig& cfg, const Dataset& ds);

std::string metrics_csv(const std::vector<EpochRecord>& history);

}  // namespace ssk
