#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ssk/mask.hpp"

namespace ssk {

/// counts(i, j): pixels annotated i and predicted j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = kNumFaceClasses);

  std::size_t num_classes() const { return c_; }
  std::uint64_t operator()(std::size_t gt, std::size_t pred) const { return counts_[gt * c_ + pred]; }
  std::uint64_t total() const;

  void accumulate(std::span<const std::uint8_t> gt, std::span<const std::uint8_t> pred);
  void accumulate(const MaskFrame& gt, const MaskFrame& pred);
  void merge(const ConfusionMatrix& other);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t c_;
  std::vector<std::uint64_t> counts_;
};

struct IouResult {
  double miou = 0;
  // NaN for classes with zero union.
  std::vector<double> per_class;
  // Classes that entered the mean.
  std::vector<bool> included;
};

/// IoU_i = n_ii / (sum_j n_ij + sum_j n_ji - n_ii); the mean runs over the
/// classes with nonzero union, skipping class 0 when `exclude_background`.
/// Throws when no class qualifies.
IouResult mean_iou(const ConfusionMatrix& cm, bool exclude_background = true);

/// Mean over clips of (model - baseline) at each frame position. Inputs are
/// clips x T matrices; NaN entries (undefined per-frame mIoU) are skipped.
std::vector<double> temporal_improvement_profile(const std::vector<std::vector<double>>& model,
                                                 const std::vector<std::vector<double>>& baseline);

enum class Tail { TwoSided, Greater, Less };

struct SignificanceResult {
  double p_value = 1;
  double t_stat = 0;
  double mean_diff = 0;
  std::size_t df = 0;
  bool significant = false;
  std::string test = "paired t-test";
};

/// Paired t-test on a - b. Greater tests mean(a - b) > 0. All-zero
/// differences give p = 1; zero variance with a nonzero mean gives p = 0 (or 1
/// when a one-sided test points the other way).
SignificanceResult grouped_significance(std::span<const double> a, std::span<const double> b, double alpha = 0.05,
                                        Tail tail = Tail::TwoSided);

struct SubjectRow {
  std::string subject;
  std::size_t frames = 0;
  double mean = 0;
  double stddev = 0;  // population
};

/// Rows in first-appearance order. NaN frame scores are ignored; subjects left
/// without frames are skipped with a warning.
std::vector<SubjectRow> per_subject_report(const std::vector<std::pair<std::string, double>>& results);

/// Splits clip ids into `groups` near-equal groups: ids are sorted, shuffled
/// with `seed`, then dealt out in contiguous chunks.
std::vector<std::vector<std::string>> group_split(std::vector<std::string> clip_ids, std::size_t groups,
                                                  std::uint64_t seed);

/// One row per labelled result: name, mIoU, then per-class IoU, all in
/// percent. Undefined entries are left empty.
std::string iou_table_csv(const std::vector<std::pair<std::string, IouResult>>& rows,
                          std::span<const std::string_view> class_names = kFaceClassNames);
std::string iou_table_ascii(const std::vector<std::pair<std::string, IouResult>>& rows,
                            std::span<const std::string_view> class_names = kFaceClassNames);
nlohmann::json to_json(const IouResult& r, std::span<const std::string_view> class_names = kFaceClassNames);
nlohmann::json to_json(const SignificanceResult& r);

}  // namespace ssk
