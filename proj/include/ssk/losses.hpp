#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssk/tape.hpp"

namespace ssk {

enum class LossKind { CrossEntropy, Iou, Segmentation };
// Hinge: categorical-hinge style L_p/L_n with margin. Linear: raw-score L_p
// with a thresholded L_n.
enum class SegVariant { Hinge, Linear };

struct LossConfig {
  LossKind kind = LossKind::Segmentation;
  SegVariant variant = SegVariant::Linear;
  double margin = 0.0;
  // Applies to the IoU and segmentation losses; cross-entropy always covers
  // every class.
  bool include_background = true;

  void validate() const;
};

LossKind parse_loss_kind(const std::string& s);
SegVariant parse_seg_variant(const std::string& s);
std::string to_string(LossKind k);
std::string to_string(SegVariant v);
nlohmann::json to_json(const LossConfig& c);
/// Unknown keys are rejected.
LossConfig loss_config_from_json(const nlohmann::json& j);

using Labels = std::span<const std::uint8_t>;

/// [K] labels -> [K,C] one-hot rows. Throws on labels >= C.
Tensor one_hot(Labels labels, std::size_t num_classes);
/// Row-wise softmax of a [K,C] tensor.
Tensor softmax_rows(const Tensor& scores);

/// Mean over rows of -log softmax(logits)[label]; logits [K,C].
Var cross_entropy(Var logits, Labels labels);

/// Soft multi-class IoU loss on softmax rows probs [K,C] and one-hot [K,C].
/// A class whose soft union is zero counts as a perfect ratio of 1. When
/// `include_background` is false, class 0 is left out of the mean.
Var iou_loss_multiclass(Var probs, const Tensor& onehot, bool include_background = true);

/// Per-class soft intersection g and union f with the weights W_p = 1/f and
/// W_n = g/f^2. Plain values: no gradient flows through them.
struct SoftRegionStats {
  std::vector<double> intersection;
  std::vector<double> uni;
  std::vector<double> w_pos;
  std::vector<double> w_neg;

  std::size_t num_classes() const { return uni.size(); }
  // g = f = 0: weights are zero and the class drops out of the normaliser.
  bool degenerate(std::size_t t) const { return uni[t] == 0.0; }
};

SoftRegionStats compute_soft_region_stats(const Tensor& probs, const Tensor& onehot);

struct PosNegLoss {
  double lp = 0;
  double ln = 0;
};

/// Hinge form. L_p = max(max(PR o (1-GT)) - PR.GT + g, 0); the GT entry is
/// zeroed rather than removed, so the inner max is never below 0.
/// L_n = max(PR_t - PR.GT + g, 0).
PosNegLoss lp_ln_hinge(std::span<const double> pr, std::size_t gt, std::size_t t, double g);
/// Linear form. L_p = -PR.GT; L_n = 0 if PR.GT > PR_t + g, else PR_t.
PosNegLoss lp_ln_linear(std::span<const double> pr, std::size_t gt, std::size_t t, double g);

/// Class-weighted loss on raw scores [K,C]:
///   sum_t sum_i (W_p^t [y_i = t] L_p(x_i) + W_n^t [y_i != t] L_n(x_i, t))
///   / (K sum_t (W_p^t + W_n^t))
/// with the stats held constant. Returns 0 when every included class is
/// degenerate.
Var seg_loss(Var scores, Labels labels, const SoftRegionStats& stats, const LossConfig& cfg);

/// Applies the configured loss to network scores [N,C,H,W]; `labels` holds
/// N*H*W class indices in row-major [N,H,W] order. Every pixel is a sample.
Var compute_loss(Var scores, Labels labels, const LossConfig& cfg);

}  // namespace ssk
