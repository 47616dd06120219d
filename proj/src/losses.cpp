#include "ssk/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ssk/ops.hpp"

namespace ssk {
namespace {

void require_rows(Var v, const char* op) {
  if (v.shape().size() != 2 || v.shape()[1] == 0) {
    throw std::invalid_argument(std::string(op) + ": expected [K,C] input, got " + shape_str(v.shape()));
  }
}

void require_labels(Labels labels, std::size_t K, std::size_t C, const char* op) {
  if (labels.size() != K) {
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(K) + " samples");
  }
  for (auto l : labels) {
    if (l >= C) {
      throw std::invalid_argument(std::string(op) + ": label " + std::to_string(int(l)) + " outside [0," +
                                  std::to_string(C) + ")");
    }
  }
}

// Records a scalar node whose input gradient was computed in the forward pass.
Var scalar_with_local_grad(OpKind kind, Var input, double value, std::vector<double> local) {
  const std::size_t ix = input.id;
  return input.tape->record(kind, {ix}, Tensor::scalar(value),
                            [ix, local = std::move(local)](Tape& t, std::size_t self) {
                              const double g = t.grad(self)[0];
                              std::vector<double> gx(local.size());
                              for (std::size_t i = 0; i < local.size(); ++i) gx[i] = g * local[i];
                              t.accumulate(ix, gx);
                            });
}

}  // namespace

void LossConfig::validate() const {
  if (!(margin >= 0.0) || !std::isfinite(margin)) {
    throw std::invalid_argument("loss margin g must be a finite non-negative number");
  }
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  if (s == "iou") return LossKind::Iou;
  if (s == "segmentation") return LossKind::Segmentation;
  throw std::invalid_argument("unknown loss kind '" + s + "' (cross_entropy|iou|segmentation)");
}

SegVariant parse_seg_variant(const std::string& s) {
  if (s == "hinge") return SegVariant::Hinge;
  if (s == "linear") return SegVariant::Linear;
  throw std::invalid_argument("unknown loss variant '" + s + "' (hinge|linear)");
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::Iou: return "iou";
    case LossKind::Segmentation: return "segmentation";
  }
  return "?";
}

std::string to_string(SegVariant v) { return v == SegVariant::Hinge ? "hinge" : "linear"; }

nlohmann::json to_json(const LossConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"variant", to_string(c.variant)},
          {"margin", c.margin},
          {"include_background", c.include_background}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k != "kind" && k != "variant" && k != "margin" && k != "include_background") {
      throw std::invalid_argument("unknown key '" + k + "' in loss config");
    }
  }
  LossConfig c;
  c.kind = parse_loss_kind(j.value("kind", to_string(c.kind)));
  c.variant = parse_seg_variant(j.value("variant", to_string(c.variant)));
  c.margin = j.value("margin", c.margin);
  c.include_background = j.value("include_background", c.include_background);
  c.validate();
  return c;
}

Tensor one_hot(Labels labels, std::size_t num_classes) {
  require_labels(labels, labels.size(), num_classes, "one_hot");
  Tensor t({labels.size(), num_classes}, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) t[i * num_classes + labels[i]] = 1.0;
  return t;
}

Tensor softmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw std::invalid_argument("softmax_rows: expected [K,C]");
  const std::size_t K = scores.dim(0), C = scores.dim(1);
  Tensor p(scores.shape());
  for (std::size_t i = 0; i < K; ++i) {
    const double* s = scores.data().data() + i * C;
    double* o = p.data().data() + i * C;
    const double m = *std::max_element(s, s + C);
    double z = 0;
    for (std::size_t c = 0; c < C; ++c) z += (o[c] = std::exp(s[c] - m));
    for (std::size_t c = 0; c < C; ++c) o[c] /= z;
  }
  return p;
}

Var cross_entropy(Var logits, Labels labels) {
  require_rows(logits, "cross_entropy");
  const std::size_t K = logits.shape()[0], C = logits.shape()[1];
  if (K == 0) throw std::invalid_argument("cross_entropy: empty batch");
  require_labels(labels, K, C, "cross_entropy");
  const Tensor& x = logits.value();
  std::vector<double> local(K * C);
  double total = 0;
  for (std::size_t i = 0; i < K; ++i) {
    const double* s = x.data().data() + i * C;
    const double m = *std::max_element(s, s + C);
    double z = 0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(s[c] - m);
    const double lse = m + std::log(z);
    total += lse - s[labels[i]];
    for (std::size_t c = 0; c < C; ++c) local[i * C + c] = std::exp(s[c] - lse) / double(K);
    local[i * C + labels[i]] -= 1.0 / double(K);
  }
  return scalar_with_local_grad(OpKind::CrossEntropy, logits, total / double(K), std::move(local));
}

SoftRegionStats compute_soft_region_stats(const Tensor& probs, const Tensor& onehot) {
  if (probs.rank() != 2 || probs.shape() != onehot.shape()) {
    throw std::invalid_argument("compute_soft_region_stats: probs " + shape_str(probs.shape()) +
                                " and one-hot " + shape_str(onehot.shape()) + " must be matching [K,C]");
  }
  const std::size_t K = probs.dim(0), C = probs.dim(1);
  SoftRegionStats s;
  s.intersection.assign(C, 0.0);
  s.uni.assign(C, 0.0);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t t = 0; t < C; ++t) {
      const double p = probs[i * C + t], y = onehot[i * C + t];
      s.intersection[t] += p * y;
      s.uni[t] += p + y - p * y;
    }
  s.w_pos.assign(C, 0.0);
  s.w_neg.assign(C, 0.0);
  bool any = false;
  for (std::size_t t = 0; t < C; ++t) {
    if (s.uni[t] == 0.0) continue;
    any = true;
    s.w_pos[t] = 1.0 / s.uni[t];
    s.w_neg[t] = s.intersection[t] / (s.uni[t] * s.uni[t]);
  }
  if (!any) throw std::invalid_argument("compute_soft_region_stats: every class has zero union (empty batch?)");
  return s;
}

Var iou_loss_multiclass(Var probs, const Tensor& onehot, bool include_background) {
  require_rows(probs, "iou_loss_multiclass");
  const Tensor& p = probs.value();
  if (onehot.shape() != p.shape()) {
    throw std::invalid_argument("iou_loss_multiclass: one-hot " + shape_str(onehot.shape()) +
                                " does not match probs " + shape_str(p.shape()));
  }
  const std::size_t K = p.dim(0), C = p.dim(1);
  for (std::size_t i = 0; i < K; ++i) {
    double rs = 0, ys = 0;
    for (std::size_t t = 0; t < C; ++t) {
      rs += p[i * C + t];
      ys += onehot[i * C + t];
      if (onehot[i * C + t] != 0.0 && onehot[i * C + t] != 1.0) {
        throw std::invalid_argument("iou_loss_multiclass: one-hot row " + std::to_string(i) + " is not binary");
      }
    }
    if (std::abs(rs - 1.0) > 1e-6) {
      throw std::invalid_argument("iou_loss_multiclass: probability row " + std::to_string(i) + " sums to " +
                                  std::to_string(rs));
    }
    if (ys != 1.0) throw std::invalid_argument("iou_loss_multiclass: row " + std::to_string(i) + " is not one-hot");
  }
  const std::size_t first = include_background ? 0 : 1;
  if (first >= C) throw std::invalid_argument("iou_loss_multiclass: no classes left after excluding background");
  const double n_cls = double(C - first);

  std::vector<double> inter(C, 0.0), uni(C, 0.0);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t t = 0; t < C; ++t) {
      const double pv = p[i * C + t], y = onehot[i * C + t];
      inter[t] += pv * y;
      uni[t] += pv + y - pv * y;
    }
  double ratio_sum = 0;
  for (std::size_t t = first; t < C; ++t) ratio_sum += uni[t] == 0.0 ? 1.0 : inter[t] / uni[t];

  std::vector<double> local(K * C, 0.0);
  for (std::size_t t = first; t < C; ++t) {
    if (uni[t] == 0.0) continue;
    const double u2 = uni[t] * uni[t];
    for (std::size_t i = 0; i < K; ++i) {
      const double y = onehot[i * C + t];
      local[i * C + t] = -(y * uni[t] - inter[t] * (1.0 - y)) / u2 / n_cls;
    }
  }
  return scalar_with_local_grad(OpKind::IouLoss, probs, 1.0 - ratio_sum / n_cls, std::move(local));
}

PosNegLoss lp_ln_hinge(std::span<const double> pr, std::size_t gt, std::size_t t, double g) {
  if (gt >= pr.size() || t >= pr.size()) throw std::invalid_argument("lp_ln_hinge: class index out of range");
  double m = gt == 0 ? 0.0 : pr[0];
  for (std::size_t j = 1; j < pr.size(); ++j) m = std::max(m, j == gt ? 0.0 : pr[j]);
  return {std::max(m - pr[gt] + g, 0.0), std::max(pr[t] - pr[gt] + g, 0.0)};
}

PosNegLoss lp_ln_linear(std::span<const double> pr, std::size_t gt, std::size_t t, double g) {
  if (gt >= pr.size() || t >= pr.size()) throw std::invalid_argument("lp_ln_linear: class index out of range");
  return {-pr[gt], pr[gt] > pr[t] + g ? 0.0 : pr[t]};
}

Var seg_loss(Var scores, Labels labels, const SoftRegionStats& stats, const LossConfig& cfg) {
  cfg.validate();
  require_rows(scores, "seg_loss");
  const std::size_t K = scores.shape()[0], C = scores.shape()[1];
  if (stats.num_classes() != C || stats.w_pos.size() != C || stats.w_neg.size() != C) {
    throw std::invalid_argument("seg_loss: stats cover " + std::to_string(stats.num_classes()) +
                                " classes but scores have " + std::to_string(C));
  }
  require_labels(labels, K, C, "seg_loss");
  const std::size_t first = cfg.include_background ? 0 : 1;
  double wsum = 0;
  for (std::size_t t = first; t < C; ++t) wsum += stats.w_pos[t] + stats.w_neg[t];
  const double norm = double(K) * wsum;
  std::vector<double> local(K * C, 0.0);
  if (norm == 0.0) return scalar_with_local_grad(OpKind::SegLoss, scores, 0.0, std::move(local));

  const bool hinge = cfg.variant == SegVariant::Hinge;
  const double g = cfg.margin;
  const Tensor& x = scores.value();
  double num = 0;
  for (std::size_t i = 0; i < K; ++i) {
    const double* pr = x.data().data() + i * C;
    double* d = local.data() + i * C;
    const std::size_t y = labels[i];
    // Positive term for the sample's own class.
    if (y >= first && stats.w_pos[y] != 0.0) {
      const double w = stats.w_pos[y];
      if (hinge) {
        std::size_t arg = 0;
        double m = y == 0 ? 0.0 : pr[0];
        for (std::size_t j = 1; j < C; ++j) {
          const double v = j == y ? 0.0 : pr[j];
          if (v > m) {
            m = v;
            arg = j;
          }
        }
        const double lp = m - pr[y] + g;
        if (lp > 0) {
          num += w * lp;
          if (arg != y) d[arg] += w;
          d[y] -= w;
        }
      } else {
        num += -w * pr[y];
        d[y] -= w;
      }
    }
    // Negative terms for every other class.
    for (std::size_t t = first; t < C; ++t) {
      if (t == y || stats.w_neg[t] == 0.0) continue;
      const double w = stats.w_neg[t];
      if (hinge) {
        const double ln = pr[t] - pr[y] + g;
        if (ln > 0) {
          num += w * ln;
          d[t] += w;
          d[y] -= w;
        }
      } else if (!(pr[y] > pr[t] + g)) {
        num += w * pr[t];
        d[t] += w;
      }
    }
  }
  for (auto& v : local) v /= norm;
  return scalar_with_local_grad(OpKind::SegLoss, scores, num / norm, std::move(local));
}

Var compute_loss(Var scores, Labels labels, const LossConfig& cfg) {
  cfg.validate();
  if (scores.shape().size() != 4) {
    throw std::invalid_argument("compute_loss: expected [N,C,H,W] scores, got " + shape_str(scores.shape()));
  }
  const std::size_t C = scores.shape()[1];
  switch (cfg.kind) {
    case LossKind::CrossEntropy:
      return cross_entropy(channels_last(scores), labels);
    case LossKind::Iou: {
      Var probs = channels_last(softmax_channels(scores));
      return iou_loss_multiclass(probs, one_hot(labels, C), cfg.include_background);
    }
    case LossKind::Segmentation: {
      Var rows = channels_last(scores);
      const Tensor oh = one_hot(labels, C);
      const SoftRegionStats stats = compute_soft_region_stats(softmax_rows(rows.value()), oh);
      return seg_loss(rows, labels, stats, cfg);
    }
  }
  throw std::logic_error("compute_loss: unhandled loss kind");
}

}  // namespace ssk
