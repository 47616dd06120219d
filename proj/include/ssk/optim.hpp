#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssk/checkpoint.hpp"
#include "ssk/tensor.hpp"

namespace ssk {

enum class OptimizerKind { Adam, RMSprop };

inline const std::string kConvLSTMGroup = "convlstm";

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double base_lr = 0.001;
  // Scale for every group other than "convlstm".
  double gamma = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double rho = 0.9;
  double eps = 1e-8;
  // Linear decay to zero over `total_steps`.
  bool decay = true;
  std::size_t total_steps = 0;
  std::set<std::string> frozen_groups;
  // Freezes every group except "convlstm".
  bool freeze_others = false;

  void validate() const;
  bool frozen(const std::string& group) const;
};

/// Presets for the gamma sweep.
inline const std::vector<double> kGammaPresets{0.01, 0.02, 0.05, 0.1};

OptimizerKind parse_optimizer_kind(const std::string& s);
std::string to_string(OptimizerKind k);
nlohmann::json to_json(const OptimizerConfig& c);
/// Unknown keys are rejected. "freeze" accepts a list of group names, where
/// the entry "others" means every group except "convlstm".
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

/// Base learning rate after linear decay: base_lr * (1 - step/total).
/// Steps past the horizon clamp to 0 with a warning.
double decayed_lr(std::size_t step, const OptimizerConfig& cfg);
/// Learning rate of `group` at `step`: base for "convlstm", base*gamma for
/// others, 0 when frozen.
double group_lr(const std::string& group, std::size_t step, const OptimizerConfig& cfg);
/// group -> lr for every group in `groups`.
std::map<std::string, double> lr_at(std::size_t step, const OptimizerConfig& cfg,
                                    const std::set<std::string>& groups = {kConvLSTMGroup});

/// Adam or RMSprop over a ParameterStore. Moments are keyed by parameter name
/// and allocated on first use.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  const OptimizerConfig& config() const { return cfg_; }
  std::size_t step_count() const { return step_; }

  /// Applies one update from each parameter's grad. Frozen groups are left
  /// bit-unchanged; an unfrozen parameter without a grad is an error.
  void step(ParameterStore& params);

  void save_state(Checkpoint& ckpt) const;
  void load_state(const Checkpoint& ckpt);

 private:
  OptimizerConfig cfg_;
  std::size_t step_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
  std::map<std::string, std::size_t> t_;
};

}  // namespace ssk
