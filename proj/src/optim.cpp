#include "ssk/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "ssk/log.hpp"

namespace ssk {

void OptimizerConfig::validate() const {
  if (!(base_lr >= 0) || !std::isfinite(base_lr)) throw std::invalid_argument("optim.base_lr must be >= 0");
  if (!(gamma > 0 && gamma <= 1)) throw std::invalid_argument("optim.gamma must lie in (0, 1]");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw std::invalid_argument("optim betas must lie in [0, 1)");
  }
  if (!(rho >= 0 && rho < 1)) throw std::invalid_argument("optim.rho must lie in [0, 1)");
  if (!(eps > 0)) throw std::invalid_argument("optim.eps must be positive");
  if (decay && total_steps == 0) throw std::invalid_argument("optim.total_steps must be positive with decay");
}

bool OptimizerConfig::frozen(const std::string& group) const {
  if (freeze_others && group != kConvLSTMGroup) return true;
  return frozen_groups.count(group) > 0;
}

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "rmsprop") return OptimizerKind::RMSprop;
  throw std::invalid_argument("unknown optimizer '" + s + "' (adam|rmsprop)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "rmsprop"; }

nlohmann::json to_json(const OptimizerConfig& c) {
  std::vector<std::string> freeze(c.frozen_groups.begin(), c.frozen_groups.end());
  if (c.freeze_others) freeze.insert(freeze.begin(), "others");
  return {{"kind", to_string(c.kind)}, {"base_lr", c.base_lr},   {"gamma", c.gamma},
          {"beta1", c.beta1},          {"beta2", c.beta2},       {"rho", c.rho},
          {"eps", c.eps},              {"decay", c.decay},       {"total_steps", c.total_steps},
          {"freeze", freeze}};
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> allowed{"kind", "base_lr", "gamma", "beta1", "beta2",
                                             "rho",  "eps",     "decay", "total_steps", "freeze"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw std::invalid_argument("unknown key '" + it.key() + "' in optim config");
  }
  OptimizerConfig c;
  c.kind = parse_optimizer_kind(j.value("kind", to_string(c.kind)));
  c.base_lr = j.value("base_lr", c.base_lr);
  c.gamma = j.value("gamma", c.gamma);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.rho = j.value("rho", c.rho);
  c.eps = j.value("eps", c.eps);
  c.decay = j.value("decay", c.decay);
  c.total_steps = j.value("total_steps", c.total_steps);
  for (const auto& g : j.value("freeze", std::vector<std::string>{})) {
    if (g == "others")
      c.freeze_others = true;
    else
      c.frozen_groups.insert(g);
  }
  return c;
}

double decayed_lr(std::size_t step, const OptimizerConfig& cfg) {
  if (!cfg.decay) return cfg.base_lr;
  if (step > cfg.total_steps) {
    log_warn("lr_at: step " + std::to_string(step) + " beyond horizon " + std::to_string(cfg.total_steps) +
             "; learning rate clamped to 0");
    return 0.0;
  }
  return cfg.base_lr * (1.0 - double(step) / double(cfg.total_steps));
}

double group_lr(const std::string& group, std::size_t step, const OptimizerConfig& cfg) {
  if (cfg.frozen(group)) return 0.0;
  const double lr = decayed_lr(step, cfg);
  return group == kConvLSTMGroup ? lr : lr * cfg.gamma;
}

std::map<std::string, double> lr_at(std::size_t step, const OptimizerConfig& cfg,
                                    const std::set<std::string>& groups) {
  std::map<std::string, double> out;
  for (const auto& g : groups) out[g] = group_lr(g, step, cfg);
  return out;
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void Optimizer::step(ParameterStore& params) {
  for (const auto& p : params.items()) {
    if (cfg_.frozen(p.group)) continue;
    if (!p.grad) throw std::invalid_argument("optimizer: parameter " + p.name + " has no gradient");
    if (p.grad->shape() != p.value.shape()) {
      throw std::invalid_argument("optimizer: gradient of " + p.name + " has the wrong shape");
    }
  }
  for (auto& p : params.items()) {
    if (cfg_.frozen(p.group)) continue;
    const double lr = group_lr(p.group, step_, cfg_);
    auto& v = v_.try_emplace(p.name, Tensor(p.value.shape(), 0.0)).first->second;
    const auto& g = *p.grad;
    if (cfg_.kind == OptimizerKind::Adam) {
      auto& m = m_.try_emplace(p.name, Tensor(p.value.shape(), 0.0)).first->second;
      const std::size_t t = ++t_[p.name];
      const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t));
      for (std::size_t i = 0; i < g.numel(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        p.value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      }
    } else {
      for (std::size_t i = 0; i < g.numel(); ++i) {
        v[i] = cfg_.rho * v[i] + (1.0 - cfg_.rho) * g[i] * g[i];
        p.value[i] -= lr * g[i] / (std::sqrt(v[i]) + cfg_.eps);
      }
    }
  }
  ++step_;
}

void Optimizer::save_state(Checkpoint& ckpt) const {
  const std::string prefix = to_string(cfg_.kind) + "/";
  ckpt.meta["optimizer"] = to_json(cfg_);
  ckpt.meta["optimizer_step"] = step_;
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [name, t] : t_) counts[name] = t;
  ckpt.meta["optimizer_counts"] = counts;
  for (const auto& [name, m] : m_) ckpt.put(prefix + "m/" + name, m);
  for (const auto& [name, v] : v_) ckpt.put(prefix + "v/" + name, v);
}

void Optimizer::load_state(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("optimizer_step")) throw std::runtime_error("checkpoint holds no optimizer state");
  const std::string prefix = to_string(cfg_.kind) + "/";
  step_ = ckpt.meta.at("optimizer_step").get<std::size_t>();
  m_.clear();
  v_.clear();
  t_.clear();
  const auto counts = ckpt.meta.value("optimizer_counts", nlohmann::json::object());
  for (auto it = counts.begin(); it != counts.end(); ++it) t_[it.key()] = it.value().get<std::size_t>();
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind(prefix + "m/", 0) == 0) m_[name.substr(prefix.size() + 2)] = t;
    if (name.rfind(prefix + "v/", 0) == 0) v_[name.substr(prefix.size() + 2)] = t;
  }
}

}  // namespace ssk
