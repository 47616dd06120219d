#include "ssk/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ssk/rng.hpp"

namespace ssk {
namespace {

double evaluate(const TapeFunction& f, const std::vector<Parameter*>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (auto* p : params) vars.push_back(tape.parameter(*p, false));
  const Var out = f(tape, vars);
  return out.value().item();
}

}  // namespace

double GradCheckReport::max_rel_error() const {
  double m = 0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

GradCheckReport finite_diff_check(const TapeFunction& f, const std::vector<Parameter*>& params,
                                  const GradCheckOptions& opt) {
  GradCheckReport report;
  if (!(opt.eps > 0)) {
    report.passed = false;
    report.message = "eps must be positive";
    return report;
  }

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (auto* p : params) {
      p->zero_grad();
      vars.push_back(tape.parameter(*p, true));
    }
    const Var out = f(tape, vars);
    if (out.value().numel() != 1 || !std::isfinite(out.value()[0])) {
      report.passed = false;
      report.non_finite = true;
      report.message = "function value is not a finite scalar";
      return report;
    }
    tape.backward(out);
    for (auto* p : params) analytic.push_back(*p->grad);
  }

  Rng rng(opt.seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    GradCheckEntry entry;
    entry.name = p.name;
    std::vector<std::size_t> idx(p.value.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.probes_per_param > 0 && opt.probes_per_param < idx.size()) {
      rng.shuffle(idx);
      idx.resize(opt.probes_per_param);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double orig = p.value[i];
      p.value[i] = orig + opt.eps;
      const double fp = evaluate(f, params);
      p.value[i] = orig - opt.eps;
      const double fm = evaluate(f, params);
      p.value[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.non_finite = true;
        entry.passed = false;
        report.message = "non-finite function value while perturbing " + p.name;
        continue;
      }
      const double numeric = (fp - fm) / (2 * opt.eps);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
      ++entry.probed;
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      if (rel_err > entry.max_rel_error || entry.probed == 1) {
        entry.max_rel_error = std::max(entry.max_rel_error, rel_err);
        entry.worst_index = i;
        entry.analytic_at_worst = a;
        entry.numeric_at_worst = numeric;
      }
    }
    entry.passed = entry.passed && entry.max_rel_error < opt.tol;
    report.passed = report.passed && entry.passed;
    report.entries.push_back(entry);
  }
  return report;
}

std::string to_string(const GradCheckReport& report) {
  std::ostringstream os;
  for (const auto& e : report.entries) {
    os << (e.passed ? "PASS " : "FAIL ") << e.name << " probed=" << e.probed
       << " max_rel=" << e.max_rel_error << " max_abs=" << e.max_abs_error;
    if (!e.passed) {
      os << " worst[" << e.worst_index << "] analytic=" << e.analytic_at_worst
         << " numeric=" << e.numeric_at_worst;
    }
    os << '\n';
  }
  if (!report.message.empty()) os << report.message << '\n';
  return os.str();
}

}  // namespace ssk
