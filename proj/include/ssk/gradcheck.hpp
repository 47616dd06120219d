#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ssk/tape.hpp"

namespace ssk {

/// Builds a scalar on `tape` from the bound parameters (same order as passed
/// to finite_diff_check).
using TapeFunction = std::function<Var(Tape& tape, const std::vector<Var>& params)>;

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-3;
  // Denominator floor for the relative error, so entries whose true gradient
  // is ~0 are judged on absolute error instead.
  double abs_floor = 1e-7;
  // Number of randomly chosen entries probed per parameter; 0 probes all.
  std::size_t probes_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t probed = 0;
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0;
  double numeric_at_worst = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed = true;
  bool non_finite = false;
  std::string message;

  double max_rel_error() const;
};

/// Central-difference check of the tape gradient of `f` w.r.t. each parameter.
/// Non-finite function values are reported in the result rather than thrown.
GradCheckReport finite_diff_check(const TapeFunction& f, const std::vector<Parameter*>& params,
                                  const GradCheckOptions& opt = {});

std::string to_string(const GradCheckReport& report);

}  // namespace ssk
