#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssk/gradcheck.hpp"

namespace ssk {

struct GradCheckCase {
  std::string name;
  GradCheckReport report;
};

/// Finite-difference checks of every differentiable op, the ConvLSTM cell,
/// each loss, and a small ConvLSTM-FCN composed with each loss, on seeded
/// inputs of `size` x `size` pixels.
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 0, std::size_t size = 16,
                                               const GradCheckOptions& opt = {});

nlohmann::json to_json(const std::vector<GradCheckCase>& cases);

}  // namespace ssk
