#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ssk/tensor.hpp"

namespace ssk {

/// SSK1 archive: named tensors plus free-form JSON metadata.
///
/// Layout (all integers little-endian):
///   "SSK1" | u32 format version | u64 index length | JSON index | payload
/// The index lists {name, shape, offset, count} per tensor; `offset` is the
/// byte offset into the payload, which holds 64-bit IEEE doubles.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  void put(std::string name, Tensor t);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every parameter into `ckpt` under its store name.
void put_parameters(Checkpoint& ckpt, const ParameterStore& store);
/// Overwrites store values from `ckpt`; every store entry must be present
/// with a matching shape.
void load_parameters(const Checkpoint& ckpt, ParameterStore& store);

}  // namespace ssk
