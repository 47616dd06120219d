#include "ssk/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssk {
namespace {

constexpr char kMagic[4] = {'S', 'S', 'K', '1'};

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  if (pos + static_cast<std::size_t>(bytes) > in.size()) throw std::runtime_error("SSK1: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

void Checkpoint::put(std::string name, Tensor t) {
  for (auto& [n, v] : tensors) {
    if (n == name) {
      v = std::move(t);
      return;
    }
  }
  tensors.emplace_back(std::move(name), std::move(t));
}

const Tensor& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, v] : tensors)
    if (n == name) return v;
  throw std::out_of_range("checkpoint has no tensor named " + name);
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& [n, v] : tensors)
    if (n == name) return true;
  return false;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json index;
  index["format"] = "SSK1";
  index["version"] = Checkpoint::kVersion;
  index["meta"] = ckpt.meta;
  index["tensors"] = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : ckpt.tensors) {
    index["tensors"].push_back({{"name", name},
                                {"shape", t.shape()},
                                {"offset", payload.size()},
                                {"count", t.numel()}});
    for (double v : t.data()) put_le(payload, std::bit_cast<std::uint64_t>(v), 8);
  }
  const std::string idx = index.dump();
  std::string out(kMagic, 4);
  put_le(out, Checkpoint::kVersion, 4);
  put_le(out, idx.size(), 8);
  out += idx;
  out += payload;
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw std::runtime_error("not an SSK1 checkpoint (bad magic)");
  }
  const auto version = get_le(bytes, 4, 4);
  if (version != Checkpoint::kVersion) {
    throw std::runtime_error("unsupported SSK1 version " + std::to_string(version));
  }
  const auto idx_len = get_le(bytes, 8, 8);
  if (16 + idx_len > bytes.size()) throw std::runtime_error("SSK1: truncated index");
  const auto index = nlohmann::json::parse(bytes.substr(16, idx_len));
  const std::size_t payload = 16 + idx_len;

  Checkpoint ckpt;
  ckpt.meta = index.value("meta", nlohmann::json::object());
  for (const auto& e : index.at("tensors")) {
    Shape shape = e.at("shape").get<Shape>();
    const std::size_t count = e.at("count").get<std::size_t>();
    const std::size_t offset = e.at("offset").get<std::size_t>();
    if (shape_numel(shape) != count) throw std::runtime_error("SSK1: shape/count mismatch");
    if (payload + offset + 8 * count > bytes.size()) throw std::runtime_error("SSK1: truncated payload");
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i)
      data[i] = std::bit_cast<double>(get_le(bytes, payload + offset + 8 * i, 8));
    ckpt.tensors.emplace_back(e.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

void put_parameters(Checkpoint& ckpt, const ParameterStore& store) {
  for (const auto& p : store.items()) ckpt.put(p.name, p.value);
}

void load_parameters(const Checkpoint& ckpt, ParameterStore& store) {
  for (auto& p : store.items()) {
    const Tensor& t = ckpt.at(p.name);
    if (t.shape() != p.value.shape()) {
      throw std::runtime_error("checkpoint tensor " + p.name + " has shape " + shape_str(t.shape()) +
                               ", expected " + shape_str(p.value.shape()));
    }
    p.value = t;
  }
}

}  // namespace ssk
