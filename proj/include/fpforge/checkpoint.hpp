#pragma once

#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpforge/adam.hpp"
#include "fpforge/error.hpp"
#include "fpforge/io.hpp"
#include "fpforge/tensor.hpp"

// Layout: "FPFORGE1" | JSON header | '\0' | f32 little-endian blobs.
// Header: {"params": [{"name", "shape", "dtype": "f32", "offset"}, ...]},
// offsets counted in bytes from the start of the blob section.

namespace fpforge {

inline constexpr char kCheckpointMagic[] = "FPFORGE1";
inline constexpr std::size_t kCheckpointMagicLen = 8;

template <class T>
std::string encode_checkpoint(const std::vector<NamedParam<T>>& params) {
  nlohmann::json header;
  header["params"] = nlohmann::json::array();
  std::string blobs;
  for (const auto& p : params) {
    header["params"].push_back(
        {{"name", p.name}, {"shape", p.tensor->shape()}, {"dtype", "f32"}, {"offset", blobs.size()}});
    append_f32<T>(blobs, p.tensor->data());
  }
  std::string out(kCheckpointMagic, kCheckpointMagicLen);
  out += header.dump();
  out.push_back('\0');
  out += blobs;
  return out;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedParam<T>>& params) {
  write_file(path, encode_checkpoint(params));
}

/// Fills every listed parameter from the checkpoint bytes; names and shapes
/// must match exactly. `source` only labels error messages.
template <class T>
void decode_checkpoint(const std::string& bytes, const std::vector<NamedParam<T>>& params, const std::string& source) {
  if (bytes.size() < kCheckpointMagicLen || bytes.compare(0, kCheckpointMagicLen, kCheckpointMagic) != 0) {
    throw ValidationError(source + ": not a checkpoint (bad magic)");
  }
  const auto nul = bytes.find('\0', kCheckpointMagicLen);
  if (nul == std::string::npos) throw ValidationError(source + ": truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kCheckpointMagicLen, bytes.begin() + static_cast<std::ptrdiff_t>(nul));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(source + ": malformed checkpoint header: " + e.what());
  }
  const std::size_t blob_base = nul + 1;
  std::map<std::string, nlohmann::json> entries;
  try {
    for (const auto& e : header.at("params")) entries[e.at("name").get<std::string>()] = e;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(source + ": malformed checkpoint header: " + e.what());
  }
  for (const auto& p : params) {
    auto it = entries.find(p.name);
    if (it == entries.end()) throw ValidationError(source + ": missing parameter '" + p.name + "'");
    const nlohmann::json& e = it->second;
    const auto shape = e.at("shape").get<Shape>();
    if (shape != p.tensor->shape()) {
      throw ValidationError(source + ": parameter '" + p.name + "' has shape " + shape_str(shape) + ", expected " +
                            shape_str(p.tensor->shape()));
    }
    if (e.at("dtype").get<std::string>() != "f32") {
      throw ValidationError(source + ": parameter '" + p.name + "' has unsupported dtype");
    }
    const auto offset = e.at("offset").get<std::size_t>();
    const std::size_t count = p.tensor->numel();
    if (blob_base + offset + count * 4 > bytes.size()) {
      throw ValidationError(source + ": parameter '" + p.name + "' extends past end of file");
    }
    decode_f32(bytes.data() + blob_base + offset, count, p.tensor->storage().data());
  }
  if (entries.size() != params.size()) {
    throw ValidationError(source + ": checkpoint holds " + std::to_string(entries.size()) + " parameters, expected " +
                          std::to_string(params.size()));
  }
}

template <class T>
void load_checkpoint(const std::filesystem::path& path, const std::vector<NamedParam<T>>& params) {
  decode_checkpoint(read_file(path), params, path.string());
}

}  // namespace fpforge
