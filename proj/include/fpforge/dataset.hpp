#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpforge/error.hpp"
#include "fpforge/io.hpp"
#include "fpforge/tensor.hpp"

namespace fpforge {

inline constexpr int kManifestVersion = 1;
inline constexpr std::size_t kChannels = 3;

struct SampleRecord {
  std::size_t index = 0;
  int label = 0;  // 0 real, 1 fake
  std::string category_id;
  std::optional<std::string> gan_id;
  std::uint64_t seed = 0;
  std::size_t offset = 0;  // bytes into data.f32
  std::string split;       // "train" or "test"
  // Test reals are paired with one GAN's fakes for evaluation.
  std::optional<std::string> eval_for;
  nlohmann::json perturbation;  // null unless produced by augmentation
};

/// Records plus their pixels, held in memory as one CHW block per record.
struct Dataset {
  std::size_t side = 0;
  std::vector<SampleRecord> records;
  std::vector<float> pixels;
  nlohmann::json config;  // echo of the generating configuration

  std::size_t image_numel() const { return kChannels * side * side; }
  std::size_t size() const { return records.size(); }

  std::span<const float> pixels_of(std::size_t i) const {
    return std::span<const float>(pixels).subspan(i * image_numel(), image_numel());
  }

  Tensor<float> image(std::size_t i) const {
    auto px = pixels_of(i);
    return Tensor<float>({kChannels, side, side}, std::vector<float>(px.begin(), px.end()));
  }

  /// N x 3 x S x S batch of the given records.
  Tensor<float> batch(std::span<const std::size_t> idx) const {
    std::vector<float> out(idx.size() * image_numel());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto px = pixels_of(idx[k]);
      std::copy(px.begin(), px.end(), out.begin() + static_cast<std::ptrdiff_t>(k * image_numel()));
    }
    return Tensor<float>({idx.size(), kChannels, side, side}, std::move(out));
  }

  template <class Pred>
  std::vector<std::size_t> select(Pred&& pred) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (pred(records[i])) out.push_back(i);
    }
    return out;
  }

  /// Appends a record, assigning index and offset.
  void append(SampleRecord rec, std::span<const float> image) {
    if (image.size() != image_numel()) {
      throw ValidationError("dataset append: image has " + std::to_string(image.size()) + " values, expected " +
                            std::to_string(image_numel()));
    }
    rec.index = records.size();
    rec.offset = records.size() * image_numel() * sizeof(float);
    records.push_back(std::move(rec));
    pixels.insert(pixels.end(), image.begin(), image.end());
  }
};

inline nlohmann::json record_to_json(const SampleRecord& r) {
  nlohmann::json j{{"index", r.index},
                   {"label", r.label == 1 ? "fake" : "real"},
                   {"category_id", r.category_id},
                   {"gan_id", r.gan_id ? nlohmann::json(*r.gan_id) : nlohmann::json(nullptr)},
                   {"seed", r.seed},
                   {"offset", r.offset},
                   {"split", r.split}};
  if (r.eval_for) j["eval_for"] = *r.eval_for;
  if (!r.perturbation.is_null()) j["perturbation"] = r.perturbation;
  return j;
}

inline SampleRecord record_from_json(const nlohmann::json& j) {
  SampleRecord r;
  r.index = j.at("index").get<std::size_t>();
  const auto label = j.at("label").get<std::string>();
  if (label != "real" && label != "fake") throw ValidationError("manifest: record label must be real or fake");
  r.label = label == "fake" ? 1 : 0;
  r.category_id = j.at("category_id").get<std::string>();
  if (!j.at("gan_id").is_null()) r.gan_id = j.at("gan_id").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.offset = j.at("offset").get<std::size_t>();
  r.split = j.at("split").get<std::string>();
  if (j.contains("eval_for")) r.eval_for = j.at("eval_for").get<std::string>();
  if (j.contains("perturbation")) r.perturbation = j.at("perturbation");
  return r;
}

/// Checks the manifest invariants: contiguous non-overlapping offsets,
/// gan_id present exactly on fakes, pixels in [0, 1].
inline void validate_dataset(const Dataset& d) {
  const std::size_t stride = d.image_numel() * sizeof(float);
  if (d.pixels.size() != d.records.size() * d.image_numel()) {
    throw ValidationError("dataset: pixel block holds " + std::to_string(d.pixels.size()) + " values for " +
                          std::to_string(d.records.size()) + " records");
  }
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& r = d.records[i];
    if (r.index != i || r.offset != i * stride) {
      throw ValidationError("dataset: record " + std::to_string(i) + " has index/offset out of sequence");
    }
    if ((r.label == 1) != r.gan_id.has_value()) {
      throw ValidationError("dataset: record " + std::to_string(i) + (r.label == 1 ? " is fake without" : " is real with") +
                            " a gan_id");
    }
    if (r.split != "train" && r.split != "test") {
      throw ValidationError("dataset: record " + std::to_string(i) + " has unknown split '" + r.split + "'");
    }
  }
  for (float v : d.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("dataset: pixel value outside [0, 1]");
  }
}

inline std::string encode_manifest(const Dataset& d) {
  nlohmann::json j;
  j["version"] = kManifestVersion;
  j["side"] = d.side;
  j["channels"] = kChannels;
  j["blob"] = "data.f32";
  j["config"] = d.config;
  j["records"] = nlohmann::json::array();
  for (const auto& r : d.records) j["records"].push_back(record_to_json(r));
  return j.dump(1) + "\n";
}

/// Writes `manifest.json` and `data.f32` into `dir`.
inline void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  validate_dataset(d);
  std::string blob;
  blob.reserve(d.pixels.size() * 4);
  append_f32<float>(blob, d.pixels);
  write_file(dir / "data.f32", blob);
  write_file(dir / "manifest.json", encode_manifest(d));
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  Dataset d;
  try {
    if (j.at("version").get<int>() != kManifestVersion) throw ValidationError("unsupported manifest version");
    if (j.at("channels").get<std::size_t>() != kChannels) throw ValidationError("manifest must describe 3 channels");
    d.side = j.at("side").get<std::size_t>();
    d.config = j.value("config", nlohmann::json());
    for (const auto& r : j.at("records")) d.records.push_back(record_from_json(r));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  const auto blob = read_file(dir / "data.f32");
  if (blob.size() != d.records.size() * d.image_numel() * 4) {
    throw ValidationError((dir / "data.f32").string() + ": size " + std::to_string(blob.size()) +
                          " does not match the manifest");
  }
  d.pixels.resize(blob.size() / 4);
  decode_f32(blob.data(), d.pixels.size(), d.pixels.data());
  validate_dataset(d);
  return d;
}

/// Binary PPM (P6, maxval 255) of a 3 x S x S image in [0, 1], rounding to nearest.
inline std::string encode_ppm(std::span<const float> chw, std::size_t side) {
  if (chw.size() != kChannels * side * side) throw ValidationError("encode_ppm: image size does not match side");
  std::string out = "P6\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  const std::size_t plane = side * side;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      const float v = std::clamp(chw[c * plane + i], 0.0f, 1.0f);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
  }
  return out;
}

inline void export_ppm(std::span<const float> chw, std::size_t side, const std::filesystem::path& path) {
  write_file(path, encode_ppm(chw, side));
}

/// Decodes a binary PPM written by encode_ppm back to [0, 1] floats.
inline Tensor<float> decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && (std::isspace(static_cast<unsigned char>(bytes[pos])) || bytes[pos] == '#')) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        ++pos;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P6") throw ValidationError("ppm: missing P6 magic");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw ValidationError("ppm: malformed header");
  }
  if (maxval != 255) throw ValidationError("ppm: only maxval 255 is supported");
  ++pos;
  if (bytes.size() < pos + w * h * 3) throw ValidationError("ppm: truncated pixel data");
  Tensor<float> out({kChannels, h, w});
  for (std::size_t i = 0; i < w * h; ++i) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      out[c * w * h + i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i * 3 + c])) / 255.0f;
    }
  }
  return out;
}

}  // namespace fpforge
