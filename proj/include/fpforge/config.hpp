#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "fpforge/augment.hpp"
#include "fpforge/detector.hpp"
#include "fpforge/error.hpp"
#include "fpforge/extractor.hpp"
#include "fpforge/io.hpp"
#include "fpforge/synthgan.hpp"

namespace fpforge {

enum class ExperimentKind { CrossGan, CrossCategory, CategorySweep, AblationAdv, AblationDetector };

inline std::string experiment_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::CrossGan: return "cross_gan";
    case ExperimentKind::CrossCategory: return "cross_category";
    case ExperimentKind::CategorySweep: return "category_sweep";
    case ExperimentKind::AblationAdv: return "ablation_adv";
    case ExperimentKind::AblationDetector: return "ablation_detector";
  }
  return "";
}

inline ExperimentKind parse_experiment(const std::string& s) {
  for (auto k : {ExperimentKind::CrossGan, ExperimentKind::CrossCategory, ExperimentKind::CategorySweep,
                 ExperimentKind::AblationAdv, ExperimentKind::AblationDetector}) {
    if (experiment_name(k) == s) return k;
  }
  throw ValidationError("unknown experiment '" + s +
                        "' (expected cross_gan, cross_category, category_sweep, ablation_adv or ablation_detector)");
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::CrossGan;
  std::uint64_t seed = 1;
  std::string output_dir;  // empty: chosen by the caller
  std::string cache_dir;   // empty: <output_dir>/cache
  BenchmarkConfig dataset = default_benchmark();
  ExtractorTrainConfig extractor;
  PerturbConfig perturb;
  DetectorTrainConfig detector;
  std::vector<Strategy> arms{Strategy::None, Strategy::Scaling, Strategy::Mixup};
  // cross_category
  std::string train_category = "cat0";
  std::size_t cross_category_test_per_gan = 400;
  // category_sweep
  std::vector<std::size_t> sweep_counts{1, 2, 4};
  // ablation_adv
  Strategy ablation_strategy = Strategy::Scaling;
  // ablation_detector
  std::vector<std::string> detector_variants{"smaller", "small", "larger"};
  // spectrum figures and mechanism checks
  bool spectra = true;
  std::size_t spectrum_images = 200;
};

namespace detail {

/// Reads fields of one JSON object, remembering which keys were consumed so
/// leftovers can be reported with their JSON path.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  void read(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    const auto& v = j_.at(key);
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_integer()) {
        throw ValidationError(path_ + "/" + key + ": expected " + type_label<T>() + ", got " +
                              (v.is_number_float() ? std::string("a fractional number") : std::string(v.type_name())));
      }
      if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
        throw ValidationError(path_ + "/" + key + ": must not be negative");
      }
    }
    try {
      out = v.get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(path_ + "/" + key + ": expected " + type_label<T>() + ", got " + j_.at(key).type_name());
    }
  }

  template <class T>
  T required(const std::string& key) {
    if (!j_.contains(key)) throw ValidationError(where() + ": missing required field '" + key + "'");
    T v{};
    read(key, v);
    return v;
  }

  const nlohmann::json& child(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::string path(const std::string& key) const { return path_ + "/" + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ValidationError(path_ + "/" + it.key() + ": unknown key");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "/" : path_; }

  template <class T>
  static std::string type_label() {
    if constexpr (std::is_same_v<T, bool>) {
      return "a boolean";
    } else if constexpr (std::is_integral_v<T>) {
      return "an integer";
    } else if constexpr (std::is_floating_point_v<T>) {
      return "a number";
    } else if constexpr (std::is_same_v<T, std::string>) {
      return "a string";
    } else {
      return "an array";
    }
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline GanProfile parse_gan(const nlohmann::json& j, const std::string& path) {
  ObjectReader r(j, path);
  GanProfile g;
  g.gan_id = r.required<std::string>("gan_id");
  std::string pattern = r.required<std::string>("pattern");
  try {
    g.pattern = parse_pattern(pattern);
  } catch (const ValidationError& e) {
    throw ValidationError(r.path("pattern") + ": " + e.what());
  }
  r.read("period_px", g.period_px);
  r.read("phase", g.phase);
  r.read("amplitude", g.amplitude);
  r.read("orientation", g.orientation);
  r.read("jitter_phase", g.jitter_phase);
  r.finish();
  return g;
}

inline CategoryProfile parse_category(const nlohmann::json& j, const std::string& path) {
  ObjectReader r(j, path);
  CategoryProfile c;
  c.category_id = r.required<std::string>("category_id");
  r.read("cutoff", c.cutoff);
  r.read("blob_count", c.blob_count);
  r.read("base_lo", c.base_lo);
  r.read("base_hi", c.base_hi);
  r.read("texture_std", c.texture_std);
  r.read("blob_radius_lo", c.blob_radius_lo);
  r.read("blob_radius_hi", c.blob_radius_hi);
  r.finish();
  return c;
}

inline void parse_dataset(const nlohmann::json& j, const std::string& path, BenchmarkConfig& d) {
  ObjectReader r(j, path);
  r.read("side", d.side);
  r.read("noise_sigma", d.noise_sigma);
  if (r.has("categories")) {
    const auto& arr = r.child("categories");
    if (!arr.is_array()) throw ValidationError(r.path("categories") + ": expected an array");
    d.categories.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) d.categories.push_back(parse_category(arr[i], r.path("categories") + "/" + std::to_string(i)));
  }
  if (r.has("gans")) {
    const auto& arr = r.child("gans");
    if (!arr.is_array()) throw ValidationError(r.path("gans") + ": expected an array");
    d.gans.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) d.gans.push_back(parse_gan(arr[i], r.path("gans") + "/" + std::to_string(i)));
  }
  r.read("seen_gans", d.seen_gans);
  r.read("unseen_gans", d.unseen_gans);
  r.read("train_categories", d.train_categories);
  r.read("train_real", d.train_real);
  r.read("train_fake", d.train_fake);
  r.read("test_per_gan", d.test_per_gan);
  r.finish();
}

template <class Fn>
void with_path(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace detail

inline void validate_config(const ExperimentConfig& c) {
  detail::with_path("/dataset", [&] { validate_benchmark(c.dataset); });
  detail::with_path("/perturb", [&] { validate_perturb(c.perturb); });
  detail::with_path("/detector/variant", [&] { detector_widths(c.detector.variant); });
  for (const auto& v : c.detector_variants) detail::with_path("/detector_variants", [&] { detector_widths(v); });
  if (c.extractor.batch_size == 0 || c.detector.batch_size == 0) throw ValidationError("batch_size must be positive");
  if (c.extractor.epochs == 0 || c.detector.epochs == 0) throw ValidationError("epochs must be positive");
  if (!(c.extractor.lambda_adv >= 0.0)) throw ValidationError("/extractor/lambda_adv: must be >= 0");
  if (!(c.extractor.lr_e > 0.0 && c.extractor.lr_d > 0.0 && c.detector.lr > 0.0)) {
    throw ValidationError("learning rates must be > 0");
  }
  if (c.arms.empty()) throw ValidationError("/arms: at least one arm is required");
  const auto& cats = c.dataset.categories;
  if (std::none_of(cats.begin(), cats.end(), [&](const auto& k) { return k.category_id == c.train_category; })) {
    throw ValidationError("/cross_category/train_category: '" + c.train_category + "' is not a configured category");
  }
  for (auto n : c.sweep_counts) {
    if (n == 0 || n > cats.size()) {
      throw ValidationError("/sweep_counts: " + std::to_string(n) + " is outside [1, " + std::to_string(cats.size()) + "]");
    }
  }
  if (c.spectrum_images == 0) throw ValidationError("/spectrum_images: must be positive");
}

inline ExperimentConfig parse_config_json(const nlohmann::json& j) {
  using detail::ObjectReader;
  ObjectReader r(j, "");
  ExperimentConfig c;
  const auto experiment = r.required<std::string>("experiment");
  detail::with_path("/experiment", [&] { c.kind = parse_experiment(experiment); });
  c.seed = r.required<std::uint64_t>("seed");
  r.read("output_dir", c.output_dir);
  r.read("cache_dir", c.cache_dir);
  if (r.has("dataset")) detail::parse_dataset(r.child("dataset"), "/dataset", c.dataset);
  if (r.has("extractor")) {
    ObjectReader e(r.child("extractor"), "/extractor");
    e.read("lambda_adv", c.extractor.lambda_adv);
    e.read("lr_e", c.extractor.lr_e);
    e.read("lr_d", c.extractor.lr_d);
    e.read("epochs", c.extractor.epochs);
    e.read("batch_size", c.extractor.batch_size);
    e.read("adv_enabled", c.extractor.adv_enabled);
    e.finish();
  }
  if (r.has("perturb")) {
    ObjectReader p(r.child("perturb"), "/perturb");
    p.read("alpha0", c.perturb.alpha0);
    p.read("alpha_min", c.perturb.alpha_min);
    p.read("n", c.perturb.n);
    p.read("apply_prob", c.perturb.apply_prob);
    p.finish();
  }
  if (r.has("detector")) {
    ObjectReader d(r.child("detector"), "/detector");
    d.read("variant", c.detector.variant);
    d.read("lr", c.detector.lr);
    d.read("epochs", c.detector.epochs);
    d.read("batch_size", c.detector.batch_size);
    d.finish();
  }
  if (r.has("arms")) {
    std::vector<std::string> arms;
    r.read("arms", arms);
    c.arms.clear();
    detail::with_path("/arms", [&] {
      for (const auto& a : arms) c.arms.push_back(parse_strategy(a));
    });
  }
  if (r.has("cross_category")) {
    ObjectReader x(r.child("cross_category"), "/cross_category");
    x.read("train_category", c.train_category);
    x.read("test_per_gan", c.cross_category_test_per_gan);
    x.finish();
  }
  r.read("sweep_counts", c.sweep_counts);
  if (r.has("ablation_strategy")) {
    std::string s;
    r.read("ablation_strategy", s);
    detail::with_path("/ablation_strategy", [&] { c.ablation_strategy = parse_strategy(s); });
  }
  r.read("detector_variants", c.detector_variants);
  r.read("spectra", c.spectra);
  r.read("spectrum_images", c.spectrum_images);
  r.finish();
  validate_config(c);
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& source) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw ValidationError(source + ": empty config file");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(source + ": invalid JSON: " + e.what());
  }
  try {
    return parse_config_json(j);
  } catch (const ValidationError& e) {
    throw ValidationError(source + ": " + e.what());
  }
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  return parse_config_text(read_file(path), path.string());
}

inline nlohmann::json gan_to_json(const GanProfile& g) {
  return {{"gan_id", g.gan_id},       {"pattern", pattern_name(g.pattern)}, {"period_px", g.period_px},
          {"phase", g.phase},         {"amplitude", g.amplitude},           {"orientation", g.orientation},
          {"jitter_phase", g.jitter_phase}};
}

inline nlohmann::json category_to_json(const CategoryProfile& c) {
  return {{"category_id", c.category_id}, {"cutoff", c.cutoff},
          {"blob_count", c.blob_count},   {"base_lo", c.base_lo},
          {"base_hi", c.base_hi},         {"texture_std", c.texture_std},
          {"blob_radius_lo", c.blob_radius_lo}, {"blob_radius_hi", c.blob_radius_hi}};
}

inline nlohmann::json dataset_to_json(const BenchmarkConfig& d) {
  nlohmann::json cats = nlohmann::json::array(), gans = nlohmann::json::array();
  for (const auto& c : d.categories) cats.push_back(category_to_json(c));
  for (const auto& g : d.gans) gans.push_back(gan_to_json(g));
  return {{"side", d.side},
          {"noise_sigma", d.noise_sigma},
          {"categories", cats},
          {"gans", gans},
          {"seen_gans", d.seen_gans},
          {"unseen_gans", d.unseen_gans},
          {"train_categories", d.train_categories},
          {"train_real", d.train_real},
          {"train_fake", d.train_fake},
          {"test_per_gan", d.test_per_gan}};
}

inline nlohmann::json extractor_to_json(const ExtractorTrainConfig& e) {
  return {{"lambda_adv", e.lambda_adv}, {"lr_e", e.lr_e},
          {"lr_d", e.lr_d},             {"epochs", e.epochs},
          {"batch_size", e.batch_size}, {"adv_enabled", e.adv_enabled}};
}

inline nlohmann::json perturb_to_json(const PerturbConfig& p) {
  return {{"alpha0", p.alpha0}, {"alpha_min", p.alpha_min}, {"n", p.n}, {"apply_prob", p.apply_prob}};
}

inline nlohmann::json detector_to_json(const DetectorTrainConfig& d) {
  return {{"variant", d.variant}, {"lr", d.lr}, {"epochs", d.epochs}, {"batch_size", d.batch_size}};
}

/// Fully defaulted config. Paths are left out so that the echo, and
/// everything hashed from it, does not depend on where a run writes.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json arms = nlohmann::json::array();
  for (auto a : c.arms) arms.push_back(strategy_name(a));
  return {{"experiment", experiment_name(c.kind)},
          {"seed", c.seed},
          {"dataset", dataset_to_json(c.dataset)},
          {"extractor", extractor_to_json(c.extractor)},
          {"perturb", perturb_to_json(c.perturb)},
          {"detector", detector_to_json(c.detector)},
          {"arms", arms},
          {"cross_category", {{"train_category", c.train_category}, {"test_per_gan", c.cross_category_test_per_gan}}},
          {"sweep_counts", c.sweep_counts},
          {"ablation_strategy", strategy_name(c.ablation_strategy)},
          {"detector_variants", c.detector_variants},
          {"spectra", c.spectra},
          {"spectrum_images", c.spectrum_images}};
}

/// FNV-1a of the compact JSON dump, as 16 hex digits.
inline std::string json_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fpforge
