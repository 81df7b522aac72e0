#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fpforge/dataset.hpp"
#include "fpforge/error.hpp"
#include "fpforge/parallel.hpp"
#include "fpforge/rng.hpp"
#include "fpforge/spectrum.hpp"
#include "fpforge/tensor.hpp"

namespace fpforge {

enum class PatternKind { Checkerboard, SineGrid, BlockUpsampleResidual };

inline std::string pattern_name(PatternKind k) {
  switch (k) {
    case PatternKind::Checkerboard: return "checkerboard";
    case PatternKind::SineGrid: return "sine_grid";
    case PatternKind::BlockUpsampleResidual: return "block_upsample_residual";
  }
  return "";
}

inline PatternKind parse_pattern(const std::string& s) {
  if (s == "checkerboard") return PatternKind::Checkerboard;
  if (s == "sine_grid") return PatternKind::SineGrid;
  if (s == "block_upsample_residual") return PatternKind::BlockUpsampleResidual;
  throw ValidationError("unknown pattern '" + s + "' (expected checkerboard, sine_grid or block_upsample_residual)");
}

/// Checkerboard: cells of period/2 pixels; phase shifts the grid along x by
/// phase/(2 pi) periods. SineGrid: plane wave sin(2 pi u / period + phase)
/// with u = x cos(orientation) + y sin(orientation).
/// BlockUpsampleResidual: luminance minus its decimate-then-nearest-upsample
/// copy (every period-th pixel kept), rescaled to RMS = amplitude.
/// With jitter_phase each image draws its own phase uniformly; the pattern is
/// then no longer a fixed image.
struct GanProfile {
  std::string gan_id;
  PatternKind pattern = PatternKind::Checkerboard;
  int period_px = 2;
  double phase = 0.0;
  double amplitude = 0.02;
  double orientation = 0.0;
  bool jitter_phase = false;
};

struct CategoryProfile {
  std::string category_id;
  double cutoff = 0.02;  // low-pass cutoff in cycles per pixel
  int blob_count = 2;
  double base_lo = 0.35;
  double base_hi = 0.65;
  double texture_std = 0.12;
  double blob_radius_lo = 8.0;
  double blob_radius_hi = 16.0;
};

inline void validate_profile(const GanProfile& p, std::size_t side) {
  const std::string who = "gan profile '" + p.gan_id + "': ";
  if (p.gan_id.empty()) throw ValidationError("gan profile with empty gan_id");
  if (!(p.amplitude > 0.0 && p.amplitude <= 0.1)) throw ValidationError(who + "amplitude must be in (0, 0.1]");
  if (p.period_px < 2) throw ValidationError(who + "period_px must be >= 2");
  if (static_cast<std::size_t>(p.period_px) > side / 4) {
    throw ValidationError(who + "period_px " + std::to_string(p.period_px) + " exceeds side/4 = " + std::to_string(side / 4));
  }
  if (p.pattern != PatternKind::SineGrid && side % static_cast<std::size_t>(p.period_px) != 0) {
    throw ValidationError(who + "period_px must divide the image side");
  }
  if (p.pattern == PatternKind::Checkerboard && p.period_px % 2 != 0) {
    throw ValidationError(who + "checkerboard period_px must be even");
  }
  if (!std::isfinite(p.phase) || !std::isfinite(p.orientation)) throw ValidationError(who + "phase/orientation must be finite");
}

inline void validate_category(const CategoryProfile& c) {
  const std::string who = "category '" + c.category_id + "': ";
  if (c.category_id.empty()) throw ValidationError("category with empty category_id");
  if (!(c.cutoff > 0.0 && c.cutoff <= 0.5)) throw ValidationError(who + "cutoff must be in (0, 0.5]");
  if (c.blob_count < 0) throw ValidationError(who + "blob_count must be >= 0");
  if (!(c.base_lo >= 0.0 && c.base_lo <= c.base_hi && c.base_hi <= 1.0)) throw ValidationError(who + "bad base range");
  if (!(c.blob_radius_lo > 0.0 && c.blob_radius_lo <= c.blob_radius_hi)) throw ValidationError(who + "bad blob radius range");
}

inline std::vector<CategoryProfile> default_categories() {
  std::vector<CategoryProfile> out;
  const double cutoffs[] = {0.015, 0.02, 0.025, 0.03};
  for (int i = 0; i < 4; ++i) {
    CategoryProfile c;
    c.category_id = "cat" + std::to_string(i);
    c.cutoff = cutoffs[i];
    c.blob_count = 2 + i;
    out.push_back(c);
  }
  return out;
}

/// Procedural real image, 3 x S x S in [0, 1]: base colour, low-pass filtered
/// noise texture with a per-channel tint, soft blobs, white sensor noise.
inline Tensor<float> gen_real(const CategoryProfile& cat, std::uint64_t seed, std::size_t side, double noise_sigma) {
  if (!is_power_of_two(side)) throw ValidationError("gen_real: side must be a power of two");
  Rng rng(seed);
  const std::size_t plane = side * side;
  std::vector<double> img(kChannels * plane);
  double base[3];
  for (double& b : base) b = rng.uniform(cat.base_lo, cat.base_hi);

  ComplexGrid g{side, std::vector<Complex>(plane)};
  for (auto& v : g.data) v = rng.normal();
  g = fft2d(std::move(g));
  const auto s = static_cast<double>(side);
  for (std::size_t y = 0; y < side; ++y) {
    const double fy = (y < side / 2 ? static_cast<double>(y) : static_cast<double>(y) - s) / s;
    for (std::size_t x = 0; x < side; ++x) {
      const double fx = (x < side / 2 ? static_cast<double>(x) : static_cast<double>(x) - s) / s;
      g.at(y, x) *= std::exp(-(fx * fx + fy * fy) / (cat.cutoff * cat.cutoff));
    }
  }
  g = ifft2d(std::move(g));
  double mean = 0.0, sq = 0.0;
  for (const auto& v : g.data) mean += v.real();
  mean /= static_cast<double>(plane);
  for (const auto& v : g.data) sq += (v.real() - mean) * (v.real() - mean);
  const double scale = cat.texture_std / (std::sqrt(sq / static_cast<double>(plane)) + 1e-12);
  double tint[3];
  for (double& t : tint) t = rng.uniform(0.7, 1.3);
  for (std::size_t c = 0; c < kChannels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) img[c * plane + i] = base[c] + (g.data[i].real() - mean) * scale * tint[c];
  }

  for (int b = 0; b < cat.blob_count; ++b) {
    const double cx = rng.uniform(0.0, s), cy = rng.uniform(0.0, s);
    const double r = rng.uniform(cat.blob_radius_lo, cat.blob_radius_hi);
    double col[3];
    for (double& c : col) c = rng.uniform(0.2, 0.8);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        const double a = 0.8 * std::exp(-(dx * dx + dy * dy) / (2.0 * r * r));
        for (std::size_t c = 0; c < kChannels; ++c) {
          double& p = img[c * plane + y * side + x];
          p = p * (1.0 - a) + col[c] * a;
        }
      }
    }
  }

  Tensor<float> out({kChannels, side, side});
  for (std::size_t i = 0; i < img.size(); ++i) {
    out[i] = static_cast<float>(std::clamp(img[i] + noise_sigma * rng.normal(), 0.0, 1.0));
  }
  return out;
}

/// Zero-mean single-channel pattern (S x S) for `image`; the same plane is
/// added to every channel. `phase` overrides the profile phase.
inline std::vector<double> fingerprint_plane(const Tensor<float>& image, const GanProfile& p, double phase) {
  const std::size_t side = image.dim(1), plane = side * side;
  std::vector<double> out(plane, 0.0);
  const double a = p.amplitude;
  const auto period = static_cast<std::size_t>(p.period_px);
  switch (p.pattern) {
    case PatternKind::Checkerboard: {
      const std::size_t cell = period / 2;
      const double turns = phase / (2.0 * std::numbers::pi);
      const auto shift = static_cast<long>(std::lround((turns - std::floor(turns)) * static_cast<double>(period)));
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          const std::size_t xs = (x + static_cast<std::size_t>(shift)) / cell;
          out[y * side + x] = ((xs + y / cell) % 2 == 0) ? a : -a;
        }
      }
      break;
    }
    case PatternKind::SineGrid: {
      const double c = std::cos(p.orientation), s = std::sin(p.orientation);
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          const double u = static_cast<double>(x) * c + static_cast<double>(y) * s;
          out[y * side + x] = a * std::sin(2.0 * std::numbers::pi * u / static_cast<double>(period) + phase);
        }
      }
      break;
    }
    case PatternKind::BlockUpsampleResidual: {
      std::vector<double> lum(plane, 0.0);
      for (std::size_t c = 0; c < kChannels; ++c) {
        for (std::size_t i = 0; i < plane; ++i) lum[i] += static_cast<double>(image[c * plane + i]) / kChannels;
      }
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) out[y * side + x] = lum[y * side + x] - lum[(y - y % period) * side + x - x % period];
      }
      double sq = 0.0;
      for (double v : out) sq += v * v;
      const double rms = std::sqrt(sq / static_cast<double>(plane));
      for (double& v : out) v = rms > 1e-12 ? v * a / rms : 0.0;
      break;
    }
  }
  double mean = 0.0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(plane);
  for (double& v : out) v -= mean;
  return out;
}

/// clamp(image + pattern * gain, 0, 1). `gain` exists for testing the
/// vanishing-amplitude limit.
inline Tensor<float> embed_fingerprint(const Tensor<float>& image, const GanProfile& p, double phase, double gain = 1.0) {
  if (image.rank() != 3 || image.dim(0) != kChannels || image.dim(1) != image.dim(2)) {
    throw ValidationError("embed_fingerprint: image must be 3 x S x S, got " + shape_str(image.shape()));
  }
  const auto pat = fingerprint_plane(image, p, phase);
  const std::size_t plane = pat.size();
  Tensor<float> out(image.shape());
  for (std::size_t c = 0; c < kChannels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      out[c * plane + i] = static_cast<float>(std::clamp(static_cast<double>(image[c * plane + i]) + gain * pat[i], 0.0, 1.0));
    }
  }
  return out;
}

inline Tensor<float> embed_fingerprint(const Tensor<float>& image, const GanProfile& p) {
  return embed_fingerprint(image, p, p.phase);
}

/// Bin (ky, kx) of the unshifted spectrum where the profile concentrates its
/// energy. Block residuals are weak on the replica bins k*S/period and
/// strongest on the neighbour just below the first replica.
inline std::pair<long, long> characteristic_bin(const GanProfile& p, std::size_t side) {
  const auto s = static_cast<double>(side);
  const double f = s / static_cast<double>(p.period_px);
  switch (p.pattern) {
    case PatternKind::Checkerboard: return {std::lround(f), std::lround(f)};
    case PatternKind::SineGrid:
      return {std::lround(f * std::sin(p.orientation)), std::lround(f * std::cos(p.orientation))};
    case PatternKind::BlockUpsampleResidual: return {0, std::lround(f) - 1};
  }
  return {0, 0};
}

struct BenchmarkConfig {
  std::size_t side = 64;
  double noise_sigma = 0.005;
  std::vector<CategoryProfile> categories = default_categories();
  std::vector<GanProfile> gans;
  std::vector<std::string> seen_gans;
  std::vector<std::string> unseen_gans;  // empty: test only the seen GANs
  std::vector<std::string> train_categories;  // empty: all categories
  std::size_t train_real = 500;
  std::size_t train_fake = 500;
  std::size_t test_per_gan = 200;
};

inline const GanProfile& find_gan(const BenchmarkConfig& cfg, const std::string& id) {
  for (const auto& g : cfg.gans) {
    if (g.gan_id == id) return g;
  }
  throw ValidationError("unknown gan_id '" + id + "'");
}

inline void validate_benchmark(const BenchmarkConfig& cfg) {
  if (!is_power_of_two(cfg.side) || cfg.side < 16) throw ValidationError("side must be a power of two >= 16");
  if (!(cfg.noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be >= 0");
  if (cfg.categories.empty()) throw ValidationError("at least one category is required");
  std::set<std::string> ids;
  for (const auto& c : cfg.categories) {
    validate_category(c);
    if (!ids.insert(c.category_id).second) throw ValidationError("duplicate category_id '" + c.category_id + "'");
  }
  ids.clear();
  for (const auto& g : cfg.gans) {
    validate_profile(g, cfg.side);
    if (!ids.insert(g.gan_id).second) throw ValidationError("duplicate gan_id '" + g.gan_id + "'");
  }
  if (cfg.seen_gans.empty()) throw ValidationError("at least one seen GAN is required");
  std::set<std::string> listed;
  for (const auto& id : cfg.seen_gans) {
    find_gan(cfg, id);
    if (!listed.insert(id).second) throw ValidationError("gan_id '" + id + "' listed twice");
  }
  for (const auto& id : cfg.unseen_gans) {
    find_gan(cfg, id);
    if (!listed.insert(id).second) throw ValidationError("gan_id '" + id + "' is both seen and unseen, or listed twice");
  }
  for (const auto& id : cfg.train_categories) {
    if (std::none_of(cfg.categories.begin(), cfg.categories.end(), [&](const auto& c) { return c.category_id == id; })) {
      throw ValidationError("train category '" + id + "' is not a configured category");
    }
  }
  if (cfg.train_real == 0 || cfg.train_fake == 0 || cfg.test_per_gan == 0) {
    throw ValidationError("sample counts must be positive");
  }
}

/// Test GANs in report order: seen first, then unseen.
inline std::vector<std::string> test_gans(const BenchmarkConfig& cfg) {
  auto out = cfg.seen_gans;
  out.insert(out.end(), cfg.unseen_gans.begin(), cfg.unseen_gans.end());
  return out;
}

namespace detail {

struct PlannedSample {
  SampleRecord rec;
  std::size_t category = 0;
  const GanProfile* gan = nullptr;
};

}  // namespace detail

/// Deterministic benchmark: a pure function of (cfg, master_seed). Every
/// sample draws from its own seed derived from (master_seed, stream, i), so
/// the thread count does not change the bytes.
///
/// Train: train_real reals and train_fake fakes from the seen GANs (cycled),
/// categories cycled over train_categories. Test: for every test GAN,
/// test_per_gan fakes plus test_per_gan reals tagged eval_for that GAN.
inline Dataset make_benchmark(const BenchmarkConfig& cfg, std::uint64_t master_seed, unsigned threads = 1) {
  validate_benchmark(cfg);
  std::vector<std::size_t> train_cats;
  for (std::size_t c = 0; c < cfg.categories.size(); ++c) {
    if (cfg.train_categories.empty() ||
        std::find(cfg.train_categories.begin(), cfg.train_categories.end(), cfg.categories[c].category_id) !=
            cfg.train_categories.end()) {
      train_cats.push_back(c);
    }
  }
  const std::size_t k_all = cfg.categories.size();
  std::vector<detail::PlannedSample> plan;
  auto add = [&](std::uint64_t stream, std::size_t i, std::size_t cat, const GanProfile* gan, const char* split,
                 std::optional<std::string> eval_for) {
    detail::PlannedSample s;
    s.category = cat;
    s.gan = gan;
    s.rec.label = gan ? 1 : 0;
    s.rec.category_id = cfg.categories[cat].category_id;
    if (gan) s.rec.gan_id = gan->gan_id;
    s.rec.seed = derive_seed(derive_seed(master_seed, stream), i);
    s.rec.split = split;
    s.rec.eval_for = std::move(eval_for);
    plan.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < cfg.train_real; ++i) add(1, i, train_cats[i % train_cats.size()], nullptr, "train", {});
  for (std::size_t i = 0; i < cfg.train_fake; ++i) {
    add(2, i, train_cats[i % train_cats.size()], &find_gan(cfg, cfg.seen_gans[i % cfg.seen_gans.size()]), "train", {});
  }
  const auto tg = test_gans(cfg);
  for (std::size_t g = 0; g < tg.size(); ++g) {
    for (std::size_t i = 0; i < cfg.test_per_gan; ++i) add(100 + 2 * g, i, i % k_all, nullptr, "test", tg[g]);
    for (std::size_t i = 0; i < cfg.test_per_gan; ++i) add(101 + 2 * g, i, i % k_all, &find_gan(cfg, tg[g]), "test", {});
  }

  Dataset d;
  d.side = cfg.side;
  const std::size_t numel = d.image_numel();
  d.pixels.assign(plan.size() * numel, 0.0f);
  parallel_for(plan.size(), threads, [&](std::size_t i) {
    const auto& s = plan[i];
    auto img = gen_real(cfg.categories[s.category], s.rec.seed, cfg.side, cfg.noise_sigma);
    if (s.gan) {
      double phase = s.gan->phase;
      if (s.gan->jitter_phase) {
        Rng prng(derive_seed(s.rec.seed, 7));
        phase = prng.uniform(0.0, 2.0 * std::numbers::pi);
      }
      img = embed_fingerprint(img, *s.gan, phase);
    }
    std::copy(img.storage().begin(), img.storage().end(), d.pixels.begin() + static_cast<std::ptrdiff_t>(i * numel));
  });
  for (std::size_t i = 0; i < plan.size(); ++i) {
    plan[i].rec.index = i;
    plan[i].rec.offset = i * numel * sizeof(float);
    d.records.push_back(std::move(plan[i].rec));
  }
  return d;
}

/// Reference default profiles: one seen GAN and four unseen ones, pairwise
/// different in pattern kind or period.
inline BenchmarkConfig default_benchmark() {
  BenchmarkConfig cfg;
  auto gan = [](std::string id, PatternKind k, int period, double orientation, double amplitude) {
    GanProfile g;
    g.gan_id = std::move(id);
    g.pattern = k;
    g.period_px = period;
    g.orientation = orientation;
    g.amplitude = amplitude;
    return g;
  };
  cfg.gans = {
      gan("blockgan2", PatternKind::BlockUpsampleResidual, 2, 0.0, 0.02),
      gan("checkgan4", PatternKind::Checkerboard, 4, 0.0, 0.04),
      gan("checkgan8", PatternKind::Checkerboard, 8, 0.0, 0.04),
      gan("sinegan8", PatternKind::SineGrid, 8, std::numbers::pi / 2, 0.06),
      gan("sinegan16", PatternKind::SineGrid, 16, 0.0, 0.06),
  };
  cfg.seen_gans = {"blockgan2"};
  cfg.unseen_gans = {"checkgan4", "checkgan8", "sinegan8", "sinegan16"};
  return cfg;
}

}  // namespace fpforge
