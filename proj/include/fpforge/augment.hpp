#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpforge/error.hpp"
#include "fpforge/extractor.hpp"
#include "fpforge/rng.hpp"
#include "fpforge/tensor.hpp"

namespace fpforge {

enum class Strategy { None, Scaling, Mixup };

inline std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::None: return "none";
    case Strategy::Scaling: return "scaling";
    case Strategy::Mixup: return "mixup";
  }
  return "";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "none") return Strategy::None;
  if (s == "scaling") return Strategy::Scaling;
  if (s == "mixup") return Strategy::Mixup;
  throw ValidationError("unknown strategy '" + s + "' (expected none, scaling or mixup)");
}

struct PerturbConfig {
  Strategy strategy = Strategy::Scaling;
  double alpha0 = 5.0;
  double alpha_min = 0.0;  // |alpha| below this is redrawn; 0 keeps plain U[-alpha0, alpha0]
  int n = 2;
  double apply_prob = 0.8;
  std::uint64_t seed = 1;
};

inline void validate_perturb(const PerturbConfig& c) {
  if (!(c.alpha0 > 0.0) || !std::isfinite(c.alpha0)) throw ValidationError("alpha0 must be a finite value > 0");
  if (!(c.alpha_min >= 0.0 && c.alpha_min < c.alpha0)) throw ValidationError("alpha_min must be in [0, alpha0)");
  if (c.n < 2) throw ValidationError("mixup n must be >= 2");
  if (!(c.apply_prob >= 0.0 && c.apply_prob <= 1.0)) throw ValidationError("apply_prob must be in [0, 1]");
}

template <class T>
Tensor<T> perturb_scaling(const Tensor<T>& f, double alpha) {
  if (!std::isfinite(alpha)) throw ValidationError("perturb_scaling: alpha must be finite");
  Tensor<T> out(f.shape());
  const auto a = static_cast<T>(alpha);
  for (std::size_t i = 0; i < f.numel(); ++i) out[i] = a * f[i];
  return out;
}

/// Uniform on [-alpha0, alpha0]; with alpha_min > 0 on the two intervals
/// alpha_min <= |alpha| <= alpha0.
inline double sample_alpha(double alpha0, Rng& rng, double alpha_min = 0.0) {
  if (!(alpha0 > 0.0)) throw ValidationError("sample_alpha: alpha0 must be > 0");
  if (alpha_min <= 0.0) return rng.uniform(-alpha0, alpha0);
  const double m = rng.uniform(alpha_min, alpha0);
  return rng.uniform() < 0.5 ? -m : m;
}

/// Dirichlet(1, ..., 1): uniform on the simplex, via normalized exponentials.
inline std::vector<double> sample_simplex(int n, Rng& rng) {
  std::vector<double> b(static_cast<std::size_t>(n));
  double s = 0.0;
  for (auto& v : b) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    v = -std::log(u);
    s += v;
  }
  for (auto& v : b) v /= s;
  return b;
}

template <class T>
Tensor<T> perturb_mixup(const std::vector<const Tensor<T>*>& fps, const std::vector<double>& betas) {
  if (fps.size() < 2 || fps.size() != betas.size()) {
    throw ValidationError("perturb_mixup: need n >= 2 fingerprints and one ratio each");
  }
  double total = 0.0;
  for (double b : betas) {
    if (!std::isfinite(b)) throw ValidationError("perturb_mixup: ratios must be finite");
    total += b;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("perturb_mixup: ratios sum to " + std::to_string(total) + ", not 1");
  for (const auto* f : fps) {
    if (f->shape() != fps[0]->shape()) throw ValidationError("perturb_mixup: fingerprint shapes differ");
  }
  Tensor<T> out(fps[0]->shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double v = 0.0;
    for (std::size_t k = 0; k < fps.size(); ++k) v += betas[k] * static_cast<double>((*fps[k])[i]);
    out[i] = static_cast<T>(v);
  }
  return out;
}

template <class T>
Tensor<T> perturb_mixup(const std::vector<Tensor<T>>& fps, const std::vector<double>& betas) {
  std::vector<const Tensor<T>*> ptrs;
  for (const auto& f : fps) ptrs.push_back(&f);
  return perturb_mixup(ptrs, betas);
}

/// clamp(recon + F, 0, 1)
template <class T>
Tensor<T> recompose(const Tensor<T>& recon, const Tensor<T>& f) {
  if (recon.shape() != f.shape()) {
    throw ValidationError("recompose: shapes " + shape_str(recon.shape()) + " and " + shape_str(f.shape()) + " differ");
  }
  Tensor<T> out(recon.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(recon[i] + f[i], T(0), T(1));
  return out;
}

struct AugmentReport {
  std::size_t total = 0;
  std::size_t perturbed = 0;
  std::size_t passed_through = 0;
  std::size_t mixup_fallbacks = 0;  // batch smaller than n
  std::vector<nlohmann::json> records;  // per sample: what was applied
};

/// Perturbs each image of an N x 3 x S x S batch of fakes given their
/// reconstructions E(x). With probability apply_prob a sample's fingerprint
/// is replaced; Mixup partners are n distinct batch members drawn uniformly.
/// `forced_alpha` pins the Scaling factor (testing).
inline Tensor<float> augment_batch(const Tensor<float>& fakes, const Tensor<float>& recon, const PerturbConfig& cfg,
                                   Rng& rng, AugmentReport* report = nullptr, const double* forced_alpha = nullptr) {
  validate_perturb(cfg);
  if (fakes.shape() != recon.shape() || fakes.rank() != 4) {
    throw ValidationError("augment_batch: fakes and reconstructions must share an N x 3 x S x S shape");
  }
  const std::size_t n = fakes.dim(0), per = fakes.numel() / std::max<std::size_t>(n, 1);
  Tensor<float> out = fakes;
  if (cfg.strategy == Strategy::None) {
    if (report) {
      report->total += n;
      report->passed_through += n;
      report->records.resize(report->records.size() + n);
    }
    return out;
  }
  std::vector<Tensor<float>> fps;
  fps.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<float> f({per});
    for (std::size_t j = 0; j < per; ++j) f[j] = fakes[i * per + j] - recon[i * per + j];
    fps.push_back(std::move(f));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (report) ++report->total;
    nlohmann::json rec;
    if (rng.uniform() >= cfg.apply_prob) {
      if (report) {
        ++report->passed_through;
        report->records.push_back(rec);
      }
      continue;
    }
    Tensor<float> fnew;
    if (cfg.strategy == Strategy::Scaling) {
      const double alpha = forced_alpha ? *forced_alpha : sample_alpha(cfg.alpha0, rng, cfg.alpha_min);
      fnew = perturb_scaling(fps[i], alpha);
      rec = {{"strategy", "scaling"}, {"alpha", alpha}};
    } else {
      if (n < static_cast<std::size_t>(cfg.n)) {
        if (report) {
          ++report->mixup_fallbacks;
          ++report->passed_through;
          report->records.push_back(rec);
        }
        continue;
      }
      const auto partners = rng.sample_without_replacement(n, static_cast<std::size_t>(cfg.n));
      const auto betas = sample_simplex(cfg.n, rng);
      std::vector<const Tensor<float>*> sel;
      for (auto p : partners) sel.push_back(&fps[p]);
      fnew = perturb_mixup(sel, betas);
      rec = {{"strategy", "mixup"}, {"betas", betas}, {"partners", partners}};
    }
    for (std::size_t j = 0; j < per; ++j) out[i * per + j] = std::clamp(recon[i * per + j] + fnew[j], 0.0f, 1.0f);
    if (report) {
      ++report->perturbed;
      report->records.push_back(std::move(rec));
    }
  }
  return out;
}

/// Same as above, computing the reconstructions with the frozen extractor.
inline Tensor<float> augment_batch(const Tensor<float>& fakes, AutoencoderParams<float>& encoder,
                                   const PerturbConfig& cfg, Rng& rng, AugmentReport* report = nullptr) {
  return augment_batch(fakes, reconstruct(fakes, encoder), cfg, rng, report);
}

}  // namespace fpforge
