#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fpforge/adam.hpp"
#include "fpforge/augment.hpp"
#include "fpforge/error.hpp"
#include "fpforge/nn.hpp"
#include "fpforge/ops.hpp"
#include "fpforge/rng.hpp"
#include "fpforge/tape.hpp"

namespace fpforge {

struct DetectorTrainConfig {
  std::string variant = "small";
  double lr = 1e-4;
  std::size_t epochs = 40;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
};

struct DetectorResult {
  DetectorParams<float> detector;
  std::vector<double> loss_history;  // mean train BCE per epoch
  AugmentReport augment;
};

/// Balanced BCE training: every step takes batch_size reals and batch_size
/// fakes. `fake_recon` holds E(x_f) for each fake and is only read when the
/// strategy is not None; augmentation is drawn afresh for every batch.
inline DetectorResult train_detector(const Tensor<float>& reals, const Tensor<float>& fakes,
                                     const Tensor<float>* fake_recon, const PerturbConfig& perturb,
                                     const DetectorTrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ValidationError("detector batch_size must be positive");
  if (!(cfg.lr > 0.0)) throw ValidationError("detector lr must be > 0");
  const std::size_t nr = reals.rank() == 4 ? reals.dim(0) : 0;
  const std::size_t nf = fakes.rank() == 4 ? fakes.dim(0) : 0;
  if (nr == 0 || nf == 0) {
    throw ValidationError(std::string("detector training set has only one class (") + (nr == 0 ? "no reals" : "no fakes") +
                          ")");
  }
  const bool augment = perturb.strategy != Strategy::None;
  if (augment) {
    validate_perturb(perturb);
    if (fake_recon == nullptr || fake_recon->shape() != fakes.shape()) {
      throw ValidationError("augmented detector training needs one reconstruction per fake");
    }
  }

  DetectorResult res{DetectorParams<float>(cfg.variant, derive_seed(cfg.seed, 21)), {}, {}};
  auto params = res.detector.named_parameters();
  AdamState<float> opt(cfg.lr);
  Rng order_rng(derive_seed(cfg.seed, 22));
  Rng aug_rng(derive_seed(perturb.seed, 23));

  const std::size_t n = std::max(nr, nf);
  const std::size_t steps = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::size_t> rperm(nr), fperm(nf);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < nr; ++i) rperm[i] = i;
    for (std::size_t i = 0; i < nf; ++i) fperm[i] = i;
    order_rng.shuffle(rperm);
    order_rng.shuffle(fperm);
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t lo = step * cfg.batch_size;
      const std::size_t bs = std::min(cfg.batch_size, n - lo);
      std::vector<std::size_t> ridx(bs), fidx(bs);
      for (std::size_t j = 0; j < bs; ++j) {
        ridx[j] = rperm[(lo + j) % nr];
        fidx[j] = fperm[(lo + j) % nf];
      }
      auto xf = gather_batch(fakes, std::span<const std::size_t>(fidx));
      if (augment) {
        auto rec = gather_batch(*fake_recon, std::span<const std::size_t>(fidx));
        xf = augment_batch(xf, rec, perturb, aug_rng, &res.augment);
      }
      auto xr = gather_batch(reals, std::span<const std::size_t>(ridx));
      std::vector<float> x(xr.storage());
      x.insert(x.end(), xf.storage().begin(), xf.storage().end());
      Shape s = xr.shape();
      s[0] = 2 * bs;
      std::vector<float> labels(2 * bs, 0.0f);
      std::fill(labels.begin() + static_cast<std::ptrdiff_t>(bs), labels.end(), 1.0f);

      Tape<float> tape;
      auto p = res.detector.forward(tape, tape.constant(Tensor<float>(s, std::move(x))));
      auto loss = bce(p, std::span<const float>(labels));
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw RuntimeError("non-finite detector loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      loss_sum += lv;
      tape.backward(loss);
      adam_step(params, opt);
    }
    res.loss_history.push_back(loss_sum / static_cast<double>(steps));
  }
  return res;
}

/// Probability of "fake" for each image of an N x 3 x S x S batch.
inline std::vector<double> predict(const Tensor<float>& x, DetectorParams<float>& det, std::size_t chunk = 64) {
  if (x.rank() != 4 || x.dim(1) != 3) throw ValidationError("predict: expected N x 3 x S x S, got " + shape_str(x.shape()));
  std::vector<double> out;
  out.reserve(x.dim(0));
  for (std::size_t lo = 0; lo < x.dim(0); lo += chunk) {
    const std::size_t cnt = std::min(chunk, x.dim(0) - lo);
    Tape<float> tape;
    tape.set_grad_enabled(false);
    const auto& p = det.forward(tape, tape.constant(slice_batch(x, lo, cnt))).value();
    for (float v : p.data()) out.push_back(static_cast<double>(v));
  }
  return out;
}

}  // namespace fpforge
