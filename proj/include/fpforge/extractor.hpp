#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fpforge/adam.hpp"
#include "fpforge/dataset.hpp"
#include "fpforge/error.hpp"
#include "fpforge/nn.hpp"
#include "fpforge/ops.hpp"
#include "fpforge/rng.hpp"
#include "fpforge/tape.hpp"

namespace fpforge {

struct ExtractorTrainConfig {
  double lambda_adv = 1e-4;
  double lr_e = 1e-3;
  double lr_d = 1e-3;
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  bool adv_enabled = true;
};

struct ExtractorEpochStats {
  std::size_t epoch = 0;
  double rec_loss = 0.0;
  double adv_loss = 0.0;       // NaN when the adversarial branch is off
  double disc_accuracy = 0.0;  // D's batch accuracy on fake fingerprints
};

struct ExtractorResult {
  AutoencoderParams<float> encoder;
  DiscriminatorParams<float> discriminator;
  std::vector<std::string> category_ids;  // D's class order
  std::vector<ExtractorEpochStats> history;
};

/// Images to train on: reals feed the reconstruction loss, fakes (with a
/// class index into category_ids) feed the adversarial branch.
struct ExtractorTrainData {
  Tensor<float> reals;  // N x 3 x S x S
  Tensor<float> fakes;  // M x 3 x S x S
  std::vector<int> fake_labels;
  std::vector<std::string> category_ids;
};

/// Train reals and fakes of `d`; D's classes are the categories present
/// among the train fakes, in order of first appearance.
inline ExtractorTrainData extractor_data(const Dataset& d) {
  ExtractorTrainData out;
  const auto reals = d.select([](const SampleRecord& r) { return r.split == "train" && r.label == 0; });
  const auto fakes = d.select([](const SampleRecord& r) { return r.split == "train" && r.label == 1; });
  std::map<std::string, int> ids;
  for (std::size_t i : fakes) {
    const auto& c = d.records[i].category_id;
    auto it = ids.find(c);
    if (it == ids.end()) {
      it = ids.emplace(c, static_cast<int>(out.category_ids.size())).first;
      out.category_ids.push_back(c);
    }
    out.fake_labels.push_back(it->second);
  }
  out.reals = d.batch(reals);
  out.fakes = d.batch(fakes);
  return out;
}

inline std::string history_csv(const std::vector<ExtractorEpochStats>& h) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,rec_loss,adv_loss\n";
  for (const auto& e : h) {
    os << e.epoch << ',' << e.rec_loss << ',';
    if (std::isnan(e.adv_loss)) {
      os << "nan";
    } else {
      os << e.adv_loss;
    }
    os << '\n';
  }
  return os.str();
}

namespace detail {

inline void check_finite_loss(double v, const char* what, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(v)) {
    throw RuntimeError(std::string("non-finite ") + what + " at epoch " + std::to_string(epoch) + ", step " +
                       std::to_string(step));
  }
}

template <class Net>
std::vector<NamedParam<float>> prefixed(Net& net, const std::string& prefix) {
  auto ps = net.named_parameters();
  for (auto& p : ps) p.name = prefix + p.name;
  return ps;
}

}  // namespace detail

/// One joint step per batch: L = mse(E(x_r), x_r) + lambda * CE(D(grl(x_f - E(x_f))), c).
/// A single backward pass gives D the plain gradient and E the reversed
/// adversarial gradient; both optimizers then step.
inline ExtractorResult train_extractor(const ExtractorTrainData& data, const ExtractorTrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ValidationError("extractor batch_size must be positive");
  if (!(cfg.lambda_adv >= 0.0)) throw ValidationError("lambda_adv must be >= 0");
  if (data.reals.rank() != 4 || data.reals.dim(0) == 0) throw ValidationError("extractor needs at least one real image");
  const std::size_t k = data.category_ids.size();
  if (cfg.adv_enabled) {
    if (data.fakes.rank() != 4 || data.fakes.dim(0) == 0) throw ValidationError("adversarial branch needs fake images");
    if (data.fake_labels.size() != data.fakes.dim(0)) throw ValidationError("one category label per fake is required");
    if (k < 2) {
      throw ValidationError("adversarial training needs at least 2 fake categories, got " + std::to_string(k) +
                            "; disable adv or add categories");
    }
  }

  ExtractorResult res{AutoencoderParams<float>(derive_seed(cfg.seed, 11)),
                      DiscriminatorParams<float>(std::max<std::size_t>(k, 2), derive_seed(cfg.seed, 12)),
                      data.category_ids,
                      {}};
  auto e_params = detail::prefixed(res.encoder, "E.");
  auto d_params = detail::prefixed(res.discriminator, "D.");
  AdamState<float> opt_e(cfg.lr_e), opt_d(cfg.lr_d);
  Rng real_rng(derive_seed(cfg.seed, 13));
  Rng fake_rng(derive_seed(cfg.seed, 14));

  const std::size_t n_real = data.reals.dim(0);
  const std::size_t n_fake = cfg.adv_enabled ? data.fakes.dim(0) : 0;
  const std::size_t steps = (n_real + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::size_t> real_perm(n_real), fake_perm(n_fake);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n_real; ++i) real_perm[i] = i;
    real_rng.shuffle(real_perm);
    for (std::size_t i = 0; i < n_fake; ++i) fake_perm[i] = i;
    if (n_fake) fake_rng.shuffle(fake_perm);

    double rec_sum = 0.0, adv_sum = 0.0, acc_sum = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t lo = step * cfg.batch_size;
      const std::size_t bs = std::min(cfg.batch_size, n_real - lo);
      std::vector<std::size_t> ridx(real_perm.begin() + static_cast<std::ptrdiff_t>(lo),
                                    real_perm.begin() + static_cast<std::ptrdiff_t>(lo + bs));
      Tape<float> tape;
      auto xr = tape.constant(gather_batch(data.reals, std::span<const std::size_t>(ridx)));
      auto l_rec = mse(res.encoder.forward(tape, xr), xr);
      auto loss = l_rec;
      const double rec_v = l_rec.value()[0];
      detail::check_finite_loss(rec_v, "reconstruction loss", epoch, step);
      rec_sum += rec_v;

      if (cfg.adv_enabled) {
        std::vector<std::size_t> fidx(bs);
        std::vector<int> labels(bs);
        for (std::size_t j = 0; j < bs; ++j) {
          fidx[j] = fake_perm[(lo + j) % n_fake];
          labels[j] = data.fake_labels[fidx[j]];
        }
        auto xf = tape.constant(gather_batch(data.fakes, std::span<const std::size_t>(fidx)));
        auto fp = sub(xf, res.encoder.forward(tape, xf));
        auto logits = res.discriminator.forward(tape, grl(fp));
        auto l_adv = softmax_ce(logits, std::span<const int>(labels));
        const double adv_v = l_adv.value()[0];
        detail::check_finite_loss(adv_v, "adversarial loss", epoch, step);
        adv_sum += adv_v;
        const auto& z = logits.value();
        std::size_t correct = 0;
        for (std::size_t j = 0; j < bs; ++j) {
          const float* row = z.storage().data() + j * z.dim(1);
          const auto pred = static_cast<int>(std::max_element(row, row + z.dim(1)) - row);
          correct += pred == labels[j];
        }
        acc_sum += static_cast<double>(correct) / static_cast<double>(bs);
        loss = add(l_rec, scale(l_adv, static_cast<float>(cfg.lambda_adv)));
      }

      tape.backward(loss);
      adam_step(e_params, opt_e);
      if (cfg.adv_enabled) adam_step(d_params, opt_d);
    }
    const auto n = static_cast<double>(steps);
    res.history.push_back({epoch, rec_sum / n,
                           cfg.adv_enabled ? adv_sum / n : std::numeric_limits<double>::quiet_NaN(),
                           cfg.adv_enabled ? acc_sum / n : std::numeric_limits<double>::quiet_NaN()});
  }
  return res;
}

/// E(x) for an N x 3 x S x S batch, evaluated in chunks without recording gradients.
inline Tensor<float> reconstruct(const Tensor<float>& x, AutoencoderParams<float>& encoder, std::size_t chunk = 64) {
  if (x.rank() != 4) throw ValidationError("reconstruct: expected N x 3 x S x S, got " + shape_str(x.shape()));
  Tensor<float> out(x.shape());
  const std::size_t n = x.dim(0), per = x.numel() / std::max<std::size_t>(n, 1);
  for (std::size_t lo = 0; lo < n; lo += chunk) {
    const std::size_t cnt = std::min(chunk, n - lo);
    Tape<float> tape;
    tape.set_grad_enabled(false);
    auto y = encoder.forward(tape, tape.constant(slice_batch(x, lo, cnt)));
    std::copy(y.value().storage().begin(), y.value().storage().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(lo * per));
  }
  return out;
}

/// F = x - E(x).
inline Tensor<float> extract_fingerprint(const Tensor<float>& x, AutoencoderParams<float>& encoder) {
  auto r = reconstruct(x, encoder);
  for (std::size_t i = 0; i < r.numel(); ++i) r[i] = x[i] - r[i];
  return r;
}

/// 10 log10(1 / MSE) for images in [0, 1].
inline double psnr(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw ValidationError("psnr: sizes differ or empty");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  const double m = s / static_cast<double>(a.size());
  return m > 0.0 ? 10.0 * std::log10(1.0 / m) : std::numeric_limits<double>::infinity();
}

/// Fraction of fakes whose fingerprint D assigns to the right category.
inline double discriminator_accuracy(const Tensor<float>& fakes, std::span<const int> labels,
                                     AutoencoderParams<float>& encoder, DiscriminatorParams<float>& disc,
                                     std::size_t chunk = 64) {
  const auto fp = extract_fingerprint(fakes, encoder);
  const std::size_t n = fp.dim(0);
  if (labels.size() != n || n == 0) throw ValidationError("discriminator_accuracy: one label per fake is required");
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < n; lo += chunk) {
    const std::size_t cnt = std::min(chunk, n - lo);
    Tape<float> tape;
    tape.set_grad_enabled(false);
    const auto& z = disc.forward(tape, tape.constant(slice_batch(fp, lo, cnt))).value();
    for (std::size_t j = 0; j < cnt; ++j) {
      const float* row = z.storage().data() + j * z.dim(1);
      correct += static_cast<int>(std::max_element(row, row + z.dim(1)) - row) == labels[lo + j];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

inline std::vector<NamedParam<float>> extractor_parameters(ExtractorResult& r) {
  auto ps = detail::prefixed(r.encoder, "E.");
  auto ds = detail::prefixed(r.discriminator, "D.");
  ps.insert(ps.end(), ds.begin(), ds.end());
  return ps;
}

}  // namespace fpforge
