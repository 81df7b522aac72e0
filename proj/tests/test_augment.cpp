#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "fpforge/augment.hpp"
#include "fpforge/extractor.hpp"
#include "test_helpers.hpp"

using namespace fpforge;

namespace {

Tensor<float> batch_in_unit_range(std::size_t n, std::uint64_t seed, std::size_t side = 16) {
  return test::random_tensor<float>({n, 3, side, side}, seed, 0.05, 0.95);
}

}  // namespace

TEST(Scaling, Examples) {
  const auto f = test::random_tensor<float>({3, 4, 4}, 1);
  EXPECT_EQ(perturb_scaling(f, 1.0), f);
  const auto zero = perturb_scaling(f, 0.0);
  for (float v : zero.data()) EXPECT_EQ(v, 0.0f);
  Tensor<float> one({1}, 0.01f);
  EXPECT_FLOAT_EQ(perturb_scaling(one, -2.0)[0], -0.02f);
}

TEST(Scaling, RejectsNonFiniteAlpha) {
  const Tensor<float> f({2}, 0.1f);
  EXPECT_THROW(perturb_scaling(f, std::nan("")), ValidationError);
  EXPECT_THROW(perturb_scaling(f, INFINITY), ValidationError);
}

TEST(Scaling, Linearity) {
  const auto f = test::random_tensor<float>({3, 8, 8}, 2);
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const double a = rng.uniform(-5, 5), b = rng.uniform(-5, 5);
    const auto sum = perturb_scaling(f, a + b);
    const auto fa = perturb_scaling(f, a), fb = perturb_scaling(f, b);
    for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_NEAR(sum[i], fa[i] + fb[i], 1e-6);
  }
}

TEST(Scaling, RoundTrip) {
  const auto f = test::random_tensor<float>({3, 8, 8}, 4);
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const double m = rng.uniform(0.1, 5.0);
    const double a = rng.uniform() < 0.5 ? -m : m;
    const auto back = perturb_scaling(perturb_scaling(f, a), 1.0 / a);
    for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_NEAR(back[i], f[i], 1e-5);
  }
}

TEST(SampleAlpha, UniformStatistics) {
  Rng rng(11);
  double sum = 0.0, mn = 1e9, mx = -1e9;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double a = sample_alpha(5.0, rng);
    ASSERT_GE(a, -5.0);
    ASSERT_LE(a, 5.0);
    sum += a;
    mn = std::min(mn, a);
    mx = std::max(mx, a);
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_LT(mn, -4.9);
  EXPECT_GT(mx, 4.9);
}

TEST(SampleAlpha, ReproducibleAndDefault) {
  Rng a(7), b(7);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_alpha(5.0, a), sample_alpha(5.0, b));
  EXPECT_EQ(PerturbConfig{}.alpha0, 5.0);
  EXPECT_EQ(PerturbConfig{}.n, 2);
  EXPECT_EQ(PerturbConfig{}.apply_prob, 0.8);
  EXPECT_THROW(sample_alpha(0.0, a), ValidationError);
}

TEST(SampleAlpha, MinimumMagnitudeEscapeHatch) {
  Rng rng(8);
  for (int i = 0; i < 10000; ++i) {
    const double a = sample_alpha(5.0, rng, 0.5);
    EXPECT_GE(std::abs(a), 0.5);
    EXPECT_LE(std::abs(a), 5.0);
  }
}

TEST(Simplex, SumsToOneAndIsNonNegative) {
  Rng rng(9);
  double first = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto b = sample_simplex(2, rng);
    EXPECT_NEAR(b[0] + b[1], 1.0, 1e-12);
    EXPECT_GE(b[0], 0.0);
    first += b[0];
  }
  // Dirichlet(1, 1) marginal is uniform on [0, 1]
  EXPECT_NEAR(first / n, 0.5, 0.01);
}

TEST(Mixup, Examples) {
  const auto f1 = test::random_tensor<float>({3, 4, 4}, 1);
  const auto f2 = test::random_tensor<float>({3, 4, 4}, 2);
  EXPECT_EQ(perturb_mixup(std::vector{f1, f2}, {1.0, 0.0}), f1);
  const auto same = perturb_mixup(std::vector{f1, f1}, {0.37, 0.63});
  for (std::size_t i = 0; i < f1.numel(); ++i) EXPECT_FLOAT_EQ(same[i], f1[i]);
  const Tensor<float> a({1}, 1.0f), b({1}, -1.0f);
  EXPECT_FLOAT_EQ(perturb_mixup(std::vector{a, b}, {0.3, 0.7})[0], -0.4f);
}

TEST(Mixup, Convexity) {
  Rng rng(21);
  for (int t = 0; t < 100; ++t) {
    const auto f1 = test::random_tensor<float>({3, 4, 4}, 100 + t);
    const auto f2 = test::random_tensor<float>({3, 4, 4}, 200 + t);
    const auto beta = sample_simplex(2, rng);
    const auto m = perturb_mixup(std::vector{f1, f2}, beta);
    for (std::size_t i = 0; i < m.numel(); ++i) {
      EXPECT_GE(m[i], std::min(f1[i], f2[i]));
      EXPECT_LE(m[i], std::max(f1[i], f2[i]));
    }
  }
}

TEST(Mixup, Rejections) {
  const auto f1 = test::random_tensor<float>({3, 4, 4}, 1);
  const auto f2 = test::random_tensor<float>({3, 4, 4}, 2);
  EXPECT_THROW(perturb_mixup(std::vector{f1, f2}, {0.5, 0.6}), ValidationError);
  EXPECT_THROW(perturb_mixup(std::vector{f1}, {1.0}), ValidationError);
  EXPECT_THROW(perturb_mixup(std::vector{f1, f2}, {1.0}), ValidationError);
  EXPECT_THROW(perturb_mixup(std::vector{f1, test::random_tensor<float>({3, 4, 5}, 3)}, {0.5, 0.5}), ValidationError);
  EXPECT_NO_THROW(perturb_mixup(std::vector{f1, f2}, {0.5 + 1e-10, 0.5}));
}

TEST(Recompose, Examples) {
  const Tensor<float> recon({3, 2, 2}, 0.9f), f({3, 2, 2}, 0.3f), zero({3, 2, 2}, 0.0f);
  const auto clamped = recompose(recon, f);
  for (float v : clamped.data()) EXPECT_EQ(v, 1.0f);
  EXPECT_EQ(recompose(recon, zero), recon);
  EXPECT_THROW(recompose(recon, Tensor<float>({3, 2, 3})), ValidationError);
}

TEST(Recompose, UndoesExtraction) {
  AutoencoderParams<float> enc(5);
  const auto x = batch_in_unit_range(2, 6);
  const auto recon = reconstruct(x, enc);
  const auto f = extract_fingerprint(x, enc);
  const auto back = recompose(recon, f);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(back[i], x[i], 1e-6);
}

TEST(AugmentBatch, ZeroProbabilityLeavesBatchUnchanged) {
  const auto x = batch_in_unit_range(4, 1);
  const auto r = batch_in_unit_range(4, 2);
  for (auto s : {Strategy::Scaling, Strategy::Mixup}) {
    PerturbConfig cfg;
    cfg.strategy = s;
    cfg.apply_prob = 0.0;
    Rng rng(3);
    AugmentReport rep;
    EXPECT_EQ(augment_batch(x, r, cfg, rng, &rep), x);
    EXPECT_EQ(rep.passed_through, 4u);
    EXPECT_EQ(rep.perturbed, 0u);
  }
}

TEST(AugmentBatch, UnitAlphaIsRoundTrip) {
  AutoencoderParams<float> enc(2);
  const auto x = batch_in_unit_range(3, 4);
  PerturbConfig cfg;
  cfg.apply_prob = 1.0;
  Rng rng(1);
  const double one = 1.0;
  const auto out = augment_batch(x, reconstruct(x, enc), cfg, rng, nullptr, &one);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(out[i], x[i], 1e-6);
}

TEST(AugmentBatch, SameSeedIsBitIdentical) {
  AutoencoderParams<float> enc(2);
  const auto x = batch_in_unit_range(6, 8);
  for (auto s : {Strategy::Scaling, Strategy::Mixup}) {
    PerturbConfig cfg;
    cfg.strategy = s;
    Rng a(5), b(5);
    EXPECT_EQ(augment_batch(x, enc, cfg, a), augment_batch(x, enc, cfg, b));
  }
}

TEST(AugmentBatch, ScalingMatchesDefinition) {
  const auto x = batch_in_unit_range(4, 10);
  const auto r = batch_in_unit_range(4, 11);
  PerturbConfig cfg;
  cfg.apply_prob = 1.0;
  Rng rng(12);
  AugmentReport rep;
  const auto out = augment_batch(x, r, cfg, rng, &rep);
  ASSERT_EQ(rep.records.size(), 4u);
  const std::size_t per = x.numel() / 4;
  for (std::size_t i = 0; i < 4; ++i) {
    const double a = rep.records[i].at("alpha").get<double>();
    EXPECT_LE(std::abs(a), 5.0);
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t k = i * per + j;
      const float want = std::clamp(r[k] + static_cast<float>(a) * (x[k] - r[k]), 0.0f, 1.0f);
      EXPECT_NEAR(out[k], want, 1e-6);
    }
  }
}

TEST(AugmentBatch, MixupUsesDistinctBatchPartners) {
  const auto x = batch_in_unit_range(5, 13);
  const auto r = batch_in_unit_range(5, 14);
  PerturbConfig cfg;
  cfg.strategy = Strategy::Mixup;
  cfg.apply_prob = 1.0;
  Rng rng(15);
  AugmentReport rep;
  const auto out = augment_batch(x, r, cfg, rng, &rep);
  const std::size_t per = x.numel() / 5;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto partners = rep.records[i].at("partners").get<std::vector<std::size_t>>();
    const auto betas = rep.records[i].at("betas").get<std::vector<double>>();
    ASSERT_EQ(partners.size(), 2u);
    EXPECT_NE(partners[0], partners[1]);
    EXPECT_NEAR(betas[0] + betas[1], 1.0, 1e-12);
    for (std::size_t j = 0; j < per; ++j) {
      double f = 0.0;
      for (int p = 0; p < 2; ++p) f += betas[p] * (x[partners[p] * per + j] - r[partners[p] * per + j]);
      EXPECT_NEAR(out[i * per + j], std::clamp(r[i * per + j] + f, 0.0, 1.0), 1e-6);
    }
  }
}

TEST(AugmentBatch, MixupFallsBackWhenBatchTooSmall) {
  const auto x = batch_in_unit_range(1, 16);
  PerturbConfig cfg;
  cfg.strategy = Strategy::Mixup;
  cfg.apply_prob = 1.0;
  Rng rng(17);
  AugmentReport rep;
  EXPECT_EQ(augment_batch(x, batch_in_unit_range(1, 18), cfg, rng, &rep), x);
  EXPECT_EQ(rep.mixup_fallbacks, 1u);
  EXPECT_EQ(rep.passed_through, 1u);
}

TEST(AugmentBatch, ApplyProbabilityIsRespected) {
  const auto x = batch_in_unit_range(8, 19, 4);
  PerturbConfig cfg;
  Rng rng(20);
  AugmentReport rep;
  for (int t = 0; t < 500; ++t) augment_batch(x, x, cfg, rng, &rep);
  EXPECT_EQ(rep.total, 4000u);
  EXPECT_NEAR(static_cast<double>(rep.perturbed) / rep.total, 0.8, 0.03);
}

TEST(AugmentBatch, NoneStrategyPassesThrough) {
  const auto x = batch_in_unit_range(3, 22);
  PerturbConfig cfg;
  cfg.strategy = Strategy::None;
  Rng rng(1);
  EXPECT_EQ(augment_batch(x, batch_in_unit_range(3, 23), cfg, rng), x);
}

TEST(AugmentBatch, FrozenExtractorIsNotModified) {
  AutoencoderParams<float> enc(3);
  const auto before = param_checksum(enc.named_parameters());
  PerturbConfig cfg;
  Rng rng(1);
  augment_batch(batch_in_unit_range(4, 24), enc, cfg, rng);
  EXPECT_EQ(param_checksum(enc.named_parameters()), before);
}

TEST(PerturbConfig, Validation) {
  PerturbConfig c;
  EXPECT_NO_THROW(validate_perturb(c));
  auto bad = c;
  bad.alpha0 = 0.0;
  EXPECT_THROW(validate_perturb(bad), ValidationError);
  bad = c;
  bad.n = 1;
  EXPECT_THROW(validate_perturb(bad), ValidationError);
  bad = c;
  bad.apply_prob = 1.5;
  EXPECT_THROW(validate_perturb(bad), ValidationError);
  bad = c;
  bad.alpha_min = 5.0;
  EXPECT_THROW(validate_perturb(bad), ValidationError);
  EXPECT_EQ(parse_strategy("mixup"), Strategy::Mixup);
  EXPECT_THROW(parse_strategy("cutmix"), ValidationError);
}
