#include <cmath>
#include <complex>
#include <numbers>

#include <gtest/gtest.h>

#include "fpforge/io.hpp"
#include "fpforge/spectrum.hpp"
#include "fpforge/synthgan.hpp"
#include "test_helpers.hpp"

using namespace fpforge;

namespace {

// Direct O(S^4) DFT.
ComplexGrid naive_dft(const std::vector<double>& x, std::size_t s) {
  ComplexGrid out{s, std::vector<Complex>(s * s)};
  for (std::size_t u = 0; u < s; ++u) {
    for (std::size_t v = 0; v < s; ++v) {
      Complex acc = 0.0;
      for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t xx = 0; xx < s; ++xx) {
          const double ang = -2.0 * std::numbers::pi * static_cast<double>(u * y + v * xx) / static_cast<double>(s);
          acc += x[y * s + xx] * Complex(std::cos(ang), std::sin(ang));
        }
      }
      out.at(u, v) = acc;
    }
  }
  return out;
}

std::vector<double> random_plane(std::size_t s, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(s * s);
  for (auto& e : v) e = rng.uniform(-1.0, 1.0);
  return v;
}

}  // namespace

TEST(Fft, MatchesDirectDftAtSizesFourAndEight) {
  for (std::size_t s : {4u, 8u}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto x = random_plane(s, seed);
      const auto fast = fft2d(std::span<const double>(x), s);
      const auto slow = naive_dft(x, s);
      for (std::size_t i = 0; i < s * s; ++i) EXPECT_LT(std::abs(fast.data[i] - slow.data[i]), 1e-6) << "S=" << s;
    }
  }
}

TEST(Fft, OneDimensionalMatchesDft) {
  const std::size_t n = 16;
  Rng rng(3);
  std::vector<Complex> a(n);
  for (auto& v : a) v = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));
  auto b = a;
  fft1d(b.data(), n, false);
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += a[j] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(j * k) / n);
    EXPECT_LT(std::abs(acc - b[k]), 1e-12);
  }
}

TEST(Fft, ConstantImageHasOnlyDc) {
  const std::size_t s = 16;
  const std::vector<double> x(s * s, 0.37);
  const auto g = fft2d(std::span<const double>(x), s);
  EXPECT_NEAR(g.at(0, 0).real(), 0.37 * s * s, 1e-4);
  for (std::size_t i = 1; i < s * s; ++i) EXPECT_LT(std::abs(g.data[i]), 1e-4);
}

TEST(Fft, CosineGivesTwoSymmetricBins) {
  const std::size_t s = 32, k = 5;
  std::vector<double> x(s * s);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t xx = 0; xx < s; ++xx) x[y * s + xx] = std::cos(2.0 * std::numbers::pi * k * xx / s);
  }
  const auto g = fft2d(std::span<const double>(x), s);
  for (std::size_t u = 0; u < s; ++u) {
    for (std::size_t v = 0; v < s; ++v) {
      const bool peak = u == 0 && (v == k || v == s - k);
      EXPECT_NEAR(std::abs(g.at(u, v)), peak ? s * s / 2.0 : 0.0, 1e-4) << u << "," << v;
    }
  }
}

TEST(Fft, RoundTrip) {
  const std::size_t s = 64;
  const auto x = random_plane(s, 8);
  const auto back = ifft2d(fft2d(std::span<const double>(x), s));
  for (std::size_t i = 0; i < s * s; ++i) {
    EXPECT_NEAR(back.data[i].real(), x[i], 1e-4);
    EXPECT_NEAR(back.data[i].imag(), 0.0, 1e-4);
  }
}

TEST(Fft, Parseval) {
  for (std::size_t s : {8u, 32u, 64u}) {
    const auto x = random_plane(s, s);
    const auto g = fft2d(std::span<const double>(x), s);
    double e_x = 0.0, e_f = 0.0;
    for (double v : x) e_x += v * v;
    for (const auto& c : g.data) e_f += std::norm(c);
    EXPECT_NEAR(e_f / static_cast<double>(s * s), e_x, 1e-5 * e_x);
  }
}

TEST(Fft, Linearity) {
  const std::size_t s = 16;
  const auto x = random_plane(s, 1), y = random_plane(s, 2);
  const double a = 1.7, b = -0.4;
  std::vector<double> z(s * s);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * x[i] + b * y[i];
  const auto fx = fft2d(std::span<const double>(x), s), fy = fft2d(std::span<const double>(y), s);
  const auto fz = fft2d(std::span<const double>(z), s);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_LT(std::abs(fz.data[i] - (a * fx.data[i] + b * fy.data[i])), 1e-4);
}

TEST(Fft, RejectsNonPowerOfTwo) {
  const std::vector<double> x(36, 0.0);
  EXPECT_THROW(fft2d(std::span<const double>(x), 6), ValidationError);
}

TEST(HighPass, ConstantImageVanishes) {
  const Tensor<double> img({3, 8, 8}, 0.6);
  for (double v : high_pass(img).data()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(HighPass, ImpulseGivesStencil) {
  Tensor<double> img({1, 5, 5}, 0.0);
  img[2 * 5 + 2] = 1.0;
  const auto hp = high_pass(img);
  for (std::size_t y = 0; y < 5; ++y) {
    for (std::size_t x = 0; x < 5; ++x) {
      double expect = 0.0;
      if (y == 2 && x == 2) expect = 1.0 - 1.0 / 9.0;
      else if (y >= 1 && y <= 3 && x >= 1 && x <= 3) expect = -1.0 / 9.0;
      EXPECT_NEAR(hp[y * 5 + x], expect, 1e-15) << y << "," << x;
    }
  }
}

TEST(HighPass, EdgeReplicationAtCorner) {
  Tensor<double> img({1, 4, 4}, 0.0);
  img[0] = 1.0;
  // padded neighbourhood of (0, 0) contains the corner value four times
  EXPECT_NEAR(high_pass(img)[0], 1.0 - 4.0 / 9.0, 1e-15);
}

TEST(HighPass, LinearRampInteriorVanishes) {
  const std::size_t s = 16;
  Tensor<double> img({2, s, s});
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) img[(c * s + y) * s + x] = 0.01 * x + 0.02 * y + 0.1 * c;
    }
  }
  const auto hp = high_pass(img);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t y = 1; y + 1 < s; ++y) {
      for (std::size_t x = 1; x + 1 < s; ++x) EXPECT_NEAR(hp[(c * s + y) * s + x], 0.0, 1e-6);
    }
  }
}

TEST(AverageSpectrum, ConstantImageGivesZeroSpectrum) {
  const auto spec = average_spectrum(std::vector<Tensor<float>>{Tensor<float>({3, 16, 16}, 0.3f)});
  for (double v : spec.values) EXPECT_NEAR(v, 0.0, 1e-6);
}

TEST(AverageSpectrum, IdenticalImagesEqualSingleImage) {
  const auto img = gen_real(default_categories()[0], 4, 32, 0.01);
  const auto one = average_spectrum(std::vector<Tensor<float>>{img});
  const auto many = average_spectrum(std::vector<Tensor<float>>(5, img));
  for (std::size_t i = 0; i < one.values.size(); ++i) EXPECT_NEAR(one.values[i], many.values[i], 1e-12);
}

TEST(AverageSpectrum, NonNegativeAndPointSymmetric) {
  std::vector<Tensor<float>> imgs;
  for (std::uint64_t i = 0; i < 4; ++i) imgs.push_back(gen_real(default_categories()[1], i, 32, 0.01));
  const auto spec = average_spectrum(imgs);
  const std::size_t s = spec.side;
  for (std::size_t y = 1; y < s; ++y) {
    for (std::size_t x = 1; x < s; ++x) {
      EXPECT_GE(spec.at(y, x), 0.0);
      // DC sits at (s/2, s/2); the mirror of (y, x) is (s - y, s - x)
      EXPECT_NEAR(spec.at(y, x), spec.at(s - y, s - x), 1e-9);
    }
  }
}

TEST(AverageSpectrum, DcIsCentered) {
  const std::size_t s = 8;
  std::vector<double> grid(s * s, 0.0);
  grid[0] = 1.0;
  const auto shifted = fftshift(grid, s);
  EXPECT_EQ(shifted[(s / 2) * s + s / 2], 1.0);
}

TEST(AverageSpectrum, RejectsEmptyAndMixedShapes) {
  EXPECT_THROW(average_spectrum(std::vector<Tensor<float>>{}), ValidationError);
  std::vector<Tensor<float>> mixed{Tensor<float>({3, 16, 16}), Tensor<float>({3, 8, 8})};
  EXPECT_THROW(average_spectrum(mixed), ValidationError);
}

TEST(AverageSpectrum, SineGridFakesPeakAtTheirFrequency) {
  GanProfile g;
  g.gan_id = "sine8";
  g.pattern = PatternKind::SineGrid;
  g.period_px = 8;
  const auto cats = default_categories();
  std::vector<Tensor<float>> fakes;
  for (std::size_t i = 0; i < 200; ++i) fakes.push_back(embed_fingerprint(gen_real(cats[i % 4], i, 64, 0.01), g));
  const auto spec = average_spectrum(fakes);
  // off-DC argmax in the centred grid
  const std::size_t s = 64, c = s / 2;
  double best = -1.0;
  std::size_t by = 0, bx = 0;
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      if (y == c && x == c) continue;
      if (spec.at(y, x) > best) {
        best = spec.at(y, x);
        by = y;
        bx = x;
      }
    }
  }
  EXPECT_EQ(by, c);
  EXPECT_TRUE(bx == c + s / 8 || bx == c - s / 8) << bx;
}

TEST(PeakToMedian, WrapsNegativeBins) {
  SpectrumImage spec{4, std::vector<double>(16, 1.0)};
  spec.values[1 * 4 + 3] = 9.0;
  EXPECT_DOUBLE_EQ(peak_to_median(spec, 1, -1), 9.0);
  EXPECT_DOUBLE_EQ(peak_to_median(spec, 0, 0), 1.0);
}

TEST(RelativeL2, Definition) {
  SpectrumImage a{2, {3.0, 0.0, 0.0, 4.0}}, b{2, {3.0, 1.0, 0.0, 4.0}};
  EXPECT_DOUBLE_EQ(relative_l2(a, a), 0.0);
  EXPECT_DOUBLE_EQ(relative_l2(a, b), 1.0 / 5.0);
}

TEST(Pgm, HeaderAndMinMaxNormalization) {
  SpectrumImage spec{2, {1.0, 2.0, 3.0, 5.0}};
  const auto bytes = encode_pgm(spec);
  const std::string header = "P5\n2 2\n255\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + header.size());
  EXPECT_EQ(px[0], 0);
  EXPECT_EQ(px[1], 64);  // 0.25 * 255 = 63.75
  EXPECT_EQ(px[2], 128);
  EXPECT_EQ(px[3], 255);
}

TEST(Pgm, ZeroSpectrumAndDeterministicExport) {
  SpectrumImage zero{64, std::vector<double>(64 * 64, 0.0)};
  const auto bytes = encode_pgm(zero);
  EXPECT_EQ(bytes.substr(0, 13), "P5\n64 64\n255\n");
  for (std::size_t i = 13; i < bytes.size(); ++i) EXPECT_EQ(bytes[i], '\0');
  const auto dir = test::scratch_dir("spectrum_pgm");
  export_pgm(zero, dir / "a.pgm");
  export_pgm(zero, dir / "b.pgm");
  EXPECT_EQ(read_file(dir / "a.pgm"), read_file(dir / "b.pgm"));
  std::filesystem::remove_all(dir);
}

TEST(Pgm, IoFailureNamesPath) {
  const auto dir = test::scratch_dir("spectrum_pgm_fail");
  write_file(dir / "blocker", "x");
  try {
    export_pgm(SpectrumImage{2, {0, 0, 0, 0}}, dir / "blocker" / "out.pgm");
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("blocker"), std::string::npos) << e.what();
  }
  std::filesystem::remove_all(dir);
}

TEST(SpectrumCsv, OneRowPerLine) {
  SpectrumImage spec{2, {0.5, 1.0, 1.5, 2.0}};
  EXPECT_EQ(spectrum_csv(spec), "0.5,1\n1.5,2\n");
}
