#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fpforge/error.hpp"
#include "fpforge/io.hpp"
#include "fpforge/tensor.hpp"

namespace fpforge {

using Complex = std::complex<double>;

inline bool is_power_of_two(std::size_t n) { return n >= 1 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 DIT FFT of length n (power of two).
/// inverse=true uses the conjugate twiddles and applies no scaling.
inline void fft1d(Complex* a, std::size_t n, bool inverse) {
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      const Complex w(std::cos(ang * static_cast<double>(k)), std::sin(ang * static_cast<double>(k)));
      for (std::size_t i = 0; i < n; i += len) {
        const Complex u = a[i + k];
        const Complex v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

/// S x S complex grid, row-major.
struct ComplexGrid {
  std::size_t side = 0;
  std::vector<Complex> data;

  Complex& at(std::size_t y, std::size_t x) { return data[y * side + x]; }
  const Complex& at(std::size_t y, std::size_t x) const { return data[y * side + x]; }
};

namespace detail {

inline void fft2d_inplace(ComplexGrid& g, bool inverse) {
  const std::size_t s = g.side;
  if (!is_power_of_two(s)) throw ValidationError("fft2d: side " + std::to_string(s) + " is not a power of two");
  for (std::size_t y = 0; y < s; ++y) fft1d(g.data.data() + y * s, s, inverse);
  std::vector<Complex> col(s);
  for (std::size_t x = 0; x < s; ++x) {
    for (std::size_t y = 0; y < s; ++y) col[y] = g.at(y, x);
    fft1d(col.data(), s, inverse);
    for (std::size_t y = 0; y < s; ++y) g.at(y, x) = col[y];
  }
}

}  // namespace detail

/// Unnormalized forward 2-D DFT of a real S x S grid (row-major span).
template <class T>
ComplexGrid fft2d(std::span<const T> image, std::size_t side) {
  if (image.size() != side * side) {
    throw ValidationError("fft2d: expected " + std::to_string(side * side) + " values, got " +
                          std::to_string(image.size()));
  }
  ComplexGrid g{side, std::vector<Complex>(image.begin(), image.end())};
  detail::fft2d_inplace(g, false);
  return g;
}

inline ComplexGrid fft2d(ComplexGrid g) {
  detail::fft2d_inplace(g, false);
  return g;
}

/// Inverse 2-D DFT with 1/S^2 normalization.
inline ComplexGrid ifft2d(ComplexGrid g) {
  detail::fft2d_inplace(g, true);
  const double norm = 1.0 / static_cast<double>(g.side * g.side);
  for (auto& v : g.data) v *= norm;
  return g;
}

/// x - box_blur3(x) per channel, edges replicated. Input C x S x S or N x C x H x W.
template <class T>
Tensor<T> high_pass(const Tensor<T>& image) {
  if (image.rank() < 2) throw ValidationError("high_pass: need at least 2 dims, got " + shape_str(image.shape()));
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  const std::size_t planes = image.numel() / (h * w);
  Tensor<T> out(image.shape());
  auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = image.storage().data() + p * h * w;
    T* dst = out.storage().data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            acc += static_cast<double>(src[clampi(static_cast<std::ptrdiff_t>(y) + dy, h) * w +
                                           clampi(static_cast<std::ptrdiff_t>(x) + dx, w)]);
          }
        }
        dst[y * w + x] = static_cast<T>(static_cast<double>(src[y * w + x]) - acc / 9.0);
      }
    }
  }
  return out;
}

/// Swap quadrants so the DC bin lands at (S/2, S/2).
inline std::vector<double> fftshift(const std::vector<double>& grid, std::size_t side) {
  std::vector<double> out(grid.size());
  const std::size_t h = side / 2;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) out[((y + h) % side) * side + (x + h) % side] = grid[y * side + x];
  }
  return out;
}

/// S x S spectrum grid, row-major.
struct SpectrumImage {
  std::size_t side = 0;
  std::vector<double> values;

  double at(std::size_t y, std::size_t x) const { return values[y * side + x]; }
};

/// Mean over images of the channel-averaged FFT magnitude of the high-passed
/// image; DC at index (0, 0), linear magnitude. Images are C x S x S each.
template <class T>
SpectrumImage mean_magnitude_spectrum(const std::vector<Tensor<T>>& images) {
  if (images.empty()) throw ValidationError("average_spectrum: empty image list");
  const Shape shape = images.front().shape();
  if (shape.size() != 3 || shape[1] != shape[2]) {
    throw ValidationError("average_spectrum: images must be C x S x S, got " + shape_str(shape));
  }
  const std::size_t c = shape[0], s = shape[1];
  if (!is_power_of_two(s)) throw ValidationError("average_spectrum: side " + std::to_string(s) + " is not a power of two");
  std::vector<double> acc(s * s, 0.0);
  for (const auto& img : images) {
    if (img.shape() != shape) {
      throw ValidationError("average_spectrum: shape " + shape_str(img.shape()) + " differs from " + shape_str(shape));
    }
    const auto hp = high_pass(img);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto g = fft2d(std::span<const T>(hp.storage().data() + ch * s * s, s * s), s);
      for (std::size_t i = 0; i < s * s; ++i) acc[i] += std::abs(g.data[i]) / static_cast<double>(c);
    }
  }
  for (auto& v : acc) v /= static_cast<double>(images.size());
  return {s, std::move(acc)};
}

/// log(1 + mean magnitude), DC-centered.
template <class T>
SpectrumImage average_spectrum(const std::vector<Tensor<T>>& images) {
  auto lin = mean_magnitude_spectrum(images);
  for (auto& v : lin.values) v = std::log1p(v);
  return {lin.side, fftshift(lin.values, lin.side)};
}

/// Value at bin (ky, kx) of an uncentered spectrum divided by the median of
/// all bins. Negative indices wrap.
inline double peak_to_median(const SpectrumImage& spec, long ky, long kx) {
  const auto s = static_cast<long>(spec.side);
  std::vector<double> sorted = spec.values;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double med = sorted[sorted.size() / 2];
  const double v = spec.at(static_cast<std::size_t>(((ky % s) + s) % s), static_cast<std::size_t>(((kx % s) + s) % s));
  return med > 0.0 ? v / med : 0.0;
}

/// Relative L2 distance ||a - b|| / ||a||.
inline double relative_l2(const SpectrumImage& a, const SpectrumImage& b) {
  if (a.values.size() != b.values.size()) throw ValidationError("relative_l2: spectra differ in size");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    num += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
    den += a.values[i] * a.values[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

/// Min-max normalized 8-bit binary PGM. A constant grid maps to all zeros.
inline std::string encode_pgm(const SpectrumImage& spec) {
  std::string out = "P5\n" + std::to_string(spec.side) + " " + std::to_string(spec.side) + "\n255\n";
  const auto [mn, mx] = std::minmax_element(spec.values.begin(), spec.values.end());
  const double lo = *mn, range = *mx - *mn;
  for (double v : spec.values) {
    const double u = range > 0.0 ? (v - lo) / range : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0))));
  }
  return out;
}

inline void export_pgm(const SpectrumImage& spec, const std::filesystem::path& path) {
  write_file(path, encode_pgm(spec));
}

inline std::string spectrum_csv(const SpectrumImage& spec) {
  std::ostringstream os;
  os.precision(9);
  for (std::size_t y = 0; y < spec.side; ++y) {
    for (std::size_t x = 0; x < spec.side; ++x) os << (x ? "," : "") << spec.at(y, x);
    os << '\n';
  }
  return os.str();
}

}  // namespace fpforge
