#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "fpforge/ops.hpp"
#include "fpforge/rng.hpp"
#include "fpforge/tape.hpp"
#include "fpforge/tensor.hpp"

namespace fpforge::test {

template <class T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// Values with |v| in [gap, 1]; keeps piecewise-linear ops away from their kinks.
template <class T>
Tensor<T> kink_free_tensor(Shape shape, std::uint64_t seed, double gap = 0.1) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) {
    const double m = rng.uniform(gap, 1.0);
    v = static_cast<T>(rng.uniform() < 0.5 ? -m : m);
  }
  return t;
}

/// sum(y * w) for a fixed pseudo-random w, so every output element gets a
/// distinct upstream gradient.
template <class T>
Var<T> weighted_sum(Tape<T>& tape, Var<T> y, std::uint64_t seed = 99) {
  auto w = tape.constant(random_tensor<T>(y.shape(), seed));
  return sum(mul(y, w));
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fpforge_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fpforge::test
