#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fpforge/error.hpp"
#include "fpforge/tensor.hpp"

namespace fpforge {

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor;
};

template <class T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  AdamState() = default;
  explicit AdamState(double learning_rate) : lr(learning_rate) {}
};

/// One Adam update over every parameter that holds a gradient. The whole
/// step is rejected, leaving params and state untouched, if any gradient is
/// non-finite.
template <class T>
void adam_step(std::span<const NamedParam<T>> params, AdamState<T>& st) {
  if (st.m.empty()) {
    st.m.resize(params.size());
    st.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      st.m[i].assign(params[i].tensor->numel(), T(0));
      st.v[i].assign(params[i].tensor->numel(), T(0));
    }
  }
  if (st.m.size() != params.size()) {
    throw ValidationError("adam: state tracks " + std::to_string(st.m.size()) + " parameters, got " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = *params[i].tensor;
    if (st.m[i].size() != p.numel()) {
      throw ValidationError("adam: moment shape mismatch for parameter '" + params[i].name + "'");
    }
    for (T g : p.grad()) {
      if (!std::isfinite(g)) throw RuntimeError("adam: non-finite gradient in parameter '" + params[i].name + "'");
    }
  }

  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  const T b1 = static_cast<T>(st.beta1), b2 = static_cast<T>(st.beta2);
  const T step = static_cast<T>(st.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(st.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i].tensor;
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      p[j] -= step * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
    }
  }
}

template <class T>
void adam_step(const std::vector<NamedParam<T>>& params, AdamState<T>& st) {
  adam_step(std::span<const NamedParam<T>>(params), st);
}

}  // namespace fpforge
