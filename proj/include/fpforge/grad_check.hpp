#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "fpforge/tape.hpp"
#include "fpforge/tensor.hpp"

namespace fpforge {

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Builds a scalar graph on `tape` from the given input leaf.
template <class T>
using GraphBuilder = std::function<Var<T>(Tape<T>&, Var<T>)>;

/// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
/// near-zero entries from dominating.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

template <class T>
double eval_scalar(const GraphBuilder<T>& build, const Tensor<T>& x) {
  Tape<T> tape;
  tape.set_grad_enabled(false);
  return static_cast<double>(build(tape, tape.variable(x)).value()[0]);
}

/// Analytic gradient of the graph with respect to its input.
template <class T>
std::vector<T> analytic_grad(const GraphBuilder<T>& build, const Tensor<T>& x) {
  Tape<T> tape;
  auto in = tape.variable(x);
  tape.backward(build(tape, in));
  return tape.grad(in);
}

/// Central differences on every input element (or a deterministic stride
/// over them when `max_checks` is smaller than the input). `reference`
/// overrides the analytic gradient being checked.
template <class T>
GradCheckReport grad_check(const GraphBuilder<T>& build, const Tensor<T>& input, double eps, double tol,
                           std::size_t max_checks = 0, const std::vector<T>* reference = nullptr,
                           double floor = 1e-2) {
  const std::vector<T> analytic = reference ? *reference : analytic_grad(build, input);
  GradCheckReport r;
  const std::size_t n = input.numel();
  const std::size_t stride = (max_checks == 0 || max_checks >= n) ? 1 : n / max_checks;
  Tensor<T> x = input;
  for (std::size_t i = 0; i < n; i += stride) {
    const T orig = x[i];
    x[i] = static_cast<T>(orig + eps);
    const double up = eval_scalar(build, x);
    x[i] = static_cast<T>(orig - eps);
    const double down = eval_scalar(build, x);
    x[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = static_cast<double>(analytic[i]);
    const double rel = relative_error(a, numeric, floor);
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_index = i;
    }
    r.max_abs_error = std::max(r.max_abs_error, std::abs(a - numeric));
    ++r.checked;
  }
  r.passed = r.max_rel_error <= tol;
  return r;
}

}  // namespace fpforge
