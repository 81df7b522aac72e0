#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fpforge/error.hpp"
#include "fpforge/tape.hpp"
#include "fpforge/tensor.hpp"

// Differentiable operations recorded on a Tape. Images are NCHW, conv
// weights OIKK, linear weights [out, in].

namespace fpforge {

/// Probabilities are clamped into [eps, 1 - eps] before any logarithm.
inline constexpr double kProbEps = 1e-7;

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, stride, pad, oh, ow;
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  require(x.rank() == 4, "conv2d: input must be NCHW, got " + shape_str(x.shape()));
  require(w.rank() == 4, "conv2d: weight must be OIKK, got " + shape_str(w.shape()));
  require(w.dim(2) == w.dim(3), "conv2d: kernel must be square, got " + shape_str(w.shape()));
  require(w.dim(1) == x.dim(1), "conv2d: input has " + std::to_string(x.dim(1)) +
                                    " channels but weight expects " + std::to_string(w.dim(1)));
  require(b.rank() == 1 && b.dim(0) == w.dim(0),
          "conv2d: bias shape " + shape_str(b.shape()) + " does not match " + std::to_string(w.dim(0)) + " outputs");
  require(stride >= 1 && pad >= 0, "conv2d: stride must be >= 1 and pad >= 0");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2),
                 static_cast<std::size_t>(stride), static_cast<std::size_t>(pad), 0, 0};
  require(g.h + 2 * g.pad >= g.k && g.w + 2 * g.pad >= g.k,
          "conv2d: kernel " + std::to_string(g.k) + " larger than padded input " + shape_str(x.shape()));
  g.oh = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  return g;
}

template <class T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * plane;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* img) {
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * plane;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

template <class T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, int stride, int pad) {
  Tape<T>& tape = *input.tape;
  const auto& x = input.value();
  const auto& w = weight.value();
  const auto& b = bias.value();
  const auto g = detail::conv_geometry(x, w, b, stride, pad);
  const std::size_t ckk = g.c * g.k * g.k;
  const std::size_t plane = g.oh * g.ow;

  Tensor<T> out({g.n, g.o, g.oh, g.ow});
  std::vector<T> cols(ckk * plane);
  detail::MapConstMat<T> wm(w.storage().data(), static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(ckk));
  for (std::size_t n = 0; n < g.n; ++n) {
    detail::im2col(x.storage().data() + n * g.c * g.h * g.w, g, cols.data());
    detail::MapConstMat<T> cm(cols.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(plane));
    detail::MapMat<T> om(out.storage().data() + n * g.o * plane, static_cast<Eigen::Index>(g.o),
                         static_cast<Eigen::Index>(plane));
    om.noalias() = wm * cm;
    for (std::size_t o = 0; o < g.o; ++o) om.row(static_cast<Eigen::Index>(o)).array() += b[o];
  }

  return tape.record(std::move(out), {input, weight, bias}, [input, weight, bias, g, ckk, plane](Tape<T>& t, std::size_t self) {
    const auto gy = t.grad_of(self);
    const auto& xv = t.value(input);
    const auto& wv = t.value(weight);
    detail::MapConstMat<T> wm(wv.storage().data(), static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(ckk));
    std::vector<T> cols(ckk * plane);
    const bool want_x = t.needs_grad(input);
    const bool want_w = t.needs_grad(weight);
    const bool want_b = t.needs_grad(bias);
    std::span<T> gx, gw, gb;
    if (want_x) gx = t.accum(input);
    if (want_w) gw = t.accum(weight);
    if (want_b) gb = t.accum(bias);
    for (std::size_t n = 0; n < g.n; ++n) {
      detail::MapConstMat<T> gym(gy.data() + n * g.o * plane, static_cast<Eigen::Index>(g.o),
                                 static_cast<Eigen::Index>(plane));
      if (want_b) {
        const T* row = gy.data() + n * g.o * plane;
        for (std::size_t o = 0; o < g.o; ++o, row += plane) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(row[i]);
          gb[o] += static_cast<T>(acc);
        }
      }
      if (want_w) {
        detail::im2col(xv.storage().data() + n * g.c * g.h * g.w, g, cols.data());
        detail::MapConstMat<T> cm(cols.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(plane));
        detail::MapMat<T> gwm(gw.data(), static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(ckk));
        gwm.noalias() += gym * cm.transpose();
      }
      if (want_x) {
        detail::MapMat<T> cm(cols.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(plane));
        cm.noalias() = wm.transpose() * gym;
        detail::col2im_add(cols.data(), g, gx.data() + n * g.c * g.h * g.w);
      }
    }
  });
}

/// Each pixel becomes a 2x2 block; the backward pass sums each block.
template <class T>
Var<T> upsample_nearest2x(Var<T> input) {
  const auto& x = input.value();
  detail::require(x.rank() == 4, "upsample_nearest2x: input must be NCHW, got " + shape_str(x.shape()));
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out({x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (std::size_t p = 0; p < nc; ++p) {
    const T* src = x.storage().data() + p * h * w;
    T* dst = out.storage().data() + p * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
    }
  }
  return input.tape->record(std::move(out), {input}, [input, nc, h, w](Tape<T>& t, std::size_t self) {
    const auto gy = t.grad_of(self);
    auto gx = t.accum(input);
    for (std::size_t p = 0; p < nc; ++p) {
      const T* src = gy.data() + p * 4 * h * w;
      T* dst = gx.data() + p * h * w;
      for (std::size_t y = 0; y < 2 * h; ++y) {
        for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
      }
    }
  });
}

template <class T>
Var<T> relu(Var<T> input) {
  const auto& x = input.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return input.tape->record(std::move(out), {input}, [input](Tape<T>& t, std::size_t self) {
    const auto gy = t.grad_of(self);
    const auto& xv = t.value(input);
    auto gx = t.accum(input);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += gy[i];
    }
  });
}

template <class T>
Var<T> sigmoid(Var<T> input) {
  const auto& x = input.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  const std::size_t self_id = input.tape->size();
  return input.tape->record(std::move(out), {input}, [input, self_id](Tape<T>& t, std::size_t self) {
    const auto gy = t.grad_of(self);
    const auto& y = t.value(Var<T>{&t, self_id});
    auto gx = t.accum(input);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * y[i] * (T(1) - y[i]);
  });
}

/// Gradient reversal: identity forward, gradient multiplied by -1 backward.
template <class T>
Var<T> grl(Var<T> input) {
  Tensor<T> out(input.shape(), input.value().storage());
  return input.tape->record(std::move(out), {input}, [input](Tape<T>& t, std::size_t self) {
    const auto gy = t.grad_of(self);
    auto gx = t.accum(input);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= gy[i];
  });
}

/// Identity with a plain pass-through gradient; the reference for grl.
template <class T>
Var<T> identity(Var<T> input) {
  Tensor<T> out(input.shape(), input.value().storage());
  return input.tape->record(std::move(out), {input}, [input](Tape<T>& t, std::size_t self) {
    const auto gy = t.grad_of(self);
    auto gx = t.accum(input);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto gy = t.grad_of(self);
    for (Var<T> v : {a, b}) {
      if (!t.needs_grad(v)) continue;
      auto g = t.accum(v);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto gy = t.grad_of(self);
    if (t.needs_grad(a)) {
      auto g = t.accum(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
    if (t.needs_grad(b)) {
      auto g = t.accum(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gy[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto gy = t.grad_of(self);
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    if (t.needs_grad(a)) {
      auto g = t.accum(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      auto g = t.accum(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * factor;
  return a.tape->record(std::move(out), {a}, [a, factor](Tape<T>& t, std::size_t self) {
    const auto gy = t.grad_of(self);
    auto g = t.accum(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * factor;
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  double s = 0.0;
  for (T v : a.value().data()) s += static_cast<double>(v);
  return a.tape->record(Tensor<T>({1}, std::vector<T>{static_cast<T>(s)}), {a}, [a](Tape<T>& t, std::size_t self) {
    const T gy = t.grad_of(self)[0];
    auto g = t.accum(a);
    for (auto& v : g) v += gy;
  });
}

/// N x C x H x W -> N x C
template <class T>
Var<T> global_avg_pool(Var<T> input) {
  const auto& x = input.value();
  detail::require(x.rank() == 4, "global_avg_pool: input must be NCHW, got " + shape_str(x.shape()));
  const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out({x.dim(0), x.dim(1)});
  for (std::size_t p = 0; p < nc; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += static_cast<double>(x[p * hw + i]);
    out[p] = static_cast<T>(s / static_cast<double>(hw));
  }
  return input.tape->record(std::move(out), {input}, [input, nc, hw](Tape<T>& t, std::size_t self) {
    const auto gy = t.grad_of(self);
    auto gx = t.accum(input);
    for (std::size_t p = 0; p < nc; ++p) {
      const T v = gy[p] / static_cast<T>(hw);
      for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += v;
    }
  });
}

/// x [N, in] * W^T [in, out] + b -> [N, out]
template <class T>
Var<T> linear(Var<T> input, Var<T> weight, Var<T> bias) {
  const auto& x = input.value();
  const auto& w = weight.value();
  const auto& b = bias.value();
  detail::require(x.rank() == 2 && w.rank() == 2 && w.dim(1) == x.dim(1),
                  "linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  detail::require(b.rank() == 1 && b.dim(0) == w.dim(0), "linear: bias shape " + shape_str(b.shape()) + " mismatch");
  const std::size_t n = x.dim(0), in = x.dim(1), o = w.dim(0);
  // Plain loops: these matrices are tiny, and the order of summation stays
  // fixed regardless of buffer alignment.
  Tensor<T> out({n, o});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < o; ++c) {
      double acc = static_cast<double>(b[c]);
      for (std::size_t k = 0; k < in; ++k) acc += static_cast<double>(x[r * in + k]) * static_cast<double>(w[c * in + k]);
      out[r * o + c] = static_cast<T>(acc);
    }
  }
  return input.tape->record(std::move(out), {input, weight, bias}, [input, weight, bias, n, in, o](Tape<T>& t, std::size_t self) {
    const auto gy = t.grad_of(self);
    if (t.needs_grad(input)) {
      auto gx = t.accum(input);
      const auto& wv = t.value(weight);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < in; ++k) {
          double acc = 0.0;
          for (std::size_t c = 0; c < o; ++c) acc += static_cast<double>(gy[r * o + c]) * static_cast<double>(wv[c * in + k]);
          gx[r * in + k] += static_cast<T>(acc);
        }
      }
    }
    if (t.needs_grad(weight)) {
      auto gw = t.accum(weight);
      const auto& xv = t.value(input);
      for (std::size_t c = 0; c < o; ++c) {
        for (std::size_t k = 0; k < in; ++k) {
          double acc = 0.0;
          for (std::size_t r = 0; r < n; ++r) acc += static_cast<double>(gy[r * o + c]) * static_cast<double>(xv[r * in + k]);
          gw[c * in + k] += static_cast<T>(acc);
        }
      }
    }
    if (t.needs_grad(bias)) {
      auto gb = t.accum(bias);
      for (std::size_t c = 0; c < o; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < n; ++r) acc += static_cast<double>(gy[r * o + c]);
        gb[c] += static_cast<T>(acc);
      }
    }
  });
}

/// Mean squared error over all elements.
template <class T>
Var<T> mse(Var<T> a, Var<T> b) {
  detail::require_same_shape(a.value(), b.value(), "mse");
  const auto& av = a.value();
  const auto& bv = b.value();
  const auto count = static_cast<T>(av.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    s += d * d;
  }
  return a.tape->record(Tensor<T>({1}, std::vector<T>{static_cast<T>(s / static_cast<double>(count))}), {a, b}, [a, b, count](Tape<T>& t, std::size_t self) {
    const T gy = t.grad_of(self)[0];
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    const T k = T(2) * gy / count;
    if (t.needs_grad(a)) {
      auto g = t.accum(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (av[i] - bv[i]);
    }
    if (t.needs_grad(b)) {
      auto g = t.accum(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= k * (av[i] - bv[i]);
    }
  });
}

/// Mean binary cross-entropy; `pred` holds probabilities. The probability
/// of the true class (p or 1 - p) is clamped to [eps, 1 - eps]; clamped
/// entries pass no gradient.
template <class T>
Var<T> bce(Var<T> pred, std::span<const T> labels) {
  const auto& p = pred.value();
  detail::require(p.numel() == labels.size(), "bce: " + std::to_string(p.numel()) + " predictions but " +
                                                  std::to_string(labels.size()) + " labels");
  for (T y : labels) detail::require(y == T(0) || y == T(1), "bce: labels must be 0 or 1");
  const double eps = kProbEps;
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double pi = static_cast<double>(p[i]);
    const double q = labels[i] == T(1) ? pi : 1.0 - pi;
    s -= std::log(std::clamp(q, eps, 1.0 - eps));
  }
  const auto count = static_cast<double>(p.numel());
  std::vector<T> lab(labels.begin(), labels.end());
  return pred.tape->record(Tensor<T>({1}, std::vector<T>{static_cast<T>(s / count)}), {pred},
                           [pred, lab = std::move(lab), eps, count](Tape<T>& t, std::size_t self) {
                             const double gy = static_cast<double>(t.grad_of(self)[0]) / count;
                             const auto& pv = t.value(pred);
                             auto g = t.accum(pred);
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               const double pi = static_cast<double>(pv[i]);
                               const bool positive = lab[i] == T(1);
                               const double q = positive ? pi : 1.0 - pi;
                               if (q < eps || q > 1.0 - eps) continue;
                               g[i] += static_cast<T>(positive ? -gy / q : gy / q);
                             }
                           });
}

/// Mean softmax cross-entropy of logits [N, K] against integer labels in [0, K).
template <class T>
Var<T> softmax_ce(Var<T> logits, std::span<const int> labels) {
  const auto& z = logits.value();
  detail::require(z.rank() == 2, "softmax_ce: logits must be [N, K], got " + shape_str(z.shape()));
  const std::size_t n = z.dim(0), k = z.dim(1);
  detail::require(labels.size() == n, "softmax_ce: " + std::to_string(n) + " rows but " +
                                          std::to_string(labels.size()) + " labels");
  for (int y : labels) {
    detail::require(y >= 0 && static_cast<std::size_t>(y) < k,
                    "softmax_ce: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
  }
  std::vector<double> probs(n * k);
  double s = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = z.storage().data() + r * k;
    const double mx = static_cast<double>(*std::max_element(row, row + k));
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) denom += std::exp(static_cast<double>(row[c]) - mx);
    for (std::size_t c = 0; c < k; ++c) probs[r * k + c] = std::exp(static_cast<double>(row[c]) - mx) / denom;
    s -= static_cast<double>(row[static_cast<std::size_t>(labels[r])]) - mx - std::log(denom);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape->record(Tensor<T>({1}, std::vector<T>{static_cast<T>(s / static_cast<double>(n))}), {logits},
                             [logits, probs = std::move(probs), lab = std::move(lab), n, k](Tape<T>& t, std::size_t self) {
                               const double gy = static_cast<double>(t.grad_of(self)[0]) / static_cast<double>(n);
                               auto g = t.accum(logits);
                               for (std::size_t r = 0; r < n; ++r) {
                                 for (std::size_t c = 0; c < k; ++c) {
                                   const double target = static_cast<std::size_t>(lab[r]) == c ? 1.0 : 0.0;
                                   g[r * k + c] += static_cast<T>(gy * (probs[r * k + c] - target));
                                 }
                               }
                             });
}

}  // namespace fpforge
